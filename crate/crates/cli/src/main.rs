use clap::Parser;
use pclbench_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors are configuration errors; help and version are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli, &mut std::io::stdout()) {
        eprintln!("pclbench: {e}");
        std::process::exit(e.exit_code());
    }
}
