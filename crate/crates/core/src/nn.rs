//! Fully-connected tanh networks used as unknown-function surrogates.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{check_len, Error, Result};

/// A multilayer perceptron with a scalar input. Hidden layers use `tanh`,
/// the output layer is affine unless `output_squash` is set, in which case
/// outputs pass through `(tanh(x) + 1) / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    pub output_squash: bool,
}

impl Mlp {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes {layer_sizes:?} need at least two positive entries"
            )));
        }
        if layer_sizes[0] != 1 {
            return Err(Error::InvalidInput("networks take a scalar input".into()));
        }
        Ok(Self {
            layer_sizes,
            output_squash: false,
        })
    }

    /// `1 → width → … → width → outputs` with `hidden` hidden layers.
    pub fn with_hidden(hidden: usize, width: usize, outputs: usize) -> Result<Self> {
        let mut sizes = vec![1];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(outputs);
        Self::new(sizes)
    }

    pub fn squashed(mut self) -> Self {
        self.output_squash = true;
        self
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offsets of `(weights, biases)` for layer `l` inside θ.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let before: usize = self.layer_sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (before, before + n_in * n_out)
    }

    /// Offset of the output-layer bias for output `k`.
    pub fn output_bias_index(&self, k: usize) -> usize {
        self.layer_offsets(self.n_layers() - 1).1 + k
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        check_len("network parameters", self.n_params(), theta.len())
    }

    /// Glorot-uniform weights and zero biases from a seeded ChaCha8 stream.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.n_params()];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            let (w, _) = self.layer_offsets(l);
            for t in &mut theta[w..w + n_in * n_out] {
                *t = dist.sample(&mut rng);
            }
        }
        theta
    }

    /// Outputs for each input sample.
    pub fn forward(&self, theta: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(theta)?;
        Ok(u.iter().map(|&x| self.eval(theta, x).0).collect())
    }

    /// `∂f/∂u` for each input sample.
    pub fn input_derivative(&self, theta: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(theta)?;
        Ok(u.iter().map(|&x| self.eval(theta, x).1).collect())
    }

    /// Outputs and input derivatives together.
    pub fn forward_with_derivative(
        &self,
        theta: &[f64],
        u: &[f64],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check(theta)?;
        Ok(u.iter().map(|&x| self.eval(theta, x)).unzip())
    }

    fn eval(&self, theta: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![x];
        let mut da = vec![1.0];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let mut z = theta[b..b + n_out].to_vec();
            let mut dz = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &theta[w + r * n_in..w + (r + 1) * n_in];
                for c in 0..n_in {
                    z[r] += row[c] * a[c];
                    dz[r] += row[c] * da[c];
                }
            }
            let last = l + 1 == self.n_layers();
            if !last || self.output_squash {
                for r in 0..n_out {
                    let t = z[r].tanh();
                    let s = if last { 0.5 } else { 1.0 };
                    dz[r] *= s * (1.0 - t * t);
                    z[r] = if last { 0.5 * (t + 1.0) } else { t };
                }
            }
            a = z;
            da = dz;
        }
        (a, da)
    }

    /// Records the forward pass on a tape. `theta` and `u` are nodes holding
    /// the parameters and the input batch; the result holds the outputs
    /// sample by sample (`out[i·n_out + k]`).
    pub fn forward_tape(&self, tape: &mut Tape, theta: NodeId, u: NodeId) -> Result<NodeId> {
        self.check(tape.value(theta))?;
        let batch = tape.value(u).len();
        let mut a = u;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let wn = tape.gather(theta, (w..w + n_in * n_out).collect())?;
            let tiled: Vec<usize> = (0..batch).flat_map(|_| b..b + n_out).collect();
            let bn = tape.gather(theta, tiled)?;
            let z = tape.matvec(wn, a, n_out, n_in)?;
            let mut z = tape.add(z, bn)?;
            let last = l + 1 == self.n_layers();
            if !last || self.output_squash {
                z = tape.tanh(z)?;
                if last {
                    let one = tape.scalar(1.0);
                    let half = tape.scalar(0.5);
                    z = tape.add(z, one)?;
                    z = tape.mul(z, half)?;
                }
            }
            a = z;
        }
        Ok(a)
    }
}

pub fn params_to_json(theta: &[f64]) -> String {
    serde_json::to_string(theta).expect("f64 slices serialize")
}

pub fn params_from_json(s: &str) -> Result<Vec<f64>> {
    serde_json::from_str(s).map_err(|e| Error::Parse(format!("parameter JSON: {e}")))
}

/// Little-endian `f64` words, no header.
pub fn params_to_bytes(theta: &[f64]) -> Vec<u8> {
    theta.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Parse(format!(
            "binary parameters of {} bytes are not a whole number of f64 words",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes JSON for a `.json` path and raw binary otherwise.
pub fn write_params(path: &Path, theta: &[f64]) -> Result<()> {
    if is_json(path) {
        std::fs::write(path, params_to_json(theta))?;
    } else {
        std::fs::write(path, params_to_bytes(theta))?;
    }
    Ok(())
}

pub fn read_params(path: &Path) -> Result<Vec<f64>> {
    if is_json(path) {
        params_from_json(&std::fs::read_to_string(path)?)
    } else {
        params_from_bytes(&std::fs::read(path)?)
    }
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_theta(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Uniform::new(-1.0, 1.0);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    // Straight loop over explicit weight matrices, written independently of `eval`.
    fn oracle_one_hidden(theta: &[f64], width: usize, outs: usize, x: f64) -> Vec<f64> {
        let w1 = &theta[..width];
        let b1 = &theta[width..2 * width];
        let w2 = &theta[2 * width..2 * width + width * outs];
        let b2 = &theta[2 * width + width * outs..];
        let h: Vec<f64> = (0..width).map(|i| (w1[i] * x + b1[i]).tanh()).collect();
        (0..outs)
            .map(|k| b2[k] + (0..width).map(|i| w2[k * width + i] * h[i]).sum::<f64>())
            .collect()
    }

    #[test]
    fn param_count() {
        let net = Mlp::with_hidden(2, 20, 2).unwrap();
        assert_eq!(net.n_params(), (20 + 20) + (400 + 20) + (40 + 2));
        assert_eq!(net.init_params(0).len(), net.n_params());
        assert!(Mlp::new(vec![2, 3]).is_err());
        assert!(Mlp::new(vec![1]).is_err());
    }

    #[test]
    fn zero_params_give_zero() {
        let net = Mlp::with_hidden(2, 5, 2).unwrap();
        let theta = vec![0.0; net.n_params()];
        for out in net.forward(&theta, &[-1.0, 0.3, 7.0]).unwrap() {
            assert_eq!(out, vec![0.0, 0.0]);
        }
        for d in net.input_derivative(&theta, &[0.3]).unwrap() {
            assert_eq!(d, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn linear_layer() {
        let net = Mlp::new(vec![1, 1]).unwrap();
        assert_eq!(net.forward(&[2.0, 1.0], &[3.0]).unwrap(), vec![vec![7.0]]);
        assert_eq!(
            net.input_derivative(&[2.0, 1.0], &[3.0, -4.0]).unwrap(),
            vec![vec![2.0]; 2]
        );
        assert!(net.forward(&[2.0], &[3.0]).is_err());
    }

    #[test]
    fn matches_loop_oracle() {
        let net = Mlp::with_hidden(1, 7, 2).unwrap();
        let theta = random_theta(net.n_params(), 4);
        for x in [-0.9, 0.0, 0.4, 1.3] {
            let got = &net.forward(&theta, &[x]).unwrap()[0];
            let want = oracle_one_hidden(&theta, 7, 2, x);
            for k in 0..2 {
                assert!((got[k] - want[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn input_derivative_matches_fd() {
        let net = Mlp::with_hidden(2, 20, 2).unwrap();
        let theta = net.init_params(11);
        let h = 1e-6;
        for x in [-0.5, 0.1, 0.8] {
            let d = &net.input_derivative(&theta, &[x]).unwrap()[0];
            let p = &net.forward(&theta, &[x + h]).unwrap()[0];
            let m = &net.forward(&theta, &[x - h]).unwrap()[0];
            for k in 0..2 {
                assert!((d[k] - (p[k] - m[k]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let net = Mlp::with_hidden(1, 20, 2).unwrap();
        assert_eq!(net.init_params(3), net.init_params(3));
        assert_ne!(net.init_params(3), net.init_params(4));
        let theta = net.init_params(3);
        let (_, b1) = net.layer_offsets(0);
        assert!(theta[b1..b1 + 20].iter().all(|&b| b == 0.0));
        let a = (6.0f64 / 21.0).sqrt();
        assert!(theta[..20].iter().all(|w| w.abs() <= a));
    }

    #[test]
    fn init_output_bound() {
        // Hidden activations lie in [-1, 1], so |f_k| ≤ Σ_i |W2[k,i]| + |b2[k]|.
        let net = Mlp::with_hidden(1, 20, 2).unwrap();
        let theta = net.init_params(9);
        let (w2, b2) = net.layer_offsets(1);
        for k in 0..2 {
            let bound: f64 = theta[w2 + 20 * k..w2 + 20 * (k + 1)]
                .iter()
                .map(|w| w.abs())
                .sum::<f64>()
                + theta[b2 + k].abs();
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                assert!(net.forward(&theta, &[x]).unwrap()[0][k].abs() <= bound);
            }
        }
    }

    #[test]
    fn squash_derivative_and_range() {
        let net = Mlp::with_hidden(1, 4, 1).unwrap().squashed();
        let theta = random_theta(net.n_params(), 2);
        let h = 1e-6;
        let d = net.input_derivative(&theta, &[0.2]).unwrap()[0][0];
        let fd = (net.forward(&theta, &[0.2 + h]).unwrap()[0][0]
            - net.forward(&theta, &[0.2 - h]).unwrap()[0][0])
            / (2.0 * h);
        assert!((d - fd).abs() < 1e-8);
    }

    #[test]
    fn tape_forward_matches_and_differentiates() {
        let net = Mlp::with_hidden(3, 6, 2).unwrap();
        let theta = random_theta(net.n_params(), 5);
        let u = vec![-0.3, 0.25, 0.9];
        let mut tape = Tape::new();
        let t = tape.input(theta.clone()).unwrap();
        let un = tape.constant(u.clone());
        let out = net.forward_tape(&mut tape, t, un).unwrap();
        let direct = net.forward(&theta, &u).unwrap();
        let flat: Vec<f64> = direct.iter().flatten().copied().collect();
        for (a, b) in tape.value(out).iter().zip(&flat) {
            assert!((a - b).abs() < 1e-14);
        }
        let weights: Vec<f64> = (0..flat.len()).map(|i| 1.0 + i as f64 * 0.1).collect();
        let wn = tape.constant(weights.clone());
        let s = tape.dot(out, wn).unwrap();
        tape.set_output(s);
        let g = tape.reverse_grad(&[t]).unwrap();
        let objective = |th: &[f64]| -> f64 {
            let o: Vec<f64> = net.forward(th, &u).unwrap().into_iter().flatten().collect();
            o.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for j in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[j] += h;
            m[j] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!(
                (g[j] - fd).abs() <= 1e-6 * fd.abs().max(1e-2),
                "param {j}: {} vs {fd}",
                g[j]
            );
        }
    }

    #[test]
    fn params_round_trip() {
        let theta = vec![1.5, -2.25, 1e-300, 3.0];
        assert_eq!(params_from_json(&params_to_json(&theta)).unwrap(), theta);
        assert_eq!(params_from_bytes(&params_to_bytes(&theta)).unwrap(), theta);
        assert!(params_from_bytes(&[0u8; 7]).is_err());
        assert!(params_from_json("[1, \"a\"]").is_err());
        let dir = tempfile::tempdir().unwrap();
        for name in ["t.json", "t.bin"] {
            let p = dir.path().join(name);
            write_params(&p, &theta).unwrap();
            assert_eq!(read_params(&p).unwrap(), theta);
        }
    }

    proptest! {
        #[test]
        fn squashed_outputs_in_unit_interval(seed in 0u64..1000, x in -5f64..5.0, far in -1e300f64..1e300) {
            let net = Mlp::with_hidden(2, 5, 2).unwrap().squashed();
            let theta = random_theta(net.n_params(), seed);
            for v in &net.forward(&theta, &[x]).unwrap()[0] {
                prop_assert!(*v > 0.0 && *v < 1.0);
            }
            // Saturation can round to the endpoints but never leaves [0, 1].
            for v in &net.forward(&theta, &[far]).unwrap()[0] {
                prop_assert!(*v >= 0.0 && *v <= 1.0);
            }
        }
    }
}
