use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pclbench_bench::{
    diffusion_ops, helmholtz, nonlinear_diffusion, poisson2d, shifted_laplacian, wiggle,
};
use pclbench_core::benchmarks::THETA_STAR;
use pclbench_core::nn::Mlp;
use pclbench_core::pcl::{adjoint_gradient, newton_solve, ConstraintSystem, NewtonSettings};
use pclbench_core::sparse::factorize;

fn sparse_lu(c: &mut Criterion) {
    let a = shifted_laplacian(30);
    let b = wiggle(900);
    c.bench_function("lu factor 900", |bch| {
        bch.iter(|| factorize(black_box(&a)).unwrap())
    });
    let f = factorize(&a).unwrap();
    c.bench_function("lu solve 900", |bch| {
        bch.iter(|| f.solve(black_box(&b)).unwrap())
    });
}

fn jacobian_propagation(c: &mut Criterion) {
    let ops = diffusion_ops(30);
    let u = wiggle(900);
    c.bench_function("nonlinear diffusion jacobian 30x30", |bch| {
        bch.iter(|| nonlinear_diffusion(&ops, black_box(&u)).unwrap())
    });
}

fn adjoint(c: &mut Criterion) {
    let h = helmholtz(3);
    let loss = h.loss();
    let theta = [4.0, 0.3, 1.5, 0.0, -0.2, 0.1];
    let u = newton_solve(
        &h.system,
        &theta,
        &h.initial_state(),
        &NewtonSettings::default(),
    )
    .unwrap()
    .u;
    c.bench_function("helmholtz adjoint gradient r3", |bch| {
        bch.iter(|| adjoint_gradient(&h.system, &loss, black_box(&theta), &u).unwrap())
    });
    c.bench_function("helmholtz forward solve r3", |bch| {
        bch.iter(|| {
            newton_solve(
                &h.system,
                black_box(&THETA_STAR),
                &h.initial_state(),
                &NewtonSettings::default(),
            )
            .unwrap()
        })
    });
}

fn poisson(c: &mut Criterion) {
    let p = poisson2d(31);
    let u: Vec<f64> = wiggle(p.dim_u()).iter().map(|v| 0.3 + 0.2 * v).collect();
    c.bench_function("poisson-2d residual and jacobian 31x31", |bch| {
        bch.iter(|| p.residual_and_jacobian(&[], black_box(&u)).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let net = Mlp::with_hidden(3, 20, 2).unwrap().squashed();
    let theta = net.init_params(0);
    let u: Vec<f64> = (0..1860).map(|i| 0.6 * i as f64 / 1859.0).collect();
    c.bench_function("mlp forward with derivative 1860 samples", |bch| {
        bch.iter(|| net.forward_with_derivative(black_box(&theta), &u).unwrap())
    });
}

criterion_group!(
    benches,
    sparse_lu,
    jacobian_propagation,
    adjoint,
    poisson,
    network
);
criterion_main!(benches);
