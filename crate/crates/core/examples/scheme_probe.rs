//! Scratch probe: K(L(v)) roundtrip accuracy vs field smoothness, and
//! geodesic energy drift for the two derivative schemes.

use morphgen_core::epdiff::{kinetic_energy, shoot, IntegratorKind};
use morphgen_core::field::{linf_error, Grid, VectorField};
use morphgen_core::rng::Rng;
use morphgen_core::spectral::{apply_k, apply_l, OperatorConfig};
use std::f64::consts::PI;

fn white(grid: Grid, seed: u64) -> VectorField {
    let mut rng = Rng::new(seed);
    let x = (0..grid.len()).map(|_| rng.next_normal()).collect();
    let y = (0..grid.len()).map(|_| rng.next_normal()).collect();
    VectorField::from_components(grid, x, y).unwrap()
}

fn main() {
    let grid = Grid::new(32, 32).unwrap();
    println!("== K(L(v)) roundtrip, white noise vs smoothed noise ==");
    for alpha in [0.5, 3.0, 10.0] {
        let cfg = OperatorConfig::new(alpha).unwrap();
        let mut worst_white = 0.0f64;
        let mut worst_smooth = 0.0f64;
        for seed in 0..20 {
            let v = white(grid, seed);
            let err = linf_error(&apply_k(&apply_l(&v, &cfg), &cfg), &v).unwrap();
            worst_white = worst_white.max(err);
            // smooth field: one K application of white noise
            let s = apply_k(&v, &cfg);
            let scale = 1.0 / s.linf().max(1e-300);
            let mut s = s;
            s.scale_in_place(scale);
            let err = linf_error(&apply_k(&apply_l(&s, &cfg), &cfg), &s).unwrap();
            worst_smooth = worst_smooth.max(err);
        }
        println!("alpha {alpha:>5}: white {worst_white:.3e}   smooth {worst_smooth:.3e}");
    }

    println!("== energy drift, v0 = 0.1 sin(2 pi y) x_hat, alpha 3, 32x32 ==");
    let cfg = OperatorConfig::new(3.0).unwrap();
    let v0 = VectorField::from_fn(grid, |_, y| (0.1 * (2.0 * PI * y).sin(), 0.0));
    let e0 = kinetic_energy(&v0, &cfg);
    println!("E(0) = {e0:.6}");
    for (kind, name) in [
        (IntegratorKind::Euler, "euler"),
        (IntegratorKind::Rk4, "rk4"),
    ] {
        for steps in [16usize, 32, 64] {
            let path = shoot(&v0, &cfg, steps, kind).unwrap();
            let e1 = kinetic_energy(path.velocity(steps), &cfg);
            println!(
                "{name:>6} N_t {steps:>3}: |E1-E0| = {:.6e}  (rel {:.3e})",
                (e1 - e0).abs(),
                (e1 - e0).abs() / e0
            );
        }
    }
}
