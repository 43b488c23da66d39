//! Scratch pilot: registration-quality sweep on generated growth
//! sequences, reporting the SSIM ceiling of the latent pipeline.

use morphgen_cli::gendata::{render_sequence, sequence_spec};
use morphgen_core::epdiff::IntegratorKind;
use morphgen_core::field::Grid;
use morphgen_core::flow::{integrate_flow, warp};
use morphgen_core::latent::{decode, encode, latent_shoot, LatentConfig};
use morphgen_core::metrics::ssim;
use morphgen_core::registration::{register, RegistrationConfig};
use morphgen_core::spectral::OperatorConfig;

fn main() {
    let grid = Grid::new(32, 32).unwrap();
    let latent_cfg = LatentConfig::new(grid, 8).unwrap();
    let steps = 10;
    let n_seq = 8;

    // identity baseline
    let mut base = 0.0;
    for i in 0..n_seq {
        let spec = sequence_spec(1234, i);
        let frames = render_sequence(&spec, grid, steps);
        base += ssim(&frames[0], &frames[steps]).unwrap();
    }
    println!("identity baseline ssim: {:.4}", base / n_seq as f64);

    for (alpha, lambda, max_iters, step_size) in [
        (0.01, 1e3, 200, 1e-3),
        (0.01, 1e3, 300, 1e-3),
        (0.015, 1e3, 300, 1e-3),
        (0.02, 1e3, 300, 1e-3),
    ] {
        let cfg = RegistrationConfig {
            lambda,
            operator: OperatorConfig::new(alpha).unwrap(),
            steps,
            integrator: IntegratorKind::Euler,
            max_iters,
            step_size,
            grad_tol: 1e-4,
            energy_half_factor: true,
        };
        let mut ssim_direct = 0.0;
        let mut ssim_latent = 0.0;
        let mut min_dj = f64::INFINITY;
        let mut min_dj_latent = f64::INFINITY;
        let mut iters_total = 0;
        let mut failures = 0;
        let t0 = std::time::Instant::now();
        for i in 0..n_seq {
            let spec = sequence_spec(1234, i);
            let frames = render_sequence(&spec, grid, steps);
            let (template, target) = (&frames[0], &frames[steps]);
            match register(template, target, &cfg) {
                Ok(reg) => {
                    let w = warp(template, reg.deformation.terminal()).unwrap();
                    ssim_direct += ssim(&w, target).unwrap();
                    min_dj = min_dj.min(reg.min_detjac);
                    iters_total += reg.energy_history.last().unwrap().iteration;
                    // latent pipeline: encode v0, latent-shoot, decode, flow
                    let z0 = encode(&reg.v0, &latent_cfg).unwrap();
                    let lat = latent_shoot(&z0, &cfg.operator, steps).unwrap();
                    let vels: Vec<_> = lat.latents().iter().map(decode).collect();
                    let geo =
                        morphgen_core::epdiff::GeodesicPath::new(vels, cfg.operator).unwrap();
                    let flow = integrate_flow(&geo).unwrap();
                    let dj_latent = morphgen_core::flow::det_jacobian(flow.terminal()).min();
                    min_dj_latent = min_dj_latent.min(dj_latent);
                    let wl = warp(template, flow.terminal()).unwrap();
                    let clamped = morphgen_core::field::ScalarField::from_values(
                        grid,
                        wl.values().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                    )
                    .unwrap();
                    ssim_latent += ssim(&clamped, target).unwrap();
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("  seq {i}: {e}");
                }
            }
        }
        let ok = (n_seq - failures) as f64;
        println!(
            "alpha {alpha:<6} lambda {lambda:<8} iters {max_iters:<4} step {step_size:<7}: \
             ssim_direct {:.4}  ssim_latent {:.4}  min_dj {:.3}  min_dj_lat {:.3}  avg_iters {:.0}  fail {failures}  [{:.1}s]",
            ssim_direct / ok,
            ssim_latent / ok,
            min_dj,
            min_dj_latent,
            iters_total as f64 / ok,
            t0.elapsed().as_secs_f64()
        );
    }
}
