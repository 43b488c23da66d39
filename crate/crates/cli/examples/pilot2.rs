//! Scratch pilot: reduced-scale end-to-end dry run of the growth
//! experiment - register, latent-shoot, train, then sample against
//! held-out conditions and score SSIM / DetJac.

use morphgen_cli::gendata::{render_sequence, sequence_spec};
use morphgen_core::diffusion::{
    sample_latent_batch, train, Condition, GuidanceConfig, NoiseSchedule, TrainConfig,
};
use morphgen_core::epdiff::IntegratorKind;
use morphgen_core::field::{Grid, ScalarField};
use morphgen_core::flow::{det_jacobian, integrate_flow, warp};
use morphgen_core::latent::{decode, encode, latent_shoot, LatentConfig, LatentGeodesic};
use morphgen_core::metrics::ssim;
use morphgen_core::registration::{register, RegistrationConfig};
use morphgen_core::rng::derive_seed;
use morphgen_core::spectral::OperatorConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let n_eval: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let delta_i: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let delta_t: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let grid = Grid::new(32, 32).unwrap();
    let latent_cfg = LatentConfig::new(grid, 8).unwrap();
    let steps = 10;
    let operator = OperatorConfig::new(0.01).unwrap();
    let reg_cfg = RegistrationConfig {
        lambda: 1e3,
        operator,
        steps,
        integrator: IntegratorKind::Euler,
        max_iters: 250,
        step_size: 1e-3,
        grad_tol: 1e-4,
        energy_half_factor: true,
    };

    let t0 = std::time::Instant::now();
    let mut latents = Vec::new();
    let mut conds = Vec::new();
    for i in 0..n_train {
        let spec = sequence_spec(1234, i);
        let frames = render_sequence(&spec, grid, steps);
        let reg = register(&frames[0], &frames[steps], &reg_cfg).unwrap();
        let z0 = encode(&reg.v0, &latent_cfg).unwrap();
        let lat = latent_shoot(&z0, &operator, steps).unwrap();
        latents.push(lat.flatten());
        conds.push(Condition::for_template(&frames[0], &spec.text()));
    }
    eprintln!("[pilot2] registered {n_train} sequences in {:.1}s", t0.elapsed().as_secs_f64());

    let sched = NoiseSchedule::default_linear();
    let cfg = TrainConfig {
        epochs,
        batch_size: n_train.min(36),
        learning_rate: lr,
        seed: 99,
        ..Default::default()
    };
    let t1 = std::time::Instant::now();
    let run = train(&latents, &conds, &sched, &cfg).unwrap();
    let q = |f: f64| run.loss_log[((run.loss_log.len() - 1) as f64 * f) as usize].1;
    eprintln!(
        "[pilot2] trained {} steps in {:.1}s (val {:.4} -> {:.4}; loss quartiles {:.3} {:.3} {:.3} {:.3} {:.3}; skip gain {:.4})",
        run.steps,
        t1.elapsed().as_secs_f64(),
        run.val_initial,
        run.val_final,
        q(0.0), q(0.25), q(0.5), q(0.75), q(1.0),
        run.params.skip_gain
    );

    let evaluate = |label: &str, master: u64, g: &GuidanceConfig| {
        let mut eval_conds = Vec::new();
        let mut eval_data = Vec::new();
        for i in 0..n_eval {
            let spec = sequence_spec(master, i);
            let frames = render_sequence(&spec, grid, steps);
            eval_conds.push(Condition::for_template(&frames[0], &spec.text()));
            eval_data.push((frames[0].clone(), frames[steps].clone()));
        }
        let seeds: Vec<u64> = (0..n_eval as u64).map(|i| derive_seed(5000, i)).collect();
        let z0s =
            sample_latent_batch(&run.params, &run.normalizer, &sched, &eval_conds, g, &seeds)
                .unwrap();
        let mut ssim_sum = 0.0;
        let mut dj_positive = 0;
        let mut worst_ssim = f64::INFINITY;
        let mut worst_dj = f64::INFINITY;
        for (i, z0) in z0s.iter().enumerate() {
            let lat = LatentGeodesic::unflatten(latent_cfg, steps, z0).unwrap();
            let vels: Vec<_> = lat.latents().iter().map(decode).collect();
            let geo = morphgen_core::epdiff::GeodesicPath::new(vels, operator).unwrap();
            let flow = integrate_flow(&geo).unwrap();
            let dj = det_jacobian(flow.terminal()).min();
            if dj > 0.0 {
                dj_positive += 1;
            }
            worst_dj = worst_dj.min(dj);
            let w = warp(&eval_data[i].0, flow.terminal()).unwrap();
            let clamped = ScalarField::from_values(
                grid,
                w.values().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            )
            .unwrap();
            let s = ssim(&clamped, &eval_data[i].1).unwrap();
            ssim_sum += s;
            worst_ssim = worst_ssim.min(s);
        }
        println!(
            "{label} deltas ({},{}): mean ssim {:.4} (worst {:.4}), detjac>0 {}/{} (worst {:.3})",
            g.delta_i,
            g.delta_t,
            ssim_sum / n_eval as f64,
            worst_ssim,
            dj_positive,
            n_eval,
            worst_dj
        );
    };
    evaluate("heldout", 777, &GuidanceConfig { delta_i, delta_t });
    evaluate(
        "heldout",
        777,
        &GuidanceConfig {
            delta_i: 1.0,
            delta_t: 1.0,
        },
    );
    evaluate(
        "train-cond",
        1234,
        &GuidanceConfig {
            delta_i: 1.0,
            delta_t: 1.0,
        },
    );
}
