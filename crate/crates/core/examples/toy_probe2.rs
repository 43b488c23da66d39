//! Scratch probe: sampled-moment accuracy vs architecture/schedule on
//! the linear-Gaussian toy.

use morphgen_core::diffusion::{
    sample_latent_batch, train, Condition, GuidanceConfig, NoiseSchedule, TrainConfig,
};
use morphgen_core::rng::{derive_seed, Rng};

fn main() {
    let dim = 16;
    let mu: Vec<f64> = (0..dim)
        .map(|i| if i % 2 == 0 { 1.5 } else { -1.0 } + 0.05 * i as f64)
        .collect();
    let sigma = 0.5;
    let mut rng = Rng::new(880);
    let data: Vec<Vec<f64>> = (0..256)
        .map(|_| mu.iter().map(|m| m + sigma * rng.next_normal()).collect())
        .collect();
    let conds = vec![Condition::null(); data.len()];

    let cases: Vec<(usize, f64, f64, usize, Vec<usize>, f64)> = vec![
        // (T, b0, b1, epochs, hidden, lr)
        (100, 1e-3, 0.1, 400, vec![64, 64], 1e-3),
        (100, 1e-3, 0.1, 1600, vec![128, 128], 1e-3),
        (200, 5e-4, 0.05, 1600, vec![128, 128], 1e-3),
        (100, 1e-3, 0.1, 4000, vec![128, 128], 1e-3),
        (100, 1e-3, 0.1, 4000, vec![64, 64], 3e-3),
    ];
    for (t, b0, b1, epochs, hidden, lr) in cases {
        let sched = NoiseSchedule::linear(t, b0, b1).unwrap();
        let cfg = TrainConfig {
            learning_rate: lr,
            batch_size: 64,
            epochs,
            p_uncond: 0.0,
            weight_decay: 0.0,
            hidden: hidden.clone(),
            seed: 881,
        };
        let t0 = std::time::Instant::now();
        let run = train(&data, &conds, &sched, &cfg).unwrap();
        let n = 4000;
        let g = GuidanceConfig {
            delta_i: 0.0,
            delta_t: 0.0,
        };
        let cs = vec![Condition::null(); n];
        let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(4242, i)).collect();
        let samples =
            sample_latent_batch(&run.params, &run.normalizer, &sched, &cs, &g, &seeds).unwrap();
        let mut worst_mean = 0.0f64;
        let mut worst_std = 0.0f64;
        for i in 0..dim {
            let m: f64 = samples.iter().map(|s| s[i]).sum::<f64>() / n as f64;
            let v: f64 = samples.iter().map(|s| (s[i] - m) * (s[i] - m)).sum::<f64>() / n as f64;
            worst_mean = worst_mean.max((m - mu[i]).abs() / mu[i].abs());
            worst_std = worst_std.max((v.sqrt() - sigma).abs() / sigma);
        }
        println!(
            "T {t:>3} b ({b0},{b1}) epochs {epochs:>4} hidden {hidden:?} lr {lr}: \
             val {:.4}->{:.4}, mean off {:.1}%, std off {:.1}%  [{:.0}s]",
            run.val_initial,
            run.val_final,
            100.0 * worst_mean,
            100.0 * worst_std,
            t0.elapsed().as_secs_f64()
        );
    }
}
