//! Denoiser training.
//!
//! Per step: sample a minibatch, draw tau ~ U(1,T) and eps ~ N(0,I) per
//! example, drop each condition to null independently with probability
//! p_uncond (this is what makes classifier-free guidance possible at
//! sampling time), form z_tau by closed-form noising, and take one Adam
//! step on the mean squared noise-prediction error with L2 weight decay.
//!
//! A frozen validation batch (fixed taus and noise) is evaluated before
//! the first and after the last step so callers can check it decreased.

use crate::diffusion::condition::Condition;
use crate::diffusion::denoiser::{
    assemble_input, pack_batch, predict_backward, predict_batch, AdamState, DenoiserGrads,
    DenoiserParams,
};
use crate::diffusion::{forward_diffuse, NoiseSchedule, Normalizer};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

const SEED_TAG_INIT: u64 = 0x11;
const SEED_TAG_TRAIN: u64 = 0x22;
const SEED_TAG_VAL: u64 = 0x33;

/// Hyperparameters of the diffusion training loop.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Probability of dropping each condition (independently) to null.
    pub p_uncond: f64,
    pub weight_decay: f64,
    /// Hidden layer widths of the denoiser.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 36,
            epochs: 500,
            p_uncond: 0.1,
            weight_decay: 1e-4,
            hidden: vec![512, 512, 512],
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::InvalidConfig("p_uncond must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: DenoiserParams,
    pub normalizer: Normalizer,
    pub adam: AdamState,
    /// (global step, minibatch loss) per step.
    pub loss_log: Vec<(u64, f64)>,
    pub val_initial: f64,
    pub val_final: f64,
    pub steps: u64,
}

/// Frozen validation batch: the whole dataset with deterministic taus and
/// noise, conditions kept as given.
struct ValBatch {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    taus: Vec<usize>,
}

impl ValBatch {
    fn build(
        normalized: &[Vec<f64>],
        conds: &[Condition],
        sched: &NoiseSchedule,
        seed: u64,
    ) -> Result<ValBatch> {
        let mut rng = Rng::new(derive_seed(seed, SEED_TAG_VAL));
        let n = normalized.len();
        let dim = normalized[0].len();
        let t = sched.t();
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut taus = Vec::with_capacity(n);
        for (i, (z0, cond)) in normalized.iter().zip(conds).enumerate() {
            // spread taus over the whole schedule
            let tau = 1 + (i * (t - 1)) / n.max(1);
            let mut eps = vec![0.0; dim];
            rng.fill_normal(&mut eps);
            let z_tau = forward_diffuse(z0, tau, &eps, sched)?;
            inputs.push(assemble_input(&z_tau, cond, tau));
            targets.push(eps);
            taus.push(tau);
        }
        Ok(ValBatch {
            inputs,
            targets,
            taus,
        })
    }

    fn loss(&self, params: &DenoiserParams) -> f64 {
        let batch = self.inputs.len();
        let dim = params.latent_dim;
        let trace = predict_batch(params, pack_batch(&self.inputs), &self.taus, batch);
        let mut acc = 0.0;
        for (b, target) in self.targets.iter().enumerate() {
            for (i, &t) in target.iter().enumerate() {
                let d = trace.output[i * batch + b] - t;
                acc += d * d;
            }
        }
        acc / (batch * dim) as f64
    }
}

#[allow(clippy::too_many_arguments)]
fn train_loop(
    mut params: DenoiserParams,
    mut adam: AdamState,
    normalizer: Normalizer,
    steps_done: u64,
    latents: &[Vec<f64>],
    conds: &[Condition],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    let n = latents.len();
    let dim = params.latent_dim;
    let normalized: Vec<Vec<f64>> = latents.iter().map(|z| normalizer.normalize(z)).collect();

    let val = ValBatch::build(&normalized, conds, sched, cfg.seed)?;
    let val_initial = val.loss(&params);

    // the resumed stream is tied to the step counter so continuation is
    // deterministic but not a replay of the original stream
    let mut rng = Rng::new(derive_seed(cfg.seed, SEED_TAG_TRAIN ^ steps_done));
    let mut loss_log = Vec::new();
    let mut step = steps_done;
    let mut eps = vec![0.0; dim];

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.len();
            let mut cols = Vec::with_capacity(batch);
            let mut targets = Vec::with_capacity(batch);
            let mut taus = Vec::with_capacity(batch);
            for &idx in chunk {
                let tau = rng.next_in(1, sched.t());
                rng.fill_normal(&mut eps);
                let drop_img = rng.next_f64() < cfg.p_uncond;
                let drop_txt = rng.next_f64() < cfg.p_uncond;
                let z_tau = forward_diffuse(&normalized[idx], tau, &eps, sched)?;
                let mut cond = conds[idx].clone();
                cond.image_null = cond.image_null || drop_img;
                cond.text_null = cond.text_null || drop_txt;
                cols.push(assemble_input(&z_tau, &cond, tau));
                targets.push(eps.clone());
                taus.push(tau);
            }
            let trace = predict_batch(&params, pack_batch(&cols), &taus, batch);
            let scale = 1.0 / (batch * dim) as f64;
            let mut loss = 0.0;
            let mut d_out = vec![0.0; dim * batch];
            for (b, target) in targets.iter().enumerate() {
                for (i, &t) in target.iter().enumerate() {
                    let d = trace.output[i * batch + b] - t;
                    loss += d * d * scale;
                    d_out[i * batch + b] = 2.0 * d * scale;
                }
            }
            step += 1;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            let mut grads = DenoiserGrads::zeros_like(&params);
            predict_backward(&params, &trace, &d_out, &mut grads);
            adam.step(&mut params, &grads, cfg.learning_rate, cfg.weight_decay);
            loss_log.push((step, loss));
        }
    }

    let val_final = val.loss(&params);
    Ok(TrainRun {
        params,
        normalizer,
        adam,
        loss_log,
        val_initial,
        val_final,
        steps: step,
    })
}

/// Train a fresh denoiser on flattened latents with their conditions.
pub fn train(
    latents: &[Vec<f64>],
    conds: &[Condition],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if latents.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if latents.len() != conds.len() {
        return Err(Error::InvalidConfig(
            "need one condition per latent".into(),
        ));
    }
    let dim = latents[0].len();
    if latents.iter().any(|z| z.len() != dim) {
        return Err(Error::InvalidConfig(
            "latent vectors have inconsistent dimensions".into(),
        ));
    }
    let normalizer = Normalizer::from_data(latents)?;
    let mut init_rng = Rng::new(derive_seed(cfg.seed, SEED_TAG_INIT));
    let params = DenoiserParams::init(dim, &cfg.hidden, sched, &mut init_rng)?;
    let adam = AdamState::new(&params);
    train_loop(params, adam, normalizer, 0, latents, conds, sched, cfg)
}

/// Continue training from checkpointed parameters and optimizer state.
#[allow(clippy::too_many_arguments)]
pub fn resume_training(
    params: DenoiserParams,
    adam: AdamState,
    normalizer: Normalizer,
    steps_done: u64,
    latents: &[Vec<f64>],
    conds: &[Condition],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if latents.len() != conds.len() {
        return Err(Error::InvalidConfig(
            "need one condition per latent".into(),
        ));
    }
    if latents.iter().any(|z| z.len() != params.latent_dim) {
        return Err(Error::InvalidConfig(
            "latent dimensions do not match the checkpointed denoiser".into(),
        ));
    }
    train_loop(
        params, adam, normalizer, steps_done, latents, conds, sched, cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| 1.5 + 0.4 * rng.next_normal()).collect())
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op_bitwise() {
        let latents = toy_dataset(4, 6, 1);
        let conds = vec![Condition::null(); 4];
        let sched = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            epochs: 3,
            hidden: vec![8],
            seed: 9,
            ..Default::default()
        };
        let run = train(&latents, &conds, &sched, &cfg).unwrap();
        let mut rng = Rng::new(derive_seed(9, SEED_TAG_INIT));
        let reference = DenoiserParams::init(6, &[8], &sched, &mut rng).unwrap();
        assert_eq!(run.params, reference, "params must be bit-identical to init");
    }

    #[test]
    fn overfits_one_repeated_sample() {
        // identical (z0, cond) pairs: windowed loss means keep falling
        let z0: Vec<f64> = vec![0.5, -1.0, 0.25, 2.0];
        let latents = vec![z0; 8];
        let conds = vec![Condition::null(); 8];
        let sched = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 8,
            epochs: 300,
            p_uncond: 0.0,
            weight_decay: 0.0,
            hidden: vec![32],
            seed: 4,
        };
        let run = train(&latents, &conds, &sched, &cfg).unwrap();
        assert!(run.val_final < run.val_initial);
        let window_mean = |w: &[(u64, f64)]| -> f64 {
            w.iter().map(|&(_, l)| l).sum::<f64>() / w.len() as f64
        };
        let first = window_mean(&run.loss_log[..10]);
        let last = window_mean(&run.loss_log[run.loss_log.len() - 10..]);
        assert!(
            last < 0.5 * first,
            "loss did not fall: first {first:.4}, last {last:.4}"
        );
        // 10-step window means trend downward (allowing sampling noise)
        let windows: Vec<f64> = run.loss_log.chunks(10).map(window_mean).collect();
        let violations = windows
            .windows(2)
            .filter(|w| w[1] > w[0] * 1.25)
            .count();
        assert!(
            violations <= windows.len() / 5,
            "too many rising windows: {violations}/{}",
            windows.len()
        );
    }

    #[test]
    fn training_is_deterministic() {
        let latents = toy_dataset(6, 5, 2);
        let conds = vec![Condition::null(); 6];
        let sched = NoiseSchedule::linear(15, 1e-3, 0.08).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 3,
            epochs: 5,
            hidden: vec![8],
            seed: 11,
            ..Default::default()
        };
        let a = train(&latents, &conds, &sched, &cfg).unwrap();
        let b = train(&latents, &conds, &sched, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_log, b.loss_log);
    }

    #[test]
    fn resume_continues_near_the_logged_loss() {
        let latents = toy_dataset(8, 4, 3);
        let conds = vec![Condition::null(); 8];
        let sched = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let mut cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            epochs: 150,
            p_uncond: 0.0,
            hidden: vec![16],
            seed: 5,
            ..Default::default()
        };
        let first = train(&latents, &conds, &sched, &cfg).unwrap();
        cfg.epochs = 5;
        let resumed = resume_training(
            first.params.clone(),
            first.adam.clone(),
            first.normalizer.clone(),
            first.steps,
            &latents,
            &conds,
            &sched,
            &cfg,
        )
        .unwrap();
        // within batch noise of the end of the first run
        let tail: Vec<f64> = first.loss_log[first.loss_log.len() - 20..]
            .iter()
            .map(|&(_, l)| l)
            .collect();
        let tail_max = tail.iter().cloned().fold(0.0f64, f64::max);
        let resumed_first = resumed.loss_log[0].1;
        assert!(
            resumed_first <= tail_max * 3.0,
            "resumed loss {resumed_first} vs tail max {tail_max}"
        );
        assert_eq!(resumed.loss_log[0].0, first.steps + 1);
    }
}
