//! Latent geodesic denoising diffusion.
//!
//! The diffusion state is a whole flattened latent geodesic. Forward
//! noising is the closed-form q(z_tau | z_0) = sqrt(abar) z_0 +
//! sqrt(1-abar) eps; the reverse process runs the ancestral update
//!
//!   z_{tau-1} = (z_tau - beta/sqrt(1-abar) * eps_hat) / sqrt(1-beta)
//!               + sqrt(beta) * xi,        xi = 0 at tau = 1,
//!
//! with the noise prediction eps_hat combined from three denoiser
//! evaluations by two-scale classifier-free guidance:
//!
//!   (1-dI) * Z(z, null, null) + (dI-dT) * Z(z, img, null) + dT * Z(z, img, txt).
//!
//! Latents are affinely normalized per coordinate before diffusion (the
//! Fourier packing spans many orders of magnitude); the normalizer is
//! part of the trained model and is inverted after sampling.

pub mod condition;
pub mod denoiser;
mod train;

pub use condition::{image_embedding, text_embedding, time_embedding, Condition};
pub use denoiser::{denoise_predict, AdamState, DenoiserGrads, DenoiserParams, Layer};
pub use train::{resume_training, train, TrainConfig, TrainRun};

use crate::epdiff::GeodesicPath;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::{det_jacobian, integrate_flow, warp, DeformationPath};
use crate::latent::{decode, LatentConfig, LatentGeodesic};
use crate::rng::Rng;
use crate::spectral::OperatorConfig;

use denoiser::{assemble_input, pack_batch, predict_batch, unpack_batch};

/// DDPM constants: betas with their cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp over `t` steps.
    pub fn linear(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if t == 0 {
            return Err(Error::InvalidConfig(
                "diffusion needs at least 1 step".into(),
            ));
        }
        if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "betas must lie in (0,1), got {beta_start}..{beta_end}"
            )));
        }
        let mut betas = Vec::with_capacity(t);
        for i in 0..t {
            let frac = if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        let mut alpha_bar = Vec::with_capacity(t);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    /// The production schedule: T = 500, beta 1e-4 .. 0.02.
    pub fn default_linear() -> NoiseSchedule {
        NoiseSchedule::linear(500, 1e-4, 0.02).expect("constants are valid")
    }

    #[inline]
    pub fn t(&self) -> usize {
        self.betas.len()
    }

    #[inline]
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// beta_tau, 1-based step index.
    #[inline]
    pub fn beta(&self, tau: usize) -> f64 {
        self.betas[tau - 1]
    }

    /// Cumulative product alpha_bar_tau, 1-based step index.
    #[inline]
    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[tau - 1]
    }

    fn check_tau(&self, tau: usize) -> Result<()> {
        if tau == 0 || tau > self.t() {
            return Err(Error::InvalidConfig(format!(
                "diffusion step {tau} outside 1..={}",
                self.t()
            )));
        }
        Ok(())
    }
}

/// Closed-form forward noising q(z_tau | z_0).
pub fn forward_diffuse(
    z0: &[f64],
    tau: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    sched.check_tau(tau)?;
    if z0.len() != eps.len() {
        return Err(Error::InvalidConfig(format!(
            "noise dim {} does not match state dim {}",
            eps.len(),
            z0.len()
        )));
    }
    let ab = sched.alpha_bar(tau);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Per-coordinate affine normalization of flattened latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Fraction of the largest per-coordinate deviation below which a
    /// coordinate's scale is clamped. Latent coordinates span many
    /// orders of magnitude; normalizing each to unit variance would blow
    /// noise-level coordinates up into full-size learning targets and
    /// drown the informative ones. With the relative floor, negligible
    /// coordinates map to values near zero, where noise prediction is a
    /// plain tau-dependent rescaling the denoiser picks up immediately,
    /// and the denormalization keeps their sampled effect negligible.
    const RELATIVE_FLOOR: f64 = 0.05;

    /// Population statistics of a latent dataset, with the per-coordinate
    /// scale floored at [`Self::RELATIVE_FLOOR`] times the largest one.
    pub fn from_data(data: &[Vec<f64>]) -> Result<Normalizer> {
        if data.is_empty() {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        let dim = data[0].len();
        if data.iter().any(|d| d.len() != dim) {
            return Err(Error::InvalidConfig(
                "latent vectors have inconsistent dimensions".into(),
            ));
        }
        let n = data.len() as f64;
        let mut mean = vec![0.0; dim];
        for d in data {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for d in data {
            for ((s, v), m) in var.iter_mut().zip(d).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        let max_sd = var.iter().fold(0.0f64, |m, &s| m.max(s)).sqrt() / n.sqrt();
        let floor = 1e-12 + Self::RELATIVE_FLOOR * max_sd;
        let std = var.iter().map(|s| (s / n).sqrt().max(floor)).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn identity(dim: usize) -> Normalizer {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Normalizer> {
        if mean.len() != std.len() {
            return Err(Error::InvalidConfig(
                "normalizer mean/std lengths differ".into(),
            ));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig(
                "normalizer std entries must be positive".into(),
            ));
        }
        Ok(Normalizer { mean, std })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    #[inline]
    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Classifier-free guidance scales (image, text).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub delta_i: f64,
    pub delta_t: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            delta_i: 1.5,
            delta_t: 2.0,
        }
    }
}

/// The three condition variants evaluated by guided prediction.
fn guidance_variants(cond: &Condition) -> [Condition; 3] {
    [Condition::null(), cond.with_text_null(), cond.clone()]
}

fn combine_guided(unc: &[f64], img: &[f64], full: &[f64], g: &GuidanceConfig) -> Vec<f64> {
    let cu = 1.0 - g.delta_i;
    let ci = g.delta_i - g.delta_t;
    let cf = g.delta_t;
    unc.iter()
        .zip(img)
        .zip(full)
        .map(|((u, i), f)| cu * u + ci * i + cf * f)
        .collect()
}

/// Two-scale classifier-free guided noise prediction: exactly three
/// denoiser evaluations combined per the collapsed form.
pub fn cfg_predict(
    z_tau: &[f64],
    cond: &Condition,
    tau: usize,
    params: &DenoiserParams,
    g: &GuidanceConfig,
) -> Result<Vec<f64>> {
    let [unc_c, img_c, full_c] = guidance_variants(cond);
    let unc = denoise_predict(z_tau, &unc_c, tau, params)?;
    let img = denoise_predict(z_tau, &img_c, tau, params)?;
    let full = denoise_predict(z_tau, &full_c, tau, params)?;
    Ok(combine_guided(&unc, &img, &full, g))
}

fn check_state_finite(state: &[f64], step: usize) -> Result<()> {
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SamplingDiverged { step })
    }
}

/// How the reverse process predicts noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionMode {
    /// Three-evaluation classifier-free guidance.
    Guided(GuidanceConfig),
    /// Debug path: the fully-conditional prediction alone. Identical to
    /// `Guided` with both scales at 1 by the guidance algebra.
    Conditional,
}

/// Ancestral sampling of a batch of flattened latents, one independent
/// noise stream per seed. Per-sample results are bit-identical to a
/// single-sample call with the same seed.
pub fn sample_latent_batch_with_mode(
    params: &DenoiserParams,
    normalizer: &Normalizer,
    sched: &NoiseSchedule,
    conds: &[Condition],
    mode: &PredictionMode,
    seeds: &[u64],
) -> Result<Vec<Vec<f64>>> {
    if conds.len() != seeds.len() {
        return Err(Error::InvalidConfig("need one seed per condition".into()));
    }
    if conds.is_empty() {
        return Ok(Vec::new());
    }
    let dim = params.latent_dim;
    if normalizer.dim() != dim {
        return Err(Error::InvalidConfig(format!(
            "normalizer dim {} does not match denoiser latent dim {}",
            normalizer.dim(),
            dim
        )));
    }
    if params.alpha_bar.len() < sched.t() {
        return Err(Error::InvalidConfig(format!(
            "denoiser skip table covers {} steps, schedule has {}",
            params.alpha_bar.len(),
            sched.t()
        )));
    }
    let batch = conds.len();
    let mut rngs: Vec<Rng> = seeds.iter().map(|&s| Rng::new(s)).collect();
    let mut states: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|rng| {
            let mut z = vec![0.0; dim];
            rng.fill_normal(&mut z);
            z
        })
        .collect();

    let variants: Vec<[Condition; 3]> = conds.iter().map(guidance_variants).collect();
    let eval = |states: &[Vec<f64>], variant: usize, tau: usize| -> Vec<Vec<f64>> {
        let cols: Vec<Vec<f64>> = states
            .iter()
            .zip(&variants)
            .map(|(z, vs)| assemble_input(z, &vs[variant], tau))
            .collect();
        let trace = predict_batch(params, pack_batch(&cols), &vec![tau; batch], batch);
        unpack_batch(&trace.output, dim, batch)
    };

    for tau in (1..=sched.t()).rev() {
        let eps_hats: Vec<Vec<f64>> = match mode {
            PredictionMode::Guided(g) => {
                let unc = eval(&states, 0, tau);
                let img = eval(&states, 1, tau);
                let full = eval(&states, 2, tau);
                (0..batch)
                    .map(|b| combine_guided(&unc[b], &img[b], &full[b], g))
                    .collect()
            }
            PredictionMode::Conditional => eval(&states, 2, tau),
        };
        let beta = sched.beta(tau);
        let inv_sqrt = 1.0 / (1.0 - beta).sqrt();
        let eps_coef = beta / (1.0 - sched.alpha_bar(tau)).sqrt();
        let sigma = beta.sqrt();
        for b in 0..batch {
            let state = &mut states[b];
            for (z, e) in state.iter_mut().zip(&eps_hats[b]) {
                *z = inv_sqrt * (*z - eps_coef * e);
            }
            if tau > 1 {
                let rng = &mut rngs[b];
                for z in state.iter_mut() {
                    *z += sigma * rng.next_normal();
                }
            }
            check_state_finite(state, tau)?;
        }
    }
    Ok(states.iter().map(|z| normalizer.denormalize(z)).collect())
}

/// Guided batch sampling; see [`sample_latent_batch_with_mode`].
pub fn sample_latent_batch(
    params: &DenoiserParams,
    normalizer: &Normalizer,
    sched: &NoiseSchedule,
    conds: &[Condition],
    g: &GuidanceConfig,
    seeds: &[u64],
) -> Result<Vec<Vec<f64>>> {
    sample_latent_batch_with_mode(
        params,
        normalizer,
        sched,
        conds,
        &PredictionMode::Guided(*g),
        seeds,
    )
}

/// Single-sample variant of [`sample_latent_batch_with_mode`].
pub fn sample_latent_with_mode(
    params: &DenoiserParams,
    normalizer: &Normalizer,
    sched: &NoiseSchedule,
    cond: &Condition,
    mode: &PredictionMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut out = sample_latent_batch_with_mode(
        params,
        normalizer,
        sched,
        &[cond.clone()],
        mode,
        &[seed],
    )?;
    Ok(out.pop().expect("one sample in, one out"))
}

/// Single-sample ancestral sampling; see [`sample_latent_batch`].
pub fn sample_latent(
    params: &DenoiserParams,
    normalizer: &Normalizer,
    sched: &NoiseSchedule,
    cond: &Condition,
    g: &GuidanceConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    sample_latent_with_mode(
        params,
        normalizer,
        sched,
        cond,
        &PredictionMode::Guided(*g),
        seed,
    )
}

/// Everything one guided sample produces.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub latent: LatentGeodesic,
    pub geodesic: GeodesicPath,
    pub deformations: DeformationPath,
    /// Template warped through phi_t for every time point.
    pub warped: Vec<ScalarField>,
    /// DetJac map of the terminal transformation phi_1.
    pub detjac: ScalarField,
}

/// Sample a latent geodesic conditioned on a template image and a text
/// instruction, decode it, integrate the flow and warp the template.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    template: &ScalarField,
    text: &str,
    params: &DenoiserParams,
    normalizer: &Normalizer,
    latent_cfg: &LatentConfig,
    steps: usize,
    operator: &OperatorConfig,
    sched: &NoiseSchedule,
    g: &GuidanceConfig,
    seed: u64,
) -> Result<SampleOutput> {
    template.grid().same_as(&latent_cfg.grid())?;
    let flat_dim = (steps + 1) * latent_cfg.latent_dim();
    if params.latent_dim != flat_dim {
        return Err(Error::InvalidConfig(format!(
            "denoiser latent dim {} does not match (steps+1)*latent_dim = {}",
            params.latent_dim, flat_dim
        )));
    }
    let cond = Condition::for_template(template, text);
    let z0 = sample_latent(params, normalizer, sched, &cond, g, seed)?;
    finish_sample(template, &z0, latent_cfg, steps, operator)
}

/// Decode a flattened latent geodesic and warp the template through it.
pub fn finish_sample(
    template: &ScalarField,
    z0: &[f64],
    latent_cfg: &LatentConfig,
    steps: usize,
    operator: &OperatorConfig,
) -> Result<SampleOutput> {
    if !z0.iter().all(|v| v.is_finite()) {
        return Err(Error::SamplingDiverged { step: 0 });
    }
    let latent = LatentGeodesic::unflatten(*latent_cfg, steps, z0)?;
    let velocities = latent.latents().iter().map(decode).collect::<Vec<_>>();
    let geodesic = GeodesicPath::new(velocities, *operator)?;
    let deformations = integrate_flow(&geodesic)?;
    let warped = deformations
        .deformations()
        .iter()
        .map(|phi| warp(template, phi))
        .collect::<Result<Vec<_>>>()?;
    let detjac = det_jacobian(deformations.terminal());
    Ok(SampleOutput {
        latent,
        geodesic,
        deformations,
        warped,
        detjac,
    })
}
