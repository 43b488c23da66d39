//! Run configuration: a plain-text key = value file plus command-line
//! overrides. Unknown keys are rejected, and every value is validated
//! against the owning module's invariants before any computation starts.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use morphgen_core::epdiff::IntegratorKind;
use morphgen_core::field::Grid;
use morphgen_core::latent::LatentConfig;
use morphgen_core::registration::RegistrationConfig;
use morphgen_core::spectral::OperatorConfig;
use morphgen_core::diffusion::{GuidanceConfig, NoiseSchedule, TrainConfig};

use crate::error::{CliError, Result};

/// Every tunable of the toolkit, with the documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Geodesic time steps N_t.
    pub steps: usize,
    pub bandlimit: usize,
    /// Diffusion steps T.
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub p_uncond: f64,
    pub delta_i: f64,
    pub delta_t: f64,
    pub seed: u64,
    // registration loop
    pub max_iters: usize,
    pub step_size: f64,
    pub grad_tol: f64,
    pub half_factor: bool,
    // synthetic data generator
    pub sequences: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nx: 32,
            ny: 32,
            alpha: 3.0,
            lambda: 1e4,
            steps: 10,
            bandlimit: 8,
            diffusion_steps: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
            learning_rate: 1e-4,
            batch_size: 36,
            epochs: 1200,
            p_uncond: 0.1,
            delta_i: 1.5,
            delta_t: 2.0,
            seed: 0,
            max_iters: 300,
            step_size: 1e-2,
            grad_tol: 1e-4,
            half_factor: true,
            sequences: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| CliError::Data(format!("config key '{key}': cannot parse '{value}'")))
}

impl RunConfig {
    /// Apply one key = value assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "nx" => self.nx = parse(key, value)?,
            "ny" => self.ny = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "bandlimit" => self.bandlimit = parse(key, value)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, value)?,
            "beta_start" => self.beta_start = parse(key, value)?,
            "beta_end" => self.beta_end = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "p_uncond" => self.p_uncond = parse(key, value)?,
            "delta_i" => self.delta_i = parse(key, value)?,
            "delta_t" => self.delta_t = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "step_size" => self.step_size = parse(key, value)?,
            "grad_tol" => self.grad_tol = parse(key, value)?,
            "half_factor" => self.half_factor = parse(key, value)?,
            "sequences" => self.sequences = parse(key, value)?,
            _ => {
                return Err(CliError::Data(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }

    /// Load a key = value file ('#' starts a comment).
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Data(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Data(format!(
                    "{}:{}: duplicate config key '{key}'",
                    path.display(),
                    lineno + 1
                )));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every value against the owning module's invariants.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let _ = OperatorConfig::new(self.alpha)?;
        let _ = LatentConfig::new(grid, self.bandlimit)?;
        let _ = NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)?;
        if self.steps == 0 {
            return Err(CliError::Data("steps must be >= 1".into()));
        }
        if self.sequences == 0 {
            return Err(CliError::Data("sequences must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CliError::Data("batch_size must be >= 1".into()));
        }
        if !(self.p_uncond >= 0.0 && self.p_uncond <= 1.0) {
            return Err(CliError::Data("p_uncond must lie in [0, 1]".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(CliError::Data("lambda must be > 0".into()));
        }
        if !(self.step_size > 0.0) || !(self.grad_tol > 0.0) || self.max_iters == 0 {
            return Err(CliError::Data(
                "step_size, grad_tol and max_iters must be positive".into(),
            ));
        }
        if !self.delta_i.is_finite() || !self.delta_t.is_finite() {
            return Err(CliError::Data("guidance scales must be finite".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.nx, self.ny)?)
    }

    pub fn operator(&self) -> OperatorConfig {
        OperatorConfig::new(self.alpha).expect("validated")
    }

    pub fn latent(&self) -> Result<LatentConfig> {
        Ok(LatentConfig::new(self.grid()?, self.bandlimit)?)
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
            .expect("validated")
    }

    pub fn registration(&self) -> RegistrationConfig {
        RegistrationConfig {
            lambda: self.lambda,
            operator: self.operator(),
            steps: self.steps,
            integrator: IntegratorKind::Euler,
            max_iters: self.max_iters,
            step_size: self.step_size,
            grad_tol: self.grad_tol,
            energy_half_factor: self.half_factor,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            p_uncond: self.p_uncond,
            weight_decay: 1e-4,
            hidden: vec![512, 512, 512],
            seed: self.seed,
        }
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            delta_i: self.delta_i,
            delta_t: self.delta_t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str, contents: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("morphgen-config-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn loads_and_overrides() {
        let path = tmp(
            "good.cfg",
            "nx = 16\nny = 16\nbandlimit = 4\nalpha = 2.0  # smoothness\nseed = 7\n",
        );
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.nx, 16);
        assert_eq!(cfg.alpha, 2.0);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lambda, 1e4); // default survives
    }

    #[test]
    fn rejects_unknown_keys() {
        let path = tmp("bad-key.cfg", "nx = 16\nwat = 3\n");
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("unknown config key 'wat'"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn rejects_invalid_values_before_computation() {
        // odd grid
        let path = tmp("odd.cfg", "nx = 15\n");
        assert!(RunConfig::load(&path).is_err());
        // bandlimit too large for the grid
        let path = tmp("band.cfg", "nx = 16\nny = 16\nbandlimit = 8\n");
        assert!(RunConfig::load(&path).is_err());
        // beta out of range
        let path = tmp("beta.cfg", "beta_end = 1.5\n");
        assert!(RunConfig::load(&path).is_err());
        // duplicate key
        let path = tmp("dup.cfg", "nx = 16\nnx = 32\n");
        assert!(RunConfig::load(&path).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }
}
