//! Bandlimited Fourier latents for velocity fields.
//!
//! A velocity field is encoded by keeping the DFT coefficients with
//! |kx| <= r and |ky| <= r and packing one member of each Hermitian pair
//! as real numbers. Decoding zero-pads the spectrum back to the grid, so
//! decode . encode is the identity on bandlimited fields, encode . decode
//! is the identity on every latent vector, and the L2 norm of a decoded
//! field is readable directly off the coefficients (Parseval).
//!
//! Coefficients are stored in the normalized convention c_hat = c / (nx*ny),
//! so the k = (0,0) entry of a constant field equals the constant.
//!
//! Packing order (part of the checkpoint wire format): for the x
//! component, then the y component:
//!   [ c_hat(0,0).re,
//!     re/im pairs for ky = 0, kx = 1..r,
//!     re/im pairs for ky = 1..r, kx = -r..r ]
//! giving (2r+1)^2 reals per component. A latent geodesic flattens its
//! time points in order, time-major.
//!
//! Propagating a latent along a geodesic decodes, evaluates the EPDiff
//! right-hand side on the full grid, re-encodes, and steps in latent
//! space - one Euler map z_{v_t} -> z_{v_{t+1}} per time point.

use crate::epdiff::{epdiff_rhs_with, GeodesicPath, RHS_SCHEME};
use crate::error::{Error, Result};
use crate::field::{Grid, VectorField};
use crate::spectral::{fft2_forward, fft2_inverse_real, Complex64, MetricOperator, OperatorConfig};

/// Bandlimit and grid of a latent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentConfig {
    grid: Grid,
    bandlimit: usize,
}

impl LatentConfig {
    pub fn new(grid: Grid, bandlimit: usize) -> Result<LatentConfig> {
        if bandlimit == 0 {
            return Err(Error::InvalidConfig("bandlimit must be >= 1".into()));
        }
        if 2 * bandlimit + 1 > grid.nx().min(grid.ny()) {
            return Err(Error::InvalidConfig(format!(
                "bandlimit {} too large for {}x{} grid (need 2r+1 <= min dim)",
                bandlimit,
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(LatentConfig { grid, bandlimit })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    /// Real coefficients per component: (2r+1)^2.
    #[inline]
    pub fn per_component(&self) -> usize {
        let m = 2 * self.bandlimit + 1;
        m * m
    }

    /// Total latent dimension (both components).
    #[inline]
    pub fn latent_dim(&self) -> usize {
        2 * self.per_component()
    }

    /// Hermitian representative modes in canonical order (excludes DC).
    fn representatives(&self) -> impl Iterator<Item = (i64, i64)> {
        let r = self.bandlimit as i64;
        let along_kx = (1..=r).map(|kx| (kx, 0));
        let upper = (1..=r).flat_map(move |ky| (-r..=r).map(move |kx| (kx, ky)));
        along_kx.chain(upper)
    }

    /// DFT table index of signed mode (kx, ky).
    #[inline]
    fn table_index(&self, kx: i64, ky: i64) -> usize {
        let nx = self.grid.nx() as i64;
        let ny = self.grid.ny() as i64;
        let x = kx.rem_euclid(nx) as usize;
        let y = ky.rem_euclid(ny) as usize;
        y * self.grid.nx() + x
    }
}

/// Packed bandlimited coefficients of one velocity field.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVelocity {
    config: LatentConfig,
    coeffs: Vec<f64>,
}

impl LatentVelocity {
    pub fn zeros(config: LatentConfig) -> LatentVelocity {
        LatentVelocity {
            coeffs: vec![0.0; config.latent_dim()],
            config,
        }
    }

    pub fn from_coeffs(config: LatentConfig, coeffs: Vec<f64>) -> Result<LatentVelocity> {
        if coeffs.len() != config.latent_dim() {
            return Err(Error::InvalidConfig(format!(
                "latent vector length {} does not match latent_dim {}",
                coeffs.len(),
                config.latent_dim()
            )));
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite {
                context: "latent coefficients",
            });
        }
        Ok(LatentVelocity { config, coeffs })
    }

    #[inline]
    pub fn config(&self) -> LatentConfig {
        self.config
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Canonical squared norm: equals the weighted L2 norm squared of the
    /// decoded field (Hermitian pairs count twice).
    pub fn norm_sq(&self) -> f64 {
        let per = self.config.per_component();
        let mut acc = 0.0;
        for comp in 0..2 {
            let c = &self.coeffs[comp * per..(comp + 1) * per];
            acc += c[0] * c[0];
            for pair in c[1..].chunks_exact(2) {
                acc += 2.0 * (pair[0] * pair[0] + pair[1] * pair[1]);
            }
        }
        acc
    }
}

/// Time series of latent velocities z_{v_0} .. z_{v_1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGeodesic {
    latents: Vec<LatentVelocity>,
}

impl LatentGeodesic {
    pub fn new(latents: Vec<LatentVelocity>) -> Result<LatentGeodesic> {
        if latents.len() < 2 {
            return Err(Error::InvalidConfig(
                "a latent geodesic needs at least two time points".into(),
            ));
        }
        let config = latents[0].config;
        if latents[1..].iter().any(|z| z.config != config) {
            return Err(Error::InvalidConfig(
                "latent geodesic time points must share a config".into(),
            ));
        }
        Ok(LatentGeodesic { latents })
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.latents.len() - 1
    }

    #[inline]
    pub fn config(&self) -> LatentConfig {
        self.latents[0].config
    }

    #[inline]
    pub fn latents(&self) -> &[LatentVelocity] {
        &self.latents
    }

    #[inline]
    pub fn latent(&self, i: usize) -> &LatentVelocity {
        &self.latents[i]
    }

    /// Time-major concatenation of all coefficient vectors.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.latents.len() * self.config().latent_dim());
        for z in &self.latents {
            out.extend_from_slice(&z.coeffs);
        }
        out
    }

    pub fn unflatten(config: LatentConfig, steps: usize, data: &[f64]) -> Result<LatentGeodesic> {
        let dim = config.latent_dim();
        if data.len() != (steps + 1) * dim {
            return Err(Error::InvalidConfig(format!(
                "flattened latent geodesic has length {}, expected {}",
                data.len(),
                (steps + 1) * dim
            )));
        }
        let latents = data
            .chunks_exact(dim)
            .map(|chunk| LatentVelocity::from_coeffs(config, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        LatentGeodesic::new(latents)
    }
}

/// Truncate a velocity field to its retained Fourier modes.
pub fn encode(v: &VectorField, cfg: &LatentConfig) -> Result<LatentVelocity> {
    cfg.grid.same_as(&v.grid())?;
    let inv_n = 1.0 / cfg.grid.len() as f64;
    let mut coeffs = Vec::with_capacity(cfg.latent_dim());
    for component in [v.x(), v.y()] {
        let spec = fft2_forward(cfg.grid, component);
        coeffs.push(spec[0].re * inv_n);
        for (kx, ky) in cfg.representatives() {
            let c = spec[cfg.table_index(kx, ky)];
            coeffs.push(c.re * inv_n);
            coeffs.push(c.im * inv_n);
        }
    }
    Ok(LatentVelocity {
        config: *cfg,
        coeffs,
    })
}

/// Zero-pad a latent back to a full-grid velocity field.
pub fn decode(z: &LatentVelocity) -> VectorField {
    let cfg = z.config;
    let grid = cfg.grid;
    let n = grid.len() as f64;
    let per = cfg.per_component();
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    for comp in 0..2 {
        let packed = &z.coeffs[comp * per..(comp + 1) * per];
        let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
        spec[0] = Complex64::new(packed[0] * n, 0.0);
        let mut it = packed[1..].chunks_exact(2);
        for (kx, ky) in cfg.representatives() {
            let pair = it.next().expect("packing length checked");
            let c = Complex64::new(pair[0] * n, pair[1] * n);
            spec[cfg.table_index(kx, ky)] = c;
            spec[cfg.table_index(-kx, -ky)] = c.conj();
        }
        components.push(fft2_inverse_real(grid, &spec));
    }
    let y = components.pop().expect("two components");
    let x = components.pop().expect("two components");
    VectorField::from_raw(grid, x, y)
}

const DIVERGENCE_GUARD: f64 = 1e6;

/// Propagate a latent initial velocity along its geodesic: per step,
/// decode -> EPDiff rhs -> encode -> Euler update in latent space.
pub fn latent_shoot(
    z0: &LatentVelocity,
    opcfg: &OperatorConfig,
    steps: usize,
) -> Result<LatentGeodesic> {
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "latent_shoot needs at least one step".into(),
        ));
    }
    let cfg = z0.config;
    let op = MetricOperator::new(*opcfg, cfg.grid);
    let h = 1.0 / steps as f64;
    let mut latents = Vec::with_capacity(steps + 1);
    latents.push(z0.clone());
    for i in 0..steps {
        let v = decode(&latents[i]);
        let linf = v.linf();
        if !linf.is_finite() || linf > DIVERGENCE_GUARD {
            return Err(Error::Divergence { step: i, linf });
        }
        let rhs = epdiff_rhs_with(&v, &op, RHS_SCHEME)?;
        let dz = encode(&rhs, &cfg)?;
        let mut next = latents[i].coeffs.clone();
        for (acc, d) in next.iter_mut().zip(dz.coeffs.iter()) {
            *acc += h * d;
        }
        latents.push(LatentVelocity {
            config: cfg,
            coeffs: next,
        });
    }
    LatentGeodesic::new(latents)
}

/// Per-time-point mean absolute error between the decoded latent path and
/// a full-grid reference geodesic.
pub fn geodesic_mae_curve(latent: &LatentGeodesic, reference: &GeodesicPath) -> Result<Vec<f64>> {
    if latent.steps() != reference.steps() {
        return Err(Error::InvalidConfig(format!(
            "latent path has {} steps, reference has {}",
            latent.steps(),
            reference.steps()
        )));
    }
    latent.config().grid().same_as(&reference.grid())?;
    let n_values = (2 * reference.grid().len()) as f64;
    let mut curve = Vec::with_capacity(latent.steps() + 1);
    for (z, v_ref) in latent.latents().iter().zip(reference.velocities()) {
        let v = decode(z);
        let mut acc = 0.0;
        for (a, b) in v.x().iter().zip(v_ref.x()) {
            acc += (a - b).abs();
        }
        for (a, b) in v.y().iter().zip(v_ref.y()) {
            acc += (a - b).abs();
        }
        curve.push(acc / n_values);
    }
    Ok(curve)
}
