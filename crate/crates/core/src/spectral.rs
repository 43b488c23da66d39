//! Fourier-domain differential operators and finite-difference stencils.
//!
//! The metric operator L = (-alpha*Lap + Id)^3 and its inverse K act as
//! coefficient-wise multiplications in Fourier space. The discrete symbol
//! uses the eigenvalues of the standard periodic 5-point Laplacian,
//!
//!   lambda(k) = (2 - 2cos(2 pi kx/nx))/hx^2 + (2 - 2cos(2 pi ky/ny))/hy^2,
//!
//! so the Fourier route matches spatial stencil application to rounding
//! error. DFTs use the unnormalized-forward / normalized-inverse
//! convention throughout the crate.
//!
//! First derivatives come in two flavours: `Central` (second-order
//! periodic central differences; the default for image-space quantities)
//! and `Spectral` (exact differentiation of resolved modes with the
//! Nyquist coefficient zeroed). Both are antisymmetric, which the
//! summation-by-parts identities and the registration adjoint rely on.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField, VectorField};

pub type Complex64 = Complex<f64>;

/// Parameters of the metric operator L = (-alpha*Lap + Id)^power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorConfig {
    /// Smoothness weight alpha >= 0.
    pub alpha: f64,
    /// Operator exponent; production paths use 3.
    pub power: u32,
}

impl OperatorConfig {
    pub fn new(alpha: f64) -> Result<OperatorConfig> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "operator alpha must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(OperatorConfig { alpha, power: 3 })
    }

    /// Non-default exponent, used by tests only.
    pub fn with_power(alpha: f64, power: u32) -> Result<OperatorConfig> {
        if power == 0 {
            return Err(Error::InvalidConfig("operator power must be >= 1".into()));
        }
        let mut cfg = OperatorConfig::new(alpha)?;
        cfg.power = power;
        Ok(cfg)
    }
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            alpha: 3.0,
            power: 3,
        }
    }
}

/// Derivative discretization used by the EPDiff right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivScheme {
    /// Periodic second-order central differences.
    Central,
    /// Exact Fourier differentiation (Nyquist mode zeroed).
    Spectral,
}

// ---------------------------------------------------------------------------
// FFT plumbing
// ---------------------------------------------------------------------------

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

fn transpose(data: &[Complex64], nx: usize, ny: usize, out: &mut Vec<Complex64>) {
    out.clear();
    out.resize(nx * ny, Complex64::new(0.0, 0.0));
    for iy in 0..ny {
        for ix in 0..nx {
            out[ix * ny + iy] = data[iy * nx + ix];
        }
    }
}

fn fft2_in_place(grid: Grid, data: &mut Vec<Complex64>, inverse: bool) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let row_plan = plan(nx, inverse);
    for row in data.chunks_exact_mut(nx) {
        row_plan.process(row);
    }
    let mut t = Vec::new();
    transpose(data, nx, ny, &mut t);
    let col_plan = plan(ny, inverse);
    for row in t.chunks_exact_mut(ny) {
        col_plan.process(row);
    }
    transpose(&t, ny, nx, data);
}

/// Unnormalized forward 2D DFT of real samples.
pub(crate) fn fft2_forward(grid: Grid, values: &[f64]) -> Vec<Complex64> {
    debug_assert_eq!(values.len(), grid.len());
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(grid, &mut data, false);
    data
}

/// Normalized inverse 2D DFT; returns the real parts.
pub(crate) fn fft2_inverse_real(grid: Grid, coeffs: &[Complex64]) -> Vec<f64> {
    debug_assert_eq!(coeffs.len(), grid.len());
    let mut data = coeffs.to_vec();
    fft2_in_place(grid, &mut data, true);
    let scale = 1.0 / grid.len() as f64;
    data.iter().map(|c| c.re * scale).collect()
}

/// DFT coefficients of a vector field, one complex table per component,
/// in standard ordering (index k in 0..n-1 read as signed frequency k or
/// k - n).
#[derive(Debug, Clone)]
pub struct Spectrum {
    grid: Grid,
    x: Vec<Complex64>,
    y: Vec<Complex64>,
}

impl Spectrum {
    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn x(&self) -> &[Complex64] {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &[Complex64] {
        &self.y
    }

    pub fn x_mut(&mut self) -> &mut [Complex64] {
        &mut self.x
    }

    pub fn y_mut(&mut self) -> &mut [Complex64] {
        &mut self.y
    }
}

pub fn dft_forward(v: &VectorField) -> Spectrum {
    Spectrum {
        grid: v.grid(),
        x: fft2_forward(v.grid(), v.x()),
        y: fft2_forward(v.grid(), v.y()),
    }
}

pub fn dft_inverse(s: &Spectrum) -> VectorField {
    VectorField::from_raw(
        s.grid,
        fft2_inverse_real(s.grid, &s.x),
        fft2_inverse_real(s.grid, &s.y),
    )
}

// ---------------------------------------------------------------------------
// Metric operator
// ---------------------------------------------------------------------------

/// Per-frequency symbol table of L: A(k) = (alpha*lambda(k) + 1)^power,
/// laid out like a field (entry at index ky*nx + kx). All entries >= 1.
pub fn operator_symbol(cfg: &OperatorConfig, grid: Grid) -> ScalarField {
    let (nx, ny) = (grid.nx(), grid.ny());
    let sx = (nx as f64) * (nx as f64); // 1/hx^2
    let sy = (ny as f64) * (ny as f64);
    let mut values = Vec::with_capacity(grid.len());
    for ky in 0..ny {
        let wy = 2.0 * std::f64::consts::PI * ky as f64 / ny as f64;
        let ly = (2.0 - 2.0 * wy.cos()) * sy;
        for kx in 0..nx {
            let wx = 2.0 * std::f64::consts::PI * kx as f64 / nx as f64;
            let lx = (2.0 - 2.0 * wx.cos()) * sx;
            values.push((cfg.alpha * (lx + ly) + 1.0).powi(cfg.power as i32));
        }
    }
    ScalarField::from_raw(grid, values)
}

fn apply_symbol(v: &VectorField, symbol: &ScalarField, invert: bool) -> VectorField {
    let grid = v.grid();
    let mut spec = dft_forward(v);
    let table = symbol.values();
    if invert {
        for (c, &a) in spec.x.iter_mut().zip(table) {
            *c /= a;
        }
        for (c, &a) in spec.y.iter_mut().zip(table) {
            *c /= a;
        }
    } else {
        for (c, &a) in spec.x.iter_mut().zip(table) {
            *c *= a;
        }
        for (c, &a) in spec.y.iter_mut().zip(table) {
            *c *= a;
        }
    }
    let _ = grid;
    dft_inverse(&spec)
}

/// Apply L: multiply each Fourier coefficient by A(k).
pub fn apply_l(v: &VectorField, cfg: &OperatorConfig) -> VectorField {
    let symbol = operator_symbol(cfg, v.grid());
    apply_symbol(v, &symbol, false)
}

/// Apply K = L^-1: divide each Fourier coefficient by A(k). Always safe
/// since A(k) >= 1.
pub fn apply_k(m: &VectorField, cfg: &OperatorConfig) -> VectorField {
    let symbol = operator_symbol(cfg, m.grid());
    apply_symbol(m, &symbol, true)
}

/// Precomputed symbol for repeated L/K application on one grid.
#[derive(Debug, Clone)]
pub struct MetricOperator {
    cfg: OperatorConfig,
    symbol: ScalarField,
}

impl MetricOperator {
    pub fn new(cfg: OperatorConfig, grid: Grid) -> MetricOperator {
        MetricOperator {
            cfg,
            symbol: operator_symbol(&cfg, grid),
        }
    }

    #[inline]
    pub fn config(&self) -> &OperatorConfig {
        &self.cfg
    }

    pub fn apply_l(&self, v: &VectorField) -> VectorField {
        apply_symbol(v, &self.symbol, false)
    }

    pub fn apply_k(&self, m: &VectorField) -> VectorField {
        apply_symbol(m, &self.symbol, true)
    }
}

// ---------------------------------------------------------------------------
// First derivatives
// ---------------------------------------------------------------------------

/// d/dx by periodic central differences on a raw value slice.
pub(crate) fn deriv_x_central(grid: Grid, values: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let half_inv_h = 0.5 * nx as f64;
    let mut out = vec![0.0; grid.len()];
    for iy in 0..ny {
        let row = iy * nx;
        for ix in 0..nx {
            let xp = if ix + 1 == nx { 0 } else { ix + 1 };
            let xm = if ix == 0 { nx - 1 } else { ix - 1 };
            out[row + ix] = (values[row + xp] - values[row + xm]) * half_inv_h;
        }
    }
    out
}

/// d/dy by periodic central differences on a raw value slice.
pub(crate) fn deriv_y_central(grid: Grid, values: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let half_inv_h = 0.5 * ny as f64;
    let mut out = vec![0.0; grid.len()];
    for iy in 0..ny {
        let yp = if iy + 1 == ny { 0 } else { iy + 1 };
        let ym = if iy == 0 { ny - 1 } else { iy - 1 };
        for ix in 0..nx {
            out[iy * nx + ix] = (values[yp * nx + ix] - values[ym * nx + ix]) * half_inv_h;
        }
    }
    out
}

/// Signed frequency of DFT index k on an n-point axis, with the Nyquist
/// mode mapped to zero so differentiation stays a real antisymmetric map.
#[inline]
fn signed_freq(k: usize, n: usize) -> f64 {
    if 2 * k < n {
        k as f64
    } else if 2 * k == n {
        0.0
    } else {
        k as f64 - n as f64
    }
}

fn deriv_spectral(grid: Grid, values: &[f64], axis: usize) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut coeffs = fft2_forward(grid, values);
    let two_pi = 2.0 * std::f64::consts::PI;
    for ky in 0..ny {
        for kx in 0..nx {
            let w = if axis == 0 {
                two_pi * signed_freq(kx, nx)
            } else {
                two_pi * signed_freq(ky, ny)
            };
            let c = coeffs[ky * nx + kx];
            coeffs[ky * nx + kx] = Complex64::new(-w * c.im, w * c.re); // i*w*c
        }
    }
    fft2_inverse_real(grid, &coeffs)
}

pub(crate) fn deriv_x(grid: Grid, values: &[f64], scheme: DerivScheme) -> Vec<f64> {
    match scheme {
        DerivScheme::Central => deriv_x_central(grid, values),
        DerivScheme::Spectral => deriv_spectral(grid, values, 0),
    }
}

pub(crate) fn deriv_y(grid: Grid, values: &[f64], scheme: DerivScheme) -> Vec<f64> {
    match scheme {
        DerivScheme::Central => deriv_y_central(grid, values),
        DerivScheme::Spectral => deriv_spectral(grid, values, 1),
    }
}

/// Central-difference gradient of a scalar field.
pub fn gradient(s: &ScalarField) -> VectorField {
    let grid = s.grid();
    VectorField::from_raw(
        grid,
        deriv_x_central(grid, s.values()),
        deriv_y_central(grid, s.values()),
    )
}

/// Central-difference divergence of a vector field.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let dx = deriv_x_central(grid, v.x());
    let dy = deriv_y_central(grid, v.y());
    let values = dx.iter().zip(dy.iter()).map(|(a, b)| a + b).collect();
    ScalarField::from_raw(grid, values)
}

/// Central-difference Jacobian of a vector field, returned as
/// [dvx/dx, dvx/dy, dvy/dx, dvy/dy].
pub fn jacobian(v: &VectorField) -> [ScalarField; 4] {
    let grid = v.grid();
    [
        ScalarField::from_raw(grid, deriv_x_central(grid, v.x())),
        ScalarField::from_raw(grid, deriv_y_central(grid, v.x())),
        ScalarField::from_raw(grid, deriv_x_central(grid, v.y())),
        ScalarField::from_raw(grid, deriv_y_central(grid, v.y())),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{inner_product, inner_product_scalar, linf_error};
    use crate::rng::Rng;
    use std::f64::consts::PI;

    fn random_field(grid: Grid, seed: u64) -> VectorField {
        let mut rng = Rng::new(seed);
        let x = (0..grid.len()).map(|_| rng.next_normal()).collect();
        let y = (0..grid.len()).map(|_| rng.next_normal()).collect();
        VectorField::from_raw(grid, x, y)
    }

    #[test]
    fn dft_of_constant_is_dc_only() {
        let grid = Grid::new(8, 8).unwrap();
        let c = 2.5;
        let v = VectorField::constant(grid, c, 0.0);
        let spec = dft_forward(&v);
        let dc = spec.x()[0];
        assert!((dc.re - c * grid.len() as f64).abs() < 1e-10);
        assert!(dc.im.abs() < 1e-10);
        for (i, coeff) in spec.x().iter().enumerate().skip(1) {
            assert!(coeff.norm() < 1e-10, "index {i} has {coeff}");
        }
    }

    #[test]
    fn dft_of_single_mode() {
        let grid = Grid::new(16, 16).unwrap();
        let v = VectorField::from_fn(grid, |x, _| ((2.0 * PI * x).sin(), 0.0));
        let spec = dft_forward(&v);
        let nonzero: Vec<usize> = spec
            .x()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 1e-8)
            .map(|(i, _)| i)
            .collect();
        // k = (1, 0) and k = (-1, 0) == index nx-1
        assert_eq!(nonzero, vec![1, 15]);
        let expected = grid.len() as f64 / 2.0;
        assert!((spec.x()[1].im + expected).abs() < 1e-9);
        assert!((spec.x()[15].im - expected).abs() < 1e-9);
    }

    #[test]
    fn dft_roundtrip_random() {
        let grid = Grid::new(8, 8).unwrap();
        let v = random_field(grid, 7);
        let back = dft_inverse(&dft_forward(&v));
        assert!(linf_error(&v, &back).unwrap() < 1e-10);
    }

    #[test]
    fn symbol_alpha_zero_is_identity() {
        let grid = Grid::new(8, 8).unwrap();
        let cfg = OperatorConfig::new(0.0).unwrap();
        let sym = operator_symbol(&cfg, grid);
        assert!(sym.values().iter().all(|&a| (a - 1.0).abs() < 1e-15));
    }

    #[test]
    fn symbol_dc_is_one() {
        let grid = Grid::new(16, 16).unwrap();
        let cfg = OperatorConfig::new(7.5).unwrap();
        let sym = operator_symbol(&cfg, grid);
        assert_eq!(sym.values()[0], 1.0);
        assert!(sym.values().iter().all(|&a| a >= 1.0));
    }

    /// Apply (-alpha*Lap + Id) once with the explicit 5-point stencil.
    fn helmholtz_stencil(grid: Grid, alpha: f64, values: &[f64]) -> Vec<f64> {
        let (nx, ny) = (grid.nx(), grid.ny());
        let sx = (nx * nx) as f64;
        let sy = (ny * ny) as f64;
        let mut out = vec![0.0; grid.len()];
        for iy in 0..ny {
            for ix in 0..nx {
                let c = values[grid.idx(ix, iy)];
                let xp = values[grid.idx_wrap(ix as isize + 1, iy as isize)];
                let xm = values[grid.idx_wrap(ix as isize - 1, iy as isize)];
                let yp = values[grid.idx_wrap(ix as isize, iy as isize + 1)];
                let ym = values[grid.idx_wrap(ix as isize, iy as isize - 1)];
                let lap = (xp + xm - 2.0 * c) * sx + (yp + ym - 2.0 * c) * sy;
                out[grid.idx(ix, iy)] = -alpha * lap + c;
            }
        }
        out
    }

    #[test]
    fn symbol_matches_triple_stencil_on_mode() {
        // Scaling factor of L on sin(2*pi*x), alpha = 3, 16x16.
        let grid = Grid::new(16, 16).unwrap();
        let alpha = 3.0;
        let cfg = OperatorConfig::new(alpha).unwrap();
        let mode: Vec<f64> = (0..grid.len())
            .map(|i| {
                let ix = i % 16;
                (2.0 * PI * ix as f64 / 16.0).sin()
            })
            .collect();
        let mut spatial = mode.clone();
        for _ in 0..3 {
            spatial = helmholtz_stencil(grid, alpha, &spatial);
        }
        let expected = (alpha * (2.0 - 2.0 * (PI / 8.0).cos()) * 256.0 + 1.0).powi(3);
        let sym = operator_symbol(&cfg, grid);
        assert!((sym.values()[1] - expected).abs() / expected < 1e-12);
        // scaling factor read off a non-node sample
        let i = grid.idx(1, 0);
        assert!((spatial[i] / mode[i] - expected).abs() / expected < 1e-10);
    }

    /// Random smooth field: white noise passed once through K, scaled to
    /// unit L-infinity. Velocity fields in this crate are always of this
    /// kind; raw white noise puts the low-frequency content of Lv below
    /// the f64 rounding floor of its high-frequency content.
    fn random_smooth_field(grid: Grid, cfg: &OperatorConfig, seed: u64) -> VectorField {
        let mut v = apply_k(&random_field(grid, seed), cfg);
        let linf = v.linf();
        v.scale_in_place(1.0 / linf.max(1e-300));
        v
    }

    #[test]
    fn apply_l_matches_triple_stencil_random() {
        // White noise here: every mode carries O(1) weight, so the
        // comparison is meaningful across the whole spectrum. (Smooth
        // fields would bury their high modes below the FFT rounding
        // floor before L amplifies them.)
        let grid = Grid::new(8, 8).unwrap();
        let cfg = OperatorConfig::new(2.0).unwrap();
        let v = random_field(grid, 9);
        let via_fourier = apply_l(&v, &cfg);
        let mut sx = v.x().to_vec();
        let mut sy = v.y().to_vec();
        for _ in 0..3 {
            sx = helmholtz_stencil(grid, cfg.alpha, &sx);
            sy = helmholtz_stencil(grid, cfg.alpha, &sy);
        }
        let spatial = VectorField::from_raw(grid, sx, sy);
        let scale = via_fourier.linf().max(1.0);
        assert!(linf_error(&via_fourier, &spatial).unwrap() / scale < 1e-10);
    }

    #[test]
    fn l_and_k_are_inverse_pair() {
        let grid = Grid::new(8, 8).unwrap();
        for alpha in [0.0, 3.0] {
            let cfg = OperatorConfig::new(alpha).unwrap();
            let v = random_smooth_field(grid, &OperatorConfig::new(3.0).unwrap(), 11);
            let back = apply_k(&apply_l(&v, &cfg), &cfg);
            assert!(linf_error(&v, &back).unwrap() < 1e-10);
            if alpha == 0.0 {
                assert!(linf_error(&v, &apply_l(&v, &cfg)).unwrap() < 1e-10);
                assert!(linf_error(&v, &apply_k(&v, &cfg)).unwrap() < 1e-10);
            }
        }
        let z = VectorField::zeros(grid);
        let cfg = OperatorConfig::default();
        assert_eq!(apply_l(&z, &cfg).linf(), 0.0);
        assert_eq!(apply_k(&z, &cfg).linf(), 0.0);
    }

    #[test]
    fn l_is_self_adjoint_and_positive() {
        let grid = Grid::new(8, 8).unwrap();
        let cfg = OperatorConfig::new(1.5).unwrap();
        let a = random_field(grid, 13);
        let b = random_field(grid, 14);
        let lhs = inner_product(&apply_l(&a, &cfg), &b).unwrap();
        let rhs = inner_product(&a, &apply_l(&b, &cfg)).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        let lv_v = inner_product(&apply_l(&a, &cfg), &a).unwrap();
        let v_v = inner_product(&a, &a).unwrap();
        assert!(lv_v >= v_v - 1e-9);
    }

    #[test]
    fn k_never_amplifies_high_frequencies() {
        // high-frequency energy fraction of K(m) <= that of m
        let grid = Grid::new(16, 16).unwrap();
        let cfg = OperatorConfig::new(2.0).unwrap();
        let energy_split = |v: &VectorField| {
            let spec = dft_forward(v);
            let (mut low, mut high) = (0.0, 0.0);
            for ky in 0..16usize {
                for kx in 0..16usize {
                    let fk = |k: usize| if k <= 8 { k } else { 16 - k };
                    let e = spec.x()[ky * 16 + kx].norm_sqr() + spec.y()[ky * 16 + kx].norm_sqr();
                    if fk(kx).max(fk(ky)) > 4 {
                        high += e;
                    } else {
                        low += e;
                    }
                }
            }
            high / (low + high)
        };
        for seed in 0..5 {
            let m = random_field(grid, 100 + seed);
            let smoothed = apply_k(&m, &cfg);
            assert!(energy_split(&smoothed) <= energy_split(&m) + 1e-12);
        }
    }

    #[test]
    fn derivatives_of_constant_vanish() {
        let grid = Grid::new(8, 8).unwrap();
        let s = ScalarField::constant(grid, 4.2);
        let g = gradient(&s);
        assert_eq!(g.linf(), 0.0);
        let v = VectorField::constant(grid, 1.0, -2.0);
        assert!(divergence(&v).values().iter().all(|&d| d == 0.0));
        for part in jacobian(&v) {
            assert!(part.values().iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn central_difference_eigenvalue_on_single_mode() {
        let grid = Grid::new(16, 16).unwrap();
        let s = ScalarField::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let g = gradient(&s);
        let h = grid.hx();
        let factor = (2.0 * PI * h).sin() / h;
        for iy in 0..16 {
            for ix in 0..16 {
                let (x, _) = grid.point(ix, iy);
                let expected = factor * (2.0 * PI * x).cos();
                assert!((g.x()[grid.idx(ix, iy)] - expected).abs() < 1e-12);
                assert!(g.y()[grid.idx(ix, iy)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn div_grad_matches_double_stencil() {
        let grid = Grid::new(8, 8).unwrap();
        let mut rng = Rng::new(77);
        let s = ScalarField::from_raw(grid, (0..grid.len()).map(|_| rng.next_normal()).collect());
        let composed = divergence(&gradient(&s));
        // direct double application of the central stencils
        let dx = deriv_x_central(grid, s.values());
        let dy = deriv_y_central(grid, s.values());
        let dxx = deriv_x_central(grid, &dx);
        let dyy = deriv_y_central(grid, &dy);
        for i in 0..grid.len() {
            assert!((composed.values()[i] - (dxx[i] + dyy[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_divergence_duality() {
        // (div v, s) = -(v, grad s): summation by parts is exact for
        // periodic central differences.
        let grid = Grid::new(8, 8).unwrap();
        let mut rng = Rng::new(88);
        let s = ScalarField::from_raw(grid, (0..grid.len()).map(|_| rng.next_normal()).collect());
        let v = random_field(grid, 89);
        let lhs = inner_product_scalar(&divergence(&v), &s).unwrap();
        let rhs = -(inner_product(&v, &gradient(&s)).unwrap());
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn spectral_derivative_is_exact_on_modes_and_antisymmetric() {
        let grid = Grid::new(16, 16).unwrap();
        let s = ScalarField::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (4.0 * PI * y).cos());
        let dx = deriv_x(grid, s.values(), DerivScheme::Spectral);
        for iy in 0..16 {
            for ix in 0..16 {
                let (x, y) = grid.point(ix, iy);
                let expected = 2.0 * PI * (2.0 * PI * x).cos() * (4.0 * PI * y).cos();
                assert!((dx[grid.idx(ix, iy)] - expected).abs() < 1e-9);
            }
        }
        // antisymmetry: sum f * (D g) = -sum (D f) * g
        let mut rng = Rng::new(99);
        let f: Vec<f64> = (0..grid.len()).map(|_| rng.next_normal()).collect();
        let g: Vec<f64> = (0..grid.len()).map(|_| rng.next_normal()).collect();
        for scheme in [DerivScheme::Central, DerivScheme::Spectral] {
            let df = deriv_x(grid, &f, scheme);
            let dg = deriv_x(grid, &g, scheme);
            let lhs: f64 = f.iter().zip(dg.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = df.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs + rhs).abs() < 1e-8 * lhs.abs().max(1.0),
                "{scheme:?}: {lhs} vs {rhs}"
            );
        }
    }
}
