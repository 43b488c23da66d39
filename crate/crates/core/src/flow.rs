//! Deformation flows: integrate velocity paths into deformations, warp
//! images through them, and compute Jacobian-determinant maps.
//!
//! Deformations are stored as displacements, phi(x) = x + u(x), with u
//! unwrapped; sampling wraps coordinates around the torus. The flow
//! update is the forward particle discretization of d phi/dt = v_t(phi_t):
//!
//!   phi_{i+1}(x) = phi_i(x) + h * v_i(phi_i(x)),
//!
//! with bilinear interpolation of v_i.

use crate::epdiff::GeodesicPath;
use crate::error::{Error, Result};
use crate::field::{DeformationField, Grid, ScalarField, VectorField};
use crate::spectral::{deriv_x_central, deriv_y_central};

/// Deformations phi_0 .. phi_1 aligned with a geodesic's time grid;
/// deformations[0] is the identity.
#[derive(Debug, Clone)]
pub struct DeformationPath {
    deformations: Vec<DeformationField>,
}

impl DeformationPath {
    #[inline]
    pub fn deformations(&self) -> &[DeformationField] {
        &self.deformations
    }

    #[inline]
    pub fn deformation(&self, i: usize) -> &DeformationField {
        &self.deformations[i]
    }

    /// The end-point transformation phi_1.
    #[inline]
    pub fn terminal(&self) -> &DeformationField {
        self.deformations.last().expect("non-empty by construction")
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.deformations.len() - 1
    }
}

/// Periodic bilinear cell at the physical point (px, py): wrapped corner
/// indices [c00, c10, c01, c11] and the in-cell fractions (tx, ty).
#[inline]
pub(crate) fn bilinear_cell(grid: Grid, px: f64, py: f64) -> ([usize; 4], f64, f64) {
    let gx = px * grid.nx() as f64;
    let gy = py * grid.ny() as f64;
    let fx0 = gx.floor();
    let fy0 = gy.floor();
    let tx = gx - fx0;
    let ty = gy - fy0;
    let ix0 = (fx0 as isize).rem_euclid(grid.nx() as isize) as usize;
    let iy0 = (fy0 as isize).rem_euclid(grid.ny() as isize) as usize;
    let ix1 = if ix0 + 1 == grid.nx() { 0 } else { ix0 + 1 };
    let iy1 = if iy0 + 1 == grid.ny() { 0 } else { iy0 + 1 };
    let nx = grid.nx();
    (
        [
            iy0 * nx + ix0,
            iy0 * nx + ix1,
            iy1 * nx + ix0,
            iy1 * nx + ix1,
        ],
        tx,
        ty,
    )
}

/// Corner indices and weights of the periodic bilinear stencil at the
/// physical point (px, py).
#[inline]
pub(crate) fn bilinear_stencil(grid: Grid, px: f64, py: f64) -> ([usize; 4], [f64; 4]) {
    let (idx, tx, ty) = bilinear_cell(grid, px, py);
    (
        idx,
        [
            (1.0 - tx) * (1.0 - ty),
            tx * (1.0 - ty),
            (1.0 - tx) * ty,
            tx * ty,
        ],
    )
}

#[inline]
pub(crate) fn bilinear_eval(values: &[f64], grid: Grid, px: f64, py: f64) -> f64 {
    let (idx, w) = bilinear_stencil(grid, px, py);
    values[idx[0]] * w[0] + values[idx[1]] * w[1] + values[idx[2]] * w[2] + values[idx[3]] * w[3]
}

fn check_points(phi: &DeformationField) -> Result<()> {
    if phi.displacement().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "deformation sample coordinates",
        })
    }
}

/// Resample a scalar field at phi(x) = x + u(x) with periodic bilinear
/// interpolation. Evaluating at the identity reproduces the field exactly.
pub fn sample_bilinear(f: &ScalarField, points: &DeformationField) -> Result<ScalarField> {
    f.grid().same_as(&points.grid())?;
    check_points(points)?;
    let grid = f.grid();
    let u = points.displacement();
    let mut out = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny() {
        for ix in 0..grid.nx() {
            let i = grid.idx(ix, iy);
            let (x, y) = grid.point(ix, iy);
            out.push(bilinear_eval(f.values(), grid, x + u.x()[i], y + u.y()[i]));
        }
    }
    Ok(ScalarField::from_raw(grid, out))
}

/// Vector-field counterpart of [`sample_bilinear`].
pub fn sample_bilinear_vector(f: &VectorField, points: &DeformationField) -> Result<VectorField> {
    f.grid().same_as(&points.grid())?;
    check_points(points)?;
    let grid = f.grid();
    let u = points.displacement();
    let mut out_x = Vec::with_capacity(grid.len());
    let mut out_y = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny() {
        for ix in 0..grid.nx() {
            let i = grid.idx(ix, iy);
            let (x, y) = grid.point(ix, iy);
            let (idx, w) = bilinear_stencil(grid, x + u.x()[i], y + u.y()[i]);
            out_x.push(
                f.x()[idx[0]] * w[0] + f.x()[idx[1]] * w[1] + f.x()[idx[2]] * w[2]
                    + f.x()[idx[3]] * w[3],
            );
            out_y.push(
                f.y()[idx[0]] * w[0] + f.y()[idx[1]] * w[1] + f.y()[idx[2]] * w[2]
                    + f.y()[idx[3]] * w[3],
            );
        }
    }
    Ok(VectorField::from_raw(grid, out_x, out_y))
}

/// Integrate a geodesic's velocities into the deformation path phi_t.
pub fn integrate_flow(path: &GeodesicPath) -> Result<DeformationPath> {
    let grid = path.grid();
    let steps = path.steps();
    let h = 1.0 / steps as f64;
    let mut deformations = Vec::with_capacity(steps + 1);
    deformations.push(DeformationField::identity(grid));
    for i in 0..steps {
        let phi = &deformations[i];
        let v_at_phi = sample_bilinear_vector(path.velocity(i), phi)?;
        let mut u = phi.displacement().clone();
        u.axpy_in_place(h, &v_at_phi)?;
        deformations.push(DeformationField::from_displacement(u));
    }
    Ok(DeformationPath { deformations })
}

/// Deform an image: computes S(phi).
pub fn warp(image: &ScalarField, phi: &DeformationField) -> Result<ScalarField> {
    sample_bilinear(image, phi)
}

/// Per-pixel determinant of D phi = I + Du, with Du taken by periodic
/// central differences of the displacement. Values below zero mark
/// folding; they are returned as data, not errors.
pub fn det_jacobian(phi: &DeformationField) -> ScalarField {
    let grid = phi.grid();
    let u = phi.displacement();
    let uxx = deriv_x_central(grid, u.x());
    let uxy = deriv_y_central(grid, u.x());
    let uyx = deriv_x_central(grid, u.y());
    let uyy = deriv_y_central(grid, u.y());
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        out.push((1.0 + uxx[i]) * (1.0 + uyy[i]) - uxy[i] * uyx[i]);
    }
    ScalarField::from_raw(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epdiff::{shoot, IntegratorKind};
    use crate::field::linf_error_scalar;
    use crate::rng::Rng;
    use crate::spectral::OperatorConfig;
    use std::f64::consts::PI;

    fn random_scalar(grid: Grid, seed: u64) -> ScalarField {
        let mut rng = Rng::new(seed);
        ScalarField::from_raw(grid, (0..grid.len()).map(|_| rng.next_f64()).collect())
    }

    #[test]
    fn sampling_at_identity_is_exact() {
        let grid = Grid::new(8, 8).unwrap();
        let f = random_scalar(grid, 1);
        let id = DeformationField::identity(grid);
        assert_eq!(sample_bilinear(&f, &id).unwrap(), f);
    }

    #[test]
    fn sampling_constant_is_constant() {
        let grid = Grid::new(8, 8).unwrap();
        let f = ScalarField::constant(grid, 0.37);
        let mut rng = Rng::new(2);
        let u = VectorField::from_raw(
            grid,
            (0..grid.len()).map(|_| rng.next_normal()).collect(),
            (0..grid.len()).map(|_| rng.next_normal()).collect(),
        );
        let phi = DeformationField::from_displacement(u);
        let s = sample_bilinear(&f, &phi).unwrap();
        for &v in s.values() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_center_averages_four_corners() {
        let grid = Grid::new(8, 8).unwrap();
        let f = random_scalar(grid, 3);
        // query at the center of the cell with lower corner (2, 5)
        let px = (2.0 + 0.5) * grid.hx();
        let py = (5.0 + 0.5) * grid.hy();
        let got = bilinear_eval(f.values(), grid, px, py);
        let hand = 0.25
            * (f.at(2, 5) + f.at(3, 5) + f.at(2, 6) + f.at(3, 6));
        assert!((got - hand).abs() < 1e-14);
    }

    #[test]
    fn seam_wraps_continuously() {
        let grid = Grid::new(8, 8).unwrap();
        let f = random_scalar(grid, 4);
        // just left of x=0 interpolates between ix=7 and ix=0
        let got = bilinear_eval(f.values(), grid, -0.25 * grid.hx(), 0.0);
        let hand = 0.75 * f.at(0, 0) + 0.25 * f.at(7, 0);
        assert!((got - hand).abs() < 1e-14);
        // far out-of-range coordinates wrap too
        let wrapped = bilinear_eval(f.values(), grid, 3.0 + 0.5 * grid.hx(), -2.0);
        let local = bilinear_eval(f.values(), grid, 0.5 * grid.hx(), 0.0);
        assert!((wrapped - local).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_flows_to_identity() {
        let grid = Grid::new(8, 8).unwrap();
        let cfg = OperatorConfig::default();
        let path = shoot(&VectorField::zeros(grid), &cfg, 10, IntegratorKind::Euler).unwrap();
        let flow = integrate_flow(&path).unwrap();
        for phi in flow.deformations() {
            assert!(phi.is_identity());
        }
    }

    #[test]
    fn constant_velocity_translates_exactly() {
        let grid = Grid::new(8, 8).unwrap();
        let cfg = OperatorConfig::default();
        let v0 = VectorField::constant(grid, 0.25, 0.0);
        let path = shoot(&v0, &cfg, 10, IntegratorKind::Euler).unwrap();
        let flow = integrate_flow(&path).unwrap();
        let u = flow.terminal().displacement();
        for i in 0..grid.len() {
            assert!((u.x()[i] - 0.25).abs() < 1e-12);
            assert!(u.y()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn warp_by_identity_and_whole_cell_translation() {
        let grid = Grid::new(8, 8).unwrap();
        let img = random_scalar(grid, 5);
        assert_eq!(warp(&img, &DeformationField::identity(grid)).unwrap(), img);
        // translation by exactly one grid cell in x: circular shift
        let phi =
            DeformationField::from_displacement(VectorField::constant(grid, grid.hx(), 0.0));
        let shifted = warp(&img, &phi).unwrap();
        for iy in 0..8 {
            for ix in 0..8 {
                assert_eq!(shifted.at(ix, iy), img.at((ix + 1) % 8, iy));
            }
        }
    }

    #[test]
    fn half_cell_translation_matches_interpolant() {
        let grid = Grid::new(16, 16).unwrap();
        let img = ScalarField::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let shift = 0.5 * grid.hx();
        let phi = DeformationField::from_displacement(VectorField::constant(grid, shift, 0.0));
        let warped = warp(&img, &phi).unwrap();
        // direct evaluation of the bilinear interpolant: average of the
        // two neighbouring samples along x
        let expect = ScalarField::from_fn(grid, |x, _| {
            0.5 * ((2.0 * PI * x).sin() + (2.0 * PI * (x + grid.hx())).sin())
        });
        assert!(linf_error_scalar(&warped, &expect).unwrap() < 1e-12);
    }

    #[test]
    fn detjac_identity_and_translation_are_one() {
        let grid = Grid::new(8, 8).unwrap();
        let id = DeformationField::identity(grid);
        assert!(det_jacobian(&id).values().iter().all(|&d| d == 1.0));
        let tr = DeformationField::from_displacement(VectorField::constant(grid, 0.13, -0.4));
        assert!(det_jacobian(&tr).values().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn detjac_matches_analytic_jacobian() {
        // u = (a sin(2 pi y), b sin(2 pi x)): periodic, smooth, and with
        // known derivative everywhere. det = 1 - ab * (central-diff
        // eigenvalues) cos(2 pi x) cos(2 pi y).
        let grid = Grid::new(32, 32).unwrap();
        let (a, b) = (0.02, 0.015);
        let u = VectorField::from_fn(grid, |x, y| {
            (a * (2.0 * PI * y).sin(), b * (2.0 * PI * x).sin())
        });
        let phi = DeformationField::from_displacement(u);
        let dj = det_jacobian(&phi);
        let sig = |h: f64| (2.0 * PI * h).sin() / h;
        let (sx, sy) = (sig(grid.hx()), sig(grid.hy()));
        for iy in 0..32 {
            for ix in 0..32 {
                let (x, y) = grid.point(ix, iy);
                let expected =
                    1.0 - a * b * sx * sy * (2.0 * PI * x).cos() * (2.0 * PI * y).cos();
                assert!((dj.at(ix, iy) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flow_self_convergence_first_order() {
        // rotation-like bandlimited velocity: displacement error vs a
        // fine reference halves with the step size
        let grid = Grid::new(16, 16).unwrap();
        let cfg = OperatorConfig::new(3.0).unwrap();
        let v0 = VectorField::from_fn(grid, |x, y| {
            (
                0.15 * (2.0 * PI * y).sin(),
                -0.15 * (2.0 * PI * x).sin(),
            )
        });
        let terminal_u = |steps: usize| {
            let path = shoot(&v0, &cfg, steps, IntegratorKind::Euler).unwrap();
            integrate_flow(&path)
                .unwrap()
                .terminal()
                .displacement()
                .clone()
        };
        let reference = terminal_u(256);
        let e16 = crate::field::linf_error(&terminal_u(16), &reference).unwrap();
        let e32 = crate::field::linf_error(&terminal_u(32), &reference).unwrap();
        let ratio = e16 / e32;
        assert!(
            (1.6..=2.6).contains(&ratio),
            "flow convergence ratio {ratio} (e16 {e16:.3e}, e32 {e32:.3e})"
        );
    }

    #[test]
    fn non_finite_points_error() {
        let grid = Grid::new(8, 8).unwrap();
        let f = random_scalar(grid, 7);
        let mut u = VectorField::zeros(grid);
        u.x_mut()[3] = f64::NAN;
        let phi = DeformationField::from_displacement(u);
        assert!(matches!(
            sample_bilinear(&f, &phi),
            Err(crate::error::Error::NonFinite { .. })
        ));
    }
}
