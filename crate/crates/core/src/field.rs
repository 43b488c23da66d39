//! Grid-sampled fields on the periodic unit square.
//!
//! The domain is the flat torus [0,1)^2 sampled on an nx-by-ny grid with
//! spacing hx = 1/nx, hy = 1/ny. Values are stored row-major with x
//! fastest: the sample at (ix, iy) lives at index `iy * nx + ix` and
//! represents the point (ix*hx, iy*hy). Every module in this crate and
//! every file format in the CLI uses this layout.

use crate::error::{Error, Result};

/// Uniform periodic grid on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    nx: usize,
    ny: usize,
}

impl Grid {
    /// Both dimensions must be even and at least 4 (required by the
    /// Hermitian-symmetric spectral truncation).
    pub fn new(nx: usize, ny: usize) -> Result<Grid> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid {
                nx,
                ny,
                reason: "dimensions must be at least 4",
            });
        }
        if nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::InvalidGrid {
                nx,
                ny,
                reason: "dimensions must be even",
            });
        }
        Ok(Grid { nx, ny })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    /// Quadrature weight of one sample, hx*hy.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    /// Index with periodic wrap of possibly-negative offsets.
    #[inline]
    pub fn idx_wrap(&self, ix: isize, iy: isize) -> usize {
        let x = ix.rem_euclid(self.nx as isize) as usize;
        let y = iy.rem_euclid(self.ny as isize) as usize;
        y * self.nx + x
    }

    /// Physical coordinate of sample (ix, iy).
    #[inline]
    pub fn point(&self, ix: usize, iy: usize) -> (f64, f64) {
        (ix as f64 * self.hx(), iy as f64 * self.hy())
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                expected: (self.nx, self.ny),
                found: (other.nx, other.ny),
            });
        }
        Ok(())
    }
}

/// Real scalar samples on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> ScalarField {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Build from a function of the physical coordinates.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> ScalarField {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny() {
            for ix in 0..grid.nx() {
                let (x, y) = grid.point(ix, iy);
                values.push(f(x, y));
            }
        }
        ScalarField { grid, values }
    }

    /// Adopt externally produced values; validates length and finiteness.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "scalar field length {} does not match grid {}x{}",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "scalar field values",
            });
        }
        Ok(ScalarField { grid, values })
    }

    /// Internal constructor for values produced by this crate's own
    /// arithmetic; skips re-validation.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> ScalarField {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.idx(ix, iy)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Two-component vector samples sharing one grid. Holds velocities (torus
/// lengths per unit time), momenta, and displacements (torus lengths).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> VectorField {
        VectorField {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, cx: f64, cy: f64) -> VectorField {
        VectorField {
            grid,
            x: vec![cx; grid.len()],
            y: vec![cy; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> VectorField {
        let mut x = Vec::with_capacity(grid.len());
        let mut y = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny() {
            for ix in 0..grid.nx() {
                let (px, py) = grid.point(ix, iy);
                let (vx, vy) = f(px, py);
                x.push(vx);
                y.push(vy);
            }
        }
        VectorField { grid, x, y }
    }

    pub fn from_components(grid: Grid, x: Vec<f64>, y: Vec<f64>) -> Result<VectorField> {
        if x.len() != grid.len() || y.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "vector field component lengths {}/{} do not match grid {}x{}",
                x.len(),
                y.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector field components",
            });
        }
        Ok(VectorField { grid, x, y })
    }

    pub(crate) fn from_raw(grid: Grid, x: Vec<f64>, y: Vec<f64>) -> VectorField {
        debug_assert_eq!(x.len(), grid.len());
        debug_assert_eq!(y.len(), grid.len());
        VectorField { grid, x, y }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn x_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }

    #[inline]
    pub fn y_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }

    pub fn component(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.x,
            1 => &self.y,
            _ => panic!("vector component index {c} out of range"),
        }
    }

    /// L-infinity norm over both components.
    pub fn linf(&self) -> f64 {
        self.x
            .iter()
            .chain(self.y.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    /// In-place scaled accumulation: self += a * other.
    pub fn axpy_in_place(&mut self, a: f64, other: &VectorField) -> Result<()> {
        self.grid.same_as(&other.grid)?;
        for (s, o) in self.x.iter_mut().zip(other.x.iter()) {
            *s += a * o;
        }
        for (s, o) in self.y.iter_mut().zip(other.y.iter()) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, a: f64) {
        for v in self.x.iter_mut().chain(self.y.iter_mut()) {
            *v *= a;
        }
    }
}

/// Deformation phi(x) = x + u(x) stored through its displacement u.
/// The displacement is kept unwrapped; sampling wraps periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    displacement: VectorField,
}

impl DeformationField {
    pub fn identity(grid: Grid) -> DeformationField {
        DeformationField {
            displacement: VectorField::zeros(grid),
        }
    }

    pub fn from_displacement(displacement: VectorField) -> DeformationField {
        DeformationField { displacement }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.displacement.grid()
    }

    #[inline]
    pub fn displacement(&self) -> &VectorField {
        &self.displacement
    }

    #[inline]
    pub fn displacement_mut(&mut self) -> &mut VectorField {
        &mut self.displacement
    }

    pub fn into_displacement(self) -> VectorField {
        self.displacement
    }

    pub fn is_identity(&self) -> bool {
        self.displacement
            .x()
            .iter()
            .chain(self.displacement.y().iter())
            .all(|&v| v == 0.0)
    }
}

/// a*x + y, componentwise.
pub fn field_axpy(a: f64, x: &VectorField, y: &VectorField) -> Result<VectorField> {
    x.grid().same_as(&y.grid())?;
    let xs: Vec<f64> = x
        .x()
        .iter()
        .zip(y.x().iter())
        .map(|(xv, yv)| a * xv + yv)
        .collect();
    let ys: Vec<f64> = x
        .y()
        .iter()
        .zip(y.y().iter())
        .map(|(xv, yv)| a * xv + yv)
        .collect();
    Ok(VectorField::from_raw(x.grid(), xs, ys))
}

/// Grid-weighted L2 pairing: sum of a(x).b(x) * hx * hy over all samples.
/// The quadrature weight makes the value converge under grid refinement.
pub fn inner_product(a: &VectorField, b: &VectorField) -> Result<f64> {
    a.grid().same_as(&b.grid())?;
    let mut acc = 0.0;
    for (av, bv) in a.x().iter().zip(b.x().iter()) {
        acc += av * bv;
    }
    for (av, bv) in a.y().iter().zip(b.y().iter()) {
        acc += av * bv;
    }
    Ok(acc * a.grid().cell_area())
}

/// Scalar analogue of [`inner_product`].
pub fn inner_product_scalar(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().same_as(&b.grid())?;
    let mut acc = 0.0;
    for (av, bv) in a.values().iter().zip(b.values().iter()) {
        acc += av * bv;
    }
    Ok(acc * a.grid().cell_area())
}

/// Max over samples and components of |a - b|.
pub fn linf_error(a: &VectorField, b: &VectorField) -> Result<f64> {
    a.grid().same_as(&b.grid())?;
    let mut m = 0.0f64;
    for (av, bv) in a.x().iter().zip(b.x().iter()) {
        m = m.max((av - bv).abs());
    }
    for (av, bv) in a.y().iter().zip(b.y().iter()) {
        m = m.max((av - bv).abs());
    }
    Ok(m)
}

/// Max over samples of |a - b| for scalar fields.
pub fn linf_error_scalar(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().same_as(&b.grid())?;
    let mut m = 0.0f64;
    for (av, bv) in a.values().iter().zip(b.values().iter()) {
        m = m.max((av - bv).abs());
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_field(grid: Grid, seed: u64) -> VectorField {
        let mut rng = Rng::new(seed);
        let x = (0..grid.len()).map(|_| rng.next_normal()).collect();
        let y = (0..grid.len()).map(|_| rng.next_normal()).collect();
        VectorField::from_raw(grid, x, y)
    }

    #[test]
    fn grid_rejects_odd_and_tiny() {
        assert!(Grid::new(3, 8).is_err());
        assert!(Grid::new(8, 7).is_err());
        assert!(Grid::new(2, 8).is_err());
        assert!(Grid::new(8, 8).is_ok());
    }

    #[test]
    fn axpy_identity_cases() {
        let grid = Grid::new(8, 8).unwrap();
        let x = random_field(grid, 1);
        let y = random_field(grid, 2);
        // a = 0 returns y
        let r = field_axpy(0.0, &x, &y).unwrap();
        assert_eq!(r, y);
        // a = 1 with y = 0 returns x
        let r = field_axpy(1.0, &x, &VectorField::zeros(grid)).unwrap();
        assert_eq!(r, x);
    }

    #[test]
    fn axpy_constant_arithmetic() {
        let grid = Grid::new(8, 8).unwrap();
        let x = VectorField::constant(grid, 1.0, 1.0);
        let y = VectorField::constant(grid, 3.0, 3.0);
        let r = field_axpy(2.0, &x, &y).unwrap();
        for i in 0..grid.len() {
            assert_eq!(r.x()[i], 5.0);
            assert_eq!(r.y()[i], 5.0);
        }
    }

    #[test]
    fn axpy_matches_naive_loop() {
        let grid = Grid::new(8, 8).unwrap();
        let x = random_field(grid, 3);
        let y = random_field(grid, 4);
        let a = -1.75;
        let r = field_axpy(a, &x, &y).unwrap();
        for iy in 0..8 {
            for ix in 0..8 {
                let i = grid.idx(ix, iy);
                assert_eq!(r.x()[i], a * x.x()[i] + y.x()[i]);
                assert_eq!(r.y()[i], a * x.y()[i] + y.y()[i]);
            }
        }
    }

    #[test]
    fn axpy_grid_mismatch_errors() {
        let a = VectorField::zeros(Grid::new(8, 8).unwrap());
        let b = VectorField::zeros(Grid::new(8, 10).unwrap());
        assert!(matches!(
            field_axpy(1.0, &a, &b),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn inner_product_zero_and_constant() {
        let grid = Grid::new(16, 16).unwrap();
        let z = VectorField::zeros(grid);
        assert_eq!(inner_product(&z, &z).unwrap(), 0.0);
        // constant (1,0): integral over the unit torus is 1
        let c = VectorField::constant(grid, 1.0, 0.0);
        assert!((inner_product(&c, &c).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inner_product_matches_double_loop() {
        let grid = Grid::new(8, 8).unwrap();
        let a = random_field(grid, 10);
        let b = random_field(grid, 11);
        let mut expect = 0.0;
        for iy in 0..8 {
            for ix in 0..8 {
                let i = grid.idx(ix, iy);
                expect += (a.x()[i] * b.x()[i] + a.y()[i] * b.y()[i]) * grid.cell_area();
            }
        }
        let got = inner_product(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
    }

    #[test]
    fn inner_product_symmetric_exactly() {
        let grid = Grid::new(8, 8).unwrap();
        let a = random_field(grid, 20);
        let b = random_field(grid, 21);
        assert_eq!(
            inner_product(&a, &b).unwrap(),
            inner_product(&b, &a).unwrap()
        );
    }

    #[test]
    fn inner_product_scales_linearly() {
        let grid = Grid::new(8, 8).unwrap();
        let a = random_field(grid, 30);
        let b = random_field(grid, 31);
        let s = 3.25;
        let scaled = field_axpy(s - 1.0, &a, &a).unwrap(); // a * s
        let lhs = inner_product(&scaled, &b).unwrap();
        let rhs = s * inner_product(&a, &b).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn linf_cases() {
        let grid = Grid::new(8, 8).unwrap();
        let a = random_field(grid, 40);
        assert_eq!(linf_error(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        for v in b.x_mut() {
            *v += 0.5;
        }
        assert!((linf_error(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        // brute-force oracle
        let c = random_field(grid, 41);
        let mut expect = 0.0f64;
        for i in 0..grid.len() {
            expect = expect.max((a.x()[i] - c.x()[i]).abs());
            expect = expect.max((a.y()[i] - c.y()[i]).abs());
        }
        assert_eq!(linf_error(&a, &c).unwrap(), expect);
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let grid = Grid::new(4, 4).unwrap();
        let mut vals = vec![0.0; 16];
        vals[3] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(grid, vals),
            Err(Error::NonFinite { .. })
        ));
    }
}
