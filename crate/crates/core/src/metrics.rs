//! Evaluation metrics: SSIM, DetJac statistics, and pixel-wise
//! confidence maps over sample ensembles.

use crate::error::{Error, Result};
use crate::field::{DeformationField, ScalarField};
use crate::flow::det_jacobian;

pub use crate::latent::geodesic_mae_curve as velocity_mae_curve;

const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01; // (0.01 * L)^2, L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_intensities(img: &ScalarField, what: &'static str) -> Result<()> {
    let (min, max) = (img.min(), img.max());
    if min < -1e-9 || max > 1.0 + 1e-9 {
        return Err(Error::NotNormalized { what, min, max });
    }
    Ok(())
}

/// Structural similarity with an 8x8 sliding window, stride 1 and
/// periodic wrap, averaged over all windows. Inputs must be normalized
/// to [0, 1]; the result lies in [-1, 1] and is symmetric in (a, b).
pub fn ssim(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().same_as(&b.grid())?;
    check_intensities(a, "ssim input a")?;
    check_intensities(b, "ssim input b")?;
    let grid = a.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let inv_n = 1.0 / (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut acc = 0.0;
    for wy in 0..ny {
        for wx in 0..nx {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let iy = (wy + dy) % ny;
                for dx in 0..SSIM_WINDOW {
                    let ix = (wx + dx) % nx;
                    let va = a.at(ix, iy);
                    let vb = b.at(ix, iy);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let mu_a = sa * inv_n;
            let mu_b = sb * inv_n;
            let var_a = saa * inv_n - mu_a * mu_a;
            let var_b = sbb * inv_n - mu_b * mu_b;
            let cov = sab * inv_n - mu_a * mu_b;
            acc += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
        }
    }
    Ok(acc / (nx * ny) as f64)
}

/// Summary statistics of a DetJac map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetJacStats {
    pub min: f64,
    pub mean: f64,
    /// Fraction of pixels with a negative determinant (folding).
    pub negative_fraction: f64,
}

/// Statistics of det D(phi) over the grid.
pub fn detjac_stats(phi: &DeformationField) -> DetJacStats {
    let dj = det_jacobian(phi);
    let values = dj.values();
    let negative = values.iter().filter(|&&d| d < 0.0).count();
    DetJacStats {
        min: dj.min(),
        mean: dj.mean(),
        negative_fraction: negative as f64 / values.len() as f64,
    }
}

/// Pixel-wise ensemble mean with +-2 standard deviation bounds.
#[derive(Debug, Clone)]
pub struct ConfidenceMaps {
    pub mean: ScalarField,
    pub lower: ScalarField,
    pub upper: ScalarField,
    pub ci_width: ScalarField,
    pub sample_count: usize,
}

/// Mean and mean +- 2 sd maps of an ensemble (unbiased n-1 deviation).
pub fn confidence_maps(samples: &[ScalarField]) -> Result<ConfidenceMaps> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let grid = samples[0].grid();
    for s in &samples[1..] {
        grid.same_as(&s.grid())?;
    }
    let n = samples.len() as f64;
    let len = grid.len();
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; len];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(&mean) {
            let d = v - m;
            *acc += d * d;
        }
    }
    let mut lower = vec![0.0; len];
    let mut upper = vec![0.0; len];
    let mut width = vec![0.0; len];
    for i in 0..len {
        let sd = (var[i] / (n - 1.0)).sqrt();
        lower[i] = mean[i] - 2.0 * sd;
        upper[i] = mean[i] + 2.0 * sd;
        width[i] = upper[i] - lower[i];
    }
    Ok(ConfidenceMaps {
        mean: ScalarField::from_raw(grid, mean),
        lower: ScalarField::from_raw(grid, lower),
        upper: ScalarField::from_raw(grid, upper),
        ci_width: ScalarField::from_raw(grid, width),
        sample_count: samples.len(),
    })
}
