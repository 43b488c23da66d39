//! Conditioning inputs for the denoiser.
//!
//! Three embeddings are concatenated with the latent state: the template
//! image gradient, average-pooled to 16x16 per component (512 values);
//! a hashed bag-of-tokens text embedding (64 values, L2-normalized
//! counts); and a sinusoidal embedding of the diffusion step (64 values).
//! Null flags zero the image/text parts at use sites, which is how the
//! unconditional model is trained and queried.

use crate::field::ScalarField;
use crate::spectral::gradient;

pub const IMAGE_EMBED_DIM: usize = 512;
pub const TEXT_EMBED_DIM: usize = 64;
pub const TIME_EMBED_DIM: usize = 64;
const POOL_SIDE: usize = 16;

/// Image and text conditioning with classifier-free null flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub image_embed: Vec<f64>,
    pub text_embed: Vec<f64>,
    pub image_null: bool,
    pub text_null: bool,
}

impl Condition {
    /// The fully-null condition used by the unconditional model.
    pub fn null() -> Condition {
        Condition {
            image_embed: vec![0.0; IMAGE_EMBED_DIM],
            text_embed: vec![0.0; TEXT_EMBED_DIM],
            image_null: true,
            text_null: true,
        }
    }

    /// Build both embeddings from a template image and an instruction.
    pub fn for_template(template: &ScalarField, text: &str) -> Condition {
        Condition {
            image_embed: image_embedding(template),
            text_embed: text_embedding(text),
            image_null: false,
            text_null: false,
        }
    }

    pub fn with_image_null(&self) -> Condition {
        let mut c = self.clone();
        c.image_null = true;
        c
    }

    pub fn with_text_null(&self) -> Condition {
        let mut c = self.clone();
        c.text_null = true;
        c
    }

    /// Image embedding with the null flag applied.
    pub fn effective_image(&self) -> Vec<f64> {
        if self.image_null {
            vec![0.0; IMAGE_EMBED_DIM]
        } else {
            self.image_embed.clone()
        }
    }

    /// Text embedding with the null flag applied.
    pub fn effective_text(&self) -> Vec<f64> {
        if self.text_null {
            vec![0.0; TEXT_EMBED_DIM]
        } else {
            self.text_embed.clone()
        }
    }
}

/// Adaptive average pooling of one channel to POOL_SIDE x POOL_SIDE.
fn adaptive_pool(values: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(POOL_SIDE * POOL_SIDE);
    for oy in 0..POOL_SIDE {
        let y0 = oy * ny / POOL_SIDE;
        let y1 = ((oy + 1) * ny).div_ceil(POOL_SIDE);
        for ox in 0..POOL_SIDE {
            let x0 = ox * nx / POOL_SIDE;
            let x1 = ((ox + 1) * nx).div_ceil(POOL_SIDE);
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += values[y * nx + x];
                }
            }
            out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Template gradient embedding: central-difference gradient of the image,
/// each component average-pooled to 16x16 and flattened, x part first.
pub fn image_embedding(template: &ScalarField) -> Vec<f64> {
    let g = gradient(template);
    let grid = template.grid();
    let mut out = adaptive_pool(g.x(), grid.nx(), grid.ny());
    out.extend(adaptive_pool(g.y(), grid.nx(), grid.ny()));
    debug_assert_eq!(out.len(), IMAGE_EMBED_DIM);
    out
}

fn fnv1a(token: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in token.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

/// Hashed bag-of-tokens embedding: lowercase whitespace tokens hashed to
/// 64 buckets, counts L2-normalized.
pub fn text_embedding(text: &str) -> Vec<f64> {
    let mut counts = vec![0.0f64; TEXT_EMBED_DIM];
    for token in text.to_lowercase().split_whitespace() {
        let bucket = (fnv1a(token) % TEXT_EMBED_DIM as u64) as usize;
        counts[bucket] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for c in &mut counts {
            *c /= norm;
        }
    }
    counts
}

/// Sinusoidal embedding of the diffusion step index.
pub fn time_embedding(tau: usize) -> Vec<f64> {
    let half = TIME_EMBED_DIM / 2;
    let mut out = Vec::with_capacity(TIME_EMBED_DIM);
    let t = tau as f64;
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / (half - 1) as f64);
        out.push((t * freq).sin());
        out.push((t * freq).cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    #[test]
    fn image_embedding_dims_and_constants() {
        for (nx, ny) in [(32, 32), (16, 16), (8, 8), (48, 32)] {
            let grid = Grid::new(nx, ny).unwrap();
            let e = image_embedding(&ScalarField::constant(grid, 0.4));
            assert_eq!(e.len(), IMAGE_EMBED_DIM);
            // gradient of a constant is zero
            assert!(e.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let grid = Grid::new(32, 32).unwrap();
        let img = ScalarField::from_fn(grid, |x, _| x);
        let e = image_embedding(&img);
        // d/dx of a sawtooth is constant except at the two seam columns,
        // which pool into the first and last output columns
        let gx = &e[..256];
        for row in gx.chunks_exact(16) {
            for &v in &row[1..15] {
                assert!((v - 1.0).abs() < 1e-9, "interior gradient {v}");
            }
        }
    }

    #[test]
    fn text_embedding_is_normalized_and_deterministic() {
        let a = text_embedding("lobes: 2; growth: 10 percent per step; direction: 45 degrees");
        let b = text_embedding("lobes: 2; growth: 10 percent per step; direction: 45 degrees");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(text_embedding(""), vec![0.0; TEXT_EMBED_DIM]);
        // case-insensitive
        assert_eq!(text_embedding("Hello World"), text_embedding("hello world"));
        // different text, different embedding
        assert_ne!(a, text_embedding("lobes: 3; growth: 10 percent per step"));
    }

    #[test]
    fn time_embedding_shape_and_range() {
        for tau in [1usize, 7, 500] {
            let e = time_embedding(tau);
            assert_eq!(e.len(), TIME_EMBED_DIM);
            assert!(e.iter().all(|v| v.abs() <= 1.0));
        }
        assert_ne!(time_embedding(3), time_embedding(4));
    }

    #[test]
    fn null_flags_zero_embeddings() {
        let grid = Grid::new(16, 16).unwrap();
        let img = ScalarField::from_fn(grid, |x, y| 0.5 + 0.3 * (x - y));
        let c = Condition::for_template(&img, "grow fast");
        assert!(c.effective_image().iter().any(|&v| v != 0.0));
        assert!(c.with_image_null().effective_image().iter().all(|&v| v == 0.0));
        assert!(c.with_text_null().effective_text().iter().all(|&v| v == 0.0));
    }
}
