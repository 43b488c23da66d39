//! Synthetic growing-shape sequences.
//!
//! Each sequence shows 1-3 soft-edged elliptical lobes arranged around a
//! jittered centre, with radii growing linearly by g percent of the
//! initial radius per frame, g drawn from {5, 10, ..., 30}. The paired
//! instruction "lobes: <k>; growth: <g> percent per step; direction:
//! <angle> degrees" captures everything the drawing depends on besides
//! per-lobe jitter. The direction grid {8, 48, ..., 328} degrees is
//! chosen so that all value tokens land in distinct buckets of the
//! 64-bucket hashed text embedding (no two instructions alias).

use std::fs;
use std::path::Path;

use morphgen_core::field::{Grid, ScalarField};
use morphgen_core::rng::{derive_seed, Rng};

use crate::error::{CliError, Result};
use crate::pgm::pgm_write;

pub const SEED_TAG_DATA: u64 = 0x6461_7461; // "data"

const GROWTH_CHOICES: [u32; 6] = [5, 10, 15, 20, 25, 30];
const DIRECTION_CHOICES: [u32; 9] = [8, 48, 88, 128, 168, 208, 248, 288, 328];
/// Absolute soft-edge width (torus units).
const EDGE_WIDTH: f64 = 0.022;

/// One lobe: centre offset from the arrangement centre, radii, rotation.
#[derive(Debug, Clone)]
struct Lobe {
    cx: f64,
    cy: f64,
    major: f64,
    minor: f64,
    cos_rot: f64,
    sin_rot: f64,
    amplitude: f64,
}

/// Everything that defines one generated sequence.
#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub lobes: u32,
    pub growth_pct: u32,
    pub direction_deg: u32,
    shapes: Vec<Lobe>,
}

impl SequenceSpec {
    /// The paired text instruction.
    pub fn text(&self) -> String {
        format!(
            "lobes: {}; growth: {} percent per step; direction: {} degrees",
            self.lobes, self.growth_pct, self.direction_deg
        )
    }

    /// Radius scale factor of frame j: linear growth at growth_pct
    /// percent of the initial radius per frame.
    pub fn scale_at(&self, frame: usize) -> f64 {
        1.0 + self.growth_pct as f64 / 100.0 * frame as f64
    }
}

/// Draw a sequence description. The draw order is part of the format:
/// changing it changes every dataset.
pub fn draw_spec(rng: &mut Rng) -> SequenceSpec {
    let lobes = rng.next_in(1, 3) as u32;
    let growth_pct = GROWTH_CHOICES[rng.next_below(GROWTH_CHOICES.len())];
    let direction_deg = DIRECTION_CHOICES[rng.next_below(DIRECTION_CHOICES.len())];
    let cx = 0.5 + 0.08 * (rng.next_f64() - 0.5);
    let cy = 0.5 + 0.08 * (rng.next_f64() - 0.5);
    let base_angle = (direction_deg as f64).to_radians();
    let spread = std::f64::consts::TAU / lobes as f64;
    let mut shapes = Vec::with_capacity(lobes as usize);
    for j in 0..lobes {
        let major = 0.045 + 0.015 * rng.next_f64();
        let minor = major * (0.7 + 0.3 * rng.next_f64());
        let amplitude = 0.85 + 0.10 * rng.next_f64();
        let angle = base_angle + j as f64 * spread + 0.08 * (rng.next_f64() - 0.5);
        let distance = if lobes == 1 {
            0.0
        } else {
            0.13 * (0.9 + 0.2 * rng.next_f64())
        };
        shapes.push(Lobe {
            cx: cx + distance * angle.cos(),
            cy: cy + distance * angle.sin(),
            major,
            minor,
            cos_rot: angle.cos(),
            sin_rot: angle.sin(),
            amplitude,
        });
    }
    SequenceSpec {
        lobes,
        growth_pct,
        direction_deg,
        shapes,
    }
}

#[inline]
fn torus_delta(d: f64) -> f64 {
    d - d.round()
}

/// Render one frame: probabilistic union of per-lobe soft profiles.
pub fn render_frame(spec: &SequenceSpec, grid: Grid, frame: usize) -> ScalarField {
    let scale = spec.scale_at(frame);
    ScalarField::from_fn(grid, |x, y| {
        let mut transparency = 1.0;
        for lobe in &spec.shapes {
            let dx = torus_delta(x - lobe.cx);
            let dy = torus_delta(y - lobe.cy);
            let u = dx * lobe.cos_rot + dy * lobe.sin_rot;
            let v = -dx * lobe.sin_rot + dy * lobe.cos_rot;
            let a = lobe.major * scale;
            let b = lobe.minor * scale;
            let rho = ((u / a) * (u / a) + (v / b) * (v / b)).sqrt();
            // signed distance to the boundary, roughly
            let s = (rho - 1.0) * a.min(b);
            let c = lobe.amplitude / (1.0 + (s / EDGE_WIDTH).exp());
            transparency *= 1.0 - c;
        }
        (1.0 - transparency).clamp(0.0, 1.0)
    })
}

/// Render the whole sequence: frames 0..=steps.
pub fn render_sequence(spec: &SequenceSpec, grid: Grid, steps: usize) -> Vec<ScalarField> {
    (0..=steps).map(|j| render_frame(spec, grid, j)).collect()
}

/// Spec of the i-th sequence under a master seed.
pub fn sequence_spec(master_seed: u64, index: usize) -> SequenceSpec {
    let seq_seed = derive_seed(derive_seed(master_seed, SEED_TAG_DATA), index as u64);
    draw_spec(&mut Rng::new(seq_seed))
}

/// Write `count` sequences under `out_dir/seq_NNN/`.
pub fn generate_dataset(
    grid: Grid,
    steps: usize,
    count: usize,
    master_seed: u64,
    out_dir: &Path,
) -> Result<()> {
    for i in 0..count {
        let spec = sequence_spec(master_seed, i);
        let seq_dir = out_dir.join(format!("seq_{i:03}"));
        fs::create_dir_all(&seq_dir)
            .map_err(|e| CliError::io(seq_dir.display().to_string(), e))?;
        for (j, frame) in render_sequence(&spec, grid, steps).iter().enumerate() {
            pgm_write(frame, &seq_dir.join(format!("frame_{j:02}.pgm")))?;
        }
        let text_path = seq_dir.join("text.txt");
        fs::write(&text_path, spec.text())
            .map_err(|e| CliError::io(text_path.display().to_string(), e))?;
    }
    Ok(())
}

/// A stored sequence: first frame, last frame, instruction.
#[derive(Debug, Clone)]
pub struct SequencePair {
    pub template: ScalarField,
    pub target: ScalarField,
    pub text: String,
    pub dir: std::path::PathBuf,
}

/// Load the (first frame, last frame, text) pairs of a dataset directory.
pub fn load_dataset(data_dir: &Path, steps: usize) -> Result<Vec<SequencePair>> {
    let mut seq_dirs: Vec<_> = fs::read_dir(data_dir)
        .map_err(|e| CliError::io(data_dir.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("seq_"))
                    .unwrap_or(false)
        })
        .collect();
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no seq_* directories found",
            data_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(seq_dirs.len());
    for dir in seq_dirs {
        let template = crate::pgm::pgm_read(&dir.join("frame_00.pgm"))?;
        let target = crate::pgm::pgm_read(&dir.join(format!("frame_{steps:02}.pgm")))?;
        let text_path = dir.join("text.txt");
        let text = fs::read_to_string(&text_path)
            .map_err(|e| CliError::io(text_path.display().to_string(), e))?
            .trim()
            .to_string();
        pairs.push(SequencePair {
            template,
            target,
            text,
            dir,
        });
    }
    Ok(pairs)
}
