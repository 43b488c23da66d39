//! Trained-model checkpoint ("IGGC", version 1).
//!
//! Layout: magic, format version u16, section count u16, then a section
//! table of (id u16, offset u64, len u64) entries followed by the
//! payloads. Offsets are absolute. All numbers little-endian; floats are
//! 64-bit and stored bit-exactly, so save/load roundtrips are identity.
//!
//! Sections:
//!   1 model config: nx, ny, bandlimit, steps (u32 each), operator
//!     alpha f64, operator power u32
//!   2 noise schedule: T u32, then T betas f64
//!   3 denoiser: latent_dim u32, layer count u32, input skip gain f64,
//!     per layer (in u32, out u32, W row-major f64s, b f64s)
//!   4 latent normalizer: dim u32, mean f64s, std f64s
//!   5 train state: global step u64, adam step u64, skip-gain moments
//!     (2 f64), then adam first and second moments in layer order
//!
//! A checkpoint with a different version is refused outright.

use std::fs;
use std::path::Path;

use morphgen_core::diffusion::{AdamState, DenoiserParams, Layer, NoiseSchedule, Normalizer};
use morphgen_core::field::Grid;
use morphgen_core::latent::LatentConfig;
use morphgen_core::spectral::OperatorConfig;

use crate::error::{CliError, Result};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"IGGC";
const VERSION: u16 = 1;

const SEC_MODEL: u16 = 1;
const SEC_SCHEDULE: u16 = 2;
const SEC_DENOISER: u16 = 3;
const SEC_NORMALIZER: u16 = 4;
const SEC_TRAIN: u16 = 5;

/// Everything a trained model needs to sample (and to resume training).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub latent: LatentConfig,
    /// Geodesic time steps N_t.
    pub steps: usize,
    pub operator: OperatorConfig,
    pub schedule: NoiseSchedule,
    pub params: DenoiserParams,
    pub normalizer: Normalizer,
    pub trained_steps: u64,
    pub adam: AdamState,
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    // payloads first
    let mut model = Writer::new();
    model.u32(ck.latent.grid().nx() as u32);
    model.u32(ck.latent.grid().ny() as u32);
    model.u32(ck.latent.bandlimit() as u32);
    model.u32(ck.steps as u32);
    model.f64(ck.operator.alpha);
    model.u32(ck.operator.power);

    let mut sched = Writer::new();
    sched.u32(ck.schedule.t() as u32);
    sched.f64_slice(ck.schedule.betas());

    let mut den = Writer::new();
    den.u32(ck.params.latent_dim as u32);
    den.u32(ck.params.layers.len() as u32);
    den.f64(ck.params.skip_gain);
    for layer in &ck.params.layers {
        den.u32(layer.in_dim as u32);
        den.u32(layer.out_dim as u32);
        den.f64_slice(&layer.w);
        den.f64_slice(&layer.b);
    }

    let mut norm = Writer::new();
    norm.u32(ck.normalizer.dim() as u32);
    norm.f64_slice(ck.normalizer.mean());
    norm.f64_slice(ck.normalizer.std());

    let mut train = Writer::new();
    train.u64(ck.trained_steps);
    train.u64(ck.adam.t);
    train.f64(ck.adam.skip_m);
    train.f64(ck.adam.skip_v);
    for moments in [&ck.adam.m, &ck.adam.v] {
        for (mw, mb) in moments {
            train.f64_slice(mw);
            train.f64_slice(mb);
        }
    }

    let sections: [(u16, Vec<u8>); 5] = [
        (SEC_MODEL, model.buf),
        (SEC_SCHEDULE, sched.buf),
        (SEC_DENOISER, den.buf),
        (SEC_NORMALIZER, norm.buf),
        (SEC_TRAIN, train.buf),
    ];

    let mut out = Writer::new();
    out.magic(MAGIC);
    out.u16(VERSION);
    out.u16(sections.len() as u16);
    let table_start = out.buf.len();
    let header_len = table_start + sections.len() * 18;
    let mut offset = header_len as u64;
    for (id, payload) in &sections {
        out.u16(*id);
        out.u64(offset);
        out.u64(payload.len() as u64);
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        out.buf.extend_from_slice(payload);
    }
    fs::write(path, out.buf).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let context = path.display().to_string();
    let mut r = Reader::new(&bytes, &context);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "{context}: checkpoint format version {version} is not supported \
             (this build reads version {VERSION}); refusing to load"
        )));
    }
    let n_sections = r.u16()? as usize;
    let mut table = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let id = r.u16()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        table.push((id, offset, len));
    }
    let section = |id: u16| -> Result<(usize, usize)> {
        table
            .iter()
            .find(|(sid, _, _)| *sid == id)
            .map(|&(_, off, len)| (off, len))
            .ok_or_else(|| CliError::Data(format!("{context}: missing checkpoint section {id}")))
    };

    // model config
    let (off, _) = section(SEC_MODEL)?;
    r.seek(off)?;
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let bandlimit = r.u32()? as usize;
    let steps = r.u32()? as usize;
    let alpha = r.f64()?;
    let power = r.u32()?;
    let grid = Grid::new(nx, ny).map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    let latent =
        LatentConfig::new(grid, bandlimit).map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    let operator = OperatorConfig::with_power(alpha, power)
        .map_err(|e| CliError::Data(format!("{context}: {e}")))?;

    // schedule: stored betas are reconstructed exactly
    let (off, _) = section(SEC_SCHEDULE)?;
    r.seek(off)?;
    let t = r.u32()? as usize;
    let betas = r.f64_vec(t)?;
    if t == 0 {
        return Err(CliError::Data(format!("{context}: empty noise schedule")));
    }
    let schedule = NoiseSchedule::linear(t, betas[0], betas[t - 1])
        .map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    // the linear ramp must reproduce the stored table bit-exactly
    if schedule.betas() != betas.as_slice() {
        return Err(CliError::Data(format!(
            "{context}: schedule table is not the linear ramp this build produces"
        )));
    }

    // denoiser
    let (off, _) = section(SEC_DENOISER)?;
    r.seek(off)?;
    let latent_dim = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let skip_gain = r.f64()?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let w = r.f64_vec(in_dim * out_dim)?;
        let b = r.f64_vec(out_dim)?;
        layers.push(Layer {
            w,
            b,
            in_dim,
            out_dim,
        });
    }
    let params = DenoiserParams {
        layers,
        latent_dim,
        skip_gain,
        alpha_bar: (1..=schedule.t()).map(|tau| schedule.alpha_bar(tau)).collect(),
    };

    // normalizer
    let (off, _) = section(SEC_NORMALIZER)?;
    r.seek(off)?;
    let dim = r.u32()? as usize;
    let mean = r.f64_vec(dim)?;
    let std = r.f64_vec(dim)?;
    let normalizer = Normalizer::from_parts(mean, std)
        .map_err(|e| CliError::Data(format!("{context}: {e}")))?;

    // train state
    let (off, _) = section(SEC_TRAIN)?;
    r.seek(off)?;
    let trained_steps = r.u64()?;
    let adam_t = r.u64()?;
    let skip_m = r.f64()?;
    let skip_v = r.f64()?;
    let read_moments = |r: &mut Reader| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        params
            .layers
            .iter()
            .map(|l| Ok((r.f64_vec(l.w.len())?, r.f64_vec(l.b.len())?)))
            .collect()
    };
    let m = read_moments(&mut r)?;
    let v = read_moments(&mut r)?;
    let adam = AdamState {
        m,
        v,
        skip_m,
        skip_v,
        t: adam_t,
    };

    Ok(Checkpoint {
        latent,
        steps,
        operator,
        schedule,
        params,
        normalizer,
        trained_steps,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use morphgen_core::rng::Rng;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("morphgen-checkpoint-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_checkpoint() -> Checkpoint {
        let grid = Grid::new(16, 16).unwrap();
        let latent = LatentConfig::new(grid, 2).unwrap();
        let steps = 3;
        let flat = (steps + 1) * latent.latent_dim();
        let mut rng = Rng::new(5);
        let schedule = NoiseSchedule::linear(40, 1e-4, 0.02).unwrap();
        let mut params = DenoiserParams::init(flat, &[10, 10], &schedule, &mut rng).unwrap();
        params.skip_gain = 0.85;
        let mut adam = AdamState::new(&params);
        adam.t = 17;
        adam.skip_m = 0.01;
        adam.skip_v = 1e-5;
        adam.m[0].0[3] = 0.25;
        adam.v[1].1[2] = 1e-9;
        let mean: Vec<f64> = (0..flat).map(|_| rng.next_normal()).collect();
        let std: Vec<f64> = (0..flat).map(|_| rng.next_f64() + 0.1).collect();
        Checkpoint {
            latent,
            steps,
            operator: OperatorConfig::new(3.0).unwrap(),
            schedule,
            params,
            normalizer: Normalizer::from_parts(mean, std).unwrap(),
            trained_steps: 123,
            adam,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample_checkpoint();
        let path = tmp("roundtrip.iggc");
        save(&ck, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(ck, back);
        // a second save produces identical bytes
        let path2 = tmp("roundtrip2.iggc");
        save(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn version_mismatch_is_refused_with_message() {
        let ck = sample_checkpoint();
        let path = tmp("version.iggc");
        save(&ck, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9; // version low byte
        fs::write(&path, &bytes).unwrap();
        let msg = load(&path).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
        assert!(msg.contains("refusing"), "{msg}");
    }

    #[test]
    fn truncated_checkpoint_errors() {
        let ck = sample_checkpoint();
        let path = tmp("short.iggc");
        save(&ck, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&path).is_err());
    }
}
