//! Binary containers for vector-field sequences and latent trajectories.
//!
//! Velocity / displacement sequences ("IGGV", version 1):
//!   magic, version u16, kind u8 (0 velocity, 1 displacement), pad u8,
//!   nx u32, ny u32, count u32, then count fields, each stored as the
//!   full x component plane followed by the y plane, f64 little-endian
//!   in row-major order (x fastest).
//!
//! Latent trajectories ("IGGL", version 1):
//!   magic, version u16, pad u16, nx u32, ny u32, bandlimit u32,
//!   steps u32, alpha f64, then (steps+1) * latent_dim coefficients in
//!   the latent module's canonical packing, time-major.

use std::fs;
use std::path::Path;

use morphgen_core::field::{DeformationField, Grid, VectorField};
use morphgen_core::latent::{LatentConfig, LatentGeodesic};
use morphgen_core::spectral::OperatorConfig;

use crate::error::{CliError, Result};
use crate::wire::{Reader, Writer};

const FIELD_MAGIC: &[u8; 4] = b"IGGV";
const LATENT_MAGIC: &[u8; 4] = b"IGGL";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Velocity,
    Displacement,
}

pub fn write_fields(fields: &[VectorField], kind: FieldKind, path: &Path) -> Result<()> {
    let grid = fields
        .first()
        .ok_or_else(|| CliError::Data("cannot write an empty field sequence".into()))?
        .grid();
    let mut w = Writer::new();
    w.magic(FIELD_MAGIC);
    w.u16(VERSION);
    w.u8(match kind {
        FieldKind::Velocity => 0,
        FieldKind::Displacement => 1,
    });
    w.u8(0);
    w.u32(grid.nx() as u32);
    w.u32(grid.ny() as u32);
    w.u32(fields.len() as u32);
    for f in fields {
        w.f64_slice(f.x());
        w.f64_slice(f.y());
    }
    fs::write(path, w.buf).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn read_fields(path: &Path) -> Result<(Vec<VectorField>, FieldKind)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let context = path.display().to_string();
    let mut r = Reader::new(&bytes, &context);
    r.magic(FIELD_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "{context}: field container version {version} unsupported (this build reads {VERSION})"
        )));
    }
    let kind = match r.u8()? {
        0 => FieldKind::Velocity,
        1 => FieldKind::Displacement,
        other => return Err(CliError::Data(format!("{context}: unknown field kind {other}"))),
    };
    let _pad = r.u8()?;
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let count = r.u32()? as usize;
    let grid = Grid::new(nx, ny).map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.f64_vec(grid.len())?;
        let y = r.f64_vec(grid.len())?;
        fields.push(
            VectorField::from_components(grid, x, y)
                .map_err(|e| CliError::Data(format!("{context}: {e}")))?,
        );
    }
    Ok((fields, kind))
}

/// Convenience: a single initial velocity.
pub fn read_velocity(path: &Path) -> Result<VectorField> {
    let (mut fields, kind) = read_fields(path)?;
    if kind != FieldKind::Velocity {
        return Err(CliError::Data(format!(
            "{}: expected a velocity container",
            path.display()
        )));
    }
    if fields.len() != 1 {
        return Err(CliError::Data(format!(
            "{}: expected exactly one field, found {}",
            path.display(),
            fields.len()
        )));
    }
    Ok(fields.pop().expect("length checked"))
}

pub fn write_deformations(phis: &[DeformationField], path: &Path) -> Result<()> {
    let fields: Vec<VectorField> = phis.iter().map(|p| p.displacement().clone()).collect();
    write_fields(&fields, FieldKind::Displacement, path)
}

/// Latent trajectory with the context needed to reproduce it: grid,
/// bandlimit, step count and the metric operator's alpha.
pub fn write_latent(
    latent: &LatentGeodesic,
    operator: &OperatorConfig,
    path: &Path,
) -> Result<()> {
    let cfg = latent.config();
    let mut w = Writer::new();
    w.magic(LATENT_MAGIC);
    w.u16(VERSION);
    w.u16(0);
    w.u32(cfg.grid().nx() as u32);
    w.u32(cfg.grid().ny() as u32);
    w.u32(cfg.bandlimit() as u32);
    w.u32(latent.steps() as u32);
    w.f64(operator.alpha);
    w.f64_slice(&latent.flatten());
    fs::write(path, w.buf).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn read_latent(path: &Path) -> Result<(LatentGeodesic, OperatorConfig)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let context = path.display().to_string();
    let mut r = Reader::new(&bytes, &context);
    r.magic(LATENT_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "{context}: latent container version {version} unsupported (this build reads {VERSION})"
        )));
    }
    let _pad = r.u16()?;
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let bandlimit = r.u32()? as usize;
    let steps = r.u32()? as usize;
    let alpha = r.f64()?;
    let grid = Grid::new(nx, ny).map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    let cfg =
        LatentConfig::new(grid, bandlimit).map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    let data = r.f64_vec((steps + 1) * cfg.latent_dim())?;
    let latent = LatentGeodesic::unflatten(cfg, steps, &data)
        .map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    let operator =
        OperatorConfig::new(alpha).map_err(|e| CliError::Data(format!("{context}: {e}")))?;
    Ok((latent, operator))
}
