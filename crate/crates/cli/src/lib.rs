//! Command-line front end for the geodesic deformation toolkit.
//!
//! Subcommands: shoot | register | gen-data | train | sample | metrics
//! | confidence. Configuration comes from an optional `--config` file of
//! `key = value` lines; any key can also be set directly as a
//! `--<key> <value>` flag, which overrides the file. Exit codes: 0
//! success, 2 usage error, 3 data error, 4 numeric divergence.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fieldio;
pub mod gendata;
pub mod pgm;
pub mod wire;

use std::path::PathBuf;

use morphgen_core::diffusion::GuidanceConfig;

use crate::commands::SampleOptions;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const USAGE: &str = "\
morphgen - deformation-space image generation toolkit

usage: morphgen <command> [options]

commands:
  shoot       --v0 FILE [--template IMG.pgm] --out DIR
              integrate the geodesic of a stored initial velocity
  register    SOURCE.pgm TARGET.pgm --out DIR
              optimize an initial velocity matching source to target
  gen-data    --out DIR
              generate the synthetic growing-shape dataset
  train       --data DIR --out DIR [--resume CKPT]
              register every sequence, then train the latent diffusion model
  sample      --checkpoint CKPT --template IMG.pgm --text STR --out DIR
              [--pure-conditional]
              sample one deformation and write its manifest
  metrics     DIR [--reference IMG.pgm] [--out FILE]
              recompute DetJac / SSIM / velocity-error metrics for manifests
  confidence  DIR --out DIR
              pixel-wise mean and +-2 sd maps over a directory of manifests

common options:
  --config PATH        key = value configuration file
  --<key> VALUE        override any config key (e.g. --seed 7 --alpha 2.0)
  --delta-i X          image guidance scale (config key delta_i)
  --delta-t X          text guidance scale (config key delta_t)
";

/// Parsed invocation.
struct Invocation {
    config: RunConfig,
    positional: Vec<String>,
    out: Option<PathBuf>,
    v0: Option<PathBuf>,
    template: Option<PathBuf>,
    data: Option<PathBuf>,
    resume: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    reference: Option<PathBuf>,
    text: Option<String>,
    pure_conditional: bool,
}

fn parse_invocation(args: &[String]) -> Result<Invocation> {
    // config file first, regardless of flag order
    let mut config = RunConfig::default();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            let path = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
            config = RunConfig::load(PathBuf::from(path).as_path())?;
        }
        i += 1;
    }

    let mut inv = Invocation {
        config,
        positional: Vec::new(),
        out: None,
        v0: None,
        template: None,
        data: None,
        resume: None,
        checkpoint: None,
        reference: None,
        text: None,
        pure_conditional: false,
    };

    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if let Some(flag) = arg.strip_prefix("--") {
            if flag == "pure-conditional" {
                inv.pure_conditional = true;
                i += 1;
                continue;
            }
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?
                .clone();
            match flag {
                "config" => {} // handled above
                "out" => inv.out = Some(PathBuf::from(&value)),
                "v0" => inv.v0 = Some(PathBuf::from(&value)),
                "template" => inv.template = Some(PathBuf::from(&value)),
                "data" => inv.data = Some(PathBuf::from(&value)),
                "resume" => inv.resume = Some(PathBuf::from(&value)),
                "checkpoint" => inv.checkpoint = Some(PathBuf::from(&value)),
                "reference" => inv.reference = Some(PathBuf::from(&value)),
                "text" => inv.text = Some(value.clone()),
                other => {
                    // config-key override; dashes map to underscores
                    let key = other.replace('-', "_");
                    inv.config
                        .set(&key, &value)
                        .map_err(|e| CliError::Usage(format!("--{other}: {e}")))?;
                }
            }
            i += 2;
        } else {
            inv.positional.push(arg.clone());
            i += 1;
        }
    }
    inv.config.validate()?;
    Ok(inv)
}

fn required<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required {what}")))
}

/// Entry point shared by the binary and the integration tests.
pub fn run(args: &[String]) -> Result<()> {
    let command = args
        .first()
        .ok_or_else(|| CliError::Usage("no command given".into()))?;
    let rest = &args[1..];
    match command.as_str() {
        "shoot" => {
            let inv = parse_invocation(rest)?;
            let v0 = required(inv.v0, "--v0 FILE")?;
            let out = required(inv.out, "--out DIR")?;
            commands::cmd_shoot(&inv.config, &v0, inv.template.as_deref(), &out)
        }
        "register" => {
            let inv = parse_invocation(rest)?;
            if inv.positional.len() != 2 {
                return Err(CliError::Usage(
                    "register needs SOURCE.pgm and TARGET.pgm".into(),
                ));
            }
            let out = required(inv.out, "--out DIR")?;
            commands::cmd_register(
                &inv.config,
                PathBuf::from(&inv.positional[0]).as_path(),
                PathBuf::from(&inv.positional[1]).as_path(),
                &out,
            )
        }
        "gen-data" => {
            let inv = parse_invocation(rest)?;
            let out = required(inv.out, "--out DIR")?;
            commands::cmd_gen_data(&inv.config, &out)
        }
        "train" => {
            let inv = parse_invocation(rest)?;
            let data = required(inv.data, "--data DIR")?;
            let out = required(inv.out, "--out DIR")?;
            commands::cmd_train(&inv.config, &data, &out, inv.resume.as_deref())
        }
        "sample" => {
            let inv = parse_invocation(rest)?;
            let ck = required(inv.checkpoint, "--checkpoint FILE")?;
            let template = required(inv.template, "--template IMG.pgm")?;
            let text = required(inv.text, "--text STRING")?;
            let out = required(inv.out, "--out DIR")?;
            let opts = SampleOptions {
                seed: inv.config.seed,
                guidance: GuidanceConfig {
                    delta_i: inv.config.delta_i,
                    delta_t: inv.config.delta_t,
                },
                pure_conditional: inv.pure_conditional,
            };
            commands::cmd_sample(&ck, &template, &text, &opts, &out)
        }
        "metrics" => {
            let inv = parse_invocation(rest)?;
            if inv.positional.len() != 1 {
                return Err(CliError::Usage("metrics needs a directory".into()));
            }
            commands::cmd_metrics(
                PathBuf::from(&inv.positional[0]).as_path(),
                inv.reference.as_deref(),
                inv.out.as_deref(),
            )
        }
        "confidence" => {
            let inv = parse_invocation(rest)?;
            if inv.positional.len() != 1 {
                return Err(CliError::Usage("confidence needs a directory".into()));
            }
            let out = required(inv.out, "--out DIR")?;
            commands::cmd_confidence(PathBuf::from(&inv.positional[0]).as_path(), &out)
        }
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown command '{other}'"))),
    }
}
