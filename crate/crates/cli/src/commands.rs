//! Subcommand implementations.
//!
//! Every command is deterministic given (config, seed): output files
//! contain no timestamps or machine identifiers, progress chatter goes
//! to stderr only.

use std::fs;
use std::path::{Path, PathBuf};

use morphgen_core::diffusion::{
    resume_training, train, Condition, GuidanceConfig, PredictionMode,
    SampleOutput,
};
use morphgen_core::epdiff::{shoot, IntegratorKind};
use morphgen_core::field::ScalarField;
use morphgen_core::flow::{det_jacobian, integrate_flow, warp};
use morphgen_core::latent::{encode, geodesic_mae_curve, latent_shoot};
use morphgen_core::metrics::{confidence_maps, detjac_stats, ssim};
use morphgen_core::registration::register;
use morphgen_core::rng::derive_seed;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::fieldio::{
    read_latent, read_velocity, write_deformations, write_fields, write_latent, FieldKind,
};
use crate::gendata::{generate_dataset, load_dataset};
use crate::pgm::{pgm_read, pgm_write};

pub const SEED_TAG_SAMPLE: u64 = 0x73_616d_70; // "smp"

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// DetJac map as CSV (one row per grid row) plus a heatmap PGM with
/// values mapped linearly from [0, 2] onto [0, 1] (so 1.0 -> mid gray,
/// folding -> black).
fn write_detjac_outputs(detjac: &ScalarField, dir: &Path) -> Result<()> {
    let grid = detjac.grid();
    let mut csv = String::new();
    for iy in 0..grid.ny() {
        let row: Vec<String> = (0..grid.nx())
            .map(|ix| format!("{}", detjac.at(ix, iy)))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_text(&dir.join("detjac.csv"), &csv)?;
    let heat = ScalarField::from_values(
        grid,
        detjac.values().iter().map(|&d| (d / 2.0).clamp(0.0, 1.0)).collect(),
    )
    .expect("clamped values are finite");
    pgm_write(&heat, &dir.join("detjac.pgm"))
}

fn write_warp_sequence(
    template: &ScalarField,
    deformations: &[morphgen_core::field::DeformationField],
    dir: &Path,
) -> Result<()> {
    for (t, phi) in deformations.iter().enumerate() {
        let warped = warp(template, phi)?;
        pgm_write(&warped, &dir.join(format!("warp_{t:02}.pgm")))?;
    }
    Ok(())
}

/// Shoot the geodesic of a stored initial velocity and write the full
/// path, its deformations and the DetJac outputs.
pub fn cmd_shoot(
    cfg: &RunConfig,
    v0_path: &Path,
    template: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let v0 = read_velocity(v0_path)?;
    cfg.grid()?.same_as(&v0.grid()).map_err(|e| {
        CliError::Data(format!("{}: {e}", v0_path.display()))
    })?;
    let path = shoot(&v0, &cfg.operator(), cfg.steps, IntegratorKind::Euler)?;
    let flow = integrate_flow(&path)?;
    write_fields(path.velocities(), FieldKind::Velocity, &out_dir.join("geodesic.bin"))?;
    write_deformations(flow.deformations(), &out_dir.join("deformation.bin"))?;
    write_detjac_outputs(&det_jacobian(flow.terminal()), out_dir)?;
    if let Some(tpl_path) = template {
        let tpl = pgm_read(tpl_path)?;
        tpl.grid().same_as(&v0.grid()).map_err(|e| {
            CliError::Data(format!("{}: {e}", tpl_path.display()))
        })?;
        write_warp_sequence(&tpl, flow.deformations(), out_dir)?;
    }
    let stats = detjac_stats(flow.terminal());
    write_text(
        &out_dir.join("summary.csv"),
        &format!(
            "metric,value\ndetjac_min,{}\ndetjac_mean,{}\ndetjac_negative_fraction,{}\n",
            stats.min, stats.mean, stats.negative_fraction
        ),
    )
}

/// Register source onto target and write every artifact of the result.
pub fn cmd_register(
    cfg: &RunConfig,
    source_path: &Path,
    target_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let source = pgm_read(source_path)?;
    let target = pgm_read(target_path)?;
    source.grid().same_as(&target.grid()).map_err(|e| {
        CliError::Data(format!(
            "{} vs {}: {e}",
            source_path.display(),
            target_path.display()
        ))
    })?;
    let result = register(&source, &target, &cfg.registration())?;

    write_fields(
        std::slice::from_ref(&result.v0),
        FieldKind::Velocity,
        &out_dir.join("v0.bin"),
    )?;
    write_fields(
        result.path.velocities(),
        FieldKind::Velocity,
        &out_dir.join("geodesic.bin"),
    )?;
    write_deformations(result.deformation.deformations(), &out_dir.join("deformation.bin"))?;
    let warped = warp(&source, result.deformation.terminal())?;
    pgm_write(&warped, &out_dir.join("warped.pgm"))?;
    write_detjac_outputs(&det_jacobian(result.deformation.terminal()), out_dir)?;

    let mut history = String::from("iteration,total,data,reg\n");
    for rec in &result.energy_history {
        history.push_str(&format!(
            "{},{},{},{}\n",
            rec.iteration, rec.total, rec.data, rec.reg
        ));
    }
    write_text(&out_dir.join("energy_history.csv"), &history)?;

    let initial = result.energy_history.first().expect("non-empty");
    let last = result.energy_history.last().expect("non-empty");
    write_text(
        &out_dir.join("summary.csv"),
        &format!(
            "metric,value\nconverged,{}\niterations,{}\ninitial_data,{}\nfinal_data,{}\nfinal_total,{}\nmin_detjac,{}\n",
            result.converged,
            last.iteration,
            initial.data,
            last.data,
            last.total,
            result.min_detjac
        ),
    )
}

/// Generate the synthetic growing-shape dataset.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    generate_dataset(cfg.grid()?, cfg.steps, cfg.sequences, cfg.seed, out_dir)
}

/// Registration + latent shooting + diffusion training over a dataset
/// directory; writes the checkpoint and the loss log.
pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let pairs = load_dataset(data_dir, cfg.steps)?;
    let latent_cfg = cfg.latent()?;
    let operator = cfg.operator();
    let reg_cfg = cfg.registration();

    let mut latents = Vec::with_capacity(pairs.len());
    let mut conds = Vec::with_capacity(pairs.len());
    let mut reg_rows = String::from("sequence,converged,iterations,final_data,min_detjac\n");
    for (i, pair) in pairs.iter().enumerate() {
        let reg = register(&pair.template, &pair.target, &reg_cfg).map_err(|e| {
            CliError::Data(format!("registration of sequence {i} failed: {e}"))
        })?;
        let z0 = encode(&reg.v0, &latent_cfg)?;
        let latent = latent_shoot(&z0, &operator, cfg.steps)?;
        latents.push(latent.flatten());
        conds.push(Condition::for_template(&pair.template, &pair.text));
        let last = reg.energy_history.last().expect("non-empty");
        reg_rows.push_str(&format!(
            "{},{},{},{},{}\n",
            i, reg.converged, last.iteration, last.data, reg.min_detjac
        ));
        eprintln!(
            "[train] registered sequence {i}: data {:.4e}, min detjac {:.3}",
            last.data, reg.min_detjac
        );
    }
    write_text(&out_dir.join("registration_summary.csv"), &reg_rows)?;

    let sched = cfg.schedule();
    let train_cfg = cfg.training();
    let run = match resume {
        None => train(&latents, &conds, &sched, &train_cfg)?,
        Some(ck_path) => {
            let ck = checkpoint::load(ck_path)?;
            if ck.latent != latent_cfg || ck.steps != cfg.steps {
                return Err(CliError::Data(format!(
                    "{}: checkpoint latent geometry does not match the config",
                    ck_path.display()
                )));
            }
            resume_training(
                ck.params,
                ck.adam,
                ck.normalizer,
                ck.trained_steps,
                &latents,
                &conds,
                &sched,
                &train_cfg,
            )?
        }
    };
    eprintln!(
        "[train] {} steps, validation loss {:.6} -> {:.6}",
        run.steps, run.val_initial, run.val_final
    );

    let mut loss_csv = String::from("step,loss\n");
    for (step, loss) in &run.loss_log {
        loss_csv.push_str(&format!("{step},{loss}\n"));
    }
    write_text(&out_dir.join("loss.csv"), &loss_csv)?;
    write_text(
        &out_dir.join("train_summary.csv"),
        &format!(
            "metric,value\nsteps,{}\nval_initial,{}\nval_final,{}\n",
            run.steps, run.val_initial, run.val_final
        ),
    )?;

    checkpoint::save(
        &Checkpoint {
            latent: latent_cfg,
            steps: cfg.steps,
            operator,
            schedule: sched,
            params: run.params,
            normalizer: run.normalizer,
            trained_steps: run.steps,
            adam: run.adam,
        },
        &out_dir.join("checkpoint.iggc"),
    )
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

/// Options of one sampling run.
#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub seed: u64,
    pub guidance: GuidanceConfig,
    /// Debug path: single conditional prediction instead of the guided
    /// three-evaluation combination.
    pub pure_conditional: bool,
}

/// Sample one deformation conditioned on (template, text) and write the
/// manifest directory.
pub fn cmd_sample(
    checkpoint_path: &Path,
    template_path: &Path,
    text: &str,
    opts: &SampleOptions,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let ck = checkpoint::load(checkpoint_path)?;
    let template = pgm_read(template_path)?;
    template.grid().same_as(&ck.latent.grid()).map_err(|e| {
        CliError::Data(format!(
            "{}: template does not match checkpoint grid: {e}",
            template_path.display()
        ))
    })?;

    let cond = Condition::for_template(&template, text);
    let mode = if opts.pure_conditional {
        PredictionMode::Conditional
    } else {
        PredictionMode::Guided(opts.guidance)
    };
    let sample_seed = derive_seed(opts.seed, SEED_TAG_SAMPLE);
    let z0 = morphgen_core::diffusion::sample_latent_with_mode(
        &ck.params,
        &ck.normalizer,
        &ck.schedule,
        &cond,
        &mode,
        sample_seed,
    )?;
    let out = morphgen_core::diffusion::finish_sample(
        &template,
        &z0,
        &ck.latent,
        ck.steps,
        &ck.operator,
    )?;

    write_sample_manifest(&out, &ck, checkpoint_path, text, opts, out_dir)
}

fn write_sample_manifest(
    out: &SampleOutput,
    ck: &Checkpoint,
    checkpoint_path: &Path,
    text: &str,
    opts: &SampleOptions,
    dir: &Path,
) -> Result<()> {
    for (t, img) in out.warped.iter().enumerate() {
        pgm_write(img, &dir.join(format!("warp_{t:02}.pgm")))?;
    }
    write_detjac_outputs(&out.detjac, dir)?;
    write_latent(&out.latent, &ck.operator, &dir.join("latent.bin"))?;

    // metrics: DetJac statistics plus the latent-vs-EPDiff error curve
    let stats = detjac_stats(out.deformations.terminal());
    let reference = shoot(
        out.geodesic.initial(),
        &ck.operator,
        ck.steps,
        IntegratorKind::Euler,
    )?;
    let curve = geodesic_mae_curve(&out.latent, &reference)?;
    let mut metrics = String::from("metric,value\n");
    metrics.push_str(&format!("detjac_min,{}\n", stats.min));
    metrics.push_str(&format!("detjac_mean,{}\n", stats.mean));
    metrics.push_str(&format!(
        "detjac_negative_fraction,{}\n",
        stats.negative_fraction
    ));
    for (t, mae) in curve.iter().enumerate() {
        metrics.push_str(&format!("velocity_mae_t{t:02},{mae}\n"));
    }
    write_text(&dir.join("metrics.csv"), &metrics)?;

    let ck_bytes = fs::read(checkpoint_path)
        .map_err(|e| CliError::io(checkpoint_path.display().to_string(), e))?;
    let manifest = format!(
        "text = {}\nseed = {}\ndelta_i = {}\ndelta_t = {}\npure_conditional = {}\n\
         nx = {}\nny = {}\nbandlimit = {}\nsteps = {}\nalpha = {}\ndiffusion_steps = {}\n\
         checkpoint_fnv64 = {:016x}\n",
        text,
        opts.seed,
        opts.guidance.delta_i,
        opts.guidance.delta_t,
        opts.pure_conditional,
        ck.latent.grid().nx(),
        ck.latent.grid().ny(),
        ck.latent.bandlimit(),
        ck.steps,
        ck.operator.alpha,
        ck.schedule.t(),
        fnv64(&ck_bytes),
    );
    write_text(&dir.join("manifest.txt"), &manifest)
}

fn is_manifest_dir(dir: &Path) -> bool {
    dir.join("latent.bin").is_file()
}

fn manifest_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if is_manifest_dir(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && is_manifest_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no sample manifests found (need latent.bin)",
            dir.display()
        )));
    }
    Ok(dirs)
}

/// Recompute quantitative metrics for one or many sample manifests:
/// DetJac statistics, the velocity MAE curve of the stored latent
/// trajectory against full-grid EPDiff integration of its own initial
/// velocity, and SSIM of the final warped frame against a reference.
pub fn cmd_metrics(dir: &Path, reference: Option<&Path>, out_file: Option<&Path>) -> Result<()> {
    let runs = manifest_dirs(dir)?;
    let reference_img = reference.map(pgm_read).transpose()?;

    let mut report = String::from("run,detjac_min,detjac_mean,detjac_negative_fraction,ssim_final,velocity_mae_final\n");
    let mut curves = String::from("run,t,velocity_mae\n");
    for run in &runs {
        let (latent, operator) = read_latent(&run.join("latent.bin"))?;
        let velocities: Vec<_> = latent
            .latents()
            .iter()
            .map(morphgen_core::latent::decode)
            .collect();
        let geodesic = morphgen_core::epdiff::GeodesicPath::new(velocities, operator)?;
        let flow = integrate_flow(&geodesic)?;
        let stats = detjac_stats(flow.terminal());
        let full = shoot(
            geodesic.initial(),
            &operator,
            latent.steps(),
            IntegratorKind::Euler,
        )?;
        let curve = geodesic_mae_curve(&latent, &full)?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        for (t, mae) in curve.iter().enumerate() {
            curves.push_str(&format!("{name},{t},{mae}\n"));
        }
        let ssim_cell = match &reference_img {
            Some(r) => {
                let last = pgm_read(&run.join(format!("warp_{:02}.pgm", latent.steps())))?;
                format!("{}", ssim(&last, r)?)
            }
            None => String::new(),
        };
        report.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            stats.min,
            stats.mean,
            stats.negative_fraction,
            ssim_cell,
            curve.last().expect("curve non-empty")
        ));
    }
    let out_path = out_file
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("metrics_report.csv"));
    write_text(&out_path, &report)?;
    write_text(&out_path.with_file_name("mae_curves.csv"), &curves)
}

/// Pixel-wise confidence maps over an ensemble of sample manifests.
pub fn cmd_confidence(dir: &Path, out_dir: &Path) -> Result<()> {
    let runs = manifest_dirs(dir)?;
    if runs.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: confidence maps need at least 2 sample runs, found {}",
            dir.display(),
            runs.len()
        )));
    }
    ensure_dir(out_dir)?;
    // time indices present in every run
    let mut t = 0usize;
    let mut rows = String::from("t,sample_count,mean_ci_width,max_ci_width,coverage\n");
    loop {
        let frame_name = format!("warp_{t:02}.pgm");
        if !runs.iter().all(|r| r.join(&frame_name).is_file()) {
            break;
        }
        let ensemble: Vec<ScalarField> = runs
            .iter()
            .map(|r| pgm_read(&r.join(&frame_name)))
            .collect::<Result<Vec<_>>>()?;
        let maps = confidence_maps(&ensemble)?;
        let clamp_write = |field: &ScalarField, name: String| -> Result<()> {
            let clamped = ScalarField::from_values(
                field.grid(),
                field.values().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            )
            .expect("clamped values are finite");
            pgm_write(&clamped, &out_dir.join(name))
        };
        clamp_write(&maps.mean, format!("mean_{t:02}.pgm"))?;
        clamp_write(&maps.lower, format!("lower_{t:02}.pgm"))?;
        clamp_write(&maps.upper, format!("upper_{t:02}.pgm"))?;
        clamp_write(&maps.ci_width, format!("ci_width_{t:02}.pgm"))?;

        let mut covered = 0usize;
        let mut total = 0usize;
        for img in &ensemble {
            for (i, &v) in img.values().iter().enumerate() {
                total += 1;
                if v >= maps.lower.values()[i] && v <= maps.upper.values()[i] {
                    covered += 1;
                }
            }
        }
        let widths = maps.ci_width.values();
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            t,
            maps.sample_count,
            widths.iter().sum::<f64>() / widths.len() as f64,
            maps.ci_width.max(),
            covered as f64 / total as f64
        ));
        t += 1;
    }
    if t == 0 {
        return Err(CliError::Data(format!(
            "{}: runs share no warp_NN.pgm frames",
            dir.display()
        )));
    }
    write_text(&out_dir.join("confidence.csv"), &rows)
}
