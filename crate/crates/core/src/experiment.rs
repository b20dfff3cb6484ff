//! Experiment orchestration and on-disk artifacts.
//!
//! Every run writes into one directory: trajectory and residual CSVs,
//! `diagnostics.jsonl`, `summary.csv`, PGM snapshots for image runs, and
//! `manifest.json` listing each artifact with its SHA-256. Nothing depends on
//! wall-clock time, so the same config and seed give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::assets::{self, BUILTIN_PREFIX};
use crate::config::{Experiment, ExperimentConfig};
use crate::descent::{train, ModelKind, Monitor, TrainConfig, TrainRun};
use crate::diagnostics::{fit_exponential, kkt_check, nuclear_optimality_crosscheck, psnr, RateFit};
use crate::error::{Error, Result};
use crate::flow::{integrate_adaptive, lift, FlowContext, FlowRun};
use crate::linalg::Mat;
use crate::measurements::{
    gen_commuting_ensemble, gen_gaussian_ensemble, gen_ground_truth, measure, GroundTruth, MeasurementEnsemble,
};
use crate::model::{near_zero_init, spectral_init, SnnParams};
use crate::pgm::{load_pgm, save_pgm};
use crate::rng::PRNG_ID;
use crate::trajectory::{write_residuals_csv, write_trajectory_csv, TrajectoryRow};

pub const FORMAT_VERSION: u32 = 1;

/// What a run left on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Artifact file names relative to `dir`, in write order.
    pub files: Vec<String>,
    pub cells: usize,
    pub failed_cells: usize,
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Out { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(p, bytes)?;
        Ok(())
    }

    fn finish(mut self, cfg: &ExperimentConfig, cells: usize, failed_cells: usize) -> Result<RunReport> {
        let mut listing = Vec::with_capacity(self.files.len());
        for name in &self.files {
            listing.push(json!({ "file": name, "sha256": sha256_hex(&fs::read(self.dir.join(name))?) }));
        }
        let manifest = json!({
            "format_version": FORMAT_VERSION,
            "crate": env!("CARGO_PKG_NAME"),
            "crate_version": env!("CARGO_PKG_VERSION"),
            "prng": PRNG_ID,
            "experiment": cfg.experiment.name(),
            "config_sha256": config_hash(cfg),
            "config": cfg,
            "cells": cells,
            "failed_cells": failed_cells,
            "artifacts": listing,
        });
        self.write("manifest.json", pretty(&manifest))?;
        Ok(RunReport { dir: self.dir, files: self.files, cells, failed_cells })
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the canonical config JSON with `output_dir` blanked, so the
/// hash identifies the computation rather than where it was written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    sha256_hex(c.canonical_json().as_bytes())
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn line(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string(v).expect("serializable");
    s.push('\n');
    s
}

fn error_record(e: &Error) -> serde_json::Value {
    json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() })
}

/// File-name friendly learning-rate tag, e.g. `1e-2`.
pub fn lr_tag(lr: f64) -> String {
    format!("{lr:e}")
}

/// Loads `builtin:<name>` or a PGM path.
pub fn load_image(spec: &str) -> Result<Mat> {
    match spec.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => assets::image(name),
        None => load_pgm(Path::new(spec)),
    }
}

/// The nuclear-normalized image target and its dimensions.
fn image_truth(cfg: &ExperimentConfig) -> Result<GroundTruth> {
    let spec = cfg.image.as_deref().ok_or_else(|| Error::ConfigInvalid {
        field: "image".into(),
        message: "image_recovery needs an image".into(),
    })?;
    GroundTruth::normalized(load_image(spec)?)
}

/// Resolves the dimensions that depend on the image for image runs.
pub fn resolved(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    if c.experiment == Experiment::ImageRecovery {
        let (rows, cols) = image_truth(cfg)?.x_star.shape();
        c.d1 = rows;
        c.d2 = cols;
        c.d = c.d.max(rows.max(cols));
        c.inner_dim = rows.min(cols);
    }
    Ok(c)
}

fn commuting_problem(cfg: &ExperimentConfig, seed: u64) -> Result<(MeasurementEnsemble, GroundTruth)> {
    let target = gen_ground_truth(cfg.d1, cfg.d2, cfg.inner_dim, seed)?;
    let (mut e, truth) = gen_commuting_ensemble(cfg.d1, cfg.d2, cfg.m, seed, &target, cfg.phi_psi_source)?;
    measure(&mut e, &truth.x_star, cfg.noise_std, seed)?;
    Ok((e, truth))
}

fn gaussian_problem(cfg: &ExperimentConfig, truth: GroundTruth, seed: u64) -> Result<(MeasurementEnsemble, GroundTruth)> {
    let mut e = gen_gaussian_ensemble(cfg.d1, cfg.d2, cfg.m, seed)?;
    measure(&mut e, &truth.x_star, cfg.noise_std, seed)?;
    Ok((e, truth))
}

/// The measurement problem a config describes, for its base seed.
pub fn problem(cfg: &ExperimentConfig) -> Result<(MeasurementEnsemble, GroundTruth)> {
    let cfg = resolved(cfg)?;
    match cfg.experiment {
        Experiment::Commuting => commuting_problem(&cfg, cfg.seed),
        Experiment::GeneralCompare => {
            let t = gen_ground_truth(cfg.d1, cfg.d2, cfg.inner_dim, cfg.seed)?;
            gaussian_problem(&cfg, t, cfg.seed)
        }
        Experiment::ImageRecovery => gaussian_problem(&cfg, image_truth(&cfg)?, cfg.seed),
    }
}

/// Persists the ensemble and ground truth as `ensemble.json`.
pub fn gen(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let cfg = resolved(cfg)?;
    let (e, truth) = problem(&cfg)?;
    let mut out = Out::create(out_dir)?;
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "ground_truth": truth,
        "ensemble": e,
    });
    out.write("ensemble.json", line(&doc))?;
    out.finish(&cfg, 1, 0)
}

/// Reads back a file written by [`gen`].
pub fn read_ensemble(path: &Path) -> Result<(MeasurementEnsemble, GroundTruth)> {
    let text = fs::read_to_string(path)?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    match doc.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => return Err(Error::Format(format!("unsupported ensemble format version {other:?}"))),
    }
    let e = serde_json::from_value(doc["ensemble"].take()).map_err(|e| Error::Format(e.to_string()))?;
    let t = serde_json::from_value(doc["ground_truth"].take()).map_err(|e| Error::Format(e.to_string()))?;
    Ok((e, t))
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let cfg = resolved(cfg)?;
    match cfg.experiment {
        Experiment::Commuting => run_commuting(&cfg, out_dir),
        Experiment::GeneralCompare => run_compare(&cfg, out_dir),
        Experiment::ImageRecovery => run_image(&cfg, out_dir),
    }
}

/// Summary of one commuting-flow cell.
#[derive(Debug, Clone, Serialize)]
pub struct CommutingDiagnostics {
    pub lr: f64,
    pub dt_used: f64,
    pub halvings: usize,
    pub final_row: TrajectoryRow,
    /// Fit of `|σ*_i - (Hα)_i|` per coordinate, or why it failed.
    pub rate_fits: Vec<std::result::Result<RateFit, String>>,
    pub kkt: crate::diagnostics::KktReport,
    pub optimality_gap: f64,
}

pub fn commuting_diagnostics(
    lr: f64,
    flow: &FlowRun,
    x: &Mat,
    e: &MeasurementEnsemble,
) -> Result<CommutingDiagnostics> {
    let times = flow.trajectory.times();
    let d1 = flow.state.d1();
    let rate_fits = (0..d1)
        .map(|i| {
            let r: Vec<f64> = flow.trajectory.residuals.iter().map(|v| v[i].abs()).collect();
            fit_exponential(&times, &r).map_err(|e| e.to_string())
        })
        .collect();
    Ok(CommutingDiagnostics {
        lr,
        dt_used: flow.dt,
        halvings: flow.halvings,
        final_row: flow.trajectory.last().expect("integrate records step 0").clone(),
        rate_fits,
        kkt: kkt_check(x, e)?,
        optimality_gap: nuclear_optimality_crosscheck(x, e)?,
    })
}

fn run_commuting(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let act = cfg.activation_fn();
    let (e, _truth) = commuting_problem(cfg, cfg.seed)?;
    let ctx = FlowContext::from_ensemble(&e, act)?;
    let (phi, psi) = (e.phi.as_ref().expect("commuting"), e.psi.as_ref().expect("commuting"));
    let init = spectral_init(phi, psi, &ctx.sigma_star, cfg.k, cfg.d, cfg.seed, &act)?;

    let mut out = Out::create(out_dir)?;
    let mut diagnostics = String::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    write_row(&mut summary, ["lr", "status", "dt_used", "final_loss", "nuclear_norm", "residual_inf", "q_drift"])?;
    let mut first_error = None;
    let mut failed = 0;
    for &lr in &cfg.lr {
        let tag = lr_tag(lr);
        let cell = integrate_adaptive(&init.state, &ctx, lr, cfg.n_steps, cfg.scheme, cfg.record_stride, cfg.max_halvings)
            .and_then(|flow| {
                let (_, x) = lift(&flow.state, phi, psi, &init.g, &act)?;
                let diag = commuting_diagnostics(lr, &flow, &x, &e)?;
                Ok((flow, diag))
            });
        match cell {
            Ok((flow, diag)) => {
                write_trajectory_csv(&flow.trajectory, &out.path(&format!("trajectory_lr_{tag}.csv")))?;
                write_residuals_csv(&flow.trajectory, &out.path(&format!("residuals_lr_{tag}.csv")))?;
                let r = &diag.final_row;
                write_row(
                    &mut summary,
                    [
                        tag,
                        "ok".into(),
                        fmt(diag.dt_used),
                        fmt(r.loss),
                        fmt(r.nuclear_norm),
                        fmt(r.residual_inf),
                        r.q_drift.map(fmt).unwrap_or_default(),
                    ],
                )?;
                diagnostics.push_str(&line(&json!({ "status": "ok", "diagnostics": diag })));
            }
            Err(err) => {
                failed += 1;
                write_row(&mut summary, [tag, "failed".into(), String::new(), String::new(), String::new(), String::new(), String::new()])?;
                diagnostics.push_str(&line(&json!({ "lr": lr, "status": "failed", "error": error_record(&err) })));
                first_error.get_or_insert(err);
            }
        }
    }
    out.write("diagnostics.jsonl", diagnostics)?;
    out.write("summary.csv", summary.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    finish_cells(out, cfg, cfg.lr.len(), failed, first_error)
}

/// Returns the first cell error when every cell failed.
fn finish_cells(out: Out, cfg: &ExperimentConfig, cells: usize, failed: usize, first_error: Option<Error>) -> Result<RunReport> {
    let report = out.finish(cfg, cells, failed)?;
    match first_error {
        Some(e) if failed == cells => Err(e),
        _ => Ok(report),
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row<I, S>(w: &mut csv::Writer<Vec<u8>>, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| Error::Format(e.to_string()))
}

const SUMMARY_HEADER: [&str; 12] = [
    "model", "seed", "lr", "status", "final_loss", "nuclear_norm", "sigma_1", "sigma_2", "sigma_3", "psnr", "eff_rank", "steps",
];

fn summary_row(model: &str, seed: u64, lr: f64, run: &Result<TrainRun>) -> Vec<String> {
    let mut row = vec![model.to_string(), seed.to_string(), lr_tag(lr)];
    match run.as_ref().map(|r| r.trajectory.last()) {
        Ok(Some(r)) => row.extend([
            "ok".to_string(),
            fmt(r.loss),
            fmt(r.nuclear_norm),
            fmt(r.sigma_top3[0]),
            fmt(r.sigma_top3[1]),
            fmt(r.sigma_top3[2]),
            r.psnr.map(fmt).unwrap_or_default(),
            r.eff_rank.map(fmt).unwrap_or_default(),
            r.step.to_string(),
        ]),
        _ => {
            row.push("failed".into());
            row.extend(std::iter::repeat_n(String::new(), 8));
        }
    }
    row
}

/// The three models of the comparison, freshly initialized.
pub fn compare_models(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(ModelKind, usize)>> {
    let snn: SnnParams = near_zero_init(cfg.d1, cfg.d2, cfg.d, cfg.k, cfg.init_scale, cfg.init_jitter, seed, &cfg.activation_fn())?;
    Ok(vec![
        (ModelKind::SnnDepth1(snn), cfg.n_steps),
        (ModelKind::linear_regression(cfg.d1, cfg.d2), cfg.baseline_steps),
        (ModelKind::depth3(cfg.d1, cfg.d2, 1e-4), cfg.baseline_steps),
    ])
}

fn train_cfg(cfg: &ExperimentConfig, lr: f64, n_steps: usize) -> TrainConfig {
    let mut t = TrainConfig::new(lr, n_steps);
    t.record_stride = cfg.record_stride;
    t.gradient_mode = cfg.gradient_mode;
    t
}

fn run_compare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let mut out = Out::create(out_dir)?;
    let mut summary = csv::Writer::from_writer(Vec::new());
    write_row(&mut summary, SUMMARY_HEADER)?;
    let mut diagnostics = String::new();
    let (mut cells, mut failed, mut first_error) = (0, 0, None);
    for seed in cfg.seeds() {
        let truth = gen_ground_truth(cfg.d1, cfg.d2, cfg.inner_dim, seed)?;
        let (e, truth) = gaussian_problem(cfg, truth, seed)?;
        for &lr in &cfg.lr {
            for (model, steps) in compare_models(cfg, seed)? {
                cells += 1;
                let name = model.name();
                let monitor = Monitor { truth: Some(&truth.x_star), snapshot_steps: &[] };
                let run = train(&model, &e, &train_cfg(cfg, lr, steps), monitor);
                write_row(&mut summary, summary_row(name, seed, lr, &run))?;
                match run {
                    Ok(r) => {
                        let file = format!("trajectory_{name}_seed{seed}_lr_{}.csv", lr_tag(lr));
                        write_trajectory_csv(&r.trajectory, &out.path(&file))?;
                        diagnostics.push_str(&line(&json!({
                            "model": name, "seed": seed, "lr": lr, "status": "ok", "fd_fallbacks": r.fd_fallbacks,
                        })));
                    }
                    Err(err) => {
                        failed += 1;
                        diagnostics.push_str(&line(&json!({
                            "model": name, "seed": seed, "lr": lr, "status": "failed", "error": error_record(&err),
                        })));
                        first_error.get_or_insert(err);
                    }
                }
            }
        }
    }
    out.write("diagnostics.jsonl", diagnostics)?;
    out.write("summary.csv", summary.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    finish_cells(out, cfg, cells, failed, first_error)
}

fn run_image(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let truth = image_truth(cfg)?;
    let scale = truth.normalization;
    let (e, truth) = gaussian_problem(cfg, truth, cfg.seed)?;
    let mut out = Out::create(out_dir)?;
    let image_scale = |x: &Mat| x.scale(scale);
    let reference = image_scale(&truth.x_star);
    save_pgm(&reference, &out.path("ground_truth.pgm"))?;

    let mut summary = csv::Writer::from_writer(Vec::new());
    write_row(&mut summary, SUMMARY_HEADER)?;
    let mut snapshots = csv::Writer::from_writer(Vec::new());
    write_row(&mut snapshots, ["model", "lr", "step", "psnr", "file"])?;
    let mut diagnostics = String::new();
    let (mut cells, mut failed, mut first_error) = (0, 0, None);
    for &lr in &cfg.lr {
        let models = compare_models(cfg, cfg.seed)?;
        // The depth-3 baseline is not part of the image comparison.
        for (model, steps) in models.into_iter().take(2) {
            cells += 1;
            let name = model.name();
            let mut snapshot_steps = cfg.snapshot_steps.clone();
            snapshot_steps.retain(|&s| s as usize <= steps);
            if !snapshot_steps.contains(&(steps as u64)) {
                snapshot_steps.push(steps as u64);
            }
            let monitor = Monitor { truth: Some(&truth.x_star), snapshot_steps: &snapshot_steps };
            let run = train(&model, &e, &train_cfg(cfg, lr, steps), monitor);
            write_row(&mut summary, summary_row(name, cfg.seed, lr, &run))?;
            match run {
                Ok(r) => {
                    let tag = lr_tag(lr);
                    write_trajectory_csv(&r.trajectory, &out.path(&format!("trajectory_{name}_lr_{tag}.csv")))?;
                    for (step, x) in &r.snapshots {
                        let file = format!("snapshot_{name}_lr_{tag}_step{step:07}.pgm");
                        let img = image_scale(x);
                        save_pgm(&img, &out.path(&file))?;
                        write_row(&mut snapshots, [name.to_string(), tag.clone(), step.to_string(), fmt(psnr(&img, &reference)?), file])?;
                    }
                    diagnostics.push_str(&line(&json!({
                        "model": name, "lr": lr, "status": "ok", "fd_fallbacks": r.fd_fallbacks,
                    })));
                }
                Err(err) => {
                    failed += 1;
                    diagnostics.push_str(&line(&json!({
                        "model": name, "lr": lr, "status": "failed", "error": error_record(&err),
                    })));
                    first_error.get_or_insert(err);
                }
            }
        }
    }
    out.write("diagnostics.jsonl", diagnostics)?;
    out.write("summary.csv", summary.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    out.write("snapshots.csv", snapshots.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    finish_cells(out, cfg, cells, failed, first_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::pgm::decode_pgm;
    use crate::trajectory::read_trajectory_csv;

    fn cfg(text: &str) -> ExperimentConfig {
        parse_config(text).unwrap()
    }

    #[test]
    fn gen_round_trips_the_ensemble() {
        let c = cfg("experiment = \"commuting\"\nseed = 4\nd1 = 4\nm = 9\n");
        let dir = tempfile::tempdir().unwrap();
        let report = gen(&c, dir.path()).unwrap();
        assert_eq!(report.files, vec!["ensemble.json", "manifest.json"]);
        let (e, t) = read_ensemble(&dir.path().join("ensemble.json")).unwrap();
        let (e2, t2) = problem(&c).unwrap();
        assert_eq!(e, e2);
        assert_eq!(t, t2);
    }

    #[test]
    fn small_commuting_run_writes_artifacts() {
        let c = cfg("experiment = \"commuting\"\nseed = 1\nd1 = 4\nm = 9\nlr = [1e-2, 10.0]\nn_steps = 2000\nrecord_stride = 50\n");
        let dir = tempfile::tempdir().unwrap();
        let report = run(&c, dir.path()).unwrap();
        assert_eq!(report.cells, 2);
        assert_eq!(report.failed_cells, 1);
        let traj = read_trajectory_csv(&dir.path().join("trajectory_lr_1e-2.csv")).unwrap();
        assert_eq!(traj.rows.len(), 41);
        assert!(traj.rows.windows(2).all(|w| w[0].step < w[1].step));
        let diag = fs::read_to_string(dir.path().join("diagnostics.jsonl")).unwrap();
        let lines: Vec<serde_json::Value> = diag.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["status"], "ok");
        assert_eq!(lines[0]["diagnostics"]["rate_fits"].as_array().unwrap().len(), 4);
        assert_eq!(lines[1]["error"]["kind"], "step_blow_up");
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["prng"], PRNG_ID);
        assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
        assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn all_cells_failing_is_an_error() {
        let c = cfg("experiment = \"commuting\"\nseed = 1\nd1 = 4\nm = 9\nlr = [10.0]\nn_steps = 100\n");
        let dir = tempfile::tempdir().unwrap();
        let err = run(&c, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn compare_run_is_deterministic() {
        let text = "experiment = \"general_compare\"\nseed = 2\nd1 = 4\nm = 10\nn_seeds = 2\nn_steps = 100\nbaseline_steps = 100\n";
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run(&cfg(text), a.path()).unwrap();
        run(&cfg(text), b.path()).unwrap();
        assert_eq!(ra.cells, 6);
        for f in &ra.files {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 7);
        assert!(summary.starts_with("model,seed,lr,status,"));
    }

    #[test]
    fn image_run_writes_parseable_snapshots_with_psnr() {
        let c = cfg("experiment = \"image_recovery\"\nseed = 0\nn_steps = 40\nbaseline_steps = 40\nsnapshot_steps = [0, 20]\n");
        let dir = tempfile::tempdir().unwrap();
        let report = run(&c, dir.path()).unwrap();
        let snaps = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
        let rows: Vec<&str> = snaps.lines().skip(1).collect();
        assert_eq!(rows.len(), 6);
        for r in rows {
            let cols: Vec<&str> = r.split(',').collect();
            assert!(cols[3].parse::<f64>().unwrap().is_finite());
            let bytes = fs::read(dir.path().join(cols[4])).unwrap();
            let img = decode_pgm(&bytes).unwrap();
            assert_eq!(img.shape(), (10, 10));
            assert_eq!(crate::pgm::encode_pgm(&img).unwrap(), bytes);
        }
        assert!(report.files.contains(&"ground_truth.pgm".to_string()));
        let gt = load_pgm(&dir.path().join("ground_truth.pgm")).unwrap();
        assert_eq!(gt, assets::image("plus").unwrap());
    }

    #[test]
    fn missing_image_file_is_io_error() {
        let c = cfg("experiment = \"image_recovery\"\nseed = 0\nimage = \"/nonexistent/x.pgm\"\n");
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&c, dir.path()).unwrap_err().exit_code(), 4);
    }
}
