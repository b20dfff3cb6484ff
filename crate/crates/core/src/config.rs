//! TOML experiment configuration.
//!
//! Only `experiment` and `seed` are required:
//!
//! ```toml
//! experiment = "commuting"        # commuting | general_compare | image_recovery
//! seed = 1
//! # d1 = 10, d2 = 10, d = 10, inner_dim = 10, m = 50, k = 2 (4 for images)
//! # activation = "tanh", clamp_activation = false
//! # lr = [0.1, 0.01, 0.001, 0.0001] (commuting) or [0.001]
//! # n_steps = 100000 (commuting) or 5000, baseline_steps = 20000
//! # noise_std = 0.0, phi_psi_source = "svd_of_target", gradient_mode = "analytic"
//! # scheme = "euler", max_halvings = 0, output_dir = "out", record_stride = 10
//! # n_seeds = 8, image = "builtin:plus", snapshot_steps = 5 evenly spaced steps
//! # init_scale = 1e-4, init_jitter = 1e-6
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationFn;
use crate::descent::GradientMode;
use crate::error::{Error, Result};
use crate::flow::Scheme;
use crate::measurements::PhiPsiSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Commuting,
    GeneralCompare,
    ImageRecovery,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Commuting => "commuting",
            Experiment::GeneralCompare => "general_compare",
            Experiment::ImageRecovery => "image_recovery",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    seed: i64,
    d1: Option<i64>,
    d2: Option<i64>,
    d: Option<i64>,
    inner_dim: Option<i64>,
    m: Option<i64>,
    k: Option<i64>,
    activation: Option<String>,
    clamp_activation: Option<bool>,
    lr: Option<Vec<f64>>,
    n_steps: Option<i64>,
    baseline_steps: Option<i64>,
    noise_std: Option<f64>,
    phi_psi_source: Option<PhiPsiSource>,
    gradient_mode: Option<GradientMode>,
    scheme: Option<Scheme>,
    max_halvings: Option<i64>,
    output_dir: Option<PathBuf>,
    record_stride: Option<i64>,
    n_seeds: Option<i64>,
    image: Option<String>,
    snapshot_steps: Option<Vec<i64>>,
    init_scale: Option<f64>,
    init_jitter: Option<f64>,
}

/// Fully resolved configuration; every default is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub d1: usize,
    pub d2: usize,
    pub d: usize,
    pub inner_dim: usize,
    pub m: usize,
    pub k: usize,
    pub activation: String,
    pub clamp_activation: bool,
    /// Learning rates; the step size `dt` for the commuting flow.
    pub lr: Vec<f64>,
    pub n_steps: usize,
    /// Steps for the linear-regression and depth-3 baselines.
    pub baseline_steps: usize,
    pub noise_std: f64,
    pub phi_psi_source: PhiPsiSource,
    pub gradient_mode: GradientMode,
    pub scheme: Scheme,
    pub max_halvings: usize,
    pub output_dir: PathBuf,
    pub record_stride: usize,
    pub n_seeds: usize,
    pub image: Option<String>,
    pub snapshot_steps: Vec<u64>,
    pub init_scale: f64,
    pub init_jitter: f64,
}

/// One `(lr, seed)` cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub lr: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn activation_fn(&self) -> ActivationFn {
        let act = ActivationFn::by_name(&self.activation).expect("validated at parse time");
        if self.clamp_activation {
            act.clamped()
        } else {
            act
        }
    }

    /// The seeds a run covers: `seed, seed + 1, ...` for comparisons,
    /// just `seed` otherwise.
    pub fn seeds(&self) -> Vec<u64> {
        match self.experiment {
            Experiment::GeneralCompare => (0..self.n_seeds as u64).map(|i| self.seed.wrapping_add(i)).collect(),
            _ => vec![self.seed],
        }
    }

    pub fn sweep_plan(&self) -> Vec<SweepCell> {
        let seeds = self.seeds();
        self.lr
            .iter()
            .flat_map(|&lr| seeds.iter().map(move |&seed| SweepCell { lr, seed }))
            .collect()
    }

    /// Canonical JSON used for hashing and the run manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.into(),
        message: message.into(),
    }
}

fn positive(field: &str, v: Option<i64>, default: usize) -> Result<usize> {
    match v {
        None => Ok(default),
        Some(x) if x > 0 => Ok(x as usize),
        Some(x) => Err(invalid(field, format!("must be positive, got {x}"))),
    }
}

fn non_negative(field: &str, v: Option<i64>, default: usize) -> Result<usize> {
    match v {
        None => Ok(default),
        Some(x) if x >= 0 => Ok(x as usize),
        Some(x) => Err(invalid(field, format!("must be non-negative, got {x}"))),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    resolve(raw)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let exp = raw.experiment;
    if raw.seed < 0 {
        return Err(invalid("seed", format!("must be non-negative, got {}", raw.seed)));
    }

    let image = match exp {
        Experiment::ImageRecovery => Some(raw.image.unwrap_or_else(|| "builtin:plus".into())),
        _ if raw.image.is_some() => return Err(invalid("image", "only used by image_recovery")),
        _ => None,
    };
    if exp == Experiment::ImageRecovery && (raw.d1.is_some() || raw.d2.is_some()) {
        return Err(invalid("d1", "image dimensions come from the image"));
    }
    // Image dimensions are filled in when the image is loaded.
    let d1 = positive("d1", raw.d1, 10)?;
    let d2 = positive("d2", raw.d2, d1)?;
    if d1 > d2 {
        return Err(invalid("d2", format!("must be at least d1 = {d1}, got {d2}")));
    }
    let d = positive("d", raw.d, d2)?;
    if exp == Experiment::Commuting && d < d2 {
        return Err(invalid("d", format!("spectral initialization needs d >= d2 = {d2}, got {d}")));
    }
    let inner_dim = positive("inner_dim", raw.inner_dim, d1)?;
    let m = positive("m", raw.m, 50)?;
    let k = positive("k", raw.k, if exp == Experiment::ImageRecovery { 4 } else { 2 })?;

    let activation = raw.activation.unwrap_or_else(|| "tanh".into());
    if ActivationFn::by_name(&activation).is_none() {
        return Err(invalid(
            "activation",
            format!("unknown activation {activation:?}; expected one of {}", ActivationFn::NAMES.join(", ")),
        ));
    }

    let lr = raw.lr.unwrap_or_else(|| match exp {
        Experiment::Commuting => vec![1e-1, 1e-2, 1e-3, 1e-4],
        _ => vec![1e-3],
    });
    if lr.is_empty() {
        return Err(invalid("lr", "must not be empty"));
    }
    if let Some(bad) = lr.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(invalid("lr", format!("entries must be positive, got {bad}")));
    }
    let n_steps = positive("n_steps", raw.n_steps, if exp == Experiment::Commuting { 100_000 } else { 5000 })?;
    let baseline_steps = positive("baseline_steps", raw.baseline_steps, 20_000)?;

    let noise_std = raw.noise_std.unwrap_or(0.0);
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(invalid("noise_std", format!("must be non-negative, got {noise_std}")));
    }
    let record_stride = positive("record_stride", raw.record_stride, 10)?;
    let n_seeds = positive("n_seeds", raw.n_seeds, 8)?;
    let max_halvings = non_negative("max_halvings", raw.max_halvings, 0)?;

    let snapshot_steps = match raw.snapshot_steps {
        Some(s) => {
            let mut out = Vec::with_capacity(s.len());
            for v in s {
                if v < 0 || v as usize > n_steps {
                    return Err(invalid("snapshot_steps", format!("step {v} outside 0..={n_steps}")));
                }
                out.push(v as u64);
            }
            out.sort_unstable();
            out.dedup();
            out
        }
        None => (0..=4).map(|i| (i * n_steps / 4) as u64).collect(),
    };

    let init_scale = raw.init_scale.unwrap_or(1e-4);
    let init_jitter = raw.init_jitter.unwrap_or(1e-6);
    if !(init_scale.is_finite() && init_scale > 0.0) {
        return Err(invalid("init_scale", format!("must be positive, got {init_scale}")));
    }
    if !(init_jitter.is_finite() && init_jitter >= 0.0) {
        return Err(invalid("init_jitter", format!("must be non-negative, got {init_jitter}")));
    }

    Ok(ExperimentConfig {
        experiment: exp,
        seed: raw.seed as u64,
        d1,
        d2,
        d,
        inner_dim,
        m,
        k,
        activation,
        clamp_activation: raw.clamp_activation.unwrap_or(false),
        lr,
        n_steps,
        baseline_steps,
        noise_std,
        phi_psi_source: raw.phi_psi_source.unwrap_or_default(),
        gradient_mode: raw.gradient_mode.unwrap_or_default(),
        scheme: raw.scheme.unwrap_or_default(),
        max_halvings,
        output_dir: raw.output_dir.unwrap_or_else(|| "out".into()),
        record_stride,
        n_seeds,
        image,
        snapshot_steps,
        init_scale,
        init_jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let c = parse_config("experiment = \"commuting\"\nseed = 7\n").unwrap();
        assert_eq!((c.d1, c.d2, c.d, c.inner_dim, c.m, c.k), (10, 10, 10, 10, 50, 2));
        assert_eq!(c.activation, "tanh");
        assert!(!c.clamp_activation);
        assert_eq!(c.lr, vec![1e-1, 1e-2, 1e-3, 1e-4]);
        assert_eq!(c.n_steps, 100_000);
        assert_eq!(c.noise_std, 0.0);
        assert_eq!(c.phi_psi_source, PhiPsiSource::SvdOfTarget);
        assert_eq!(c.gradient_mode, GradientMode::Analytic);
        assert_eq!(c.scheme, Scheme::Euler);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.record_stride, 10);
        assert_eq!(c.image, None);
        assert_eq!(c.snapshot_steps, vec![0, 25_000, 50_000, 75_000, 100_000]);

        let img = parse_config("experiment = \"image_recovery\"\nseed = 0\n").unwrap();
        assert_eq!(img.k, 4);
        assert_eq!(img.lr, vec![1e-3]);
        assert_eq!(img.image.as_deref(), Some("builtin:plus"));
    }

    #[test]
    fn lr_list_becomes_sweep_plan() {
        let c = parse_config("experiment = \"commuting\"\nseed = 3\nlr = [1e-1, 1e-2, 1e-3]\n").unwrap();
        let plan = c.sweep_plan();
        assert_eq!(plan.len(), 3);
        assert!(plan.iter().all(|cell| cell.seed == 3));
        assert_eq!(plan[1].lr, 1e-2);

        let g = parse_config("experiment = \"general_compare\"\nseed = 10\nn_seeds = 3\n").unwrap();
        assert_eq!(g.seeds(), vec![10, 11, 12]);
        assert_eq!(g.sweep_plan().len(), 3);
    }

    #[test]
    fn validation_errors_name_the_field() {
        let cases = [
            ("m = -5", "m"),
            ("lr = []", "lr"),
            ("lr = [0.1, -1.0]", "lr"),
            ("activation = \"relu\"", "activation"),
            ("d1 = 5\nd2 = 4", "d2"),
            ("d = 3", "d"),
            ("noise_std = -0.1", "noise_std"),
            ("image = \"builtin:plus\"", "image"),
            ("snapshot_steps = [200000]", "snapshot_steps"),
        ];
        for (extra, field) in cases {
            let text = format!("experiment = \"commuting\"\nseed = 1\n{extra}\n");
            match parse_config(&text) {
                Err(Error::ConfigInvalid { field: f, .. }) => assert_eq!(f, field, "{extra}"),
                other => panic!("{extra}: {other:?}"),
            }
        }
        assert!(matches!(
            parse_config("experiment = \"commuting\"\nseed = -1\n"),
            Err(Error::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_config("experiment = \"commuting\"\nseed = 1\nbogus = 3\n") {
            Err(Error::ConfigParse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("seed = 1\n"), Err(Error::ConfigParse { .. })));
        match parse_config("experiment = \"commuting\"\nseed = \n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_config("experiment = \"x\"\nseed = 1").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn canonical_json_is_stable() {
        let a = parse_config("experiment = \"commuting\"\nseed = 1\n").unwrap();
        let b = parse_config("seed = 1\nexperiment = \"commuting\"\n").unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
        let back: ExperimentConfig = serde_json::from_str(&a.canonical_json()).unwrap();
        assert_eq!(back, a);
    }
}
