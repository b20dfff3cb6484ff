//! Browser bindings for three interactive operations. Each returns a JSON
//! string; the `*_json` functions are the same operations for native use.

use serde::Serialize;
use snn_core::activation::{grid, validate_assumption3, ActivationFn};
use snn_core::descent::{train, ModelKind, Monitor, TrainConfig};
use snn_core::flow::{integrate, FlowContext, Scheme};
use snn_core::measurements::{gen_commuting_ensemble, gen_gaussian_ensemble, gen_ground_truth, measure, PhiPsiSource};
use snn_core::model::{near_zero_init, spectral_init};
use snn_core::{Error, Mat, Result};
use wasm_bindgen::prelude::*;

fn activation(name: &str, clamped: bool) -> Result<ActivationFn> {
    let act = ActivationFn::by_name(name).ok_or_else(|| Error::ConfigInvalid {
        field: "activation".into(),
        message: format!("unknown activation {name:?}"),
    })?;
    Ok(if clamped { act.clamped() } else { act })
}

fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    gamma: Vec<f64>,
    gamma_prime: Vec<f64>,
    bounded: bool,
    monotone: bool,
    max_derivative_error: f64,
}

pub fn activation_curve_json(name: &str, clamped: bool, lo: f64, hi: f64, n: usize) -> Result<String> {
    let act = activation(name, clamped)?;
    if lo.is_nan() || hi.is_nan() || lo >= hi || !(2..=10_000).contains(&n) {
        return Err(Error::ConfigInvalid {
            field: "range".into(),
            message: format!("need lo < hi and 2 <= n <= 10000, got [{lo}, {hi}], n = {n}"),
        });
    }
    let x = grid(lo, hi, n);
    let report = validate_assumption3(&act, &x);
    to_json(&Curve {
        gamma: x.iter().map(|&v| act.gamma(v)).collect(),
        gamma_prime: x.iter().map(|&v| act.gamma_prime(v)).collect(),
        x,
        bounded: report.bounded,
        monotone: report.monotone,
        max_derivative_error: report.max_derivative_error,
    })
}

#[derive(Serialize)]
struct FlowSeries {
    time: Vec<f64>,
    loss: Vec<f64>,
    nuclear_norm: Vec<f64>,
    residual_inf: Vec<f64>,
    sigma_star: Vec<f64>,
    final_spectrum: Vec<f64>,
}

/// Reduced gradient flow on a commuting `d x d` ensemble from spectral
/// initialization.
pub fn commuting_flow_json(seed: u64, d: usize, m: usize, k: usize, dt: f64, n_steps: usize) -> Result<String> {
    if d == 0 || d > 32 || m == 0 || m > 500 || k == 0 || k > 8 || n_steps == 0 || n_steps > 200_000 {
        return Err(Error::ConfigInvalid {
            field: "size".into(),
            message: "need 1 <= d <= 32, 1 <= m <= 500, 1 <= k <= 8, 1 <= n_steps <= 200000".into(),
        });
    }
    let act = ActivationFn::tanh();
    let target = gen_ground_truth(d, d, d, seed)?;
    let (mut e, truth) = gen_commuting_ensemble(d, d, m, seed, &target, PhiPsiSource::SvdOfTarget)?;
    measure(&mut e, &truth.x_star, 0.0, seed)?;
    let ctx = FlowContext::from_ensemble(&e, act)?;
    let init = spectral_init(e.phi.as_ref().expect("commuting"), e.psi.as_ref().expect("commuting"), &ctx.sigma_star, k, d, seed, &act)?;
    let stride = (n_steps / 400).max(1);
    let (state, traj) = integrate(&init.state, &ctx, dt, n_steps, Scheme::Euler, stride)?;
    to_json(&FlowSeries {
        time: traj.rows.iter().map(|r| r.time).collect(),
        loss: traj.rows.iter().map(|r| r.loss).collect(),
        nuclear_norm: traj.rows.iter().map(|r| r.nuclear_norm).collect(),
        residual_inf: traj.rows.iter().map(|r| r.residual_inf).collect(),
        final_spectrum: state.h_alpha(&act),
        sigma_star: ctx.sigma_star,
    })
}

#[derive(Serialize)]
struct ModelResult {
    loss: f64,
    nuclear_norm: f64,
    psnr: f64,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Comparison {
    truth: Vec<Vec<f64>>,
    snn: ModelResult,
    linear_regression: ModelResult,
}

fn rows(x: &Mat) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|i| (0..x.cols()).map(|j| x[(i, j)]).collect()).collect()
}

/// SNN against linear regression on a shared Gaussian ensemble.
pub fn compare_json(seed: u64, d: usize, m: usize, lr: f64, snn_steps: usize, lr_steps: usize) -> Result<String> {
    if d == 0 || d > 16 || m == 0 || m > 400 || snn_steps == 0 || lr_steps == 0 || snn_steps > 50_000 || lr_steps > 200_000 {
        return Err(Error::ConfigInvalid {
            field: "size".into(),
            message: "need 1 <= d <= 16, 1 <= m <= 400 and step counts within 50000 / 200000".into(),
        });
    }
    let truth = gen_ground_truth(d, d, d, seed)?;
    let mut e = gen_gaussian_ensemble(d, d, m, seed)?;
    measure(&mut e, &truth.x_star, 0.0, seed)?;
    let snn = ModelKind::SnnDepth1(near_zero_init(d, d, d, 2, 1e-4, 1e-6, seed, &ActivationFn::tanh())?);
    let mut results = Vec::with_capacity(2);
    for (model, steps) in [(snn, snn_steps), (ModelKind::linear_regression(d, d), lr_steps)] {
        let mut cfg = TrainConfig::new(lr, steps);
        cfg.record_stride = steps;
        let run = train(&model, &e, &cfg, Monitor { truth: Some(&truth.x_star), snapshot_steps: &[] })?;
        let last = run.trajectory.last().expect("train records the first step");
        results.push(ModelResult {
            loss: last.loss,
            nuclear_norm: last.nuclear_norm,
            psnr: last.psnr.unwrap_or(f64::NAN),
            matrix: rows(&run.model.matrix()?),
        });
    }
    let linear_regression = results.pop().expect("two runs");
    let snn = results.pop().expect("two runs");
    to_json(&Comparison { truth: rows(&truth.x_star), snn, linear_regression })
}

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&format!("{}: {e}", e.kind())))
}

#[wasm_bindgen]
pub fn activation_curve(name: &str, clamped: bool, lo: f64, hi: f64, n: usize) -> std::result::Result<String, JsValue> {
    js(activation_curve_json(name, clamped, lo, hi, n))
}

#[wasm_bindgen]
pub fn commuting_flow(seed: u32, d: usize, m: usize, k: usize, dt: f64, n_steps: usize) -> std::result::Result<String, JsValue> {
    js(commuting_flow_json(u64::from(seed), d, m, k, dt, n_steps))
}

#[wasm_bindgen]
pub fn compare(seed: u32, d: usize, m: usize, lr: f64, snn_steps: usize, lr_steps: usize) -> std::result::Result<String, JsValue> {
    js(compare_json(u64::from(seed), d, m, lr, snn_steps, lr_steps))
}
