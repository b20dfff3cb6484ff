//! Gradient descent in the general setting: SNN blocks trained through the
//! spectral activation, plus linear-regression and depth-3 baselines.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationFn;
use crate::diagnostics::{effective_rank_of_spectrum, psnr};
use crate::error::{Error, Result};
use crate::linalg::{self, compact_svd, frobenius_inner, lstsq_min_norm, CompactSvd, Mat};
use crate::measurements::MeasurementEnsemble;
use crate::model::{self, SnnParams};
use crate::trajectory::{Trajectory, TrajectoryRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SnnDepth1(SnnParams),
    LinearRegression(Mat),
    Depth3Factorization { w1: Mat, w2: Mat, w3: Mat },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::SnnDepth1(_) => "snn",
            ModelKind::LinearRegression(_) => "linear_regression",
            ModelKind::Depth3Factorization { .. } => "depth3",
        }
    }

    /// Linear regression from `X(0) = 0`.
    pub fn linear_regression(d1: usize, d2: usize) -> Self {
        ModelKind::LinearRegression(Mat::zeros(d1, d2))
    }

    /// Depth-3 factorization with every factor `scale · I`.
    pub fn depth3(d1: usize, d2: usize, scale: f64) -> Self {
        ModelKind::Depth3Factorization {
            w1: Mat::identity(d1).scale(scale),
            w2: Mat::identity(d1).scale(scale),
            w3: Mat::rect_identity(d1, d2).scale(scale),
        }
    }

    /// The matrix the model currently represents.
    pub fn matrix(&self) -> Result<Mat> {
        match self {
            ModelKind::SnnDepth1(p) => model::snn_forward(p),
            ModelKind::LinearRegression(x) => Ok(x.clone()),
            ModelKind::Depth3Factorization { w1, w2, w3 } => Ok(w1.matmul(w2).matmul(w3)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    FiniteDifference,
    #[default]
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub record_stride: usize,
    pub gradient_mode: GradientMode,
    /// Relative step for finite differences.
    pub fd_step: f64,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, n_steps: usize) -> Self {
        TrainConfig {
            learning_rate,
            n_steps,
            record_stride: 10,
            gradient_mode: GradientMode::Analytic,
            fd_step: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid {
                field: "learning_rate".into(),
                message: format!("must be positive, got {}", self.learning_rate),
            });
        }
        if self.n_steps == 0 || self.record_stride == 0 {
            return Err(Error::ConfigInvalid {
                field: "n_steps".into(),
                message: "n_steps and record_stride must be positive".into(),
            });
        }
        if self.fd_step.is_nan() || self.fd_step <= 0.0 {
            return Err(Error::ConfigInvalid {
                field: "fd_step".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to `(α, U_k, V_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnGradient {
    pub alpha: Vec<f64>,
    pub u: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl SnnGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.alpha.clone();
        for m in self.u.iter().chain(&self.v) {
            out.extend_from_slice(m.data());
        }
        out
    }

    /// `‖self - other‖ / max(‖other‖, floor)` over all components.
    pub fn relative_error(&self, other: &SnnGradient, floor: f64) -> f64 {
        let a = self.to_flat();
        let b = other.to_flat();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        linalg::norm2(&diff) / linalg::norm2(&b).max(floor)
    }

    fn from_flat(template: &SnnParams, flat: &[f64]) -> Result<Self> {
        let p = template.with_flat(flat)?;
        Ok(SnnGradient { alpha: p.alpha, u: p.u, v: p.v })
    }
}

/// Central differences of `f` at `theta`, with per-coordinate step
/// `h · max(1, |θ_i|)`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> Result<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut work = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let step = h * theta[i].abs().max(1.0);
        work[i] = theta[i] + step;
        let plus = f(&work)?;
        work[i] = theta[i] - step;
        let minus = f(&work)?;
        work[i] = theta[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Finite-difference gradient of `loss(snn_forward(p), e)`.
pub fn grad_fd(p: &SnnParams, e: &MeasurementEnsemble, h: f64) -> Result<SnnGradient> {
    let flat = central_difference(
        |theta| model::loss(&model::snn_forward(&p.with_flat(theta)?)?, e),
        &p.to_flat(),
        h,
    )?;
    SnnGradient::from_flat(p, &flat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGradient {
    pub grad: SnnGradient,
    /// Set when the closed form was not applicable and finite differences
    /// were used instead.
    pub degenerate: bool,
}

/// Singular values below this count as zero when `γ(0) ≠ 0`.
const DEGENERATE_SIGMA: f64 = 1e-8;

/// SVD of one factor product, transposed internally when tall.
struct Spectral {
    svd: CompactSvd,
    transposed: bool,
}

impl Spectral {
    fn new(z: &Mat) -> Result<Self> {
        let transposed = z.rows() > z.cols();
        let svd = if transposed { compact_svd(&z.transpose())? } else { compact_svd(z)? };
        Ok(Spectral { svd, transposed })
    }

    fn activated(&self, act: &ActivationFn) -> Mat {
        let mut s = self.svd.clone();
        s.sigma.iter_mut().for_each(|x| *x = act.gamma(*x));
        let m = s.reconstruct();
        if self.transposed {
            m.transpose()
        } else {
            m
        }
    }

    /// Adjoint of the differential of `Γ` at `Z`, applied to `g`:
    /// the matrix `D` with `⟨g, dΓ[dZ]⟩ = ⟨D, dZ⟩`. `None` when the
    /// spectrum is too close to zero for the closed form with `γ(0) ≠ 0`.
    fn adjoint(&self, g: &Mat, act: &ActivationFn) -> Option<Mat> {
        let g = if self.transposed { g.transpose() } else { g.clone() };
        let CompactSvd { phi, sigma, psi } = &self.svd;
        let n = sigma.len();
        let gamma0 = act.gamma(0.0);
        let smin = sigma.iter().copied().fold(f64::INFINITY, f64::min);
        if gamma0.abs() > 1e-15 && smin < DEGENERATE_SIGMA {
            return None;
        }
        let f: Vec<f64> = sigma.iter().map(|&s| act.gamma(s)).collect();
        let fp0 = act.gamma_prime(0.0);

        let r = phi.t_matmul(&g).matmul(psi);
        let mut d = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (si, sj) = (sigma[i], sigma[j]);
                if i == j {
                    d[(i, i)] = act.gamma_prime(si) * r[(i, i)];
                    continue;
                }
                let gap = si - sj;
                let a = if gap.abs() > 1e-6 * (si + sj).max(1.0) {
                    (f[i] - f[j]) / gap
                } else {
                    act.gamma_prime(0.5 * (si + sj))
                };
                let sum = si + sj;
                let b = if sum > DEGENERATE_SIGMA { (f[i] + f[j]) / sum } else { fp0 };
                let sym = 0.5 * (r[(i, j)] + r[(j, i)]);
                let skew = 0.5 * (r[(i, j)] - r[(j, i)]);
                d[(i, j)] = a * sym + b * skew;
            }
        }
        let mut out = phi.matmul(&d).matmul_t(psi);

        // directions leaving the row space of Z
        let c: Vec<f64> = sigma
            .iter()
            .zip(&f)
            .map(|(&s, &fs)| if s > DEGENERATE_SIGMA { fs / s } else { fp0 })
            .collect();
        let g_perp = g.sub(&g.matmul(psi).matmul_t(psi));
        if g_perp.max_abs() > 0.0 {
            let mut scaled_phi = phi.clone();
            for i in 0..n {
                for (j, cj) in c.iter().enumerate() {
                    scaled_phi[(i, j)] *= cj;
                }
            }
            out.axpy(1.0, &scaled_phi.matmul_t(phi).matmul(&g_perp));
        }
        Some(if self.transposed { out.transpose() } else { out })
    }
}

/// Closed-form gradient through the spectral activation, using divided
/// differences of `γ` across singular-value pairs. Falls back to
/// [`grad_fd`] (and sets `degenerate`) when `γ(0) ≠ 0` and a factor
/// product is numerically singular.
pub fn grad_analytic(p: &SnnParams, e: &MeasurementEnsemble) -> Result<AnalyticGradient> {
    let act = &p.activation;
    let spectra: Vec<Spectral> = model::factor_products(p).iter().map(Spectral::new).collect::<Result<_>>()?;
    let activated: Vec<Mat> = spectra.iter().map(|s| s.activated(act)).collect();
    let (d1, d2, _) = p.dims();
    let mut x = Mat::zeros(d1, d2);
    for (a, g) in p.alpha.iter().zip(&activated) {
        x.axpy(*a, g);
    }
    let r = e.residuals(&x)?;
    let neg: Vec<f64> = r.iter().map(|v| -v).collect();
    let gx = e.adjoint(&neg)?;

    let mut alpha = Vec::with_capacity(p.k());
    let mut u = Vec::with_capacity(p.k());
    let mut v = Vec::with_capacity(p.k());
    for k in 0..p.k() {
        alpha.push(frobenius_inner(&gx, &activated[k])?);
        let Some(adj) = spectra[k].adjoint(&gx, act) else {
            return Ok(AnalyticGradient { grad: grad_fd(p, e, 1e-6)?, degenerate: true });
        };
        let gz = adj.scale(p.alpha[k]);
        u.push(gz.matmul(&p.v[k]));
        v.push(gz.t_matmul(&p.u[k]));
    }
    Ok(AnalyticGradient { grad: SnnGradient { alpha, u, v }, degenerate: false })
}

/// `∇_X ℓ = -Σ_j r_j A_j`.
pub fn linear_regression_grad(x: &Mat, e: &MeasurementEnsemble) -> Result<Mat> {
    let neg: Vec<f64> = e.residuals(x)?.iter().map(|r| -r).collect();
    e.adjoint(&neg)
}

/// Gradients of the loss at `X = W_1 W_2 W_3`.
pub fn depth3_grad(w1: &Mat, w2: &Mat, w3: &Mat, e: &MeasurementEnsemble) -> Result<(Mat, Mat, Mat)> {
    let (d1, d2) = e.shape();
    if w1.shape() != (d1, d1) || w2.shape() != (d1, d1) || w3.shape() != (d1, d2) {
        return Err(Error::dims(
            "depth3_grad",
            format!("{d1}x{d1}, {d1}x{d1}, {d1}x{d2}"),
            format!("{}x{}, {}x{}, {}x{}", w1.rows(), w1.cols(), w2.rows(), w2.cols(), w3.rows(), w3.cols()),
        ));
    }
    let w12 = w1.matmul(w2);
    let w23 = w2.matmul(w3);
    let g = linear_regression_grad(&w12.matmul(w3), e)?;
    Ok((g.matmul_t(&w23), w1.t_matmul(&g).matmul_t(w3), w12.t_matmul(&g)))
}

/// Minimum-Frobenius-norm matrix satisfying the measurements in the
/// least-squares sense.
pub fn min_norm_interpolant(e: &MeasurementEnsemble) -> Result<Mat> {
    let (d1, d2) = e.shape();
    let v = lstsq_min_norm(&e.operator_matrix(), &e.y)?;
    linalg::unvec(&v, d1, d2)
}

/// Optional observers for [`train`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Monitor<'a> {
    /// Reference matrix for the PSNR column.
    pub truth: Option<&'a Mat>,
    /// Steps at which to keep a copy of `X`.
    pub snapshot_steps: &'a [u64],
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: ModelKind,
    pub trajectory: Trajectory,
    pub snapshots: Vec<(u64, Mat)>,
    /// Steps where the analytic gradient fell back to finite differences.
    pub fd_fallbacks: usize,
}

fn record_row(step: u64, lr: f64, x: &Mat, e: &MeasurementEnsemble, truth: Option<&Mat>) -> Result<(TrajectoryRow, f64)> {
    let r = e.residuals(x)?;
    let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let sv = linalg::singular_values(x)?;
    let mut top3 = [0.0; 3];
    for (t, s) in top3.iter_mut().zip(&sv) {
        *t = *s;
    }
    let row = TrajectoryRow {
        step,
        time: step as f64 * lr,
        loss,
        nuclear_norm: sv.iter().sum(),
        sigma_top3: top3,
        residual_inf: r.iter().fold(0.0, |m, v| m.max(v.abs())),
        q_drift: None,
        psnr: truth.map(|t| psnr(x, t)).transpose()?,
        eff_rank: effective_rank_of_spectrum(&sv).ok(),
    };
    Ok((row, loss))
}

/// Plain gradient descent `θ ← θ - lr ∇ℓ`.
pub fn train(model: &ModelKind, e: &MeasurementEnsemble, cfg: &TrainConfig, monitor: Monitor<'_>) -> Result<TrainRun> {
    cfg.validate()?;
    let lr = cfg.learning_rate;
    let mut model = model.clone();
    let mut trajectory = Trajectory::default();
    let mut snapshots = Vec::new();
    let mut fd_fallbacks = 0;

    let x0 = model.matrix()?;
    let (row, initial_loss) = record_row(0, lr, &x0, e, monitor.truth)?;
    trajectory.rows.push(row);
    if monitor.snapshot_steps.contains(&0) {
        snapshots.push((0, x0));
    }
    let limit = 1e6 * initial_loss.max(1e-12);

    for n in 1..=cfg.n_steps {
        match &mut model {
            ModelKind::SnnDepth1(p) => {
                let grad = match cfg.gradient_mode {
                    GradientMode::FiniteDifference => grad_fd(p, e, cfg.fd_step)?,
                    GradientMode::Analytic => {
                        let g = grad_analytic(p, e)?;
                        fd_fallbacks += usize::from(g.degenerate);
                        g.grad
                    }
                };
                let flat: Vec<f64> = p.to_flat().iter().zip(grad.to_flat()).map(|(t, g)| t - lr * g).collect();
                if flat.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Divergence { step: n, loss: f64::INFINITY });
                }
                *p = p.with_flat(&flat)?;
            }
            ModelKind::LinearRegression(x) => {
                let g = linear_regression_grad(x, e)?;
                x.axpy(-lr, &g);
            }
            ModelKind::Depth3Factorization { w1, w2, w3 } => {
                let (g1, g2, g3) = depth3_grad(w1, w2, w3, e)?;
                w1.axpy(-lr, &g1);
                w2.axpy(-lr, &g2);
                w3.axpy(-lr, &g3);
            }
        }
        let step = n as u64;
        let x = model.matrix()?;
        let loss = model::loss(&x, e)?;
        if !loss.is_finite() || loss > limit {
            return Err(Error::Divergence { step: n, loss });
        }
        if n % cfg.record_stride == 0 || n == cfg.n_steps {
            trajectory.rows.push(record_row(step, lr, &x, e, monitor.truth)?.0);
        }
        if monitor.snapshot_steps.contains(&step) {
            snapshots.push((step, x));
        }
    }
    Ok(TrainRun { model, trajectory, snapshots, fd_fallbacks })
}
