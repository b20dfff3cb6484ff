//! Closed-form gradient flow in diagonal coordinates.
//!
//! Under commuting measurements and spectral initialization the factors
//! stay of the form `U_k = Φ Ū_k G`, `V_k = Ψ V̄_k G` with diagonal `Ū_k`,
//! `V̄_k`, and the flow of `(α, ū_k, v̄_k)` is
//!
//! ```text
//! λ^(k) = α_k γ'(z^(k)) ∘ C(σ* - Hα)
//! α'    = H^T C(σ* - Hα)
//! ū_k'  = λ^(k) ∘ v̄_k
//! v̄_k'  = λ^(k) ∘ ū_k
//! ```
//!
//! with `z^(k) = ū_k ∘ v̄_k` and `H = [γ(z^(1)) | ... | γ(z^(K))]`.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationFn;
use crate::diagnostics::effective_rank_of_spectrum;
use crate::error::{Error, Result};
use crate::linalg::{self, lstsq_min_norm, Mat};
use crate::measurements::{EnsembleKind, MeasurementEnsemble};
use crate::model::SnnParams;
use crate::trajectory::{Trajectory, TrajectoryRow};

/// Magnitude beyond which an integrator step is treated as blown up.
pub const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub alpha: Vec<f64>,
    /// Diagonals of `Ū_k`, each of length `d1`.
    pub ubar: Vec<Vec<f64>>,
    /// Diagonals of `V̄_k`, each of length `d1`.
    pub vbar: Vec<Vec<f64>>,
}

impl ReducedState {
    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn d1(&self) -> usize {
        self.ubar.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        let k = self.k();
        let d1 = self.d1();
        if k == 0 || self.ubar.len() != k || self.vbar.len() != k || self.ubar.iter().chain(&self.vbar).any(|v| v.len() != d1) {
            return Err(Error::dims("ReducedState", format!("K = {k} diagonals of length {d1}"), "ragged state"));
        }
        Ok(())
    }

    /// `z^(k) = ū_k ∘ v̄_k`.
    pub fn z(&self, k: usize) -> Vec<f64> {
        self.ubar[k].iter().zip(&self.vbar[k]).map(|(u, v)| u * v).collect()
    }

    /// `w^(k) = ½(ū_k² + v̄_k²)`.
    pub fn w(&self, k: usize) -> Vec<f64> {
        self.ubar[k].iter().zip(&self.vbar[k]).map(|(u, v)| 0.5 * (u * u + v * v)).collect()
    }

    /// `d1 x K` matrix with column `k` equal to `γ(z^(k))`.
    pub fn h(&self, act: &ActivationFn) -> Mat {
        let zs: Vec<Vec<f64>> = (0..self.k()).map(|k| self.z(k)).collect();
        Mat::from_fn(self.d1(), self.k(), |i, k| act.gamma(zs[k][i]))
    }

    /// `Hα`, the spectrum of the lifted `X` in the `(Φ, Ψ)` basis.
    pub fn h_alpha(&self, act: &ActivationFn) -> Vec<f64> {
        let mut out = vec![0.0; self.d1()];
        for k in 0..self.k() {
            for (o, z) in out.iter_mut().zip(self.z(k)) {
                *o += self.alpha[k] * act.gamma(z);
            }
        }
        out
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.alpha.iter().chain(self.ubar.iter().flatten()).chain(self.vbar.iter().flatten())
    }

    fn blown_up(&self) -> bool {
        self.values().any(|x| !x.is_finite() || x.abs() > BLOW_UP)
    }

    /// `self + h * other`.
    fn offset(&self, h: f64, other: &ReducedState) -> ReducedState {
        let axpy = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + h * y).collect::<Vec<_>>();
        ReducedState {
            alpha: axpy(&self.alpha, &other.alpha),
            ubar: self.ubar.iter().zip(&other.ubar).map(|(a, b)| axpy(a, b)).collect(),
            vbar: self.vbar.iter().zip(&other.vbar).map(|(a, b)| axpy(a, b)).collect(),
        }
    }
}

/// Spectral data the flow depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowContext {
    /// `B B^T`.
    pub c: Mat,
    /// Target spectrum the flow converges to.
    pub sigma_star: Vec<f64>,
    pub act: ActivationFn,
    /// `B` and the labels, used to report the loss of the lifted matrix.
    pub b: Option<Mat>,
    pub y: Option<Vec<f64>>,
}

impl FlowContext {
    pub fn new(c: Mat, sigma_star: Vec<f64>, act: ActivationFn) -> Result<Self> {
        let d1 = sigma_star.len();
        if c.shape() != (d1, d1) {
            return Err(Error::dims("FlowContext", format!("{d1}x{d1}"), format!("{}x{}", c.rows(), c.cols())));
        }
        if c.sub(&c.transpose()).max_abs() > 1e-12 * c.max_abs().max(1.0) || c.data().iter().any(|&x| x < 0.0) {
            return Err(Error::InvariantViolation("C must be symmetric with non-negative entries".into()));
        }
        Ok(FlowContext { c, sigma_star, act, b: None, y: None })
    }

    /// Context for a commuting ensemble. With noisy labels the target is
    /// the least-squares spectrum `argmin_s ‖B^T s - y‖`, the point the
    /// flow actually converges to.
    pub fn from_ensemble(e: &MeasurementEnsemble, act: ActivationFn) -> Result<Self> {
        let (EnsembleKind::Commuting, Some(b), Some(c), Some(sigma)) = (e.kind, &e.b, &e.c, &e.sigma_star) else {
            return Err(Error::InvariantViolation("the reduced flow needs a commuting ensemble".into()));
        };
        let target = if e.noise_std > 0.0 {
            lstsq_min_norm(&b.transpose(), &e.y)?
        } else {
            sigma.clone()
        };
        let mut ctx = FlowContext::new(c.clone(), target, act)?;
        ctx.b = Some(b.clone());
        ctx.y = Some(e.y.clone());
        Ok(ctx)
    }

    /// `σ* - Hα`.
    pub fn residual(&self, s: &ReducedState) -> Vec<f64> {
        self.sigma_star.iter().zip(s.h_alpha(&self.act)).map(|(a, b)| a - b).collect()
    }

    /// Loss of the lifted matrix, `½‖y - B^T Hα‖²`; falls back to
    /// `½ r^T C r` in spectral coordinates when no labels are attached.
    pub fn loss(&self, s: &ReducedState) -> f64 {
        match (&self.b, &self.y) {
            (Some(b), Some(y)) => {
                let pred = b.t_matvec(&s.h_alpha(&self.act));
                0.5 * y.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>()
            }
            _ => {
                let r = self.residual(s);
                0.5 * linalg::dot(&r, &self.c.matvec(&r))
            }
        }
    }

    fn check(&self, s: &ReducedState) -> Result<()> {
        s.check()?;
        if s.d1() != self.sigma_star.len() {
            return Err(Error::dims("FlowContext", self.sigma_star.len(), s.d1()));
        }
        Ok(())
    }
}

/// `λ^(k) = α_k γ'(z^(k)) ∘ C(σ* - Hα)` for every `k`.
pub fn compute_lambda(s: &ReducedState, ctx: &FlowContext) -> Result<Vec<Vec<f64>>> {
    ctx.check(s)?;
    let cr = ctx.c.matvec(&ctx.residual(s));
    Ok(lambda_from(s, ctx, &cr))
}

fn lambda_from(s: &ReducedState, ctx: &FlowContext, cr: &[f64]) -> Vec<Vec<f64>> {
    (0..s.k())
        .map(|k| {
            s.z(k)
                .iter()
                .zip(cr)
                .map(|(&z, &c)| s.alpha[k] * ctx.act.gamma_prime(z) * c)
                .collect()
        })
        .collect()
}

/// Time derivative of the reduced state.
pub fn flow_rhs(s: &ReducedState, ctx: &FlowContext) -> Result<ReducedState> {
    ctx.check(s)?;
    let cr = ctx.c.matvec(&ctx.residual(s));
    let lambda = lambda_from(s, ctx, &cr);
    let dalpha = s.h(&ctx.act).t_matvec(&cr);
    let hadamard = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    Ok(ReducedState {
        alpha: dalpha,
        ubar: lambda.iter().zip(&s.vbar).map(|(l, v)| hadamard(l, v)).collect(),
        vbar: lambda.iter().zip(&s.ubar).map(|(l, u)| hadamard(l, u)).collect(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Gradient descent with learning rate `dt`.
    #[default]
    Euler,
    Rk4,
}

/// One integrator step. Blow-ups are reported as `StepBlowUp { step: 0 }`;
/// [`integrate`] fills in the real index.
pub fn step(s: &ReducedState, ctx: &FlowContext, dt: f64, scheme: Scheme) -> Result<ReducedState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvariantViolation(format!("time step must be positive, got {dt}")));
    }
    let next = match scheme {
        Scheme::Euler => s.offset(dt, &flow_rhs(s, ctx)?),
        Scheme::Rk4 => {
            let k1 = flow_rhs(s, ctx)?;
            let k2 = flow_rhs(&s.offset(dt / 2.0, &k1), ctx)?;
            let k3 = flow_rhs(&s.offset(dt / 2.0, &k2), ctx)?;
            let k4 = flow_rhs(&s.offset(dt, &k3), ctx)?;
            s.offset(dt / 6.0, &k1).offset(dt / 3.0, &k2).offset(dt / 3.0, &k3).offset(dt / 6.0, &k4)
        }
    };
    if next.blown_up() {
        return Err(Error::StepBlowUp { step: 0 });
    }
    Ok(next)
}

/// `w² - z²` per neuron and coordinate; constant along the exact flow.
pub fn conserved_q(s: &ReducedState) -> Vec<Vec<f64>> {
    (0..s.k())
        .map(|k| s.w(k).iter().zip(s.z(k)).map(|(w, z)| w * w - z * z).collect())
        .collect()
}

fn max_drift(q: &[Vec<f64>], q0: &[Vec<f64>]) -> f64 {
    q.iter()
        .flatten()
        .zip(q0.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn record(step: u64, dt: f64, s: &ReducedState, ctx: &FlowContext, q0: &[Vec<f64>], traj: &mut Trajectory) {
    let residual = ctx.residual(s);
    let mut spectrum: Vec<f64> = s.h_alpha(&ctx.act).iter().map(|x| x.abs()).collect();
    spectrum.sort_by(|a, b| b.partial_cmp(a).expect("finite spectrum"));
    let mut top3 = [0.0; 3];
    for (t, s) in top3.iter_mut().zip(&spectrum) {
        *t = *s;
    }
    traj.rows.push(TrajectoryRow {
        step,
        time: step as f64 * dt,
        loss: ctx.loss(s),
        nuclear_norm: spectrum.iter().sum(),
        sigma_top3: top3,
        residual_inf: residual.iter().fold(0.0, |m, r| m.max(r.abs())),
        q_drift: Some(max_drift(&conserved_q(s), q0)),
        psnr: None,
        eff_rank: effective_rank_of_spectrum(&spectrum).ok(),
    });
    traj.residuals.push(residual);
}

/// Integrates `n_steps` steps, recording every `stride` steps plus the
/// first and last.
pub fn integrate(
    s0: &ReducedState,
    ctx: &FlowContext,
    dt: f64,
    n_steps: usize,
    scheme: Scheme,
    stride: usize,
) -> Result<(ReducedState, Trajectory)> {
    if n_steps == 0 || stride == 0 {
        return Err(Error::InvariantViolation("n_steps and stride must be positive".into()));
    }
    ctx.check(s0)?;
    let q0 = conserved_q(s0);
    let mut traj = Trajectory::default();
    record(0, dt, s0, ctx, &q0, &mut traj);
    let mut s = s0.clone();
    for n in 1..=n_steps {
        s = step(&s, ctx, dt, scheme).map_err(|e| match e {
            Error::StepBlowUp { .. } => Error::StepBlowUp { step: n },
            other => other,
        })?;
        if n % stride == 0 || n == n_steps {
            record(n as u64, dt, &s, ctx, &q0, &mut traj);
        }
    }
    Ok((s, traj))
}

/// Result of [`integrate_adaptive`].
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub state: ReducedState,
    pub trajectory: Trajectory,
    /// Step size actually used.
    pub dt: f64,
    pub halvings: usize,
}

/// [`integrate`] with the step halved (and the step count and stride
/// doubled, keeping the horizon) after each blow-up, at most
/// `max_halvings` times.
pub fn integrate_adaptive(
    s0: &ReducedState,
    ctx: &FlowContext,
    dt: f64,
    n_steps: usize,
    scheme: Scheme,
    stride: usize,
    max_halvings: usize,
) -> Result<FlowRun> {
    let mut dt = dt;
    let mut n_steps = n_steps;
    let mut stride = stride;
    for halvings in 0..=max_halvings {
        match integrate(s0, ctx, dt, n_steps, scheme, stride) {
            Ok((state, trajectory)) => {
                return Ok(FlowRun {
                    state,
                    trajectory,
                    dt,
                    halvings,
                })
            }
            Err(Error::StepBlowUp { step }) if halvings < max_halvings => {
                let _ = step;
                dt /= 2.0;
                n_steps *= 2;
                stride *= 2;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Lifts a reduced state to full parameters `U_k = Φ Ū_k G`,
/// `V_k = Ψ V̄_k G` and the matrix `X = Φ Diag(Hα) Ψ^T`.
pub fn lift(s: &ReducedState, phi: &Mat, psi: &Mat, g: &Mat, act: &ActivationFn) -> Result<(SnnParams, Mat)> {
    s.check()?;
    let d1 = phi.rows();
    let d = g.rows();
    if s.d1() != d1 || phi.cols() != d1 || psi.cols() != d1 || g.cols() != d || d < d1 {
        return Err(Error::dims(
            "lift",
            format!("phi {0}x{0}, psi d2x{0}, g dxd with d >= {0}", s.d1()),
            format!("phi {}x{}, psi {}x{}, g {}x{}", phi.rows(), phi.cols(), psi.rows(), psi.cols(), g.rows(), g.cols()),
        ));
    }
    let mut u = Vec::with_capacity(s.k());
    let mut v = Vec::with_capacity(s.k());
    for k in 0..s.k() {
        u.push(phi.matmul(&linalg::rect_diag(&s.ubar[k], d1, d)?).matmul(g));
        v.push(psi.matmul(&linalg::rect_diag(&s.vbar[k], d1, d)?).matmul(g));
    }
    let params = SnnParams::new(s.alpha.clone(), u, v, *act)?;
    let x = phi.matmul(&linalg::rect_diag(&s.h_alpha(act), d1, d1)?).matmul_t(psi);
    Ok((params, x))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::descent::grad_fd;
    use crate::measurements::{gen_commuting_ensemble, gen_ground_truth, measure, PhiPsiSource};
    use crate::model::{snn_forward, spectral_init};
    use crate::rng::{self, stream, Stream};
    use proptest::prelude::*;

    struct Setup {
        e: MeasurementEnsemble,
        ctx: FlowContext,
        s0: ReducedState,
        g: Mat,
    }

    fn setup(d: usize, m: usize, seed: u64) -> Setup {
        let truth = gen_ground_truth(d, d, d / 2 + 1, seed).unwrap();
        let (e, _) = gen_commuting_ensemble(d, d, m, seed, &truth, PhiPsiSource::SvdOfTarget).unwrap();
        let act = ActivationFn::tanh();
        let ctx = FlowContext::from_ensemble(&e, act).unwrap();
        let init = spectral_init(e.phi.as_ref().unwrap(), e.psi.as_ref().unwrap(), &ctx.sigma_star, 2, d, seed, &act).unwrap();
        Setup { e, ctx, s0: init.state, g: init.g }
    }

    fn perturbed(s: &ReducedState, seed: u64, scale: f64) -> ReducedState {
        let mut r = stream(seed, Stream::Perturbation);
        let mut jitter = |v: &Vec<f64>| v.iter().map(|x| x + scale * rng::normal(&mut r)).collect::<Vec<_>>();
        ReducedState {
            alpha: jitter(&s.alpha),
            ubar: s.ubar.iter().map(&mut jitter).collect(),
            vbar: s.vbar.iter().map(&mut jitter).collect(),
        }
    }

    fn stationary(ctx: &FlowContext, s: &ReducedState) -> FlowContext {
        FlowContext::new(ctx.c.clone(), s.h_alpha(&ctx.act), ctx.act).unwrap()
    }

    #[test]
    fn lambda_vanishes_at_zero_residual_and_zero_alpha() {
        let su = setup(5, 12, 1);
        let ctx = stationary(&su.ctx, &su.s0);
        assert!(compute_lambda(&su.s0, &ctx).unwrap().iter().flatten().all(|&l| l.abs() < 1e-15));
        let mut s = su.s0.clone();
        s.alpha[1] = 0.0;
        let lam = compute_lambda(&s, &su.ctx).unwrap();
        assert!(lam[1].iter().all(|&l| l == 0.0));
    }

    #[test]
    fn lambda_matches_entrywise_formula() {
        let su = setup(5, 12, 2);
        let s = perturbed(&su.s0, 2, 0.1);
        let lam = compute_lambda(&s, &su.ctx).unwrap();
        let h_alpha = s.h_alpha(&su.ctx.act);
        for k in 0..2 {
            for i in 0..5 {
                let mut cr = 0.0;
                for j in 0..5 {
                    cr += su.ctx.c[(i, j)] * (su.ctx.sigma_star[j] - h_alpha[j]);
                }
                let z = s.ubar[k][i] * s.vbar[k][i];
                let expected = s.alpha[k] * (1.0 - z.tanh().powi(2)) * cr;
                assert!((lam[k][i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rhs_is_zero_at_stationary_point() {
        let su = setup(4, 9, 3);
        let ctx = stationary(&su.ctx, &su.s0);
        let d = flow_rhs(&su.s0, &ctx).unwrap();
        assert!(d.values().all(|x| x.abs() < 1e-15));
        let next = step(&su.s0, &ctx, 1e-2, Scheme::Euler).unwrap();
        assert!(next.offset(-1.0, &su.s0).values().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn h_alpha_increases_from_spectral_init() {
        let su = setup(10, 50, 4);
        let d = flow_rhs(&su.s0, &su.ctx).unwrap();
        // (Hα)' = H' α + H α'
        let h = su.s0.h(&su.ctx.act);
        let h_dalpha = h.matvec(&d.alpha);
        for i in 0..10 {
            let mut dh = h_dalpha[i];
            for k in 0..2 {
                let z = su.s0.z(k)[i];
                let dz = d.ubar[k][i] * su.s0.vbar[k][i] + su.s0.ubar[k][i] * d.vbar[k][i];
                dh += su.s0.alpha[k] * su.ctx.act.gamma_prime(z) * dz;
            }
            assert!(dh >= 0.0, "coordinate {i} decreases at t = 0");
        }
    }

    #[test]
    fn rhs_matches_full_parameter_gradient() {
        let su = setup(4, 9, 5);
        let (phi, psi) = (su.e.phi.as_ref().unwrap(), su.e.psi.as_ref().unwrap());
        let s = perturbed(&su.s0, 5, 0.05);
        let (params, _) = lift(&s, phi, psi, &su.g, &su.ctx.act).unwrap();
        let grad = grad_fd(&params, &su.e, 1e-6).unwrap();
        let rhs = flow_rhs(&s, &su.ctx).unwrap();
        // reduced derivatives are the negated gradient pulled back through the lift
        for k in 0..2 {
            assert!((grad.alpha[k] + rhs.alpha[k]).abs() <= 1e-5 * rhs.alpha[k].abs().max(1e-3));
            let gu = phi.t_matmul(&grad.u[k]).matmul_t(&su.g);
            let gv = psi.t_matmul(&grad.v[k]).matmul_t(&su.g);
            for i in 0..4 {
                assert!((gu[(i, i)] + rhs.ubar[k][i]).abs() <= 1e-5 * rhs.ubar[k][i].abs().max(1e-3));
                assert!((gv[(i, i)] + rhs.vbar[k][i]).abs() <= 1e-5 * rhs.vbar[k][i].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn euler_step_is_first_order_consistent() {
        let su = setup(5, 12, 6);
        let rhs = flow_rhs(&su.s0, &su.ctx).unwrap();
        for dt in [1e-3, 1e-4, 1e-5] {
            let next = step(&su.s0, &su.ctx, dt, Scheme::Euler).unwrap();
            let diff = next.offset(-1.0, &su.s0);
            let err = diff.values().zip(rhs.values()).map(|(a, b)| (a / dt - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "dt {dt}: {err}");
            let rk = step(&su.s0, &su.ctx, dt, Scheme::Rk4).unwrap().offset(-1.0, &su.s0);
            let rk_err = rk.values().zip(rhs.values()).map(|(a, b)| (a / dt - b).abs()).fold(0.0, f64::max);
            let scale = rhs.values().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(rk_err <= 1e3 * dt * scale.max(1.0), "dt {dt}: {rk_err}");
        }
    }

    #[test]
    fn euler_and_rk4_agree_to_first_order() {
        let su = setup(5, 12, 7);
        let end = |dt: f64, scheme| integrate(&su.s0, &su.ctx, dt, (1.0 / dt).round() as usize, scheme, 1000).unwrap().0;
        let reference = end(1e-3, Scheme::Rk4);
        let mut errs = vec![];
        for dt in [4e-3, 2e-3, 1e-3] {
            let e = end(dt, Scheme::Euler).offset(-1.0, &reference);
            errs.push(e.values().fold(0.0f64, |m, x| m.max(x.abs())));
        }
        // halving dt roughly halves the error
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..2.4).contains(&ratio), "ratio {ratio}, errors {errs:?}");
        }
    }

    #[test]
    fn integrate_records_first_stride_and_last() {
        let su = setup(4, 9, 8);
        let (_, t) = integrate(&su.s0, &su.ctx, 1e-2, 25, Scheme::Euler, 10).unwrap();
        let steps: Vec<u64> = t.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        let (_, t) = integrate(&su.s0, &su.ctx, 1e-2, 1, Scheme::Euler, 10).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1]);
        assert!(integrate(&su.s0, &su.ctx, 1e-2, 0, Scheme::Euler, 10).is_err());
        assert_eq!(t.residuals.len(), t.rows.len());
    }

    #[test]
    fn blow_up_reports_step_and_halving_recovers() {
        let su = setup(4, 9, 9);
        let err = integrate(&su.s0, &su.ctx, 50.0, 1000, Scheme::Euler, 10).unwrap_err();
        assert!(matches!(err, Error::StepBlowUp { step } if step >= 1));
        let run = integrate_adaptive(&su.s0, &su.ctx, 0.32, 2000, Scheme::Euler, 10, 6);
        if let Ok(run) = run {
            assert!(run.dt <= 0.32);
            assert_eq!(run.dt, 0.32 / 2f64.powi(run.halvings as i32));
        }
    }

    #[test]
    fn conserved_q_examples() {
        let s = ReducedState { alpha: vec![1.0], ubar: vec![vec![0.3, 2.0]], vbar: vec![vec![0.3, 0.0]] };
        let q = conserved_q(&s);
        assert_eq!(q[0][0], 0.0);
        assert_eq!(q[0][1], 4.0);
    }

    #[test]
    fn rk4_conserves_q() {
        let su = setup(6, 20, 10);
        let (_, t) = integrate(&su.s0, &su.ctx, 1e-3, 2000, Scheme::Rk4, 100).unwrap();
        let drift = t.rows.iter().filter_map(|r| r.q_drift).fold(0.0, f64::max);
        assert!(drift <= 1e-9, "{drift}");
    }

    #[test]
    fn lift_examples() {
        let su = setup(4, 9, 11);
        let (phi, psi) = (su.e.phi.as_ref().unwrap(), su.e.psi.as_ref().unwrap());
        let act = su.ctx.act;
        let zero = ReducedState { alpha: vec![1.0, 1.0], ubar: vec![vec![0.0; 4]; 2], vbar: vec![vec![0.0; 4]; 2] };
        assert!(lift(&zero, phi, psi, &su.g, &act).unwrap().1.max_abs() == 0.0);

        let (params, x) = lift(&su.s0, phi, psi, &su.g, &act).unwrap();
        assert!(snn_forward(&params).unwrap().sub(&x).max_abs() < 1e-9);
        let mut expected = su.s0.h_alpha(&act);
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sv = linalg::singular_values(&x).unwrap();
        for (a, b) in sv.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }

        let eye = Mat::identity(4);
        let (params, _) = lift(&su.s0, phi, psi, &eye, &act).unwrap();
        let direct = phi.matmul(&linalg::rect_diag(&su.s0.ubar[0], 4, 4).unwrap());
        assert!(params.u[0].sub(&direct).max_abs() == 0.0);
    }

    #[test]
    fn noisy_context_targets_least_squares_spectrum() {
        let truth = gen_ground_truth(4, 4, 2, 12).unwrap();
        let (mut e, truth) = gen_commuting_ensemble(4, 4, 9, 12, &truth, PhiPsiSource::SvdOfTarget).unwrap();
        measure(&mut e, &truth.x_star, 1e-2, 12).unwrap();
        let ctx = FlowContext::from_ensemble(&e, ActivationFn::tanh()).unwrap();
        let b = e.b.as_ref().unwrap();
        // normal equations B (y - B^T s) = 0
        let r: Vec<f64> = e.y.iter().zip(b.t_matvec(&ctx.sigma_star)).map(|(y, p)| y - p).collect();
        assert!(b.matvec(&r).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn context_rejects_gaussian_ensembles() {
        let e = crate::measurements::gen_gaussian_ensemble(3, 3, 5, 0).unwrap();
        assert!(FlowContext::from_ensemble(&e, ActivationFn::tanh()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 12, .. ProptestConfig::default() })]

        #[test]
        fn prop_lift_matches_forward(seed in 0u64..1000, jitter in 0.0f64..0.3) {
            let su = setup(4, 8, seed);
            let s = perturbed(&su.s0, seed, jitter);
            let (phi, psi) = (su.e.phi.as_ref().unwrap(), su.e.psi.as_ref().unwrap());
            let (params, x) = lift(&s, phi, psi, &su.g, &su.ctx.act).unwrap();
            prop_assert!(snn_forward(&params).unwrap().sub(&x).max_abs() < 1e-9);
            let lifted_loss = crate::model::loss(&x, &su.e).unwrap();
            prop_assert!((lifted_loss - su.ctx.loss(&s)).abs() <= 1e-10 * lifted_loss.max(1.0));
        }
    }
}
