//! Rate fits, KKT certificates and recovery metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, lstsq_min_norm, nuclear_norm, thin_svd, Mat};
use crate::measurements::{ones_in_range_residual, MeasurementEnsemble};

/// Residuals at or below this are numerical noise and excluded from fits.
pub const RATE_FLOOR: f64 = 1e-12;

/// Least-squares fit of `log r(t) ≈ log c - η t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub eta_hat: f64,
    pub c_hat: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Fits an exponential to the trailing half of the samples above
/// [`RATE_FLOOR`].
pub fn fit_exponential(times: &[f64], residuals: &[f64]) -> Result<RateFit> {
    if times.len() != residuals.len() {
        return Err(Error::dims("fit_exponential", times.len(), residuals.len()));
    }
    let above: Vec<(f64, f64)> = times
        .iter()
        .zip(residuals)
        .filter(|(t, r)| **r > RATE_FLOOR && r.is_finite() && t.is_finite())
        .map(|(&t, &r)| (t, r.ln()))
        .collect();
    if above.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} samples above the {RATE_FLOOR:e} floor, need 10",
            above.len()
        )));
    }
    let window = &above[above.len() / 2..];
    let n = window.len() as f64;
    let mean_t = window.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = window.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = window.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let stl: f64 = window.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_l)).sum();
    let sll: f64 = window.iter().map(|p| (p.1 - mean_l).powi(2)).sum();
    if stt <= 0.0 {
        return Err(Error::InsufficientData("fit window spans zero time".into()));
    }
    let slope = stl / stt;
    let intercept = mean_l - slope * mean_t;
    let ss_res: f64 = window.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if sll > 0.0 { (1.0 - ss_res / sll).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit {
        eta_hat: -slope,
        c_hat: intercept.exp(),
        r_squared,
        window: (window[0].0, window[window.len() - 1].0),
        samples: window.len(),
    })
}

/// Largest per-unit-time decrease of `log v` between consecutive samples
/// with `t >= t_start` (both samples above [`RATE_FLOOR`]).
pub fn max_log_decrease_rate(times: &[f64], values: &[f64], t_start: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 1..times.len().min(values.len()) {
        let (t0, t1, v0, v1) = (times[i - 1], times[i], values[i - 1], values[i]);
        if t0 < t_start || v0 <= RATE_FLOOR || v1 <= RATE_FLOOR || t1 <= t0 {
            continue;
        }
        worst = worst.max((v0.ln() - v1.ln()) / (t1 - t0));
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max_i |⟨A_i, X⟩ - y_i|`.
    pub feasibility_residual: f64,
    /// `‖S + Σ ν̂_i A_i‖_F` for the least-squares `ν̂`, where `S` is the
    /// nuclear-norm gradient of `X`.
    pub dual_residual: f64,
    pub nu_hat: Vec<f64>,
    /// `min_ν ‖B ν - 𝟙‖₂` for commuting ensembles.
    pub b_residual: Option<f64>,
    /// Some spectral coordinate is below `1e-8`: the subgradient is a set
    /// and the certificate only covers its rank-`r` part.
    pub rank_deficient: bool,
}

/// Certifies `X` against the optimality conditions of
/// `min ‖X‖_* s.t. ⟨A_i, X⟩ = y_i`.
///
/// The nuclear-norm gradient `Φ_r Ψ_r^T` is taken from the SVD of `X`
/// itself over singular values above `1e-12 σ_max`.
pub fn kkt_check(x: &Mat, e: &MeasurementEnsemble) -> Result<KktReport> {
    let r = e.residuals(x)?;
    let feasibility_residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let (left, sigma, right) = thin_svd(x)?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma.iter().filter(|&&s| s > 1e-12 * smax && s > 0.0).count();
    let (d1, d2) = x.shape();
    let mut grad = Mat::zeros(d1, d2);
    for j in 0..rank {
        for a in 0..d1 {
            for b in 0..d2 {
                grad[(a, b)] += left[(a, j)] * right[(b, j)];
            }
        }
    }

    let ops = e.operator_matrix().transpose();
    let target: Vec<f64> = linalg::vec(&grad).iter().map(|g| -g).collect();
    let nu_hat = lstsq_min_norm(&ops, &target)?;
    let fitted = ops.matvec(&nu_hat);
    let dual: Vec<f64> = fitted.iter().zip(&target).map(|(f, t)| f - t).collect();

    let spectrum: &[f64] = match &e.sigma_star {
        Some(s) => s,
        None => &sigma,
    };
    Ok(KktReport {
        feasibility_residual,
        dual_residual: linalg::norm2(&dual),
        nu_hat,
        b_residual: e.b.as_ref().map(ones_in_range_residual).transpose()?,
        rank_deficient: spectrum.iter().any(|&s| s < 1e-8) || rank < d1.min(d2),
    })
}

/// `Φ Diag(σ*) Ψ^T`, the nuclear-norm minimizer for a commuting ensemble.
pub fn spectral_minimizer(e: &MeasurementEnsemble) -> Result<Mat> {
    let (Some(phi), Some(psi), Some(sigma)) = (&e.phi, &e.psi, &e.sigma_star) else {
        return Err(Error::InvariantViolation("needs a commuting ensemble".into()));
    };
    let d1 = sigma.len();
    Ok(phi.matmul(&linalg::rect_diag(sigma, d1, d1)?).matmul_t(psi))
}

/// `‖X‖_* - ‖Φ Diag(σ*) Ψ^T‖_*`.
pub fn nuclear_optimality_crosscheck(x: &Mat, e: &MeasurementEnsemble) -> Result<f64> {
    Ok(nuclear_norm(x)? - nuclear_norm(&spectral_minimizer(e)?)?)
}

/// Orthogonal projection of `n` onto the null space of the measurement
/// operator: the result `N` has `⟨A_i, N⟩ = 0` for every `i`.
pub fn null_space_projection(n: &Mat, e: &MeasurementEnsemble) -> Result<Mat> {
    if n.shape() != e.shape() {
        return Err(Error::dims("null_space_projection", format!("{:?}", e.shape()), format!("{:?}", n.shape())));
    }
    let ops = e.operator_matrix().transpose();
    let v = linalg::vec(n);
    let coeffs = lstsq_min_norm(&ops, &v)?;
    let range = ops.matvec(&coeffs);
    let perp: Vec<f64> = v.iter().zip(&range).map(|(a, b)| a - b).collect();
    linalg::unvec(&perp, n.rows(), n.cols())
}

/// `10 log10(1 / MSE)` with peak value 1; `+∞` when the matrices agree.
pub fn psnr(x: &Mat, x_ref: &Mat) -> Result<f64> {
    if x.shape() != x_ref.shape() {
        return Err(Error::dims("psnr", format!("{:?}", x_ref.shape()), format!("{:?}", x.shape())));
    }
    let diff = x.sub(x_ref);
    let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Entropy effective rank of a spectrum; values below `1e-12` of the
/// largest count as zero.
pub fn effective_rank_of_spectrum(sigma: &[f64]) -> Result<f64> {
    let smax = sigma.iter().copied().fold(0.0f64, |m, s| m.max(s.abs()));
    if smax == 0.0 {
        return Err(Error::InsufficientData("effective rank of the zero matrix".into()));
    }
    let kept: Vec<f64> = sigma.iter().map(|s| s.abs()).filter(|&s| s > 1e-12 * smax).collect();
    let total: f64 = kept.iter().sum();
    let entropy: f64 = kept.iter().map(|s| s / total).map(|p| -p * p.ln()).sum();
    Ok(entropy.exp())
}

pub fn effective_rank(x: &Mat) -> Result<f64> {
    effective_rank_of_spectrum(&linalg::singular_values(x)?)
}

/// Largest angle (radians) between `X ψ_i` and `±φ_i` (left) and between
/// `X^T φ_i` and `±ψ_i` (right), over directions carrying more than
/// `1e-9 ‖X‖_F`. Both are zero exactly when `Φ^T X Ψ` is diagonal on those
/// directions, i.e. `Φ` and `Ψ` remain singular vectors of `X`.
pub fn subspace_alignment(x: &Mat, phi: &Mat, psi: &Mat) -> Result<(f64, f64)> {
    let d1 = phi.cols();
    if x.rows() != phi.rows() || x.cols() != psi.rows() || psi.cols() != d1 {
        return Err(Error::dims(
            "subspace_alignment",
            format!("X {}x{}", phi.rows(), psi.rows()),
            format!("X {}x{}", x.rows(), x.cols()),
        ));
    }
    let floor = 1e-9 * x.frobenius_norm();
    let angle = |image: &[f64], dir: &[f64]| -> Option<f64> {
        let norm = linalg::norm2(image);
        if norm <= floor {
            return None;
        }
        let along = linalg::dot(image, dir);
        let perp: Vec<f64> = image.iter().zip(dir).map(|(a, d)| a - along * d).collect();
        Some(linalg::norm2(&perp).atan2(along.abs()))
    };
    let mut left = 0.0f64;
    let mut right = 0.0f64;
    for i in 0..d1 {
        let (p, q) = (phi.column(i), psi.column(i));
        if let Some(a) = angle(&x.matvec(&q), &p) {
            left = left.max(a);
        }
        if let Some(a) = angle(&x.t_matvec(&p), &q) {
            right = right.max(a);
        }
    }
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{gen_commuting_ensemble, gen_ground_truth, measure, PhiPsiSource};
    use crate::rng::{self, stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn exponential_fit_recovers_rate() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let r: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let fit = fit_exponential(&t, &r).unwrap();
        assert!((fit.eta_hat - 2.0).abs() < 1e-6);
        assert!((fit.c_hat - 3.0).abs() < 1e-6);
        assert!(fit.r_squared >= 1.0 - 1e-10);
        assert_eq!(fit.samples, 50);
        assert_eq!(fit.window, (t[50], t[99]));
    }

    #[test]
    fn constant_residuals_have_zero_rate() {
        let t: Vec<f64> = (0..20).map(f64::from).collect();
        let fit = fit_exponential(&t, &[0.3; 20]).unwrap();
        assert!(fit.eta_hat.abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_needs_ten_samples_above_floor() {
        let t: Vec<f64> = (0..30).map(f64::from).collect();
        let mut r = vec![1e-13; 30];
        for v in r.iter_mut().take(9) {
            *v = 1.0;
        }
        assert!(matches!(fit_exponential(&t, &r), Err(Error::InsufficientData(_))));
        assert!(fit_exponential(&t[..5], &r).is_err());
    }

    #[test]
    fn log_decrease_rate_of_pure_exponential() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let r: Vec<f64> = t.iter().map(|t| (-1.5 * t).exp()).collect();
        assert!((max_log_decrease_rate(&t, &r, 0.0) - 1.5).abs() < 1e-9);
        assert_eq!(max_log_decrease_rate(&t, &r, 10.0), f64::NEG_INFINITY);
    }

    fn commuting(d: usize, m: usize, seed: u64) -> (MeasurementEnsemble, Mat) {
        let g = gen_ground_truth(d, d, d / 2, seed).unwrap();
        let (mut e, truth) = gen_commuting_ensemble(d, d, m, seed, &g, PhiPsiSource::SvdOfTarget).unwrap();
        measure(&mut e, &truth.x_star, 0.0, seed).unwrap();
        (e, truth.x_star)
    }

    #[test]
    fn kkt_holds_at_spectral_minimizer() {
        let (e, _) = commuting(6, 20, 1);
        let x = spectral_minimizer(&e).unwrap();
        let rep = kkt_check(&x, &e).unwrap();
        assert!(rep.feasibility_residual <= 1e-12);
        assert!(rep.dual_residual <= 1e-9, "{}", rep.dual_residual);
        assert!(rep.b_residual.unwrap() <= 1e-8);
        assert!(!rep.rank_deficient);
        assert_eq!(rep.nu_hat.len(), 20);
        assert_eq!(nuclear_optimality_crosscheck(&x, &e).unwrap(), 0.0);
    }

    #[test]
    fn kkt_feasibility_examples() {
        let (e, _) = commuting(4, 9, 2);
        let rep = kkt_check(&Mat::zeros(4, 4), &e).unwrap();
        let ymax = e.y.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        assert_eq!(rep.feasibility_residual, ymax);
        assert!(rep.rank_deficient);

        let mut r = stream(2, Stream::Perturbation);
        let x = Mat::from_fn(4, 4, |_, _| rng::normal(&mut r));
        let rep = kkt_check(&x, &e).unwrap();
        let by_hand = e.a.iter().zip(&e.y).map(|(a, y)| (linalg::frobenius_inner(a, &x).unwrap() - y).abs()).fold(0.0, f64::max);
        assert_eq!(rep.feasibility_residual, by_hand);
    }

    #[test]
    fn kkt_is_invariant_to_svd_signs() {
        let (e, _) = commuting(5, 12, 3);
        let x = spectral_minimizer(&e).unwrap();
        let a = kkt_check(&x, &e).unwrap();
        let b = kkt_check(&x.scale(-1.0).scale(-1.0), &e).unwrap();
        assert_eq!(a.dual_residual, b.dual_residual);
    }

    #[test]
    fn null_space_perturbations_do_not_beat_the_minimizer() {
        let (e, _) = commuting(6, 20, 4);
        let x = spectral_minimizer(&e).unwrap();
        let mut r = stream(4, Stream::Perturbation);
        for _ in 0..10 {
            let n = Mat::from_fn(6, 6, |_, _| rng::normal(&mut r));
            let p = null_space_projection(&n, &e).unwrap();
            assert!(e.apply(&p).unwrap().iter().all(|v| v.abs() < 1e-10));
            assert!(p.frobenius_norm() > 0.1);
            let feasible = x.add(&p.scale(0.05));
            assert!(nuclear_optimality_crosscheck(&feasible, &e).unwrap() >= -1e-5);
        }
    }

    #[test]
    fn psnr_and_effective_rank_examples() {
        let x = Mat::identity(3);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        let y = x.add(&Mat::from_fn(3, 3, |_, _| 0.1));
        assert!((psnr(&y, &x).unwrap() - 20.0).abs() < 1e-9);
        assert!((effective_rank(&Mat::identity(5)).unwrap() - 5.0).abs() < 1e-9);
        let rank1 = Mat::from_fn(3, 4, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        assert!((effective_rank(&rank1).unwrap() - 1.0).abs() < 1e-9);
        assert!(effective_rank(&Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn alignment_is_zero_for_aligned_and_positive_otherwise() {
        let (e, x) = commuting(5, 12, 5);
        let (phi, psi) = (e.phi.as_ref().unwrap(), e.psi.as_ref().unwrap());
        let (l, r) = subspace_alignment(&x, phi, psi).unwrap();
        assert!(l < 1e-12 && r < 1e-12);
        let mut rot = Mat::identity(5);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        rot[(0, 0)] = c;
        rot[(0, 1)] = -s;
        rot[(1, 0)] = s;
        rot[(1, 1)] = c;
        let (l, _) = subspace_alignment(&rot.matmul(&x), phi, psi).unwrap();
        assert!(l > 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 32, .. ProptestConfig::default() })]

        #[test]
        fn prop_fit_is_scale_equivariant(eta in 0.1f64..5.0, c in 0.01f64..100.0, k in 1e-3f64..1e3) {
            let t: Vec<f64> = (0..60).map(|i| i as f64 * 0.02).collect();
            let r: Vec<f64> = t.iter().map(|t| c * (-eta * t).exp() * (1.0 + 0.01 * (7.0 * t).sin())).collect();
            let scaled: Vec<f64> = r.iter().map(|v| v * k).collect();
            let a = fit_exponential(&t, &r).unwrap();
            let b = fit_exponential(&t, &scaled).unwrap();
            prop_assert!((a.eta_hat - b.eta_hat).abs() < 1e-9);
            prop_assert!((b.c_hat / a.c_hat - k).abs() < 1e-9 * k);
        }
    }
}
