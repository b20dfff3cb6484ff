//! Sensing ensembles, ground-truth targets and labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, compact_svd, frobenius_inner, lstsq_min_norm, nuclear_norm, Mat};
use crate::rng::{self, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Commuting,
    Gaussian,
}

/// Where the shared singular vectors of a commuting ensemble come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiPsiSource {
    /// The compact SVD factors of the target.
    #[default]
    SvdOfTarget,
    /// Seeded Haar orthogonal factors.
    RandomOrthogonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub x_star: Mat,
    /// Nuclear norm of the raw draw, divided out of `x_star`.
    pub normalization: f64,
    /// Multiple of `Φ Ψ^T` added to make the spectral target positive;
    /// zero when no shift was needed.
    #[serde(default)]
    pub shift: f64,
}

impl GroundTruth {
    /// Wraps an arbitrary non-zero matrix, scaled to unit nuclear norm.
    pub fn normalized(x: Mat) -> Result<Self> {
        let nn = nuclear_norm(&x)?;
        if nn <= 0.0 {
            return Err(Error::InvariantViolation("ground truth is the zero matrix".into()));
        }
        Ok(GroundTruth {
            x_star: x.scale(1.0 / nn),
            normalization: nn,
            shift: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEnsemble {
    pub kind: EnsembleKind,
    pub a: Vec<Mat>,
    pub phi: Option<Mat>,
    pub psi: Option<Mat>,
    /// `d1 x m`; column `i` is the spectrum `σ^(i)` of `A_i`.
    pub b: Option<Mat>,
    /// `B B^T`.
    pub c: Option<Mat>,
    pub y: Vec<f64>,
    pub sigma_star: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_std: f64,
}

impl MeasurementEnsemble {
    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a[0].shape()
    }

    fn check_shape(&self, op: &'static str, x: &Mat) -> Result<()> {
        if x.shape() != self.shape() {
            let (r, c) = self.shape();
            return Err(Error::dims(op, format!("{r}x{c}"), format!("{}x{}", x.rows(), x.cols())));
        }
        Ok(())
    }

    /// `(⟨A_1, X⟩, ..., ⟨A_m, X⟩)`.
    pub fn apply(&self, x: &Mat) -> Result<Vec<f64>> {
        self.check_shape("MeasurementEnsemble::apply", x)?;
        self.a.iter().map(|a| frobenius_inner(a, x)).collect()
    }

    /// `Σ w_i A_i`.
    pub fn adjoint(&self, w: &[f64]) -> Result<Mat> {
        if w.len() != self.m() {
            return Err(Error::dims("MeasurementEnsemble::adjoint", self.m(), w.len()));
        }
        let (r, c) = self.shape();
        let mut out = Mat::zeros(r, c);
        for (a, &wi) in self.a.iter().zip(w) {
            out.axpy(wi, a);
        }
        Ok(out)
    }

    /// `y_i - ⟨A_i, X⟩`.
    pub fn residuals(&self, x: &Mat) -> Result<Vec<f64>> {
        Ok(self.y.iter().zip(self.apply(x)?).map(|(y, ax)| y - ax).collect())
    }

    /// `m x (d1 d2)` operator matrix whose row `i` is `vec(A_i)^T`.
    pub fn operator_matrix(&self) -> Mat {
        let (r, c) = self.shape();
        let rows: Vec<Vec<f64>> = self.a.iter().map(linalg::vec).collect();
        Mat::from_fn(self.m(), r * c, |i, j| rows[i][j])
    }
}

fn uniform_mat(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng::uniform(rng))
}

/// `X̃ X̃^T` (square) or `X̃ Ỹ^T` with uniform `[0, 1]` factors, scaled to
/// unit nuclear norm.
pub fn gen_ground_truth(d1: usize, d2: usize, inner_dim: usize, seed: u64) -> Result<GroundTruth> {
    if d1 == 0 || d2 == 0 || inner_dim == 0 {
        return Err(Error::dims("gen_ground_truth", "positive dimensions", format!("({d1}, {d2}, {inner_dim})")));
    }
    let mut rng = stream(seed, Stream::GroundTruth);
    let xt = uniform_mat(d1, inner_dim, &mut rng);
    let x = if d1 == d2 {
        xt.matmul_t(&xt)
    } else {
        let yt = uniform_mat(d2, inner_dim, &mut rng);
        xt.matmul_t(&yt)
    };
    GroundTruth::normalized(x)
}

/// Smallest admissible entry of the spectral target after the positivity
/// shift.
pub fn sigma_floor(d1: usize) -> f64 {
    (0.5 / d1 as f64).min(0.05)
}

/// Builds a commuting ensemble `A_i = Φ Ā_i Ψ^T` around `target`.
///
/// Returns the ensemble together with the target actually measured: when
/// `diag(Φ^T X* Ψ)` has entries below [`sigma_floor`], the target is
/// replaced by `(X* + c Φ Ψ^T) / (1 + c d1)`, the smallest such shift that
/// lifts every spectral coordinate to the floor while keeping unit nuclear
/// norm.
pub fn gen_commuting_ensemble(
    d1: usize,
    d2: usize,
    m: usize,
    seed: u64,
    target: &GroundTruth,
    source: PhiPsiSource,
) -> Result<(MeasurementEnsemble, GroundTruth)> {
    if d1 > d2 {
        return Err(Error::dims("gen_commuting_ensemble", "d1 <= d2", format!("{d1} > {d2}")));
    }
    if m < d1 {
        return Err(Error::dims("gen_commuting_ensemble", format!("m >= d1 = {d1}"), m));
    }
    if target.x_star.shape() != (d1, d2) {
        let (r, c) = target.x_star.shape();
        return Err(Error::dims("gen_commuting_ensemble", format!("{d1}x{d2}"), format!("{r}x{c}")));
    }

    let mut rng = stream(seed, Stream::Ensemble);
    let (phi, psi) = match source {
        PhiPsiSource::SvdOfTarget => {
            let s = compact_svd(&target.x_star)?;
            (s.phi, s.psi)
        }
        PhiPsiSource::RandomOrthogonal => {
            let phi = linalg::random_orthogonal(d1, &mut rng);
            let psi = linalg::random_orthogonal(d2, &mut rng).leading_columns(d1);
            (phi, psi)
        }
    };

    let mut spectra: Vec<Vec<f64>> = Vec::with_capacity(m);
    for _ in 0..m {
        let mut s: Vec<f64> = (0..d1).map(|_| rng::uniform(&mut rng)).collect();
        s.sort_by(|a, b| b.partial_cmp(a).expect("finite draws"));
        spectra.push(s);
    }
    let a: Vec<Mat> = spectra
        .iter()
        .map(|s| Ok(phi.matmul(&linalg::rect_diag(s, d1, d1)?).matmul_t(&psi)))
        .collect::<Result<_>>()?;
    let b = Mat::from_columns(&spectra)?;
    let c = b.matmul_t(&b);

    let mut sigma_star = linalg::diag_of(&phi.t_matmul(&target.x_star).matmul(&psi));
    let mut truth = target.clone();
    let floor = sigma_floor(d1);
    let smin = sigma_star.iter().copied().fold(f64::INFINITY, f64::min);
    if smin < floor {
        let nn: f64 = sigma_star.iter().sum();
        let spread = nn - d1 as f64 * smin;
        // solve (smin + c) / (nn + c d1) = floor; a flat spectrum lands on
        // 1/d1 for any positive shift
        let shift = if spread > 1e-12 * nn.abs().max(1.0) {
            (floor * nn - smin) / (1.0 - floor * d1 as f64)
        } else {
            floor - smin
        };
        let scale = 1.0 / (nn + shift * d1 as f64);
        let x = target.x_star.add(&phi.matmul_t(&psi).scale(shift)).scale(scale);
        sigma_star = sigma_star.iter().map(|s| (s + shift) * scale).collect();
        truth = GroundTruth {
            x_star: x,
            normalization: target.normalization,
            shift: shift * scale,
        };
    }

    let y = a.iter().map(|ai| frobenius_inner(ai, &truth.x_star)).collect::<Result<Vec<_>>>()?;
    let ensemble = MeasurementEnsemble {
        kind: EnsembleKind::Commuting,
        a,
        phi: Some(phi),
        psi: Some(psi),
        b: Some(b),
        c: Some(c),
        y,
        sigma_star: Some(sigma_star),
        noise_std: 0.0,
    };
    validate_commuting(&ensemble)?;
    Ok((ensemble, truth))
}

/// Least-squares residual `min_ν ‖B ν - 𝟙‖₂`.
pub fn ones_in_range_residual(b: &Mat) -> Result<f64> {
    let ones = vec![1.0; b.rows()];
    let nu = lstsq_min_norm(b, &ones)?;
    let fit = b.matvec(&nu);
    Ok(linalg::norm2(&fit.iter().zip(&ones).map(|(f, o)| f - o).collect::<Vec<_>>()))
}

fn validate_commuting(e: &MeasurementEnsemble) -> Result<()> {
    let (Some(b), Some(sigma)) = (&e.b, &e.sigma_star) else {
        return Err(Error::InvariantViolation("commuting ensemble without spectral data".into()));
    };
    let res = ones_in_range_residual(b)?;
    if res > 1e-8 {
        return Err(Error::InvariantViolation(format!("all-ones vector not in range(B): residual {res:e}")));
    }
    let dev = quasi_commute_check(&e.a)?;
    if dev > 1e-9 {
        return Err(Error::InvariantViolation(format!("quasi-commutation deviation {dev:e}")));
    }
    if let Some(s) = sigma.iter().find(|&&s| s <= 0.0) {
        return Err(Error::InvariantViolation(format!("spectral target has non-positive entry {s:e}")));
    }
    Ok(())
}

/// `m` matrices with iid standard normal entries.
pub fn gen_gaussian_ensemble(d1: usize, d2: usize, m: usize, seed: u64) -> Result<MeasurementEnsemble> {
    if d1 == 0 || d2 == 0 || m == 0 {
        return Err(Error::dims("gen_gaussian_ensemble", "positive dimensions", format!("({d1}, {d2}, {m})")));
    }
    let mut rng = stream(seed, Stream::Ensemble);
    let a = (0..m)
        .map(|_| Mat::from_fn(d1, d2, |_, _| rng::normal(&mut rng)))
        .collect();
    Ok(MeasurementEnsemble {
        kind: EnsembleKind::Gaussian,
        a,
        phi: None,
        psi: None,
        b: None,
        c: None,
        y: vec![0.0; m],
        sigma_star: None,
        noise_std: 0.0,
    })
}

/// Sets `y_i = ⟨A_i, X*⟩ + noise_std ε_i`.
pub fn measure(e: &mut MeasurementEnsemble, x_star: &Mat, noise_std: f64, seed: u64) -> Result<()> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::NonFinite("measure: noise_std"));
    }
    let clean = e.apply(x_star)?;
    let mut rng = stream(seed, Stream::Noise);
    e.y = clean
        .into_iter()
        .map(|c| if noise_std > 0.0 { c + noise_std * rng::normal(&mut rng) } else { c })
        .collect();
    e.noise_std = noise_std;
    Ok(())
}

/// Largest of `‖A_i A_j^T - A_j A_i^T‖_F` and `‖A_i^T A_j - A_j^T A_i‖_F`
/// over all pairs.
pub fn quasi_commute_check(a: &[Mat]) -> Result<f64> {
    let Some(first) = a.first() else {
        return Ok(0.0);
    };
    if let Some(bad) = a.iter().find(|x| x.shape() != first.shape()) {
        return Err(Error::dims(
            "quasi_commute_check",
            format!("{}x{}", first.rows(), first.cols()),
            format!("{}x{}", bad.rows(), bad.cols()),
        ));
    }
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let left = a[i].matmul_t(&a[j]).sub(&a[j].matmul_t(&a[i])).frobenius_norm();
            let right = a[i].t_matmul(&a[j]).sub(&a[j].t_matmul(&a[i])).frobenius_norm();
            worst = worst.max(left).max(right);
        }
    }
    Ok(worst)
}
