//! Spectral activation, SNN blocks and the depth-1 parameterization
//! `X = Σ_k α_k Γ(U_k V_k^T)`.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationFn;
use crate::error::{Error, Result};
use crate::flow::ReducedState;
use crate::linalg::{self, compact_svd, Mat};
use crate::measurements::MeasurementEnsemble;
use crate::rng::{self, stream, Stream};

/// Trainable parameters of one SNN block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnParams {
    pub alpha: Vec<f64>,
    /// `K` matrices of shape `d1 x d`.
    pub u: Vec<Mat>,
    /// `K` matrices of shape `d2 x d`.
    pub v: Vec<Mat>,
    pub activation: ActivationFn,
}

impl SnnParams {
    pub fn new(alpha: Vec<f64>, u: Vec<Mat>, v: Vec<Mat>, activation: ActivationFn) -> Result<Self> {
        let p = SnnParams { alpha, u, v, activation };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let k = self.alpha.len();
        if k == 0 || self.u.len() != k || self.v.len() != k {
            return Err(Error::dims(
                "SnnParams",
                format!("K = {k} >= 1 factors"),
                format!("{} U and {} V factors", self.u.len(), self.v.len()),
            ));
        }
        let (d1, d) = self.u[0].shape();
        let d2 = self.v[0].rows();
        for (u, v) in self.u.iter().zip(&self.v) {
            if u.shape() != (d1, d) || v.shape() != (d2, d) {
                return Err(Error::dims(
                    "SnnParams",
                    format!("U {d1}x{d}, V {d2}x{d}"),
                    format!("U {}x{}, V {}x{}", u.rows(), u.cols(), v.rows(), v.cols()),
                ));
            }
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("SnnParams::alpha"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// `(d1, d2, d)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u[0].rows(), self.v[0].rows(), self.u[0].cols())
    }

    /// `d >= d2 >= d1`, the regime the convergence theory covers.
    pub fn is_overparameterized(&self) -> bool {
        let (d1, d2, d) = self.dims();
        d >= d2 && d2 >= d1
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        let (d1, d2, d) = self.dims();
        self.k() * (1 + (d1 + d2) * d)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flattens to `[α, vec-free row-major U_1.., V_1..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.alpha.clone();
        for u in &self.u {
            out.extend_from_slice(u.data());
        }
        for v in &self.v {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Inverse of [`SnnParams::to_flat`] using `self` as the shape template.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::dims("SnnParams::with_flat", self.len(), flat.len()));
        }
        let k = self.k();
        let mut p = self.clone();
        p.alpha.copy_from_slice(&flat[..k]);
        let mut off = k;
        for m in p.u.iter_mut().chain(p.v.iter_mut()) {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("SnnParams::with_flat"));
        }
        Ok(p)
    }
}

/// Shape of a deep SNN: `layer_sizes = (L_0, ..., L_D)` with one activation
/// per layer. Layer `i` has `L_i` blocks, each consuming the `L_{i-1}`
/// outputs of the previous layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnLayerSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<ActivationFn>,
}

/// `Γ(X) = Φ γ(Σ) Ψ^T`. Tall inputs are handled through the transpose.
pub fn spectral_activation(x: &Mat, act: &ActivationFn) -> Result<Mat> {
    if x.rows() > x.cols() {
        return Ok(spectral_activation(&x.transpose(), act)?.transpose());
    }
    let mut s = compact_svd(x)?;
    for sigma in &mut s.sigma {
        *sigma = act.gamma(*sigma);
    }
    Ok(s.reconstruct())
}

/// `Σ_k α_k Γ(inputs_k)`.
pub fn snn_block_forward(inputs: &[Mat], alpha: &[f64], act: &ActivationFn) -> Result<Mat> {
    if inputs.len() != alpha.len() || inputs.is_empty() {
        return Err(Error::dims("snn_block_forward", format!("{} inputs", alpha.len()), inputs.len()));
    }
    let shape = inputs[0].shape();
    let mut out = Mat::zeros(shape.0, shape.1);
    for (x, &a) in inputs.iter().zip(alpha) {
        if x.shape() != shape {
            return Err(Error::dims(
                "snn_block_forward",
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        out.axpy(a, &spectral_activation(x, act)?);
    }
    Ok(out)
}

/// The products `Z_k = U_k V_k^T`.
pub fn factor_products(p: &SnnParams) -> Vec<Mat> {
    p.u.iter().zip(&p.v).map(|(u, v)| u.matmul_t(v)).collect()
}

/// `X = Σ_k α_k Γ(U_k V_k^T)`.
pub fn snn_forward(p: &SnnParams) -> Result<Mat> {
    p.validate()?;
    snn_block_forward(&factor_products(p), &p.alpha, &p.activation)
}

/// Layer-by-layer forward pass. `alphas[i][j]` is the coefficient vector of
/// block `j` in layer `i + 1`; returns the `L_D` outputs of the last layer.
pub fn deep_snn_forward(spec: &SnnLayerSpec, alphas: &[Vec<Vec<f64>>], inputs: &[Mat]) -> Result<Vec<Mat>> {
    let sizes = &spec.layer_sizes;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::dims("deep_snn_forward", "at least two positive layer sizes", format!("{sizes:?}")));
    }
    if spec.activations.len() != sizes.len() - 1 || alphas.len() != sizes.len() - 1 {
        return Err(Error::dims(
            "deep_snn_forward",
            format!("{} layers", sizes.len() - 1),
            format!("{} activations, {} coefficient layers", spec.activations.len(), alphas.len()),
        ));
    }
    if inputs.len() != sizes[0] {
        return Err(Error::dims("deep_snn_forward", format!("{} inputs", sizes[0]), inputs.len()));
    }
    let mut current = inputs.to_vec();
    for (layer, (blocks, act)) in alphas.iter().zip(&spec.activations).enumerate() {
        if blocks.len() != sizes[layer + 1] {
            return Err(Error::dims("deep_snn_forward", format!("{} blocks", sizes[layer + 1]), blocks.len()));
        }
        // activate once per layer; every block shares the activated inputs
        let activated: Vec<Mat> = current.iter().map(|x| spectral_activation(x, act)).collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(blocks.len());
        for alpha in blocks {
            if alpha.len() != activated.len() {
                return Err(Error::dims("deep_snn_forward", format!("K = {}", activated.len()), alpha.len()));
            }
            let (r, c) = activated[0].shape();
            let mut out = Mat::zeros(r, c);
            for (x, &a) in activated.iter().zip(alpha) {
                out.axpy(a, x);
            }
            next.push(out);
        }
        current = next;
    }
    Ok(current)
}

/// Output of [`spectral_init`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInit {
    pub params: SnnParams,
    pub state: ReducedState,
    /// The orthogonal `d x d` mixing matrix.
    pub g: Mat,
}

fn sorted_uniform(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng::uniform(rng)).collect();
    v.sort_by(|a, b| b.partial_cmp(a).expect("finite draws"));
    v
}

/// Spectral initialization: `U_k = Φ Ū_k G`, `V_k = Ψ V̄_k G` with sorted
/// uniform diagonals, and `α` scaled so that `Hα <= 0.9 σ*` coordinatewise.
pub fn spectral_init(
    phi: &Mat,
    psi: &Mat,
    sigma_star: &[f64],
    k: usize,
    d: usize,
    seed: u64,
    act: &ActivationFn,
) -> Result<SpectralInit> {
    let d1 = phi.rows();
    let d2 = psi.rows();
    if phi.cols() != d1 || psi.cols() != d1 || sigma_star.len() != d1 {
        return Err(Error::dims(
            "spectral_init",
            format!("phi {d1}x{d1}, psi d2x{d1}, sigma {d1}"),
            format!("phi {}x{}, psi {}x{}, sigma {}", phi.rows(), phi.cols(), psi.rows(), psi.cols(), sigma_star.len()),
        ));
    }
    if k == 0 || d < d2 || d2 < d1 {
        return Err(Error::dims("spectral_init", "K >= 1 and d >= d2 >= d1", format!("K={k}, d={d}, d2={d2}, d1={d1}")));
    }
    if let Some(s) = sigma_star.iter().find(|&&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::InfeasibleInit(format!("spectral target entry {s:e} is not positive")));
    }

    let mut rng = stream(seed, Stream::Init);
    let g = linalg::random_orthogonal(d, &mut rng);
    let mut ubar = Vec::with_capacity(k);
    let mut vbar = Vec::with_capacity(k);
    for _ in 0..k {
        ubar.push(sorted_uniform(d1, &mut rng));
        vbar.push(sorted_uniform(d1, &mut rng));
    }
    let raw_alpha: Vec<f64> = (0..k).map(|_| rng::uniform(&mut rng)).collect();

    let probe = ReducedState {
        alpha: raw_alpha.clone(),
        ubar: ubar.clone(),
        vbar: vbar.clone(),
    };
    let h_alpha = probe.h_alpha(act);
    let mut s = 1.0f64;
    for (&ha, &target) in h_alpha.iter().zip(sigma_star) {
        if ha > 0.0 {
            s = s.min(target / ha);
        }
    }
    let alpha: Vec<f64> = raw_alpha.iter().map(|a| 0.9 * s * a).collect();
    let state = ReducedState { alpha, ubar, vbar };
    let (params, _) = crate::flow::lift(&state, phi, psi, &g, act)?;
    Ok(SpectralInit { params, state, g })
}

/// Rectangular-diagonal factors with entries `scale + jitter ε`.
#[allow(clippy::too_many_arguments)]
pub fn near_zero_init(
    d1: usize,
    d2: usize,
    d: usize,
    k: usize,
    scale: f64,
    jitter: f64,
    seed: u64,
    act: &ActivationFn,
) -> Result<SnnParams> {
    if d1 == 0 || d2 == 0 || d == 0 || k == 0 {
        return Err(Error::dims("near_zero_init", "positive dimensions", format!("({d1}, {d2}, {d}, K={k})")));
    }
    let mut rng = stream(seed, Stream::Init);
    let diag = |n: usize, rng: &mut _| -> Vec<f64> {
        (0..n).map(|_| scale + jitter * rng::normal(rng)).collect()
    };
    let mut u = Vec::with_capacity(k);
    let mut v = Vec::with_capacity(k);
    for _ in 0..k {
        u.push(linalg::rect_diag(&diag(d1.min(d), &mut rng), d1, d)?);
        v.push(linalg::rect_diag(&diag(d2.min(d), &mut rng), d2, d)?);
    }
    let alpha = (0..k).map(|_| rng::uniform(&mut rng)).collect();
    SnnParams::new(alpha, u, v, *act)
}

/// `½ Σ_i (y_i - ⟨A_i, X⟩)²`.
pub fn loss(x: &Mat, e: &MeasurementEnsemble) -> Result<f64> {
    Ok(0.5 * e.residuals(x)?.iter().map(|r| r * r).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_inner, nuclear_norm, rect_diag};
    use crate::measurements::{gen_commuting_ensemble, gen_gaussian_ensemble, gen_ground_truth, measure, PhiPsiSource};
    use proptest::prelude::*;

    fn orthogonal_pair(d1: usize, d2: usize, seed: u64) -> (Mat, Mat) {
        let mut r = stream(seed, Stream::Perturbation);
        let phi = linalg::random_orthogonal(d1, &mut r);
        let psi = linalg::random_orthogonal(d2, &mut r).leading_columns(d1);
        (phi, psi)
    }

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = stream(seed, Stream::Perturbation);
        Mat::from_fn(rows, cols, |_, _| rng::normal(&mut r))
    }

    #[test]
    fn spectral_activation_of_zero_is_zero_for_tanh() {
        let z = spectral_activation(&Mat::zeros(3, 4), &ActivationFn::tanh()).unwrap();
        assert_eq!(z, Mat::zeros(3, 4));
    }

    #[test]
    fn spectral_activation_on_known_factors() {
        let (phi, psi) = orthogonal_pair(3, 5, 1);
        let s = [2.0, 0.7, 0.1];
        let x = phi.matmul(&rect_diag(&s, 3, 3).unwrap()).matmul_t(&psi);
        let act = ActivationFn::tanh();
        let gs: Vec<f64> = s.iter().map(|&v| act.gamma(v)).collect();
        let expected = phi.matmul(&rect_diag(&gs, 3, 3).unwrap()).matmul_t(&psi);
        assert!(spectral_activation(&x, &act).unwrap().sub(&expected).max_abs() < 1e-9);
    }

    #[test]
    fn clipped_identity_fixes_contractions() {
        let (phi, psi) = orthogonal_pair(4, 4, 2);
        let x = phi.matmul(&rect_diag(&[0.9, 0.5, 0.3, 0.0], 4, 4).unwrap()).matmul_t(&psi);
        let y = spectral_activation(&x, &ActivationFn::clipped_identity()).unwrap();
        assert!(y.sub(&x).max_abs() < 1e-9);
    }

    #[test]
    fn spectral_activation_tall_input() {
        let x = random_mat(5, 3, 4);
        let act = ActivationFn::sigmoid();
        let y = spectral_activation(&x, &act).unwrap();
        let yt = spectral_activation(&x.transpose(), &act).unwrap();
        assert!(y.sub(&yt.transpose()).max_abs() < 1e-12);
    }

    #[test]
    fn block_forward_examples() {
        let act = ActivationFn::tanh();
        let x = random_mat(3, 3, 5);
        let single = snn_block_forward(std::slice::from_ref(&x), &[1.0], &act).unwrap();
        assert_eq!(single, spectral_activation(&x, &act).unwrap());
        let cancel = snn_block_forward(&[x.clone(), x.clone()], &[1.0, -1.0], &act).unwrap();
        assert_eq!(cancel, Mat::zeros(3, 3));
        let w = random_mat(3, 3, 6);
        let sum = snn_block_forward(&[x.clone(), w.clone()], &[0.3, 1.7], &act).unwrap();
        let by_hand = spectral_activation(&x, &act).unwrap().scale(0.3).add(&spectral_activation(&w, &act).unwrap().scale(1.7));
        assert!(sum.sub(&by_hand).max_abs() < 1e-12);
        assert!(snn_block_forward(&[x], &[1.0, 2.0], &act).is_err());
    }

    #[test]
    fn forward_with_zero_factors() {
        let p = SnnParams::new(vec![0.5, 2.0], vec![Mat::zeros(2, 3); 2], vec![Mat::zeros(3, 3); 2], ActivationFn::tanh()).unwrap();
        assert_eq!(snn_forward(&p).unwrap(), Mat::zeros(2, 3));
        let p = SnnParams { activation: ActivationFn::sigmoid(), ..p };
        // γ(0) = 1/2 on the two singular directions of the compact SVD
        let x = snn_forward(&p).unwrap();
        assert!((nuclear_norm(&x).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn forward_nuclear_norm_is_sum_of_activated_values() {
        let u = random_mat(3, 4, 7);
        let v = random_mat(5, 4, 8);
        let act = ActivationFn::tanh();
        let p = SnnParams::new(vec![1.0], vec![u.clone()], vec![v.clone()], act).unwrap();
        let s = linalg::singular_values(&u.matmul_t(&v)).unwrap();
        let expected: f64 = s.iter().map(|&x| act.gamma(x)).sum();
        assert!((nuclear_norm(&snn_forward(&p).unwrap()).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn deep_forward_examples() {
        let act = ActivationFn::tanh();
        let x = random_mat(3, 3, 9);
        let w = random_mat(3, 3, 10);
        let spec = SnnLayerSpec { layer_sizes: vec![2, 1], activations: vec![act] };
        let out = deep_snn_forward(&spec, &[vec![vec![0.4, -1.1]]], &[x.clone(), w.clone()]).unwrap();
        assert_eq!(out.len(), 1);
        let block = snn_block_forward(&[x.clone(), w.clone()], &[0.4, -1.1], &act).unwrap();
        assert!(out[0].sub(&block).max_abs() < 1e-15);

        // clipped identity on contractions, basis-selector coefficients
        let id = ActivationFn::clipped_identity();
        let a = x.scale(0.05);
        let b = w.scale(0.05);
        let spec = SnnLayerSpec { layer_sizes: vec![2, 2, 1], activations: vec![id, id] };
        let alphas = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![2.0, 3.0]]];
        let out = deep_snn_forward(&spec, &alphas, &[a.clone(), b.clone()]).unwrap();
        assert!(out[0].sub(&a.scale(2.0).add(&b.scale(3.0))).max_abs() < 1e-12);

        // chain of single blocks nests the activation
        let spec = SnnLayerSpec { layer_sizes: vec![1, 1, 1], activations: vec![act, act] };
        let out = deep_snn_forward(&spec, &[vec![vec![1.0]], vec![vec![1.0]]], std::slice::from_ref(&x)).unwrap();
        let nested = spectral_activation(&spectral_activation(&x, &act).unwrap(), &act).unwrap();
        assert!(out[0].sub(&nested).max_abs() < 1e-12);

        assert!(deep_snn_forward(&spec, &[vec![vec![1.0, 2.0]], vec![vec![1.0]]], &[x]).is_err());
    }

    #[test]
    fn spectral_init_properties() {
        let g = gen_ground_truth(6, 6, 3, 11).unwrap();
        let (e, _) = gen_commuting_ensemble(6, 6, 20, 11, &g, PhiPsiSource::SvdOfTarget).unwrap();
        let (phi, psi, sigma) = (e.phi.as_ref().unwrap(), e.psi.as_ref().unwrap(), e.sigma_star.as_ref().unwrap());
        let act = ActivationFn::tanh();
        let init = spectral_init(phi, psi, sigma, 2, 6, 11, &act).unwrap();
        let h_alpha = init.state.h_alpha(&act);
        assert!(h_alpha.iter().zip(sigma).all(|(h, s)| h - s <= 0.0));
        assert!(h_alpha.iter().zip(sigma).any(|(h, s)| (h - 0.9 * s).abs() < 1e-12));
        for k in 0..2 {
            let ub = rect_diag(&init.state.ubar[k], 6, 6).unwrap();
            let vb = rect_diag(&init.state.vbar[k], 6, 6).unwrap();
            let z = init.params.u[k].matmul_t(&init.params.v[k]);
            let expected = phi.matmul(&ub).matmul(&vb.transpose()).matmul_t(psi);
            assert!(z.sub(&expected).max_abs() < 1e-10);
        }
        let x = snn_forward(&init.params).unwrap();
        let reduced = phi.matmul(&rect_diag(&h_alpha, 6, 6).unwrap()).matmul_t(psi);
        assert!(x.sub(&reduced).max_abs() < 1e-9);
        assert_eq!(init, spectral_init(phi, psi, sigma, 2, 6, 11, &act).unwrap());
    }

    #[test]
    fn spectral_init_rejects_nonpositive_target() {
        let (phi, psi) = orthogonal_pair(2, 2, 3);
        let err = spectral_init(&phi, &psi, &[0.5, 0.0], 1, 2, 0, &ActivationFn::tanh()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleInit(_)));
        assert!(spectral_init(&phi, &psi, &[0.5, 0.5], 1, 1, 0, &ActivationFn::tanh()).is_err());
    }

    #[test]
    fn near_zero_init_examples() {
        let act = ActivationFn::tanh();
        let p = near_zero_init(10, 10, 10, 2, 1e-4, 1e-6, 3, &act).unwrap();
        for m in p.u.iter().chain(&p.v) {
            for i in 0..10 {
                assert!((m[(i, i)] - 1e-4).abs() <= 6e-6);
            }
            assert_eq!(m.max_abs_off_diagonal(), 0.0);
        }
        assert!(p.alpha.iter().all(|a| (0.0..1.0).contains(a)));
        let exact = near_zero_init(3, 4, 5, 1, 1e-4, 0.0, 3, &act).unwrap();
        assert_eq!(exact.u[0], Mat::rect_identity(3, 5).scale(1e-4));
        assert_eq!(exact.v[0], Mat::rect_identity(4, 5).scale(1e-4));
    }

    #[test]
    fn loss_examples() {
        let g = gen_ground_truth(4, 4, 2, 1).unwrap();
        let mut e = gen_gaussian_ensemble(4, 4, 7, 1).unwrap();
        measure(&mut e, &g.x_star, 0.0, 1).unwrap();
        assert!(loss(&g.x_star, &e).unwrap() < 1e-28);
        let half_y: f64 = 0.5 * e.y.iter().map(|y| y * y).sum::<f64>();
        assert_eq!(loss(&Mat::zeros(4, 4), &e).unwrap(), half_y);
        let x = random_mat(4, 4, 2);
        let mut by_hand = 0.0;
        for (a, y) in e.a.iter().zip(&e.y) {
            let r = y - frobenius_inner(a, &x).unwrap();
            by_hand += 0.5 * r * r;
        }
        assert!((loss(&x, &e).unwrap() - by_hand).abs() < 1e-12 * by_hand.max(1.0));
    }

    #[test]
    fn flat_round_trip() {
        let p = near_zero_init(2, 3, 4, 2, 0.1, 0.01, 0, &ActivationFn::tanh()).unwrap();
        assert_eq!(p.len(), 2 * (1 + 5 * 4));
        assert_eq!(p.with_flat(&p.to_flat()).unwrap(), p);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<SnnParams>(&json).unwrap(), p);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

        #[test]
        fn prop_spectral_activation_maps_singular_values(rows in 1usize..6, extra in 0usize..4, seed in any::<u64>()) {
            let x = random_mat(rows, rows + extra, seed);
            let act = ActivationFn::sigmoid();
            let y = spectral_activation(&x, &act).unwrap();
            let sx = linalg::singular_values(&x).unwrap();
            let sy = linalg::singular_values(&y).unwrap();
            for (a, b) in sx.iter().zip(&sy) {
                prop_assert!((act.gamma(*a) - b).abs() < 1e-9);
            }
        }
    }
}
