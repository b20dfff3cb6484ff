//! Scalar activations applied to singular values.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A scalar non-linearity `γ` with its derivative.
///
/// Activations are identified by name so parameters and configs can refer
/// to them in text form; see [`ActivationFn::by_name`].
#[derive(Clone, Copy)]
pub struct ActivationFn {
    name: &'static str,
    gamma: fn(f64) -> f64,
    gamma_prime: fn(f64) -> f64,
    zero_locus_hint: Option<f64>,
}

impl fmt::Debug for ActivationFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ActivationFn({})", self.name)
    }
}

impl PartialEq for ActivationFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl Serialize for ActivationFn {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name)
    }
}

impl<'de> Deserialize<'de> for ActivationFn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        ActivationFn::by_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown activation `{name}`")))
    }
}

/// Half-width of the quadratic smoothing in [`ActivationFn::smoothed_clipped_relu`].
const SMOOTHING: f64 = 0.2;

fn smooth_relu(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < SMOOTHING {
        x * x / (2.0 * SMOOTHING)
    } else {
        x - SMOOTHING / 2.0
    }
}

fn smooth_relu_prime(x: f64) -> f64 {
    (x / SMOOTHING).clamp(0.0, 1.0)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationFn {
    pub const NAMES: [&'static str; 6] = [
        "tanh",
        "tanh_clamped",
        "sigmoid",
        "smoothed_clipped_relu",
        "clipped_identity",
        "identity",
    ];

    /// `tanh` exactly as used in the commuting experiments. Negative for
    /// negative inputs, so it does not satisfy the `[0, 1]` range condition.
    pub fn tanh() -> Self {
        ActivationFn {
            name: "tanh",
            gamma: f64::tanh,
            gamma_prime: |x| 1.0 - x.tanh().powi(2),
            zero_locus_hint: Some(0.0),
        }
    }

    /// `max(tanh(x), 0)`; the derivative at 0 is taken from the right.
    pub fn tanh_clamped() -> Self {
        ActivationFn {
            name: "tanh_clamped",
            gamma: |x| x.tanh().max(0.0),
            gamma_prime: |x| if x >= 0.0 { 1.0 - x.tanh().powi(2) } else { 0.0 },
            zero_locus_hint: Some(0.0),
        }
    }

    pub fn sigmoid() -> Self {
        ActivationFn {
            name: "sigmoid",
            gamma: sigmoid,
            gamma_prime: |x| {
                let s = sigmoid(x);
                s * (1.0 - s)
            },
            zero_locus_hint: Some(f64::NEG_INFINITY),
        }
    }

    /// `r(x) - r(x - 1)` with `r` a ReLU whose kink is rounded off by a
    /// quadratic on `[0, 0.2]`: continuously differentiable, 0 below 0 and
    /// 1 above 1.2.
    pub fn smoothed_clipped_relu() -> Self {
        ActivationFn {
            name: "smoothed_clipped_relu",
            gamma: |x| smooth_relu(x) - smooth_relu(x - 1.0),
            gamma_prime: |x| smooth_relu_prime(x) - smooth_relu_prime(x - 1.0),
            zero_locus_hint: Some(0.0),
        }
    }

    /// `clamp(x, 0, 1)`.
    pub fn clipped_identity() -> Self {
        ActivationFn {
            name: "clipped_identity",
            gamma: |x| x.clamp(0.0, 1.0),
            gamma_prime: |x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 },
            zero_locus_hint: Some(0.0),
        }
    }

    /// `γ(x) = x`. Unbounded; useful as a linear reference.
    pub fn identity() -> Self {
        ActivationFn {
            name: "identity",
            gamma: |x| x,
            gamma_prime: |_| 1.0,
            zero_locus_hint: Some(0.0),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "tanh" => Self::tanh(),
            "tanh_clamped" => Self::tanh_clamped(),
            "sigmoid" => Self::sigmoid(),
            "smoothed_clipped_relu" => Self::smoothed_clipped_relu(),
            "clipped_identity" => Self::clipped_identity(),
            "identity" => Self::identity(),
            _ => return None,
        })
    }

    /// The range-respecting counterpart of this activation. Only `tanh`
    /// changes.
    pub fn clamped(self) -> Self {
        if self.name == "tanh" {
            Self::tanh_clamped()
        } else {
            self
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    #[inline]
    pub fn gamma(&self, x: f64) -> f64 {
        (self.gamma)(x)
    }

    #[inline]
    pub fn gamma_prime(&self, x: f64) -> f64 {
        (self.gamma_prime)(x)
    }

    /// Where `γ` vanishes: `Some(0.0)` when `γ(0) = 0`, `-∞` when it only
    /// vanishes asymptotically.
    pub fn zero_locus_hint(&self) -> Option<f64> {
        self.zero_locus_hint
    }
}

/// Outcome of [`validate_assumption3`].
#[derive(Debug, Clone, PartialEq)]
pub struct Assumption3Report {
    pub bounded: bool,
    pub monotone: bool,
    pub max_derivative_error: f64,
}

impl Assumption3Report {
    pub fn holds(&self) -> bool {
        self.bounded && self.monotone && self.max_derivative_error <= 1e-6
    }
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Checks boundedness in `[0, 1]`, monotonicity and the derivative on a grid.
///
/// The derivative is compared with a central difference; at kinks, where
/// the supplied derivative is one-sided, agreement with either one-sided
/// difference is accepted.
pub fn validate_assumption3(act: &ActivationFn, grid: &[f64]) -> Assumption3Report {
    let h = 1e-7;
    let bounded = grid.iter().all(|&x| {
        let g = act.gamma(x);
        (0.0..=1.0).contains(&g)
    });
    let monotone = grid.windows(2).all(|w| act.gamma(w[0]) <= act.gamma(w[1]));
    let mut max_err = 0.0f64;
    for &x in grid {
        let gp = act.gamma_prime(x);
        let fwd = (act.gamma(x + h) - act.gamma(x)) / h;
        let bwd = (act.gamma(x) - act.gamma(x - h)) / h;
        let central = 0.5 * (fwd + bwd);
        let err = (gp - central).abs().min((gp - fwd).abs()).min((gp - bwd).abs());
        max_err = max_err.max(err);
    }
    Assumption3Report {
        bounded,
        monotone,
        max_derivative_error: max_err,
    }
}
