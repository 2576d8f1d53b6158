//! Binary cross-entropy plus the lambda-weighted graph smoothing penalty.
//!
//! The minimized objective for a batch of `M` patches is
//!
//! ```text
//! O = -sum_i [t_i ln y_i + (1 - t_i) ln(1 - y_i)] + lambda * sum_batch S
//! ```
//!
//! with `y = sigmoid(z)`. The cross-entropy term is evaluated in the fused
//! logits form `softplus(z) - t z`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph_smoothing::PatchLaplacians;
use crate::real::Real;
use crate::tensor::Tensor4;

/// Clamp used whenever a probability is passed through `ln` directly.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Sum over pixels and batch items.
    #[default]
    Sum,
    /// Cross-entropy averaged over pixels and batch items. The smoothing
    /// term stays a sum over the batch.
    Mean,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::Config(format!("unknown reduction `{other}` (sum|mean)"))),
        }
    }
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub bce: f64,
    pub smoothing_sum: f64,
    pub lambda: f64,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Cross-entropy of one probability against one target with the `PROB_EPS`
/// clamp. Reference path for tests; training uses the logits form.
pub fn bce_from_probability(y: f64, t: f64) -> f64 {
    let y = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
}

fn check_targets<T: Real>(logits: &Tensor4<T>, targets: &Tensor4<T>) -> Result<()> {
    if logits.shape() != targets.shape() || logits.channels() != 1 {
        return Err(Error::shape(format!(
            "logits {:?} and targets {:?} must share an (n, 1, h, w) shape",
            logits.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = targets.data().iter().find(|t| !(T::zero()..=T::one()).contains(*t)) {
        return Err(Error::InvalidLabel(bad.as_f64()));
    }
    Ok(())
}

fn bce_unchecked<T: Real>(logits: &Tensor4<T>, targets: &Tensor4<T>, reduction: Reduction) -> (f64, Vec<f64>) {
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / logits.len().max(1) as f64,
    };
    let mut value = 0.0;
    let grad = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| {
            let (z, t) = (z.as_f64(), t.as_f64());
            value += softplus(z) - t * z;
            scale * (sigmoid(z) - t)
        })
        .collect();
    (value * scale, grad)
}

/// Cross-entropy of `sigmoid(logits)` against `targets` and its gradient
/// with respect to the logits.
pub fn bce_with_logits<T: Real>(
    logits: &Tensor4<T>,
    targets: &Tensor4<T>,
    reduction: Reduction,
) -> Result<(f64, Tensor4<T>)> {
    check_targets(logits, targets)?;
    let (value, grad) = bce_unchecked(logits, targets, reduction);
    let grad = Tensor4::from_vec(logits.shape(), grad.into_iter().map(T::from_f64).collect())?;
    Ok((value, grad))
}

/// Full objective for a batch. For every batch item, node sets are sampled
/// from its targets with `rng` (foreground then background, items in order),
/// and `S` is evaluated on `sigmoid(logits)`.
pub fn total_objective<T: Real, R: Rng + ?Sized>(
    logits: &Tensor4<T>,
    targets: &Tensor4<T>,
    lambda: f64,
    sample_m: usize,
    reduction: Reduction,
    rng: &mut R,
) -> Result<(ObjectiveValue, Tensor4<T>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    check_targets(logits, targets)?;
    let (bce, mut grad) = bce_unchecked(logits, targets, reduction);

    let item = logits.item_len();
    let mut smoothing_sum = 0.0;
    for b in 0..logits.batch() {
        let labels: Vec<f64> = targets.item(b).iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = logits.item(b).iter().map(|v| sigmoid(v.as_f64())).collect();
        let graphs = PatchLaplacians::sample(&labels, sample_m, rng)?;
        let s = graphs.smoothing(&y)?;
        smoothing_sum += s.value;
        let g = &mut grad[b * item..(b + 1) * item];
        for lap in [&graphs.foreground, &graphs.background] {
            for &n in lap.nodes() {
                g[n] += lambda * s.gradient[n] * y[n] * (1.0 - y[n]);
            }
        }
    }

    let value = ObjectiveValue {
        total: bce + lambda * smoothing_sum,
        bce,
        smoothing_sum,
        lambda,
    };
    let grad = Tensor4::from_vec(logits.shape(), grad.into_iter().map(T::from_f64).collect())?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn t(data: Vec<f64>) -> Tensor4<f64> {
        let n = data.len();
        Tensor4::from_vec([1, 1, 1, n], data).unwrap()
    }

    #[test]
    fn bce_at_zero_logit() {
        let (v, g) = bce_with_logits(&t(vec![0.0]), &t(vec![1.0]), Reduction::Sum).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g.data(), &[-0.5]);
    }

    #[test]
    fn bce_saturation_is_finite() {
        let z = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![38.0, -38.0, 1e4]).unwrap();
        let tt = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![1.0, 0.0, 1.0]).unwrap();
        let (v, g) = bce_with_logits(&z, &tt, Reduction::Sum).unwrap();
        assert!(v.is_finite() && v < 1e-15);
        assert!(g.all_finite());
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn bce_stationary_at_matching_target() {
        let z = 0.8;
        let (_, g) = bce_with_logits(&t(vec![z]), &t(vec![sigmoid(z)]), Reduction::Sum).unwrap();
        assert!(g.data()[0].abs() < 1e-16);
    }

    #[test]
    fn fused_form_matches_clamped_reference() {
        for &(z, tt) in &[(0.3, 1.0), (-2.0, 0.0), (1.5, 0.25), (-0.7, 0.9)] {
            let (v, _) = bce_with_logits(&t(vec![z]), &t(vec![tt]), Reduction::Sum).unwrap();
            assert!((v - bce_from_probability(sigmoid(z), tt)).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_reduction_scales() {
        let z = t(vec![0.1, -0.4, 2.0, 0.0]);
        let tt = t(vec![1.0, 0.0, 1.0, 0.0]);
        let (s, gs) = bce_with_logits(&z, &tt, Reduction::Sum).unwrap();
        let (m, gm) = bce_with_logits(&z, &tt, Reduction::Mean).unwrap();
        assert!((s / 4.0 - m).abs() < 1e-15);
        for (a, b) in gs.data().iter().zip(gm.data()) {
            assert!((a / 4.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            bce_with_logits(&t(vec![0.0]), &t(vec![1.5]), Reduction::Sum),
            Err(Error::InvalidLabel(_))
        ));
        assert!(matches!(
            bce_with_logits(&t(vec![0.0, 1.0]), &t(vec![1.0]), Reduction::Sum),
            Err(Error::Shape(_))
        ));
        assert!(total_objective(&t(vec![0.0]), &t(vec![1.0]), -1.0, 4, Reduction::Sum, &mut seed::rng(0)).is_err());
    }

    fn patch(n: usize) -> (Tensor4<f64>, Tensor4<f64>) {
        let logits = (0..n * 16).map(|i| ((i * 29) % 13) as f64 / 4.0 - 1.5).collect();
        let labels = (0..n * 16).map(|i| ((i * 7) % 5 < 2) as u8 as f64).collect();
        (
            Tensor4::from_vec([n, 1, 4, 4], logits).unwrap(),
            Tensor4::from_vec([n, 1, 4, 4], labels).unwrap(),
        )
    }

    #[test]
    fn lambda_zero_is_plain_bce() {
        let (z, tt) = patch(2);
        let (v, g) = total_objective(&z, &tt, 0.0, 5, Reduction::Sum, &mut seed::rng(1)).unwrap();
        let (b, gb) = bce_with_logits(&z, &tt, Reduction::Sum).unwrap();
        assert_eq!(v.total, b);
        assert_eq!(g, gb);
        assert!(v.smoothing_sum > 0.0);
    }

    #[test]
    fn constant_logits_have_no_smoothing() {
        let (_, tt) = patch(2);
        let z = Tensor4::filled([2, 1, 4, 4], 0.37);
        let (v, g) = total_objective(&z, &tt, 10.0, 8, Reduction::Sum, &mut seed::rng(2)).unwrap();
        let (_, gb) = bce_with_logits(&z, &tt, Reduction::Sum).unwrap();
        assert_eq!(v.smoothing_sum, 0.0);
        assert_eq!(v.total, v.bce);
        assert_eq!(g, gb);
    }

    #[test]
    fn decomposition_and_monotonicity() {
        let (z, tt) = patch(3);
        let mut last = f64::NEG_INFINITY;
        for lambda in [0.0, 1e-7, 1e-4, 0.1, 1.0, 10.0] {
            let (v, _) = total_objective(&z, &tt, lambda, 6, Reduction::Sum, &mut seed::rng(3)).unwrap();
            assert!((v.total - v.bce - lambda * v.smoothing_sum).abs() <= 1e-9 * v.total.abs());
            assert!(v.total >= last);
            last = v.total;
        }
    }
}
