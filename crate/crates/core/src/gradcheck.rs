//! Central finite-difference checks of the analytic gradients, in double
//! precision: the smoothing penalty, the full objective through the sigmoid,
//! and a tiny network's parameter gradients.

use rand::Rng;

use crate::error::Result;
use crate::graph_smoothing::PatchLaplacians;
use crate::objective::{total_objective, Reduction};
use crate::seed::{self, stream};
use crate::segnet::{backward, forward, NetworkConfig, NetworkParams};
use crate::tensor::Tensor4;

pub const SMOOTHING_TOLERANCE: f64 = 1e-6;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

/// Denominator floor for relative errors, so coordinates whose true
/// gradient is zero compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checked: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst < self.tolerance
    }
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<10} {} coordinates, worst relative error {:.3e} (tolerance {:.0e}): {}",
            self.name,
            self.checked,
            self.worst,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Flip the sign of every analytic gradient; the report must fail.
    pub corrupt: bool,
}

fn sign(opts: &GradcheckOptions) -> f64 {
    if opts.corrupt {
        -1.0
    } else {
        1.0
    }
}

/// Central difference with two Richardson extrapolation steps over `h`,
/// `h/2` and `h/4`; truncation error is `O(h^6)`.
fn richardson(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let mut d = [0.0; 3];
    for (k, dk) in d.iter_mut().enumerate() {
        let step = h / f64::from(1u32 << k);
        *dk = (f(step)? - f(-step)?) / (2.0 * step);
    }
    let r1 = (4.0 * d[1] - d[0]) / 3.0;
    let r2 = (4.0 * d[2] - d[1]) / 3.0;
    Ok((16.0 * r2 - r1) / 15.0)
}

fn random_labels<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    if rng.random_bool(0.5) {
        (0..n).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect()
    } else {
        (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
    }
}

/// `dS/dy` on `instances` random patches with up to 16 nodes per region.
pub fn smoothing_suite(opts: &GradcheckOptions, instances: usize) -> Result<SuiteResult> {
    let mut rng = seed::stream_rng(opts.seed, stream::GRADCHECK);
    let h = 1e-3;
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..instances {
        let n = rng.random_range(8..=64);
        let labels = random_labels(n, &mut rng);
        let m = rng.random_range(1..=16);
        let graphs = PatchLaplacians::sample(&labels, m, &mut rng)?;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let analytic = graphs.smoothing(&y)?.gradient;
        for &node in graphs.foreground.nodes().iter().chain(graphs.background.nodes()) {
            let numeric = richardson(
                |delta| {
                    let mut yd = y.clone();
                    yd[node] += delta;
                    Ok(graphs.smoothing(&yd)?.value)
                },
                h,
            )?;
            worst = worst.max(relative_error(sign(opts) * analytic[node], numeric));
            checked += 1;
        }
    }
    Ok(SuiteResult {
        name: "smoothing",
        checked,
        worst,
        tolerance: SMOOTHING_TOLERANCE,
    })
}

/// Gradient of BCE + lambda * S with respect to the logits, node samples
/// held fixed by re-seeding the sampler for every evaluation.
pub fn objective_suite(opts: &GradcheckOptions, instances: usize) -> Result<SuiteResult> {
    let mut rng = seed::stream_rng(opts.seed, stream::GRADCHECK ^ 0x0b);
    let h = 1e-2;
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..instances {
        let shape = [2, 1, 6, 6];
        let n: usize = shape.iter().product();
        let logits = Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())?;
        let targets = Tensor4::from_vec(shape, random_labels(n, &mut rng))?;
        let lambda = rng.random_range(0.05..2.0);
        let m = rng.random_range(2..=16);
        let reduction = if rng.random_bool(0.5) { Reduction::Sum } else { Reduction::Mean };
        let sampler_seed: u64 = rng.random();
        let eval = |z: &Tensor4<f64>| {
            total_objective(z, &targets, lambda, m, reduction, &mut seed::rng(sampler_seed))
        };
        let (_, grad) = eval(&logits)?;
        for i in 0..n {
            let numeric = richardson(
                |delta| {
                    let mut z = logits.clone();
                    z.data_mut()[i] += delta;
                    Ok(eval(&z)?.0.total)
                },
                h,
            )?;
            worst = worst.max(relative_error(sign(opts) * grad.data()[i], numeric));
            checked += 1;
        }
    }
    Ok(SuiteResult {
        name: "objective",
        checked,
        worst,
        tolerance: OBJECTIVE_TOLERANCE,
    })
}

/// Parameter gradients of a 2/4/8-channel network on an 8x8 input against
/// central differences of `sum(r * logits)` for a fixed random `r`.
pub fn network_suite(opts: &GradcheckOptions, samples: usize) -> Result<SuiteResult> {
    let mut rng = seed::stream_rng(opts.seed, stream::GRADCHECK ^ 0x1c);
    let config = NetworkConfig::tiny([2, 4, 8]);
    let params = NetworkParams::<f64>::init(&config, &mut rng)?;
    let shape = [2, 1, 8, 8];
    let n: usize = shape.iter().product();
    let x = Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let r = Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let (_, cache) = forward(&params, &x)?;
    let base_pattern = cache.activation_pattern();
    let (grads, _) = backward(&params, &cache, &r)?;
    let flat_grads: Vec<f64> = grads.slices().concat();
    let total = flat_grads.len();

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    // Coordinates whose perturbation crosses a ReLU or pooling kink are
    // redrawn; the one-sided derivatives differ there.
    let mut attempts = 0;
    while checked < samples && attempts < 20 * samples {
        attempts += 1;
        let idx = rng.random_range(0..total);
        let perturbed = |delta: f64| -> Result<(f64, Vec<u32>)> {
            let mut p = params.clone();
            let mut offset = idx;
            for s in p.slices_mut() {
                if offset < s.len() {
                    s[offset] += delta;
                    break;
                }
                offset -= s.len();
            }
            let (z, cache) = forward(&p, &x)?;
            let value = z.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
            Ok((value, cache.activation_pattern()))
        };
        let (plus, plus_pattern) = perturbed(h)?;
        let (minus, minus_pattern) = perturbed(-h)?;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(sign(opts) * flat_grads[idx], numeric));
        checked += 1;
    }
    Ok(SuiteResult {
        name: "network",
        checked,
        worst,
        tolerance: NETWORK_TOLERANCE,
    })
}

/// All three suites at their default sizes.
pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        smoothing_suite(opts, 50)?,
        objective_suite(opts, 5)?,
        network_suite(opts, 150)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_and_corruption_fails() {
        let ok = GradcheckOptions { seed: 1, corrupt: false };
        assert!(smoothing_suite(&ok, 10).unwrap().passed());
        assert!(objective_suite(&ok, 1).unwrap().passed());
        assert!(network_suite(&ok, 30).unwrap().passed());

        let bad = GradcheckOptions { seed: 1, corrupt: true };
        assert!(!smoothing_suite(&bad, 3).unwrap().passed());
        assert!(!objective_suite(&bad, 1).unwrap().passed());
        assert!(!network_suite(&bad, 20).unwrap().passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < 1e-2);
    }
}
