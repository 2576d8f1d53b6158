//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::segnet::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First and second moment accumulators, one buffer per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = lengths
            .into_iter()
            .map(|n| (vec![T::zero(); n], vec![T::zero(); n]))
            .unzip();
        Self { m, v, step: 0 }
    }

    pub fn for_params(params: &NetworkParams<T>) -> Self {
        Self::new(params.slices().iter().map(|s| s.len()))
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update over matching lists of parameter and gradient slices.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    let aligned = params.len() == grads.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !aligned {
        return Err(Error::shape("adam: parameters, gradients and state do not align"));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(config.beta1), T::from_f64(config.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - config.beta1), T::from_f64(1.0 - config.beta2));
    let c1 = T::from_f64(1.0 / (1.0 - config.beta1.powi(t)));
    let c2 = T::from_f64(1.0 / (1.0 - config.beta2.powi(t)));
    let lr = T::from_f64(config.learning_rate);
    let eps = T::from_f64(config.eps);

    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn adam_step_network<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    let mut p = params.slices_mut();
    adam_step(&mut p, &grads.slices(), state, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step1(p: &mut f64, g: f64, state: &mut AdamState<f64>, cfg: &AdamConfig) {
        let mut slot = [*p];
        adam_step(&mut [&mut slot[..]], &[&[g]], state, cfg).unwrap();
        *p = slot[0];
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new([3]);
        let mut p = [1.0, -2.0, 0.5];
        adam_step(&mut [&mut p[..]], &[&[0.0; 3]], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = AdamConfig::with_lr(0.001);
        let mut state = AdamState::new([1]);
        let mut p = 0.0;
        step1(&mut p, 1.0, &mut state, &cfg);
        assert!((p + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);

        for g in [1e-3, -5.0, 1e4] {
            let mut state = AdamState::new([1]);
            let mut p = 0.0;
            step1(&mut p, g, &mut state, &cfg);
            assert!((p.abs() - 0.001).abs() < 1e-7, "g={g} step={p}");
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut state = AdamState::new([1]);
        let mut w = 1.0;
        let mut reached = None;
        for i in 0..500 {
            let g = w;
            step1(&mut w, g, &mut state, &cfg);
            if w.abs() < 0.1 && reached.is_none() {
                reached = Some(i);
            }
        }
        assert!(reached.is_some(), "final w = {w}");
    }

    #[test]
    fn misaligned_shapes_error() {
        let mut state = AdamState::<f64>::new([2]);
        let mut p = [0.0; 3];
        assert!(adam_step(&mut [&mut p[..]], &[&[0.0; 3]], &mut state, &AdamConfig::default()).is_err());
    }
}
