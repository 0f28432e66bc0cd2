use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::tensor::Scalar;

/// Adam hyperparameters other than the learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        let zeros = || params.tensors().map(|p| vec![T::zero(); p.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Gradients are left in place; the caller zeroes them.
pub fn adam_step<T: Scalar>(params: &NetworkParams<T>, state: &mut AdamState<T>, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::contract(format!(
            "adam: state tracks {} parameters, network has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (name, p) in params.iter() {
        if p.with_grad(|g| g.is_none()) {
            return Err(Error::contract(format!("adam: parameter `{name}` has no gradient")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let step = T::from_f64_lossy(lr / c1);
    let inv_c2 = T::from_f64_lossy(1.0 / c2);
    let eps = T::from_f64_lossy(cfg.eps);
    for ((p, m), v) in params.tensors().zip(&mut state.m).zip(&mut state.v) {
        p.with_grad(|g| {
            let g = g.expect("checked above");
            p.update(|w| {
                for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
                }
            });
        });
    }
    Ok(())
}
