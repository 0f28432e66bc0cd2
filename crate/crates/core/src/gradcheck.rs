//! Central-difference verification of analytic gradients.
//!
//! Runs in checking precision (`f64`). Non-scalar outputs are reduced to a
//! scalar through a fixed random projection so that every output element
//! contributes to the compared gradient.
//!
//! Networks built from ReLUs are only piecewise smooth: a perturbation of
//! `step` can carry a pre-activation across zero, and the central
//! difference then averages two different slopes. A coordinate that fails at
//! `step` is therefore re-measured with progressively smaller steps; a wrong
//! analytic gradient disagrees at every step, whereas a kink crossing
//! disappears once the step is shorter than the distance to the kink.

pub mod suite;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so that coordinates whose
    /// true gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Coordinates per tensor to compare; all of them when the tensor is
    /// smaller.
    pub max_coords: usize,
    pub seed: u64,
    /// Extra measurements at `step / 4^k` (`k = 1..=kink_retries`) for
    /// coordinates that fail at `step`.
    pub kink_retries: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-6,
            floor: 1e-4,
            max_coords: 24,
            seed: 0x5eed,
            kink_retries: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Coordinates that only agreed after shrinking the step.
    pub retried: usize,
    /// `(tensor index, coordinate, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub pass: bool,
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks `d loss / d param` for every tensor in `params`.
///
/// `loss` must rebuild its graph from the current parameter values on each
/// call and return a scalar. Each element of `params` must be a leaf created
/// with [`Tensor::parameter`].
pub fn gradcheck_params<F>(loss: F, params: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    if params.iter().any(|p| !p.requires_grad()) {
        return Err(Error::contract("gradcheck: every checked tensor must be a parameter"));
    }
    params.iter().for_each(Tensor::zero_grad);
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad().expect("parameter")).collect();
    params.iter().for_each(Tensor::zero_grad);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        retried: 0,
        worst: None,
        pass: true,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let a = analytic[pi][i];
            let mut step = cfg.step;
            let mut numeric = central_difference(&loss, p, i, step)?;
            let mut rel = rel_err(a, numeric, cfg.floor);
            for _ in 0..cfg.kink_retries {
                if rel <= cfg.tol {
                    break;
                }
                step /= 4.0;
                let n = central_difference(&loss, p, i, step)?;
                let r = rel_err(a, n, cfg.floor);
                if r < rel {
                    (numeric, rel) = (n, r);
                }
            }
            if step < cfg.step && rel <= cfg.tol {
                report.retried += 1;
            }
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel >= report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, i, a, numeric));
            }
        }
    }
    report.pass = report.max_rel_err <= cfg.tol;
    Ok(report)
}

fn central_difference<F>(loss: &F, p: &Tensor<f64>, i: usize, step: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    let orig = p.data()[i];
    p.update(|d| d[i] = orig + step);
    let plus = no_grad(loss);
    p.update(|d| d[i] = orig - step);
    let minus = no_grad(loss);
    p.update(|d| d[i] = orig);
    Ok((plus?.item() - minus?.item()) / (2.0 * step))
}

/// Checks the gradient of `f` with respect to its input at `x`.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, cfg: &GradcheckConfig) -> Result<GradReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let input = Tensor::parameter(x.shape(), x.to_vec())?;
    let probe = no_grad(|| f(&input))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let weights: Vec<f64> = (0..probe.numel()).map(|_| rng.gen_range(0.5..1.5)).collect();
    let weights = Tensor::new(probe.shape(), weights)?;
    gradcheck_params(
        || Ok(ops::sum(&ops::mul(&f(&input)?, &weights)?)),
        std::slice::from_ref(&input),
        cfg,
    )
}
