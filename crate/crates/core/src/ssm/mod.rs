//! Selective state-space layer: input-dependent discretization and the
//! linear-time scan.
//!
//! The state matrix is diagonal and stored as `a_log = ln(-A)`, so
//! `A = -exp(a_log) < 0` and every discrete transition `exp(delta * A)` lies
//! in `(0, 1)`. Per token, `delta = softplus(dt_up(dt_down(x)) + dt_bias)`
//! is positive, while `B` and `C` are linear projections of the token.
//!
//! Sequences are flattened feature maps in row-major order; there is a
//! single scan direction.

mod kernel;

pub use kernel::{discretize, scan_chunked, scan_sequential, ScanInputs};

use crate::error::Result;
use crate::nn::{Init, ParamStore};
use crate::ops::{self, expect_dim, expect_rank};
use crate::tensor::{no_grad, Scalar, Tensor};

/// How the forward recurrence is evaluated when no gradient is recorded.
/// Recording always uses the sequential kernel, which keeps the hidden
/// states needed by the adjoint pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    Chunked(usize),
}

#[derive(Debug, Clone)]
pub struct SsmParams<T: Scalar> {
    /// `[D, N]`, `ln(-A)`.
    pub a_log: Tensor<T>,
    /// `[R, D]` low-rank input to the step-size projection.
    pub dt_down: Tensor<T>,
    /// `[D, R]`.
    pub dt_up: Tensor<T>,
    /// `[D]`.
    pub dt_bias: Tensor<T>,
    /// `[N, D]`.
    pub b_proj: Tensor<T>,
    /// `[N, D]`.
    pub c_proj: Tensor<T>,
    /// `[D]`.
    pub d_skip: Tensor<T>,
}

impl<T: Scalar> SsmParams<T> {
    /// S4D-real initialization: `A[d, n] = -(n + 1)`; step-size bias such
    /// that `softplus(dt_bias)` is log-uniform in `[1e-3, 1e-1]`; `D = 1`.
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize, state: usize, dt_rank: usize) -> Result<Self> {
        let a_log: Vec<f64> = (0..channels)
            .flat_map(|_| (0..state).map(|n| ((n + 1) as f64).ln()))
            .collect();
        let dt_bias: Vec<f64> = {
            let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
            (0..channels)
                .map(|_| {
                    let dt = (lo + store.uniform01() * (hi - lo)).exp();
                    // inverse softplus
                    dt + (-(-dt).exp_m1()).ln()
                })
                .collect()
        };
        Ok(Self {
            a_log: store.param(&format!("{prefix}.a_log"), &[channels, state], Init::Values(a_log))?,
            dt_down: store.param(&format!("{prefix}.dt_down.weight"), &[dt_rank, channels], Init::FanIn(channels))?,
            dt_up: store.param(&format!("{prefix}.dt_up.weight"), &[channels, dt_rank], Init::FanIn(dt_rank))?,
            dt_bias: store.param(&format!("{prefix}.dt_up.bias"), &[channels], Init::Values(dt_bias))?,
            b_proj: store.param(&format!("{prefix}.b_proj.weight"), &[state, channels], Init::FanIn(channels))?,
            c_proj: store.param(&format!("{prefix}.c_proj.weight"), &[state, channels], Init::FanIn(channels))?,
            d_skip: store.param(&format!("{prefix}.d_skip"), &[channels], Init::Ones)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Continuous state matrix diagonal `A = -exp(a_log)`.
    pub fn a(&self) -> Vec<T> {
        self.a_log.data().iter().map(|&v| -v.exp()).collect()
    }

    /// Per-token `(delta, B, C)` for a `[.., L, D]` input.
    pub fn project(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let low = ops::linear(x, &self.dt_down, None)?;
        let delta = ops::softplus(&ops::linear(&low, &self.dt_up, Some(&self.dt_bias))?);
        let b = ops::linear(x, &self.b_proj, None)?;
        let c = ops::linear(x, &self.c_proj, None)?;
        Ok((delta, b, c))
    }
}

/// Differentiable selective scan over a batch.
///
/// Shapes: `x`, `delta`: `[B, L, D]`; `a_log`: `[D, N]`; `b`, `c`:
/// `[B, L, N]`; `d_skip`: `[D]`. Batch elements never share state.
pub fn selective_scan<T: Scalar>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a_log: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d_skip: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    expect_rank("selective_scan", x, 3)?;
    expect_rank("selective_scan", a_log, 2)?;
    let (nb, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = a_log.shape()[1];
    expect_dim("selective_scan", "a_log channels", d, a_log.shape()[0])?;
    if delta.shape() != x.shape() {
        return Err(crate::Error::contract("selective_scan: delta must match x"));
    }
    for t in [b, c] {
        if t.shape() != [nb, l, n] {
            return Err(crate::Error::contract(format!(
                "selective_scan: B/C must be [{nb}, {l}, {n}], got {:?}",
                t.shape()
            )));
        }
    }
    expect_dim("selective_scan", "d_skip length", d, d_skip.numel())?;

    let a: Vec<T> = a_log.data().iter().map(|&v| -v.exp()).collect();
    let track = [x, delta, a_log, b, c, d_skip].iter().any(|t| t.requires_grad());
    let (xd, dd, bd, cd, sd) = (x.data(), delta.data(), b.data(), c.data(), d_skip.data());
    let inputs = |i: usize| ScanInputs {
        len: l,
        channels: d,
        state: n,
        x: &xd[i * l * d..(i + 1) * l * d],
        delta: &dd[i * l * d..(i + 1) * l * d],
        a: &a,
        b: &bd[i * l * n..(i + 1) * l * n],
        c: &cd[i * l * n..(i + 1) * l * n],
        d_skip: &sd,
    };
    let mut y = Vec::with_capacity(nb * l * d);
    let mut tapes = Vec::new();
    for i in 0..nb {
        let inp = inputs(i);
        if track && crate::tensor::grad_enabled() {
            let (yi, tape) = kernel::scan_sequential_with_states(&inp);
            y.extend(yi);
            tapes.push(tape);
        } else {
            match mode {
                ScanMode::Sequential => y.extend(scan_sequential(&inp)?),
                ScanMode::Chunked(k) => y.extend(scan_chunked(&inp, k)?),
            }
        }
    }
    drop((xd, dd, bd, cd, sd));

    Ok(Tensor::from_op(
        vec![nb, l, d],
        y,
        vec![x.clone(), delta.clone(), a_log.clone(), b.clone(), c.clone(), d_skip.clone()],
        Box::new(move |ctx| {
            let p = ctx.parents;
            let (xd, dd, ad, bd, cd, sd) = (p[0].data(), p[1].data(), p[2].data(), p[3].data(), p[4].data(), p[5].data());
            let a: Vec<T> = ad.iter().map(|&v| -v.exp()).collect();
            let mut shared = kernel::zero_shared::<T>(d, n);
            let (mut gx, mut gdelta, mut gb, mut gc) = (
                Vec::with_capacity(nb * l * d),
                Vec::with_capacity(nb * l * d),
                Vec::with_capacity(nb * l * n),
                Vec::with_capacity(nb * l * n),
            );
            for (i, tape) in tapes.iter().enumerate() {
                let inp = ScanInputs {
                    len: l,
                    channels: d,
                    state: n,
                    x: &xd[i * l * d..(i + 1) * l * d],
                    delta: &dd[i * l * d..(i + 1) * l * d],
                    a: &a,
                    b: &bd[i * l * n..(i + 1) * l * n],
                    c: &cd[i * l * n..(i + 1) * l * n],
                    d_skip: &sd,
                };
                let g = kernel::scan_backward(&inp, tape, &ctx.grad_out[i * l * d..(i + 1) * l * d], &mut shared);
                gx.extend(g.x);
                gdelta.extend(g.delta);
                gb.extend(g.b);
                gc.extend(g.c);
            }
            // dL/d a_log = dL/dA * dA/d a_log = dL/dA * A
            let ga_log = shared.a.iter().zip(&a).map(|(&g, &av)| g * av).collect();
            vec![Some(gx), Some(gdelta), Some(ga_log), Some(gb), Some(gc), Some(shared.d_skip)]
        }),
    ))
}

/// Full selective SSM layer on `[B, L, D]`.
pub fn ssm_apply<T: Scalar>(x: &Tensor<T>, params: &SsmParams<T>, mode: ScanMode) -> Result<Tensor<T>> {
    let (delta, b, c) = params.project(x)?;
    selective_scan(x, &delta, &params.a_log, &b, &c, &params.d_skip, mode)
}

/// Projects a single `[L, D]` sequence and runs the sequential kernel.
pub fn scan_sequence<T: Scalar>(x: &[T], len: usize, params: &SsmParams<T>) -> Result<Vec<T>> {
    let d = params.channels();
    let xt = Tensor::new(&[1, len, d], x.to_vec())?;
    no_grad(|| Ok(ssm_apply(&xt, params, ScanMode::Sequential)?.to_vec()))
}

/// As [`scan_sequence`] with the chunked kernel.
pub fn scan_sequence_chunked<T: Scalar>(x: &[T], len: usize, params: &SsmParams<T>, chunk: usize) -> Result<Vec<T>> {
    let d = params.channels();
    let xt = Tensor::new(&[1, len, d], x.to_vec())?;
    no_grad(|| Ok(ssm_apply(&xt, params, ScanMode::Chunked(chunk))?.to_vec()))
}
