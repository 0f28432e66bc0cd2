use super::expect_dim;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-token normalization over the last (channel) axis followed by a
/// per-channel affine transform.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(Error::contract("layer_norm: eps must be positive"));
    }
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::contract("layer_norm: scalar input"))?;
    expect_dim("layer_norm", "gamma length", c, gamma.numel())?;
    expect_dim("layer_norm", "beta length", c, beta.numel())?;
    let tokens = x.numel() / c.max(1);
    let cf = T::from_usize_lossy(c);
    let mut out = vec![T::zero(); x.numel()];
    // normalized values and 1/std per token, needed for backward
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); tokens];
    {
        let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
        for t in 0..tokens {
            let row = &xd[t * c..(t + 1) * c];
            let mu = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[t] = is;
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[t * c + j] = h;
                out[t * c + j] = h * gd[j] + bd[j];
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx| {
            let gd = ctx.parents[1].data();
            let go = ctx.grad_out;
            let mut gx = vec![T::zero(); go.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for t in 0..tokens {
                let r = t * c..(t + 1) * c;
                let (gor, hr) = (&go[r.clone()], &xhat[r.clone()]);
                let mut sum_dh = T::zero();
                let mut sum_dh_h = T::zero();
                for j in 0..c {
                    let dh = gor[j] * gd[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                    gg[j] += gor[j] * hr[j];
                    gb[j] += gor[j];
                }
                for j in 0..c {
                    let dh = gor[j] * gd[j];
                    gx[t * c + j] = inv_std[t] * (dh - sum_dh / cf - hr[j] * sum_dh_h / cf);
                }
            }
            vec![Some(gx), Some(gg), Some(gb)]
        }),
    ))
}
