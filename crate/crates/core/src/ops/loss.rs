use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Element weights: 1 where the target is valid, 0 elsewhere.
fn weights(op: &'static str, n: usize, mask: Option<&[bool]>) -> Result<(Vec<bool>, usize)> {
    let w = match mask {
        Some(m) if m.len() != n => {
            return Err(Error::contract(format!("{op}: mask has {} entries for {n} elements", m.len())))
        }
        Some(m) => m.to_vec(),
        None => vec![true; n],
    };
    let count = w.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::contract(format!("{op}: no valid elements")));
    }
    Ok((w, count))
}

fn check<T: Scalar>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::contract(format!(
            "{op}: prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean absolute error over the elements where `mask` is set (all of them
/// when `None`). The target is treated as data; the subgradient at a zero
/// residual is 0.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    check("l1_loss", pred, target)?;
    let (w, count) = weights("l1_loss", pred.numel(), mask)?;
    let inv = T::one() / T::from_usize_lossy(count);
    let t = target.to_vec();
    let total: T = pred
        .data()
        .iter()
        .zip(&t)
        .zip(&w)
        .filter(|(_, &on)| on)
        .map(|((&p, &y), _)| (p - y).abs())
        .sum();
    Ok(Tensor::from_op(
        vec![1],
        vec![total * inv],
        vec![pred.clone()],
        Box::new(move |ctx| {
            let g = ctx.grad_out[0] * inv;
            let p = ctx.parents[0].data();
            let grad = p
                .iter()
                .zip(&t)
                .zip(&w)
                .map(|((&p, &y), &on)| {
                    let r = p - y;
                    if !on || r == T::zero() {
                        T::zero()
                    } else {
                        g * r.signum()
                    }
                })
                .collect();
            vec![Some(grad)]
        }),
    ))
}

/// Mean squared error over the elements where `mask` is set.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    check("mse_loss", pred, target)?;
    let (w, count) = weights("mse_loss", pred.numel(), mask)?;
    let inv = T::one() / T::from_usize_lossy(count);
    let t = target.to_vec();
    let total: T = pred
        .data()
        .iter()
        .zip(&t)
        .zip(&w)
        .filter(|(_, &on)| on)
        .map(|((&p, &y), _)| (p - y) * (p - y))
        .sum();
    Ok(Tensor::from_op(
        vec![1],
        vec![total * inv],
        vec![pred.clone()],
        Box::new(move |ctx| {
            let g = ctx.grad_out[0] * inv * T::from_f64_lossy(2.0);
            let p = ctx.parents[0].data();
            let grad = p
                .iter()
                .zip(&t)
                .zip(&w)
                .map(|((&p, &y), &on)| if on { g * (p - y) } else { T::zero() })
                .collect();
            vec![Some(grad)]
        }),
    ))
}
