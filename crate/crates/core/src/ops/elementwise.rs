use super::{expect_dim, expect_rank};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let out = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| vec![Some(ctx.grad_out.to_vec()), Some(ctx.grad_out.to_vec())]),
    ))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let out = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| {
            vec![
                Some(ctx.grad_out.to_vec()),
                Some(ctx.grad_out.iter().map(|&g| -g).collect()),
            ]
        }),
    ))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let out = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| {
            let (a, b) = (ctx.parents[0].data(), ctx.parents[1].data());
            let ga = ctx.grad_out.iter().zip(b.iter()).map(|(&g, &y)| g * y).collect();
            let gb = ctx.grad_out.iter().zip(a.iter()).map(|(&g, &x)| g * x).collect();
            vec![Some(ga), Some(gb)]
        }),
    ))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, k: T) -> Tensor<T> {
    let out = a.data().iter().map(|&x| x * k).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |ctx| vec![Some(ctx.grad_out.iter().map(|&g| g * k).collect())]),
    )
}

pub fn sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let s: T = a.data().iter().copied().sum();
    let n = a.numel();
    Tensor::from_op(
        vec![1],
        vec![s],
        vec![a.clone()],
        Box::new(move |ctx| vec![Some(vec![ctx.grad_out[0]; n])]),
    )
}

pub fn mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = T::from_usize_lossy(a.numel());
    scale(&sum(a), T::one() / n)
}

/// Multiplies every pixel of channel `c` in sample `n` by `gate[n, c]`.
pub fn mul_channel<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("mul_channel", x, 4)?;
    expect_rank("mul_channel", gate, 2)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    expect_dim("mul_channel", "batch", n, gate.shape()[0])?;
    expect_dim("mul_channel", "channels", c, gate.shape()[1])?;
    let hw = h * w;
    let mut out = x.to_vec();
    {
        let g = gate.data();
        for (plane, &gv) in out.chunks_exact_mut(hw).zip(g.iter()) {
            plane.iter_mut().for_each(|v| *v = *v * gv);
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gate.clone()],
        Box::new(move |ctx| {
            let (xd, gd) = (ctx.parents[0].data(), ctx.parents[1].data());
            let mut gx = vec![T::zero(); xd.len()];
            let mut gg = vec![T::zero(); gd.len()];
            for (p, gv) in gd.iter().enumerate() {
                let r = p * hw..(p + 1) * hw;
                let mut acc = T::zero();
                for ((gxo, &go), &xv) in gx[r.clone()].iter_mut().zip(&ctx.grad_out[r.clone()]).zip(&xd[r]) {
                    *gxo = go * *gv;
                    acc += go * xv;
                }
                gg[p] = acc;
            }
            vec![Some(gx), Some(gg)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradcheck, GradcheckConfig};

    #[test]
    fn mul_channel_gradient() {
        let gate = Tensor::new(&[1, 2], vec![0.3, -1.2]).unwrap();
        let x = Tensor::new(&[1, 2, 2, 2], (0..8).map(|v| v as f64 * 0.25 - 1.0).collect()).unwrap();
        let cfg = GradcheckConfig::default();
        let r = gradcheck(|x| mul_channel(x, &gate), &x, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
        let r = gradcheck(|g| mul_channel(&x, g), &gate, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3, 2]);
        assert!(add(&a, &b).is_err());
        assert!(mul(&a, &b).is_err());
    }

    #[test]
    fn mean_of_ramp() {
        let a = Tensor::<f64>::new(&[4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(mean(&a).item(), 3.0);
    }
}
