use super::{expect_dim, expect_rank};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Concatenates `[N, Ci, H, W]` tensors along the channel axis in argument
/// order.
pub fn concat_channels<T: Scalar>(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::contract("concat_channels: empty input list"))?;
    for x in xs {
        expect_rank("concat_channels", x, 4)?;
    }
    let (n, h, w) = (first.shape()[0], first.shape()[2], first.shape()[3]);
    for x in &xs[1..] {
        expect_dim("concat_channels", "batch", n, x.shape()[0])?;
        expect_dim("concat_channels", "height", h, x.shape()[2])?;
        expect_dim("concat_channels", "width", w, x.shape()[3])?;
    }
    let hw = h * w;
    let chans: Vec<usize> = xs.iter().map(|x| x.shape()[1]).collect();
    let total: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(n * total * hw);
    {
        let datas: Vec<_> = xs.iter().map(|x| x.data()).collect();
        for b in 0..n {
            for (d, &c) in datas.iter().zip(&chans) {
                out.extend_from_slice(&d[b * c * hw..(b + 1) * c * hw]);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, total, h, w],
        out,
        xs.to_vec(),
        Box::new(move |ctx| {
            let mut grads: Vec<Vec<T>> = chans.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
            let mut off = 0;
            for _ in 0..n {
                for (g, &c) in grads.iter_mut().zip(&chans) {
                    g.extend_from_slice(&ctx.grad_out[off..off + c * hw]);
                    off += c * hw;
                }
            }
            grads.into_iter().map(Some).collect()
        }),
    ))
}

pub fn reshape<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() {
        return Err(Error::contract(format!(
            "reshape: cannot view {:?} as {shape:?}",
            x.shape()
        )));
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(|ctx| vec![Some(ctx.grad_out.to_vec())]),
    ))
}

fn transpose_planes<T: Scalar>(src: &[T], n: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        let s = &src[b * rows * cols..(b + 1) * rows * cols];
        let d = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
    out
}

/// Row-major flattening of a feature map into a token sequence:
/// `[N, C, H, W] -> [N, H*W, C]`.
pub fn spatial_to_sequence<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("spatial_to_sequence", x, 4)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let l = h * w;
    let out = transpose_planes(&x.data(), n, c, l);
    Ok(Tensor::from_op(
        vec![n, l, c],
        out,
        vec![x.clone()],
        Box::new(move |ctx| vec![Some(transpose_planes(ctx.grad_out, n, l, c))]),
    ))
}

/// Inverse of [`spatial_to_sequence`]: `[N, H*W, C] -> [N, C, H, W]`.
pub fn sequence_to_spatial<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    expect_rank("sequence_to_spatial", x, 3)?;
    let (n, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    expect_dim("sequence_to_spatial", "sequence length", h * w, l)?;
    let out = transpose_planes(&x.data(), n, l, c);
    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        vec![x.clone()],
        Box::new(move |ctx| vec![Some(transpose_planes(ctx.grad_out, n, c, l))]),
    ))
}
