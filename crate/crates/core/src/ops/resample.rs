use super::expect_rank;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Two-tap linear interpolation weights for each output index, with
/// half-pixel centers and edge clamping.
fn taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<[(usize, T); 2]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let f = src - i0 as f64;
            [(i0, T::from_f64_lossy(1.0 - f)), (i1, T::from_f64_lossy(f))]
        })
        .collect()
}

/// Bilinear upsampling by a factor of two on `[N, C, H, W]`.
pub fn upsample_bilinear2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("upsample_bilinear2x", x, 4)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let ty = taps::<T>(h, ho);
    let tx = taps::<T>(w, wo);
    let mut out = vec![T::zero(); n * c * ho * wo];
    {
        let xd = x.data();
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, ry) in ty.iter().enumerate() {
                for (ox, rx) in tx.iter().enumerate() {
                    let mut acc = T::zero();
                    for &(iy, wy) in ry {
                        for &(ix, wx) in rx {
                            acc += wy * wx * src[iy * w + ix];
                        }
                    }
                    dst[oy * wo + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let go = &ctx.grad_out[p * ho * wo..(p + 1) * ho * wo];
                let gxp = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, ry) in ty.iter().enumerate() {
                    for (ox, rx) in tx.iter().enumerate() {
                        let g = go[oy * wo + ox];
                        for &(iy, wy) in ry {
                            for &(ix, wx) in rx {
                                gxp[iy * w + ix] += wy * wx * g;
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}
