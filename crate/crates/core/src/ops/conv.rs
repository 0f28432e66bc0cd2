use super::{expect_dim, expect_rank};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad`
    /// falls inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if kj >= self.pad {
            0
        } else {
            (self.pad - kj).div_ceil(self.stride)
        };
        let hi = if self.w + self.pad > kj {
            ((self.w - 1 + self.pad - kj) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn input_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy * self.stride + ki).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    /// Geometry of the transposed (full) correlation that maps output
    /// gradients back onto the input of a stride-1 convolution.
    fn transposed(&self, cout: usize) -> Option<Geometry> {
        (self.stride == 1 && self.pad < self.kh && self.pad < self.kw && self.kh == self.kw).then(|| Geometry {
            cin: cout,
            h: self.ho,
            w: self.wo,
            kh: self.kh,
            kw: self.kw,
            stride: 1,
            pad: self.kh - 1 - self.pad,
            ho: self.h,
            wo: self.w,
        })
    }
}

/// Unfolds `x` into `col` (`[cin * kh * kw, ho * wo]`), replacing its
/// contents.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut Vec<T>) {
    col.clear();
    col.reserve(g.rows() * g.cols());
    let zeros = |col: &mut Vec<T>, n: usize| col.extend(std::iter::repeat_n(T::zero(), n));
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let Some(iy) = g.input_row(oy, ki) else {
                        zeros(col, g.wo);
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    zeros(col, lo);
                    if g.stride == 1 {
                        let first = lo + kj - g.pad;
                        col.extend_from_slice(&src[first..first + hi - lo]);
                    } else {
                        col.extend((lo..hi).map(|ox| src[ox * g.stride + kj - g.pad]));
                    }
                    zeros(col, g.wo - hi);
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let cols = g.cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let Some(iy) = g.input_row(oy, ki) else { continue };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let line = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (ox, &v) in (lo..hi).zip(line) {
                        dst[ox * g.stride + kj - g.pad] += v;
                    }
                }
            }
        }
    }
}

/// `W[co, ci, ki, kj]` rearranged to `[ci, co, kh-1-ki, kw-1-kj]`.
fn flip_transpose<T: Scalar>(w: &[T], cout: usize, cin: usize, kh: usize, kw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(w.len());
    for ci in 0..cin {
        for co in 0..cout {
            for ki in (0..kh).rev() {
                for kj in (0..kw).rev() {
                    out.push(w[((co * cin + ci) * kh + ki) * kw + kj]);
                }
            }
        }
    }
    out
}

/// 2-D cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", weight, 4)?;
    if stride == 0 {
        return Err(Error::contract("conv2d: stride must be positive"));
    }
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wcin, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    expect_dim("conv2d", "input channels", wcin, cin)?;
    if let Some(b) = bias {
        expect_rank("conv2d", b, 1)?;
        expect_dim("conv2d", "bias length", cout, b.shape()[0])?;
    }
    if h + 2 * padding < kh {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "height",
            expected: kh,
            got: h + 2 * padding,
        });
    }
    if w + 2 * padding < kw {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "width",
            expected: kw,
            got: w + 2 * padding,
        });
    }
    let g = Geometry {
        cin,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kw) / stride + 1,
    };
    let (k, p) = (g.rows(), g.cols());
    let mut out = vec![T::zero(); n * cout * p];
    {
        let xd = x.data();
        let wd = weight.data();
        let mut col = Vec::new();
        for b in 0..n {
            let xb = &xd[b * cin * h * w..(b + 1) * cin * h * w];
            let col: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            let ob = &mut out[b * cout * p..(b + 1) * cout * p];
            if let Some(bias) = bias {
                for (row, &bv) in ob.chunks_exact_mut(p).zip(bias.data().iter()) {
                    row.fill(bv);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(cout, k, p, T::one(), &wd, (k, 1), col, (p, 1), beta, ob, (p, 1));
        }
    }

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        vec![n, cout, g.ho, g.wo],
        out,
        parents,
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let wd = ctx.parents[1].data();
            let need_x = ctx.parents[0].requires_grad();
            let need_w = ctx.parents[1].requires_grad();
            let mut gx = need_x.then(|| vec![T::zero(); xd.len()]);
            let mut gw = need_w.then(|| vec![T::zero(); wd.len()]);
            let mut col = Vec::new();
            let transposed = g.transposed(cout);
            let wt = match (&transposed, need_x) {
                (Some(_), true) if !g.is_pointwise() => flip_transpose(&wd, cout, cin, kh, kw),
                _ => Vec::new(),
            };
            let mut dcol = Vec::new();
            for b in 0..n {
                let go = &ctx.grad_out[b * cout * p..(b + 1) * cout * p];
                let xb = &xd[b * cin * h * w..(b + 1) * cin * h * w];
                if let Some(gw) = gw.as_mut() {
                    let colb: &[T] = if g.is_pointwise() {
                        xb
                    } else {
                        im2col(xb, &g, &mut col);
                        &col
                    };
                    // dW[cout, k] += dY[cout, p] * col^T[p, k]
                    T::gemm(cout, p, k, T::one(), go, (p, 1), colb, (1, p), T::one(), gw, (k, 1));
                }
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx[b * cin * h * w..(b + 1) * cin * h * w];
                    // dcol[k, p] = W^T[k, cout] * dY[cout, p]
                    if g.is_pointwise() {
                        T::gemm(k, cout, p, T::one(), &wd, (1, k), go, (p, 1), T::zero(), gxb, (p, 1));
                    } else if let Some(tg) = &transposed {
                        // dX = full correlation of dY with the flipped kernel
                        im2col(go, tg, &mut dcol);
                        let kt = cout * kh * kw;
                        T::gemm(cin, kt, h * w, T::one(), &wt, (kt, 1), &dcol, (h * w, 1), T::zero(), gxb, (h * w, 1));
                    } else {
                        dcol.clear();
                        dcol.resize(k * p, T::zero());
                        T::gemm(k, cout, p, T::one(), &wd, (1, k), go, (p, 1), T::zero(), &mut dcol, (p, 1));
                        col2im_add(&dcol, &g, gxb);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![T::zero(); cout];
                for b in 0..n {
                    for (c, gbv) in gb.iter_mut().enumerate() {
                        let off = (b * cout + c) * p;
                        *gbv += ctx.grad_out[off..off + p].iter().copied().sum::<T>();
                    }
                }
                grads.push(Some(gb));
            }
            grads
        }),
    ))
}

/// Depthwise 1-D convolution along the sequence axis of `[N, L, C]` with a
/// per-channel kernel `[C, k]`. Causal mode pads `k - 1` zeros at the start,
/// so `y[t] = sum_j w[j] * x[t - (k - 1) + j]`.
pub fn conv1d_depthwise<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    causal: bool,
) -> Result<Tensor<T>> {
    expect_rank("conv1d_depthwise", x, 3)?;
    expect_rank("conv1d_depthwise", weight, 2)?;
    let (n, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = weight.shape()[1];
    expect_dim("conv1d_depthwise", "channels", c, weight.shape()[0])?;
    if k == 0 {
        return Err(Error::contract("conv1d_depthwise: kernel size must be at least 1"));
    }
    if let Some(b) = bias {
        expect_rank("conv1d_depthwise", b, 1)?;
        expect_dim("conv1d_depthwise", "bias length", c, b.shape()[0])?;
    }
    // Non-causal mode centers the kernel ("same" padding).
    let left = if causal { k - 1 } else { (k - 1) / 2 };
    let mut out = vec![T::zero(); n * l * c];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.map(|b| b.data().clone());
        for b in 0..n {
            for t in 0..l {
                let o = &mut out[(b * l + t) * c..(b * l + t + 1) * c];
                if let Some(bd) = &bd {
                    o.copy_from_slice(bd);
                }
                for j in 0..k {
                    let s = t as isize + j as isize - left as isize;
                    if s < 0 || s >= l as isize {
                        continue;
                    }
                    let xs = &xd[(b * l + s as usize) * c..(b * l + s as usize + 1) * c];
                    for ch in 0..c {
                        o[ch] += wd[ch * k + j] * xs[ch];
                    }
                }
            }
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        vec![n, l, c],
        out,
        parents,
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let wd = ctx.parents[1].data();
            let mut gx = vec![T::zero(); xd.len()];
            let mut gw = vec![T::zero(); wd.len()];
            let mut gb = vec![T::zero(); c];
            for b in 0..n {
                for t in 0..l {
                    let go = &ctx.grad_out[(b * l + t) * c..(b * l + t + 1) * c];
                    gb.iter_mut().zip(go).for_each(|(a, &g)| *a += g);
                    for j in 0..k {
                        let s = t as isize + j as isize - left as isize;
                        if s < 0 || s >= l as isize {
                            continue;
                        }
                        let base = (b * l + s as usize) * c;
                        for ch in 0..c {
                            gx[base + ch] += wd[ch * k + j] * go[ch];
                            gw[ch * k + j] += xd[base + ch] * go[ch];
                        }
                    }
                }
            }
            let mut grads = vec![Some(gx), Some(gw)];
            if has_bias {
                grads.push(Some(gb));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradcheck, GradcheckConfig};
    use crate::ops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-sum definition of cross-correlation.
    fn conv2d_oracle(
        x: &[f64],
        xs: [usize; 4],
        w: &[f64],
        ws: [usize; 4],
        b: &[f64],
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, usize, usize) {
        let [n, cin, h, wd] = xs;
        let [cout, _, kh, kw] = ws;
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for bn in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((co * cin + ci) * kh + ki) * kw + kj]
                                        * x[((bn * cin + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((bn * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        (out, ho, wo)
    }

    #[test]
    fn averaging_kernel_on_constant_input() {
        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let d = y.data();
        for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert!((d[i * 4 + j] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn strided_identity_kernel() {
        let x = Tensor::<f32>::ones(&[1, 1, 4, 4]);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::new(&[1, 1, 3, 3], k).unwrap();
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0; 4]);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let b = random(&mut rng, &[3]);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let y = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
            let (expect, ho, wo) =
                conv2d_oracle(&x.data(), [1, 2, 5, 5], &w.data(), [3, 2, 3, 3], &b.data(), stride, pad);
            assert_eq!(y.shape(), &[1, 3, ho, wo]);
            for (a, e) in y.data().iter().zip(&expect) {
                assert!((a - e).abs() <= 1e-6 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn pointwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[2, 4, 3, 3]);
        let w = random(&mut rng, &[5, 4, 1, 1]);
        let b = random(&mut rng, &[5]);
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        let (expect, _, _) = conv2d_oracle(&x.data(), [2, 4, 3, 3], &w.data(), [5, 4, 1, 1], &b.data(), 1, 0);
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let y = random(&mut rng, &[1, 2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let (a, b) = (0.7, -1.3);
        let lhs = conv2d(&ops::add(&ops::scale(&x, a), &ops::scale(&y, b)).unwrap(), &w, None, 1, 1).unwrap();
        let rhs = ops::add(
            &ops::scale(&conv2d(&x, &w, None, 1, 1).unwrap(), a),
            &ops::scale(&conv2d(&y, &w, None, 1, 1).unwrap(), b),
        )
        .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data().iter()) {
            assert!((l - r).abs() <= 1e-6);
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[2, 2, 5, 4]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let b = random(&mut rng, &[3]);
        let cfg = GradcheckConfig::default();
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (1, 2), (2, 0), (3, 2)] {
            let r = gradcheck(|x| conv2d(x, &w, Some(&b), stride, pad), &x, &cfg).unwrap();
            assert!(r.pass, "dx {r:?}");
            let r = gradcheck(|w| conv2d(&x, w, Some(&b), stride, pad), &w, &cfg).unwrap();
            assert!(r.pass, "dw {r:?}");
            let r = gradcheck(|b| conv2d(&x, &w, Some(b), stride, pad), &b, &cfg).unwrap();
            assert!(r.pass, "db {r:?}");
        }
        let w1 = random(&mut rng, &[4, 2, 1, 1]);
        let r = gradcheck(|x| conv2d(x, &w1, None, 1, 0), &x, &cfg).unwrap();
        assert!(r.pass, "pointwise dx {r:?}");
        let r = gradcheck(|w| conv2d(&x, w, None, 1, 0), &w1, &cfg).unwrap();
        assert!(r.pass, "pointwise dw {r:?}");
        let wr = random(&mut rng, &[3, 2, 3, 1]);
        let r = gradcheck(|x| conv2d(x, &wr, None, 1, 1), &x, &cfg).unwrap();
        assert!(r.pass, "rectangular dx {r:?}");
    }

    fn conv1d_oracle(x: &[f64], [n, l, c]: [usize; 3], w: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n * l * c];
        for bn in 0..n {
            for t in 0..l {
                for ch in 0..c {
                    let mut acc = b[ch];
                    for j in 0..k {
                        let s = t as isize - (k as isize - 1) + j as isize;
                        if s >= 0 {
                            acc += w[ch * k + j] * x[(bn * l + s as usize) * c + ch];
                        }
                    }
                    out[(bn * l + t) * c + ch] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[2, 6, 3]);
        let w = Tensor::ones(&[3, 1]);
        let b = Tensor::zeros(&[3]);
        let y = conv1d_depthwise(&x, &w, Some(&b), true).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv1d_impulse_response_is_reversed_kernel() {
        let mut xv = vec![0.0; 8];
        xv[0] = 1.0;
        let x = Tensor::<f64>::new(&[1, 8, 1], xv).unwrap();
        let w = Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv1d_depthwise(&x, &w, None, true).unwrap();
        assert_eq!(y.to_vec(), vec![4.0, 3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv1d_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, &[2, 7, 3]);
        let w = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3]);
        let y = conv1d_depthwise(&x, &w, Some(&b), true).unwrap();
        let e = conv1d_oracle(&x.data(), [2, 7, 3], &w.data(), 4, &b.data());
        for (a, e) in y.data().iter().zip(&e) {
            assert!((a - e).abs() <= 1e-6 * e.abs().max(1.0));
        }
    }

    #[test]
    fn conv1d_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 4, 3]);
        let w = Tensor::<f32>::zeros(&[2, 4]);
        assert!(conv1d_depthwise(&x, &w, None, true).is_err());
    }

    #[test]
    fn conv1d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[2, 6, 3]);
        let w = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3]);
        let cfg = GradcheckConfig::default();
        let r = gradcheck(|x| conv1d_depthwise(x, &w, Some(&b), true), &x, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
        let r = gradcheck(|w| conv1d_depthwise(&x, w, Some(&b), true), &w, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
        let r = gradcheck(|b| conv1d_depthwise(&x, &w, Some(b), true), &b, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
