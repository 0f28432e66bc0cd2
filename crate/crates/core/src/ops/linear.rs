use super::expect_dim;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Affine map `y = x W^T + b` along the last axis; `weight` is `[Dout, Din]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if x.rank() == 0 || weight.rank() != 2 {
        return Err(Error::contract(format!(
            "linear: expected [.., Din] input and [Dout, Din] weight, got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let din = *x.shape().last().expect("rank checked");
    let (dout, wdin) = (weight.shape()[0], weight.shape()[1]);
    expect_dim("linear", "last axis", wdin, din)?;
    if let Some(b) = bias {
        expect_dim("linear", "bias length", dout, b.numel())?;
    }
    let rows = x.numel() / din.max(1);
    let mut out = vec![T::zero(); rows * dout];
    if let Some(b) = bias {
        let bd = b.data();
        out.chunks_exact_mut(dout).for_each(|r| r.copy_from_slice(&bd));
    }
    {
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(rows, din, dout, T::one(), &x.data(), (din, 1), &weight.data(), (1, din), beta, &mut out, (dout, 1));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank checked") = dout;
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        shape,
        out,
        parents,
        Box::new(move |ctx| {
            let go = ctx.grad_out;
            let gx = ctx.parents[0].requires_grad().then(|| {
                let mut gx = vec![T::zero(); rows * din];
                // dX[rows, din] = dY[rows, dout] W[dout, din]
                T::gemm(rows, dout, din, T::one(), go, (dout, 1), &ctx.parents[1].data(), (din, 1), T::zero(), &mut gx, (din, 1));
                gx
            });
            let gw = ctx.parents[1].requires_grad().then(|| {
                let mut gw = vec![T::zero(); dout * din];
                // dW[dout, din] = dY^T[dout, rows] X[rows, din]
                T::gemm(dout, rows, din, T::one(), go, (1, dout), &ctx.parents[0].data(), (din, 1), T::zero(), &mut gw, (din, 1));
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![T::zero(); dout];
                for r in go.chunks_exact(dout) {
                    gb.iter_mut().zip(r).for_each(|(a, &g)| *a += g);
                }
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
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_weight() {
        let x = Tensor::<f32>::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, 4.0]).unwrap();
        let w = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().to_vec(), vec![3.0, -1.0]);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(&mut rng, &[2, 3, 5]);
        let w = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[4]);
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4]);
        let (xd, wd, bd, yd) = (x.data(), w.data(), b.data(), y.data());
        for r in 0..6 {
            for o in 0..4 {
                let mut acc = bd[o];
                for i in 0..5 {
                    acc += xd[r * 5 + i] * wd[o * 5 + i];
                }
                assert!((yd[r * 4 + o] - acc).abs() <= 1e-6 * acc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn last_axis_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 5]);
        assert!(matches!(linear(&x, &w, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random(&mut rng, &[2, 3, 5]);
        let w = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[4]);
        let cfg = GradcheckConfig::default();
        assert!(gradcheck(|x| linear(x, &w, Some(&b)), &x, &cfg).unwrap().pass);
        assert!(gradcheck(|w| linear(&x, w, Some(&b)), &w, &cfg).unwrap().pass);
        assert!(gradcheck(|b| linear(&x, &w, Some(b)), &b, &cfg).unwrap().pass);
    }
}
