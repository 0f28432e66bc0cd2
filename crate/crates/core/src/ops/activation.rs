use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Sigmoid,
    Relu,
    Softplus,
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub(crate) fn softplus_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn derivative<T: Scalar>(kind: Activation, x: T, y: T) -> T {
    match kind {
        Activation::Silu => {
            let s = sigmoid_scalar(x);
            s * (T::one() + x * (T::one() - s))
        }
        Activation::Sigmoid => y * (T::one() - y),
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Softplus => sigmoid_scalar(x),
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let f = |v: T| match kind {
        Activation::Silu => v * sigmoid_scalar(v),
        Activation::Sigmoid => sigmoid_scalar(v),
        Activation::Relu => v.max(T::zero()),
        Activation::Softplus => softplus_scalar(v),
    };
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let xin = ctx.parents[0].data();
            let g = ctx
                .grad_out
                .iter()
                .zip(xin.iter().zip(ctx.out))
                .map(|(&go, (&xv, &yv))| go * derivative(kind, xv, yv))
                .collect();
            vec![Some(g)]
        }),
    )
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    activation(x, Activation::Silu)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    activation(x, Activation::Sigmoid)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    activation(x, Activation::Relu)
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    activation(x, Activation::Softplus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradcheck, GradcheckConfig};

    fn eval(kind: Activation, v: f64) -> f64 {
        activation(&Tensor::scalar(v), kind).item()
    }

    #[test]
    fn fixed_points() {
        assert_eq!(eval(Activation::Silu, 0.0), 0.0);
        assert_eq!(eval(Activation::Sigmoid, 0.0), 0.5);
        assert_eq!(eval(Activation::Relu, -3.0), 0.0);
        assert!((eval(Activation::Softplus, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_large_input_does_not_overflow() {
        // ln(1 + e^50) = 50 + ln(1 + e^-50) = 50 + 1.9287e-22
        assert!((eval(Activation::Softplus, 50.0) - 50.0).abs() < 1e-6);
        let v = softplus_scalar(1000.0f32);
        assert!(v.is_finite() && (v - 1000.0).abs() < 1e-3);
        assert!(softplus_scalar(-1000.0f64) >= 0.0);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        assert_eq!(sigmoid_scalar(-1000.0f32), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f32), 1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = GradcheckConfig::default();
        for kind in [Activation::Silu, Activation::Sigmoid, Activation::Softplus] {
            let x = Tensor::<f64>::new(&[5], vec![-2.1, -0.4, 0.3, 0.9, 3.2]).unwrap();
            let r = gradcheck(|x| Ok(activation(x, kind)), &x, &cfg).unwrap();
            assert!(r.pass, "{kind:?}: {r:?}");
        }
        // relu off the kink
        let x = Tensor::<f64>::new(&[4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        let r = gradcheck(|x| Ok(relu(x)), &x, &cfg).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn silu_at_point_three() {
        let x = Tensor::<f64>::new(&[1], vec![0.3]).unwrap();
        let r = gradcheck(
            |x| Ok(silu(x)),
            &x,
            &GradcheckConfig {
                tol: 1e-6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }
}
