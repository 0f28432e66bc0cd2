use super::expect_rank;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Spatial mean of each channel: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("global_avg_pool", x, 4)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let inv = T::one() / T::from_usize_lossy(hw);
    let out = x
        .data()
        .chunks_exact(hw)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_op(
        vec![n, c],
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let g = ctx.grad_out.iter().flat_map(|&g| std::iter::repeat(g * inv).take(hw)).collect();
            vec![Some(g)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradcheck, GradcheckConfig};

    #[test]
    fn ones_pool_to_one() {
        let y = global_avg_pool(&Tensor::<f32>::ones(&[1, 3, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        assert_eq!(y.to_vec(), vec![1.0; 3]);
    }

    #[test]
    fn ramp_mean() {
        let x = Tensor::<f64>::new(&[1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().item(), 7.5);
    }

    #[test]
    fn matches_sum_over_area() {
        let vals: Vec<f64> = (0..2 * 3 * 5 * 3).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let x = Tensor::new(&[2, 3, 5, 3], vals.clone()).unwrap();
        let y = global_avg_pool(&x).unwrap();
        for (i, m) in y.data().iter().enumerate() {
            let s: f64 = vals[i * 15..(i + 1) * 15].iter().sum();
            assert!((m - s / 15.0).abs() <= 1e-12);
        }
        assert!(gradcheck(|x| global_avg_pool(x), &x, &GradcheckConfig::default()).unwrap().pass);
    }
}
