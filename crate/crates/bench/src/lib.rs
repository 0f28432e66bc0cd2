//! Seeded inputs shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msfum_core::Tensor;

/// Owned arrays for one scan sequence in the kernel layout.
pub struct ScanCase {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub x: Vec<f32>,
    pub delta: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
    pub c: Vec<f32>,
    pub d_skip: Vec<f32>,
}

impl ScanCase {
    /// Inputs in the ranges the network produces: step sizes in
    /// `[1e-3, 1e-1]`, S4D-real `a[d, n] = -(n + 1)`.
    pub fn new(len: usize, channels: usize, state: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, lo: f32, hi: f32| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f32>>();
        let x = uniform(len * channels, -1.0, 1.0);
        let delta = uniform(len * channels, 1e-3, 1e-1);
        let b = uniform(len * state, -1.0, 1.0);
        let c = uniform(len * state, -1.0, 1.0);
        let d_skip = uniform(channels, -1.0, 1.0);
        let a = (0..channels * state).map(|i| -((i % state) as f32 + 1.0)).collect();
        Self {
            len,
            channels,
            state,
            x,
            delta,
            a,
            b,
            c,
            d_skip,
        }
    }

    pub fn inputs(&self) -> msfum_core::ssm::ScanInputs<'_, f32> {
        msfum_core::ssm::ScanInputs {
            len: self.len,
            channels: self.channels,
            state: self.state,
            x: &self.x,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
            d_skip: &self.d_skip,
        }
    }
}

/// Uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: &[usize], seed: u64, requires_grad: bool) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = if requires_grad {
        Tensor::parameter(shape, data)
    } else {
        Tensor::new(shape, data)
    };
    t.expect("shape matches data")
}
