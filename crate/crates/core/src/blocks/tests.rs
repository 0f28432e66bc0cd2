use super::*;
use crate::gradcheck::{gradcheck, gradcheck_params, GradcheckConfig};
use crate::nn::NetworkParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Scalar>(seed: u64, shape: &[usize]) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

fn zero_all<T: Scalar>(p: &NetworkParams<T>) {
    p.tensors().for_each(|t| t.update(|d| d.fill(T::zero())));
}

fn check_cfg() -> GradcheckConfig {
    GradcheckConfig {
        tol: 1e-5,
        ..Default::default()
    }
}

fn weighted_sum(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = random::<f64>(seed, y.shape());
    Ok(ops::sum(&ops::mul(y, &w)?))
}

#[test]
fn attention_with_zero_weights_halves_input() {
    let mut store = ParamStore::<f64>::seeded(1);
    let ca = ChannelAttention::new(&mut store, "ca", 8, 4).unwrap();
    zero_all(&store.finish().unwrap());
    let x = random::<f64>(2, &[2, 8, 3, 3]);
    let y = ca.forward(&x).unwrap();
    for (a, b) in y.data().iter().zip(x.data().iter()) {
        assert_eq!(*a, 0.5 * b);
    }
}

#[test]
fn attention_of_zero_is_zero() {
    let mut store = ParamStore::<f64>::seeded(3);
    let ca = ChannelAttention::new(&mut store, "ca", 8, 4).unwrap();
    let y = ca.forward(&Tensor::zeros(&[1, 8, 4, 4])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_gate_is_rank_one_over_space() {
    let mut store = ParamStore::<f64>::seeded(4);
    let ca = ChannelAttention::new(&mut store, "ca", 16, 8).unwrap();
    let x = random::<f64>(5, &[2, 16, 5, 4]);
    let gates = ca.gates(&x).unwrap();
    let y = ca.forward(&x).unwrap();
    let (xd, yd, gd) = (x.data(), y.data(), gates.data());
    for p in 0..2 * 16 {
        assert!(gd[p] > 0.0 && gd[p] < 1.0);
        for i in 0..20 {
            assert_eq!(yd[p * 20 + i], gd[p] * xd[p * 20 + i]);
        }
    }
}

#[test]
fn attention_gradcheck() {
    let mut store = ParamStore::<f64>::seeded(6);
    let ca = ChannelAttention::new(&mut store, "ca", 8, 4).unwrap();
    let params: Vec<_> = store.finish().unwrap().tensors().cloned().collect();
    let x = random::<f64>(7, &[2, 8, 3, 3]);
    assert!(gradcheck(|x| ca.forward(x), &x, &check_cfg()).unwrap().pass);
    let r = gradcheck_params(|| weighted_sum(&ca.forward(&x)?, 8), &params, &check_cfg()).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn hidden_width_never_collapses_to_zero() {
    let mut store = ParamStore::<f32>::seeded(1);
    let ca = ChannelAttention::new(&mut store, "ca", 4, 8).unwrap();
    assert_eq!(ca.down.weight.shape(), &[1, 4]);
}

#[test]
fn rdcb_zero_weights_is_residual_identity() {
    let mut store = ParamStore::<f32>::seeded(9);
    let b = Rdcb::new(&mut store, "r", RdcbConfig::for_channels(8)).unwrap();
    zero_all(&store.finish().unwrap());
    let x = random::<f32>(10, &[1, 8, 5, 7]);
    assert_eq!(b.forward(&x).unwrap().to_vec(), x.to_vec());
}

#[test]
fn rdcb_is_shape_preserving() {
    for (c, g) in [(4, 2), (8, 3), (6, 6)] {
        let mut store = ParamStore::<f32>::seeded(11);
        let cfg = RdcbConfig {
            channels: c,
            growth: g,
            num_dense: 6,
            reduction: 2,
        };
        let b = Rdcb::new(&mut store, "r", cfg).unwrap();
        let x = random::<f32>(12, &[2, c, 3, 5]);
        assert_eq!(b.forward(&x).unwrap().shape(), x.shape());
    }
}

#[test]
fn rdcb_dense_wiring() {
    let mut store = ParamStore::<f32>::seeded(1);
    let b = Rdcb::new(&mut store, "r", RdcbConfig { channels: 8, growth: 4, num_dense: 6, reduction: 4 }).unwrap();
    let ins: Vec<usize> = b.dense.iter().map(|c| c.weight.shape()[1]).collect();
    assert_eq!(ins, vec![8, 12, 16, 20, 24, 28]);
    assert_eq!(b.fusion.weight.shape(), &[8, 32, 1, 1]);
}

#[test]
fn rdcb_channel_mismatch() {
    let mut store = ParamStore::<f32>::seeded(1);
    let b = Rdcb::new(&mut store, "r", RdcbConfig::for_channels(8)).unwrap();
    assert!(b.forward(&Tensor::zeros(&[1, 4, 3, 3])).is_err());
}

#[test]
fn rdcb_gradcheck() {
    let mut store = ParamStore::<f64>::seeded(13);
    let b = Rdcb::new(&mut store, "r", RdcbConfig { channels: 8, growth: 4, num_dense: 6, reduction: 4 }).unwrap();
    let params: Vec<_> = store.finish().unwrap().tensors().cloned().collect();
    let x = random::<f64>(14, &[1, 8, 6, 6]);
    let r = gradcheck(|x| b.forward(x), &x, &check_cfg()).unwrap();
    assert!(r.pass, "input {r:?}");
    let r = gradcheck_params(|| weighted_sum(&b.forward(&x)?, 15), &params, &check_cfg()).unwrap();
    assert!(r.pass, "params {r:?}");
}

fn mamba(seed: u64, c: usize, n: usize) -> (MambaBlock<f64>, NetworkParams<f64>) {
    let mut store = ParamStore::<f64>::seeded(seed);
    let m = MambaBlock::new(&mut store, "m", MambaBlockConfig::new(c, n)).unwrap();
    // larger steps than the default init so that the scan mixes tokens
    m.ssm.dt_bias.update(|v| v.iter_mut().for_each(|b| *b += 2.0));
    (m, store.finish().unwrap())
}

#[test]
fn mamba_zero_output_projection_is_identity() {
    let (m, _) = mamba(16, 4, 3);
    m.out.weight.update(|d| d.fill(0.0));
    let x = random::<f64>(17, &[2, 4, 3, 5]);
    assert_eq!(m.forward(&x).unwrap().to_vec(), x.to_vec());
}

#[test]
fn mamba_is_shape_preserving() {
    let (m, _) = mamba(18, 4, 3);
    for (h, w) in [(1, 1), (3, 5), (4, 4), (7, 2)] {
        let x = random::<f64>(19, &[1, 4, h, w]);
        assert_eq!(m.forward(&x).unwrap().shape(), x.shape());
    }
}

#[test]
fn mamba_gradcheck() {
    let (m, params) = mamba(20, 4, 3);
    let params: Vec<_> = params.tensors().cloned().collect();
    let x = random::<f64>(21, &[1, 4, 4, 4]);
    let r = gradcheck(|x| m.forward(x), &x, &check_cfg()).unwrap();
    assert!(r.pass, "input {r:?}");
    let r = gradcheck_params(|| weighted_sum(&m.forward(&x)?, 22), &params, &check_cfg()).unwrap();
    assert!(r.pass, "params {r:?}");
}

#[test]
fn mamba_is_batch_permutation_equivariant() {
    let (m, _) = mamba(23, 4, 3);
    let a = random::<f64>(24, &[1, 4, 3, 3]).to_vec();
    let b = random::<f64>(25, &[1, 4, 3, 3]).to_vec();
    let ab = m.forward(&Tensor::new(&[2, 4, 3, 3], [a.clone(), b.clone()].concat()).unwrap()).unwrap().to_vec();
    let ba = m.forward(&Tensor::new(&[2, 4, 3, 3], [b, a].concat()).unwrap()).unwrap().to_vec();
    assert_eq!(ab[..36], ba[36..]);
    assert_eq!(ab[36..], ba[..36]);
}

#[test]
fn mamba_chunked_mode_agrees_at_inference() {
    let (mut m, _) = mamba(26, 4, 3);
    let x = random::<f64>(27, &[1, 4, 6, 6]);
    let seq = crate::no_grad(|| m.forward(&x)).unwrap().to_vec();
    m.scan_mode = ScanMode::Chunked(5);
    let chk = crate::no_grad(|| m.forward(&x)).unwrap().to_vec();
    for (a, b) in seq.iter().zip(&chk) {
        assert!((a - b).abs() <= 1e-10);
    }
}

fn composite(seed: u64) -> (RdcbMamba<f64>, NetworkParams<f64>) {
    let mut store = ParamStore::<f64>::seeded(seed);
    let b = RdcbMamba::new(&mut store, "s", 8, 3, true, true).unwrap();
    for m in &b.mamba {
        m.ssm.dt_bias.update(|v| v.iter_mut().for_each(|b| *b += 2.0));
    }
    (b, store.finish().unwrap())
}

#[test]
fn composite_zero_weights_is_identity() {
    let (b, p) = composite(28);
    zero_all(&p);
    let x = random::<f64>(29, &[1, 8, 4, 3]);
    assert_eq!(b.forward(&x).unwrap().to_vec(), x.to_vec());
}

#[test]
fn composite_matches_manual_composition() {
    let (b, _) = composite(30);
    let x = random::<f64>(31, &[2, 8, 3, 4]);
    let got = b.forward(&x).unwrap();
    let LocalBlock::Rdcb(r0) = &b.local[0] else { panic!() };
    let LocalBlock::Rdcb(r1) = &b.local[1] else { panic!() };
    let manual = b.mamba[1]
        .forward(&b.mamba[0].forward(&r1.forward(&r0.forward(&x).unwrap()).unwrap()).unwrap())
        .unwrap();
    assert_eq!(got.shape(), x.shape());
    for (a, e) in got.data().iter().zip(manual.data().iter()) {
        assert!((a - e).abs() <= 1e-6);
    }
}

#[test]
fn composite_gradcheck() {
    let mut store = ParamStore::<f64>::seeded(32);
    let b = RdcbMamba::new(&mut store, "s", 4, 2, true, true).unwrap();
    for m in &b.mamba {
        m.ssm.dt_bias.update(|v| v.iter_mut().for_each(|b| *b += 2.0));
    }
    let params: Vec<_> = store.finish().unwrap().tensors().cloned().collect();
    let x = random::<f64>(33, &[1, 4, 4, 4]);
    let r = gradcheck(|x| b.forward(x), &x, &check_cfg()).unwrap();
    assert!(r.pass, "input {r:?}");
    let r = gradcheck_params(|| weighted_sum(&b.forward(&x)?, 34), &params, &check_cfg()).unwrap();
    assert!(r.pass, "params {r:?}");
}

#[test]
fn ablated_composite_structure() {
    let mut store = ParamStore::<f32>::seeded(35);
    let b = RdcbMamba::new(&mut store, "s", 8, 4, false, false).unwrap();
    let p = store.finish().unwrap();
    assert!(b.mamba.is_empty());
    assert!(p.names().all(|n| !n.contains("rdcb") && !n.contains("mamba")));
    assert_eq!(p.param_count(), 2 * (8 * 8 * 9 + 8));
}
