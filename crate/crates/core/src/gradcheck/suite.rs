//! The standing gradient suite: every differentiable primitive and every
//! network block on small shapes, inputs and parameters alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradcheck_params, GradReport, GradcheckConfig};
use crate::blocks::{ChannelAttention, MambaBlock, MambaBlockConfig, Rdcb, RdcbConfig, RdcbMamba};
use crate::error::Result;
use crate::net::{Ablation, Fusion, MsfumNet, NetworkConfig};
use crate::nn::ParamStore;
use crate::ops;
use crate::ssm::{selective_scan, ScanMode};
use crate::tensor::{no_grad, Tensor};

type Case = fn(&GradcheckConfig) -> Result<GradReport>;

pub struct SuiteResult {
    pub name: &'static str,
    pub report: GradReport,
}

fn random(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches data")
}

fn leaf(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    Tensor::parameter(t.shape(), t.to_vec())
}

/// Checks `f` with respect to all `inputs`, which become parameter leaves;
/// tensor outputs are reduced by a fixed random projection.
fn check_inputs(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>, cfg: &GradcheckConfig) -> Result<GradReport> {
    let leaves = inputs.iter().map(leaf).collect::<Result<Vec<_>>>()?;
    check_with(&leaves, &leaves, f, cfg)
}

/// As [`check_inputs`] for a module whose parameters are `extra`; the
/// checked set is the inputs followed by the parameters.
fn check_module(
    inputs: &[Tensor<f64>],
    store: ParamStore<f64>,
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    cfg: &GradcheckConfig,
) -> Result<GradReport> {
    let leaves = inputs.iter().map(leaf).collect::<Result<Vec<_>>>()?;
    let mut all = leaves.clone();
    all.extend(store.finish()?.tensors().cloned());
    check_with(&leaves, &all, f, cfg)
}

fn check_with(
    inputs: &[Tensor<f64>],
    checked: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    cfg: &GradcheckConfig,
) -> Result<GradReport> {
    let probe = no_grad(|| f(inputs))?;
    let w = random(cfg.seed ^ 0x77, probe.shape(), 0.5, 1.5);
    gradcheck_params(|| Ok(ops::sum(&ops::mul(&f(inputs)?, &w)?)), checked, cfg)
}

fn elementwise(cfg: &GradcheckConfig) -> Result<GradReport> {
    let (a, b) = (random(1, &[2, 3], -1.0, 1.0), random(2, &[2, 3], -1.0, 1.0));
    check_inputs(
        &[a, b],
        |t| {
            let s = ops::add(&ops::mul(&t[0], &t[1])?, &ops::sub(&t[0], &ops::scale(&t[1], 0.5))?)?;
            ops::add(&ops::scale(&ops::sum(&s), 0.1), &ops::mean(&t[0]))
        },
        cfg,
    )
}

fn activations(cfg: &GradcheckConfig) -> Result<GradReport> {
    check_inputs(
        &[random(3, &[4, 5], -2.0, 2.0)],
        |t| {
            let x = &t[0];
            let y = ops::add(&ops::relu(x), &ops::sigmoid(x))?;
            ops::add(&y, &ops::add(&ops::silu(x), &ops::softplus(x))?)
        },
        cfg,
    )
}

fn mul_channel(cfg: &GradcheckConfig) -> Result<GradReport> {
    check_inputs(
        &[random(4, &[2, 3, 2, 2], -1.0, 1.0), random(5, &[2, 3], 0.0, 1.0)],
        |t| ops::mul_channel(&t[0], &t[1]),
        cfg,
    )
}

fn linear(cfg: &GradcheckConfig) -> Result<GradReport> {
    check_inputs(
        &[random(6, &[2, 3, 4], -1.0, 1.0), random(7, &[5, 4], -1.0, 1.0), random(8, &[5], -1.0, 1.0)],
        |t| ops::linear(&t[0], &t[1], Some(&t[2])),
        cfg,
    )
}

fn layer_norm(cfg: &GradcheckConfig) -> Result<GradReport> {
    check_inputs(
        &[random(9, &[2, 3, 6], -1.0, 1.0), random(10, &[6], 0.5, 1.5), random(11, &[6], -0.5, 0.5)],
        |t| ops::layer_norm(&t[0], &t[1], &t[2], 1e-5),
        cfg,
    )
}

fn conv2d(cfg: &GradcheckConfig) -> Result<GradReport> {
    let inputs = [random(12, &[2, 2, 5, 5], -1.0, 1.0), random(13, &[3, 2, 3, 3], -1.0, 1.0), random(14, &[3], -1.0, 1.0)];
    let a = check_inputs(&inputs, |t| ops::conv2d(&t[0], &t[1], Some(&t[2]), 1, 1), cfg)?;
    let b = check_inputs(&inputs, |t| ops::conv2d(&t[0], &t[1], Some(&t[2]), 2, 1), cfg)?;
    Ok(merge(a, b))
}

fn conv1d(cfg: &GradcheckConfig) -> Result<GradReport> {
    check_inputs(
        &[random(15, &[2, 6, 3], -1.0, 1.0), random(16, &[3, 4], -1.0, 1.0), random(17, &[3], -1.0, 1.0)],
        |t| ops::conv1d_depthwise(&t[0], &t[1], Some(&t[2]), true),
        cfg,
    )
}

fn pooling_and_resampling(cfg: &GradcheckConfig) -> Result<GradReport> {
    let x = random(18, &[2, 3, 3, 4], -1.0, 1.0);
    let a = check_inputs(std::slice::from_ref(&x), |t| ops::global_avg_pool(&t[0]), cfg)?;
    let b = check_inputs(std::slice::from_ref(&x), |t| ops::upsample_bilinear2x(&t[0]), cfg)?;
    Ok(merge(a, b))
}

fn shapes(cfg: &GradcheckConfig) -> Result<GradReport> {
    check_inputs(
        &[random(19, &[1, 2, 2, 3], -1.0, 1.0), random(20, &[1, 1, 2, 3], -1.0, 1.0)],
        |t| {
            let c = ops::concat_channels(&[t[0].clone(), t[1].clone()])?;
            let s = ops::spatial_to_sequence(&c)?;
            let back = ops::sequence_to_spatial(&ops::scale(&s, 2.0), 2, 3)?;
            ops::reshape(&back, &[3, 6])
        },
        cfg,
    )
}

fn scan(cfg: &GradcheckConfig) -> Result<GradReport> {
    let (b, l, d, n) = (2, 5, 3, 2);
    check_inputs(
        &[
            random(21, &[b, l, d], -1.0, 1.0),
            random(22, &[b, l, d], 0.1, 1.0),
            random(23, &[d, n], -1.0, 1.0),
            random(24, &[b, l, n], -1.0, 1.0),
            random(25, &[b, l, n], -1.0, 1.0),
            random(26, &[d], -1.0, 1.0),
        ],
        |t| selective_scan(&t[0], &t[1], &t[2], &t[3], &t[4], &t[5], ScanMode::Sequential),
        cfg,
    )
}

fn losses(cfg: &GradcheckConfig) -> Result<GradReport> {
    let target = random(27, &[1, 1, 3, 3], -1.0, 1.0);
    let mask = [true, true, false, true, true, true, true, false, true];
    check_inputs(
        &[random(28, &[1, 1, 3, 3], -1.0, 1.0)],
        |t| ops::add(&ops::l1_loss(&t[0], &target, Some(&mask))?, &ops::mse_loss(&t[0], &target, None)?),
        cfg,
    )
}

fn channel_attention(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut store = ParamStore::seeded(30);
    let ca = ChannelAttention::new(&mut store, "ca", 8, 4)?;
    check_module(&[random(31, &[2, 8, 3, 3], -1.0, 1.0)], store, |t| ca.forward(&t[0]), cfg)
}

fn rdcb(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut store = ParamStore::seeded(32);
    let block = Rdcb::new(&mut store, "rdcb", RdcbConfig::for_channels(4))?;
    check_module(&[random(33, &[1, 4, 4, 4], -1.0, 1.0)], store, |t| block.forward(&t[0]), cfg)
}

fn mamba_block(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut store = ParamStore::seeded(34);
    let block = MambaBlock::new(&mut store, "mamba", MambaBlockConfig::new(4, 3))?;
    check_module(&[random(35, &[2, 4, 2, 3], -1.0, 1.0)], store, |t| block.forward(&t[0]), cfg)
}

fn rdcb_mamba(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut store = ParamStore::seeded(36);
    let block = RdcbMamba::new(&mut store, "stage", 4, 2, true, true)?;
    check_module(&[random(37, &[1, 4, 4, 4], -1.0, 1.0)], store, |t| block.forward(&t[0]), cfg)
}

fn fuse(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut store = ParamStore::seeded(38);
    let f = Fusion::new(&mut store, "fuse", 4, 2, Ablation::FULL)?;
    let inputs = [
        random(39, &[1, 4, 4, 4], -1.0, 1.0),
        random(40, &[1, 4, 4, 4], -1.0, 1.0),
        random(41, &[1, 4, 4, 4], -1.0, 1.0),
    ];
    check_module(&inputs, store, |t| f.forward(&t[0], &t[1], Some(&t[2])), cfg)
}

fn full_forward_l1(cfg: &GradcheckConfig) -> Result<GradReport> {
    let net_cfg = NetworkConfig::for_scale(4)?.with_base_channels(4).with_state_size(2);
    let (net, params) = MsfumNet::<f64>::build(net_cfg, 42)?;
    let lr = random(43, &[1, 1, 2, 2], 0.0, 1.0);
    let rgb = random(44, &[1, 3, 8, 8], 0.0, 1.0);
    let target = random(45, &[1, 1, 8, 8], 0.0, 1.0);
    let checked: Vec<Tensor<f64>> = params.tensors().cloned().collect();
    gradcheck_params(|| ops::l1_loss(&net.forward(&lr, &rgb)?, &target, None), &checked, cfg)
}

fn merge(a: GradReport, b: GradReport) -> GradReport {
    let worst = if a.max_rel_err >= b.max_rel_err { a.worst } else { b.worst };
    GradReport {
        max_rel_err: a.max_rel_err.max(b.max_rel_err),
        max_abs_err: a.max_abs_err.max(b.max_abs_err),
        checked: a.checked + b.checked,
        retried: a.retried + b.retried,
        worst,
        pass: a.pass && b.pass,
    }
}

/// Case names in execution order.
pub const CASES: [(&str, Case); 17] = [
    ("add/sub/mul/scale/sum/mean", elementwise),
    ("relu/sigmoid/silu/softplus", activations),
    ("mul_channel", mul_channel),
    ("linear", linear),
    ("layer_norm", layer_norm),
    ("conv2d", conv2d),
    ("conv1d_depthwise", conv1d),
    ("global_avg_pool/upsample_bilinear2x", pooling_and_resampling),
    ("concat/reshape/sequence layout", shapes),
    ("selective_scan", scan),
    ("l1_loss/mse_loss", losses),
    ("channel_attention", channel_attention),
    ("rdcb_forward", rdcb),
    ("mamba_block_forward", mamba_block),
    ("rdcb_mamba_forward", rdcb_mamba),
    ("fuse", fuse),
    ("full forward + L1", full_forward_l1),
];

/// Runs every case; errors abort, failed comparisons are reported.
pub fn run_suite(cfg: &GradcheckConfig) -> Result<Vec<SuiteResult>> {
    CASES
        .iter()
        .map(|&(name, case)| Ok(SuiteResult { name, report: case(cfg)? }))
        .collect()
}
