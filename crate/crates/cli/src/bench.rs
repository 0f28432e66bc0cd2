//! Wall-time scaling of the selective scan layer.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msfum_core::nn::ParamStore;
use msfum_core::ssm::{ssm_apply, ScanMode, SsmParams};
use msfum_core::{no_grad, Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanTiming {
    pub len: usize,
    /// Seconds per repeat, in run order.
    pub runs: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// `median(L) / median(previous L)`; absent for the first length.
    pub ratio: Option<f64>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Times the full selective SSM layer (projections, discretization and
/// sequential scan) on one `[1, L, channels]` sequence per length, after
/// one untimed warm-up run.
pub fn bench_scan(lengths: &[usize], repeats: usize, channels: usize, state: usize, seed: u64) -> Result<Vec<ScanTiming>> {
    if lengths.is_empty() || repeats == 0 || channels == 0 || state == 0 {
        return Err(Error::Config("bench-scan: lengths, repeats, channels and state must be non-empty/positive".into()));
    }
    let mut store = ParamStore::<f32>::seeded(seed);
    let params = SsmParams::new(&mut store, "ssm", channels, state, channels.div_ceil(16).max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<ScanTiming> = Vec::with_capacity(lengths.len());
    for &len in lengths {
        if len == 0 {
            return Err(Error::Config("bench-scan: lengths must be positive".into()));
        }
        let x: Vec<f32> = (0..len * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[1, len, channels], x)?;
        let run = || no_grad(|| ssm_apply(&x, &params, ScanMode::Sequential).map(|y| y.numel()));
        run()?;
        let mut runs = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            std::hint::black_box(run()?);
            runs.push(t0.elapsed().as_secs_f64());
        }
        let mean = runs.iter().sum::<f64>() / repeats as f64;
        let median = median(&runs);
        let ratio = rows.last().map(|prev| median / prev.median);
        rows.push(ScanTiming {
            len,
            runs,
            mean,
            median,
            ratio,
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[ScanTiming]) -> String {
    let mut out = String::from("# length  mean_ms  median_ms  ratio(median vs previous length)\n");
    for r in rows {
        let ratio = r.ratio.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(out, "{:>8}  {:>7.3}  {:>9.3}  {ratio}", r.len, r.mean * 1e3, r.median * 1e3);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_runs() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn table_has_one_row_per_length_and_chained_ratios() {
        let rows = bench_scan(&[16, 32], 3, 4, 2, 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].ratio.is_none());
        let r = rows[1].ratio.unwrap();
        assert!((r - rows[1].median / rows[0].median).abs() < 1e-12);
        assert_eq!(format_table(&rows).lines().count(), 3);
        assert!(bench_scan(&[], 3, 4, 2, 0).is_err());
    }
}
