//! Plain-array selective scan kernels.
//!
//! Layouts (single sequence): `x`, `delta`: `[L, D]`; `a`: `[D, N]` holding
//! the continuous, negative state matrix diagonal; `b`, `c`: `[L, N]`;
//! `d_skip`: `[D]`. The recurrence per channel `d` and state `n` is
//!
//! ```text
//! h[t] = exp(delta[t,d] * a[d,n]) * h[t-1] + delta[t,d] * b[t,n] * x[t,d]
//! y[t,d] = sum_n c[t,n] * h[t][d,n] + d_skip[d] * x[t,d]
//! ```
//!
//! with `h[-1] = 0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d_skip: &'a [T],
}

impl<T: Scalar> ScanInputs<'_, T> {
    pub fn validate(&self) -> Result<()> {
        let (l, d, n) = (self.len, self.channels, self.state);
        let checks = [
            ("x", self.x.len(), l * d),
            ("delta", self.delta.len(), l * d),
            ("a", self.a.len(), d * n),
            ("b", self.b.len(), l * n),
            ("c", self.c.len(), l * n),
            ("d_skip", self.d_skip.len(), d),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::contract(format!(
                    "scan: `{name}` holds {got} values, expected {want} for L={l}, D={d}, N={n}"
                )));
            }
        }
        Ok(())
    }
}

/// Zero-order-hold transition and Euler input matrices, both `[L, D, N]`.
pub fn discretize<T: Scalar>(
    a: &[T],
    delta: &[T],
    b: &[T],
    len: usize,
    channels: usize,
    state: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    if delta.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::contract("discretize: every delta must be positive"));
    }
    if a.len() != channels * state || delta.len() != len * channels || b.len() != len * state {
        return Err(Error::contract("discretize: inconsistent array lengths"));
    }
    let mut a_bar = Vec::with_capacity(len * channels * state);
    let mut b_bar = Vec::with_capacity(len * channels * state);
    for t in 0..len {
        for d in 0..channels {
            let dt = delta[t * channels + d];
            for n in 0..state {
                a_bar.push((dt * a[d * state + n]).exp());
                b_bar.push(dt * b[t * state + n]);
            }
        }
    }
    Ok((a_bar, b_bar))
}

/// Advances the `[D, N]` state by one token and returns nothing; the output
/// is read separately so that every scan variant shares this arithmetic.
#[inline(always)]
fn step<T: Scalar>(h: &mut [T], inp: &ScanInputs<'_, T>, t: usize) {
    let (d_n, n_n) = (inp.channels, inp.state);
    let b = &inp.b[t * n_n..(t + 1) * n_n];
    for d in 0..d_n {
        let dt = inp.delta[t * d_n + d];
        let xv = inp.x[t * d_n + d];
        let a = &inp.a[d * n_n..(d + 1) * n_n];
        let hd = &mut h[d * n_n..(d + 1) * n_n];
        for n in 0..n_n {
            hd[n] = (dt * a[n]).exp() * hd[n] + (dt * b[n]) * xv;
        }
    }
}

#[inline(always)]
fn readout<T: Scalar>(h: &[T], inp: &ScanInputs<'_, T>, t: usize, y: &mut [T]) {
    let (d_n, n_n) = (inp.channels, inp.state);
    let c = &inp.c[t * n_n..(t + 1) * n_n];
    for d in 0..d_n {
        let hd = &h[d * n_n..(d + 1) * n_n];
        let mut acc = T::zero();
        for n in 0..n_n {
            acc += c[n] * hd[n];
        }
        y[d] = acc + inp.d_skip[d] * inp.x[t * d_n + d];
    }
}

/// Runs the recurrence over `range` starting from `h`, writing outputs for
/// those positions into `y` (indexed relative to `range.start`).
fn scan_range<T: Scalar>(inp: &ScanInputs<'_, T>, range: std::ops::Range<usize>, h: &mut [T], y: &mut [T]) {
    let d_n = inp.channels;
    let start = range.start;
    for t in range {
        step(h, inp, t);
        readout(h, inp, t, &mut y[(t - start) * d_n..(t - start + 1) * d_n]);
    }
}

/// Exact left-to-right recurrence. `O(L*D*N)` time, `O(D*N)` state.
pub fn scan_sequential<T: Scalar>(inp: &ScanInputs<'_, T>) -> Result<Vec<T>> {
    inp.validate()?;
    let mut h = vec![T::zero(); inp.channels * inp.state];
    let mut y = vec![T::zero(); inp.len * inp.channels];
    scan_range(inp, 0..inp.len, &mut h, &mut y);
    Ok(y)
}

/// Sequential scan that also returns every hidden state, `[L, D, N]`.
/// Per-token hidden states and transition factors `exp(delta * a)`
/// (`[L, D, N]` each) recorded by the forward pass for the adjoint scan.
pub(crate) struct ScanTape<T> {
    states: Vec<T>,
    decays: Vec<T>,
}

/// Sequential scan that also records the [`ScanTape`].
pub(crate) fn scan_sequential_with_states<T: Scalar>(inp: &ScanInputs<'_, T>) -> (Vec<T>, ScanTape<T>) {
    let (d_n, n_n) = (inp.channels, inp.state);
    let dn = d_n * n_n;
    let mut h = vec![T::zero(); dn];
    let mut y = vec![T::zero(); inp.len * d_n];
    let mut states = Vec::with_capacity(inp.len * dn);
    let mut decays = Vec::with_capacity(inp.len * dn);
    for t in 0..inp.len {
        let b = &inp.b[t * n_n..(t + 1) * n_n];
        for (d, hd) in h.chunks_exact_mut(n_n).enumerate() {
            let (dt, xv) = (inp.delta[t * d_n + d], inp.x[t * d_n + d]);
            let a = &inp.a[d * n_n..(d + 1) * n_n];
            for ((hv, &av), &bv) in hd.iter_mut().zip(a).zip(b) {
                let ab = (dt * av).exp();
                decays.push(ab);
                *hv = ab * *hv + (dt * bv) * xv;
            }
        }
        readout(&h, inp, t, &mut y[t * d_n..(t + 1) * d_n]);
        states.extend_from_slice(&h);
    }
    (y, ScanTape { states, decays })
}

/// Affine summary of a chunk: `h_out = transition * h_in + offset`,
/// elementwise over the `[D, N]` state.
struct ChunkSummary<T> {
    transition: Vec<T>,
    offset: Vec<T>,
}

fn summarize<T: Scalar>(inp: &ScanInputs<'_, T>, range: std::ops::Range<usize>) -> ChunkSummary<T> {
    let (d_n, n_n) = (inp.channels, inp.state);
    let mut transition = vec![T::one(); d_n * n_n];
    let mut offset = vec![T::zero(); d_n * n_n];
    for t in range {
        for d in 0..d_n {
            let dt = inp.delta[t * d_n + d];
            for n in 0..n_n {
                transition[d * n_n + n] = (dt * inp.a[d * n_n + n]).exp() * transition[d * n_n + n];
            }
        }
        step(&mut offset, inp, t);
    }
    ChunkSummary { transition, offset }
}

/// Chunked scan: chunk summaries are computed independently (in parallel),
/// composed left to right into chunk entry states, and each chunk is then
/// replayed from its entry state. Agrees with [`scan_sequential`] up to
/// floating-point reassociation; with a single chunk it is bitwise equal.
pub fn scan_chunked<T: Scalar>(inp: &ScanInputs<'_, T>, chunk: usize) -> Result<Vec<T>> {
    inp.validate()?;
    if chunk == 0 {
        return Err(Error::contract("scan_chunked: chunk must be at least 1"));
    }
    let (l, d_n, n_n) = (inp.len, inp.channels, inp.state);
    let ranges: Vec<_> = (0..l).step_by(chunk).map(|s| s..(s + chunk).min(l)).collect();

    let summaries: Vec<ChunkSummary<T>> = ranges.par_iter().map(|r| summarize(inp, r.clone())).collect();

    let mut entry = Vec::with_capacity(ranges.len());
    let mut h = vec![T::zero(); d_n * n_n];
    for s in &summaries {
        entry.push(h.clone());
        for i in 0..h.len() {
            h[i] = s.transition[i] * h[i] + s.offset[i];
        }
    }

    let mut y = vec![T::zero(); l * d_n];
    y.par_chunks_mut(chunk * d_n)
        .zip(ranges.par_iter().zip(entry.into_par_iter()))
        .for_each(|(yc, (r, mut h0))| scan_range(inp, r.clone(), &mut h0, yc));
    Ok(y)
}

/// Gradients of a sequential scan for one sequence.
pub(crate) struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    /// With respect to the continuous `a`.
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Vec<T>,
}

/// Reverse-time adjoint recurrence over one sequence. Gradients for the
/// shared `a`/`d_skip` are accumulated into `shared`; per-token gradients
/// are returned fresh.
pub(crate) fn scan_backward<T: Scalar>(inp: &ScanInputs<'_, T>, tape: &ScanTape<T>, grad_y: &[T], shared: &mut ScanGrads<T>) -> ScanGrads<T> {
    let (l, d_n, n_n) = (inp.len, inp.channels, inp.state);
    let dn = d_n * n_n;
    let mut g = ScanGrads {
        x: vec![T::zero(); l * d_n],
        delta: vec![T::zero(); l * d_n],
        a: Vec::new(),
        b: vec![T::zero(); l * n_n],
        c: vec![T::zero(); l * n_n],
        d_skip: Vec::new(),
    };
    let mut dh = vec![T::zero(); dn];
    let zeros = vec![T::zero(); dn];
    for t in (0..l).rev() {
        let h_t = &tape.states[t * dn..(t + 1) * dn];
        let h_prev = if t == 0 { &zeros[..] } else { &tape.states[(t - 1) * dn..t * dn] };
        let decay = &tape.decays[t * dn..(t + 1) * dn];
        let b = &inp.b[t * n_n..(t + 1) * n_n];
        let c = &inp.c[t * n_n..(t + 1) * n_n];
        let gb = &mut g.b[t * n_n..(t + 1) * n_n];
        let gc = &mut g.c[t * n_n..(t + 1) * n_n];
        for d in 0..d_n {
            let gy = grad_y[t * d_n + d];
            let dt = inp.delta[t * d_n + d];
            let xv = inp.x[t * d_n + d];
            let mut g_dt = T::zero();
            let mut g_x = gy * inp.d_skip[d];
            shared.d_skip[d] += gy * xv;
            let r = d * n_n..(d + 1) * n_n;
            let lanes = dh[r.clone()]
                .iter_mut()
                .zip(&mut shared.a[r.clone()])
                .zip(&inp.a[r.clone()])
                .zip(&decay[r.clone()])
                .zip(&h_t[r.clone()])
                .zip(&h_prev[r])
                .zip(b.iter().zip(c))
                .zip(gb.iter_mut().zip(gc.iter_mut()));
            for (((((((dhv, sa), &a), &ab), &ht), &hp), (&bv, &cv)), (gbv, gcv)) in lanes {
                let dh_t = *dhv + gy * cv;
                *gcv += gy * ht;
                let d_ab = dh_t * hp * ab;
                g_dt += d_ab * a + dh_t * bv * xv;
                *sa += d_ab * dt;
                *gbv += dh_t * dt * xv;
                g_x += dh_t * dt * bv;
                *dhv = dh_t * ab;
            }
            g.delta[t * d_n + d] = g_dt;
            g.x[t * d_n + d] = g_x;
        }
    }
    g
}

pub(crate) fn zero_shared<T: Scalar>(channels: usize, state: usize) -> ScanGrads<T> {
    ScanGrads {
        x: Vec::new(),
        delta: Vec::new(),
        a: vec![T::zero(); channels * state],
        b: Vec::new(),
        c: Vec::new(),
        d_skip: vec![T::zero(); channels],
    }
}
