//! Batched layer kernels.
//!
//! Activations are stored feature-major with the batch last: a layer of
//! width `F` over a batch of `B` columns is a row-major `F×B` buffer. The
//! tape packs the five jet channels of `P` points into `B = 5P` columns
//! (channel-major within each feature row), so one GEMM pushes every
//! derivative channel through a linear map at once.

use crate::gemm::{gemm, Trans};
use crate::smallmm;
use crate::tensor::probe;
use crate::tt::TtShape;

/// `out = W x (+ b on the first `bias_cols` columns of each row)`.
pub(crate) fn affine_forward(
    w: &[f64],
    bias: Option<&[f64]>,
    x: &[f64],
    out_dim: usize,
    in_dim: usize,
    batch: usize,
    bias_cols: usize,
) -> Vec<f64> {
    let mut out = probe::buffer(out_dim * batch);
    gemm(out_dim, batch, in_dim, 1.0, w, Trans::No, x, Trans::No, 0.0, &mut out);
    if let Some(b) = bias {
        add_bias(&mut out, b, batch, bias_cols);
    }
    out
}

pub(crate) fn add_bias(out: &mut [f64], bias: &[f64], batch: usize, bias_cols: usize) {
    for (row, &b) in out.chunks_exact_mut(batch).zip(bias) {
        for v in &mut row[..bias_cols] {
            *v += b;
        }
    }
}

pub(crate) fn bias_grad(dout: &[f64], batch: usize, bias_cols: usize) -> Vec<f64> {
    dout.chunks_exact(batch).map(|row| row[..bias_cols].iter().sum()).collect()
}

/// Returns `(dW, dx)` for `out = W x`.
pub(crate) fn affine_backward(
    w: &[f64],
    x: &[f64],
    dout: &[f64],
    out_dim: usize,
    in_dim: usize,
    batch: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dw = probe::buffer(out_dim * in_dim);
    gemm(out_dim, in_dim, batch, 1.0, dout, Trans::No, x, Trans::Yes, 0.0, &mut dw);
    let mut dx = probe::buffer(in_dim * batch);
    gemm(in_dim, batch, out_dim, 1.0, w, Trans::Yes, dout, Trans::No, 0.0, &mut dx);
    (dw, dx)
}

/// Batch columns pushed through the TT chain together; keeps every
/// intermediate of a tile cache-resident.
const TT_TILE: usize = 128;

/// One contraction step `out (m × cols·T) = A (m × k) · in (k × cols·T)`.
struct Step {
    core: usize,
    m: usize,
    k: usize,
    cols: usize,
}

/// The `2d` steps, consuming cores `G_2d..G_1`.
///
/// The input tile is stored with its column modes reversed,
/// `[n_d]..[n_1][T]`. A column step on the core of mode `n_q` then sees
/// `[r_{c+1}][n_q][n_{q-1}..n_1][T]` and contracts the leading
/// `(r_{c+1}, n_q)` pair against the core permuted to `(r_c, r_{c+1}, n_q)`.
/// Row steps see `[r_{c+1}][m_{c+1}..m_d][T]` and emit `[r_c][m_c][..][T]`,
/// so the last step leaves the rows in natural order.
fn tt_steps(shape: &TtShape) -> Vec<Step> {
    let d = shape.d();
    let r = shape.ranks();
    (0..2 * d)
        .map(|s| {
            let c = 2 * d - 1 - s;
            if c >= d {
                let q = c - d;
                let cols = shape.col_factors()[..q].iter().product();
                Step { core: c, m: r[c], k: r[c + 1] * shape.mode(c), cols }
            } else {
                let cols = shape.row_factors()[c + 1..].iter().product();
                Step { core: c, m: r[c] * shape.mode(c), k: r[c + 1], cols }
            }
        })
        .collect()
}

/// Swaps the last two axes of a `[a][b][c]` buffer.
fn swap_inner(g: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = probe::buffer(g.len());
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                out[(i * c + k) * b + j] = g[(i * b + j) * c + k];
            }
        }
    }
    out
}

/// Step matrices: column cores permuted to `(r, r', n)`, row cores as stored.
fn step_matrices<'a>(shape: &TtShape, cores: &[&'a [f64]]) -> Vec<std::borrow::Cow<'a, [f64]>> {
    (0..2 * shape.d())
        .map(|c| {
            if c >= shape.d() {
                let [a, n, b] = shape.core_shape(c);
                std::borrow::Cow::Owned(swap_inner(cores[c], a, n, b))
            } else {
                std::borrow::Cow::Borrowed(cores[c])
            }
        })
        .collect()
}

/// `rev[j']` is the natural column index stored at reversed position `j'`.
fn reversed_cols(shape: &TtShape) -> Vec<usize> {
    let f = shape.col_factors();
    let rev: Vec<usize> = f.iter().rev().copied().collect();
    (0..shape.cols())
        .map(|jr| {
            let digits = crate::tensor::unravel(jr, &rev);
            digits.iter().rev().zip(f).fold(0, |acc, (&dgt, &n)| acc * n + dgt)
        })
        .collect()
}

fn gather(src: &[f64], rows: &[usize], batch: usize, t0: usize, t: usize) -> Vec<f64> {
    let mut out = probe::buffer(rows.len() * t);
    for (dst, &row) in out.chunks_exact_mut(t).zip(rows) {
        dst.copy_from_slice(&src[row * batch + t0..row * batch + t0 + t]);
    }
    out
}

fn scatter(dst: &mut [f64], tile: &[f64], rows: &[usize], batch: usize, t0: usize, t: usize) {
    for (src, &row) in tile.chunks_exact(t).zip(rows) {
        dst[row * batch + t0..row * batch + t0 + t].copy_from_slice(src);
    }
}

/// Runs the chain on one tile; returns every stage output, the last being
/// the `M×t` result.
fn tt_tile(steps: &[Step], mats: &[std::borrow::Cow<'_, [f64]>], input: &[f64], t: usize) -> Vec<Vec<f64>> {
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
    for st in steps {
        let inp: &[f64] = stages.last().map_or(input, |v| v.as_slice());
        let mut out = probe::buffer(st.m * st.cols * t);
        smallmm::nn(st.m, st.cols * t, st.k, &mats[st.core], inp, &mut out, false);
        stages.push(out);
    }
    stages
}

/// `W x` by sweeping the cores over tiles of the batch; `cores[k]` is core
/// `k` row-major.
pub(crate) fn sweep_forward(shape: &TtShape, cores: &[&[f64]], x: &[f64], batch: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), shape.cols() * batch);
    let steps = tt_steps(shape);
    let mats = step_matrices(shape, cores);
    let rev = reversed_cols(shape);
    let rows: Vec<usize> = (0..shape.rows()).collect();
    let mut out = probe::buffer(shape.rows() * batch);
    for t0 in (0..batch).step_by(TT_TILE) {
        let t = TT_TILE.min(batch - t0);
        let tile = gather(x, &rev, batch, t0, t);
        let stages = tt_tile(&steps, &mats, &tile, t);
        scatter(&mut out, stages.last().expect("at least two steps"), &rows, batch, t0, t);
    }
    out
}

/// Vector-Jacobian product of [`sweep_forward`]: gradients for every core
/// and for the input. Each tile's intermediates are recomputed.
pub(crate) fn sweep_backward(
    shape: &TtShape,
    cores: &[&[f64]],
    x: &[f64],
    dout: &[f64],
    batch: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let steps = tt_steps(shape);
    let mats = step_matrices(shape, cores);
    let rev = reversed_cols(shape);
    let rows: Vec<usize> = (0..shape.rows()).collect();
    let mut mats_t: Vec<Vec<f64>> = vec![Vec::new(); steps.len()];
    for st in &steps {
        mats_t[st.core] = swap_inner(&mats[st.core], 1, st.m, st.k);
    }
    let mut dmats: Vec<Vec<f64>> = (0..2 * shape.d()).map(|k| probe::buffer(shape.core_len(k))).collect();
    let mut dx = probe::buffer(x.len());
    for t0 in (0..batch).step_by(TT_TILE) {
        let t = TT_TILE.min(batch - t0);
        let tile = gather(x, &rev, batch, t0, t);
        let stages = tt_tile(&steps, &mats, &tile, t);
        let mut up = gather(dout, &rows, batch, t0, t);
        for (s, st) in steps.iter().enumerate().rev() {
            let inp: &[f64] = if s == 0 { &tile } else { &stages[s - 1] };
            let n = st.cols * t;
            smallmm::nt_acc(st.m, st.k, n, &up, inp, &mut dmats[st.core]);
            let mut down = probe::buffer(st.k * n);
            smallmm::nn(st.k, n, st.m, &mats_t[st.core], &up, &mut down, false);
            up = down;
        }
        scatter(&mut dx, &up, &rev, batch, t0, t);
    }
    for c in shape.d()..2 * shape.d() {
        let [a, n, b] = shape.core_shape(c);
        dmats[c] = swap_inner(&dmats[c], a, b, n);
    }
    (dmats, dx)
}

/// How a batched TT product was contracted, with what its backward pass
/// needs.
#[derive(Clone, Debug)]
pub(crate) enum TtCache {
    Sweep,
    /// Row cores merged into `L (M×r_d)`, column cores into `R (r_d×N)`.
    /// `left[k]` is the product of cores `0..=k`, `right[j]` that of cores
    /// `d+j..2d`, and `z = R x`.
    Halves { left: Vec<Vec<f64>>, right: Vec<Vec<f64>>, z: Vec<f64> },
}

fn sweep_flops(shape: &TtShape, batch: usize) -> f64 {
    let per_col: usize = tt_steps(shape).iter().map(|s| 2 * s.m * s.k * s.cols).sum();
    // forward, plus recompute and two products per step in the backward pass
    4.0 * (per_col * batch) as f64
}

fn halves_flops(shape: &TtShape, batch: usize) -> f64 {
    let (d, r) = (shape.d(), shape.ranks());
    let mut chains = 0;
    let mut lead = shape.mode(0);
    for k in 1..d {
        chains += 2 * lead * r[k] * shape.mode(k) * r[k + 1];
        lead *= shape.mode(k);
    }
    let mut tail = shape.mode(2 * d - 1);
    for c in (d..2 * d - 1).rev() {
        chains += 2 * r[c] * shape.mode(c) * r[c + 1] * tail;
        tail *= shape.mode(c);
    }
    let per_col = 2 * r[d] * (shape.rows() + shape.cols());
    3.0 * chains as f64 + 3.0 * (per_col * batch) as f64
}

fn left_chain(shape: &TtShape, cores: &[&[f64]]) -> Vec<Vec<f64>> {
    let r = shape.ranks();
    let mut chain = vec![cores[0].to_vec()];
    let mut lead = shape.mode(0);
    for k in 1..shape.d() {
        let cols = shape.mode(k) * r[k + 1];
        let mut p = probe::buffer(lead * cols);
        gemm(lead, cols, r[k], 1.0, chain.last().unwrap(), Trans::No, cores[k], Trans::No, 0.0, &mut p);
        chain.push(p);
        lead *= shape.mode(k);
    }
    chain
}

fn right_chain(shape: &TtShape, cores: &[&[f64]]) -> Vec<Vec<f64>> {
    let (d, r) = (shape.d(), shape.ranks());
    let mut chain = vec![Vec::new(); d];
    chain[d - 1] = cores[2 * d - 1].to_vec();
    let mut tail = shape.mode(2 * d - 1);
    for c in (d..2 * d - 1).rev() {
        let lead = r[c] * shape.mode(c);
        let mut q = probe::buffer(lead * tail);
        gemm(lead, tail, r[c + 1], 1.0, cores[c], Trans::No, &chain[c + 1 - d], Trans::No, 0.0, &mut q);
        chain[c - d] = q;
        tail *= shape.mode(c);
    }
    chain
}

/// `W x` for a batch of `batch` columns, contracted in whichever order
/// costs fewer flops for this shape and batch.
pub(crate) fn tt_forward(shape: &TtShape, cores: &[&[f64]], x: &[f64], batch: usize) -> (Vec<f64>, TtCache) {
    if sweep_flops(shape, batch) <= halves_flops(shape, batch) {
        return (sweep_forward(shape, cores, x, batch), TtCache::Sweep);
    }
    halves_forward(shape, cores, x, batch)
}

pub(crate) fn halves_forward(shape: &TtShape, cores: &[&[f64]], x: &[f64], batch: usize) -> (Vec<f64>, TtCache) {
    let rd = shape.ranks()[shape.d()];
    let (left, right) = (left_chain(shape, cores), right_chain(shape, cores));
    let mut z = probe::buffer(rd * batch);
    smallmm::nn(rd, batch, shape.cols(), &right[0], x, &mut z, false);
    let mut out = probe::buffer(shape.rows() * batch);
    smallmm::nn(shape.rows(), batch, rd, left.last().unwrap(), &z, &mut out, false);
    (out, TtCache::Halves { left, right, z })
}

/// Core and input gradients of [`tt_forward`].
pub(crate) fn tt_backward(
    shape: &TtShape,
    cores: &[&[f64]],
    cache: &TtCache,
    x: &[f64],
    dout: &[f64],
    batch: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let TtCache::Halves { left, right, z } = cache else {
        return sweep_backward(shape, cores, x, dout, batch);
    };
    let (d, r) = (shape.d(), shape.ranks());
    let (m, n, rd) = (shape.rows(), shape.cols(), r[d]);
    let lt = swap_inner(left.last().unwrap(), 1, m, rd);
    let mut dz = probe::buffer(rd * batch);
    smallmm::nn(rd, batch, m, &lt, dout, &mut dz, false);
    let mut dl = probe::buffer(m * rd);
    smallmm::nt_acc(m, rd, batch, dout, z, &mut dl);
    let mut dr = probe::buffer(rd * n);
    smallmm::nt_acc(rd, n, batch, &dz, x, &mut dr);
    let rt = swap_inner(&right[0], 1, rd, n);
    let mut dx = probe::buffer(n * batch);
    smallmm::nn(n, batch, rd, &rt, &dz, &mut dx, false);

    let mut grads = vec![Vec::new(); 2 * d];
    let (mut dp, mut lead) = (dl, m);
    for k in (1..d).rev() {
        lead /= shape.mode(k);
        let cols = shape.mode(k) * r[k + 1];
        let mut g = probe::buffer(r[k] * cols);
        gemm(r[k], cols, lead, 1.0, &left[k - 1], Trans::Yes, &dp, Trans::No, 0.0, &mut g);
        let mut next = probe::buffer(lead * r[k]);
        gemm(lead, r[k], cols, 1.0, &dp, Trans::No, cores[k], Trans::Yes, 0.0, &mut next);
        grads[k] = g;
        dp = next;
    }
    grads[0] = dp;
    let (mut dq, mut tail) = (dr, n);
    for c in d..2 * d - 1 {
        tail /= shape.mode(c);
        let lead = r[c] * shape.mode(c);
        let mut g = probe::buffer(lead * r[c + 1]);
        gemm(lead, r[c + 1], tail, 1.0, &dq, Trans::No, &right[c + 1 - d], Trans::Yes, 0.0, &mut g);
        let mut next = probe::buffer(r[c + 1] * tail);
        gemm(r[c + 1], tail, lead, 1.0, cores[c], Trans::Yes, &dq, Trans::No, 0.0, &mut next);
        grads[c] = g;
        dq = next;
    }
    grads[2 * d - 1] = dq;
    (grads, dx)
}

/// Elementwise sine over a jet batch laid out `[feature][channel][point]`.
/// Returns the output and the cached `(sin, cos)` of the value channel.
pub(crate) fn sin_jets_forward(x: &[f64], features: usize, points: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let stride = 5 * points;
    let mut out = probe::buffer(x.len());
    let mut sines = probe::buffer(features * points);
    let mut cosines = probe::buffer(features * points);
    for f in 0..features {
        let xi = &x[f * stride..(f + 1) * stride];
        let o = &mut out[f * stride..(f + 1) * stride];
        let (v, rest) = xi.split_at(points);
        let (dx, rest) = rest.split_at(points);
        let (dy, rest) = rest.split_at(points);
        let (dxx, dyy) = rest.split_at(points);
        for p in 0..points {
            let (s, c) = v[p].sin_cos();
            sines[f * points + p] = s;
            cosines[f * points + p] = c;
            o[p] = s;
            o[points + p] = c * dx[p];
            o[2 * points + p] = c * dy[p];
            o[3 * points + p] = c * dxx[p] - s * dx[p] * dx[p];
            o[4 * points + p] = c * dyy[p] - s * dy[p] * dy[p];
        }
    }
    (out, sines, cosines)
}

pub(crate) fn sin_jets_backward(
    x: &[f64],
    sines: &[f64],
    cosines: &[f64],
    dout: &[f64],
    features: usize,
    points: usize,
) -> Vec<f64> {
    let stride = 5 * points;
    let mut din = probe::buffer(x.len());
    for f in 0..features {
        let xi = &x[f * stride..(f + 1) * stride];
        let g = &dout[f * stride..(f + 1) * stride];
        let o = &mut din[f * stride..(f + 1) * stride];
        for p in 0..points {
            let s = sines[f * points + p];
            let c = cosines[f * points + p];
            let (ax, ay, axx, ayy) = (xi[points + p], xi[2 * points + p], xi[3 * points + p], xi[4 * points + p]);
            let (gv, gx, gy, gxx, gyy) = (g[p], g[points + p], g[2 * points + p], g[3 * points + p], g[4 * points + p]);
            o[p] = c * gv - s * (ax * gx + ay * gy + axx * gxx + ayy * gyy) - c * (ax * ax * gxx + ay * ay * gyy);
            o[points + p] = c * gx - 2.0 * s * ax * gxx;
            o[2 * points + p] = c * gy - 2.0 * s * ay * gyy;
            o[3 * points + p] = c * gxx;
            o[4 * points + p] = c * gyy;
        }
    }
    din
}
