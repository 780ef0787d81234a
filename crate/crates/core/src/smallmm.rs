//! Products where one side is a short, wide matrix: `m` and `k` are at most
//! a few dozen while `n` runs over a batch.
//!
//! Both kernels use plain multiply-add in a fixed order, so the vectorized
//! build selected at runtime gives the same bits as the portable one.

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 256;

/// `c (m×n) = a (m×k) · b (k×n)`, or `c += a · b` when `accumulate`.
pub(crate) fn nn(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected above.
        return unsafe { nn_avx2(m, n, k, a, b, c, accumulate) };
    }
    nn_body(m, n, k, a, b, c, accumulate)
}

/// `c (m×k) += u (m×n) · vᵀ` with `v` stored `k×n`.
pub(crate) fn nt_acc(m: usize, k: usize, n: usize, u: &[f64], v: &[f64], c: &mut [f64]) {
    assert!(u.len() >= m * n && v.len() >= k * n && c.len() >= m * k);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected above.
        return unsafe { nt_avx2(m, k, n, u, v, c) };
    }
    nt_body(m, k, n, u, v, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn nn_avx2(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    nn_body(m, n, k, a, b, c, accumulate)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn nt_avx2(m: usize, k: usize, n: usize, u: &[f64], v: &[f64], c: &mut [f64]) {
    nt_body(m, k, n, u, v, c)
}

#[inline(always)]
fn nn_body(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let full_n = n - n % NR;
    let full_m = m - m % MR;
    for j in (0..full_n).step_by(NR) {
        for i in (0..full_m).step_by(MR) {
            let mut acc = [[0.0f64; NR]; MR];
            if accumulate {
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
                }
            }
            for kk in 0..k {
                let bv: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + kk];
                    for l in 0..NR {
                        row[l] += av * bv[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
        }
        for i in full_m..m {
            let mut acc = [0.0f64; NR];
            if accumulate {
                acc.copy_from_slice(&c[i * n + j..i * n + j + NR]);
            }
            for kk in 0..k {
                let bv: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                let av = a[i * k + kk];
                for l in 0..NR {
                    acc[l] += av * bv[l];
                }
            }
            c[i * n + j..i * n + j + NR].copy_from_slice(&acc);
        }
    }
    for i in 0..m {
        for j in full_n..n {
            let mut s = if accumulate { c[i * n + j] } else { 0.0 };
            for kk in 0..k {
                s += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] = s;
        }
    }
}

#[inline(always)]
fn nt_body(m: usize, k: usize, n: usize, u: &[f64], v: &[f64], c: &mut [f64]) {
    for j0 in (0..n).step_by(KC) {
        let len = KC.min(n - j0);
        let full = len - len % NR;
        for i in 0..m {
            let ur = &u[i * n + j0..i * n + j0 + len];
            for kk in 0..k {
                let vr = &v[kk * n + j0..kk * n + j0 + len];
                let mut lanes = [0.0f64; NR];
                for (uc, vc) in ur[..full].chunks_exact(NR).zip(vr[..full].chunks_exact(NR)) {
                    for l in 0..NR {
                        lanes[l] += uc[l] * vc[l];
                    }
                }
                let mut s = lanes.iter().sum::<f64>();
                for l in full..len {
                    s += ur[l] * vr[l];
                }
                c[i * k + kk] += s;
            }
        }
    }
}
