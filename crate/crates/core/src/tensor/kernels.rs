//! Low-level numeric kernels shared by forward and backward passes.
//!
//! All kernels use a fixed accumulation order so results are bitwise
//! reproducible across runs on the same platform.

use super::Element;

const MR: usize = 4;
const NR: usize = 32;

/// C[m,n] += A[m,k] * B[k,n], row-major.
///
/// The main region runs in MR x NR register blocks (accumulators live in a
/// stack array across the whole k loop, so each B row load feeds MR fused
/// multiply-adds); row and column remainders fall back to a simple unrolled
/// loop. Per output element the summation order is always k-ascending, so
/// results are deterministic.
pub fn matmul_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let m_main = m - m % MR;
    let n_main = n - n % NR;
    let mut j0 = 0;
    while j0 < n_main {
        let mut i0 = 0;
        while i0 < m_main {
            block_4xnr(a, b, c, i0, j0, k, n);
            i0 += MR;
        }
        // Row remainder under this column strip.
        if i0 < m {
            matmul_acc_simple(a, b, c, i0, m, j0, j0 + NR, k, n);
        }
        j0 += NR;
    }
    // Column remainder over all rows.
    if n_main < n {
        matmul_acc_simple(a, b, c, 0, m, n_main, n, k, n);
    }
}

/// One MR x NR block with named accumulator arrays so they stay in vector
/// registers across the whole k loop.
#[inline(always)]
fn block_4xnr<E: Element>(a: &[E], b: &[E], c: &mut [E], i0: usize, j0: usize, k: usize, n: usize) {
    let mut acc0 = [E::ZERO; NR];
    let mut acc1 = [E::ZERO; NR];
    let mut acc2 = [E::ZERO; NR];
    let mut acc3 = [E::ZERO; NR];
    acc0.copy_from_slice(&c[i0 * n + j0..i0 * n + j0 + NR]);
    acc1.copy_from_slice(&c[(i0 + 1) * n + j0..(i0 + 1) * n + j0 + NR]);
    acc2.copy_from_slice(&c[(i0 + 2) * n + j0..(i0 + 2) * n + j0 + NR]);
    acc3.copy_from_slice(&c[(i0 + 3) * n + j0..(i0 + 3) * n + j0 + NR]);
    let (ar0, ar1, ar2, ar3) = (
        &a[i0 * k..(i0 + 1) * k],
        &a[(i0 + 1) * k..(i0 + 2) * k],
        &a[(i0 + 2) * k..(i0 + 3) * k],
        &a[(i0 + 3) * k..(i0 + 4) * k],
    );
    for p in 0..k {
        let brow = &b[p * n + j0..p * n + j0 + NR];
        let (a0, a1, a2, a3) = (ar0[p], ar1[p], ar2[p], ar3[p]);
        for jj in 0..NR {
            let bv = brow[jj];
            acc0[jj] = acc0[jj].add(a0.mul(bv));
            acc1[jj] = acc1[jj].add(a1.mul(bv));
            acc2[jj] = acc2[jj].add(a2.mul(bv));
            acc3[jj] = acc3[jj].add(a3.mul(bv));
        }
    }
    c[i0 * n + j0..i0 * n + j0 + NR].copy_from_slice(&acc0);
    c[(i0 + 1) * n + j0..(i0 + 1) * n + j0 + NR].copy_from_slice(&acc1);
    c[(i0 + 2) * n + j0..(i0 + 2) * n + j0 + NR].copy_from_slice(&acc2);
    c[(i0 + 3) * n + j0..(i0 + 3) * n + j0 + NR].copy_from_slice(&acc3);
}

/// Fallback for block remainders: rows [i_lo, i_hi), columns [j_lo, j_hi).
fn matmul_acc_simple<E: Element>(
    a: &[E],
    b: &[E],
    c: &mut [E],
    i_lo: usize,
    i_hi: usize,
    j_lo: usize,
    j_hi: usize,
    k: usize,
    n: usize,
) {
    for i in i_lo..i_hi {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n + j_lo..i * n + j_hi];
        let mut p = 0;
        while p + 4 <= k {
            let a0 = a_row[p];
            let a1 = a_row[p + 1];
            let a2 = a_row[p + 2];
            let a3 = a_row[p + 3];
            let b0 = &b[p * n + j_lo..p * n + j_hi];
            let b1 = &b[(p + 1) * n + j_lo..(p + 1) * n + j_hi];
            let b2 = &b[(p + 2) * n + j_lo..(p + 2) * n + j_hi];
            let b3 = &b[(p + 3) * n + j_lo..(p + 3) * n + j_hi];
            for j in 0..c_row.len() {
                let acc = c_row[j]
                    .add(a0.mul(b0[j]))
                    .add(a1.mul(b1[j]))
                    .add(a2.mul(b2[j]))
                    .add(a3.mul(b3[j]));
                c_row[j] = acc;
            }
            p += 4;
        }
        while p < k {
            let ap = a_row[p];
            let b_row = &b[p * n + j_lo..p * n + j_hi];
            for j in 0..c_row.len() {
                c_row[j] = c_row[j].add(ap.mul(b_row[j]));
            }
            p += 1;
        }
    }
}

/// Out-of-place 2D transpose: B[n,m] = A[m,n]^T.
pub fn transpose_2d<E: Element>(a: &[E], m: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Softmax over contiguous rows of length `cols`, max-subtracted.
pub fn softmax_rows<E: Element>(x: &[E], out: &mut [E], cols: usize) {
    debug_assert_eq!(x.len() % cols, 0);
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mut mx = xr[0];
        for &v in &xr[1..] {
            mx = mx.max(v);
        }
        let mut sum = E::ZERO;
        for (o, &v) in or.iter_mut().zip(xr.iter()) {
            let e = v.sub(mx).exp();
            *o = e;
            sum = sum.add(e);
        }
        for o in or.iter_mut() {
            *o = o.div(sum);
        }
    }
}

/// GELU, tanh approximation. Fixes the origin: gelu(0) == 0.
#[inline(always)]
pub fn gelu<E: Element>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = E::from_f64(0.044715);
    let inner = c.mul(x.add(k.mul(x).mul(x).mul(x)));
    let half = E::from_f64(0.5);
    half.mul(x).mul(E::ONE.add(inner.tanh()))
}

#[inline(always)]
pub fn gelu_grad<E: Element>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let k = E::from_f64(0.044715);
    let x2 = x.mul(x);
    let inner = c.mul(x.add(k.mul(x).mul(x2)));
    let t = inner.tanh();
    let sech2 = E::ONE.sub(t.mul(t));
    let dinner = c.mul(E::ONE.add(E::from_f64(3.0 * 0.044715).mul(x2)));
    let half = E::from_f64(0.5);
    half.mul(E::ONE.add(t)).add(half.mul(x).mul(sech2).mul(dinner))
}

#[inline(always)]
pub fn sigmoid<E: Element>(x: E) -> E {
    E::ONE.div(E::ONE.add(x.neg().exp()))
}

/// SiLU: x * sigmoid(x).
#[inline(always)]
pub fn silu<E: Element>(x: E) -> E {
    x.mul(sigmoid(x))
}

#[inline(always)]
pub fn silu_grad<E: Element>(x: E) -> E {
    let s = sigmoid(x);
    s.add(x.mul(s).mul(E::ONE.sub(s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] x [[0,1],[1,0]] = [[2,1],[4,3]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [0.0f64, 1.0, 1.0, 0.0];
        let mut c = [0.0f64; 4];
        matmul_acc(&a, &b, &mut c, 2, 2, 2);
        assert_eq!(c, [2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn matmul_unroll_tail() {
        // k=5 exercises both the unrolled body and the tail loop; compare
        // against a plain triple loop.
        let m = 3;
        let k = 5;
        let n = 7;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * -0.21 + 1.0).collect();
        let mut c = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((c[i * n + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_block_and_remainder_paths_match_triple_loop() {
        // Shapes straddling the MR x NR block boundaries.
        for &(m, k, n) in &[(8usize, 5usize, 37usize), (9, 7, 64), (4, 3, 32), (13, 16, 33)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 53) % 13) as f64 * 0.25 - 1.5).collect();
            let mut c = vec![0.5; m * n];
            matmul_acc(&a, &b, &mut c, m, k, n);
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.5;
                    for p in 0..k {
                        s += a[i * k + p] * b[p * n + j];
                    }
                    assert!(
                        (c[i * n + j] - s).abs() < 1e-9,
                        "({m},{k},{n}) at ({i},{j}): {} vs {s}",
                        c[i * n + j]
                    );
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = [1000.0f64, 0.0, 0.5, 0.5];
        let mut out = [0.0f64; 4];
        softmax_rows(&x, &mut out, 2);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!(out[1] < 1e-12);
        assert!((out[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gelu_fixes_origin() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(silu(0.0f64), 0.0);
    }
}
