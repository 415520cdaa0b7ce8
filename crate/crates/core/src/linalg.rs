//! Dense complex kernels: gemm on row-major slices, thin SVD with a fixed
//! phase gauge, mode products and environment contractions on small tensors.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatRef, Par};
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// How an operand enters a product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
    H,
}

fn view<'a>(a: &'a [C64], rows: usize, cols: usize, op: Op) -> MatRef<'a, C64> {
    let m = MatRef::from_row_major_slice(a, rows, cols);
    match op {
        Op::N => m,
        Op::T => m.transpose(),
        Op::H => m.transpose(), // conjugation handled by caller
    }
}

/// `c = alpha * op(a) * op(b) (+ c if accumulate)`, all row-major.
/// `a` is stored `ar x ac`, `b` is stored `br x bc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    c: &mut [C64],
    a: &[C64],
    (ar, ac): (usize, usize),
    opa: Op,
    b: &[C64],
    (br, bc): (usize, usize),
    opb: Op,
    alpha: C64,
    accumulate: bool,
) {
    let (m, k) = if opa == Op::N { (ar, ac) } else { (ac, ar) };
    let (k2, n) = if opb == Op::N { (br, bc) } else { (bc, br) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    let acc = if accumulate { Accum::Add } else { Accum::Replace };
    let mut dst = faer::MatMut::from_row_major_slice_mut(c, m, n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            dst.fill(ZERO);
        }
        return;
    }
    let va = view(a, ar, ac, opa);
    let vb = view(b, br, bc, opb);
    match (opa == Op::H, opb == Op::H) {
        (false, false) => matmul(dst, acc, va, vb, alpha, Par::Seq),
        (true, false) => matmul(dst, acc, va.conjugate(), vb, alpha, Par::Seq),
        (false, true) => matmul(dst, acc, va, vb.conjugate(), alpha, Par::Seq),
        (true, true) => matmul(dst, acc, va.conjugate(), vb.conjugate(), alpha, Par::Seq),
    }
}

/// Matrix product of two ndarray matrices.
pub fn matmul_nd(a: &Array2<C64>, opa: Op, b: &Array2<C64>, opb: Op) -> Array2<C64> {
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (m, _) = if opa == Op::N { a.dim() } else { (a.dim().1, a.dim().0) };
    let n = if opb == Op::N { b.dim().1 } else { b.dim().0 };
    let mut out = vec![ZERO; m * n];
    gemm(
        &mut out,
        a.as_slice().unwrap(),
        a.dim(),
        opa,
        b.as_slice().unwrap(),
        b.dim(),
        opb,
        ONE,
        false,
    );
    Array2::from_shape_vec((m, n), out).unwrap()
}

/// Thin SVD `a = u diag(s) v^H` with `u: m x k`, `v: n x k`, `k = min(m, n)`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Array2<C64>,
    pub s: Vec<f64>,
    pub v: Array2<C64>,
}

/// Thin SVD of a row-major `rows x cols` matrix. Each left singular vector
/// is rotated so that its largest-magnitude entry is real and positive.
pub fn svd_thin(a: &[C64], rows: usize, cols: usize) -> Result<Svd> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: Array2::zeros((rows, 0)),
            s: vec![],
            v: Array2::zeros((cols, 0)),
        });
    }
    let m = MatRef::from_row_major_slice(a, rows, cols);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Linalg(format!("svd did not converge: {e:?}")))?;
    let fu = svd.U();
    let fv = svd.V();
    let fs = svd.S();
    let mut u = Array2::from_shape_fn((rows, k), |(i, j)| fu[(i, j)]);
    let mut v = Array2::from_shape_fn((cols, k), |(i, j)| fv[(i, j)]);
    let s: Vec<f64> = (0..k).map(|j| fs[j].re).collect();
    for j in 0..k {
        let mut best = 0usize;
        let mut bm = -1.0;
        for i in 0..rows {
            let n = u[[i, j]].norm_sqr();
            if n > bm * (1.0 + 1e-12) {
                bm = n;
                best = i;
            }
        }
        let z = u[[best, j]];
        let nz = z.norm();
        if nz > 0.0 {
            let ph = z.conj() / nz;
            u.column_mut(j).mapv_inplace(|x| x * ph);
            v.column_mut(j).mapv_inplace(|x| x * ph);
        }
    }
    Ok(Svd { u, s, v })
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[[i, j]]);
    m.self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e:?}")))
}

/// Shape helper: sizes before, at and after `leg`.
#[inline]
pub fn split_dims(dims: &[usize], leg: usize) -> (usize, usize, usize) {
    let pre: usize = dims[..leg].iter().product();
    let post: usize = dims[leg + 1..].iter().product();
    (pre, dims[leg], post)
}

/// `out[.., i, ..] = sum_j m[i, j] x[.., j, ..]` on the given leg, with `m`
/// row-major `d_out x d_in`. Returns the new data; dims change only on `leg`.
pub fn mode_product(x: &[C64], dims: &[usize], leg: usize, m: &[C64], d_out: usize) -> Vec<C64> {
    let (pre, d, post) = split_dims(dims, leg);
    debug_assert_eq!(m.len(), d_out * d);
    let mut out = vec![ZERO; pre * d_out * post];
    mode_product_into(&mut out, x, dims, leg, m, d_out, ONE, false);
    out
}

/// Accumulating variant of [`mode_product`] with a scalar prefactor.
#[allow(clippy::too_many_arguments)]
pub fn mode_product_into(
    out: &mut [C64],
    x: &[C64],
    dims: &[usize],
    leg: usize,
    m: &[C64],
    d_out: usize,
    alpha: C64,
    accumulate: bool,
) {
    let (pre, d, post) = split_dims(dims, leg);
    if post == 1 {
        gemm(out, x, (pre, d), Op::N, m, (d_out, d), Op::T, alpha, accumulate);
    } else {
        for p in 0..pre {
            let xs = &x[p * d * post..(p + 1) * d * post];
            let os = &mut out[p * d_out * post..(p + 1) * d_out * post];
            gemm(os, m, (d_out, d), Op::N, xs, (d, post), Op::N, alpha, accumulate);
        }
    }
}

/// Move `leg` to the front: returns row-major `d x (pre*post)` data.
pub fn leg_to_front(x: &[C64], dims: &[usize], leg: usize) -> Vec<C64> {
    let (pre, d, post) = split_dims(dims, leg);
    if pre == 1 {
        return x.to_vec();
    }
    let mut out = vec![ZERO; x.len()];
    for p in 0..pre {
        for j in 0..d {
            let src = &x[(p * d + j) * post..(p * d + j + 1) * post];
            let dst = &mut out[j * pre * post + p * post..j * pre * post + (p + 1) * post];
            dst.copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`leg_to_front`].
pub fn leg_from_front(x: &[C64], dims: &[usize], leg: usize) -> Vec<C64> {
    let (pre, d, post) = split_dims(dims, leg);
    if pre == 1 {
        return x.to_vec();
    }
    let mut out = vec![ZERO; x.len()];
    for p in 0..pre {
        for j in 0..d {
            let src = &x[j * pre * post + p * post..j * pre * post + (p + 1) * post];
            out[(p * d + j) * post..(p * d + j + 1) * post].copy_from_slice(src);
        }
    }
    out
}

/// `E[a', a] = sum_rest conj(t[.., a', ..]) y[.., a, ..]` over every leg but `leg`.
pub fn env_contract(t: &[C64], y: &[C64], dims: &[usize], leg: usize) -> Array2<C64> {
    let (pre, d, post) = split_dims(dims, leg);
    let mut out = vec![ZERO; d * d];
    if post == 1 {
        // t, y are (pre x d): E = t^H y
        gemm(&mut out, t, (pre, d), Op::H, y, (pre, d), Op::N, ONE, false);
        return Array2::from_shape_vec((d, d), out).unwrap();
    }
    let r = pre * post;
    if pre == 1 {
        gemm(&mut out, y, (d, r), Op::N, t, (d, r), Op::H, ONE, false);
    } else {
        let tf = leg_to_front(t, dims, leg);
        let yf = leg_to_front(y, dims, leg);
        gemm(&mut out, &yf, (d, r), Op::N, &tf, (d, r), Op::H, ONE, false);
    }
    // out[a, a'] = sum y[a, x] conj(t[a', x])
    let e = Array2::from_shape_vec((d, d), out).unwrap();
    e.t().as_standard_layout().into_owned()
}

/// Frobenius norm.
pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rnd(n: usize, seed: u64) -> Vec<C64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect()
    }

    fn naive_env(t: &[C64], y: &[C64], dims: &[usize], leg: usize) -> Array2<C64> {
        let (pre, d, post) = split_dims(dims, leg);
        let mut e = Array2::zeros((d, d));
        for a1 in 0..d {
            for a in 0..d {
                let mut s = ZERO;
                for p in 0..pre {
                    for q in 0..post {
                        s += t[(p * d + a1) * post + q].conj() * y[(p * d + a) * post + q];
                    }
                }
                e[[a1, a]] = s;
            }
        }
        e
    }

    #[test]
    fn env_contract_all_legs() {
        let dims = [3, 4, 5];
        let t = rnd(60, 1);
        let y = rnd(60, 2);
        for leg in 0..3 {
            let e = env_contract(&t, &y, &dims, leg);
            let n = naive_env(&t, &y, &dims, leg);
            for (a, b) in e.iter().zip(n.iter()) {
                assert!((a - b).norm() < 1e-12, "leg {leg}");
            }
        }
    }

    #[test]
    fn mode_product_matches_loops() {
        let dims = [2, 3, 4];
        let x = rnd(24, 3);
        for leg in 0..3 {
            let d = dims[leg];
            let m = rnd(5 * d, 4);
            let out = mode_product(&x, &dims, leg, &m, 5);
            let (pre, _, post) = split_dims(&dims, leg);
            for p in 0..pre {
                for i in 0..5 {
                    for q in 0..post {
                        let mut s = ZERO;
                        for j in 0..d {
                            s += m[i * d + j] * x[(p * d + j) * post + q];
                        }
                        assert!((out[(p * 5 + i) * post + q] - s).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn leg_permutation_roundtrip() {
        let dims = [3, 2, 4];
        let x = rnd(24, 5);
        for leg in 0..3 {
            let f = leg_to_front(&x, &dims, leg);
            assert_eq!(leg_from_front(&f, &dims, leg), x);
        }
    }

    #[test]
    fn svd_reconstructs_and_fixes_phase() {
        let (m, n) = (6, 4);
        let a = rnd(m * n, 6);
        let svd = svd_thin(&a, m, n).unwrap();
        for j in 0..n {
            let col = svd.u.column(j);
            let big = col.iter().fold(ZERO, |acc, z| if z.norm() > acc.norm() + 1e-14 { *z } else { acc });
            assert!(big.im.abs() < 1e-12 && big.re > 0.0);
        }
        for i in 0..m {
            for k in 0..n {
                let mut s = ZERO;
                for j in 0..n {
                    s += svd.u[[i, j]] * svd.s[j] * svd.v[[k, j]].conj();
                }
                assert!((s - a[i * n + k]).norm() < 1e-12);
            }
        }
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn gemm_transpose_variants() {
        let a = rnd(6, 7);
        let b = rnd(6, 8);
        let mut c = vec![ZERO; 4];
        gemm(&mut c, &a, (3, 2), Op::H, &b, (3, 2), Op::N, ONE, false);
        for i in 0..2 {
            for j in 0..2 {
                let mut s = ZERO;
                for k in 0..3 {
                    s += a[k * 2 + i].conj() * b[k * 2 + j];
                }
                assert!((c[i * 2 + j] - s).norm() < 1e-12);
            }
        }
    }
}
