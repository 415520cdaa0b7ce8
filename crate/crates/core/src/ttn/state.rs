use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;

use super::{Leg, TreeTopology};
use crate::error::{Error, Result};
use crate::linalg::{gemm, mode_product, svd_thin, Op, ONE, ZERO};

/// Default guard on dense EDO sizes.
pub const DENSE_GUARD: usize = 10_000_000;

/// Root tensor plus semi-unitary cores. `tensors[0]` is `A(i, j, a_1)`,
/// `tensors[s]` is `U(a_s, ·, ·)`, all row-major.
#[derive(Clone, Debug)]
pub struct TtnState {
    pub topo: Arc<TreeTopology>,
    pub ranks: Vec<usize>,
    pub tensors: Vec<Vec<C64>>,
    pub time: f64,
}

fn check_density(rho0: &Array2<C64>, m: usize) -> Result<()> {
    if rho0.dim() != (m, m) {
        return Err(Error::Invalid(format!("rho0 must be {m}x{m}")));
    }
    let tr: C64 = (0..m).map(|i| rho0[[i, i]]).sum();
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::Invalid(format!("rho0 has trace {tr}")));
    }
    for i in 0..m {
        for j in 0..m {
            if (rho0[[i, j]] - rho0[[j, i]].conj()).norm() > 1e-10 {
                return Err(Error::Invalid("rho0 is not Hermitian".into()));
            }
        }
    }
    Ok(())
}

/// Page `a` of the anti-diagonal fill: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), …
fn fill_index(a: usize, d1: usize, d2: usize) -> (usize, usize) {
    let mut count = 0;
    for diag in 0..d1 + d2 - 1 {
        let hi = diag.min(d1 - 1);
        let lo = diag.saturating_sub(d2 - 1);
        for b in (lo..=hi).rev() {
            if count == a {
                return (b, diag - b);
            }
            count += 1;
        }
    }
    unreachable!("page index beyond capacity")
}

impl TtnState {
    /// Ω(0) = ρ₀ ⊗ |0…0⟩ with semi-unitary cores filled page by page.
    pub fn init(topo: Arc<TreeTopology>, rho0: &Array2<C64>, ranks: &[usize]) -> Result<Self> {
        check_density(rho0, topo.dim)?;
        topo.validate_ranks(ranks)?;
        let mut tensors = Vec::with_capacity(topo.len());
        let d0 = topo.dims(0, ranks);
        let mut a = vec![ZERO; d0.iter().product()];
        for i in 0..topo.dim {
            for j in 0..topo.dim {
                a[(i * topo.dim + j) * d0[2]] = rho0[[i, j]];
            }
        }
        tensors.push(a);
        for s in 1..topo.len() {
            let [r, d1, d2] = topo.dims(s, ranks);
            let mut u = vec![ZERO; r * d1 * d2];
            for p in 0..r {
                let (b, c) = fill_index(p, d1, d2);
                u[(p * d1 + b) * d2 + c] = ONE;
            }
            tensors.push(u);
        }
        Ok(Self { topo, ranks: ranks.to_vec(), tensors, time: 0.0 })
    }

    /// Random state with exactly semi-unitary cores (testing utility).
    pub fn random<R: Rng>(topo: Arc<TreeTopology>, ranks: &[usize], rng: &mut R) -> Result<Self> {
        topo.validate_ranks(ranks)?;
        let mut gauss = || C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let mut tensors = Vec::with_capacity(topo.len());
        let d0 = topo.dims(0, ranks);
        tensors.push((0..d0.iter().product::<usize>()).map(|_| gauss()).collect());
        for s in 1..topo.len() {
            let [r, d1, d2] = topo.dims(s, ranks);
            let g: Vec<C64> = (0..r * d1 * d2).map(|_| gauss()).collect();
            let svd = svd_thin(&g, r, d1 * d2)?;
            // rows of V^H are orthonormal
            let mut u = vec![ZERO; r * d1 * d2];
            for a in 0..r {
                for x in 0..d1 * d2 {
                    u[a * d1 * d2 + x] = svd.v[[x, a]].conj();
                }
            }
            tensors.push(u);
        }
        Ok(Self { topo, ranks: ranks.to_vec(), tensors, time: 0.0 })
    }

    pub fn dims(&self, s: usize) -> [usize; 3] {
        self.topo.dims(s, &self.ranks)
    }

    pub fn size(&self) -> usize {
        self.topo.size_of(&self.ranks)
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.iter().skip(1).copied().max().unwrap_or(1)
    }

    fn open_vector(&self, leg: Leg, tvec: &[Vec<C64>]) -> Vec<C64> {
        match leg {
            Leg::Bond(c) => tvec[c].clone(),
            Leg::Bex(k) => {
                let mut v = vec![ZERO; self.topo.depths[k]];
                v[0] = ONE;
                v
            }
            Leg::Dummy => vec![ONE],
            Leg::Ket | Leg::Bra => unreachable!(),
        }
    }

    /// ρ_S from the zero-bexciton projections, leaves to root.
    pub fn extract_rho(&self) -> Array2<C64> {
        let n = self.topo.len();
        let mut tvec: Vec<Vec<C64>> = vec![vec![]; n];
        for s in (1..n).rev() {
            let [r, d1, d2] = self.dims(s);
            let v1 = self.open_vector(self.topo.nodes[s].legs[1], &tvec);
            let v2 = self.open_vector(self.topo.nodes[s].legs[2], &tvec);
            let u = &self.tensors[s];
            let mut t = vec![ZERO; r];
            for a in 0..r {
                let mut acc = ZERO;
                for b in 0..d1 {
                    if v1[b] == ZERO {
                        continue;
                    }
                    let row = &u[(a * d1 + b) * d2..(a * d1 + b + 1) * d2];
                    let inner: C64 = row.iter().zip(&v2).map(|(x, y)| x * y).sum();
                    acc += v1[b] * inner;
                }
                t[a] = acc;
            }
            tvec[s] = t;
        }
        let m = self.topo.dim;
        let d0 = self.dims(0);
        let t1 = self.open_vector(self.topo.nodes[0].legs[2], &tvec);
        let a = &self.tensors[0];
        Array2::from_shape_fn((m, m), |(i, j)| {
            let base = (i * m + j) * d0[2];
            (0..d0[2]).map(|x| a[base + x] * t1[x]).sum()
        })
    }

    /// Max |U U† − 1| per core (entry 0 is the root and always 0).
    pub fn check_semiunitary(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for s in 1..self.topo.len() {
            let [r, d1, d2] = self.dims(s);
            let mut g = vec![ZERO; r * r];
            gemm(&mut g, &self.tensors[s], (r, d1 * d2), Op::N, &self.tensors[s], (r, d1 * d2), Op::H, ONE, false);
            let mut dev: f64 = 0.0;
            for a in 0..r {
                for b in 0..r {
                    let e = if a == b { ONE } else { ZERO };
                    dev = dev.max((g[a * r + b] - e).norm());
                }
            }
            out.push(dev);
        }
        out
    }

    /// Subtree contraction: (data [R_s × Π open], bexciton order).
    fn contract_below(&self, leg: Leg) -> (Vec<C64>, usize, Vec<usize>) {
        match leg {
            Leg::Bex(k) => {
                let n = self.topo.depths[k];
                let mut id = vec![ZERO; n * n];
                for i in 0..n {
                    id[i * n + i] = ONE;
                }
                (id, n, vec![k])
            }
            Leg::Dummy => (vec![ONE], 1, vec![]),
            Leg::Bond(c) => {
                let [r, d1, d2] = self.dims(c);
                let (c1, x1, o1) = self.contract_below(self.topo.nodes[c].legs[1]);
                let (c2, x2, o2) = self.contract_below(self.topo.nodes[c].legs[2]);
                // tmp[a, β, x2] = Σ_γ U[a, β, γ] c2[γ, x2]
                let mut tmp = vec![ZERO; r * d1 * x2];
                gemm(&mut tmp, &self.tensors[c], (r * d1, d2), Op::N, &c2, (d2, x2), Op::N, ONE, false);
                // out[a, x1, x2] = Σ_β c1[β, x1] tmp[a, β, x2]
                let c1t: Vec<C64> = (0..x1 * d1).map(|i| c1[(i % d1) * x1 + i / d1]).collect();
                let out = mode_product(&tmp, &[r, d1, x2], 1, &c1t, x1);
                let mut order = o1;
                order.extend(o2);
                (out, x1 * x2, order)
            }
            Leg::Ket | Leg::Bra => unreachable!(),
        }
    }

    /// Explicit Ω[i, j, n_1, …, n_K] (row-major, bexcitons in index order).
    pub fn dense_edo(&self, guard: usize) -> Result<Vec<C64>> {
        let m = self.topo.dim;
        let total = self.topo.depths.iter().fold(m * m, |a, &n| a.saturating_mul(n));
        if total > guard {
            return Err(Error::Guard { size: total, guard });
        }
        let r1 = self.dims(0)[2];
        let (c, x, order) = self.contract_below(self.topo.nodes[0].legs[2]);
        let mut omega = vec![ZERO; m * m * x];
        gemm(&mut omega, &self.tensors[0], (m * m, r1), Op::N, &c, (r1, x), Op::N, ONE, false);
        // permute bexciton axes into index order
        let mut dims = vec![m * m];
        dims.extend(order.iter().map(|&k| self.topo.depths[k]));
        let mut perm = vec![0];
        let mut pos: Vec<usize> = (0..order.len()).collect();
        pos.sort_by_key(|&i| order[i]);
        perm.extend(pos.iter().map(|&i| i + 1));
        Ok(permute(&omega, &dims, &perm))
    }

    /// Hierarchical SVD of a dense EDO onto this state's topology and ranks.
    pub fn from_dense(topo: Arc<TreeTopology>, omega: &[C64], ranks: &[usize]) -> Result<Self> {
        topo.validate_ranks(ranks)?;
        let m = topo.dim;
        let k = topo.k();
        let mut full_dims = vec![m * m];
        full_dims.extend(topo.depths.iter().copied());
        if omega.len() != full_dims.iter().product::<usize>() {
            return Err(Error::Invalid("dense EDO has the wrong size".into()));
        }
        let n = topo.len();
        // subtree bexciton lists in contraction order
        fn open_list(t: &TreeTopology, leg: Leg) -> Vec<usize> {
            match leg {
                Leg::Bex(k) => vec![k],
                Leg::Bond(c) => {
                    let mut v = open_list(t, t.nodes[c].legs[1]);
                    v.extend(open_list(t, t.nodes[c].legs[2]));
                    v
                }
                _ => vec![],
            }
        }
        // basis W_s[x_sub, a] for every bond
        let mut basis: Vec<Array2<C64>> = vec![Array2::zeros((0, 0)); n];
        for s in 1..n {
            let sub = open_list(&topo, Leg::Bond(s));
            let rest: Vec<usize> = (0..k).filter(|b| !sub.contains(b)).collect();
            let mut perm: Vec<usize> = sub.iter().map(|&b| b + 1).collect();
            perm.push(0);
            perm.extend(rest.iter().map(|&b| b + 1));
            let rows: usize = sub.iter().map(|&b| topo.depths[b]).product();
            let cols = omega.len() / rows;
            let mat = permute(omega, &full_dims, &perm);
            let svd = svd_thin(&mat, rows, cols)?;
            let r = ranks[s];
            basis[s] = svd.u.slice(ndarray::s![.., ..r]).to_owned();
        }
        let child_basis = |leg: Leg| -> Array2<C64> {
            match leg {
                Leg::Bond(c) => basis[c].clone(),
                Leg::Bex(b) => Array2::from_shape_fn((topo.depths[b], topo.depths[b]), |(i, j)| if i == j { ONE } else { ZERO }),
                _ => Array2::from_elem((1, 1), ONE),
            }
        };
        let mut tensors = vec![vec![]; n];
        for s in 1..n {
            let b1 = child_basis(topo.nodes[s].legs[1]);
            let b2 = child_basis(topo.nodes[s].legs[2]);
            let w = &basis[s];
            let (x1, d1) = b1.dim();
            let (x2, d2) = b2.dim();
            let r = ranks[s];
            let mut u = vec![ZERO; r * d1 * d2];
            for a in 0..r {
                for p in 0..d1 {
                    for q in 0..d2 {
                        let mut acc = ZERO;
                        for i in 0..x1 {
                            for j in 0..x2 {
                                acc += b1[[i, p]].conj() * b2[[j, q]].conj() * w[[i * x2 + j, a]];
                            }
                        }
                        u[(a * d1 + p) * d2 + q] = acc;
                    }
                }
            }
            tensors[s] = u;
        }
        // root: A[ij, a] = Σ_x Ω[ij, x] conj(W_1[x, a]) with x in the subtree order of bond 1
        let b = child_basis(topo.nodes[0].legs[2]);
        let order = open_list(&topo, topo.nodes[0].legs[2]);
        let mut perm = vec![0];
        perm.extend(order.iter().map(|&q| q + 1));
        let om = permute(omega, &full_dims, &perm);
        let (x, r1) = b.dim();
        let bc: Vec<C64> = b.iter().map(|z| z.conj()).collect();
        let mut a = vec![ZERO; m * m * r1];
        gemm(&mut a, &om, (m * m, x), Op::N, &bc, (x, r1), Op::N, ONE, false);
        tensors[0] = a;
        Ok(Self { topo, ranks: ranks.to_vec(), tensors, time: 0.0 })
    }
}

/// General axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute(x: &[C64], dims: &[usize], perm: &[usize]) -> Vec<C64> {
    let nd = dims.len();
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return x.to_vec();
    }
    let mut in_strides = vec![1; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * dims[i + 1];
    }
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..x.len() {
        out.push(x[off]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            off -= strides[ax] * out_dims[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plus_state() -> Array2<C64> {
        Array2::from_elem((2, 2), C64::new(0.5, 0.0))
    }

    #[test]
    fn fill_order() {
        let pages: Vec<_> = (0..6).map(|a| fill_index(a, 3, 3)).collect();
        assert_eq!(pages, vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
        assert_eq!(fill_index(2, 4, 1), (2, 0));
    }

    #[test]
    fn init_extracts_rho0() {
        for topo in [TreeTopology::train(2, &[3; 5]).unwrap(), TreeTopology::balanced(2, &[3; 5]).unwrap(), TreeTopology::balanced(2, &[4]).unwrap()] {
            let topo = Arc::new(topo);
            let ranks = topo.uniform_ranks(3);
            let st = TtnState::init(topo.clone(), &plus_state(), &ranks).unwrap();
            let rho = st.extract_rho();
            assert!(rho.iter().zip(plus_state().iter()).all(|(a, b)| (a - b).norm() < 1e-15));
            assert!(st.check_semiunitary().iter().all(|&d| d == 0.0));
            let om = st.dense_edo(DENSE_GUARD).unwrap();
            assert_eq!(om.iter().filter(|z| z.norm() > 0.0).count(), 4);
        }
    }

    #[test]
    fn page_four_is_e11() {
        let topo = Arc::new(TreeTopology::balanced(2, &[3; 4]).unwrap());
        let st = TtnState::init(topo.clone(), &plus_state(), &topo.uniform_ranks(5)).unwrap();
        let u = &st.tensors[2];
        let page: Vec<C64> = u[4 * 9..5 * 9].to_vec();
        for (i, z) in page.iter().enumerate() {
            assert_eq!(*z, if i == 4 { ONE } else { ZERO });
        }
    }

    #[test]
    fn bad_inputs() {
        let topo = Arc::new(TreeTopology::train(2, &[3; 3]).unwrap());
        let rho = Array2::from_elem((2, 2), C64::new(0.3, 0.0));
        assert!(TtnState::init(topo.clone(), &rho, &topo.uniform_ranks(2)).is_err());
        assert!(TtnState::init(topo.clone(), &plus_state(), &[0, 9, 9]).is_err());
        let big = Arc::new(TreeTopology::train(2, &[20; 8]).unwrap());
        let st = TtnState::init(big.clone(), &plus_state(), &big.uniform_ranks(2)).unwrap();
        assert!(matches!(st.dense_edo(DENSE_GUARD), Err(Error::Guard { .. })));
    }

    #[test]
    fn dense_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for topo in [TreeTopology::balanced(2, &[3, 2, 3, 2]).unwrap(), TreeTopology::train(2, &[2, 3, 2]).unwrap(), TreeTopology::balanced(3, &[3]).unwrap()] {
            let topo = Arc::new(topo);
            let ranks = topo.full_ranks();
            let st = TtnState::random(topo.clone(), &ranks, &mut rng).unwrap();
            assert!(st.check_semiunitary().iter().all(|&d| d < 1e-12));
            let om = st.dense_edo(DENSE_GUARD).unwrap();
            let back = TtnState::from_dense(topo.clone(), &om, &ranks).unwrap();
            let om2 = back.dense_edo(DENSE_GUARD).unwrap();
            let err = om.iter().zip(&om2).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
            // reduced density from the tree matches the dense zero slice
            let rho = st.extract_rho();
            let stride = om.len() / (topo.dim * topo.dim);
            for i in 0..topo.dim {
                for j in 0..topo.dim {
                    assert!((rho[[i, j]] - om[(i * topo.dim + j) * stride]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn low_rank_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let topo = Arc::new(TreeTopology::balanced(2, &[3; 4]).unwrap());
        let ranks = topo.uniform_ranks(2);
        let st = TtnState::random(topo.clone(), &ranks, &mut rng).unwrap();
        let om = st.dense_edo(DENSE_GUARD).unwrap();
        let back = TtnState::from_dense(topo, &om, &ranks).unwrap();
        let om2 = back.dense_edo(DENSE_GUARD).unwrap();
        let err = om.iter().zip(&om2).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn permute_matches_loops() {
        let dims = [2, 3, 4];
        let x: Vec<C64> = (0..24).map(|i| C64::new(i as f64, 0.0)).collect();
        let y = permute(&x, &dims, &[2, 0, 1]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y[(c * 2 + a) * 3 + b], x[(a * 3 + b) * 4 + c]);
                }
            }
        }
    }
}
