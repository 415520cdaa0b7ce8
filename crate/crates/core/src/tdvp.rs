//! Environments and right-hand sides of the tree TDVP equations.
//!
//! The generator is grouped by system channel σ (identity, or one matrix on
//! the ket or bra index). For every bond `b` we keep
//!
//! * a down environment `DB(b, σ)`: the bexciton part of all channel-σ terms
//!   whose factor lives below `b`, projected onto the bond basis;
//! * an up environment: `S(b)`, all terms acting only above `b`, and
//!   `UP(b, σ)`, the channel-σ system factor seen through the tensors above.
//!
//! Environment matrices are `E[a', a] = ⟨a'|·|a⟩` and act on a bond index by
//! left multiplication.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::Result;
use crate::generator::{Channel, FrozenGenerator};
use crate::linalg::{env_contract, gemm, mode_product, mode_product_into, svd_thin, Op, ONE, ZERO};
use crate::ttn::state::{permute, DENSE_GUARD};
use crate::ttn::{Leg, TreeTopology, TtnState};

pub type Mat = Array2<C64>;

/// Per-channel operators on one leg; `None` means zero.
pub type LegEnv = Vec<Option<Mat>>;

#[derive(Clone, Debug)]
pub struct UpEnv {
    pub s: Mat,
    /// Entry 0 (identity channel) is unused: it is always the identity.
    pub ch: Vec<Option<Mat>>,
}

/// What sits above the tensor being acted on.
#[derive(Clone, Copy)]
pub enum Above<'a> {
    /// Legs 0 and 1 are the system ket and bra indices.
    Root,
    /// Leg 0 is a bond with this environment.
    Bond(&'a UpEnv),
}

fn mat_slice(m: &Mat) -> &[C64] {
    m.as_slice().expect("standard layout")
}

/// Environment of an open or dummy leg.
pub fn open_leg_env(g: &FrozenGenerator, leg: Leg) -> LegEnv {
    let mut env = vec![None; g.channels.len()];
    if let Leg::Bex(k) = leg {
        for (ch, m) in &g.bex_ops[k] {
            env[*ch] = Some(m.clone());
        }
    }
    env
}

/// Apply the channel-σ system factor at the top of `x`.
fn apply_above_channel(g: &FrozenGenerator, x: &[C64], dims: &[usize], above: Above, ch: usize) -> Option<Vec<C64>> {
    match above {
        Above::Root => match &g.channels[ch] {
            Channel::Identity => Some(x.to_vec()),
            Channel::Ket(m) => Some(mode_product(x, dims, 0, mat_slice(m), dims[0])),
            Channel::Bra(m) => Some(mode_product(x, dims, 1, mat_slice(m), dims[1])),
        },
        Above::Bond(up) => {
            if ch == 0 {
                Some(x.to_vec())
            } else {
                up.ch[ch].as_ref().map(|m| mode_product(x, dims, 0, mat_slice(m), dims[0]))
            }
        }
    }
}

fn add_into(out: &mut [C64], y: &[C64]) {
    for (o, v) in out.iter_mut().zip(y) {
        *o += v;
    }
}

/// `Σ_{below legs d} env_d[σ]` applied on `x`, or `None` when all are zero.
fn below_channel(x: &[C64], dims: &[usize], below: &[(usize, &LegEnv)], ch: usize) -> Option<Vec<C64>> {
    let mut z: Option<Vec<C64>> = None;
    for (leg, env) in below {
        if let Some(m) = &env[ch] {
            let d = dims[*leg];
            match z.as_mut() {
                None => z = Some(mode_product(x, dims, *leg, mat_slice(m), d)),
                Some(acc) => mode_product_into(acc, x, dims, *leg, mat_slice(m), d, ONE, true),
            }
        }
    }
    z
}

/// Effective generator on a center tensor: terms above, plus every channel
/// pairing the above factor with the bexciton parts on the listed legs.
pub fn apply_eff(g: &FrozenGenerator, x: &[C64], dims: &[usize], above: Above, below: &[(usize, &LegEnv)]) -> Vec<C64> {
    let mut out = vec![ZERO; x.len()];
    match above {
        Above::Root => {
            for (ch, &c) in g.sys_coeff.iter().enumerate() {
                if c == ZERO {
                    continue;
                }
                let y = apply_above_channel(g, x, dims, above, ch).unwrap();
                for (o, v) in out.iter_mut().zip(&y) {
                    *o += c * v;
                }
            }
        }
        Above::Bond(up) => mode_product_into(&mut out, x, dims, 0, mat_slice(&up.s), dims[0], ONE, true),
    }
    for ch in 0..g.channels.len() {
        if !g.active[ch] {
            continue;
        }
        if let Some(z) = below_channel(x, dims, below, ch) {
            if let Some(y) = apply_above_channel(g, &z, dims, above, ch) {
                add_into(&mut out, &y);
            }
        }
    }
    out
}

/// Down environment of bond `s` from its core and its two child-leg envs.
/// Also returns the per-channel `Z_σ = Σ_d env_d[σ]·U` used by the direct RHS.
pub fn down_env(g: &FrozenGenerator, u: &[C64], dims: &[usize; 3], e1: &LegEnv, e2: &LegEnv) -> (LegEnv, Vec<Option<Vec<C64>>>) {
    let nc = g.channels.len();
    let mut env = vec![None; nc];
    let mut zs = vec![None; nc];
    let below = [(1usize, e1), (2usize, e2)];
    for ch in 0..nc {
        if let Some(z) = below_channel(u, dims, &below, ch) {
            env[ch] = Some(env_contract(u, &z, dims, 0));
            zs[ch] = Some(z);
        }
    }
    (env, zs)
}

/// Up environment of the bond at `slot` of tensor `t`, given what lies above
/// `t` and the env of its other below leg (if any).
pub fn up_env(g: &FrozenGenerator, t: &[C64], dims: &[usize], above: Above, slot: usize, sibling: Option<(usize, &LegEnv)>) -> UpEnv {
    let below: Vec<(usize, &LegEnv)> = sibling.into_iter().collect();
    let y = apply_eff(g, t, dims, above, &below);
    let s = env_contract(t, &y, dims, slot);
    let mut ch = vec![None; g.channels.len()];
    for (c, slot_env) in ch.iter_mut().enumerate().skip(1) {
        if !g.active[c] {
            continue;
        }
        if let Some(y) = apply_above_channel(g, t, dims, above, c) {
            *slot_env = Some(env_contract(t, &y, dims, slot));
        }
    }
    UpEnv { s, ch }
}

/// `dM = S·M + Σ_σ UP_σ · M · DB_σᵀ` for a bond matrix `M[above, below]`.
pub fn apply_bond(g: &FrozenGenerator, m: &[C64], r_up: usize, r_down: usize, up: &UpEnv, down: &LegEnv) -> Vec<C64> {
    let mut out = vec![ZERO; m.len()];
    gemm(&mut out, mat_slice(&up.s), (r_up, r_up), Op::N, m, (r_up, r_down), Op::N, ONE, false);
    let mut tmp = vec![ZERO; m.len()];
    for ch in 0..g.channels.len() {
        let Some(db) = &down[ch] else { continue };
        gemm(&mut tmp, m, (r_up, r_down), Op::N, mat_slice(db), (r_down, r_down), Op::T, ONE, false);
        if ch == 0 {
            add_into(&mut out, &tmp);
        } else if let Some(upm) = &up.ch[ch] {
            gemm(&mut out, mat_slice(upm), (r_up, r_up), Op::N, &tmp, (r_up, r_down), Op::N, ONE, true);
        }
    }
    out
}

/// Layout of all cores packed into one vector.
#[derive(Clone, Debug)]
pub struct Packing {
    pub dims: Vec<[usize; 3]>,
    pub offsets: Vec<usize>,
    pub len: usize,
}

impl Packing {
    pub fn new(topo: &TreeTopology, ranks: &[usize]) -> Self {
        let mut dims = Vec::with_capacity(topo.len());
        let mut offsets = Vec::with_capacity(topo.len());
        let mut len = 0;
        for s in 0..topo.len() {
            let d = topo.dims(s, ranks);
            offsets.push(len);
            len += d.iter().product::<usize>();
            dims.push(d);
        }
        Self { dims, offsets, len }
    }

    pub fn slice<'a>(&self, y: &'a [C64], s: usize) -> &'a [C64] {
        let n: usize = self.dims[s].iter().product();
        &y[self.offsets[s]..self.offsets[s] + n]
    }

    pub fn pack(&self, tensors: &[Vec<C64>]) -> Vec<C64> {
        let mut y = Vec::with_capacity(self.len);
        for t in tensors {
            y.extend_from_slice(t);
        }
        y
    }

    pub fn unpack(&self, y: &[C64]) -> Vec<Vec<C64>> {
        (0..self.dims.len()).map(|s| self.slice(y, s).to_vec()).collect()
    }
}

/// Per node, the per-channel `Z_σ` products returned by [`down_env`].
pub type DownCache = Vec<Vec<Option<Vec<C64>>>>;

/// All down environments at once, leaves to root. Entry 0 is unused.
pub fn all_down_envs(g: &FrozenGenerator, topo: &TreeTopology, pk: &Packing, y: &[C64]) -> (Vec<LegEnv>, DownCache) {
    let n = topo.len();
    let mut envs: Vec<LegEnv> = vec![vec![]; n];
    let mut zs = vec![vec![]; n];
    for s in (1..n).rev() {
        let legs = topo.nodes[s].legs;
        let e1 = leg_env(g, legs[1], &envs);
        let e2 = leg_env(g, legs[2], &envs);
        let (e, z) = down_env(g, pk.slice(y, s), &pk.dims[s], &e1, &e2);
        envs[s] = e;
        zs[s] = z;
    }
    (envs, zs)
}

fn leg_env(g: &FrozenGenerator, leg: Leg, envs: &[LegEnv]) -> LegEnv {
    match leg {
        Leg::Bond(c) => envs[c].clone(),
        other => open_leg_env(g, other),
    }
}

/// Dense image of a tangent vector: Σ_s Ω(T_0, …, dT_s, …).
pub fn tangent_dense(st: &TtnState, d: &[Vec<C64>]) -> Result<Vec<C64>> {
    let mut acc: Option<Vec<C64>> = None;
    for s in 0..st.tensors.len() {
        let mut t = st.clone();
        t.tensors[s] = d[s].clone();
        let om = t.dense_edo(DENSE_GUARD)?;
        match acc.as_mut() {
            None => acc = Some(om),
            Some(a) => add_into(a, &om),
        }
    }
    Ok(acc.unwrap_or_default())
}

/// Direct-integration right-hand side: root equation plus the regularized
/// equations of every semi-unitary core, `ε` flooring the singular values of
/// the single-hole coefficient matrices.
pub fn direct_rhs(g: &FrozenGenerator, topo: &TreeTopology, pk: &Packing, y: &[C64], dy: &mut [C64], eps: f64) -> Result<()> {
    let n = topo.len();
    let nc = g.channels.len();
    let (envs, zs) = all_down_envs(g, topo, pk, y);

    // root
    let a = pk.slice(y, 0);
    let d0 = pk.dims[0];
    let root_leg = topo.nodes[0].legs[2];
    let e_root = leg_env(g, root_leg, &envs);
    let da = apply_eff(g, a, &d0, Above::Root, &[(2, &e_root)]);
    dy[pk.offsets[0]..pk.offsets[0] + da.len()].copy_from_slice(&da);
    if n == 1 {
        return Ok(());
    }

    // node 1: single-hole matrix is the root itself, (M²) × R_1
    struct Chain {
        sigma: Vec<f64>,
        v: Mat,
        dbar: Vec<Option<Vec<C64>>>,
    }
    let mut chains: Vec<Option<Chain>> = (0..n).map(|_| None).collect();
    {
        let m2 = d0[0] * d0[1];
        let r1 = d0[2];
        let svd = svd_thin(a, m2, r1)?;
        let k = svd.s.len();
        let mut dbar = vec![None; nc];
        dbar[0] = Some(sigma_vh(&svd.s, &svd.v));
        for ch in 1..nc {
            if !g.active[ch] {
                continue;
            }
            let sa = apply_above_channel(g, a, &d0, Above::Root, ch).unwrap();
            let mut w = vec![ZERO; k * r1];
            gemm(&mut w, mat_slice(&svd.u.as_standard_layout().to_owned()), (m2, k), Op::H, &sa, (m2, r1), Op::N, ONE, false);
            dbar[ch] = Some(w);
        }
        chains[1] = Some(Chain { sigma: svd.s, v: svd.v, dbar });
    }

    for s in 1..n {
        let chain = chains[s].take().expect("parent processed first");
        let dims = pk.dims[s];
        let [r, d1, d2] = dims;
        let x = d1 * d2;
        let u = pk.slice(y, s);
        let k = chain.sigma.len();
        // Σ_σ D̄_σ (1 − P) Z_σ
        let mut acc = vec![ZERO; k * x];
        let mut xt = vec![ZERO; r * x];
        for ch in 0..nc {
            let (Some(z), Some(db), Some(dbar)) = (&zs[s][ch], &envs[s][ch], &chain.dbar[ch]) else { continue };
            xt.copy_from_slice(z);
            gemm(&mut xt, mat_slice(db), (r, r), Op::T, u, (r, x), Op::N, -ONE, true);
            gemm(&mut acc, dbar, (k, r), Op::N, &xt, (r, x), Op::N, ONE, true);
        }
        for (i, sg) in chain.sigma.iter().enumerate() {
            let inv = 1.0 / sg.max(eps);
            for v in &mut acc[i * x..(i + 1) * x] {
                *v *= inv;
            }
        }
        let vs = chain.v.as_standard_layout().to_owned();
        let off = pk.offsets[s];
        gemm(&mut dy[off..off + r * x], mat_slice(&vs), (r, k), Op::N, &acc, (k, x), Op::N, ONE, false);

        // pass the chain to the children
        let children = topo.children(s);
        if children.is_empty() {
            continue;
        }
        let svh = sigma_vh(&chain.sigma, &chain.v);
        let ut = mode_product(u, &dims, 0, &svh, k);
        let shifted: Vec<Option<Vec<C64>>> = chain
            .dbar
            .iter()
            .map(|d| d.as_ref().map(|d| mode_product(u, &dims, 0, d, k)))
            .collect();
        for (slot, c) in children {
            let perm = if slot == 1 { [0, 2, 1] } else { [0, 1, 2] };
            let pd = [k, dims[perm[1]], dims[perm[2]]];
            let rows = pd[0] * pd[1];
            let rc = pd[2];
            let mat = permute(&ut, &[k, d1, d2], &perm);
            let svd = svd_thin(&mat, rows, rc)?;
            let kc = svd.s.len();
            let wt = svd.u.as_standard_layout().to_owned();
            let mut dbar = vec![None; nc];
            dbar[0] = Some(sigma_vh(&svd.s, &svd.v));
            for ch in 1..nc {
                if let Some(sh) = &shifted[ch] {
                    let shp = permute(sh, &[k, d1, d2], &perm);
                    let mut w = vec![ZERO; kc * rc];
                    gemm(&mut w, mat_slice(&wt), (rows, kc), Op::H, &shp, (rows, rc), Op::N, ONE, false);
                    dbar[ch] = Some(w);
                }
            }
            chains[c] = Some(Chain { sigma: svd.s, v: svd.v, dbar });
        }
    }
    Ok(())
}

/// `diag(σ) V†` as a row-major `k × n` matrix for `V: n × k`.
fn sigma_vh(s: &[f64], v: &Mat) -> Vec<C64> {
    let (n, k) = v.dim();
    let mut out = vec![ZERO; k * n];
    for i in 0..k {
        for j in 0..n {
            out[i * n + j] = v[[j, i]].conj() * s[i];
        }
    }
    out
}
