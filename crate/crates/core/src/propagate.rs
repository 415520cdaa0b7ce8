//! Time propagation of a [`TtnState`]: direct integration of the regularized
//! equations of motion, the one-site (PS1) and two-site (PS2) projector
//! splitting integrators, and the PS2-then-direct mixed strategy.

use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{FrozenGenerator, SopGenerator};
use crate::linalg::{gemm, mode_product, svd_thin, Op, ONE, ZERO};
use crate::ode::{integrate, IntegratorConfig};
use crate::tdvp::{apply_bond, apply_eff, direct_rhs, down_env, open_leg_env, up_env, Above, LegEnv, Packing, UpEnv};
use crate::trajectory::{Sample, Trajectory};
use crate::ttn::state::permute;
use crate::ttn::{write_checkpoint, Leg, TreeTopology, TtnState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Direct,
    Ps1,
    Ps2,
    Mixed,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "ps1" => Ok(Self::Ps1),
            "ps2" => Ok(Self::Ps2),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::Invalid(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsConfig {
    /// Trotter step Δ in fs.
    pub delta: f64,
    /// Singular values above this count toward the new rank.
    pub svd_tol: f64,
    pub max_rank: usize,
    /// New rank = headroom × (number of σ > svd_tol).
    pub rank_headroom: f64,
    /// Starting rank of every bond for PS2 and mixed runs. Bonds of a core
    /// without a physical leg cannot grow past 1 by two-site moves, so this
    /// should stay above 1 for trees that have such cores.
    pub initial_rank: usize,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self { delta: 0.1, svd_tol: 1e-7, max_rank: 60, rank_headroom: 2.0, initial_rank: 3 }
    }
}

impl PsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.svd_tol > 0.0 && self.max_rank >= 1 && self.rank_headroom >= 1.0 && self.initial_rank >= 1) {
            return Err(Error::Invalid(format!("bad PS settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagatorConfig {
    pub strategy: Strategy,
    pub integrator: IntegratorConfig,
    pub ps: PsConfig,
    /// Mixed strategy: switch to direct once any bond reaches this rank.
    pub switch_rank: usize,
    /// Floor on singular values when inverting single-hole densities.
    pub regularization: f64,
    /// Restore semi-unitarity after direct segments whose drift exceeds 1e-8.
    pub reorthonormalize: bool,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mixed,
            integrator: IntegratorConfig::default(),
            ps: PsConfig::default(),
            switch_rank: 60,
            regularization: 1e-4,
            reorthonormalize: true,
        }
    }
}

impl PropagatorConfig {
    /// Uniform starting ranks: `rank` for fixed-rank strategies, the PS2
    /// initial rank otherwise.
    pub fn start_ranks(&self, topo: &TreeTopology, rank: usize) -> Vec<usize> {
        match self.strategy {
            Strategy::Direct | Strategy::Ps1 => topo.uniform_ranks(rank),
            Strategy::Ps2 | Strategy::Mixed => topo.uniform_ranks(self.ps.initial_rank.min(self.ps.max_rank)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        self.ps.validate()?;
        if !(self.regularization > 0.0) || self.switch_rank == 0 {
            return Err(Error::Invalid("regularization and switch_rank must be positive".into()));
        }
        Ok(())
    }
}

/// Push the non-orthonormal part of every core into its parent, leaves first.
pub fn orthonormalize(st: &mut TtnState) -> Result<()> {
    let topo = st.topo.clone();
    for s in (1..topo.len()).rev() {
        let [r, d1, d2] = st.dims(s);
        let svd = svd_thin(&st.tensors[s], r, d1 * d2)?;
        let k = svd.s.len();
        if k < r {
            return Err(Error::Rank { bond: s, rank: r, capacity: k });
        }
        let mut q = vec![ZERO; r * d1 * d2];
        for a in 0..r {
            for x in 0..d1 * d2 {
                q[a * d1 * d2 + x] = svd.v[[x, a]].conj();
            }
        }
        // L = Wσ, parent' = parent ×_slot Lᵀ
        let lt: Vec<C64> = (0..r * r).map(|i| svd.u[[i % r, i / r]] * svd.s[i / r]).collect();
        let (p, slot) = topo.slot_in_parent(s).unwrap();
        let pd = st.dims(p);
        st.tensors[p] = mode_product(&st.tensors[p], &pd, slot, &lt, r);
        st.tensors[s] = q;
    }
    Ok(())
}

/// Environments of one projector-splitting sweep, invalidated as cores change.
struct Sweep<'a> {
    g: &'a FrozenGenerator,
    topo: &'a TreeTopology,
    ode: &'a IntegratorConfig,
    tensors: Vec<Vec<C64>>,
    dims: Vec<[usize; 3]>,
    down: Vec<Option<LegEnv>>,
    up: Vec<Option<UpEnv>>,
    open: Vec<LegEnv>,
    dummy: LegEnv,
    truncation: f64,
}

impl<'a> Sweep<'a> {
    fn new(g: &'a FrozenGenerator, topo: &'a TreeTopology, st: &TtnState, ode: &'a IntegratorConfig) -> Self {
        let n = topo.len();
        Self {
            g,
            topo,
            ode,
            tensors: st.tensors.clone(),
            dims: (0..n).map(|s| st.dims(s)).collect(),
            down: vec![None; n],
            up: vec![None; n],
            open: (0..topo.k()).map(|k| open_leg_env(g, Leg::Bex(k))).collect(),
            dummy: open_leg_env(g, Leg::Dummy),
            truncation: 0.0,
        }
    }

    fn store(self, st: &mut TtnState) -> f64 {
        st.ranks = (0..self.dims.len()).map(|s| if s == 0 { 0 } else { self.dims[s][0] }).collect();
        st.tensors = self.tensors;
        self.truncation
    }

    fn touched(&mut self, n: usize) {
        for b in 1..self.topo.len() {
            if self.topo.in_subtree(b, n) {
                self.down[b] = None;
            } else {
                self.up[b] = None;
            }
        }
    }

    fn ensure_down(&mut self, c: usize) {
        if self.down[c].is_some() {
            return;
        }
        for slot in 1..3 {
            if let Leg::Bond(cc) = self.topo.nodes[c].legs[slot] {
                self.ensure_down(cc);
            }
        }
        let e1 = self.leg_env(c, 1);
        let e2 = self.leg_env(c, 2);
        let (env, _) = down_env(self.g, &self.tensors[c], &self.dims[c], e1, e2);
        self.down[c] = Some(env);
    }

    fn ensure_up(&mut self, c: usize) {
        if self.up[c].is_some() {
            return;
        }
        let (p, slot) = self.topo.slot_in_parent(c).unwrap();
        let sib = if p == 0 { None } else { Some(3 - slot) };
        if p != 0 {
            self.ensure_up(p);
        }
        if let Some(ss) = sib {
            self.ensure_below(p, ss);
        }
        let above = self.above(p);
        let sib_env = sib.map(|ss| (ss, self.leg_env(p, ss)));
        let env = up_env(self.g, &self.tensors[p], &self.dims[p], above, slot, sib_env);
        self.up[c] = Some(env);
    }

    fn ensure_below(&mut self, s: usize, slot: usize) {
        if let Leg::Bond(c) = self.topo.nodes[s].legs[slot] {
            self.ensure_down(c);
        }
    }

    fn ensure_center(&mut self, s: usize) {
        if s != 0 {
            self.ensure_up(s);
        }
        for &slot in self.topo.below_slots(s) {
            self.ensure_below(s, slot);
        }
    }

    fn leg_env(&self, s: usize, slot: usize) -> &LegEnv {
        match self.topo.nodes[s].legs[slot] {
            Leg::Bond(c) => self.down[c].as_ref().expect("down env prepared"),
            Leg::Bex(k) => &self.open[k],
            _ => &self.dummy,
        }
    }

    fn above(&self, s: usize) -> Above<'_> {
        if s == 0 {
            Above::Root
        } else {
            Above::Bond(self.up[s].as_ref().expect("up env prepared"))
        }
    }

    fn propagate_center(&mut self, s: usize, tau: f64) -> Result<()> {
        if tau == 0.0 {
            return Ok(());
        }
        self.ensure_center(s);
        let mut x = std::mem::take(&mut self.tensors[s]);
        {
            let dims = self.dims[s];
            let above = self.above(s);
            let below: Vec<(usize, &LegEnv)> = self.topo.below_slots(s).iter().map(|&sl| (sl, self.leg_env(s, sl))).collect();
            let g = self.g;
            integrate(
                |_, y, dy| {
                    dy.copy_from_slice(&apply_eff(g, y, &dims, above, &below));
                    Ok(())
                },
                &mut x,
                0.0,
                tau,
                self.ode,
            )?;
        }
        self.tensors[s] = x;
        self.touched(s);
        Ok(())
    }

    /// Propagate the bond matrix `m[upper, lower]` of bond `c`.
    fn propagate_bond(&mut self, c: usize, m: &mut [C64], r_up: usize, r_down: usize, tau: f64) -> Result<()> {
        if tau == 0.0 {
            return Ok(());
        }
        self.ensure_up(c);
        self.ensure_down(c);
        let up = self.up[c].as_ref().unwrap();
        let down = self.down[c].as_ref().unwrap();
        let g = self.g;
        integrate(
            |_, y, dy| {
                dy.copy_from_slice(&apply_bond(g, y, r_up, r_down, up, down));
                Ok(())
            },
            m,
            0.0,
            tau,
            self.ode,
        )?;
        Ok(())
    }

    fn slot_perm(p: usize, slot: usize) -> [usize; 3] {
        if p != 0 && slot == 1 {
            [0, 2, 1]
        } else {
            [0, 1, 2]
        }
    }

    /// Shift the center from `r` to its neighbour `s`, evolving the bond
    /// matrix in between by `tau`.
    fn move1(&mut self, r: usize, s: usize, tau: f64) -> Result<()> {
        if self.topo.parent(s) == Some(r) {
            let (_, slot) = self.topo.slot_in_parent(s).unwrap();
            let perm = Self::slot_perm(r, slot);
            let d = self.dims[r];
            let pd = [d[perm[0]], d[perm[1]], d[perm[2]]];
            let a = permute(&self.tensors[r], &d, &perm);
            let svd = svd_thin(&a, pd[0] * pd[1], pd[2])?;
            let k = svd.s.len();
            let rows = pd[0] * pd[1];
            let w: Vec<C64> = (0..rows * k).map(|i| svd.u[[i / k, i % k]]).collect();
            let nd = [pd[0], pd[1], k];
            self.tensors[r] = permute(&w, &nd, &perm);
            self.dims[r] = [nd[perm[0]], nd[perm[1]], nd[perm[2]]];
            self.touched(r);
            let rs = pd[2];
            let mut m = sigma_vh(&svd.s, &svd.v);
            self.propagate_bond(s, &mut m, k, rs, tau)?;
            let ds = self.dims[s];
            self.tensors[s] = mode_product(&self.tensors[s], &ds, 0, &m, k);
            self.dims[s][0] = k;
            self.touched(s);
        } else {
            debug_assert_eq!(self.topo.parent(r), Some(s));
            let (_, slot) = self.topo.slot_in_parent(r).unwrap();
            let [rr, d1, d2] = self.dims[r];
            let svd = svd_thin(&self.tensors[r], rr, d1 * d2)?;
            let k = svd.s.len();
            self.tensors[r] = vh(&svd.v);
            self.dims[r] = [k, d1, d2];
            self.touched(r);
            // M = Xσ, rows on the parent side
            let mut m: Vec<C64> = (0..rr * k).map(|i| svd.u[[i / k, i % k]] * svd.s[i % k]).collect();
            self.propagate_bond(r, &mut m, rr, k, tau)?;
            let mt: Vec<C64> = (0..k * rr).map(|i| m[(i % rr) * k + i / rr]).collect();
            let dp = self.dims[s];
            self.tensors[s] = mode_product(&self.tensors[s], &dp, slot, &mt, k);
            self.dims[s][slot] = k;
            self.touched(s);
        }
        Ok(())
    }

    /// Two-site move from `r` to `s`: merge, evolve by `tau`, split with a
    /// truncated SVD whose rank follows the headroom rule.
    fn move2(&mut self, r: usize, s: usize, tau: f64, ps: &PsConfig) -> Result<()> {
        let down_move = self.topo.parent(s) == Some(r);
        let (p, c) = if down_move { (r, s) } else { (s, r) };
        let (_, slot) = self.topo.slot_in_parent(c).unwrap();
        let perm = Self::slot_perm(p, slot);
        let dp = self.dims[p];
        let pd = [dp[perm[0]], dp[perm[1]], dp[perm[2]]];
        let [rc, c1, c2] = self.dims[c];
        debug_assert_eq!(pd[2], rc);
        let rows = pd[0] * pd[1];
        let cols = c1 * c2;
        let ap = permute(&self.tensors[p], &dp, &perm);
        let mut theta = vec![ZERO; rows * cols];
        gemm(&mut theta, &ap, (rows, rc), Op::N, &self.tensors[c], (rc, cols), Op::N, ONE, false);

        if tau != 0.0 {
            if p != 0 {
                self.ensure_up(p);
                self.ensure_below(p, 3 - slot);
            }
            self.ensure_below(c, 1);
            self.ensure_below(c, 2);
            let tdims = [pd[0], pd[1], c1, c2];
            let above = self.above(p);
            let mut below: Vec<(usize, &LegEnv)> = vec![];
            if p != 0 {
                below.push((1, self.leg_env(p, 3 - slot)));
            }
            below.push((2, self.leg_env(c, 1)));
            below.push((3, self.leg_env(c, 2)));
            let g = self.g;
            integrate(
                |_, y, dy| {
                    dy.copy_from_slice(&apply_eff(g, y, &tdims, above, &below));
                    Ok(())
                },
                &mut theta,
                0.0,
                tau,
                self.ode,
            )?;
        }

        let svd = svd_thin(&theta, rows, cols)?;
        let kmax = svd.s.len();
        let count = svd.s.iter().filter(|&&x| x > ps.svd_tol).count();
        let n = ((ps.rank_headroom * count as f64).ceil() as usize).max(1).min(ps.max_rank).min(kmax);
        let lost: f64 = svd.s[n..].iter().map(|x| x * x).sum();
        self.truncation = self.truncation.max(lost);

        let nd = [pd[0], pd[1], n];
        let pdims = [nd[perm[0]], nd[perm[1]], nd[perm[2]]];
        let (tp, tc): (Vec<C64>, Vec<C64>);
        if down_move {
            let w: Vec<C64> = (0..rows * n).map(|i| svd.u[[i / n, i % n]]).collect();
            tp = w;
            let mut a = vec![ZERO; n * cols];
            for i in 0..n {
                for x in 0..cols {
                    a[i * cols + x] = svd.v[[x, i]].conj() * svd.s[i];
                }
            }
            tc = a;
        } else {
            tp = (0..rows * n).map(|i| svd.u[[i / n, i % n]] * svd.s[i % n]).collect();
            let mut u = vec![ZERO; n * cols];
            for i in 0..n {
                for x in 0..cols {
                    u[i * cols + x] = svd.v[[x, i]].conj();
                }
            }
            tc = u;
        }
        self.tensors[p] = permute(&tp, &nd, &perm);
        self.dims[p] = pdims;
        self.tensors[c] = tc;
        self.dims[c] = [n, c1, c2];
        self.touched(p);
        self.touched(c);
        Ok(())
    }

    fn ps1_step(&mut self, delta: f64) -> Result<()> {
        let path = self.topo.dfs_path();
        let h = delta / 2.0;
        if path.len() == 1 {
            return self.propagate_center(0, delta);
        }
        for w in path.windows(2) {
            let (r, s) = (w[0], w[1]);
            if self.topo.height(r) < self.topo.height(s) {
                self.move1(r, s, 0.0)?;
            } else {
                self.propagate_center(r, h)?;
                self.move1(r, s, -h)?;
            }
        }
        // closing forward and opening backward root sub-steps, merged
        self.propagate_center(0, delta)?;
        for w in path.windows(2).rev() {
            let (s, r) = (w[0], w[1]);
            if self.topo.height(r) < self.topo.height(s) {
                self.move1(r, s, -h)?;
                self.propagate_center(s, h)?;
            } else {
                self.move1(r, s, 0.0)?;
            }
        }
        Ok(())
    }

    fn ps2_step(&mut self, delta: f64, ps: &PsConfig) -> Result<()> {
        let path = self.topo.dfs_path();
        let h = delta / 2.0;
        if path.len() == 1 {
            return self.propagate_center(0, delta);
        }
        let last = path.len() - 2;
        for (i, w) in path.windows(2).enumerate() {
            let (r, s) = (w[0], w[1]);
            if self.topo.height(r) < self.topo.height(s) {
                self.move1(r, s, 0.0)?;
            } else {
                self.move2(r, s, h, ps)?;
                // the root's −Δ/2 here and the +Δ/2 sub-steps on either side
                // of the turnaround cancel exactly
                if i != last {
                    self.propagate_center(s, -h)?;
                }
            }
        }
        for (i, w) in path.windows(2).enumerate().rev() {
            let (s, r) = (w[0], w[1]);
            if self.topo.height(r) < self.topo.height(s) {
                if i != last {
                    self.propagate_center(r, -h)?;
                }
                self.move2(r, s, h, ps)?;
            } else {
                self.move1(r, s, 0.0)?;
            }
        }
        Ok(())
    }
}

fn sigma_vh(s: &[f64], v: &ndarray::Array2<C64>) -> Vec<C64> {
    let (n, k) = v.dim();
    (0..k * n).map(|i| v[[i % n, i / n]].conj() * s[i / n]).collect()
}

fn vh(v: &ndarray::Array2<C64>) -> Vec<C64> {
    let (n, k) = v.dim();
    (0..k * n).map(|i| v[[i % n, i / n]].conj()).collect()
}

/// One PS1 step of length `delta` with the generator frozen at `state.time`.
pub fn step_ps1(st: &mut TtnState, g: &SopGenerator, delta: f64, ode: &IntegratorConfig) -> Result<()> {
    let fg = g.freeze(st.time);
    let topo = st.topo.clone();
    let mut sw = Sweep::new(&fg, &topo, st, ode);
    sw.ps1_step(delta)?;
    sw.store(st);
    st.time += delta;
    Ok(())
}

/// One PS2 step; returns the largest discarded weight Σσ² of the step.
pub fn step_ps2(st: &mut TtnState, g: &SopGenerator, ps: &PsConfig, delta: f64, ode: &IntegratorConfig) -> Result<f64> {
    let fg = g.freeze(st.time);
    let topo = st.topo.clone();
    let mut sw = Sweep::new(&fg, &topo, st, ode);
    sw.ps2_step(delta, ps)?;
    let w = sw.store(st);
    st.time += delta;
    Ok(w)
}

/// Integrate all cores jointly from `state.time` to `t_end`.
pub fn step_direct(st: &mut TtnState, g: &SopGenerator, t_end: f64, cfg: &PropagatorConfig) -> Result<()> {
    let topo = st.topo.clone();
    let pk = Packing::new(&topo, &st.ranks);
    let mut y = pk.pack(&st.tensors);
    let frozen = (!g.is_time_dependent()).then(|| g.freeze(0.0));
    let eps = cfg.regularization;
    integrate(
        |t, y, dy| match &frozen {
            Some(fg) => direct_rhs(fg, &topo, &pk, y, dy, eps),
            None => direct_rhs(&g.freeze(t), &topo, &pk, y, dy, eps),
        },
        &mut y,
        st.time,
        t_end,
        &cfg.integrator,
    )?;
    if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(format!("TTN cores at t = {t_end} fs")));
    }
    st.tensors = pk.unpack(&y);
    st.time = t_end;
    let drift = st.check_semiunitary().into_iter().fold(0.0, f64::max);
    if drift > 1e-8 {
        log::warn!("semi-unitarity drift {drift:.2e} at t = {t_end} fs");
        if cfg.reorthonormalize {
            orthonormalize(st)?;
        }
    }
    Ok(())
}

/// Periodic checkpoint settings.
#[derive(Clone, Debug)]
pub struct CheckpointPolicy {
    pub path: PathBuf,
    pub every_secs: f64,
}

/// Stateful driver for one propagation.
pub struct Propagator<'a> {
    pub g: &'a SopGenerator,
    pub cfg: PropagatorConfig,
    pub state: TtnState,
    /// Current strategy; the mixed strategy becomes `Direct` after the switch.
    active: Strategy,
    pub truncation: f64,
    pub switched_at: Option<f64>,
    pub checkpoint: Option<CheckpointPolicy>,
    last_checkpoint: Instant,
}

impl<'a> Propagator<'a> {
    pub fn new(g: &'a SopGenerator, state: TtnState, cfg: PropagatorConfig) -> Result<Self> {
        cfg.validate()?;
        if state.topo.depths != g.depths || state.topo.dim != g.dim {
            return Err(Error::Invalid("state and generator disagree on dimensions".into()));
        }
        let active = match cfg.strategy {
            Strategy::Mixed => Strategy::Ps2,
            s => s,
        };
        let mut p = Self { g, cfg, state, active, truncation: 0.0, switched_at: None, checkpoint: None, last_checkpoint: Instant::now() };
        p.maybe_switch();
        Ok(p)
    }

    pub fn active_strategy(&self) -> Strategy {
        self.active
    }

    /// Continue a checkpointed run in the phase it was saved in.
    pub fn resume_phase(&mut self, active: Strategy) -> Result<()> {
        let ok = active == self.cfg.strategy || (self.cfg.strategy == Strategy::Mixed && matches!(active, Strategy::Ps2 | Strategy::Direct));
        if !ok {
            return Err(Error::Invalid(format!("cannot resume a {:?} run in phase {active:?}", self.cfg.strategy)));
        }
        if self.active != active {
            self.active = active;
            self.switched_at = (active == Strategy::Direct && self.cfg.strategy == Strategy::Mixed).then_some(self.state.time);
        }
        Ok(())
    }

    fn maybe_switch(&mut self) {
        if self.cfg.strategy == Strategy::Mixed && self.active == Strategy::Ps2 && self.state.max_rank() >= self.cfg.switch_rank {
            self.active = Strategy::Direct;
            self.switched_at = Some(self.state.time);
            log::info!("switching to direct integration at t = {:.3} fs (ranks {:?})", self.state.time, &self.state.ranks[1..]);
        }
    }

    /// Advance to `t_end` (≥ current time).
    pub fn advance(&mut self, t_end: f64) -> Result<()> {
        let tol = 1e-9 * self.cfg.ps.delta;
        while self.state.time < t_end - tol {
            match self.active {
                Strategy::Direct => {
                    step_direct(&mut self.state, self.g, t_end, &self.cfg)?;
                }
                Strategy::Ps1 => {
                    let d = self.cfg.ps.delta.min(t_end - self.state.time);
                    step_ps1(&mut self.state, self.g, d, &self.cfg.integrator)?;
                }
                Strategy::Ps2 | Strategy::Mixed => {
                    let d = self.cfg.ps.delta.min(t_end - self.state.time);
                    let w = step_ps2(&mut self.state, self.g, &self.cfg.ps, d, &self.cfg.integrator)?;
                    self.truncation = self.truncation.max(w);
                    self.maybe_switch();
                }
            }
        }
        self.state.time = t_end;
        Ok(())
    }

    pub fn sample(&self, wall_ms: f64) -> Sample {
        Sample {
            t: self.state.time,
            rho: self.state.extract_rho(),
            ranks: self.state.ranks[1..].to_vec(),
            ttn_size: self.state.size(),
            wall_ms,
        }
    }

    fn maybe_checkpoint(&mut self, force: bool) -> Result<()> {
        if let Some(cp) = &self.checkpoint {
            if force || self.last_checkpoint.elapsed().as_secs_f64() >= cp.every_secs {
                write_checkpoint(&cp.path, &self.state, &format!("{:?}", self.active).to_lowercase())?;
                self.last_checkpoint = Instant::now();
            }
        }
        Ok(())
    }

    /// Sample every `output_dt` up to `t_end`, handing each sample to
    /// `observer` as soon as it exists.
    pub fn run(&mut self, t_end: f64, output_dt: f64, observer: &mut dyn FnMut(&Sample, &TtnState) -> Result<()>) -> Result<Trajectory> {
        if !(output_dt > 0.0) || t_end < self.state.time {
            return Err(Error::Invalid("need output_dt > 0 and t_end ≥ start time".into()));
        }
        let start = Instant::now();
        let mut tr = Trajectory::default();
        let first = self.sample(0.0);
        observer(&first, &self.state)?;
        tr.samples.push(first);
        let t0 = self.state.time;
        let n_out = ((t_end - t0) / output_dt - 1e-9).ceil().max(0.0) as usize;
        for i in 1..=n_out {
            let t_next = (t0 + i as f64 * output_dt).min(t_end);
            if let Err(e) = self.advance(t_next) {
                tr.truncation = self.truncation;
                let _ = self.maybe_checkpoint(true);
                return Err(e);
            }
            let s = self.sample(start.elapsed().as_secs_f64() * 1e3);
            observer(&s, &self.state)?;
            tr.samples.push(s);
            self.maybe_checkpoint(false)?;
        }
        self.maybe_checkpoint(true)?;
        tr.truncation = self.truncation;
        Ok(tr)
    }
}

/// Convenience wrapper: propagate `state` and collect the trajectory.
pub fn run(g: &SopGenerator, state: TtnState, cfg: &PropagatorConfig, t_end: f64, output_dt: f64) -> Result<Trajectory> {
    let mut p = Propagator::new(g, state, cfg.clone())?;
    p.run(t_end, output_dt, &mut |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{decompose, SpectralComponent};
    use crate::generator::{build_generator, BexcitonSpace, SystemModel};
    use crate::oracle::{dense_run, dephasing_rho};
    use crate::trajectory::{hermiticity_defect, max_abs_diff, trace};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn plus() -> Array2<C64> {
        Array2::from_elem((2, 2), C64::new(0.5, 0.0))
    }

    fn k2_instance() -> SopGenerator {
        let comps = [SpectralComponent::drude_lorentz(300.0, 100.0), SpectralComponent::brownian(900.0, 80.0, 60.0)];
        let fs = decompose(&comps, 300.0, 0).unwrap();
        build_generator(&SystemModel::two_level(200.0, 600.0), &fs, &BexcitonSpace::uniform(&fs, 4)).unwrap()
    }

    fn tight() -> IntegratorConfig {
        IntegratorConfig { rtol: 1e-10, atol: 1e-12, ..Default::default() }
    }

    fn cfg(strategy: Strategy, delta: f64) -> PropagatorConfig {
        PropagatorConfig {
            strategy,
            integrator: tight(),
            ps: PsConfig { delta, svd_tol: 1e-12, max_rank: 1000, rank_headroom: 2.0, initial_rank: 3 },
            ..Default::default()
        }
    }

    #[test]
    fn closed_system_all_strategies() {
        let fs = decompose(&[], 300.0, 0).unwrap();
        let e = 700.0;
        let g = build_generator(&SystemModel::two_level(e, 0.0), &fs, &BexcitonSpace::uniform(&fs, 1)).unwrap();
        let topo = Arc::new(TreeTopology::train(2, &[]).unwrap());
        for s in [Strategy::Direct, Strategy::Ps1, Strategy::Ps2, Strategy::Mixed] {
            let st = TtnState::init(topo.clone(), &plus(), &topo.full_ranks()).unwrap();
            let tr = run(&g, st, &cfg(s, 0.5), 100.0, 10.0).unwrap();
            for smp in &tr.samples {
                let want = C64::new(0.0, crate::units::cm_to_fs_inv(e) * smp.t).exp() * 0.5;
                assert!((smp.rho[[0, 1]] - want).norm() < 1e-8, "{s:?} t={}", smp.t);
            }
        }
    }

    #[test]
    fn full_rank_k2_matches_dense() {
        let g = k2_instance();
        let dense = dense_run(&g, &plus(), 20.0, 2.0, &tight()).unwrap();
        for (s, topo) in [
            (Strategy::Direct, TreeTopology::train(2, &g.depths).unwrap()),
            (Strategy::Ps1, TreeTopology::train(2, &g.depths).unwrap()),
            (Strategy::Ps2, TreeTopology::balanced(2, &g.depths).unwrap()),
        ] {
            let topo = Arc::new(topo);
            let st = TtnState::init(topo.clone(), &plus(), &topo.full_ranks()).unwrap();
            let mut c = cfg(s, 0.01);
            if s == Strategy::Direct {
                c.regularization = 1e-6;
                c.integrator = IntegratorConfig { rtol: 1e-8, atol: 1e-10, min_step: 1e-12, ..Default::default() };
            }
            let tr = run(&g, st, &c, 20.0, 2.0).unwrap();
            let d = tr.max_diff(&dense);
            assert!(d < 1e-6, "{s:?}: {d}");
        }
    }

    #[test]
    fn ps_steps_keep_semi_unitarity_and_trace() {
        let g = k2_instance();
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths).unwrap());
        // below capacity trace and hermiticity are only conserved while I⊗|0…0⟩ stays
        // inside the tangent space, so it is checked at full rank and for PS2
        let mut low = TtnState::init(topo.clone(), &plus(), &topo.uniform_ranks(3)).unwrap();
        let mut full = TtnState::init(topo.clone(), &plus(), &topo.full_ranks()).unwrap();
        let mut adaptive = low.clone();
        let ps = PsConfig { delta: 0.1, svd_tol: 1e-7, max_rank: 6, rank_headroom: 2.0, initial_rank: 3 };
        for _ in 0..20 {
            step_ps1(&mut low, &g, 0.1, &IntegratorConfig::default()).unwrap();
            step_ps1(&mut full, &g, 0.1, &IntegratorConfig::default()).unwrap();
            step_ps2(&mut adaptive, &g, &ps, 0.1, &IntegratorConfig::default()).unwrap();
            for st in [&low, &full, &adaptive] {
                assert!(st.check_semiunitary().iter().all(|&d| d < 1e-10));
            }
            for st in [&full, &adaptive] {
                let rho = st.extract_rho();
                assert!((trace(&rho) - ONE).norm() < 1e-7);
                assert!(hermiticity_defect(&rho) < 1e-7);
            }
        }
        assert!(adaptive.max_rank() <= 6);
    }

    #[test]
    fn ps2_grows_rank_from_one() {
        let g = k2_instance();
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths).unwrap());
        let mut st = TtnState::init(topo.clone(), &plus(), &vec![1; topo.len()]).unwrap();
        let ps = PsConfig { max_rank: 100, ..Default::default() };
        step_ps2(&mut st, &g, &ps, 0.1, &IntegratorConfig::default()).unwrap();
        assert!(st.ranks[1..].iter().all(|&r| r > 1), "{:?}", st.ranks);
    }

    #[test]
    fn bond_only_core_needs_initial_rank_above_one() {
        let comps = [SpectralComponent::drude_lorentz(300.0, 100.0), SpectralComponent::brownian(900.0, 80.0, 60.0)];
        let fs = decompose(&comps, 300.0, 1).unwrap();
        let g = build_generator(&SystemModel::two_level(200.0, 600.0), &fs, &BexcitonSpace::uniform(&fs, 3)).unwrap();
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths).unwrap());
        let ps = PsConfig { max_rank: 100, ..Default::default() };
        let mut st = TtnState::init(topo.clone(), &plus(), &vec![1; topo.len()]).unwrap();
        step_ps2(&mut st, &g, &ps, 0.1, &IntegratorConfig::default()).unwrap();
        assert_eq!(st.max_rank(), 1);
        let c = PropagatorConfig { strategy: Strategy::Ps2, ps, ..Default::default() };
        let mut st = TtnState::init(topo.clone(), &plus(), &c.start_ranks(&topo, 16)).unwrap();
        step_ps2(&mut st, &g, &c.ps, 0.1, &IntegratorConfig::default()).unwrap();
        assert!(st.ranks[1..].iter().all(|&r| r > 3), "{:?}", st.ranks);
    }

    #[test]
    fn zero_generator_leaves_rho_unchanged() {
        let mut g = k2_instance();
        g.terms.iter_mut().for_each(|t| t.coeff = ZERO);
        let topo = Arc::new(TreeTopology::train(2, &g.depths).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut st = TtnState::random(topo.clone(), &topo.uniform_ranks(3), &mut rng).unwrap();
        let rho0 = st.extract_rho();
        step_ps1(&mut st, &g, 0.1, &IntegratorConfig::default()).unwrap();
        assert!(max_abs_diff(&rho0, &st.extract_rho()) < 1e-12);
        let ps = PsConfig { svd_tol: 1e-9, ..Default::default() };
        step_ps2(&mut st, &g, &ps, 0.1, &IntegratorConfig::default()).unwrap();
        assert!(max_abs_diff(&rho0, &st.extract_rho()) < 1e-12);
    }

    #[test]
    fn orthonormalize_preserves_state() {
        let g = k2_instance();
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut st = TtnState::random(topo.clone(), &topo.uniform_ranks(3), &mut rng).unwrap();
        for t in st.tensors.iter_mut().skip(1) {
            t.iter_mut().enumerate().for_each(|(i, z)| *z *= 1.0 + 0.1 * (i % 3) as f64);
        }
        let before = st.dense_edo(1 << 20).unwrap();
        orthonormalize(&mut st).unwrap();
        let after = st.dense_edo(1 << 20).unwrap();
        assert!(st.check_semiunitary().iter().all(|&d| d < 1e-12));
        assert!(before.iter().zip(&after).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn pure_dephasing_direct() {
        let fs = decompose(&[SpectralComponent::drude_lorentz(60.0, 200.0)], 300.0, 1).unwrap();
        let e = 500.0;
        let g = build_generator(&SystemModel::two_level(e, 0.0), &fs, &BexcitonSpace::uniform(&fs, 6)).unwrap();
        let topo = Arc::new(TreeTopology::train(2, &g.depths).unwrap());
        let st = TtnState::init(topo.clone(), &plus(), &topo.full_ranks()).unwrap();
        let mut c = cfg(Strategy::Direct, 0.1);
        c.regularization = 1e-8;
        let tr = run(&g, st, &c, 30.0, 3.0).unwrap();
        for s in &tr.samples {
            let want = dephasing_rho(&fs, e, &plus(), s.t);
            assert!((s.rho[[0, 0]] - 0.5).norm() < 1e-9);
            assert!(max_abs_diff(&s.rho, &want) < 1e-5, "t={} {}", s.t, max_abs_diff(&s.rho, &want));
        }
    }

    #[test]
    fn mixed_switches_once() {
        let g = k2_instance();
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths).unwrap());
        let st = TtnState::init(topo.clone(), &plus(), &vec![1; topo.len()]).unwrap();
        let mut c = PropagatorConfig { switch_rank: 3, ..Default::default() };
        c.ps.max_rank = 8;
        let mut p = Propagator::new(&g, st, c).unwrap();
        p.advance(2.0).unwrap();
        assert_eq!(p.active_strategy(), Strategy::Direct);
        assert!(p.switched_at.unwrap() <= 0.5);
        let rho = p.state.extract_rho();
        assert!((trace(&rho) - ONE).norm() < 1e-7);
    }
}
