//! Acceptance checks A1–A10. Each check returns an [`Outcome`] with a one-line
//! summary; runs made along the way are recorded so the conservation check
//! (A6) can inspect all of them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bath::{bcf_quadrature, decompose, reconstruct, thymine_components};
use crate::error::{Error, Result};
use crate::generator::{build_generator, BexcitonSpace, SopGenerator, SystemModel};
use crate::linalg::ZERO;
use crate::ode::IntegratorConfig;
use crate::oracle::{dense_evolve, dense_init, dense_rhs, dense_run, dephasing_phi_quadrature, dephasing_phi_spectral};
use crate::propagate::{step_direct, step_ps1, PropagatorConfig, Propagator, PsConfig, Strategy};
use crate::scenarios::{self, plus_state, solvent, TEMPERATURE};
use crate::tdvp::{direct_rhs, tangent_dense, Packing};
use crate::trajectory::{hermiticity_defect, trace, Trajectory};
use crate::ttn::state::DENSE_GUARD;
use crate::ttn::{Leg, TopologyKind, TreeTopology, TtnState};

/// Criteria run by `verify --suite small`: everything except the flagship.
pub const SMALL: [&str; 9] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A9", "A10"];
pub const ALL: [&str; 10] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10"];

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: String,
    /// `None` when the check could not be run.
    pub pass: Option<bool>,
    pub summary: String,
    pub notes: Vec<String>,
    pub wall_s: f64,
}

impl Outcome {
    fn new(id: &str, pass: bool, summary: String) -> Self {
        Self { id: id.into(), pass: Some(pass), summary, notes: vec![], wall_s: 0.0 }
    }

    pub fn line(&self) -> String {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        format!("{} {tag} {} [{:.1} s]", self.id, self.summary, self.wall_s)
    }
}

/// Conservation figures of one propagation.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub label: String,
    pub trace: f64,
    pub hermiticity: f64,
    pub purity_max: f64,
    /// Largest semi-unitarity defect seen after PS steps.
    pub semiunitary: Option<f64>,
}

#[derive(Default)]
pub struct Suite {
    pub runs: Vec<RunRecord>,
    cache: BTreeMap<String, Trajectory>,
    /// Directories holding the flagship E = 0 and E = 5000 cm⁻¹ runs.
    pub flagship_dirs: Option<(std::path::PathBuf, std::path::PathBuf)>,
}

fn conservation(label: &str, tr: &Trajectory, semi: Option<f64>) -> RunRecord {
    let mut r = RunRecord { label: label.into(), trace: 0.0, hermiticity: 0.0, purity_max: 0.0, semiunitary: semi };
    for s in &tr.samples {
        r.trace = r.trace.max((trace(&s.rho) - C64::new(1.0, 0.0)).norm());
        r.hermiticity = r.hermiticity.max(hermiticity_defect(&s.rho));
        r.purity_max = r.purity_max.max(s.purity());
    }
    r
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Propagate and record conservation figures under `label`.
    pub fn propagate(&mut self, label: &str, g: &SopGenerator, st: TtnState, cfg: &PropagatorConfig, t_end: f64, dt: f64) -> Result<Trajectory> {
        let ps = matches!(cfg.strategy, Strategy::Ps1 | Strategy::Ps2);
        let mut semi: f64 = 0.0;
        let mut p = Propagator::new(g, st, cfg.clone())?;
        let tr = p.run(t_end, dt, &mut |_, st| {
            if ps {
                semi = st.check_semiunitary().into_iter().fold(semi, f64::max);
            }
            Ok(())
        })?;
        self.runs.push(conservation(label, &tr, ps.then_some(semi)));
        Ok(tr)
    }

    pub fn run(&mut self, id: &str) -> Outcome {
        let t0 = Instant::now();
        let res = match id {
            "A1" => self.a1(),
            "A2" => self.a2(),
            "A3" => self.a3(),
            "A4" => a4(),
            "A5" => self.a5(),
            "A6" => Ok(self.a6()),
            "A7" => a7(),
            "A8" => self.a8(),
            "A9" => a9(),
            "A10" => a10(),
            _ => Err(Error::Invalid(format!("unknown criterion {id}"))),
        };
        let mut o = res.unwrap_or_else(|e| Outcome::new(id, false, format!("error: {e}")));
        o.wall_s = t0.elapsed().as_secs_f64();
        o
    }

    fn a1(&mut self) -> Result<Outcome> {
        let inst = scenarios::solvent_only(0.0, 1000.0, 8)?;
        let g = &inst.generator;
        let dense = dense_run(g, &inst.rho0, 100.0, 1.0, &IntegratorConfig::tight())?;
        let topo = inst.topology(TopologyKind::Balanced)?;
        let full = topo.full_ranks();
        let mut worst: f64 = 0.0;
        let mut parts = vec![];
        let mut slowest: f64 = 0.0;
        for s in [Strategy::Direct, Strategy::Ps1, Strategy::Ps2] {
            let cfg = PropagatorConfig { strategy: s, ps: PsConfig { max_rank: 1000, ..Default::default() }, ..Default::default() };
            let t = Instant::now();
            let st = TtnState::init(topo.clone(), &inst.rho0, &full)?;
            let tr = self.propagate(&format!("A1 {s:?}"), g, st, &cfg, 100.0, 1.0)?;
            slowest = slowest.max(t.elapsed().as_secs_f64());
            let d = tr.max_diff(&dense);
            worst = worst.max(d);
            parts.push(format!("{s:?} {d:.1e}").to_lowercase());
        }
        let mut o = Outcome::new("A1", worst <= 1e-6, format!("full rank vs dense, max |Δρ|: {} (≤ 1e-6)", parts.join(", ")));
        o.notes.push(format!("slowest strategy {slowest:.1} s"));
        Ok(o)
    }

    fn a2_config(strategy: Strategy, rank: usize) -> PropagatorConfig {
        PropagatorConfig { strategy, switch_rank: rank, ps: PsConfig { max_rank: rank, ..Default::default() }, ..Default::default() }
    }

    fn a2_run(&mut self, kind: TopologyKind, strategy: Strategy, rank: usize) -> Result<Trajectory> {
        self.a2_run_delta(kind, strategy, rank, PsConfig::default().delta)
    }

    fn a2_run_delta(&mut self, kind: TopologyKind, strategy: Strategy, rank: usize, delta: f64) -> Result<Trajectory> {
        let key = format!("{kind:?} {strategy:?} {rank} delta {delta}");
        if let Some(t) = self.cache.get(&key) {
            return Ok(t.clone());
        }
        let inst = scenarios::reduced(0.0, 1000.0, 8)?;
        let topo = inst.topology(kind)?;
        let mut cfg = Self::a2_config(strategy, rank);
        cfg.ps.delta = delta;
        let st = TtnState::init(topo.clone(), &inst.rho0, &cfg.start_ranks(&topo, rank))?;
        let tr = self.propagate(&format!("A2/A3 {key}"), &inst.generator, st, &cfg, 200.0, 2.0)?;
        self.cache.insert(key, tr.clone());
        Ok(tr)
    }

    fn a2_dense(&mut self) -> Result<Trajectory> {
        if let Some(t) = self.cache.get("dense") {
            return Ok(t.clone());
        }
        let inst = scenarios::reduced(0.0, 1000.0, 8)?;
        let tr = dense_run(&inst.generator, &inst.rho0, 200.0, 2.0, &IntegratorConfig::tight())?;
        self.cache.insert("dense".into(), tr.clone());
        Ok(tr)
    }

    fn a2(&mut self) -> Result<Outcome> {
        let strategies = [Strategy::Direct, Strategy::Ps1, Strategy::Ps2, Strategy::Mixed];
        let mut trs = vec![];
        for s in strategies {
            trs.push((s, self.a2_run(TopologyKind::Balanced, s, 16)?));
        }
        let mut worst: f64 = 0.0;
        let mut pair = String::new();
        for i in 0..trs.len() {
            for j in i + 1..trs.len() {
                let d = trs[i].1.max_diff(&trs[j].1);
                if d > worst {
                    worst = d;
                    pair = format!("{:?}/{:?}", trs[i].0, trs[j].0).to_lowercase();
                }
            }
        }
        let mut o = Outcome::new("A2", worst <= 1e-4, format!("balanced tree, rank 16: max pairwise |Δρ| {worst:.1e} ({pair}) (≤ 1e-4)"));
        let dense = self.a2_dense()?;
        let vs: Vec<String> = trs.iter().map(|(s, t)| format!("{s:?} {:.1e}", t.max_diff(&dense)).to_lowercase()).collect();
        o.notes.push(format!("vs dense: {}", vs.join(", ")));
        Ok(o)
    }

    fn a3(&mut self) -> Result<Outcome> {
        let b = self.a2_run(TopologyKind::Balanced, Strategy::Mixed, 16)?;
        let t = self.a2_run(TopologyKind::Train, Strategy::Mixed, 16)?;
        let d = b.max_diff(&t);
        let mut o = Outcome::new("A3", d <= 1e-4, format!("mixed, rank 16: max |Δρ| train vs balanced {d:.1e} (≤ 1e-4)"));
        let dense = self.a2_dense()?;
        o.notes.push(format!("vs dense at rank 16: balanced {:.1e}, train {:.1e}", b.max_diff(&dense), t.max_diff(&dense)));
        let b32 = self.a2_run(TopologyKind::Balanced, Strategy::Mixed, 32)?;
        let t32 = self.a2_run(TopologyKind::Train, Strategy::Mixed, 32)?;
        o.notes.push(format!(
            "rank 32: train vs balanced {:.1e}; vs dense balanced {:.1e}, train {:.1e}",
            b32.max_diff(&t32),
            b32.max_diff(&dense),
            t32.max_diff(&dense)
        ));
        // the train error is made by PS2 in the first steps and scales with Δ
        let b02 = self.a2_run_delta(TopologyKind::Balanced, Strategy::Mixed, 16, 0.02)?;
        let t02 = self.a2_run_delta(TopologyKind::Train, Strategy::Mixed, 16, 0.02)?;
        o.notes.push(format!(
            "rank 16, Δ = 0.02 fs: train vs balanced {:.1e}; vs dense balanced {:.1e}, train {:.1e}",
            b02.max_diff(&t02),
            b02.max_diff(&dense),
            t02.max_diff(&dense)
        ));
        Ok(o)
    }

    fn a5(&mut self) -> Result<Outcome> {
        let comps = [solvent()];
        let fs = decompose(&comps, TEMPERATURE, 3)?;
        let mut space = BexcitonSpace::uniform(&fs, 8);
        space.depths[0] = 32;
        let g = build_generator(&SystemModel::two_level(0.0, 0.0), &fs, &space)?;
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths)?);
        // V = 0 keeps every (i, j) block a product over features: rank 4 is exact
        let mut cfg = Self::a2_config(Strategy::Mixed, 4);
        cfg.regularization = 1e-6;
        cfg.integrator = IntegratorConfig { rtol: 1e-8, atol: 1e-10, min_step: 1e-12, ..Default::default() };
        let rho0 = plus_state();
        let st = TtnState::init(topo.clone(), &rho0, &cfg.start_ranks(&topo, 4))?;
        let tr = self.propagate("A5 mixed", &g, st, &cfg, 100.0, 0.5)?;
        let c0 = rho0[[0, 1]].norm();
        let (mut pop, mut dq, mut ds): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for s in &tr.samples {
            pop = pop.max((s.rho[[0, 0]] - rho0[[0, 0]]).norm()).max((s.rho[[1, 1]] - rho0[[1, 1]]).norm());
            let a = s.rho[[0, 1]].norm();
            let q = c0 * (-dephasing_phi_quadrature(&fs, s.t).re).exp();
            let sp = c0 * (-dephasing_phi_spectral(&comps, TEMPERATURE, s.t)?).exp();
            dq = dq.max((a - q).abs() / c0);
            ds = ds.max((a - sp).abs() / c0);
        }
        let pass = pop <= 1e-9 && dq <= 1e-4;
        let mut o = Outcome::new(
            "A5",
            pass,
            format!("V = 0: population drift {pop:.1e} (≤ 1e-9), max ||ρ01| − cumulant| / |ρ01(0)| {dq:.1e} (≤ 1e-4)"),
        );
        o.notes.push(format!("vs cumulant from J(ω) directly (includes BCF decomposition error): {ds:.1e}"));
        Ok(o)
    }

    fn a6(&self) -> Outcome {
        let mut bad = vec![];
        for r in &self.runs {
            let mut why = vec![];
            if r.trace > 1e-7 {
                why.push(format!("trace {:.1e}", r.trace));
            }
            if r.hermiticity > 1e-7 {
                why.push(format!("hermiticity {:.1e}", r.hermiticity));
            }
            if r.purity_max > 1.0 + 1e-7 {
                why.push(format!("purity {:.8}", r.purity_max));
            }
            if r.semiunitary.is_some_and(|s| s > 1e-10) {
                why.push(format!("semi-unitarity {:.1e}", r.semiunitary.unwrap()));
            }
            if !why.is_empty() {
                bad.push(format!("{}: {}", r.label, why.join(", ")));
            }
        }
        let worst = |f: fn(&RunRecord) -> f64| self.runs.iter().map(f).fold(0.0, f64::max);
        let summary = format!(
            "{} runs, {} outside bounds; worst trace {:.1e}, hermiticity {:.1e}, purity {:.9}, semi-unitarity {:.1e}",
            self.runs.len(),
            bad.len(),
            worst(|r| r.trace),
            worst(|r| r.hermiticity),
            worst(|r| r.purity_max),
            worst(|r| r.semiunitary.unwrap_or(0.0)),
        );
        let mut o = Outcome::new("A6", bad.is_empty() && !self.runs.is_empty(), summary);
        o.notes = bad;
        o
    }

    fn a8(&mut self) -> Result<Outcome> {
        let Some((d0, d5)) = self.flagship_dirs.clone() else {
            return Ok(Outcome { id: "A8".into(), pass: None, summary: "flagship outputs not available".into(), notes: vec![], wall_s: 0.0 });
        };
        let mut o = flagship_check(&d0, &d5)?;
        // the same comparison on the exact hierarchy of a smaller bath
        let a = scenarios::reduced(0.0, 1000.0, 8)?;
        let b = scenarios::reduced(5000.0, 1000.0, 8)?;
        let ta = dense_run(&a.generator, &a.rho0, 5.0, 0.5, &IntegratorConfig::tight())?;
        let tb = dense_run(&b.generator, &b.rho0, 5.0, 0.5, &IntegratorConfig::tight())?;
        let gaps: Vec<(f64, f64)> = ta.samples.iter().zip(&tb.samples).map(|(x, y)| (x.t, (x.purity() - y.purity()).abs())).collect();
        let held = agreement_window(&gaps, 1e-3);
        o.notes.push(format!(
            "dense oracle, reduced bath (K = 4), E = 0 vs 5000: purity gap {:.1e} at 5 fs, within 1e-3 up to {held} fs",
            gaps.last().map(|g| g.1).unwrap_or(0.0)
        ));
        Ok(o)
    }
}

fn a4() -> Result<Outcome> {
    let comps = thymine_components();
    let fs = scenarios::thymine_features()?;
    let mut worst: f64 = 0.0;
    let mut at = 0.0;
    for i in 1..=400 {
        let t = 0.5 * i as f64;
        let q = bcf_quadrature(&comps, TEMPERATURE, t)?;
        let r = (reconstruct(&fs, t) - q).norm() / q.norm();
        if r > worst {
            worst = r;
            at = t;
        }
    }
    Ok(Outcome::new(
        "A4",
        fs.len() == 20 && worst <= 2e-2,
        format!("K = {} (= 20); max relative BCF error on (0, 200] fs {worst:.1e} at {at} fs (≤ 2e-2)", fs.len()),
    ))
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// One PS1 step of each Δ from `st`, defect measured on the whole EDO
/// against `reference(Δ)`.
fn ps1_defects(g: &SopGenerator, st: &TtnState, deltas: &[f64], reference: &dyn Fn(f64) -> Result<Vec<C64>>) -> Result<Vec<f64>> {
    let tight = IntegratorConfig { rtol: 1e-12, atol: 1e-14, min_step: 1e-14, ..Default::default() };
    deltas
        .iter()
        .map(|&d| {
            let mut s = st.clone();
            step_ps1(&mut s, g, d, &tight)?;
            Ok(max_diff(&s.dense_edo(DENSE_GUARD)?, &reference(d)?))
        })
        .collect()
}

fn ratios(d: &[f64]) -> Vec<f64> {
    d.windows(2).map(|w| w[0] / w[1]).collect()
}

fn a7() -> Result<Outcome> {
    let deltas = [0.04, 0.02, 0.01];
    let inst = scenarios::solvent_only(0.0, 1000.0, 8)?;
    let g = &inst.generator;
    let tight = IntegratorConfig { rtol: 1e-12, atol: 1e-14, min_step: 1e-14, ..Default::default() };
    let topo = inst.topology(TopologyKind::Balanced)?;
    let st = TtnState::init(topo.clone(), &inst.rho0, &topo.full_ranks())?;
    let om0 = dense_init(g, &inst.rho0)?;
    let dense_ref = |d: f64| -> Result<Vec<C64>> {
        let mut om = om0.clone();
        dense_evolve(g, &mut om, 0.0, d, &tight)?;
        Ok(om)
    };
    let d = ps1_defects(g, &st, &deltas, &dense_ref)?;
    let r = ratios(&d);
    let pass = r.iter().all(|&x| (4.0..=16.0).contains(&x));
    let mut o = Outcome::new(
        "A7",
        pass,
        format!(
            "A1 instance: defects {:.1e}/{:.1e}/{:.1e}, ratios {:.2}/{:.2} (each in [4, 16])",
            d[0], d[1], d[2], r[0], r[1]
        ),
    );
    if !pass {
        o.notes.push("at full rank PS1 is exact up to round-off, so the ratios carry no order information".into());
    }
    // below capacity: compressed state at 5 fs, reference = tight TDVP flow
    let mut om5 = om0.clone();
    dense_evolve(g, &mut om5, 0.0, 5.0, &tight)?;
    let mut ranks = topo.full_ranks();
    ranks[1] = 3;
    let st5 = TtnState::from_dense(topo.clone(), &om5, &ranks)?;
    let cfg = PropagatorConfig { regularization: 1e-12, integrator: tight.clone(), ..Default::default() };
    let tdvp_ref = |d: f64| -> Result<Vec<C64>> {
        let mut s = st5.clone();
        let t1 = s.time + d;
        step_direct(&mut s, g, t1, &cfg)?;
        s.dense_edo(DENSE_GUARD)
    };
    let d3 = ps1_defects(g, &st5, &deltas, &tdvp_ref)?;
    let r3 = ratios(&d3);
    o.notes.push(format!(
        "rank 3 of 4, vs TDVP flow: defects {:.1e}/{:.1e}/{:.1e}, ratios {:.2}/{:.2}",
        d3[0], d3[1], d3[2], r3[0], r3[1]
    ));
    Ok(o)
}

/// Evaluate the flagship criteria from two finished run directories.
pub fn flagship_check(dir_e0: &Path, dir_e5000: &Path) -> Result<Outcome> {
    let a = Trajectory::read_csv(&dir_e0.join("trajectory.csv"))?;
    let b = Trajectory::read_csv(&dir_e5000.join("trajectory.csv"))?;
    let end = a.samples.last().map(|s| s.t).unwrap_or(0.0);
    let p0 = a.samples.first().map(|s| s.purity()).unwrap_or(0.0);
    let (tmin, pmin) = a
        .samples
        .iter()
        .filter(|s| s.t <= 100.0)
        .map(|s| (s.t, s.purity()))
        .fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let after = a.samples.iter().filter(|s| s.t > tmin).map(|s| s.purity()).fold(f64::NEG_INFINITY, f64::max);
    let recovered = after > pmin + 0.01;
    let gaps: Vec<(f64, f64)> = a
        .samples
        .iter()
        .filter(|s| s.t <= 5.0 + 1e-9)
        .filter_map(|s| b.samples.iter().find(|o| (o.t - s.t).abs() < 1e-9).map(|o| (s.t, (s.purity() - o.purity()).abs())))
        .collect();
    let short = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    let held = agreement_window(&gaps, 1e-3);
    let pass = end >= 100.0 - 1e-9 && (p0 - 1.0).abs() < 1e-9 && (0.45..=0.60).contains(&pmin) && recovered && short <= 1e-3;
    let mut o = Outcome::new(
        "A8",
        pass,
        format!(
            "reached {end:.1} fs (≥ 100); purity(0) {p0:.6}; min {pmin:.3} at {tmin:.1} fs (in [0.45, 0.60]); later max {after:.3}; short-time E=0 vs 5000 {short:.1e} (≤ 1e-3)"
        ),
    );
    o.notes.push(format!("E = 0 and 5000 purities agree within 1e-3 up to {held} fs"));
    let wall = a.samples.last().map(|s| s.wall_ms / 3.6e6).unwrap_or(0.0);
    let rk = a.samples.iter().map(|s| s.max_rank()).max().unwrap_or(0);
    o.notes.push(format!("E=0 run: wall {wall:.2} h, max rank {rk}"));
    Ok(o)
}

/// Last time up to which every `(t, gap)` stays within `tol`.
fn agreement_window(gaps: &[(f64, f64)], tol: f64) -> f64 {
    gaps.iter().take_while(|g| g.1 <= tol).last().map_or(0.0, |g| g.0)
}

fn a9() -> Result<Outcome> {
    let fs = scenarios::thymine_features()?;
    let depths = vec![20; fs.len()];
    let bal = TreeTopology::balanced(2, &depths)?;
    let train = TreeTopology::train(2, &depths)?;
    let target = [(40, 0.7e6), (60, 2.2e6), (80, 4.9e6)];
    let mut parts = vec![];
    let mut pass = true;
    for (r, want) in target {
        let nominal = bal.size_of(&vec![r; bal.len()]) as f64;
        pass &= (nominal - want).abs() <= 0.1 * want;
        parts.push(format!("R={r} {:.2}e6 vs {:.1}e6", nominal / 1e6, want / 1e6));
    }
    let mut o = Outcome::new("A9", pass, format!("balanced K=20 N=20 sizes: {} (±10%)", parts.join(", ")));
    let clamped: Vec<String> = [40, 60, 80].iter().map(|&r| format!("{:.2}e6", bal.size_of(&bal.uniform_ranks(r)) as f64 / 1e6)).collect();
    o.notes.push(format!("with ranks clamped to bond capacity: {}", clamped.join(", ")));
    let tr: Vec<String> = [40, 60, 80].iter().map(|&r| format!("{:.2}e6", train.size_of(&vec![r; train.len()]) as f64 / 1e6)).collect();
    o.notes.push(format!("train (0.6/1.3/2.3e6 listed): {}", tr.join(", ")));
    Ok(o)
}

/// Root equation of the K = 4 tree written out index by index: mean fields
/// of the two leaf cores, of the branch core, then the root derivative.
fn root_rhs_k4_by_hand(g: &SopGenerator, st: &TtnState) -> Vec<C64> {
    let r = &st.ranks;
    let n = &g.depths;
    let (u1, u2, u3, a) = (&st.tensors[1], &st.tensors[2], &st.tensors[3], &st.tensors[0]);
    let m = g.dim;
    let mut out = vec![ZERO; a.len()];
    for term in &g.terms {
        let c = g.term_coeff(term, st.time);
        let (hk, hb) = g.system_factors(term);
        let h = |k: usize| -> Array2<C64> {
            match term.bex {
                Some((kk, op)) if kk == k => op.matrix(n[k]),
                _ => Array2::from_shape_fn((n[k], n[k]), |(i, j)| if i == j { C64::new(1.0, 0.0) } else { ZERO }),
            }
        };
        let leaf = |u: &[C64], ra: usize, k1: usize, k2: usize| -> Array2<C64> {
            let (h1, h2) = (h(k1), h(k2));
            let (d1, d2) = (n[k1], n[k2]);
            let mut f = Array2::zeros((ra, ra));
            for ap in 0..ra {
                for aa in 0..ra {
                    let mut s = ZERO;
                    for p1 in 0..d1 {
                        for p2 in 0..d2 {
                            for q1 in 0..d1 {
                                for q2 in 0..d2 {
                                    s += u[(ap * d1 + p1) * d2 + p2].conj() * h1[[p1, q1]] * h2[[p2, q2]] * u[(aa * d1 + q1) * d2 + q2];
                                }
                            }
                        }
                    }
                    f[[ap, aa]] = s;
                }
            }
            f
        };
        let f2 = leaf(u2, r[2], 0, 1);
        let f3 = leaf(u3, r[3], 2, 3);
        let mut f1 = Array2::<C64>::zeros((r[1], r[1]));
        for ap in 0..r[1] {
            for aa in 0..r[1] {
                let mut s = ZERO;
                for bp in 0..r[2] {
                    for cp in 0..r[3] {
                        for b in 0..r[2] {
                            for cc in 0..r[3] {
                                s += u1[(ap * r[2] + bp) * r[3] + cp].conj() * f2[[bp, b]] * f3[[cp, cc]] * u1[(aa * r[2] + b) * r[3] + cc];
                            }
                        }
                    }
                }
                f1[[ap, aa]] = s;
            }
        }
        for ip in 0..m {
            for jp in 0..m {
                for ap in 0..r[1] {
                    let mut s = ZERO;
                    for i in 0..m {
                        for j in 0..m {
                            for aa in 0..r[1] {
                                s += hk[[ip, i]] * hb[[jp, j]] * f1[[ap, aa]] * a[(i * m + j) * r[1] + aa];
                            }
                        }
                    }
                    out[(ip * m + jp) * r[1] + ap] += c * s;
                }
            }
        }
    }
    out
}

fn a10() -> Result<Outcome> {
    let comps = [solvent(), crate::bath::SpectralComponent::brownian(1663.0, 330.0, 50.0)];
    let fs = decompose(&comps, TEMPERATURE, 1)?;
    let g = build_generator(&SystemModel::two_level(0.0, 1000.0), &fs, &BexcitonSpace::uniform(&fs, 3))?;
    let topo = Arc::new(TreeTopology::balanced(2, &g.depths)?);
    let k = g.k();
    // A(i j a1) U(a1 a2 a3) U(a2 n1 n2) U(a3 n3 n4)
    let wiring = [
        [Leg::Ket, Leg::Bra, Leg::Bond(1)],
        [Leg::Bond(1), Leg::Bond(2), Leg::Bond(3)],
        [Leg::Bond(2), Leg::Bex(0), Leg::Bex(1)],
        [Leg::Bond(3), Leg::Bex(2), Leg::Bex(3)],
    ];
    let tree_ok = topo.nodes.len() == 4 && topo.nodes.iter().zip(&wiring).all(|(n, w)| n.legs == *w);
    let terms_ok = g.terms.len() == 5 * k + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // root equation, reduced ranks
    let ranks = topo.clamp_ranks(&[0, 3, 2, 3]);
    let st = TtnState::random(topo.clone(), &ranks, &mut rng)?;
    let pk = Packing::new(&topo, &ranks);
    let y = pk.pack(&st.tensors);
    let mut dy = vec![ZERO; y.len()];
    direct_rhs(&g.freeze(0.0), &topo, &pk, &y, &mut dy, 1e-12)?;
    let hand = root_rhs_k4_by_hand(&g, &st);
    let root_err = max_diff(pk.slice(&dy, 0), &hand) / hand.iter().map(|z| z.norm()).fold(1e-300, f64::max);

    // full rank: tangent image equals the dense derivative
    let full = topo.full_ranks();
    let st = TtnState::random(topo.clone(), &full, &mut rng)?;
    let pk = Packing::new(&topo, &full);
    let y = pk.pack(&st.tensors);
    let mut dy = vec![ZERO; y.len()];
    direct_rhs(&g.freeze(0.0), &topo, &pk, &y, &mut dy, 1e-12)?;
    let tangent = tangent_dense(&st, &pk.unpack(&dy))?;
    let exact = dense_rhs(&g, &st.dense_edo(DENSE_GUARD)?, 0.0);
    let dense_err = max_diff(&tangent, &exact) / exact.iter().map(|z| z.norm()).fold(1e-300, f64::max);

    let pass = tree_ok && terms_ok && root_err <= 1e-12 && dense_err <= 1e-7;
    Ok(Outcome::new(
        "A10",
        pass,
        format!(
            "K=4 tree wiring {}, {} terms (5K+2 = {}), root equation vs index-by-index {root_err:.1e}, full-rank vs dense derivative {dense_err:.1e} (≤ 1e-7)",
            if tree_ok { "matches" } else { "differs" },
            g.terms.len(),
            5 * k + 2
        ),
    ))
}

/// Run the given criteria in order, A6 after the runs it inspects.
pub fn run_criteria(ids: &[&str], suite: &mut Suite, report: &mut dyn FnMut(&Outcome)) -> Vec<Outcome> {
    let mut order: Vec<&str> = ids.iter().copied().filter(|&i| i != "A6").collect();
    if ids.contains(&"A6") {
        let pos = order.iter().position(|&i| i == "A7" || i == "A8" || i == "A9" || i == "A10").unwrap_or(order.len());
        order.insert(pos, "A6");
    }
    let mut out = vec![];
    for id in order {
        let o = suite.run(id);
        report(&o);
        out.push(o);
    }
    out
}
