//! Sum-of-product Liouvillian of the bexcitonic HEOM.
//!
//! Each term is `coeff · envelope(t) · S ⊗ B_k` where `S` is a system
//! superoperator acting on either the ket or the bra index (or identity) and
//! `B_k` an optional ladder factor on one bexciton. Coefficients are stored in
//! fs⁻¹.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bath::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{I, ONE, ZERO};
use crate::units::{cm_to_fs_inv, CM_PER_FS_INV};

/// Scalar time profile of a drive term. Amplitudes are dimensionless
/// multipliers of the drive matrix; frequencies in cm⁻¹, times in fs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    Constant { amplitude: f64 },
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
    GaussianPulse { amplitude: f64, center: f64, width: f64 },
}

impl Envelope {
    pub fn eval(&self, t_fs: f64) -> f64 {
        match *self {
            Envelope::Constant { amplitude } => amplitude,
            Envelope::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (cm_to_fs_inv(frequency) * t_fs + phase).cos()
            }
            Envelope::GaussianPulse { amplitude, center, width } => {
                let x = (t_fs - center) / width;
                amplitude * (-0.5 * x * x).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Envelope::GaussianPulse { width, .. } if !(width > 0.0) => {
                Err(Error::Invalid("gaussian pulse width must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// System part of the model. Energies in cm⁻¹.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub dim: usize,
    pub h0: Array2<C64>,
    pub drives: Vec<(Envelope, Array2<C64>)>,
    pub couplings: BTreeMap<String, Array2<C64>>,
}

fn check_hermitian(name: &str, m: &Array2<C64>, dim: usize) -> Result<()> {
    if m.dim() != (dim, dim) {
        return Err(Error::Invalid(format!("{name} must be {dim}x{dim}, got {:?}", m.dim())));
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for i in 0..dim {
        for j in 0..dim {
            if (m[[i, j]] - m[[j, i]].conj()).norm() > 1e-12 * scale {
                return Err(Error::Invalid(format!("{name} is not Hermitian")));
            }
        }
    }
    Ok(())
}

impl SystemModel {
    /// H = E/2 (|1⟩⟨1| − |0⟩⟨0|) + V (|1⟩⟨0| + |0⟩⟨1|), Q = ½(|1⟩⟨1| − |0⟩⟨0|).
    pub fn two_level(e: f64, v: f64) -> Self {
        let h0 = Array2::from_shape_vec(
            (2, 2),
            vec![C64::new(-0.5 * e, 0.0), C64::new(v, 0.0), C64::new(v, 0.0), C64::new(0.5 * e, 0.0)],
        )
        .unwrap();
        let q = Array2::from_shape_vec((2, 2), vec![C64::new(-0.5, 0.0), ZERO, ZERO, C64::new(0.5, 0.0)])
            .unwrap();
        let mut couplings = BTreeMap::new();
        couplings.insert(crate::bath::DEFAULT_COUPLING.to_string(), q);
        Self { dim: 2, h0, drives: vec![], couplings }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("system dimension must be positive".into()));
        }
        check_hermitian("h0", &self.h0, self.dim)?;
        for (k, (env, m)) in self.drives.iter().enumerate() {
            env.validate()?;
            check_hermitian(&format!("drive {k}"), m, self.dim)?;
        }
        for (id, q) in &self.couplings {
            check_hermitian(&format!("coupling {id}"), q, self.dim)?;
        }
        Ok(())
    }
}

/// Truncation depths and metric scalars, one per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BexcitonSpace {
    pub depths: Vec<usize>,
    pub metric_z: Vec<C64>,
}

impl BexcitonSpace {
    pub fn uniform(features: &FeatureSet, depth: usize) -> Self {
        Self { depths: vec![depth; features.len()], metric_z: default_metric(features) }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.depths.len() != k || self.metric_z.len() != k {
            return Err(Error::Invalid(format!(
                "bexciton space has {} depths and {} metrics for {k} features",
                self.depths.len(),
                self.metric_z.len()
            )));
        }
        if let Some(n) = self.depths.iter().find(|&&n| n < 2) {
            return Err(Error::Invalid(format!("depth {n} < 2")));
        }
        if self.metric_z.iter().any(|z| z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Invalid("metric must be finite and non-zero".into()));
        }
        Ok(())
    }
}

/// Scalar metric choice. Any non-zero z_k gives the same ρ_S; it only
/// rescales the auxiliary tiers, which matters for low-rank compression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// z_k = i√max(|c_k|, |c̄_k|).
    #[default]
    Balanced,
    /// z_k = i√(Re c_k), falling back to i√|c_k| when Re c_k ≤ 0.
    RealPart,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "real_part" => Ok(Self::RealPart),
            _ => Err(Error::Invalid(format!("unknown metric '{s}' (balanced | real_part)"))),
        }
    }
}

pub fn metric(features: &FeatureSet, kind: MetricKind) -> Vec<C64> {
    features
        .features
        .iter()
        .map(|f| {
            let m = match kind {
                // the Brownian partner poles have |c| ≪ |c̄|; scaling by the
                // larger one keeps the raising coefficients c̄/z bounded
                MetricKind::Balanced => f.c.norm().max(f.c_bar.norm()).sqrt(),
                MetricKind::RealPart if f.c.re > 0.0 => f.c.re.sqrt(),
                MetricKind::RealPart => f.c.norm().sqrt(),
            };
            C64::new(0.0, m)
        })
        .collect()
}

pub fn default_metric(features: &FeatureSet) -> Vec<C64> {
    metric(features, MetricKind::default())
}

/// Raising and lowering operators truncated to `n` levels, row-major.
pub fn ladder_ops(n: usize) -> Result<(Array2<C64>, Array2<C64>)> {
    if n < 2 {
        return Err(Error::Invalid(format!("ladder depth {n} < 2")));
    }
    let mut raise = Array2::zeros((n, n));
    let mut lower = Array2::zeros((n, n));
    for k in 0..n - 1 {
        let s = C64::new(((k + 1) as f64).sqrt(), 0.0);
        raise[[k + 1, k]] = s;
        lower[[k, k + 1]] = s;
    }
    Ok((raise, lower))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BexOp {
    Number,
    Raise,
    Lower,
}

impl BexOp {
    pub fn matrix(self, n: usize) -> Array2<C64> {
        let (raise, lower) = ladder_ops(n).expect("depth validated");
        match self {
            BexOp::Number => Array2::from_shape_fn((n, n), |(i, j)| if i == j { C64::new(i as f64, 0.0) } else { ZERO }),
            BexOp::Raise => raise,
            BexOp::Lower => lower,
        }
    }
}

/// System superoperator factor. A matrix applied on the bra index is the one
/// that multiplies that index from the left, so `ρ X†` stores `conj(X)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Channel {
    Identity,
    Ket(Array2<C64>),
    Bra(Array2<C64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SopTerm {
    /// fs⁻¹
    pub coeff: C64,
    pub envelope: Option<usize>,
    pub channel: usize,
    pub bex: Option<(usize, BexOp)>,
}

impl SopTerm {
    pub fn time_dependent(&self) -> bool {
        self.envelope.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SopGenerator {
    pub dim: usize,
    pub depths: Vec<usize>,
    /// Channel 0 is always the identity.
    pub channels: Vec<Channel>,
    pub envelopes: Vec<Envelope>,
    pub terms: Vec<SopTerm>,
}

/// The generator at a fixed time, summed per channel.
#[derive(Clone, Debug)]
pub struct FrozenGenerator {
    pub dim: usize,
    pub depths: Vec<usize>,
    pub channels: Vec<Channel>,
    /// Scalar multiplying each channel for terms without a bexciton factor.
    pub sys_coeff: Vec<C64>,
    /// Per bexciton: (channel, Σ coeff·op) with N_k×N_k row-major matrices.
    pub bex_ops: Vec<Vec<(usize, Array2<C64>)>>,
    /// Channels that carry at least one bexciton factor.
    pub active: Vec<bool>,
}

impl SopGenerator {
    pub fn k(&self) -> usize {
        self.depths.len()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.terms.iter().any(|t| t.time_dependent())
    }

    /// Ket and bra matrices of a term (identity where the channel does not act).
    pub fn system_factors(&self, term: &SopTerm) -> (Array2<C64>, Array2<C64>) {
        let id = Array2::from_shape_fn((self.dim, self.dim), |(i, j)| if i == j { ONE } else { ZERO });
        match &self.channels[term.channel] {
            Channel::Identity => (id.clone(), id),
            Channel::Ket(m) => (m.clone(), id),
            Channel::Bra(m) => (id, m.clone()),
        }
    }

    pub fn term_coeff(&self, term: &SopTerm, t_fs: f64) -> C64 {
        match term.envelope {
            Some(e) => term.coeff * self.envelopes[e].eval(t_fs),
            None => term.coeff,
        }
    }

    pub fn freeze(&self, t_fs: f64) -> FrozenGenerator {
        let nc = self.channels.len();
        let mut sys_coeff = vec![ZERO; nc];
        let mut bex_ops: Vec<Vec<(usize, Array2<C64>)>> = vec![vec![]; self.k()];
        let mut active = vec![false; nc];
        for term in &self.terms {
            let c = self.term_coeff(term, t_fs);
            match term.bex {
                None => sys_coeff[term.channel] += c,
                Some((k, op)) => {
                    active[term.channel] = true;
                    let m = op.matrix(self.depths[k]).mapv(|x| x * c);
                    match bex_ops[k].iter_mut().find(|(ch, _)| *ch == term.channel) {
                        Some((_, acc)) => *acc += &m,
                        None => bex_ops[k].push((term.channel, m)),
                    }
                }
            }
        }
        for ops in &mut bex_ops {
            ops.sort_by_key(|(ch, _)| *ch);
        }
        FrozenGenerator { dim: self.dim, depths: self.depths.clone(), channels: self.channels.clone(), sys_coeff, bex_ops, active }
    }
}

/// Assemble the 5K + 2·(1 + #drives) terms.
pub fn build_generator(model: &SystemModel, features: &FeatureSet, space: &BexcitonSpace) -> Result<SopGenerator> {
    model.validate()?;
    space.validate(features.len())?;
    let s = 1.0 / CM_PER_FS_INV;
    let mut channels = vec![Channel::Identity];
    let mut envelopes = vec![];
    let mut terms = vec![];

    let push_hamiltonian = |channels: &mut Vec<Channel>, terms: &mut Vec<SopTerm>, h: &Array2<C64>, env: Option<usize>| {
        channels.push(Channel::Ket(h.clone()));
        terms.push(SopTerm { coeff: -I * s, envelope: env, channel: channels.len() - 1, bex: None });
        channels.push(Channel::Bra(h.mapv(|z| z.conj())));
        terms.push(SopTerm { coeff: I * s, envelope: env, channel: channels.len() - 1, bex: None });
    };
    push_hamiltonian(&mut channels, &mut terms, &model.h0, None);
    for (env, h) in &model.drives {
        envelopes.push(env.clone());
        push_hamiltonian(&mut channels, &mut terms, h, Some(envelopes.len() - 1));
    }

    let mut coupling_channels: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (k, f) in features.features.iter().enumerate() {
        let (ket, bra) = match coupling_channels.get(f.coupling_id.as_str()) {
            Some(&p) => p,
            None => {
                let q = model.couplings.get(&f.coupling_id).ok_or_else(|| {
                    Error::Invalid(format!("feature {k} refers to unknown coupling '{}'", f.coupling_id))
                })?;
                channels.push(Channel::Ket(q.clone()));
                channels.push(Channel::Bra(q.mapv(|z| z.conj())));
                let p = (channels.len() - 2, channels.len() - 1);
                coupling_channels.insert(f.coupling_id.as_str(), p);
                p
            }
        };
        let z = space.metric_z[k];
        let zi = ONE / z;
        let mut term = |coeff: C64, channel: usize, op: BexOp| {
            terms.push(SopTerm { coeff: coeff * s, envelope: None, channel, bex: Some((k, op)) });
        };
        term(f.gamma_exp, 0, BexOp::Number);
        term(f.c * zi, ket, BexOp::Raise);
        term(-f.c_bar * zi, bra, BexOp::Raise);
        term(-z, ket, BexOp::Lower);
        term(z, bra, BexOp::Lower);
    }
    Ok(SopGenerator { dim: model.dim, depths: space.depths.clone(), channels, envelopes, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{decompose, thymine_components, SpectralComponent};

    fn mat_eq(a: &Array2<C64>, b: &Array2<C64>) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() < 1e-14)
    }

    #[test]
    fn ladder_small() {
        let (r, l) = ladder_ops(2).unwrap();
        assert!(mat_eq(&r, &Array2::from_shape_vec((2, 2), vec![ZERO, ZERO, ONE, ZERO]).unwrap()));
        assert!(mat_eq(&l, &Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ZERO, ZERO]).unwrap()));
        let (r, _) = ladder_ops(3).unwrap();
        assert!((r[[2, 1]].re - 2f64.sqrt()).abs() < 1e-15);
        assert!(ladder_ops(1).is_err());
    }

    #[test]
    fn ladder_commutator_truncated() {
        let n = 6;
        let (r, l) = ladder_ops(n).unwrap();
        let c = l.dot(&r) - r.dot(&l);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j && i < n - 1 { ONE } else { ZERO };
                if i == n - 1 && j == n - 1 {
                    assert!((c[[i, j]].re + (n as f64 - 1.0)).abs() < 1e-12);
                } else {
                    assert!((c[[i, j]] - expect).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn metric_examples() {
        let mut fs = decompose(&[SpectralComponent::drude_lorentz(100.0, 50.0)], 300.0, 0).unwrap();
        fs.features[0].c = C64::new(4.0, 0.0);
        fs.features[0].c_bar = C64::new(4.0, 0.0);
        assert_eq!(default_metric(&fs)[0], C64::new(0.0, 2.0));
        assert_eq!(metric(&fs, MetricKind::RealPart)[0], C64::new(0.0, 2.0));
        fs.features[0].c = C64::new(-3.0, 4.0);
        assert!((metric(&fs, MetricKind::RealPart)[0] - C64::new(0.0, 5f64.sqrt())).norm() < 1e-14);
        // Brownian partner: small c, large c̄
        fs.features[0].c = C64::new(1.0, 0.5);
        fs.features[0].c_bar = C64::new(9.0, 0.0);
        assert_eq!(default_metric(&fs)[0], C64::new(0.0, 3.0));
        assert_eq!(metric(&fs, MetricKind::RealPart)[0], C64::new(0.0, 1.0));
    }

    #[test]
    fn term_counts() {
        let model = SystemModel::two_level(0.0, 1000.0);
        let fs = decompose(&[SpectralComponent::drude_lorentz(715.73, 54.45)], 300.0, 0).unwrap();
        let g = build_generator(&model, &fs, &BexcitonSpace::uniform(&fs, 4)).unwrap();
        assert_eq!(g.len(), 7);
        let fs0 = decompose(&[], 300.0, 0).unwrap();
        let g0 = build_generator(&model, &fs0, &BexcitonSpace::uniform(&fs0, 4)).unwrap();
        assert_eq!(g0.len(), 2);
        let fs20 = decompose(&thymine_components(), 300.0, 3).unwrap();
        let g20 = build_generator(&model, &fs20, &BexcitonSpace::uniform(&fs20, 3)).unwrap();
        assert_eq!(g20.len(), 102);
        let mut driven = model.clone();
        driven.drives.push((Envelope::Sinusoid { amplitude: 1.0, frequency: 100.0, phase: 0.0 }, model.h0.clone()));
        let gd = build_generator(&driven, &fs20, &BexcitonSpace::uniform(&fs20, 3)).unwrap();
        assert_eq!(gd.len(), 104);
        assert!(gd.is_time_dependent() && !g20.is_time_dependent());
    }

    #[test]
    fn unresolved_coupling() {
        let model = SystemModel::two_level(0.0, 1000.0);
        let fs = decompose(&[SpectralComponent::drude_lorentz(715.73, 54.45)], 300.0, 0).unwrap().with_coupling("x");
        assert!(build_generator(&model, &fs, &BexcitonSpace::uniform(&fs, 4)).is_err());
        let mut space = BexcitonSpace::uniform(&fs, 4);
        space.metric_z[0] = ZERO;
        let fs = fs.with_coupling("q");
        assert!(build_generator(&model, &fs, &space).is_err());
    }

    #[test]
    fn envelopes() {
        let e = Envelope::Sinusoid { amplitude: 2.0, frequency: CM_PER_FS_INV, phase: 0.0 };
        assert!((e.eval(std::f64::consts::PI) + 2.0).abs() < 1e-12);
        let g = Envelope::GaussianPulse { amplitude: 1.0, center: 5.0, width: 2.0 };
        assert!((g.eval(7.0) - (-0.5f64).exp()).abs() < 1e-15);
    }
}
