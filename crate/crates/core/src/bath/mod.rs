//! Spectral densities and their decomposition into complex-exponential
//! bath-correlation features.

mod quadrature;

pub use quadrature::{bcf_quadrature, expint_e1, integrate_gk};

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::units::{beta_cm, cm_to_fs_inv};

/// Coupling identifier used when none is given.
pub const DEFAULT_COUPLING: &str = "q";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralKind {
    DrudeLorentz,
    BrownianOscillator,
}

/// One model spectral density term. All fields in cm⁻¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralComponent {
    pub kind: SpectralKind,
    pub lambda: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_eff: Option<f64>,
}

impl SpectralComponent {
    pub fn drude_lorentz(lambda: f64, gamma: f64) -> Self {
        Self { kind: SpectralKind::DrudeLorentz, lambda, gamma, omega_eff: None }
    }

    /// Brownian oscillator given its damped frequency ω′ = √(ω_b² − γ²).
    pub fn brownian(omega_eff: f64, lambda: f64, gamma: f64) -> Self {
        Self { kind: SpectralKind::BrownianOscillator, lambda, gamma, omega_eff: Some(omega_eff) }
    }

    /// Brownian oscillator given its natural frequency ω_b.
    pub fn brownian_natural(omega_b: f64, lambda: f64, gamma: f64) -> Result<Self> {
        if omega_b * omega_b <= gamma * gamma {
            return Err(Error::Invalid(format!(
                "Brownian oscillator is overdamped: omega_b = {omega_b} <= gamma = {gamma}"
            )));
        }
        Ok(Self::brownian((omega_b * omega_b - gamma * gamma).sqrt(), lambda, gamma))
    }

    pub fn is_drude_lorentz(&self) -> bool {
        self.kind == SpectralKind::DrudeLorentz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Invalid(format!("lambda and gamma must be positive: {self:?}")));
        }
        match self.kind {
            SpectralKind::DrudeLorentz => Ok(()),
            SpectralKind::BrownianOscillator => match self.omega_eff {
                Some(w) if w > 0.0 => Ok(()),
                _ => Err(Error::Invalid(format!("Brownian oscillator needs omega_eff > 0: {self:?}"))),
            },
        }
    }

    fn omega_b2(&self) -> f64 {
        let w = self.omega_eff.unwrap_or(0.0);
        w * w + self.gamma * self.gamma
    }

    /// J(ω) for real ω.
    pub fn j(&self, w: f64) -> f64 {
        self.j_complex(C64::new(w, 0.0)).re
    }

    /// Analytic continuation of J.
    pub fn j_complex(&self, w: C64) -> C64 {
        let (l, g) = (self.lambda, self.gamma);
        match self.kind {
            SpectralKind::DrudeLorentz => 2.0 * l / PI * g * w / (w * w + g * g),
            SpectralKind::BrownianOscillator => {
                let wb2 = self.omega_b2();
                let d = (w * w - wb2) * (w * w - wb2) + 4.0 * g * g * w * w;
                4.0 * l / PI * g * wb2 * w / d
            }
        }
    }

    /// All poles p of J with residues r, so that J(ω) = Σ r/(ω − p).
    pub fn partial_fractions(&self) -> Vec<(C64, C64)> {
        let (l, g) = (self.lambda, self.gamma);
        match self.kind {
            SpectralKind::DrudeLorentz => {
                let r = C64::new(l * g / PI, 0.0);
                vec![(C64::new(0.0, g), r), (C64::new(0.0, -g), r)]
            }
            SpectralKind::BrownianOscillator => {
                let w = self.omega_eff.unwrap_or(0.0);
                let wb2 = self.omega_b2();
                let mut out = Vec::with_capacity(4);
                for &(sr, si) in &[(1.0, -1.0), (-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                    let p = C64::new(sr * w, si * g);
                    let dprime = 4.0 * p * (p * p - wb2) + 8.0 * g * g * p;
                    out.push((p, 4.0 * l / PI * g * wb2 * p / dprime));
                }
                out
            }
        }
    }

    /// Poles in the lower half-plane, in feature order.
    fn lower_poles(&self) -> Vec<(C64, C64)> {
        self.partial_fractions().into_iter().filter(|(p, _)| p.im < 0.0).collect()
    }
}

/// One exponential term of C(t) = Σ c_k e^{γ_k t}. Amplitudes in cm⁻², γ in cm⁻¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub c: C64,
    pub c_bar: C64,
    pub gamma_exp: C64,
    pub coupling_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub features: Vec<Feature>,
    pub temperature: f64,
    pub n_pade: usize,
}

/// Flat row of the external feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub re_c: f64,
    pub im_c: f64,
    pub re_cbar: f64,
    pub im_cbar: f64,
    pub re_gamma: f64,
    pub im_gamma: f64,
    pub coupling_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub temperature: f64,
    #[serde(default)]
    pub n_pade: usize,
    pub features: Vec<FeatureRow>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Rebind every feature to one coupling operator.
    pub fn with_coupling(mut self, id: &str) -> Self {
        for f in &mut self.features {
            f.coupling_id = id.to_string();
        }
        self
    }

    pub fn to_table(&self) -> FeatureTable {
        FeatureTable {
            temperature: self.temperature,
            n_pade: self.n_pade,
            features: self
                .features
                .iter()
                .map(|f| FeatureRow {
                    re_c: f.c.re,
                    im_c: f.c.im,
                    re_cbar: f.c_bar.re,
                    im_cbar: f.c_bar.im,
                    re_gamma: f.gamma_exp.re,
                    im_gamma: f.gamma_exp.im,
                    coupling_id: f.coupling_id.clone(),
                })
                .collect(),
        }
    }

    pub fn from_table(t: &FeatureTable) -> Result<Self> {
        let features: Vec<Feature> = t
            .features
            .iter()
            .map(|r| Feature {
                c: C64::new(r.re_c, r.im_c),
                c_bar: C64::new(r.re_cbar, r.im_cbar),
                gamma_exp: C64::new(r.re_gamma, r.im_gamma),
                coupling_id: r.coupling_id.clone(),
            })
            .collect();
        for (k, f) in features.iter().enumerate() {
            if !(f.gamma_exp.re < 0.0) {
                return Err(Error::Invalid(format!("feature {k} does not decay: gamma = {}", f.gamma_exp)));
            }
        }
        Ok(Self { features, temperature: t.temperature, n_pade: t.n_pade })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_table())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_table(&serde_json::from_str(s)?)
    }
}

/// Poles ξ_j and weights η_j of the [N−1/N] Padé approximant
/// 1/(1 − e^{−x}) ≈ 1/x + 1/2 + Σ_j 2η_j x/(x² + ξ_j²), ascending in ξ.
pub fn pade_poles(n: usize) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Ok(vec![]);
    }
    let positive_inverse = |dim: usize, offset: usize| -> Result<Vec<f64>> {
        let mut a = Array2::<f64>::zeros((dim, dim));
        for m in 0..dim.saturating_sub(1) {
            let mm = (m + 1 + offset) as f64;
            let v = 1.0 / ((2.0 * mm + 1.0) * (2.0 * mm + 3.0)).sqrt();
            a[[m, m + 1]] = v;
            a[[m + 1, m]] = v;
        }
        let ev = symmetric_eigenvalues(&a)?;
        let mut out: Vec<f64> = ev.into_iter().filter(|&e| e > 1e-12).map(|e| 2.0 / e).collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(out)
    };
    let xi = positive_inverse(2 * n, 0)?;
    let zeta = positive_inverse(2 * n - 1, 1)?;
    if xi.len() != n || zeta.len() != n - 1 {
        return Err(Error::Linalg("unexpected Pade spectrum".into()));
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut num = nf * (2.0 * nf + 3.0) / 2.0;
        for z in &zeta {
            num *= z * z - xi[j] * xi[j];
        }
        for (k, x) in xi.iter().enumerate() {
            if k != j {
                num /= x * x - xi[j] * xi[j];
            }
        }
        out.push((xi[j], num));
    }
    Ok(out)
}

/// Decompose the bath into features: one per Drude–Lorentz term, two per
/// Brownian oscillator (descending ω′), then `n_pade` pooled low-temperature
/// corrections.
pub fn decompose(components: &[SpectralComponent], temperature: f64, n_pade: usize) -> Result<FeatureSet> {
    if !(temperature > 0.0) {
        return Err(Error::Invalid("temperature must be positive".into()));
    }
    for c in components {
        c.validate()?;
    }
    let beta = beta_cm(temperature);
    let coth = |z: C64| C64::new(1.0, 0.0) / (0.5 * beta * z).tanh();
    let mut feats: Vec<Feature> = Vec::new();
    let push_pole = |feats: &mut Vec<Feature>, p: C64, r: C64| {
        let c = -PI * C64::i() * r * (coth(p) + 1.0);
        feats.push(Feature {
            c,
            c_bar: C64::new(0.0, 0.0),
            gamma_exp: -C64::i() * p,
            coupling_id: DEFAULT_COUPLING.to_string(),
        });
    };
    for c in components.iter().filter(|c| c.is_drude_lorentz()) {
        for (p, r) in c.lower_poles() {
            push_pole(&mut feats, p, r);
        }
    }
    let mut bos: Vec<&SpectralComponent> = components.iter().filter(|c| !c.is_drude_lorentz()).collect();
    // stable sort keeps input order among equal frequencies
    bos.sort_by(|a, b| b.omega_eff.partial_cmp(&a.omega_eff).unwrap());
    for c in bos {
        for (p, r) in c.lower_poles() {
            push_pole(&mut feats, p, r);
        }
    }
    if !components.is_empty() {
        for (xi, eta) in pade_poles(n_pade)? {
            let nu = xi / beta;
            let j: C64 = components.iter().map(|c| c.j_complex(C64::new(0.0, -nu))).sum();
            let c = -2.0 * PI * C64::i() * eta * j / beta;
            feats.push(Feature {
                c,
                c_bar: C64::new(0.0, 0.0),
                gamma_exp: C64::new(-nu, 0.0),
                coupling_id: DEFAULT_COUPLING.to_string(),
            });
        }
    }
    assign_conjugates(&mut feats);
    Ok(FeatureSet { features: feats, temperature, n_pade: if components.is_empty() { 0 } else { n_pade } })
}

/// c̄_k = conj(c_k′) where γ_k′ = conj(γ_k).
fn assign_conjugates(feats: &mut [Feature]) {
    let snapshot: Vec<(C64, C64)> = feats.iter().map(|f| (f.c, f.gamma_exp)).collect();
    for f in feats.iter_mut() {
        let target = f.gamma_exp.conj();
        let partner = snapshot
            .iter()
            .filter(|(_, g)| (g - target).norm() <= 1e-9 * target.norm().max(1.0))
            .map(|(c, _)| *c)
            .next();
        f.c_bar = match partner {
            Some(c) => c.conj(),
            None => f.c.conj(),
        };
    }
}

/// Σ_k c_k e^{γ_k t}, in cm⁻², at time `t_fs`.
pub fn reconstruct(fs: &FeatureSet, t_fs: f64) -> C64 {
    fs.features
        .iter()
        .map(|f| f.c * (f.gamma_exp * cm_to_fs_inv(t_fs)).exp())
        .sum()
}

/// Σ_k c̄_k e^{γ_k t}: the decomposition of C*(t).
pub fn reconstruct_conj(fs: &FeatureSet, t_fs: f64) -> C64 {
    fs.features
        .iter()
        .map(|f| f.c_bar * (f.gamma_exp * cm_to_fs_inv(t_fs)).exp())
        .sum()
}

/// Table 1 spectral density: one Drude–Lorentz solvent term and eight
/// Brownian oscillators (ω′, λ, γ) in cm⁻¹.
pub fn thymine_components() -> Vec<SpectralComponent> {
    let mut v = vec![SpectralComponent::drude_lorentz(715.73, 54.45)];
    for &(w, l) in &[
        (1663.0, 330.0),
        (1416.0, 25.6),
        (1376.0, 186.0),
        (1243.0, 161.7),
        (1193.0, 77.3),
        (784.0, 26.5),
        (665.0, 32.0),
        (442.0, 14.9),
    ] {
        v.push(SpectralComponent::brownian(w, l, 50.0));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pade_f(x: f64, poles: &[(f64, f64)]) -> f64 {
        1.0 / x + 0.5 + poles.iter().map(|(xi, eta)| 2.0 * eta * x / (x * x + xi * xi)).sum::<f64>()
    }

    #[test]
    fn pade_single_pole_matches_series() {
        // [0/1]: matching x/12 and -x^3/720 gives ξ² = 60, η = 5/2
        let p = pade_poles(1).unwrap();
        assert!((p[0].0 - 60f64.sqrt()).abs() < 1e-12);
        assert!((p[0].1 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pade_converges_to_bose_function() {
        let exact = |x: f64| 1.0 / (1.0 - (-x).exp());
        let mut prev = f64::INFINITY;
        for n in 1..=5 {
            let p = pade_poles(n).unwrap();
            let err = [0.5, 1.0, 3.0, 6.0, 10.0]
                .iter()
                .map(|&x| (pade_f(x, &p) - exact(x)).abs())
                .fold(0.0, f64::max);
            assert!(err < prev, "n={n} err={err}");
            prev = err;
        }
        assert!(prev < 1e-6);
        // the first pole approaches the first Matsubara frequency
        let p = pade_poles(4).unwrap();
        assert!((p[0].0 - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn drude_lorentz_single_feature() {
        let dl = SpectralComponent::drude_lorentz(715.73, 54.45);
        let fs = decompose(&[dl], 300.0, 0).unwrap();
        assert_eq!(fs.len(), 1);
        let f = &fs.features[0];
        assert!((f.gamma_exp - C64::new(-54.45, 0.0)).norm() < 1e-12);
        let beta = beta_cm(300.0);
        let expect = C64::new(715.73 * 54.45 / (0.5 * beta * 54.45).tan(), -715.73 * 54.45);
        assert!((f.c - expect).norm() < 1e-9 * expect.norm());
        assert_eq!(f.c_bar, f.c.conj());
    }

    #[test]
    fn table1_bath_has_twenty_features() {
        let fs = decompose(&thymine_components(), 300.0, 3).unwrap();
        assert_eq!(fs.len(), 20);
        assert!(fs.features.iter().all(|f| f.gamma_exp.re < 0.0));
        // oscillator pairs adjacent and in descending frequency
        let w: Vec<f64> = fs.features[1..17].iter().map(|f| f.gamma_exp.im.abs()).collect();
        for k in 0..8 {
            assert!((w[2 * k] - w[2 * k + 1]).abs() < 1e-9);
            if k > 0 {
                assert!(w[2 * k] < w[2 * k - 1]);
            }
        }
        assert!((w[0] - 1663.0).abs() < 1e-9);
        for f in &fs.features[17..] {
            assert_eq!(f.gamma_exp.im, 0.0);
        }
    }

    #[test]
    fn empty_bath() {
        let fs = decompose(&[], 300.0, 3).unwrap();
        assert!(fs.is_empty());
        assert_eq!(reconstruct(&fs, 10.0), C64::new(0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert!(decompose(&[], 0.0, 0).is_err());
        assert!(SpectralComponent::brownian_natural(40.0, 10.0, 50.0).is_err());
        let bad = SpectralComponent::drude_lorentz(-1.0, 10.0);
        assert!(decompose(&[bad], 300.0, 0).is_err());
    }

    #[test]
    fn partial_fractions_reproduce_density() {
        for c in thymine_components().iter().take(3) {
            for &w in &[10.0, 500.0, 1400.0, 3000.0] {
                let s: C64 = c.partial_fractions().iter().map(|(p, r)| r / (C64::new(w, 0.0) - p)).sum();
                assert!((s.re - c.j(w)).abs() < 1e-10 * c.j(w).abs(), "{c:?} w={w}");
                assert!(s.im.abs() < 1e-10 * c.j(w).abs());
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let fs = decompose(&thymine_components(), 300.0, 3).unwrap();
        let back = FeatureSet::from_json(&fs.to_json().unwrap()).unwrap();
        assert_eq!(fs, back);
    }

    #[test]
    fn decomposition_matches_quadrature() {
        let comps = thymine_components();
        let mut last = f64::INFINITY;
        // worst relative error over t shrinks as Padé terms are added
        for (n, bound) in [(0, 5e-2), (2, 1e-2), (8, 5e-4)] {
            let fs = decompose(&comps, 300.0, n).unwrap();
            let worst = [0.5, 1.0, 5.0, 20.0, 60.0]
                .iter()
                .map(|&t| {
                    let q = bcf_quadrature(&comps, 300.0, t).unwrap();
                    (q - reconstruct(&fs, t)).norm() / q.norm()
                })
                .fold(0.0, f64::max);
            assert!(worst < bound && worst < last, "n = {n}: {worst:e}");
            last = worst;
        }
    }
}
