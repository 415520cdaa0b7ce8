//! Dense reference propagator on the uncompressed extended density operator
//! `Ω[i, j, n_1, …, n_K]`, plus the analytic pure-dephasing solution.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::bath::{integrate_gk, FeatureSet, SpectralComponent};
use crate::error::{Error, Result};
use crate::generator::{Channel, SopGenerator};
use crate::linalg::{mode_product, ZERO};
use crate::ode::{integrate, IntegratorConfig};
use crate::trajectory::{Sample, Trajectory};
use crate::ttn::state::DENSE_GUARD;
use crate::units::{beta_cm, cm_to_fs_inv, CM_PER_FS_INV};

pub fn dense_dims(g: &SopGenerator) -> Vec<usize> {
    let mut d = vec![g.dim, g.dim];
    d.extend_from_slice(&g.depths);
    d
}

fn check_guard(dims: &[usize]) -> Result<usize> {
    let size: usize = dims.iter().product();
    if size > DENSE_GUARD {
        return Err(Error::Guard { size, guard: DENSE_GUARD });
    }
    Ok(size)
}

/// `ρ₀ ⊗ |0…0⟩`.
pub fn dense_init(g: &SopGenerator, rho0: &Array2<C64>) -> Result<Vec<C64>> {
    let dims = dense_dims(g);
    let size = check_guard(&dims)?;
    let stride = size / (g.dim * g.dim);
    let mut om = vec![ZERO; size];
    for i in 0..g.dim {
        for j in 0..g.dim {
            om[(i * g.dim + j) * stride] = rho0[[i, j]];
        }
    }
    Ok(om)
}

/// `Ω[:, :, 0, …, 0]`.
pub fn dense_rho(g: &SopGenerator, omega: &[C64]) -> Array2<C64> {
    let stride = omega.len() / (g.dim * g.dim);
    Array2::from_shape_fn((g.dim, g.dim), |(i, j)| omega[(i * g.dim + j) * stride])
}

/// `dΩ/dt`, applying every term by mode products.
pub fn dense_rhs(g: &SopGenerator, omega: &[C64], t: f64) -> Vec<C64> {
    let mut out = vec![ZERO; omega.len()];
    dense_rhs_into(g, omega, t, &mut out);
    out
}

fn dense_rhs_into(g: &SopGenerator, omega: &[C64], t: f64, out: &mut [C64]) {
    let dims = dense_dims(g);
    out.iter_mut().for_each(|v| *v = ZERO);
    for term in &g.terms {
        let c = g.term_coeff(term, t);
        if c == ZERO {
            continue;
        }
        let y = match term.bex {
            Some((k, op)) => {
                let m = op.matrix(g.depths[k]);
                mode_product(omega, &dims, 2 + k, m.as_slice().unwrap(), g.depths[k])
            }
            None => omega.to_vec(),
        };
        let y = match &g.channels[term.channel] {
            Channel::Identity => y,
            Channel::Ket(m) => mode_product(&y, &dims, 0, m.as_slice().unwrap(), g.dim),
            Channel::Bra(m) => mode_product(&y, &dims, 1, m.as_slice().unwrap(), g.dim),
        };
        for (o, v) in out.iter_mut().zip(&y) {
            *o += c * v;
        }
    }
}

/// Integrate an EDO in place from `t0` to `t1`.
pub fn dense_evolve(g: &SopGenerator, omega: &mut [C64], t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<()> {
    integrate(
        |tt, y, dy| {
            dense_rhs_into(g, y, tt, dy);
            Ok(())
        },
        omega,
        t0,
        t1,
        cfg,
    )?;
    Ok(())
}

/// Reference trajectory sampled every `output_dt` up to `t_end`.
pub fn dense_run(g: &SopGenerator, rho0: &Array2<C64>, t_end: f64, output_dt: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    if !(output_dt > 0.0) || t_end < 0.0 {
        return Err(Error::Invalid("need output_dt > 0 and t_end ≥ 0".into()));
    }
    let mut om = dense_init(g, rho0)?;
    let size = om.len();
    let start = Instant::now();
    let sample = |t: f64, om: &[C64]| Sample {
        t,
        rho: dense_rho(g, om),
        ranks: vec![],
        ttn_size: size,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let mut tr = Trajectory { samples: vec![sample(0.0, &om)], truncation: 0.0 };
    let n_out = (t_end / output_dt - 1e-9).ceil().max(0.0) as usize;
    let mut t = 0.0;
    for i in 1..=n_out {
        let t_next = (i as f64 * output_dt).min(t_end);
        dense_evolve(g, &mut om, t, t_next, cfg)?;
        t = t_next;
        tr.samples.push(sample(t, &om));
    }
    Ok(tr)
}

/// `Φ(t) = ∫₀ᵗ ds ∫₀ˢ du C(s−u)` in closed form for the decomposed BCF.
pub fn dephasing_phi(fs: &FeatureSet, t_fs: f64) -> C64 {
    fs.features
        .iter()
        .map(|f| {
            let g = f.gamma_exp * cm_to_fs_inv(1.0);
            let c = f.c * cm_to_fs_inv(1.0).powi(2);
            let gt = g * t_fs;
            // ∫₀ᵗ (e^{gs} − 1)/g ds
            if gt.norm() < 1e-6 {
                c * t_fs * t_fs * (0.5 + gt / 6.0)
            } else {
                c * ((gt).exp() - 1.0 - gt) / (g * g)
            }
        })
        .sum()
}

/// Same double integral by nested adaptive quadrature of `C`.
pub fn dephasing_phi_quadrature(fs: &FeatureSet, t_fs: f64) -> C64 {
    let scale = cm_to_fs_inv(1.0).powi(2);
    let c = |x: f64| crate::bath::reconstruct(fs, x) * scale;
    let inner = |s: f64| integrate_gk(&|u: f64| c(s - u), 0.0, s, 1e-12, 1e-16).0;
    integrate_gk(&inner, 0.0, t_fs, 1e-10, 1e-14).0
}

/// `Re Φ(t)` straight from the spectral density, independent of any
/// exponential decomposition:
/// `Re Φ = ∫₀^∞ J(ω) coth(βω/2) (1 − cos ωτ)/ω² dω`.
pub fn dephasing_phi_spectral(components: &[SpectralComponent], temperature: f64, t_fs: f64) -> Result<f64> {
    for c in components {
        c.validate()?;
    }
    if temperature <= 0.0 || t_fs < 0.0 {
        return Err(Error::Invalid("need T > 0 and t >= 0".into()));
    }
    let beta = beta_cm(temperature);
    let tau = t_fs / CM_PER_FS_INV;
    let f = |w: f64| -> C64 {
        if w == 0.0 {
            return ZERO;
        }
        let j: f64 = components.iter().map(|c| c.j(w)).sum();
        let s = (0.5 * w * tau).sin();
        C64::new(j / (0.5 * beta * w).tanh() * 2.0 * s * s / (w * w), 0.0)
    };
    // beyond W, coth = 1 and the cosine averages out (error ≲ J(W)/(W²τ))
    let big_w = 2.0e5;
    let width = if tau > 0.0 { (std::f64::consts::PI / tau).min(200.0) } else { 200.0 };
    let mut total = 0.0;
    let mut a = 0.0;
    while a < big_w {
        let b = (a + width).min(big_w);
        total += integrate_gk(&f, a, b, 1e-12, 1e-18).0.re;
        a = b;
    }
    // ∫_W^∞ dω/(ω²(ω − p)) = ln(W/(W − p))/p² − 1/(pW)
    let mut tail = ZERO;
    for c in components {
        for (p, r) in c.partial_fractions() {
            tail += r * ((C64::new(big_w, 0.0) / (big_w - p)).ln() / (p * p) - 1.0 / (p * big_w));
        }
    }
    Ok(total + tail.re)
}

/// Analytic `ρ(t)` of a pure-dephasing two-level system with
/// `H = E/2 (|1⟩⟨1| − |0⟩⟨0|)`, `Q = ½(|1⟩⟨1| − |0⟩⟨0|)`.
pub fn dephasing_rho(fs: &FeatureSet, e_cm: f64, rho0: &Array2<C64>, t_fs: f64) -> Array2<C64> {
    let phi = dephasing_phi(fs, t_fs);
    // (q₀ − q₁)[q₀Φ − q₁Φ*] with q = ∓½ gives Re Φ
    let decay = (-phi.re).exp();
    let phase = C64::new(0.0, cm_to_fs_inv(e_cm) * t_fs).exp();
    let mut rho = rho0.clone();
    rho[[0, 1]] = rho0[[0, 1]] * phase * decay;
    rho[[1, 0]] = rho[[0, 1]].conj();
    rho
}
