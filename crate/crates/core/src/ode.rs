//! Dormand–Prince 5(4) with proportional step-size control on complex vectors.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step in fs; chosen automatically when absent.
    pub h0: Option<f64>,
    pub max_step: f64,
    /// Abort when the step falls below this (fs).
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: 1e-5, atol: 1e-7, h0: None, max_step: 1.0, min_step: 1e-7 }
    }
}

impl IntegratorConfig {
    pub fn tight() -> Self {
        Self { rtol: 1e-9, atol: 1e-11, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.max_step > 0.0 && self.min_step >= 0.0) {
            return Err(Error::Invalid(format!("bad integrator settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
    pub last_h: f64,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy_into(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        out[i] = y[i] + acc * h;
    }
}

fn err_norm(y: &[C64], y_new: &[C64], err: &[C64], cfg: &IntegratorConfig) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..y.len() {
        let sc = cfg.atol + cfg.rtol * y[i].norm().max(y_new[i].norm());
        s += (err[i].norm() / sc).powi(2);
    }
    (s / y.len() as f64).sqrt()
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(mut f: F, y: &mut [C64], t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<OdeStats>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
{
    let mut stats = OdeStats::default();
    let span = t1 - t0;
    if span == 0.0 || y.is_empty() {
        return Ok(stats);
    }
    let dir = span.signum();
    let n = y.len();
    let mut k1 = vec![C64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut k5 = k1.clone();
    let mut k6 = k1.clone();
    let mut k7 = k1.clone();
    let mut tmp = k1.clone();
    let mut y_new = k1.clone();
    let mut err = k1.clone();

    let mut t = t0;
    f(t, y, &mut k1)?;
    stats.evals += 1;

    let mut h = match cfg.h0 {
        Some(h) => h.abs().min(span.abs()),
        None => {
            // Hairer's starting-step heuristic
            let sc = |v: C64| cfg.atol + cfg.rtol * v.norm();
            let d0 = (y.iter().map(|v| (v.norm() / sc(*v)).powi(2)).sum::<f64>() / n as f64).sqrt();
            let d1 = (y.iter().zip(&k1).map(|(v, d)| (d.norm() / sc(*v)).powi(2)).sum::<f64>() / n as f64).sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            axpy_into(&mut tmp, y, dir * h0, &[(1.0, &k1)]);
            f(t + dir * h0, &tmp, &mut k2)?;
            stats.evals += 1;
            let d2 = (y.iter().zip(k2.iter().zip(&k1)).map(|(v, (a, b))| ((a - b).norm() / sc(*v)).powi(2)).sum::<f64>()
                / n as f64)
                .sqrt()
                / h0;
            let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
            (100.0 * h0).min(h1).min(span.abs())
        }
    };
    h = h.min(cfg.max_step);

    let mut first_reject = false;
    while (t1 - t) * dir > 0.0 {
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let hs = dir * h;
        axpy_into(&mut tmp, y, hs, &[(A21, &k1)]);
        f(t + C2 * hs, &tmp, &mut k2)?;
        axpy_into(&mut tmp, y, hs, &[(A31, &k1), (A32, &k2)]);
        f(t + C3 * hs, &tmp, &mut k3)?;
        axpy_into(&mut tmp, y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(t + C4 * hs, &tmp, &mut k4)?;
        axpy_into(&mut tmp, y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        f(t + C5 * hs, &tmp, &mut k5)?;
        axpy_into(&mut tmp, y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        f(t + hs, &tmp, &mut k6)?;
        axpy_into(&mut y_new, y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t1 } else { t + hs };
        f(t_new, &y_new, &mut k7)?;
        stats.evals += 6;
        for i in 0..n {
            err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * hs;
        }
        let e = err_norm(y, &y_new, &err, cfg);
        if !e.is_finite() {
            if y_new.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite("error estimate".into()));
            }
            h *= 0.1;
            first_reject = true;
            stats.rejected += 1;
        } else if e <= 1.0 {
            y.copy_from_slice(&y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            stats.accepted += 1;
            stats.last_h = h;
            let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            let fac = if first_reject { fac.min(1.0) } else { fac };
            first_reject = false;
            h = (h * fac).min(cfg.max_step);
        } else {
            stats.rejected += 1;
            first_reject = true;
            h *= (0.9 * e.powf(-0.2)).max(0.2);
        }
        if h < cfg.min_step && (t1 - t) * dir > cfg.min_step {
            return Err(Error::StepUnderflow { t, h });
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let cfg = IntegratorConfig { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        integrate(
            |_, y, dy| {
                dy[0] = C64::new(0.0, -2.0) * y[0];
                Ok(())
            },
            &mut y,
            0.0,
            3.0,
            &cfg,
        )
        .unwrap();
        let exact = C64::new(0.0, -6.0).exp();
        assert!((y[0] - exact).norm() < 1e-8);
    }

    #[test]
    fn backwards_is_inverse() {
        let f = |t: f64, y: &[C64], dy: &mut [C64]| {
            dy[0] = y[1] * (1.0 + 0.0 * t);
            dy[1] = -y[0] - y[1] * 0.3;
            Ok(())
        };
        let cfg = IntegratorConfig { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        let mut y = vec![C64::new(1.0, 0.5), C64::new(0.0, -1.0)];
        let y0 = y.clone();
        integrate(f, &mut y, 0.0, 2.0, &cfg).unwrap();
        integrate(f, &mut y, 2.0, 0.0, &cfg).unwrap();
        assert!((y[0] - y0[0]).norm() < 1e-8 && (y[1] - y0[1]).norm() < 1e-8);
    }

    #[test]
    fn order_five_convergence() {
        let run = |h: f64| {
            let mut y = vec![C64::new(1.0, 0.0)];
            let cfg = IntegratorConfig { rtol: 1e3, atol: 1e3, h0: Some(h), max_step: h, min_step: 0.0 };
            integrate(
                |t, y, dy| {
                    dy[0] = y[0] * t.cos();
                    Ok(())
                },
                &mut y,
                0.0,
                1.0,
                &cfg,
            )
            .unwrap();
            (y[0].re - 1f64.sin().exp()).abs()
        };
        let ratio = run(0.1) / run(0.05);
        assert!(ratio > 20.0 && ratio < 50.0, "ratio {ratio}");
    }

    #[test]
    fn underflow_is_reported() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let cfg = IntegratorConfig { min_step: 1e-3, ..Default::default() };
        let r = integrate(
            |t, y, dy| {
                dy[0] = y[0] * 1e6 * (1e4 * t).sin();
                Ok(())
            },
            &mut y,
            0.0,
            1.0,
            &cfg,
        );
        assert!(matches!(r, Err(Error::StepUnderflow { .. })));
    }
}
