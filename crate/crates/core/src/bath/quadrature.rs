//! Brute-force evaluation of the bath correlation function by adaptive
//! Gauss–Kronrod quadrature over frequency, with the high-frequency tail
//! resolved through exponential integrals.

#![allow(clippy::excessive_precision)]

use num_complex::Complex64 as C64;

use super::SpectralComponent;
use crate::error::{Error, Result};
use crate::units::{beta_cm, CM_PER_FS_INV};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One G7/K15 panel: (Kronrod estimate, |K - G|, integral of |f|).
fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    let mut abs = fc.norm() * WGK[7];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        k += (f1 + f2) * WGK[j];
        abs += (f1.norm() + f2.norm()) * WGK[j];
        if j % 2 == 1 {
            g += (f1 + f2) * WG[j / 2];
        }
    }
    (k * h, ((k - g) * h).norm(), abs * h.abs())
}

/// Adaptive Gauss–Kronrod integration of a complex integrand on `[a, b]`.
/// Returns the integral and the accumulated error estimate.
pub fn integrate_gk<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, rel: f64, abs_tol: f64) -> (C64, f64) {
    let mut stack = vec![(a, b, 0usize)];
    let mut total = C64::new(0.0, 0.0);
    let mut err = 0.0;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e, av) = gk15(f, lo, hi);
        if e <= (rel * av).max(abs_tol) || depth > 40 {
            total += v;
            err += e;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    (total, err)
}

/// Exponential integral E1(z) on the principal branch.
pub fn expint_e1(z: C64) -> C64 {
    if z.norm() <= 2.5 {
        e1_series(z)
    } else {
        e1_fraction(z)
    }
}

fn e1_series(z: C64) -> C64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    let mut sum = C64::new(0.0, 0.0);
    let mut term = C64::new(1.0, 0.0);
    for k in 1..400 {
        term *= -z / k as f64;
        let add = term / k as f64;
        sum += add;
        if add.norm() < 1e-18 * sum.norm().max(1e-300) {
            break;
        }
    }
    -EULER - z.ln() - sum
}

// modified Lentz evaluation of the continued fraction
fn e1_fraction(z: C64) -> C64 {
    let tiny = 1e-300;
    let one = C64::new(1.0, 0.0);
    let mut b = z + 1.0;
    let mut c = C64::new(1.0 / tiny, 0.0);
    let mut d = one / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = one / (d * an + b);
        c = b + C64::new(an, 0.0) / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    h * (-z).exp()
}

/// Frequency beyond which coth(βω/2) is 1 to double precision at the
/// given β (cm).
fn thermal_cutoff(beta: f64) -> f64 {
    (80.0 / beta).max(2.0e4)
}

/// C(t) from direct quadrature over the spectral density, in cm⁻².
pub fn bcf_quadrature(components: &[SpectralComponent], temperature: f64, t_fs: f64) -> Result<C64> {
    if temperature <= 0.0 {
        return Err(Error::Invalid("temperature must be positive".into()));
    }
    if t_fs < 0.0 {
        return Err(Error::Invalid("time must be non-negative".into()));
    }
    for c in components {
        c.validate()?;
    }
    if components.is_empty() {
        return Ok(C64::new(0.0, 0.0));
    }
    if t_fs == 0.0 && components.iter().any(|c| c.is_drude_lorentz()) {
        return Err(Error::Invalid(
            "Re C(0) diverges logarithmically for a Drude-Lorentz density".into(),
        ));
    }
    let beta = beta_cm(temperature);
    let tau = t_fs / CM_PER_FS_INV;
    let wc = thermal_cutoff(beta);
    let integrand = |w: f64| -> C64 {
        let j: f64 = components.iter().map(|c| c.j(w)).sum();
        let coth = 1.0 / (0.5 * beta * w).tanh();
        C64::new(j * coth * (w * tau).cos(), -j * (w * tau).sin())
    };
    // panel edges: resolve spectral peaks and, at late times, the oscillation
    let mut edges = vec![0.0];
    let period = if tau > 0.0 { 2.0 * std::f64::consts::PI / tau } else { f64::INFINITY };
    let width = (period / 2.0).min(100.0);
    let mut w = 0.0;
    while w < wc {
        w = (w + width).min(wc);
        edges.push(w);
    }
    let mut total = C64::new(0.0, 0.0);
    let mut err = 0.0;
    for win in edges.windows(2) {
        let (v, e) = integrate_gk(&integrand, win[0], win[1], 1e-12, 1e-14);
        total += v;
        err += e;
    }
    // tail: coth = 1, J = sum over its poles of Res/(w - p)
    let mut tail = C64::new(0.0, 0.0);
    if tau > 0.0 {
        for c in components {
            for (p, r) in c.partial_fractions() {
                tail += r * (-C64::i() * p * tau).exp() * expint_e1(C64::i() * tau * (wc - p));
            }
        }
    } else {
        // only reached for densities decaying faster than 1/w
        for c in components {
            for (p, r) in c.partial_fractions() {
                // int_wc^inf r/(w - p) summed over poles converges as a whole
                tail -= r * (C64::new(wc, 0.0) - p).ln();
            }
        }
    }
    let value = total + tail;
    if err > 1e-8 * value.norm().max(1e-300) {
        return Err(Error::Quadrature { estimate: err });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_integrates_polynomial_and_oscillation() {
        let (v, _) = integrate_gk(&|x: f64| C64::new(x * x, 0.0), 0.0, 3.0, 1e-12, 0.0);
        assert!((v.re - 9.0).abs() < 1e-12);
        let (v, _) = integrate_gk(&|x: f64| C64::new(x.cos(), -x.sin()), 0.0, 10.0, 1e-12, 1e-15);
        let exact = C64::new(10f64.sin(), 10f64.cos() - 1.0);
        assert!((v - exact).norm() < 1e-11);
    }

    #[test]
    fn e1_series_and_fraction_agree() {
        for &z in &[C64::new(-0.2, 3.0), C64::new(0.3, 2.8), C64::new(-0.05, 5.0), C64::new(3.0, 1.0)] {
            let a = e1_series(z);
            let b = e1_fraction(z);
            assert!((a - b).norm() < 1e-11 * a.norm(), "z={z} {a} {b}");
        }
    }

    #[test]
    fn e1_matches_integral_definition() {
        // E1(z) = int_1^inf e^{-zs}/s ds for Re z > 0, mapped to u = 1/s
        for &z in &[C64::new(0.5, 1.0), C64::new(2.0, 2.0), C64::new(1.5, 0.5), C64::new(3.0, 0.0)] {
            let f = |u: f64| {
                if u <= 0.0 {
                    return C64::new(0.0, 0.0);
                }
                (-z / u).exp() / u
            };
            let (q, _) = integrate_gk(&f, 0.0, 1.0, 1e-13, 1e-15);
            let e = expint_e1(z);
            assert!((q - e).norm() < 1e-9 * e.norm().max(1.0), "z={z} q={q} e={e}");
        }
    }

    #[test]
    fn e1_real_reference() {
        // E1(1) = 0.219383934395520...
        let e = expint_e1(C64::new(1.0, 0.0));
        assert!((e.re - 0.219_383_934_395_520_3).abs() < 1e-13 && e.im.abs() < 1e-15);
        let e = expint_e1(C64::new(5.0, 0.0));
        assert!((e.re - 0.001_148_295_591_275_326).abs() < 1e-15);
    }
}
