//! Modified Bessel functions of the first kind in log space, for the von
//! Mises-Fisher normalizer.
//!
//! `log I_nu(x)` uses the power series below `x = max(20, nu)` and an
//! asymptotic expansion above it: the uniform (Debye) expansion for
//! `nu >= 1`, the large-argument Hankel expansion for smaller orders. The
//! ratio `I_{nu+1}/I_nu` comes from the Gauss continued fraction.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const SERIES_MAX_TERMS: usize = 100_000;
const RATIO_MAX_ITER: usize = 1_000_000;
const UNIFORM_TERMS: usize = 13;

/// Argument at which `log_bessel_i` switches from the series to the
/// asymptotic branch.
pub fn switchover(nu: f64) -> f64 {
    nu.max(20.0)
}

/// `log I_nu(x)` for `nu >= 0`, `x > 0`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    if x < switchover(nu) {
        log_bessel_i_series(nu, x)
    } else {
        log_bessel_i_asymptotic(nu, x)
    }
}

fn check_args(nu: f64, x: f64) -> Result<()> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::Bessel(format!("order {nu} must be finite and non-negative")));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Bessel(format!("argument {x} must be finite and positive")));
    }
    Ok(())
}

/// Power series `sum_j (x/2)^(2j+nu) / (j! Gamma(j+nu+1))`, summed with
/// running rescaling so large arguments cannot overflow.
pub fn log_bessel_i_series(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    let q = 0.25 * x * x;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut log_scale = 0.0f64;
    let peak = (q.sqrt()).max(1.0);
    for j in 1..SERIES_MAX_TERMS {
        let jf = j as f64;
        term *= q / (jf * (jf + nu));
        sum += term;
        if sum > 1e250 {
            sum *= 1e-250;
            term *= 1e-250;
            log_scale += 250.0 * std::f64::consts::LN_10;
        }
        if jf > peak && term < 1e-17 * sum {
            return Ok(nu * (0.5 * x).ln() - libm::lgamma(nu + 1.0) + sum.ln() + log_scale);
        }
    }
    Err(Error::Bessel(format!(
        "series for I_{nu}({x}) did not converge in {SERIES_MAX_TERMS} terms"
    )))
}

/// Large-argument branch: uniform expansion for `nu >= 1`, Hankel expansion
/// otherwise.
pub fn log_bessel_i_asymptotic(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    if nu >= 1.0 {
        Ok(log_bessel_i_uniform(nu, x))
    } else {
        log_bessel_i_hankel(nu, x)
    }
}

/// Debye polynomials `u_k(t)` as coefficient vectors (index = power of t),
/// from `u_{k+1} = t^2 (1 - t^2) u_k' / 2 + (1/8) int_0^t (1 - 5 s^2) u_k(s) ds`.
pub fn debye_polynomials() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys = vec![vec![1.0]];
        for k in 0..UNIFORM_TERMS - 1 {
            let u = &polys[k];
            let mut next = vec![0.0; u.len() + 3];
            // t^2 (1 - t^2) u'(t) / 2
            for (p, &c) in u.iter().enumerate().skip(1) {
                let d = c * p as f64;
                next[p + 1] += 0.5 * d;
                next[p + 3] -= 0.5 * d;
            }
            // (1/8) int_0^t (1 - 5 s^2) u(s) ds
            for (p, &c) in u.iter().enumerate() {
                next[p + 1] += c / (8.0 * (p + 1) as f64);
                next[p + 3] -= 5.0 * c / (8.0 * (p + 3) as f64);
            }
            while next.last() == Some(&0.0) {
                next.pop();
            }
            polys.push(next);
        }
        polys
    })
}

fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn log_bessel_i_uniform(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut nu_pow = 1.0;
    for u in debye_polynomials() {
        let term = poly_eval(u, t) / nu_pow;
        if term.abs() > prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if prev < 1e-17 * sum.abs() {
            break;
        }
        nu_pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.5 * root.ln() + sum.ln()
}

fn log_bessel_i_hankel(nu: f64, x: f64) -> Result<f64> {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for j in 1..200 {
        let jf = j as f64;
        let odd = 2.0 * jf - 1.0;
        let next = -term * (mu - odd * odd) / (jf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    if !(sum > 0.0) {
        return Err(Error::Bessel(format!("Hankel expansion for I_{nu}({x}) lost positivity")));
    }
    Ok(x - 0.5 * (2.0 * PI * x).ln() + sum.ln())
}

/// `I_{nu+1}(x) / I_nu(x)` by the Gauss continued fraction
/// `1 / (2(nu+1)/x + 1 / (2(nu+2)/x + ...))`, evaluated with modified Lentz.
pub fn bessel_ratio(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    const TINY: f64 = 1e-300;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0f64;
    for j in 1..=RATIO_MAX_ITER {
        let b = 2.0 * (nu + j as f64) / x;
        d += b;
        if d == 0.0 {
            d = TINY;
        }
        c = b + 1.0 / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok(f);
        }
    }
    Err(Error::Bessel(format!(
        "continued fraction for I_{}({x})/I_{nu}({x}) did not converge in {RATIO_MAX_ITER} iterations",
        nu + 1.0
    )))
}

/// `log C_m(k)` for the von Mises-Fisher normalizer
/// `C_m(k) = k^(m/2-1) / ((2 pi)^(m/2) I_{m/2-1}(k))`.
pub fn log_cm(k: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Bessel(format!("dimension {m} must be at least 2")));
    }
    let half = m as f64 / 2.0;
    let nu = half - 1.0;
    let log_i = log_bessel_i(nu, k)?;
    Ok(nu * k.ln() - half * (2.0 * PI).ln() - log_i)
}
