//! Finite-blocklength rate quantities.
//!
//! All rates are in bits; `sinr` is a linear ratio and `c` a number of
//! channel uses.

use std::f64::consts::{LN_2, PI};

use crate::cmat::{dot, C64};
use crate::error::{Error, Result};

/// Gaussian tail `Q(x) = P[Z > x]`.
pub fn q_func(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Rational approximation of the standard normal quantile (Acklam), relative
/// error about 1e-9 before refinement.
fn normal_quantile_seed(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (-p).ln_1p()).sqrt())
    }
}

/// Inverse Gaussian tail: the `x` with `Q(x) = p`.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("q_inv needs p in (0, 1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = -normal_quantile_seed(p);
    for _ in 0..2 {
        let pdf = normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let step = (q_func(x) - p) / pdf;
        if !step.is_finite() {
            break;
        }
        x += step;
    }
    Ok(x)
}

/// Shannon capacity `log2(1 + sinr)`.
pub fn capacity(sinr: f64) -> f64 {
    sinr.ln_1p() / LN_2
}

/// Channel dispersion `(1 - (1 + sinr)^-2) / ln(2)^2`.
pub fn dispersion(sinr: f64) -> f64 {
    let one_plus = 1.0 + sinr;
    sinr * (2.0 + sinr) / (one_plus * one_plus) / (LN_2 * LN_2)
}

/// Achievable bits given a precomputed `Q^-1(eps)`.
pub fn fbl_bits_with_quantile(sinr: f64, c: f64, quantile: f64) -> f64 {
    c * capacity(sinr) - quantile * (c * dispersion(sinr)).sqrt() + c.log2()
}

/// Achievable bits `c C(sinr) - Q^-1(eps) sqrt(c V(sinr)) + log2(c)`.
///
/// Not clamped: the value goes below `log2(c)` (and can go negative) when
/// the dispersion penalty outweighs the capacity term.
pub fn fbl_bits(sinr: f64, c: f64, eps: f64) -> f64 {
    let q = q_inv(eps).unwrap_or(f64::NAN);
    fbl_bits_with_quantile(sinr, c, q)
}

/// Normal approximation without the `log2(c)` correction; this is the form
/// that [`bler`] inverts exactly.
pub fn normal_approx_bits(sinr: f64, c: f64, eps: f64) -> f64 {
    fbl_bits(sinr, c, eps) - c.log2()
}

/// Block error probability of sending `bits` over `c` uses,
/// `Q(sqrt(c / V) (C - bits / c))`. The `log2(c)` term of [`fbl_bits`] is
/// not part of this expression; see [`bler_with_log_term`].
pub fn bler(sinr: f64, c: f64, bits: f64) -> Result<f64> {
    if !(sinr > 0.0) {
        return Err(Error::Domain(format!("bler needs sinr > 0, got {sinr}")));
    }
    Ok(q_func((c / dispersion(sinr)).sqrt() * (capacity(sinr) - bits / c)))
}

/// Exact inverse of [`fbl_bits`] in `eps`.
pub fn bler_with_log_term(sinr: f64, c: f64, bits: f64) -> Result<f64> {
    bler(sinr, c, bits - c.log2())
}

/// SINR of every actuator given the composite rows `g_k` and beamformers `w_k`.
pub fn sinr_vector(composite: &[Vec<C64>], beams: &[Vec<C64>], sigma2: f64) -> Vec<f64> {
    composite
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (i, w) in beams.iter().enumerate() {
                let p = dot(g, w).norm_sqr();
                if i == k {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            signal / (interference + sigma2)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerm {
    /// `c C(sinr) + log2(c)`.
    pub v: f64,
    /// `sqrt(c V(sinr))`.
    pub w: f64,
    /// `v - Q^-1(eps) w`.
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub terms: Vec<ObjectiveTerm>,
}

/// Sum of achievable bits over actuators at a common target BLER.
pub fn total_objective(sinr: &[f64], c: &[u32], eps_th: f64) -> Result<Objective> {
    if sinr.len() != c.len() {
        return Err(Error::Dimension(format!(
            "{} SINR values for {} blocklengths",
            sinr.len(),
            c.len()
        )));
    }
    let q = q_inv(eps_th)?;
    let terms: Vec<ObjectiveTerm> = sinr
        .iter()
        .zip(c)
        .map(|(&s, &ck)| {
            let ck = ck as f64;
            let v = ck * capacity(s) + ck.log2();
            let w = (ck * dispersion(s)).sqrt();
            ObjectiveTerm { v, w, bits: v - q * w }
        })
        .collect();
    Ok(Objective {
        total: terms.iter().map(|t| t.bits).sum(),
        terms,
    })
}

/// Infinite-blocklength reference `sum_k c_k log2(1 + sinr_k)`.
pub fn shannon_sum(sinr: &[f64], c: &[u32]) -> f64 {
    sinr.iter().zip(c).map(|(&s, &ck)| ck as f64 * capacity(s)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn q_examples() {
        assert_eq!(q_inv(0.5).unwrap(), 0.0);
        assert_eq!(q_func(0.0), 0.5);
        assert!(rel(q_inv(1e-8).unwrap(), 5.612_001_244_174_789) < 1e-12);
        assert!(rel(q_inv(1e-5).unwrap(), 4.264_890_793_922_825) < 1e-12);
        assert!(q_inv(0.0).is_err());
        assert!(q_inv(1.0).is_err());
        assert!(q_inv(f64::NAN).is_err());
    }

    #[test]
    fn q_inv_round_trip_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for e in 1..=300 {
            let p = 10f64.powf(-(e as f64) * 0.999);
            let x = q_inv(p).unwrap();
            assert!((q_func(x) - p).abs() <= 1e-10 * p.max(1e-300), "p={p}");
            assert!(x > prev);
            prev = x;
        }
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let x = q_inv(p).unwrap();
            assert!((q_func(x) - p).abs() <= 1e-10 * p);
        }
    }

    #[test]
    fn q_func_inverse_on_grid() {
        // below about -5.4, Q(x) sits within a few ulps of 1 and the
        // round trip is limited by the rounding of Q(x) itself
        for i in -800..=800 {
            let x = i as f64 / 100.0;
            let tol = 1e-9 + f64::EPSILON / normal_pdf(x);
            assert!((q_inv(q_func(x)).unwrap() - x).abs() < tol, "x={x}");
            if x >= -5.0 {
                assert!((q_inv(q_func(x)).unwrap() - x).abs() < 1e-9, "x={x}");
            }
        }
    }

    #[test]
    fn dispersion_examples() {
        assert_eq!(dispersion(0.0), 0.0);
        let limit = 1.0 / (LN_2 * LN_2);
        assert!(rel(dispersion(1e12), limit) < 1e-12);
        assert!((limit - 2.081_368_981_005_608).abs() < 1e-12);
        assert!(rel(dispersion(1.0), 0.75 * limit) < 1e-14);
        let mut prev = 0.0;
        for i in 1..500 {
            let v = dispersion(i as f64 * 0.05);
            assert!(v > prev && v < limit);
            prev = v;
        }
    }

    #[test]
    fn fbl_examples() {
        for c in [1.0, 10.0, 37.0] {
            assert!(rel(fbl_bits(0.0, c, 1e-8), c.log2()) < 1e-15 || c == 1.0);
        }
        assert_eq!(fbl_bits(0.0, 1.0, 1e-3), 0.0);
        assert!((fbl_bits(1.0, 100.0, 1e-5) - 53.357_860_437_475_41).abs() < 1e-9);
        let l = fbl_bits(3.0, 50.0, 0.5);
        assert!(rel(l, 100.0 + 50f64.log2()) < 1e-15);
    }

    #[test]
    fn fbl_monotone_and_below_shannon() {
        for &c in &[10.0, 25.0, 100.0] {
            for &eps in &[1e-8, 1e-3, 0.3] {
                let mut prev = f64::NEG_INFINITY;
                for i in 40..400 {
                    let s = i as f64 * 0.025;
                    let l = fbl_bits(s, c, eps);
                    assert!(l > prev);
                    assert!(l < c * capacity(s) + c.log2());
                    prev = l;
                }
            }
        }
    }

    #[test]
    fn shannon_recovery() {
        for &c in &[1e3, 1e5, 1e7] {
            for &s in &[0.1, 1.0, 10.0] {
                let eps = 1e-8;
                let v = dispersion(s);
                let q = q_inv(eps).unwrap();
                let bound = (q * (v / c).sqrt() + c.log2() / c) * (1.0 + 1e-12);
                assert!((fbl_bits(s, c, eps) / c - capacity(s)).abs() <= bound);
            }
        }
    }

    #[test]
    fn bler_examples() {
        let c = 100.0;
        let s = 1.0;
        assert!((bler(s, c, c * capacity(s)).unwrap() - 0.5).abs() < 1e-15);
        let tiny = bler(s, c, 1e-12).unwrap();
        let expect = q_func((c / dispersion(s)).sqrt());
        assert!(rel(tiny, expect) < 1e-9);
        assert!(tiny > 5e-16 && tiny < 7e-16);

        let l = normal_approx_bits(s, c, 1e-5);
        assert!(rel(bler(s, c, l).unwrap(), 1e-5) < 1e-8);
        let l = fbl_bits(s, c, 1e-5);
        assert!(rel(bler_with_log_term(s, c, l).unwrap(), 1e-5) < 1e-8);
        assert!(bler(0.0, c, 1.0).is_err());
    }

    #[test]
    fn sinr_examples() {
        let g = vec![vec![C64::new(1.0, 2.0), C64::new(0.5, -1.0)]];
        let w = vec![vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4)]];
        let s = sinr_vector(&g, &w, 0.25);
        assert!(rel(s[0], dot(&g[0], &w[0]).norm_sqr() / 0.25) < 1e-15);

        let g = vec![
            vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            vec![C64::new(0.0, 0.0), C64::new(0.0, 2.0)],
        ];
        let w = vec![
            vec![C64::new(3.0, 0.0), C64::new(0.0, 0.0)],
            vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        ];
        let s = sinr_vector(&g, &w, 1.0);
        assert_eq!(s, vec![9.0, 4.0]);
    }

    #[test]
    fn objective_examples() {
        let o = total_objective(&[0.0; 4], &[10; 4], 1e-8).unwrap();
        assert!(rel(o.total, 4.0 * 10f64.log2()) < 1e-15);

        let one = total_objective(&[2.5], &[40], 1e-8).unwrap();
        assert!(rel(one.total, fbl_bits(2.5, 40.0, 1e-8)) < 1e-15);

        let four = total_objective(&[2.5; 4], &[40; 4], 1e-8).unwrap();
        assert!(rel(four.total, 4.0 * one.total) < 1e-14);
        assert!(total_objective(&[1.0], &[1, 2], 1e-8).is_err());
    }
}
