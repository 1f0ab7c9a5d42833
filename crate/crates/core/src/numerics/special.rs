//! Standard normal and Student-t distribution functions.
//!
//! The unchecked `norm_*`/[`StudentT`] routines are used in the likelihood and
//! sampling hot loops; the `std_*`/`student_t_*` wrappers validate their input.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF (no input validation).
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal quantile (no input validation; `p` must lie in (0,1)).
///
/// Acklam's rational approximation followed by one Halley refinement step.
pub fn norm_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p == 0.5 {
        return 0.0;
    }
    let tail = |q: f64| {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let x = if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    };

    // Halley step against the erfc-based CDF, using the tail closest to p.
    let e = if x < 0.0 {
        0.5 * erfc(-x / SQRT_2) - p
    } else {
        (1.0 - p) - 0.5 * erfc(x / SQRT_2)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("normal cdf argument must be finite, got {x}"));
    }
    Ok(norm_cdf(x))
}

/// Standard normal quantile for `p` in the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("normal quantile requires p in (0,1), got {p}"));
    }
    Ok(norm_quantile(p))
}

/// Regularized incomplete beta function I_x(a, b), continued-fraction form.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Student-t distribution with `nu` degrees of freedom and cached constants.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    nu: f64,
    ln_norm: f64,
    /// `Some(k)` when nu is a small integer and the closed-form series applies.
    int_nu: Option<u32>,
}

const INT_SERIES_MAX_NU: f64 = 200.0;

impl StudentT {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return domain(format!("student-t requires nu > 0, got {nu}"));
        }
        Ok(Self::new_unchecked(nu))
    }

    pub(crate) fn new_unchecked(nu: f64) -> Self {
        let ln_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln();
        let int_nu = (nu.fract() == 0.0 && nu <= INT_SERIES_MAX_NU).then_some(nu as u32);
        Self {
            nu,
            ln_norm,
            int_nu,
        }
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    #[inline]
    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_norm - 0.5 * (self.nu + 1.0) * (x * x / self.nu).ln_1p()
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Lower-tail probability P(T <= -|x|), accurate in the far tail.
    fn lower_tail(&self, x_abs: f64) -> f64 {
        if let Some(k) = self.int_nu {
            let p = 0.5 * (1.0 - self.central_mass(x_abs, k));
            if p > 1e-3 {
                return p;
            }
        }
        let nu = self.nu;
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x_abs * x_abs))
    }

    /// P(|T| <= t) for integer degrees of freedom (closed-form series).
    fn central_mass(&self, t: f64, k: u32) -> f64 {
        let nu = k as f64;
        let theta = (t / nu.sqrt()).atan();
        let (s, c) = theta.sin_cos();
        let c2 = c * c;
        if k % 2 == 1 {
            if k == 1 {
                return 2.0 * theta / PI;
            }
            let mut term = c;
            let mut sum = c;
            let mut j = 1u32;
            while 2 * j + 1 < k {
                term *= c2 * (2 * j) as f64 / (2 * j + 1) as f64;
                sum += term;
                j += 1;
            }
            (2.0 / PI) * (theta + s * sum)
        } else {
            let mut term = 1.0;
            let mut sum = 1.0;
            let mut j = 1u32;
            while 2 * j < k {
                term *= c2 * (2 * j - 1) as f64 / (2 * j) as f64;
                sum += term;
                j += 1;
            }
            s * sum
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.5;
        }
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        let tail = self.lower_tail(x.abs());
        if x < 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }

    /// Quantile by safeguarded Newton iteration on the CDF.
    ///
    /// `p` must lie in (0,1). Works on the lower tail and reflects by symmetry.
    pub fn quantile(&self, p: f64) -> f64 {
        if p == 0.5 {
            return 0.0;
        }
        let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
        let nu = self.nu;
        if nu == 1.0 {
            return sign * (PI * q).cos() / (PI * q).sin();
        }
        if nu == 2.0 {
            return sign * (1.0 - 2.0 * q) / (2.0 * q * (1.0 - q)).sqrt();
        }

        // Tail power-law guess: always at or beyond the root.
        let lo_guess = -((self.ln_norm + 0.5 * (nu - 1.0) * nu.ln() - q.ln()) / nu).exp();
        let z = norm_quantile(q);
        let z2 = z * z;
        let cf = z
            + (z2 * z + z) / (4.0 * nu)
            + (5.0 * z2 * z2 * z + 16.0 * z2 * z + 3.0 * z) / (96.0 * nu * nu);
        let mut lo = lo_guess;
        let mut hi = 0.0;
        let mut x = if cf > lo_guess && cf < 0.0 {
            cf
        } else {
            lo_guess
        };
        for _ in 0..200 {
            let f = self.lower_tail(-x) - q;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut next = x - f / self.pdf(x);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x).abs();
            x = next;
            if step <= 1e-14 * x.abs().max(1.0) {
                break;
            }
        }
        sign * -x
    }
}

/// Student-t CDF with `nu` degrees of freedom.
pub fn student_t_cdf(x: f64, nu: f64) -> Result<f64> {
    if x.is_nan() {
        return domain("student-t cdf argument is NaN");
    }
    Ok(StudentT::new(nu)?.cdf(x))
}

/// Student-t quantile with `nu` degrees of freedom.
pub fn student_t_quantile(p: f64, nu: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("student-t quantile requires p in (0,1), got {p}"));
    }
    let dist = StudentT::new(nu)?;
    let x = dist.quantile(p);
    if !x.is_finite() {
        return Err(Error::Numeric(format!(
            "student-t quantile did not converge for p = {p}, nu = {nu}"
        )));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the normal density from `a` to `b`.
    fn simpson_normal(a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = norm_pdf(a) + norm_pdf(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * norm_pdf(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn normal_cdf_examples() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        let oracle = 0.5 + simpson_normal(0.0, 1.959964, 4000);
        assert!((oracle - 0.975).abs() < 1e-6);
        assert!((std_normal_cdf(1.959964).unwrap() - oracle).abs() < 1e-10);
        for x in [0.5, 1.0, 3.0] {
            let s = norm_cdf(x) + norm_cdf(-x);
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn normal_quantile_examples() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        // bisection against the integration oracle
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if 0.5 + simpson_normal(0.0, mid, 2000) < 0.975 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 1.959964).abs() < 1e-5);
        assert!((std_normal_quantile(0.975).unwrap() - lo).abs() < 1e-8);
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            let back = norm_quantile(norm_cdf(x));
            assert!((back - x).abs() < 1e-8, "x = {x}, back = {back}");
        }
        for p in [1e-12, 1e-6, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-9] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-9 * p.max(1e-3));
        }
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn student_t_cdf_examples() {
        for nu in [1.0, 2.5, 7.0, 30.0] {
            assert_eq!(student_t_cdf(0.0, nu).unwrap(), 0.5);
        }
        assert!((student_t_cdf(1.0, 1.0).unwrap() - 0.75).abs() < 1e-9);
        for x in [-30.0_f64, -2.0, 0.3, 4.0] {
            let cauchy = 0.5 + x.atan() / PI;
            assert!((student_t_cdf(x, 1.0).unwrap() - cauchy).abs() < 1e-12);
        }
        let big = student_t_cdf(1.959964, 1e6).unwrap();
        assert!((big - norm_cdf(1.959964)).abs() < 1e-4);
        assert!(student_t_cdf(1.0, 0.0).is_err());
        assert!(student_t_cdf(1.0, -2.0).is_err());
    }

    #[test]
    fn integer_series_matches_incomplete_beta() {
        for nu in [1.0, 2.0, 3.0, 4.0, 5.0, 8.0, 15.0, 31.0] {
            let t = StudentT::new(nu).unwrap();
            for x in [0.05, 0.4, 1.0, 2.5, 6.0, 40.0, 300.0] {
                let beta = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
                let series = t.lower_tail(x);
                assert!(
                    (beta - series).abs() < 1e-13_f64.max(1e-10 * beta),
                    "nu {nu} x {x}: {beta} vs {series}"
                );
            }
        }
    }

    #[test]
    fn student_t_symmetry_and_monotonicity() {
        for nu in [1.5, 3.0, 4.7, 20.0] {
            let t = StudentT::new(nu).unwrap();
            let mut prev = 0.0;
            for i in 0..200 {
                let x = -10.0 + 0.1 * i as f64;
                let f = t.cdf(x);
                assert!(f > prev);
                prev = f;
                assert!((t.cdf(x) + t.cdf(-x) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn student_t_quantile_examples() {
        assert_eq!(student_t_quantile(0.5, 3.0).unwrap(), 0.0);
        assert!((student_t_quantile(0.75, 1.0).unwrap() - 1.0).abs() < 1e-7);
        let cauchy = (PI * (0.9 - 0.5)).tan();
        assert!((student_t_quantile(0.9, 1.0).unwrap() - cauchy).abs() < 1e-9);
        for nu in [1.0, 1.5, 2.0, 3.0, 4.0, 6.5, 10.0, 30.0, 1e4] {
            for p in [
                1e-10,
                1e-6,
                0.001,
                0.03,
                0.2,
                0.49,
                0.51,
                0.8,
                0.97,
                0.999,
                1.0 - 1e-8,
            ] {
                let x = student_t_quantile(p, nu).unwrap();
                let back = student_t_cdf(x, nu).unwrap();
                assert!((back - p).abs() < 1e-8, "nu {nu} p {p}: x {x}, back {back}");
            }
        }
        assert!(student_t_quantile(1.0, 3.0).is_err());
        assert!(student_t_quantile(0.5, 0.0).is_err());
    }
}
