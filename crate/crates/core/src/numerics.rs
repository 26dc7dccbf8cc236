//! Scalar kernels used by the bandwidth allocator: the lower real branch of
//! the Lambert W function and a bracketing bisection root finder.

use std::f64::consts::E;

use thiserror::Error;

/// The branch point `-1/e` shared by W₀ and W₋₁.
pub const BRANCH_POINT: f64 = -1.0 / E;

const HALLEY_MAX_ITERS: usize = 100;
const BISECT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("W-1 is real-valued only on [-1/e, 0), got {0}")]
    Domain(f64),
    #[error("W-1(-l*exp(-l)) needs 0 < l < 1, got {0}")]
    ExpProductDomain(f64),
    #[error("root is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("invalid bracket or tolerance: lo = {lo}, hi = {hi}, tol = {tol}")]
    InvalidInterval { lo: f64, hi: f64, tol: f64 },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
}

/// An argument on which W₋₁ is real: `-1/e <= x < 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LambertArg(f64);

impl LambertArg {
    pub fn new(x: f64) -> Result<Self, NumericsError> {
        if !x.is_finite() || x >= 0.0 || branch_offset(x) < -4.0 * f64::EPSILON {
            return Err(NumericsError::Domain(x));
        }
        Ok(Self(x))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `1 + e*x`, the scaled distance of `x` from the branch point.
fn branch_offset(x: f64) -> f64 {
    E.mul_add(x, 1.0)
}

/// Lower real branch W₋₁ of the Lambert W function.
///
/// Returns `w <= -1` with `w * exp(w) == x`. Arguments within a few ulps
/// below `-1/e` are treated as the branch point.
pub fn lambert_w_minus1(x: f64) -> Result<f64, NumericsError> {
    let x = LambertArg::new(x)?.value();
    let q = branch_offset(x);
    // Within rounding of -1/e the root is only determined to ~sqrt(eps).
    if q <= 4.0 * f64::EPSILON {
        return Ok(-1.0);
    }

    let mut w = if q < 0.25 {
        // Series about the branch point in p = -sqrt(2(1 + e x)).
        let p = -(2.0 * q).sqrt();
        -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0))))
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };

    for _ in 0..HALLEY_MAX_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= 2.0 * f64::EPSILON * x.abs() {
            return Ok(w);
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            return Ok(w);
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).min(-1.0);
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.abs() {
            return Ok(next);
        }
        w = next;
    }

    let residual = (w * w.exp() - x).abs() / x.abs();
    if residual <= 1e-12 {
        Ok(w)
    } else {
        Err(NumericsError::NoConvergence(HALLEY_MAX_ITERS))
    }
}

/// `W₋₁(-l * exp(-l))` for `0 < l < 1`.
///
/// This is the root `w < -1` of `w e^w = l e^{-l}` conjugate to `w = -l`.
/// Near `l = 1` the argument sits within rounding of the branch point, so the
/// root is solved for directly in `v = w + 1` from
/// `v + ln(1 - v) = d + ln(1 - d)` with `d = 1 - l`, which never forms the
/// ill-conditioned product.
pub fn lambert_w_minus1_exp_product(l: f64) -> Result<f64, NumericsError> {
    if !(l > 0.0 && l < 1.0) {
        return Err(NumericsError::ExpProductDomain(l));
    }
    if l <= 0.5 {
        return lambert_w_minus1(-l * (-l).exp());
    }

    let d = 1.0 - l;
    let r = |t: f64| t + (-t).ln_1p();
    let target = r(d);
    let mut v = -d - 2.0 / 3.0 * d * d;
    for _ in 0..HALLEY_MAX_ITERS {
        let slope = -v / (1.0 - v);
        if slope == 0.0 {
            break;
        }
        let step = (r(v) - target) / slope;
        let next = (v - step).min(0.0);
        if (next - v).abs() <= 2.0 * f64::EPSILON * v.abs() {
            return Ok(next - 1.0);
        }
        v = next;
    }
    if v < 0.0 && (r(v) - target).abs() <= 1e-12 * target.abs() {
        Ok(v - 1.0)
    } else {
        Err(NumericsError::NoConvergence(HALLEY_MAX_ITERS))
    }
}

/// Bisection on a sign-changing bracket `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol` or no representable midpoint
/// remains.
pub fn bisect_root<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64, NumericsError>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !(tol > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(NumericsError::InvalidInterval { lo, hi, tol });
    }
    let (mut lo, mut hi) = (lo, hi);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(NumericsError::Bracket { lo, hi, f_lo, f_hi });
    }
    let lo_negative = f_lo < 0.0;

    for _ in 0..BISECT_MAX_ITERS {
        let mid = lo + 0.5 * (hi - lo);
        if hi - lo < tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(NumericsError::NoConvergence(BISECT_MAX_ITERS))
}
