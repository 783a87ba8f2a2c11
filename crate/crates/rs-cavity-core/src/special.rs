//! Scalar root solvers: the principal Lambert W branch and the tanh fixed point.

use num_traits::Float;

use crate::error::{Error, Result};

const MAX_STEPS: usize = 64;

/// Principal branch `W0(x)` for `x >= 0`, by Halley iteration.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::OutOfDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if x > 1.0 {
        return Ok(lambert_w0_log(Float::ln(x)));
    }
    Ok(halley_direct(x, winitzki(x)))
}

/// `W0(e^la)`, valid for any real `la` without overflow.
///
/// For `la > 1` the equation is solved in the form `w + ln w = la`.
pub fn lambert_w0_log(la: f64) -> f64 {
    if la <= 1.0 {
        let x = Float::exp(la);
        if x == 0.0 {
            return 0.0;
        }
        return halley_direct(x, winitzki(x));
    }
    if la.is_infinite() {
        return la;
    }
    let l2 = Float::ln(la);
    let mut w = if la < 3.0 { winitzki(Float::exp(la)) } else { la - l2 + l2 / la };
    for _ in 0..MAX_STEPS {
        let lw = Float::ln(w);
        let f = w + lw - la;
        let f1 = 1.0 + 1.0 / w;
        let f2 = -1.0 / (w * w);
        let step = f / (f1 - 0.5 * f * f2 / f1);
        w -= step;
        if Float::abs(step) <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

fn winitzki(x: f64) -> f64 {
    let l = Float::ln_1p(x);
    l * (1.0 - Float::ln_1p(l) / (2.0 + l))
}

fn halley_direct(x: f64, mut w: f64) -> f64 {
    for _ in 0..MAX_STEPS {
        let ew = Float::exp(w);
        let f = w * ew - x;
        let step = f / (ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0));
        w -= step;
        if Float::abs(step) <= 4.0 * f64::EPSILON * Float::abs(w) || f == 0.0 {
            break;
        }
    }
    w
}

/// Unique root of `x + b tanh(x) = a` for `b >= 0`, by Newton safeguarded
/// with the bracket `[a - b, a + b]`.
pub fn solve_tanh_fixed_point(a: f64, b: f64) -> Result<f64> {
    if !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "tanh fixed point needs b >= 0, got a={a}, b={b}"
        )));
    }
    if b == 0.0 {
        return Ok(a);
    }
    let g = |x: f64| x + b * Float::tanh(x) - a;
    let (mut lo, mut hi) = (a - b, a + b);
    // Start from the linearization at the origin when the coupling is weak.
    let mut x = if Float::abs(a) < b + 1.0 {
        a / (1.0 + b)
    } else {
        a - b * Float::signum(a)
    };
    x = x.clamp(lo, hi);
    let tol = 1e-13 * (1.0 + Float::abs(a));
    for _ in 0..200 {
        let gx = g(x);
        if Float::abs(gx) <= tol {
            return Ok(x);
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let th = Float::tanh(x);
        let mut xn = x - gx / (1.0 + b * (1.0 - th * th));
        if !(xn > lo && xn < hi) {
            xn = 0.5 * (lo + hi);
        }
        if xn == x {
            return Ok(x);
        }
        x = xn;
    }
    if Float::abs(g(x)) <= 1e-12 {
        Ok(x)
    } else {
        Err(Error::RootSolve { a, b })
    }
}
