//! Adaptive Simpson quadrature for the smooth 1-D band integrals.
//!
//! Small and self-contained on purpose: the integrands in this crate are
//! smooth, positive densities times rational kernels on finite intervals, so
//! classic adaptive Simpson with Richardson extrapolation converges fast and
//! its error estimate is trustworthy.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

struct Panel {
    value: f64,
    err: f64,
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    (fa + 4.0 * fm + fb) * h / 6.0
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> Panel {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let refined = left + right;
    let err = (refined - whole) / 15.0;
    if err.abs() <= eps || depth >= MAX_DEPTH {
        let converged = err.abs() <= eps;
        return Panel {
            value: refined + err,
            err: if converged { 0.0 } else { err.abs() },
        };
    }
    let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * eps, depth + 1);
    let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * eps, depth + 1);
    Panel {
        value: l.value + r.value,
        err: l.err + r.err,
    }
}

/// Integrates `f` over `[a, b]` to the requested relative tolerance.
///
/// The absolute budget is anchored to a 64-panel coarse estimate of the
/// integral, which is accurate enough for the positive integrands used here.
/// Returns an error carrying the achieved relative tolerance if the
/// subdivision depth runs out first.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidParameter(format!(
            "integration bounds must be finite with a < b, got [{a}, {b}]"
        )));
    }
    let mut coarse = 0.0;
    let panels = 64;
    let h = (b - a) / panels as f64;
    for k in 0..panels {
        let x0 = a + k as f64 * h;
        coarse += simpson(f(x0), f(x0 + 0.5 * h), f(x0 + h), h);
    }
    let scale = coarse.abs().max(f64::MIN_POSITIVE);
    let eps = rel_tol * scale;

    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, b - a);
    let panel = recurse(&f, a, b, fa, fm, fb, whole, eps, 0);
    let achieved = panel.err / panel.value.abs().max(f64::MIN_POSITIVE);
    if panel.err > eps {
        return Err(Error::QuadratureTolerance {
            requested: rel_tol,
            achieved,
        });
    }
    Ok(panel.value)
}
