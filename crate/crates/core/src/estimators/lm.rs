//! Small dense Levenberg–Marquardt minimizer for the crate's nonlinear fits.
//!
//! Damped Gauss–Newton with a numeric central-difference Jacobian. Callers
//! are expected to pre-scale parameters to order one (the fit front-ends in
//! this module do), which keeps the relative finite-difference step
//! meaningful across parameter magnitudes that would otherwise span many
//! decades.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Relative central-difference step (against max(|p|, 0.1)).
    pub rel_step: f64,
    /// Relative cost-reduction threshold below which an accepted step counts
    /// as converged.
    pub cost_tol: f64,
    /// Optional trust-region bound: when set, a candidate step is rescaled so
    /// that no component exceeds this value (in the caller's scaled units).
    /// Keeps early near-Gauss–Newton steps from jumping out of the starting
    /// basin on landscapes with distant spurious minima.
    pub max_component_step: Option<f64>,
    /// Optional per-parameter box, in the same coordinates as `p0`. Candidate
    /// points are clamped into the box before evaluation, which terminates
    /// statistically flat cost directions that would otherwise run away.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_step: 1e-6,
            cost_tol: 1e-14,
            max_component_step: None,
            bounds: None,
        }
    }
}

pub(crate) struct LmFit {
    pub params: Vec<f64>,
    /// √SSR at the solution.
    pub residual_norm: f64,
    /// Per-parameter standard errors from s²·(JᵀJ)⁻¹ (zero when the fit has
    /// no spare degrees of freedom).
    pub stderrs: Vec<f64>,
    pub iterations: usize,
}

fn ssr(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(f: &F, p: &[f64], m: usize, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p.len();
    let mut j = DMatrix::zeros(m, n);
    let mut work = p.to_vec();
    for i in 0..n {
        let h = rel_step * p[i].abs().max(0.1);
        work[i] = p[i] + h;
        let plus = f(&work);
        work[i] = p[i] - h;
        let minus = f(&work);
        work[i] = p[i];
        for k in 0..m {
            j[(k, i)] = (plus[k] - minus[k]) / (2.0 * h);
        }
    }
    j
}

/// Minimizes ‖residuals(p)‖² starting from `p0`.
///
/// Non-convergence within the iteration cap returns
/// [`Error::FitDidNotConverge`] carrying the best parameters seen. A fit
/// that stalls (no damping level improves the cost) is treated as converged
/// at the stall point, which is the numerical minimum for this data.
pub(crate) fn minimize<F>(residuals: F, p0: &[f64], opts: &LmOptions) -> Result<LmFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    if let Some(b) = &opts.bounds {
        if b.len() != n || b.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParameter(
                "parameter bounds must match the parameter count with lo < hi".into(),
            ));
        }
    }
    let clamp = |p: &mut [f64]| {
        if let Some(b) = &opts.bounds {
            for (v, (lo, hi)) in p.iter_mut().zip(b) {
                *v = v.clamp(*lo, *hi);
            }
        }
    };
    let mut p = p0.to_vec();
    clamp(&mut p);
    let mut r = residuals(&p);
    let m = r.len();
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "underdetermined fit: {m} residuals for {n} parameters"
        )));
    }
    let mut cost = ssr(&r);
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let j = jacobian(&residuals, &p, m, opts.rel_step);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let jtr = &jt * DVector::from_column_slice(&r);
        let grad_inf = jtr.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if grad_inf <= 1e-14 * cost.max(1.0) {
            converged = true;
            break;
        }
        let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
                damped[(i, i)] += lambda * d;
            }
            let Some(mut step) = damped.lu().solve(&jtr) else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            if let Some(cap) = opts.max_component_step {
                let widest = step.amax();
                if widest > cap {
                    // rescaling a positive multiple of a damped Gauss–Newton
                    // step keeps it a descent direction
                    step *= cap / widest;
                }
            }
            let mut p_try: Vec<f64> = p.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
            clamp(&mut p_try);
            let r_try = residuals(&p_try);
            let cost_try = ssr(&r_try);
            if cost_try.is_finite() && cost_try < cost {
                let actual = cost - cost_try;
                let improvement = actual / cost.max(f64::MIN_POSITIVE);
                // gain ratio against the local quadratic model, evaluated on
                // the step actually taken (after any cap or clamp). Driving
                // the damping with it lets λ settle at the scale the valley
                // wants instead of ping-ponging a fixed decade around it,
                // which is the difference between tens and thousands of
                // iterations in a curved narrow valley.
                let d_eff = DVector::from_iterator(n, p.iter().zip(&p_try).map(|(a, b)| a - b));
                let predicted = 2.0 * d_eff.dot(&jtr) - (&jtj * &d_eff).dot(&d_eff);
                if predicted > 0.0 {
                    let f = 2.0 * (actual / predicted) - 1.0;
                    lambda = (lambda * (1.0 - f * f * f).max(1.0 / 3.0)).max(1e-12);
                } else {
                    lambda = (lambda * 0.1).max(1e-12);
                }
                nu = 2.0;
                p = p_try;
                r = r_try;
                cost = cost_try;
                accepted = true;
                if improvement < opts.cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            // no damping level improves the cost: numerical minimum reached
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(Error::FitDidNotConverge {
            iterations,
            residual_norm: cost.sqrt(),
            params: p,
        });
    }

    // covariance-based standard errors at the solution
    let j = jacobian(&residuals, &p, m, opts.rel_step);
    let jtj = j.transpose() * &j;
    let dof = m.saturating_sub(n);
    let stderrs = if dof == 0 {
        vec![0.0; n]
    } else {
        let s2 = cost / dof as f64;
        let scale = (0..n).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        match jtj.pseudo_inverse(1e-12 * scale.max(f64::MIN_POSITIVE)) {
            Ok(cov) => (0..n).map(|i| (s2 * cov[(i, i)]).max(0.0).sqrt()).collect(),
            Err(_) => vec![f64::NAN; n],
        }
    };

    Ok(LmFit {
        params: p,
        residual_norm: cost.sqrt(),
        stderrs,
        iterations,
    })
}
