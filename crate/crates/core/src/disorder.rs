//! Disorder generation, seeded Monte-Carlo averaging of the resonant
//! transmission, and the closed-form large-ensemble oracles.
//!
//! Qubit frequencies are drawn from a flat band of full width Δ (optionally
//! convolved with Gaussian frequency-setting jitter). Every realization gets
//! its own counter-derived RNG seed, so ensembles are reproducible bit for
//! bit regardless of how the work is scheduled across threads.
//!
//! Two families of closed forms are provided for the ensemble statistics at
//! probe frequency ω = ν_c:
//!
//! * the idealized infinite-band forms (`*_analytic`), in which the band
//!   integrals are replaced by their Δ ≫ Γ limits π/(ΔΓ) and π/(2ΓΔ); and
//! * the finite-band forms (`*_finite_band`), which keep the exact band
//!   integrals (arctan corrections for the flat shape, adaptive quadrature
//!   for jittered shapes).
//!
//! Both are leading-order results in the small self-energy fluctuation: the
//! variance forms describe the linearized single-quadrature fluctuation (see
//! [`linearized_quadrature_variance`]), and carry relative corrections of
//! order √(N₀/N) with N₀ = Δ/(2πΓ) ([`crossover_n0`]). At desk-scale N the
//! exact Monte-Carlo variance therefore differs from the closed forms by an
//! O(1) factor; the linearized statistic is the one the formulas predict.

use num_complex::Complex64;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{QubitParams, SystemConfig};
use crate::quad;
use crate::response::transmission;

/// Relative tolerance for the adaptive quadrature behind the jittered-shape
/// band integrals.
pub const QUAD_REL_TOL: f64 = 1e-8;

/// Disorder distribution shape for qubit frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisorderShape {
    /// Uniform density 1/Δ on `[mean − Δ/2, mean + Δ/2]`.
    Flat,
    /// Flat draw plus independent Gaussian jitter of standard deviation
    /// `sigma` (MHz) on every qubit; draws may leave the flat band.
    FlatPlusGaussianJitter { sigma: f64 },
}

/// Specification of one disorder ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSpec {
    /// Band center (MHz); equals ν_c in all resonant-ensemble studies.
    pub mean: f64,
    /// Full band width Δ (MHz), > 0.
    pub spread_delta: f64,
    pub shape: DisorderShape,
    /// Master seed; per-realization seeds are derived from it by counter.
    pub master_seed: u64,
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "disorder mean must be finite, got {}",
                self.mean
            )));
        }
        if !(self.spread_delta > 0.0) || !self.spread_delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "disorder spread_delta must be positive and finite, got {}",
                self.spread_delta
            )));
        }
        if let DisorderShape::FlatPlusGaussianJitter { sigma } = self.shape {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "jitter sigma must be non-negative and finite, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

/// One drawn set of qubit frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub epsilons: Vec<f64>,
    pub realization_index: u64,
    pub derived_seed: u64,
}

/// Monte-Carlo aggregates for one (N, Δ) cell at ω = ν_c.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_qubits: usize,
    pub spread_delta: f64,
    pub n_realizations: usize,
    /// ⟨S21⟩ over realizations.
    pub mean_s21: Complex64,
    /// ⟨|S21 − ⟨S21⟩|²⟩, population (1/M) normalization.
    pub var_s21: f64,
    /// Jackknife standard error of |mean_s21| components (complex modulus).
    pub std_error_mean: f64,
    /// Jackknife standard error of var_s21.
    pub std_error_var: f64,
}

/// A scalar estimate with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Derives the per-realization seed from the master seed and a counter.
///
/// SplitMix64-style finalizer over the keyed counter: statistically
/// independent streams for consecutive indices, and the same (seed, index)
/// pair always maps to the same stream on every platform.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws realization `index` of the ensemble: deterministic in
/// `(master_seed, index)`. Per qubit, one uniform deviate is drawn, followed
/// by one Gaussian deviate for jittered shapes.
pub fn draw_realization(spec: &DisorderSpec, n_qubits: usize, index: u64) -> Result<Realization> {
    spec.validate()?;
    if n_qubits == 0 {
        return Err(Error::InvalidParameter(
            "draw_realization requires at least one qubit".into(),
        ));
    }
    let derived_seed = derive_seed(spec.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed);
    let half = 0.5 * spec.spread_delta;
    let flat = Uniform::new_inclusive(spec.mean - half, spec.mean + half)
        .map_err(|e| Error::InvalidParameter(format!("flat band: {e}")))?;
    let jitter = match spec.shape {
        DisorderShape::Flat => None,
        DisorderShape::FlatPlusGaussianJitter { sigma } if sigma == 0.0 => None,
        DisorderShape::FlatPlusGaussianJitter { sigma } => Some(
            Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidParameter(format!("jitter: {e}")))?,
        ),
    };
    let mut epsilons = Vec::with_capacity(n_qubits);
    for _ in 0..n_qubits {
        let mut eps = flat.sample(&mut rng);
        if let Some(normal) = &jitter {
            eps += normal.sample(&mut rng);
        }
        epsilons.push(eps);
    }
    Ok(Realization {
        epsilons,
        realization_index: index,
        derived_seed,
    })
}

/// Builds the per-realization system: cavity from the template, qubit `j`
/// takes the drawn frequency and the template's (Γ, g). If the template has
/// exactly `n_qubits` qubits their parameters are used positionally;
/// otherwise the first template qubit is replicated.
fn realized_config(
    template: &SystemConfig,
    epsilons: &[f64],
) -> Result<SystemConfig> {
    if template.qubits.is_empty() {
        return Err(Error::InvalidParameter(
            "config template must provide at least one qubit to source relaxation and coupling"
                .into(),
        ));
    }
    let qubits = epsilons
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let src = if template.qubits.len() == epsilons.len() {
                &template.qubits[j]
            } else {
                &template.qubits[0]
            };
            QubitParams {
                epsilon: eps,
                gamma: src.gamma,
                g: src.g,
            }
        })
        .collect();
    Ok(SystemConfig {
        cavity: template.cavity.clone(),
        qubits,
    })
}

/// Jackknife standard error of the population (1/M) variance, given the
/// centered squared deviations `|c_i|²` and the variance itself. Uses the
/// closed-form leave-one-out identity, O(M).
fn jackknife_se_var(sq_devs: &[f64], var: f64) -> f64 {
    let m = sq_devs.len() as f64;
    if sq_devs.len() < 2 {
        return 0.0;
    }
    let s4: f64 = sq_devs.iter().map(|&d| (d - var) * (d - var)).sum();
    let b = m / ((m - 1.0) * (m - 1.0));
    b * (((m - 1.0) / m) * s4).max(0.0).sqrt()
}

/// Runs a seeded Monte-Carlo ensemble of the resonant transmission
/// S21(ω = ν_c) and aggregates mean, fluctuation variance, and jackknife
/// standard errors.
///
/// Realizations are independent work items executed through the parallel
/// chokepoint; the reduction always runs in realization-index order, so the
/// result is bitwise identical for any worker count. Cells that must be
/// statistically independent (different N or Δ) should use distinct master
/// seeds, e.g. via [`derive_seed`] on a cell counter.
pub fn ensemble_average(
    config_template: &SystemConfig,
    spec: &DisorderSpec,
    n_qubits: usize,
    n_realizations: usize,
) -> Result<EnsembleStats> {
    config_template.validate()?;
    spec.validate()?;
    if n_realizations < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble needs at least 2 realizations, got {n_realizations}"
        )));
    }
    if n_qubits == 0 {
        return Err(Error::InvalidParameter(
            "ensemble_average requires at least one qubit".into(),
        ));
    }
    let omega = config_template.cavity.nu_c;
    let samples = exec::map_indexed(n_realizations, |m| -> Result<Complex64> {
        let real = draw_realization(spec, n_qubits, m as u64)?;
        let cfg = realized_config(config_template, &real.epsilons)?;
        transmission(&cfg, omega)
    });
    let mut s = Vec::with_capacity(n_realizations);
    for (m, r) in samples.into_iter().enumerate() {
        match r {
            Ok(v) => s.push(v),
            Err(e) => {
                return Err(Error::RealizationFailed {
                    index: m as u64,
                    source: Box::new(e),
                })
            }
        }
    }
    let m = n_realizations as f64;
    let mean = s.iter().sum::<Complex64>() / m;
    let sq_devs: Vec<f64> = s.iter().map(|v| (v - mean).norm_sqr()).collect();
    let var = sq_devs.iter().sum::<f64>() / m;
    let std_error_mean = (var / (m - 1.0)).sqrt();
    let std_error_var = jackknife_se_var(&sq_devs, var);
    Ok(EnsembleStats {
        n_qubits,
        spread_delta: spec.spread_delta,
        n_realizations,
        mean_s21: mean,
        var_s21: var,
        std_error_mean,
        std_error_var,
    })
}

/// Idealized infinite-band disorder-averaged transmission at ω = ν_c:
/// `⟨S21⟩ = −i √(γ_in γ_out) / (κ + π g² N / Δ)`.
pub fn mean_s21_analytic(
    g: f64,
    kappa: f64,
    gamma_in: f64,
    gamma_out: f64,
    n_qubits: usize,
    delta: f64,
) -> Complex64 {
    let denom = kappa + std::f64::consts::PI * g * g * n_qubits as f64 / delta;
    Complex64::new(0.0, -(gamma_in * gamma_out).sqrt() / denom)
}

/// Idealized infinite-band fluctuation variance at ω = ν_c:
/// `⟨|ΔS21|²⟩ = γ_in γ_out · π N g⁴ / (2 Γ Δ (κ + π g² N / Δ)⁴)`,
/// the leading-order single-quadrature result. Diverges as Γ → 0, which is
/// refused.
pub fn var_s21_analytic(
    g: f64,
    kappa: f64,
    gamma_in: f64,
    gamma_out: f64,
    gamma_q: f64,
    n_qubits: usize,
    delta: f64,
) -> Result<f64> {
    if !(gamma_q > 0.0) {
        return Err(Error::InvalidParameter(
            "fluctuation variance diverges as qubit damping -> 0; gamma_q must be positive".into(),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let n = n_qubits as f64;
    let denom = kappa + std::f64::consts::PI * g * g * n / delta;
    Ok(gamma_in * gamma_out * std::f64::consts::PI * n * g.powi(4)
        / (2.0 * gamma_q * delta * denom.powi(4)))
}

/// Crossover ensemble size `N₀ = Δ / (2πΓ)`: below it, single realizations
/// fluctuate as strongly as the ensemble mean. Requires Γ > 0.
pub fn crossover_n0(delta: f64, gamma_q: f64) -> f64 {
    delta / (2.0 * std::f64::consts::PI * gamma_q)
}

/// Infinite-band limit `π/(ΔΓ)` of [`self_energy_integral`], exposed for
/// side-by-side comparison with the exact band integral.
pub fn infinite_band_integral(delta: f64, gamma_q: f64) -> f64 {
    std::f64::consts::PI / (delta * gamma_q)
}

/// Infinite-band limit `π/(2ΓΔ)` of [`variance_integral`].
pub fn infinite_band_variance_integral(delta: f64, gamma_q: f64) -> f64 {
    std::f64::consts::PI / (2.0 * gamma_q * delta)
}

/// Gaussian-convolved flat band density at offset `x` from the band center.
fn jittered_density(x: f64, delta: f64, sigma: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 / delta * (libm::erf((x + 0.5 * delta) / s) - libm::erf((x - 0.5 * delta) / s))
}

fn banded_kernel_integral(
    delta: f64,
    gamma_q: f64,
    shape: &DisorderShape,
    flat_closed_form: impl Fn(f64, f64) -> f64,
    kernel: impl Fn(f64) -> f64,
) -> Result<f64> {
    if !(delta > 0.0) || !(gamma_q > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "band integrals require delta > 0 and gamma_q > 0, got delta={delta}, gamma_q={gamma_q}"
        )));
    }
    match shape {
        DisorderShape::Flat => Ok(flat_closed_form(delta, gamma_q)),
        DisorderShape::FlatPlusGaussianJitter { sigma } if *sigma == 0.0 => {
            Ok(flat_closed_form(delta, gamma_q))
        }
        DisorderShape::FlatPlusGaussianJitter { sigma } => {
            let lim = 0.5 * delta + 10.0 * sigma;
            quad::integrate(
                |x| jittered_density(x, delta, *sigma) * kernel(x),
                -lim,
                lim,
                QUAD_REL_TOL,
            )
        }
    }
}

/// Per-qubit band integral `∫ p(ε) dε / (ε² + Γ²)` (MHz⁻², offsets measured
/// from the band center).
///
/// Flat shape evaluates the exact closed form `(2/(ΔΓ))·arctan(Δ/(2Γ))`;
/// jittered shapes integrate the Gaussian-convolved density adaptively to
/// [`QUAD_REL_TOL`]. The Δ ≫ Γ limit is [`infinite_band_integral`].
pub fn self_energy_integral(delta: f64, gamma_q: f64, shape: &DisorderShape) -> Result<f64> {
    banded_kernel_integral(
        delta,
        gamma_q,
        shape,
        |d, g| 2.0 / (d * g) * (d / (2.0 * g)).atan(),
        |x| 1.0 / (x * x + gamma_q * gamma_q),
    )
}

/// Per-qubit band integral `∫ p(ε) ε² dε / (ε² + Γ²)²` (MHz⁻²), the variance
/// of the odd self-energy kernel. Flat closed form:
/// `(1/Δ)·(arctan(Δ/(2Γ))/Γ − (Δ/2)/((Δ/2)² + Γ²))`; jittered shapes by
/// adaptive quadrature. The Δ ≫ Γ limit is [`infinite_band_variance_integral`].
pub fn variance_integral(delta: f64, gamma_q: f64, shape: &DisorderShape) -> Result<f64> {
    banded_kernel_integral(
        delta,
        gamma_q,
        shape,
        |d, g| {
            let half = 0.5 * d;
            ((half / g).atan() / g - half / (half * half + g * g)) / d
        },
        |x| {
            let r = x * x + gamma_q * gamma_q;
            x * x / (r * r)
        },
    )
}

/// Finite-band disorder-averaged transmission at ω = ν_c:
/// `−i √(γ_in γ_out) / (κ + g² Γ N · I₁)` with I₁ the exact
/// [`self_energy_integral`]. Reduces to [`mean_s21_analytic`] as Δ/Γ → ∞.
#[allow(clippy::too_many_arguments)]
pub fn mean_s21_finite_band(
    g: f64,
    kappa: f64,
    gamma_in: f64,
    gamma_out: f64,
    gamma_q: f64,
    n_qubits: usize,
    delta: f64,
    shape: &DisorderShape,
) -> Result<Complex64> {
    let i1 = self_energy_integral(delta, gamma_q, shape)?;
    let denom = kappa + g * g * gamma_q * n_qubits as f64 * i1;
    Ok(Complex64::new(0.0, -(gamma_in * gamma_out).sqrt() / denom))
}

/// Finite-band leading-order fluctuation variance at ω = ν_c:
/// `γ_in γ_out · g⁴ N · I₂ / (κ + g² Γ N · I₁)⁴` with I₂ the exact
/// [`variance_integral`]. Reduces to [`var_s21_analytic`] as Δ/Γ → ∞.
#[allow(clippy::too_many_arguments)]
pub fn var_s21_finite_band(
    g: f64,
    kappa: f64,
    gamma_in: f64,
    gamma_out: f64,
    gamma_q: f64,
    n_qubits: usize,
    delta: f64,
    shape: &DisorderShape,
) -> Result<f64> {
    let i1 = self_energy_integral(delta, gamma_q, shape)?;
    let i2 = variance_integral(delta, gamma_q, shape)?;
    let n = n_qubits as f64;
    let denom = kappa + g * g * gamma_q * n * i1;
    Ok(gamma_in * gamma_out * g.powi(4) * n * i2 / denom.powi(4))
}

/// Monte-Carlo estimate of the *linearized* single-quadrature fluctuation
/// variance — the statistic the closed-form variance oracles actually
/// predict.
///
/// Expanding S21(ν_c) to first order in the odd self-energy fluctuation
/// `t₁ = Σ_j δε_j/(δε_j² + Γ²)` gives the in-phase deviate
/// `r = √(γ_in γ_out) · g² · t₁ / (κ + g² Γ N I₁)²`; this function samples
/// `t₁` with the same seeded draws as [`ensemble_average`] and returns the
/// population variance of `r` with its jackknife standard error. Unlike the
/// exact Monte-Carlo variance, this converges to the closed forms without
/// the O(√(N₀/N)) mesoscopic corrections, so it isolates distributional
/// errors in the sampler from expansion error in the formulas.
///
/// Offsets δε are measured from the probe/cavity frequency ν_c, matching the
/// derivation; band-centered ensembles (mean = ν_c) are the intended use.
pub fn linearized_quadrature_variance(
    config_template: &SystemConfig,
    spec: &DisorderSpec,
    n_qubits: usize,
    n_realizations: usize,
) -> Result<VarianceEstimate> {
    config_template.validate()?;
    spec.validate()?;
    if n_realizations < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble needs at least 2 realizations, got {n_realizations}"
        )));
    }
    let Some(q0) = config_template.qubits.first() else {
        return Err(Error::InvalidParameter(
            "config template must provide at least one qubit".into(),
        ));
    };
    let (g, gamma_q) = (q0.g.abs(), q0.gamma);
    if !(gamma_q > 0.0) {
        return Err(Error::InvalidParameter(
            "linearized variance requires gamma_q > 0".into(),
        ));
    }
    let cav = &config_template.cavity;
    let i1 = self_energy_integral(spec.spread_delta, gamma_q, &spec.shape)?;
    let kbar = cav.kappa + g * g * gamma_q * n_qubits as f64 * i1;
    let pref = (cav.gamma_in * cav.gamma_out).sqrt() * g * g / (kbar * kbar);
    let nu_c = cav.nu_c;
    let deviates = exec::try_map_indexed(n_realizations, |m| -> Result<f64> {
        let real = draw_realization(spec, n_qubits, m as u64)?;
        let t1: f64 = real
            .epsilons
            .iter()
            .map(|&eps| {
                let de = eps - nu_c;
                de / (de * de + gamma_q * gamma_q)
            })
            .sum();
        Ok(pref * t1)
    })?;
    let m = n_realizations as f64;
    let mean = deviates.iter().sum::<f64>() / m;
    let sq_devs: Vec<f64> = deviates.iter().map(|&r| (r - mean) * (r - mean)).collect();
    let var = sq_devs.iter().sum::<f64>() / m;
    let std_error = jackknife_se_var(&sq_devs, var);
    Ok(VarianceEstimate { value: var, std_error })
}
