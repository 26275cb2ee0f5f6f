//! End-to-end behavior of the scaling-law fitters, background correction,
//! and residual diagnostics on synthetic data with known ground truth.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use qmeta_core::disorder::EnsembleStats;
use qmeta_core::estimators::{
    fit_meso_scaling, fit_meso_scaling_weighted, fit_meso_scaling_with_fixed_background,
    fit_power_law, residual_stats, subtract_background, FitWeighting,
};

const G: f64 = 42.0;
const KAPPA: f64 = 30.0;

/// Synthesizes one (N, Δ) grid of cell statistics from the closed-form
/// scaling laws with injected constant backgrounds.
fn synthesize(a: f64, b: f64, c1: Complex64, c2: f64) -> Vec<EnsembleStats> {
    let mut out = Vec::new();
    for &n in &[3usize, 5, 7, 9, 11, 13, 15, 17] {
        for &delta in &[20.0, 30.0, 50.0, 60.0, 70.0, 80.0, 120.0] {
            let x = n as f64 / delta;
            let d = KAPPA + std::f64::consts::PI * G * G * x;
            out.push(EnsembleStats {
                n_qubits: n,
                spread_delta: delta,
                n_realizations: 1000,
                mean_s21: c1 + Complex64::new(0.0, -a / d),
                var_s21: b * x / d.powi(4) + c2,
                std_error_mean: 1e-5,
                std_error_var: 1e-8,
            });
        }
    }
    out
}

/// Noiseless synthesis at the theory exponents round-trips every fitted
/// parameter to 1e-6 relative.
#[test]
fn meso_fit_noiseless_round_trip() {
    let a = 30.0;
    let b = 900.0 * std::f64::consts::PI * G.powi(4) / 2.0;
    let c1 = Complex64::new(0.002, -0.001);
    let c2 = 2e-6;
    let stats = synthesize(a, b, c1, c2);
    let fit = fit_meso_scaling(&stats, G, KAPPA).unwrap();

    assert!((fit.a - a).abs() / a < 1e-6, "a = {}", fit.a);
    assert!((fit.gamma_exp - 1.0).abs() < 1e-6, "gamma = {}", fit.gamma_exp);
    assert!((fit.c1.re - c1.re).abs() / c1.re.abs() < 1e-6, "c1.re = {}", fit.c1.re);
    assert!((fit.c1.im - c1.im).abs() / c1.im.abs() < 1e-6, "c1.im = {}", fit.c1.im);
    assert!((fit.b - b).abs() / b < 1e-6, "b = {}", fit.b);
    assert!((fit.beta_exp - 1.0).abs() < 1e-6, "beta = {}", fit.beta_exp);
    assert!((fit.delta_exp - 4.0).abs() < 1e-6, "delta = {}", fit.delta_exp);
    assert!((fit.c2 - c2).abs() / c2 < 1e-6, "c2 = {}", fit.c2);
    assert!(fit.residual_norm < 1e-8);

    // inverse-variance weighting on the same (uniform-error) data agrees
    let weighted =
        fit_meso_scaling_weighted(&stats, G, KAPPA, FitWeighting::InverseVariance).unwrap();
    assert!((weighted.gamma_exp - 1.0).abs() < 1e-6);
    assert!((weighted.delta_exp - 4.0).abs() < 1e-5);
}

/// A mean-decay exponent slightly away from theory is still recovered by the
/// joint mean fit (the mean fit is unstaged).
#[test]
fn meso_fit_recovers_off_theory_gamma() {
    let a = 30.0;
    let gamma_true = 1.03;
    let c1 = Complex64::new(0.001, -0.002);
    let mut stats = synthesize(a, 1.0, c1, 0.0);
    for s in &mut stats {
        let x = s.n_qubits as f64 / s.spread_delta;
        let d = KAPPA + std::f64::consts::PI * G * G * x;
        s.mean_s21 = c1 + Complex64::new(0.0, -a / d.powf(gamma_true));
    }
    let fit = fit_meso_scaling(&stats, G, KAPPA).unwrap();
    assert!(
        (fit.gamma_exp - gamma_true).abs() < 1e-6,
        "gamma = {} vs {gamma_true}",
        fit.gamma_exp
    );
}

/// Background subtraction strictly improves a background-blind decay fit on
/// c1-contaminated data, and the corrected inverse magnitudes collapse onto
/// a straight line in N/Δ.
#[test]
fn subtract_background_improves_blind_fit_and_collapses() {
    let a = 30.0;
    let b = 900.0 * std::f64::consts::PI * G.powi(4) / 2.0;
    let c1 = Complex64::new(0.02, -0.03);
    let c2 = 5e-6;
    let stats = synthesize(a, b, c1, c2);

    let zero = Complex64::new(0.0, 0.0);
    let raw = fit_meso_scaling_with_fixed_background(&stats, G, KAPPA, zero, 0.0).unwrap();
    let corrected_stats = subtract_background(&stats, c1, c2);
    let corrected =
        fit_meso_scaling_with_fixed_background(&corrected_stats, G, KAPPA, zero, 0.0).unwrap();

    let raw_err = (raw.gamma_exp - 1.0).abs();
    let corr_err = (corrected.gamma_exp - 1.0).abs();
    assert!(
        raw_err > 0.01,
        "background should visibly bias the blind fit, got gamma = {}",
        raw.gamma_exp
    );
    assert!(
        corr_err < raw_err,
        "correction must improve gamma: {corr_err} vs {raw_err}"
    );
    assert!(corr_err < 1e-6, "corrected gamma = {}", corrected.gamma_exp);

    // collapse: 1/|corrected mean| is linear in x = N/Δ with R² > 0.999
    let pts: Vec<(f64, f64)> = corrected_stats
        .iter()
        .map(|s| {
            (
                s.n_qubits as f64 / s.spread_delta,
                1.0 / s.mean_s21.norm(),
            )
        })
        .collect();
    let m = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym) * (p.1 - ym)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 > 0.999, "collapse R^2 = {r2}");
}

/// Data only spanning a narrow range of N/Δ is refused, as is a grid with
/// too few cells.
#[test]
fn meso_fit_preconditions() {
    let full = synthesize(30.0, 1e9, Complex64::new(0.0, 0.0), 0.0);
    let narrow: Vec<EnsembleStats> = full
        .iter()
        .filter(|s| {
            let x = s.n_qubits as f64 / s.spread_delta;
            (0.1..0.5).contains(&x)
        })
        .cloned()
        .collect();
    assert!(narrow.len() >= 6);
    let err = fit_meso_scaling(&narrow, G, KAPPA).unwrap_err();
    assert!(err.to_string().contains("decade"), "{err}");

    let few = &full[..4];
    assert!(fit_meso_scaling(few, G, KAPPA).is_err());
}

/// Gaussian residuals with σ = 20 MHz over 10⁴ points: residual_stats
/// reproduces the width within ±0.6 MHz and bins everything.
#[test]
fn residual_stats_gaussian_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise = Normal::new(0.0, 20.0).unwrap();
    let m = 10_000;
    let predicted: Vec<f64> = (0..m).map(|i| 5500.0 + 0.05 * i as f64).collect();
    let measured: Vec<f64> = predicted.iter().map(|p| p + noise.sample(&mut rng)).collect();
    let rs = residual_stats(&measured, &predicted).unwrap();
    assert!(
        (rs.std - 20.0).abs() < 0.6,
        "residual std = {} should be 20 +- 0.6",
        rs.std
    );
    assert!(rs.mean.abs() < 0.6, "residual mean = {}", rs.mean);
    let total: usize = rs.histogram.iter().map(|b| b.count).sum();
    assert_eq!(total, m);
    for pair in rs.histogram.windows(2) {
        assert!((pair[1].center - pair[0].center - 5.0).abs() < 1e-12);
    }
    assert_eq!(rs.histogram.len() % 2, 1, "bins are centered on zero");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Scaling y by c scales only the amplitude; multiplying y by N^c shifts
    /// only the exponent.
    #[test]
    fn power_law_equivariance(
        amp in 0.1f64..100.0,
        exponent in -2.0f64..2.0,
        scale in 0.01f64..100.0,
        shift in -1.0f64..1.0,
    ) {
        let points: Vec<(u32, f64)> = (2u32..=20)
            .map(|n| (n, amp * (n as f64).powf(exponent)))
            .collect();
        let base = fit_power_law(&points).unwrap();
        prop_assert!((base.exponent - exponent).abs() < 1e-9);
        prop_assert!((base.amplitude - amp).abs() / amp < 1e-9);

        let scaled: Vec<(u32, f64)> = points.iter().map(|&(n, y)| (n, scale * y)).collect();
        let s = fit_power_law(&scaled).unwrap();
        prop_assert!((s.exponent - exponent).abs() < 1e-9);
        prop_assert!((s.amplitude - scale * amp).abs() / (scale * amp) < 1e-9);

        let tilted: Vec<(u32, f64)> = points
            .iter()
            .map(|&(n, y)| (n, y * (n as f64).powf(shift)))
            .collect();
        let t = fit_power_law(&tilted).unwrap();
        prop_assert!((t.exponent - (exponent + shift)).abs() < 1e-9);
    }
}
