//! Experiment orchestration: each runner turns a resolved [`Config`] into
//! one or more [`ResultTable`]s.
//!
//! Seeding is hierarchical and counter-based throughout: every independent
//! stream (a jitter trial, a disorder cell, a noise channel) gets
//! `derive_seed(parent_seed, counter)`, so results are reproducible from the
//! single master seed and invariant under thread count — outer loops here
//! run sequentially and all parallel fan-out lives in the core library,
//! whose reductions are index-ordered.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qmeta_core::calibration::{
    bare_frequency, bare_from_dressed, dressed_from_bare, fit_device_parameters,
    flux_from_frequency, predict_dressed_frequency, Branch, DeviceModel, FluxBranch, FluxMap,
    Observation, ReadoutSpec, TransmonSpec,
};
use qmeta_core::disorder::{
    crossover_n0, derive_seed, draw_realization, ensemble_average, linearized_quadrature_variance,
    mean_s21_analytic, mean_s21_finite_band, var_s21_analytic, var_s21_finite_band, EnsembleStats,
};
use qmeta_core::estimators::{fit_meso_scaling, fit_power_law, subtract_background};
use qmeta_core::model::rabi_splitting;
use qmeta_core::response::{splitting_from_spectrum, transmission_spectrum, ProbeGrid};
use qmeta_core::{QubitParams, SystemConfig};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::table::ResultTable;

// Stream offsets keeping the independent seed streams of one experiment
// apart. Distinct subcommands may reuse values (they never mix draws).
const RABI_TRIAL_STREAM: u64 = 1 << 40;
const SPECTRA_DELTA_STREAM: u64 = 1 << 41;
const SPECTRA_NOISE_STREAM: u64 = 1 << 42;
const CENTER_OFFSETS_STREAM: u64 = 1 << 43;
const CALIBRATE_NOISE_STREAM: u64 = 1 << 44;
const CALIBRATE_TRIPS_STREAM: u64 = 1 << 45;

fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Fresh table carrying the shared provenance block. The timestamp line is
/// the only part that varies between identical runs; byte-level comparisons
/// strip it.
fn provenance_table(cfg: &Config, experiment: &str) -> ResultTable {
    let mut t = ResultTable::new();
    t.push_meta("experiment", experiment);
    t.push_meta("config_hash", cfg.hash_hex());
    t.push_meta("master_seed", cfg.master_seed);
    t.push_meta("tool_version", env!("CARGO_PKG_VERSION"));
    t.push_meta("timestamp", unix_timestamp());
    t
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Ensemble of `n` qubits with the shared linewidth/coupling at the given
/// frequencies.
fn system_with(cfg: &Config, epsilons: &[f64]) -> SystemConfig {
    let mut sys = cfg.template();
    sys.qubits = epsilons
        .iter()
        .map(|&epsilon| QubitParams {
            epsilon,
            gamma: cfg.system.qubit.gamma,
            g: cfg.system.qubit.g,
        })
        .collect();
    sys
}

/// Ordinary least squares line `y = intercept + slope·x` with the fraction
/// of variance explained.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sst: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    (slope, intercept, r2)
}

// ---------------------------------------------------------------------------
// rabi-scaling

/// Collective-splitting scaling: for each ensemble size `N`, `N` qubits sit
/// at the cavity frequency (the remaining `total_qubits − N` are parked at a
/// large detuning, or removed when `remove_parked` is set) and the bright-
/// mode splitting is extracted both from spectrum extrema and from the
/// analytic two-mode frequencies of the ideal resonant ensemble. Trial 0 is
/// noiseless; with `jitter_sigma > 0`, trials `1..=jitter_trials` re-draw
/// the tuned frequencies with Gaussian setting error. Power-law fits land in
/// the metadata (`fit_*` for the noiseless points, `jitter_fit_*` pooled
/// over the jittered trials).
pub fn run_rabi_scaling(cfg: &Config) -> Result<ResultTable> {
    let r = &cfg.rabi;
    let sys = &cfg.system;
    if r.step > 0.5 * sys.kappa {
        return Err(CliError::Config(format!(
            "rabi.step {} MHz is too coarse to resolve the spectrum extrema; required step <= kappa/2 = {} MHz",
            r.step,
            0.5 * sys.kappa
        )));
    }
    let n_trials = if r.jitter_sigma > 0.0 {
        r.jitter_trials
    } else {
        0
    };

    let mut trial_col: Vec<i64> = Vec::new();
    let mut n_col: Vec<i64> = Vec::new();
    let mut spectral_col: Vec<f64> = Vec::new();
    let mut analytic_col: Vec<f64> = Vec::new();

    for trial in 0..=n_trials {
        let trial_seed = derive_seed(cfg.master_seed, RABI_TRIAL_STREAM + trial as u64);
        for n in r.n_min..=r.n_max {
            let mut epsilons = vec![sys.nu_c; n];
            if trial > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, n as u64));
                let jitter = Normal::new(0.0, r.jitter_sigma)
                    .expect("config validation guarantees jitter_sigma > 0");
                for e in &mut epsilons {
                    *e += jitter.sample(&mut rng);
                }
            }
            if !r.remove_parked {
                epsilons.extend(
                    std::iter::repeat(sys.nu_c + r.detuned_offset).take(r.total_qubits - n),
                );
            }
            let full = system_with(cfg, &epsilons);
            let spectral = splitting_from_spectrum(&full, r.step)?;
            let ideal = system_with(cfg, &vec![sys.nu_c; n]);
            let analytic = rabi_splitting(&ideal)?;
            trial_col.push(trial as i64);
            n_col.push(n as i64);
            spectral_col.push(spectral);
            analytic_col.push(analytic);
        }
    }

    let mut table = provenance_table(cfg, "rabi-scaling");
    let n_sizes = r.n_max - r.n_min + 1;
    if n_sizes >= 3 {
        let noiseless: Vec<(u32, f64)> = n_col
            .iter()
            .zip(&spectral_col)
            .take(n_sizes)
            .map(|(&n, &s)| (n as u32, s))
            .collect();
        let fit = fit_power_law(&noiseless)?;
        table.push_meta_f64("fit_amplitude", fit.amplitude);
        table.push_meta_f64("fit_exponent", fit.exponent);
        table.push_meta_f64("fit_amplitude_stderr", fit.amplitude_stderr);
        table.push_meta_f64("fit_exponent_stderr", fit.exponent_stderr);
        table.push_meta_f64("fit_residual_norm", fit.residual_norm);
        if n_trials > 0 {
            let pooled: Vec<(u32, f64)> = n_col
                .iter()
                .zip(&spectral_col)
                .skip(n_sizes)
                .map(|(&n, &s)| (n as u32, s))
                .collect();
            let jfit = fit_power_law(&pooled)?;
            table.push_meta_f64("jitter_fit_amplitude", jfit.amplitude);
            table.push_meta_f64("jitter_fit_exponent", jfit.exponent);
            table.push_meta_f64("jitter_fit_amplitude_stderr", jfit.amplitude_stderr);
            table.push_meta_f64("jitter_fit_exponent_stderr", jfit.exponent_stderr);
        }
    } else {
        table.push_meta(
            "notice",
            "power-law fit skipped: need at least 3 ensemble sizes",
        );
    }
    table.add_int_column("trial", trial_col);
    table.add_int_column("n_qubits", n_col);
    table.add_float_column("splitting_spectral", spectral_col);
    table.add_float_column("splitting_analytic", analytic_col);
    Ok(table)
}

// ---------------------------------------------------------------------------
// spectra

fn fmt_delta(delta: f64) -> String {
    if delta.fract() == 0.0 {
        format!("{delta:.0}")
    } else {
        format!("{delta}").replace('.', "p")
    }
}

/// Per-realization transmission spectra: for every spread in
/// `spectra.deltas` and every realization index, one table of
/// `(f_p, Re S21, Im S21, |S21|)` with the drawn qubit frequencies in the
/// metadata. A zero spread pins every draw to the band center, so all its
/// realizations are identical. `noise_sigma > 0` adds seeded complex
/// Gaussian measurement noise per grid point.
///
/// Returns `(file_stem, table)` pairs.
pub fn run_realization_spectra(cfg: &Config) -> Result<Vec<(String, ResultTable)>> {
    let sp = &cfg.spectra;
    let n = sp.n_qubits;
    let mean = cfg.disorder.mean;
    let g = cfg.system.qubit.g;
    let kappa = cfg.system.kappa;
    let mut out = Vec::new();
    for (di, &delta) in sp.deltas.iter().enumerate() {
        let reach = delta.max(4.0 * g.abs() * (n as f64).sqrt());
        let grid = match &cfg.grid {
            Some(gr) => {
                if gr.start > mean - reach || gr.stop < mean + reach {
                    return Err(CliError::Config(format!(
                        "grid [{}, {}] does not cover the required band [{}, {}] \
                         (mean ± max(spread, 4g√N)) for spread {delta}",
                        gr.start,
                        gr.stop,
                        mean - reach,
                        mean + reach
                    )));
                }
                ProbeGrid::linspace(gr.start, gr.stop, gr.points)?
            }
            None => ProbeGrid::linspace(
                mean - reach - 2.0 * kappa,
                mean + reach + 2.0 * kappa,
                2001,
            )?,
        };
        let seed_d = derive_seed(cfg.master_seed, SPECTRA_DELTA_STREAM + di as u64);
        for rlz in 0..sp.realizations {
            let (epsilons, derived) = if delta > 0.0 {
                let spec = cfg.disorder_spec(delta, seed_d);
                let rz = draw_realization(&spec, n, rlz as u64)?;
                (rz.epsilons, rz.derived_seed)
            } else {
                (vec![mean; n], derive_seed(seed_d, rlz as u64))
            };
            let system = system_with(cfg, &epsilons);
            let mut spectrum = transmission_spectrum(&system, &grid)?;
            if sp.noise_sigma > 0.0 {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(derived, SPECTRA_NOISE_STREAM));
                let noise = Normal::new(0.0, sp.noise_sigma)
                    .expect("config validation guarantees noise_sigma > 0");
                for s in &mut spectrum.s21 {
                    *s += Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
            }
            let mut table = provenance_table(cfg, "spectra");
            table.push_meta_f64("spread_delta", delta);
            table.push_meta("realization_index", rlz);
            table.push_meta("derived_seed", derived);
            table.push_meta("epsilon_j", join_f64(&epsilons));
            if sp.noise_sigma > 0.0 {
                table.push_meta_f64("noise_sigma", sp.noise_sigma);
            }
            let freqs = grid.frequencies().to_vec();
            table.add_float_column("f_p", freqs);
            table.add_float_column("s21_re", spectrum.s21.iter().map(|s| s.re).collect());
            table.add_float_column("s21_im", spectrum.s21.iter().map(|s| s.im).collect());
            table.add_float_column("s21_abs", spectrum.s21.iter().map(|s| s.norm()).collect());
            out.push((format!("spectra_d{}_r{rlz}", fmt_delta(delta)), table));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// meso

/// Disorder-ensemble statistics over the (N, Δ) grid: Monte-Carlo mean and
/// fluctuation variance of S21 at the band center per cell, alongside the
/// idealized (infinite-band) and band-corrected closed-form predictions and
/// the linearized-quadrature variance cross-check. Cells past the crossover
/// size `N₀ = Δ/(2πΓ)` carry `thermodynamic = 1`. The scaling fit runs on
/// the raw cells; background-subtracted columns and the straight-line
/// collapse of `1/|⟨S21⟩|` against N/Δ land in `mean_corr_*`/`var_corr` and
/// the `collapse_*` metadata.
pub fn run_meso_fluctuations(cfg: &Config) -> Result<ResultTable> {
    let m = &cfg.meso;
    let sys = &cfg.system;
    let q = &sys.qubit;
    let template = cfg.template();
    let m_realizations = cfg.disorder.n_realizations;

    let mut n_col: Vec<i64> = Vec::new();
    let mut delta_col: Vec<f64> = Vec::new();
    let mut m_col: Vec<i64> = Vec::new();
    let mut mean_re_col: Vec<f64> = Vec::new();
    let mut mean_im_col: Vec<f64> = Vec::new();
    let mut var_col: Vec<f64> = Vec::new();
    let mut se_mean_col: Vec<f64> = Vec::new();
    let mut se_var_col: Vec<f64> = Vec::new();
    let mut mean_banded_im_col: Vec<f64> = Vec::new();
    let mut var_banded_col: Vec<f64> = Vec::new();
    let mut mean_ideal_im_col: Vec<f64> = Vec::new();
    let mut var_ideal_col: Vec<f64> = Vec::new();
    let mut var_lin_col: Vec<f64> = Vec::new();
    let mut var_lin_se_col: Vec<f64> = Vec::new();
    let mut thermo_col: Vec<i64> = Vec::new();
    let mut stats_all: Vec<EnsembleStats> = Vec::new();

    let mut cell_index = 0u64;
    for n in m.n_min..=m.n_max {
        for &delta in &m.deltas {
            let seed_cell = derive_seed(cfg.master_seed, cell_index);
            let spec = cfg.disorder_spec(delta, seed_cell);
            let stats = ensemble_average(&template, &spec, n, m_realizations)?;
            let mean_banded = mean_s21_finite_band(
                q.g,
                sys.kappa,
                sys.gamma_in,
                sys.gamma_out,
                q.gamma,
                n,
                delta,
                &spec.shape,
            )?;
            let var_banded = var_s21_finite_band(
                q.g,
                sys.kappa,
                sys.gamma_in,
                sys.gamma_out,
                q.gamma,
                n,
                delta,
                &spec.shape,
            )?;
            let mean_ideal =
                mean_s21_analytic(q.g, sys.kappa, sys.gamma_in, sys.gamma_out, n, delta);
            let var_ideal = var_s21_analytic(
                q.g,
                sys.kappa,
                sys.gamma_in,
                sys.gamma_out,
                q.gamma,
                n,
                delta,
            )?;
            let lin = linearized_quadrature_variance(&template, &spec, n, m_realizations)?;

            n_col.push(n as i64);
            delta_col.push(delta);
            m_col.push(m_realizations as i64);
            mean_re_col.push(stats.mean_s21.re);
            mean_im_col.push(stats.mean_s21.im);
            var_col.push(stats.var_s21);
            se_mean_col.push(stats.std_error_mean);
            se_var_col.push(stats.std_error_var);
            mean_banded_im_col.push(mean_banded.im);
            var_banded_col.push(var_banded);
            mean_ideal_im_col.push(mean_ideal.im);
            var_ideal_col.push(var_ideal);
            var_lin_col.push(lin.value);
            var_lin_se_col.push(lin.std_error);
            thermo_col.push(i64::from(n as f64 > crossover_n0(delta, q.gamma)));
            stats_all.push(stats);
            cell_index += 1;
        }
    }

    let fit = fit_meso_scaling(&stats_all, q.g, sys.kappa)?;
    let corrected = subtract_background(&stats_all, fit.c1, fit.c2);
    let xs: Vec<f64> = stats_all
        .iter()
        .map(|s| s.n_qubits as f64 / s.spread_delta)
        .collect();
    let ys: Vec<f64> = corrected.iter().map(|s| 1.0 / s.mean_s21.norm()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);

    let mut table = provenance_table(cfg, "meso");
    table.push_meta_f64("system_g", q.g);
    table.push_meta_f64("system_kappa", sys.kappa);
    table.push_meta_f64("fit_a", fit.a);
    table.push_meta_f64("fit_gamma", fit.gamma_exp);
    table.push_meta_f64("fit_c1_re", fit.c1.re);
    table.push_meta_f64("fit_c1_im", fit.c1.im);
    table.push_meta_f64("fit_b", fit.b);
    table.push_meta_f64("fit_beta", fit.beta_exp);
    table.push_meta_f64("fit_delta", fit.delta_exp);
    table.push_meta_f64("fit_c2", fit.c2);
    table.push_meta_f64("fit_a_stderr", fit.a_stderr);
    table.push_meta_f64("fit_gamma_stderr", fit.gamma_stderr);
    table.push_meta_f64("fit_c1_re_stderr", fit.c1_re_stderr);
    table.push_meta_f64("fit_c1_im_stderr", fit.c1_im_stderr);
    table.push_meta_f64("fit_b_stderr", fit.b_stderr);
    table.push_meta_f64("fit_beta_stderr", fit.beta_stderr);
    table.push_meta_f64("fit_delta_stderr", fit.delta_stderr);
    table.push_meta_f64("fit_c2_stderr", fit.c2_stderr);
    table.push_meta_f64("fit_residual_norm_mean", fit.residual_norm_mean);
    table.push_meta_f64("fit_residual_norm_var", fit.residual_norm_var);
    table.push_meta_f64("fit_residual_norm", fit.residual_norm);
    table.push_meta_f64("collapse_slope", slope);
    table.push_meta_f64("collapse_intercept", intercept);
    table.push_meta_f64("collapse_r2", r2);

    table.add_int_column("n_qubits", n_col);
    table.add_float_column("spread_delta", delta_col);
    table.add_int_column("n_realizations", m_col);
    table.add_float_column("mean_re", mean_re_col);
    table.add_float_column("mean_im", mean_im_col);
    table.add_float_column("var", var_col);
    table.add_float_column("se_mean", se_mean_col);
    table.add_float_column("se_var", se_var_col);
    table.add_float_column("mean_banded_im", mean_banded_im_col);
    table.add_float_column("var_banded", var_banded_col);
    table.add_float_column("mean_ideal_im", mean_ideal_im_col);
    table.add_float_column("var_ideal", var_ideal_col);
    table.add_float_column("var_linearized", var_lin_col);
    table.add_float_column("var_linearized_se", var_lin_se_col);
    table.add_int_column("thermodynamic", thermo_col);
    table.add_float_column(
        "mean_corr_re",
        corrected.iter().map(|s| s.mean_s21.re).collect(),
    );
    table.add_float_column(
        "mean_corr_im",
        corrected.iter().map(|s| s.mean_s21.im).collect(),
    );
    table.add_float_column("var_corr", corrected.iter().map(|s| s.var_s21).collect());
    Ok(table)
}

// ---------------------------------------------------------------------------
// center-sweep

/// Rigid ensemble-center sweep over one fixed disorder realization: a seeded
/// set of frequency offsets is drawn once, then shifted rigidly so the
/// ensemble center walks across `[center_min, center_max]` (relative to the
/// cavity). Emits the full spectrum per center — a 2D map in long form. A
/// zero spread gives the clean two-branch anticrossing with no interior
/// lines.
pub fn run_center_sweep(cfg: &Config) -> Result<ResultTable> {
    let c = &cfg.center_sweep;
    let sys = &cfg.system;
    let n = c.n_qubits;
    let seed = derive_seed(cfg.master_seed, CENTER_OFFSETS_STREAM);
    let offsets: Vec<f64> = if c.delta > 0.0 {
        let mut spec = cfg.disorder_spec(c.delta, seed);
        spec.mean = 0.0;
        draw_realization(&spec, n, 0)?.epsilons
    } else {
        vec![0.0; n]
    };

    let pad = c.delta.max(4.0 * sys.qubit.g.abs() * (n as f64).sqrt()) + 2.0 * sys.kappa;
    let grid = match &cfg.grid {
        Some(gr) => ProbeGrid::linspace(gr.start, gr.stop, gr.points)?,
        None => ProbeGrid::linspace(
            sys.nu_c + c.center_min - pad,
            sys.nu_c + c.center_max + pad,
            1201,
        )?,
    };

    let mut center_col: Vec<f64> = Vec::new();
    let mut f_col: Vec<f64> = Vec::new();
    let mut re_col: Vec<f64> = Vec::new();
    let mut im_col: Vec<f64> = Vec::new();
    let mut abs_col: Vec<f64> = Vec::new();
    for ci in 0..c.center_points {
        let center = if c.center_points == 1 {
            sys.nu_c + c.center_min
        } else {
            let t = ci as f64 / (c.center_points - 1) as f64;
            sys.nu_c + c.center_min + t * (c.center_max - c.center_min)
        };
        let epsilons: Vec<f64> = offsets.iter().map(|d| center + d).collect();
        let system = system_with(cfg, &epsilons);
        let spectrum = transmission_spectrum(&system, &grid)?;
        for (k, s) in spectrum.s21.iter().enumerate() {
            center_col.push(center);
            f_col.push(grid.frequencies()[k]);
            re_col.push(s.re);
            im_col.push(s.im);
            abs_col.push(s.norm());
        }
    }

    let mut table = provenance_table(cfg, "center-sweep");
    table.push_meta_f64("spread_delta", c.delta);
    table.push_meta("n_qubits", n);
    table.push_meta("derived_seed", seed);
    table.push_meta("offsets", join_f64(&offsets));
    table.add_float_column("center", center_col);
    table.add_float_column("f_p", f_col);
    table.add_float_column("s21_re", re_col);
    table.add_float_column("s21_im", im_col);
    table.add_float_column("s21_abs", abs_col);
    Ok(table)
}

// ---------------------------------------------------------------------------
// calibrate

/// Deterministic synthetic two-qubit device used by the `calibrate`
/// subcommand: asymmetric SQUID transmons with distinct readout resonators,
/// mild coil crosstalk, and nonzero frozen flux offsets — a design whose
/// parameters are identifiable from two single-coil sweeps.
pub fn synthetic_device(nu_c: f64) -> DeviceModel {
    DeviceModel {
        nu_c,
        transmons: vec![
            TransmonSpec {
                ej1: 11000.0,
                ej2: 4500.0,
                ec: 250.0,
            },
            TransmonSpec {
                ej1: 12000.0,
                ej2: 5000.0,
                ec: 250.0,
            },
        ],
        readouts: vec![
            ReadoutSpec {
                nu_ind: 6600.0,
                k_ind: 0.9,
                k_common: 0.55,
            },
            ReadoutSpec {
                nu_ind: 6700.0,
                k_ind: 0.9,
                k_common: 0.55,
            },
        ],
        flux_map: FluxMap {
            inductance_matrix: DMatrix::from_row_slice(2, 2, &[0.8, 0.02, 0.03, 1.1]),
            frozen_offsets: DVector::from_vec(vec![0.3, -0.2]),
        },
    }
}

/// Single-coil spectroscopy sweeps of the synthetic device: `per_coil`
/// points tracking qubit 0 while coil 0 sweeps (coil 1 toggling between two
/// parking values), then the mirror image for qubit 1.
pub fn synthetic_sweeps(truth: &DeviceModel, per_coil: usize) -> Result<Vec<Observation>> {
    let mut obs = Vec::with_capacity(2 * per_coil);
    for i in 0..per_coil {
        let t = i as f64 / (per_coil - 1).max(1) as f64;
        let v0 = -0.2 + 1.5 * t;
        let v1 = if i % 2 == 0 { 0.2 } else { 0.5 };
        let voltages = DVector::from_vec(vec![v0, v1]);
        let f = predict_dressed_frequency(truth, &voltages, 0)?;
        obs.push(Observation {
            voltages: vec![v0, v1],
            qubit: 0,
            dressed_freq: f,
        });
    }
    for i in 0..per_coil {
        let t = i as f64 / (per_coil - 1).max(1) as f64;
        let v1 = 0.25 + 1.15 * t;
        let v0 = if i % 2 == 0 { 0.1 } else { 0.6 };
        let voltages = DVector::from_vec(vec![v0, v1]);
        let f = predict_dressed_frequency(truth, &voltages, 1)?;
        obs.push(Observation {
            voltages: vec![v0, v1],
            qubit: 1,
            dressed_freq: f,
        });
    }
    Ok(obs)
}

/// Initial guess for the device fit: the truth with every fitted parameter
/// perturbed by a few percent (readout frequencies stay at their
/// spectroscopy values — the fitter holds them fixed).
fn perturbed_initial(truth: &DeviceModel) -> DeviceModel {
    let mut init = truth.clone();
    init.nu_c += 5.0;
    for t in &mut init.transmons {
        t.ej1 *= 1.03;
        t.ej2 *= 0.97;
        t.ec *= 0.98;
    }
    for r in &mut init.readouts {
        r.k_ind = 0.95;
        r.k_common = 0.5;
    }
    init.flux_map.frozen_offsets.iter_mut().for_each(|o| *o += 0.03);
    init.flux_map.inductance_matrix.iter_mut().for_each(|l| *l *= 0.96);
    init
}

/// End-to-end calibration round trip on the synthetic device: generate
/// sweeps, optionally blur them with Gaussian measurement noise, fit the
/// device model from a perturbed initial guess, and probe the flux and
/// dressed/bare inversions with seeded random draws. Per-observation
/// residuals form the table; summary statistics, fitted parameters, and
/// worst-case round-trip errors land in the metadata.
pub fn run_calibrate(cfg: &Config) -> Result<ResultTable> {
    let cal = &cfg.calibrate;
    let truth = synthetic_device(cfg.system.nu_c);
    let mut observations = synthetic_sweeps(&truth, cal.observations_per_coil)?;
    if cal.noise_mhz > 0.0 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, CALIBRATE_NOISE_STREAM));
        let noise = Normal::new(0.0, cal.noise_mhz)
            .expect("config validation guarantees noise_mhz > 0");
        for o in &mut observations {
            o.dressed_freq += noise.sample(&mut rng);
        }
    }
    let report = fit_device_parameters(&observations, &perturbed_initial(&truth))?;

    let mut index_col: Vec<i64> = Vec::new();
    let mut qubit_col: Vec<i64> = Vec::new();
    let mut v0_col: Vec<f64> = Vec::new();
    let mut v1_col: Vec<f64> = Vec::new();
    let mut observed_col: Vec<f64> = Vec::new();
    let mut predicted_col: Vec<f64> = Vec::new();
    let mut residual_col: Vec<f64> = Vec::new();
    for (i, o) in observations.iter().enumerate() {
        let voltages = DVector::from_vec(o.voltages.clone());
        let predicted = predict_dressed_frequency(&report.model, &voltages, o.qubit)?;
        index_col.push(i as i64);
        qubit_col.push(o.qubit as i64);
        v0_col.push(o.voltages[0]);
        v1_col.push(o.voltages[1]);
        observed_col.push(o.dressed_freq);
        predicted_col.push(predicted);
        residual_col.push(o.dressed_freq - predicted);
    }

    // Seeded spot-checks of the two analytic inversions the fit relies on.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, CALIBRATE_TRIPS_STREAM));
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        use rand::Rng;
        rng.random_range(lo..=hi)
    };
    let mut flux_max = 0.0f64;
    let mut back_max = 0.0f64;
    let mut fwd_max = 0.0f64;
    for _ in 0..cal.roundtrip_trials {
        let spec = TransmonSpec {
            ej1: uniform(&mut rng, 8000.0, 16000.0),
            ej2: uniform(&mut rng, 3000.0, 7000.0),
            ec: uniform(&mut rng, 150.0, 350.0),
        };
        let phi = uniform(&mut rng, 0.05, std::f64::consts::FRAC_PI_2 - 0.05);
        let eps = bare_frequency(&spec, phi);
        let phi_back = flux_from_frequency(&spec, eps, FluxBranch::FirstQuadrant)?;
        flux_max = flux_max.max((phi_back - phi).abs());

        let eps_bare = uniform(&mut rng, 3000.0, 5500.0);
        let pair = dressed_from_bare(eps_bare, 6600.0, 0.9)?;
        let observed = match pair.qubit_branch {
            Branch::Lower => pair.lower,
            Branch::Upper => pair.upper,
        };
        let eps_back = bare_from_dressed(observed, 6600.0, 0.9)?;
        back_max = back_max.max((eps_back - eps_bare).abs());
        let pair2 = dressed_from_bare(eps_back, 6600.0, 0.9)?;
        fwd_max = fwd_max
            .max((pair2.lower - pair.lower).abs())
            .max((pair2.upper - pair.upper).abs());
    }

    let mut table = provenance_table(cfg, "calibrate");
    table.push_meta_f64("noise_mhz", cal.noise_mhz);
    table.push_meta_f64("residual_mean", report.residuals.mean);
    table.push_meta_f64("residual_std", report.residuals.std);
    table.push_meta("n_dropped", report.dropped.len());
    table.push_meta(
        "dropped",
        report
            .dropped
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    table.push_meta("iterations", report.iterations);
    table.push_meta("converged", report.converged);
    table.push_meta_f64("residual_norm", report.residual_norm);
    table.push_meta("roundtrip_trials", cal.roundtrip_trials);
    table.push_meta_f64("flux_roundtrip_max_error", flux_max);
    table.push_meta_f64("dressed_backward_max_error", back_max);
    table.push_meta_f64("dressed_forward_max_error", fwd_max);
    table.push_meta_f64("fit_nu_c", report.model.nu_c);
    table.push_meta_f64("fit_ec", report.model.transmons[0].ec);
    table.push_meta_f64("fit_k_common", report.model.readouts[0].k_common);
    table.push_meta_f64("fit_k_ind", report.model.readouts[0].k_ind);
    for (j, t) in report.model.transmons.iter().enumerate() {
        table.push_meta_f64(&format!("fit_ej1_{j}"), t.ej1);
        table.push_meta_f64(&format!("fit_ej2_{j}"), t.ej2);
        table.push_meta_f64(
            &format!("fit_offset_{j}"),
            report.model.flux_map.frozen_offsets[j],
        );
        table.push_meta_f64(
            &format!("fit_l_{j}"),
            report.model.flux_map.inductance_matrix[(j, j)],
        );
    }
    table.add_int_column("index", index_col);
    table.add_int_column("qubit", qubit_col);
    table.add_float_column("v0", v0_col);
    table.add_float_column("v1", v1_col);
    table.add_float_column("observed", observed_col);
    table.add_float_column("predicted", predicted_col);
    table.add_float_column("residual", residual_col);
    Ok(table)
}

// ---------------------------------------------------------------------------
// fit (re-run the scaling fit from a saved meso table)

/// Reconstruct the ensemble statistics from a meso CSV (its 17-digit floats
/// reproduce every value bitwise) and re-run the scaling fit; with identical
/// inputs the refit reproduces the original `fit_*` metadata exactly.
pub fn run_fit(input: &std::path::Path) -> Result<ResultTable> {
    let src = ResultTable::read_csv(input)?;
    let need = |name: &str| {
        src.float_column(name).ok_or_else(|| {
            CliError::bad_input(input, format!("missing required column `{name}`"))
        })
    };
    let n = need("n_qubits")?;
    let delta = need("spread_delta")?;
    let m = need("n_realizations")?;
    let mean_re = need("mean_re")?;
    let mean_im = need("mean_im")?;
    let var = need("var")?;
    let se_mean = need("se_mean")?;
    let se_var = need("se_var")?;
    let need_meta = |key: &str| -> Result<f64> {
        src.meta(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| {
                CliError::bad_input(
                    input,
                    format!("missing numeric metadata `{key}` (written by the meso subcommand)"),
                )
            })
    };
    let g = need_meta("system_g")?;
    let kappa = need_meta("system_kappa")?;

    let stats: Vec<EnsembleStats> = (0..n.len())
        .map(|i| EnsembleStats {
            n_qubits: n[i] as usize,
            spread_delta: delta[i],
            n_realizations: m[i] as usize,
            mean_s21: Complex64::new(mean_re[i], mean_im[i]),
            var_s21: var[i],
            std_error_mean: se_mean[i],
            std_error_var: se_var[i],
        })
        .collect();
    let fit = fit_meso_scaling(&stats, g, kappa)?;

    let mut table = ResultTable::new();
    table.push_meta("experiment", "fit");
    table.push_meta("source", input.display().to_string());
    if let Some(h) = src.meta("config_hash") {
        table.push_meta("source_config_hash", h);
    }
    table.push_meta("tool_version", env!("CARGO_PKG_VERSION"));
    table.push_meta("timestamp", unix_timestamp());
    table.add_float_column("a", vec![fit.a]);
    table.add_float_column("gamma", vec![fit.gamma_exp]);
    table.add_float_column("c1_re", vec![fit.c1.re]);
    table.add_float_column("c1_im", vec![fit.c1.im]);
    table.add_float_column("b", vec![fit.b]);
    table.add_float_column("beta", vec![fit.beta_exp]);
    table.add_float_column("delta", vec![fit.delta_exp]);
    table.add_float_column("c2", vec![fit.c2]);
    table.add_float_column("a_stderr", vec![fit.a_stderr]);
    table.add_float_column("gamma_stderr", vec![fit.gamma_stderr]);
    table.add_float_column("c1_re_stderr", vec![fit.c1_re_stderr]);
    table.add_float_column("c1_im_stderr", vec![fit.c1_im_stderr]);
    table.add_float_column("b_stderr", vec![fit.b_stderr]);
    table.add_float_column("beta_stderr", vec![fit.beta_stderr]);
    table.add_float_column("delta_stderr", vec![fit.delta_stderr]);
    table.add_float_column("c2_stderr", vec![fit.c2_stderr]);
    table.add_float_column("residual_norm_mean", vec![fit.residual_norm_mean]);
    table.add_float_column("residual_norm_var", vec![fit.residual_norm_var]);
    table.add_float_column("residual_norm", vec![fit.residual_norm]);
    Ok(table)
}
