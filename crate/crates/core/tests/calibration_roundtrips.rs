//! Round-trip and consistency properties of the flux-device model, plus the
//! synthetic device-parameter fit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use qmeta_core::calibration::{
    bare_frequency, bare_from_dressed, dressed_from_bare, extended_eigenfrequencies,
    fit_device_parameters, flux_from_frequency, predict_dressed_frequency, voltages_from_fluxes,
    Branch, DeviceModel, FluxBranch, FluxMap, Observation, ReadoutSpec, TransmonSpec,
};

fn random_spec(rng: &mut ChaCha8Rng) -> TransmonSpec {
    TransmonSpec {
        ej1: rng.random_range(2000.0..20000.0),
        ej2: rng.random_range(2000.0..20000.0),
        ec: rng.random_range(150.0..400.0),
    }
}

/// 1000 random specs and fluxes: frequency → flux → frequency closes to
/// 1e-9, and the monotone branch ordering holds.
#[test]
fn flux_round_trip_thousand_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0001);
    for trial in 0..1000 {
        let spec = random_spec(&mut rng);
        let phi = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let eps = bare_frequency(&spec, phi);
        let rec = flux_from_frequency(&spec, eps, FluxBranch::FirstQuadrant).unwrap();
        assert!(
            (rec - phi).abs() < 1e-9,
            "trial {trial}: phi {phi} recovered as {rec} (spec {spec:?})"
        );
    }
}

#[test]
fn bare_frequency_monotone_on_first_quadrant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0002);
    for _ in 0..50 {
        let spec = random_spec(&mut rng);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / 100.0;
            let eps = bare_frequency(&spec, phi);
            assert!(eps < prev, "not strictly decreasing at phi={phi}");
            prev = eps;
        }
    }
}

/// 1000 random two-mode configurations: the inverse pair closes to 1e-9 in
/// both well-conditioned directions — bare → dressed → bare on the qubit
/// branch, and dressed → bare → dressed on both branches. (Recovering the
/// bare frequency through the resonator-like branch is intrinsically
/// ill-conditioned: d ε/d ε_c grows like the inverse participation of the
/// qubit in that mode, so no algorithm can return it to 1e-9 from an f64
/// dressed value.)
#[test]
fn dressed_bare_round_trip_thousand_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0003);
    for trial in 0..1000 {
        let eps = rng.random_range(3000.0..7000.0);
        let nu = rng.random_range(5500.0..8000.0);
        let slope = rng.random_range(0.1..2.0);
        let pair = dressed_from_bare(eps, nu, slope).unwrap();
        assert!(
            pair.upper > pair.lower,
            "trial {trial}: branches crossed ({pair:?})"
        );
        let qubit_ec = match pair.qubit_branch {
            Branch::Lower => pair.lower,
            Branch::Upper => pair.upper,
        };
        let back = bare_from_dressed(qubit_ec, nu, slope).unwrap();
        assert!(
            (back - eps).abs() < 1e-9,
            "trial {trial}: eps {eps} via qubit branch {qubit_ec} recovered as {back}"
        );
        for (ec, pick) in [(pair.lower, Branch::Lower), (pair.upper, Branch::Upper)] {
            let bare = bare_from_dressed(ec, nu, slope).unwrap();
            let again = dressed_from_bare(bare, nu, slope).unwrap();
            let forward = match pick {
                Branch::Lower => again.lower,
                Branch::Upper => again.upper,
            };
            assert!(
                (forward - ec).abs() < 1e-9,
                "trial {trial}: dressed {ec} re-imaged as {forward}"
            );
        }
    }
}

/// Far-detuned two-mode model: the qubit branch is shifted by the dispersive
/// pull kε/(ε−ν), direction and magnitude to first order.
#[test]
fn dispersive_shift_direction_and_size() {
    let eps = 5000.0;
    let nu = 6500.0;
    let slope = 0.5;
    let k = slope * slope;
    let pair = dressed_from_bare(eps, nu, slope).unwrap();
    assert_eq!(pair.qubit_branch, Branch::Lower);
    let shift = pair.lower - eps;
    let first_order = k * eps / (eps - nu);
    assert!(shift < 0.0, "qubit below the resonator is pushed down");
    assert!(
        ((shift - first_order) / first_order).abs() < 0.01,
        "shift {shift} vs first order {first_order}"
    );
}

/// Random rectangular flux maps: the least-squares residual is orthogonal to
/// the column space of L.
#[test]
fn voltage_solve_residual_orthogonality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0004);
    for _ in 0..50 {
        let l = DMatrix::from_fn(8, 5, |_, _| rng.random_range(-1.0..1.0));
        let offsets = DVector::from_fn(8, |_, _| rng.random_range(-0.5..0.5));
        let target = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let map = FluxMap {
            inductance_matrix: l.clone(),
            frozen_offsets: offsets.clone(),
        };
        let sol = voltages_from_fluxes(&map, &target).unwrap();
        let r = &l * &sol.voltages + offsets - target;
        assert!((r.norm() - sol.residual_norm).abs() < 1e-12);
        let lt_r = l.transpose() * r;
        assert!(
            lt_r.amax() < 1e-9,
            "residual not orthogonal to col(L): {}",
            lt_r.amax()
        );
    }
}

/// Well-conditioned square 25×25 map: the solve is exact to 1e-9.
#[test]
fn voltage_solve_square_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0005);
    let l = DMatrix::from_fn(25, 25, |i, j| {
        let diag = if i == j { 1.0 } else { 0.0 };
        diag + 0.1 * rng.random_range(-1.0..1.0)
    });
    let offsets = DVector::from_fn(25, |_, _| rng.random_range(-0.5..0.5));
    let target = DVector::from_fn(25, |_, _| rng.random_range(0.0..1.5));
    let map = FluxMap {
        inductance_matrix: l.clone(),
        frozen_offsets: offsets.clone(),
    };
    let sol = voltages_from_fluxes(&map, &target).unwrap();
    assert!(sol.residual_norm < 1e-9);
    assert!((&l * &sol.voltages + offsets - target).norm() < 1e-9);
}

/// Randomized multimode problems conserve the trace.
#[test]
fn extended_modes_trace_conserved_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0006);
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let nu_c = rng.random_range(5500.0..6000.0);
        let eps: Vec<f64> = (0..n).map(|_| rng.random_range(4000.0..6000.0)).collect();
        let readouts: Vec<ReadoutSpec> = (0..n)
            .map(|_| ReadoutSpec {
                nu_ind: rng.random_range(6200.0..7200.0),
                k_ind: rng.random_range(0.0..1.5),
                k_common: rng.random_range(0.0..1.0),
            })
            .collect();
        let modes = extended_eigenfrequencies(nu_c, &eps, &readouts).unwrap();
        let trace =
            nu_c + eps.iter().sum::<f64>() + readouts.iter().map(|r| r.nu_ind).sum::<f64>();
        let sum: f64 = modes.frequencies.iter().sum();
        assert!(
            ((sum - trace) / trace).abs() < 1e-9,
            "trace drift: {sum} vs {trace}"
        );
        assert_eq!(modes.frequencies.len(), 2 * n + 1);
        assert_eq!(modes.qubit_modes.len(), n);
    }
}

/// Weak common coupling: the assigned qubit mode of the 3-mode problem
/// matches the two-mode dressed branch to first order.
#[test]
fn qubit_mode_matches_two_mode_reduction() {
    let eps = 5600.0;
    let r = ReadoutSpec {
        nu_ind: 6600.0,
        k_ind: 0.9,
        k_common: 0.05,
    };
    let modes = extended_eigenfrequencies(5755.0, &[eps], &[r]).unwrap();
    let pair = dressed_from_bare(eps, r.nu_ind, r.k_ind).unwrap();
    let dressed_qubit = match pair.qubit_branch {
        Branch::Lower => pair.lower,
        Branch::Upper => pair.upper,
    };
    let assigned = modes.frequencies[modes.qubit_modes[0]];
    assert!(
        (assigned - dressed_qubit).abs() < 0.2,
        "3-mode qubit line {assigned} vs two-mode {dressed_qubit}"
    );
}

// ---------------------------------------------------------------------------
// synthetic device fit
// ---------------------------------------------------------------------------

fn truth_model() -> DeviceModel {
    DeviceModel {
        nu_c: 5755.0,
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

/// Initial guess for the fit. The readout resonator frequencies are carried
/// over unchanged: the fitter freezes them at their initial values (they are
/// read directly off resonator spectroscopy in practice, and qubit-mode data
/// barely constrains them), so the synthetic design supplies the true ones.
/// Everything the fitter actually optimizes — cavity frequency, Josephson
/// energies, charging energy, coupling slopes, flux offsets, and the
/// inductance diagonal — starts perturbed by a few percent.
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
    for j in 0..2 {
        init.flux_map.frozen_offsets[j] += 0.03;
        init.flux_map.inductance_matrix[(j, j)] *= 0.96;
    }
    init
}

fn sweep_observations(truth: &DeviceModel, per_coil: usize) -> Vec<Observation> {
    let mut obs = Vec::new();
    // qubit 0: sweep coil 0, alternate coil 1 between two parked values
    for i in 0..per_coil {
        let v0 = -0.2 + 1.5 * i as f64 / (per_coil - 1) as f64;
        let v1 = if i % 2 == 0 { 0.2 } else { 0.5 };
        let v = DVector::from_vec(vec![v0, v1]);
        obs.push(Observation {
            voltages: vec![v0, v1],
            qubit: 0,
            dressed_freq: predict_dressed_frequency(truth, &v, 0).unwrap(),
        });
    }
    // qubit 1: sweep coil 1, alternate coil 0
    for i in 0..per_coil {
        let v1 = 0.25 + 1.15 * i as f64 / (per_coil - 1) as f64;
        let v0 = if i % 2 == 0 { 0.1 } else { 0.6 };
        let v = DVector::from_vec(vec![v0, v1]);
        obs.push(Observation {
            voltages: vec![v0, v1],
            qubit: 1,
            dressed_freq: predict_dressed_frequency(truth, &v, 1).unwrap(),
        });
    }
    obs
}

/// Noise-free synthetic observations: the fit reproduces the data to
/// sub-µHz residuals and lands back on the generating parameters.
#[test]
fn device_fit_noise_free_round_trip() {
    let truth = truth_model();
    let observations = sweep_observations(&truth, 12);
    let init = perturbed_initial(&truth);
    let report = fit_device_parameters(&observations, &init).unwrap();

    assert!(
        report.residuals.std < 1e-6,
        "noise-free residual std = {} MHz",
        report.residuals.std
    );
    assert!(report.converged, "fit should converge on clean data");
    assert!(report.dropped.is_empty());

    let m = &report.model;
    assert!((m.nu_c - truth.nu_c).abs() / truth.nu_c < 1e-2);
    for j in 0..2 {
        // Josephson pair identified up to exchange: compare sum and |diff|
        let (s_fit, d_fit) = (
            m.transmons[j].ej1 + m.transmons[j].ej2,
            (m.transmons[j].ej1 - m.transmons[j].ej2).abs(),
        );
        let (s_true, d_true) = (
            truth.transmons[j].ej1 + truth.transmons[j].ej2,
            (truth.transmons[j].ej1 - truth.transmons[j].ej2).abs(),
        );
        assert!((s_fit - s_true).abs() / s_true < 1e-2, "qubit {j} EJ sum {s_fit}");
        assert!((d_fit - d_true).abs() / d_true < 5e-2, "qubit {j} EJ diff {d_fit}");
        assert!(
            (m.flux_map.frozen_offsets[j] - truth.flux_map.frozen_offsets[j]).abs() < 1e-2
        );
        let l_fit = m.flux_map.inductance_matrix[(j, j)];
        let l_true = truth.flux_map.inductance_matrix[(j, j)];
        assert!((l_fit - l_true).abs() / l_true < 1e-2, "L[{j},{j}] = {l_fit}");
    }
}

/// 20 MHz Gaussian observation noise: the recovered residual spread matches
/// the injected noise, 20 ± 2 MHz.
#[test]
fn device_fit_noise_residual_std() {
    let truth = truth_model();
    let mut observations = sweep_observations(&truth, 120);
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0007);
    let noise = Normal::new(0.0, 20.0).unwrap();
    for obs in &mut observations {
        obs.dressed_freq += noise.sample(&mut rng);
    }
    let init = perturbed_initial(&truth);
    let report = fit_device_parameters(&observations, &init).unwrap();
    assert!(
        (report.residuals.std - 20.0).abs() < 2.0,
        "residual std = {} MHz, want 20 +- 2",
        report.residuals.std
    );
    assert!(
        report.dropped.len() <= 5,
        "Gaussian noise should drop at most a few points, dropped {:?}",
        report.dropped
    );
}

/// A single gross outlier is identified by the 3·std rule, dropped once, and
/// the refit recovers the clean residual spread.
#[test]
fn device_fit_drops_gross_outlier() {
    let truth = truth_model();
    let mut observations = sweep_observations(&truth, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11_0008);
    let noise = Normal::new(0.0, 2.0).unwrap();
    for obs in &mut observations {
        obs.dressed_freq += noise.sample(&mut rng);
    }
    observations[17].dressed_freq += 200.0;
    let init = perturbed_initial(&truth);
    let report = fit_device_parameters(&observations, &init).unwrap();
    assert_eq!(report.dropped, vec![17], "outlier index");
    assert!(
        (report.residuals.std - 2.0).abs() < 0.5,
        "post-drop residual std = {}",
        report.residuals.std
    );
}
