//! Flux-tunable device model: transmon frequency vs SQUID flux, the linear
//! voltage→flux map, dressed↔bare conversion through a coupled two-oscillator
//! model, the extended multimode eigenproblem, and least-squares device
//! parameter extraction from spectroscopy-style observations.
//!
//! Unit conventions: energies and frequencies in MHz, fluxes dimensionless
//! (radian-equivalent). Coupling "slopes" carry MHz^(1/2) so that a qubit at
//! bare frequency ε couples with strength g = slope·√ε (MHz); the closed
//! two-mode formulas below use k = slope² (MHz), i.e. g² = k·ε.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::lm;
use crate::estimators::{residual_stats, ResidualStats};
use crate::exec;

/// Josephson and charging energies of an asymmetric-SQUID transmon (MHz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmonSpec {
    pub ej1: f64,
    pub ej2: f64,
    pub ec: f64,
}

impl TransmonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ej1 > 0.0) || !self.ej1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Josephson energy ej1 must be positive and finite, got {}",
                self.ej1
            )));
        }
        if !(self.ej2 > 0.0) || !self.ej2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Josephson energy ej2 must be positive and finite, got {}",
                self.ej2
            )));
        }
        if !(self.ec > 0.0) || !self.ec.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "charging energy ec must be positive and finite, got {}",
                self.ec
            )));
        }
        Ok(())
    }

    /// True when the junction-to-charging ratio (E_J1+E_J2)/E_C is at least
    /// 10 — below that the two-level-plus-E_C frequency formula degrades.
    pub fn is_transmon_regime(&self) -> bool {
        (self.ej1 + self.ej2) / self.ec >= 10.0
    }
}

/// Linear map from coil voltages to SQUID fluxes: φ = L·V + φ⁰.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxMap {
    /// N_qubits × N_coils, dimensionless flux per volt. Need not be square
    /// or diagonal (crosstalk allowed).
    pub inductance_matrix: DMatrix<f64>,
    /// Frozen flux offsets, one per qubit.
    pub frozen_offsets: DVector<f64>,
}

impl FluxMap {
    pub fn validate(&self) -> Result<()> {
        if self.inductance_matrix.nrows() != self.frozen_offsets.len() {
            return Err(Error::LengthMismatch {
                left: self.inductance_matrix.nrows(),
                right: self.frozen_offsets.len(),
            });
        }
        if self.inductance_matrix.iter().any(|v| !v.is_finite())
            || self.frozen_offsets.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "flux map entries must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Fluxes produced by a voltage setting: φ = L·V + φ⁰.
    pub fn fluxes(&self, voltages: &DVector<f64>) -> Result<DVector<f64>> {
        if voltages.len() != self.inductance_matrix.ncols() {
            return Err(Error::LengthMismatch {
                left: voltages.len(),
                right: self.inductance_matrix.ncols(),
            });
        }
        Ok(&self.inductance_matrix * voltages + &self.frozen_offsets)
    }
}

/// Per-qubit readout-resonator frequency and the two coupling slopes
/// (individual readout and common cavity), slopes in MHz^(1/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutSpec {
    pub nu_ind: f64,
    /// Qubit ↔ individual readout resonator coupling slope: g_ind = k_ind·√ε.
    pub k_ind: f64,
    /// Qubit ↔ common cavity coupling slope: g = k_common·√ε.
    pub k_common: f64,
}

impl ReadoutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_ind > 0.0) || !self.nu_ind.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "readout resonator frequency must be positive and finite, got {}",
                self.nu_ind
            )));
        }
        if !self.k_ind.is_finite() || !self.k_common.is_finite() {
            return Err(Error::InvalidParameter(
                "coupling slopes must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Bare transmon frequency at SQUID flux φ (MHz):
/// √(8E_C)·((E_J1+E_J2)²cos²φ + (E_J1−E_J2)²sin²φ)^(1/4) − E_C.
///
/// π-periodic and even in φ; maximum at φ = 0, monotone decreasing on
/// [0, π/2]. For a symmetric SQUID the φ = π/2 floor is −E_C, which is
/// unphysical — downstream consumers requiring ε > 0 reject it.
pub fn bare_frequency(spec: &TransmonSpec, phi: f64) -> f64 {
    let sum = spec.ej1 + spec.ej2;
    let diff = spec.ej1 - spec.ej2;
    let c = phi.cos();
    let s = phi.sin();
    let ej_sq = sum * sum * c * c + diff * diff * s * s;
    (8.0 * spec.ec).sqrt() * ej_sq.sqrt().sqrt() - spec.ec
}

/// Flux branch selector for [`flux_from_frequency`]. Only the first flux
/// quadrant (φ ∈ [0, π/2], one monotone branch per sweet spot) is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[non_exhaustive]
pub enum FluxBranch {
    FirstQuadrant,
}

/// Closed-form inverse of [`bare_frequency`] on φ ∈ [0, π/2]. The target
/// must lie within the attainable band [ε(π/2), ε(0)].
pub fn flux_from_frequency(
    spec: &TransmonSpec,
    epsilon_target: f64,
    branch: FluxBranch,
) -> Result<f64> {
    spec.validate()?;
    let FluxBranch::FirstQuadrant = branch;
    let lo = bare_frequency(spec, std::f64::consts::FRAC_PI_2);
    let hi = bare_frequency(spec, 0.0);
    let band_tol = 16.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0);
    if !epsilon_target.is_finite() || epsilon_target < lo - band_tol || epsilon_target > hi + band_tol
    {
        return Err(Error::OutOfBand {
            target: epsilon_target,
            lo,
            hi,
        });
    }
    let sum = spec.ej1 + spec.ej2;
    let diff = spec.ej1 - spec.ej2;
    let s = {
        let root = (epsilon_target + spec.ec) * (epsilon_target + spec.ec) / (8.0 * spec.ec);
        root * root
    };
    let num = s - diff * diff;
    let den = sum * sum - diff * diff;
    // Snap exactly to the endpoints when rounding noise puts the ratio a few
    // ulp outside [0, 1]; the band check above already rejected real
    // out-of-range targets.
    let snap = 16.0 * f64::EPSILON * den;
    if num >= den - snap {
        return Ok(0.0);
    }
    if num <= snap {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    Ok((num / den).sqrt().acos())
}

/// Which dressed branch carries the larger qubit participation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Lower,
    Upper,
}

/// Both eigenfrequencies of the coupled qubit–readout pair, with the branch
/// of larger qubit participation flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedPair {
    pub lower: f64,
    pub upper: f64,
    pub qubit_branch: Branch,
}

/// Dressed eigenfrequencies of the two-mode model
/// ε_c± = (ε+ν)/2 ± √((ε−ν)² + 4kε)/2 with k = k_ind² (so g² = kε).
/// `k_ind` is the coupling slope in MHz^(1/2).
pub fn dressed_from_bare(epsilon: f64, nu_ind: f64, k_ind: f64) -> Result<DressedPair> {
    if !(epsilon > 0.0) || !(nu_ind > 0.0) || !epsilon.is_finite() || !nu_ind.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dressed_from_bare requires positive finite frequencies, got epsilon={epsilon}, nu_ind={nu_ind}"
        )));
    }
    if !k_ind.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "coupling slope must be finite, got {k_ind}"
        )));
    }
    let k = k_ind * k_ind;
    let half_sum = 0.5 * (epsilon + nu_ind);
    let half_gap = 0.5 * ((epsilon - nu_ind) * (epsilon - nu_ind) + 4.0 * k * epsilon).sqrt();
    let lower = half_sum - half_gap;
    let upper = half_sum + half_gap;
    // Qubit participation is larger on the branch closer to the bare qubit
    // frequency; exact ties go to the lower branch.
    let qubit_branch = if (lower - epsilon).abs() <= (upper - epsilon).abs() {
        Branch::Lower
    } else {
        Branch::Upper
    };
    Ok(DressedPair {
        lower,
        upper,
        qubit_branch,
    })
}

/// Inverts the two-mode model: the bare qubit frequency whose dressed image
/// (on the branch continuous through ε_c) is `epsilon_c`. Algebraically
/// ε = ε_c(ε_c−ν)/(ε_c−ν+k) with k = k_ind²; dressed frequencies inside the
/// forbidden gap [ν−k, ν] have no positive bare preimage.
pub fn bare_from_dressed(epsilon_c: f64, nu_ind: f64, k_ind: f64) -> Result<f64> {
    if !(epsilon_c > 0.0) || !(nu_ind > 0.0) || !epsilon_c.is_finite() || !nu_ind.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bare_from_dressed requires positive finite frequencies, got epsilon_c={epsilon_c}, nu_ind={nu_ind}"
        )));
    }
    if !k_ind.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "coupling slope must be finite, got {k_ind}"
        )));
    }
    let k = k_ind * k_ind;
    if k == 0.0 {
        return Ok(epsilon_c);
    }
    let gap_lo = nu_ind - k;
    if epsilon_c >= gap_lo && epsilon_c <= nu_ind {
        return Err(Error::InvalidParameter(format!(
            "dressed frequency {epsilon_c} MHz lies in the forbidden gap [{gap_lo}, {nu_ind}] MHz of the two-mode model"
        )));
    }
    let epsilon = epsilon_c * (epsilon_c - nu_ind) / (epsilon_c - nu_ind + k);
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Numerical(format!(
            "no positive bare frequency reproduces dressed frequency {epsilon_c} MHz (got {epsilon})"
        )));
    }
    Ok(epsilon)
}

/// Least-squares solution of L·V + φ⁰ = φ_target.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    pub voltages: DVector<f64>,
    /// ‖L·V + φ⁰ − φ_target‖₂ at the solution; zero (to rounding) whenever
    /// the system is consistent.
    pub residual_norm: f64,
}

/// Coil voltages reaching the target fluxes: minimizes ‖L·V + φ⁰ − φ‖₂ via
/// SVD. Rank-deficient or inconsistent systems still return the minimizer,
/// with the residual norm reported for the caller to judge.
pub fn voltages_from_fluxes(map: &FluxMap, target_phis: &DVector<f64>) -> Result<VoltageSolution> {
    map.validate()?;
    if target_phis.len() != map.inductance_matrix.nrows() {
        return Err(Error::LengthMismatch {
            left: target_phis.len(),
            right: map.inductance_matrix.nrows(),
        });
    }
    let rhs = target_phis - &map.frozen_offsets;
    let svd = map.inductance_matrix.clone().svd(true, true);
    let voltages = svd
        .solve(&rhs, f64::EPSILON * 1e3)
        .map_err(|e| Error::Numerical(format!("SVD solve failed: {e}")))?;
    let residual_norm = (&map.inductance_matrix * &voltages - rhs).norm();
    Ok(VoltageSolution {
        voltages,
        residual_norm,
    })
}

/// Eigenfrequencies of the (2N+1)-mode single-excitation problem plus the
/// eigenmode index assigned to each qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModes {
    /// All 2N+1 eigenfrequencies, ascending.
    pub frequencies: Vec<f64>,
    /// For each qubit, the index into `frequencies` of the eigenmode with
    /// the largest squared eigenvector component on that qubit (exact ties
    /// broken toward the lower index).
    pub qubit_modes: Vec<usize>,
}

/// Builds and diagonalizes the rotating-wave (2N+1)-mode matrix over
/// {common cavity, N qubits, N individual readout resonators}: qubit j
/// couples to the cavity with k_common_j·√ε_j and to its own readout with
/// k_ind_j·√ε_j. Counter-rotating terms are dropped, so the matrix is real
/// symmetric and the eigenvalue sum equals the trace Σ(bare frequencies);
/// the truncation error in mode frequencies is O(g/ν).
pub fn extended_eigenfrequencies(
    nu_c: f64,
    epsilons: &[f64],
    readouts: &[ReadoutSpec],
) -> Result<ExtendedModes> {
    if epsilons.len() != readouts.len() {
        return Err(Error::LengthMismatch {
            left: epsilons.len(),
            right: readouts.len(),
        });
    }
    if !(nu_c > 0.0) || !nu_c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cavity frequency must be positive and finite, got {nu_c}"
        )));
    }
    for (j, (&eps, r)) in epsilons.iter().zip(readouts).enumerate() {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bare frequency of qubit {j} must be positive and finite, got {eps}"
            )));
        }
        r.validate()?;
    }
    let n = epsilons.len();
    let dim = 2 * n + 1;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    h[(0, 0)] = nu_c;
    for (j, (&eps, r)) in epsilons.iter().zip(readouts).enumerate() {
        let qi = 1 + j;
        let ri = 1 + n + j;
        h[(qi, qi)] = eps;
        h[(ri, ri)] = r.nu_ind;
        let g_common = r.k_common * eps.sqrt();
        let g_ind = r.k_ind * eps.sqrt();
        h[(0, qi)] = g_common;
        h[(qi, 0)] = g_common;
        h[(qi, ri)] = g_ind;
        h[(ri, qi)] = g_ind;
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let frequencies: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let qubit_modes = (0..n)
        .map(|j| {
            let row = 1 + j;
            let mut best = 0usize;
            let mut best_w = -1.0f64;
            for (m, &col) in order.iter().enumerate() {
                let w = eig.eigenvectors[(row, col)].powi(2);
                if w > best_w {
                    best_w = w;
                    best = m;
                }
            }
            best
        })
        .collect();
    Ok(ExtendedModes {
        frequencies,
        qubit_modes,
    })
}

/// Complete flux-tunable device description: common cavity plus per-qubit
/// transmon, readout, and the voltage→flux map.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub nu_c: f64,
    pub transmons: Vec<TransmonSpec>,
    pub readouts: Vec<ReadoutSpec>,
    pub flux_map: FluxMap,
}

impl DeviceModel {
    pub fn n_qubits(&self) -> usize {
        self.transmons.len()
    }

    pub fn n_coils(&self) -> usize {
        self.flux_map.inductance_matrix.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_c > 0.0) || !self.nu_c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cavity frequency must be positive and finite, got {}",
                self.nu_c
            )));
        }
        if self.transmons.is_empty() {
            return Err(Error::InvalidParameter(
                "device model needs at least one qubit".into(),
            ));
        }
        if self.transmons.len() != self.readouts.len() {
            return Err(Error::LengthMismatch {
                left: self.transmons.len(),
                right: self.readouts.len(),
            });
        }
        self.flux_map.validate()?;
        if self.flux_map.inductance_matrix.nrows() != self.transmons.len() {
            return Err(Error::LengthMismatch {
                left: self.flux_map.inductance_matrix.nrows(),
                right: self.transmons.len(),
            });
        }
        for t in &self.transmons {
            t.validate()?;
        }
        for r in &self.readouts {
            r.validate()?;
        }
        Ok(())
    }

    /// Bare qubit frequencies at a voltage setting: V → φ → ε.
    pub fn bare_frequencies(&self, voltages: &DVector<f64>) -> Result<Vec<f64>> {
        let phis = self.flux_map.fluxes(voltages)?;
        Ok(self
            .transmons
            .iter()
            .zip(phis.iter())
            .map(|(t, &phi)| bare_frequency(t, phi))
            .collect())
    }
}

/// The eigenfrequency assigned to `qubit` at a voltage setting:
/// V → φ → ε → extended eigenproblem → assigned mode.
pub fn predict_dressed_frequency(
    model: &DeviceModel,
    voltages: &DVector<f64>,
    qubit: usize,
) -> Result<f64> {
    if qubit >= model.n_qubits() {
        return Err(Error::InvalidParameter(format!(
            "qubit index {qubit} out of range for a {}-qubit device",
            model.n_qubits()
        )));
    }
    let epsilons = model.bare_frequencies(voltages)?;
    let modes = extended_eigenfrequencies(model.nu_c, &epsilons, &model.readouts)?;
    Ok(modes.frequencies[modes.qubit_modes[qubit]])
}

/// One spectroscopy-style observation: coil voltages, which qubit's line was
/// followed, and the observed dressed frequency (MHz).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub voltages: Vec<f64>,
    pub qubit: usize,
    pub dressed_freq: f64,
}

/// Outcome of [`fit_device_parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFitReport {
    pub model: DeviceModel,
    /// Residual summary (observed − predicted) over the observations kept
    /// after outlier removal.
    pub residuals: ResidualStats,
    /// Indices (into the input observations) dropped by the once-applied
    /// |r| > 3·std outlier rule.
    pub dropped: Vec<usize>,
    /// Total optimizer iterations across the initial fit and the refit.
    pub iterations: usize,
    /// √SSR over the kept observations.
    pub residual_norm: f64,
    /// False when the optimizer hit its iteration cap; the report then
    /// carries the best parameters found so far.
    pub converged: bool,
}

const FIT_PENALTY: f64 = 1e6;

/// Free parameters: shared [ν_c, E_C, k_common, k_ind] plus per-qubit
/// [E_J1, E_J2, φ⁰, L_jj]. Off-diagonal inductance entries and the readout
/// resonator frequencies stay frozen at their initial values: readout
/// frequencies are read directly off resonator spectroscopy in practice, and
/// the qubit-mode data fitted here constrains them only through a weak
/// dispersive pull — a nearly flat cost direction that lets the optimizer
/// drag them arbitrarily far while barely changing the fit quality.
fn pack_params(model: &DeviceModel) -> Vec<f64> {
    let mut p = vec![
        model.nu_c,
        model.transmons[0].ec,
        model.readouts[0].k_common,
        model.readouts[0].k_ind,
    ];
    for j in 0..model.n_qubits() {
        p.push(model.transmons[j].ej1);
        p.push(model.transmons[j].ej2);
        p.push(model.flux_map.frozen_offsets[j]);
        p.push(model.flux_map.inductance_matrix[(j, j)]);
    }
    p
}

fn unpack_params(template: &DeviceModel, p: &[f64]) -> DeviceModel {
    let mut model = template.clone();
    model.nu_c = p[0];
    let (ec, k_common, k_ind) = (p[1], p[2], p[3]);
    for j in 0..model.n_qubits() {
        let base = 4 + 4 * j;
        model.transmons[j] = TransmonSpec {
            ej1: p[base],
            ej2: p[base + 1],
            ec,
        };
        model.readouts[j] = ReadoutSpec {
            nu_ind: model.readouts[j].nu_ind,
            k_ind,
            k_common,
        };
        model.flux_map.frozen_offsets[j] = p[base + 2];
        model.flux_map.inductance_matrix[(j, j)] = p[base + 3];
    }
    model
}

fn predict_all(model: &DeviceModel, observations: &[Observation]) -> Vec<Result<f64>> {
    exec::map_indexed(observations.len(), |i| {
        let obs = &observations[i];
        let v = DVector::from_column_slice(&obs.voltages);
        predict_dressed_frequency(model, &v, obs.qubit)
    })
}

/// Nonlinear least squares over the device parameters, minimizing
/// Σ(observed − predicted eigenfrequency)². Shares E_C and the two coupling
/// slopes across qubits (reading initial values from qubit 0) and keeps
/// inductance crosstalk and the readout resonator frequencies frozen at
/// their initial values, which keeps the problem identifiable from per-coil
/// qubit-mode sweeps (see [`pack_params`] for why); the Josephson pair of
/// each qubit is identified only up to exchange. After the first solution,
/// observations with |residual| > 3·std are dropped once and the remainder
/// refit. On hitting the iteration cap the best-so-far parameters are
/// reported with `converged = false` rather than an error.
pub fn fit_device_parameters(
    observations: &[Observation],
    initial: &DeviceModel,
) -> Result<DeviceFitReport> {
    initial.validate()?;
    let n_coils = initial.n_coils();
    if initial.flux_map.inductance_matrix.nrows() != n_coils {
        return Err(Error::InvalidParameter(format!(
            "parameter fitting requires a square inductance matrix (diagonal entries are fitted), got {}x{}",
            initial.flux_map.inductance_matrix.nrows(),
            n_coils
        )));
    }
    let n_params = 4 + 4 * initial.n_qubits();
    if observations.len() < n_params + 1 {
        return Err(Error::InvalidParameter(format!(
            "parameter fitting needs more observations than the {n_params} free parameters, got {}",
            observations.len()
        )));
    }
    for (i, obs) in observations.iter().enumerate() {
        if obs.voltages.len() != n_coils {
            return Err(Error::LengthMismatch {
                left: obs.voltages.len(),
                right: n_coils,
            });
        }
        if obs.qubit >= initial.n_qubits() {
            return Err(Error::InvalidParameter(format!(
                "observation {i} targets qubit {} of a {}-qubit device",
                obs.qubit,
                initial.n_qubits()
            )));
        }
        if !obs.dressed_freq.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "observation {i} has non-finite dressed frequency"
            )));
        }
    }
    for coil in 0..n_coils {
        let mut values: Vec<f64> = observations.iter().map(|o| o.voltages[coil]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        if values.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "observations must span at least 2 distinct voltages on every coil; coil {coil} is constant"
            )));
        }
    }
    for (i, r) in predict_all(initial, observations).into_iter().enumerate() {
        if let Err(e) = r {
            return Err(Error::InvalidParameter(format!(
                "initial device model cannot predict observation {i}: {e}"
            )));
        }
    }

    let p0 = pack_params(initial);
    let scales: Vec<f64> = p0.iter().map(|p| p.abs().max(0.05)).collect();
    let q0: Vec<f64> = p0.iter().zip(&scales).map(|(p, s)| p / s).collect();

    let run_fit = |keep: &[usize], q_start: &[f64]| -> (Vec<f64>, usize, bool, f64) {
        let kept_obs: Vec<Observation> = keep.iter().map(|&i| observations[i].clone()).collect();
        let residuals = |q: &[f64]| -> Vec<f64> {
            let p: Vec<f64> = q.iter().zip(&scales).map(|(q, s)| q * s).collect();
            let model = unpack_params(initial, &p);
            predict_all(&model, &kept_obs)
                .into_iter()
                .zip(&kept_obs)
                .map(|(pred, obs)| match pred {
                    Ok(f) => f - obs.dressed_freq,
                    Err(_) => FIT_PENALTY,
                })
                .collect()
        };
        // The eigenmode-assignment landscape has spurious minima far from any
        // physical operating point (e.g. a readout frequency collapsing toward
        // zero); capping each step at 25% of a parameter's own scale keeps the
        // iterates in the basin of the initial guess. The ±60% box bounds the
        // statistically flat directions: at realistic observation noise the
        // qubit-mode data pins e.g. only k_common²/(ν_c − ε), so without a box
        // the cavity frequency and coupling slope can run away together while
        // dragging the junction energies out of reach.
        // Noisy observation sets make the cost χ²-like: its statistical
        // resolution is ~√(2/dof), so per-step relative improvements below
        // 1e-6 are noise polishing, not progress. Noise-free fits pass
        // through with O(1) per-step improvements and converge to the
        // machine floor regardless.
        let opts = lm::LmOptions {
            max_component_step: Some(0.25),
            cost_tol: 1e-6,
            bounds: Some(
                q0.iter()
                    .map(|q| {
                        let w = 0.6 * q.abs().max(1.0);
                        (q - w, q + w)
                    })
                    .collect(),
            ),
            ..Default::default()
        };
        match lm::minimize(residuals, q_start, &opts) {
            Ok(fit) => (fit.params, fit.iterations, true, fit.residual_norm),
            Err(Error::FitDidNotConverge {
                iterations,
                residual_norm,
                params,
            }) => (params, iterations, false, residual_norm),
            Err(_) => (q_start.to_vec(), 0, false, f64::INFINITY),
        }
    };

    // A single LM run can stall partway down the long shallow valleys this
    // model produces (many parameter combinations reproduce the qubit-mode
    // data almost equally well). Restarting from the stall point with fresh
    // damping keeps descending; stop once the residual norm stops improving.
    let run_polished = |keep: &[usize], q_start: &[f64]| -> (Vec<f64>, usize, bool, f64) {
        let (mut q, mut iters, mut conv, mut norm) = run_fit(keep, q_start);
        for _ in 0..8 {
            if !norm.is_finite() {
                break;
            }
            let (q2, it, cv, norm2) = run_fit(keep, &q);
            iters += it;
            if norm2 < norm {
                q = q2;
                conv = cv;
            }
            let improved = norm2 < norm * (1.0 - 1e-3);
            norm = norm.min(norm2);
            if !improved {
                break;
            }
        }
        (q, iters, conv, norm)
    };

    let all: Vec<usize> = (0..observations.len()).collect();
    let (q1, iter1, conv1, _) = run_polished(&all, &q0);
    let p1: Vec<f64> = q1.iter().zip(&scales).map(|(q, s)| q * s).collect();
    let model1 = unpack_params(initial, &p1);

    let preds1 = predict_all(&model1, observations);
    let observed: Vec<f64> = observations.iter().map(|o| o.dressed_freq).collect();
    let predicted1: Vec<f64> = preds1
        .iter()
        .map(|r| *r.as_ref().unwrap_or(&f64::INFINITY))
        .collect();
    let stats1 = residual_stats(&observed, &predicted1)?;
    let dropped: Vec<usize> = if stats1.std > 0.0 {
        observed
            .iter()
            .zip(&predicted1)
            .enumerate()
            .filter(|(_, (o, p))| (*o - *p).abs() > 3.0 * stats1.std)
            .map(|(i, _)| i)
            .collect()
    } else {
        Vec::new()
    };
    let keep: Vec<usize> = all
        .iter()
        .copied()
        .filter(|i| !dropped.contains(i))
        .collect();

    let (q_final, iter2, conv2, dropped) = if dropped.is_empty() || keep.len() <= n_params {
        // nothing to drop, or dropping would leave the refit underdetermined
        (q1.clone(), 0, true, Vec::new())
    } else {
        let (q2, it, cv, _) = run_polished(&keep, &q1);
        (q2, it, cv, dropped)
    };
    let p_final: Vec<f64> = q_final.iter().zip(&scales).map(|(q, s)| q * s).collect();
    let model = unpack_params(initial, &p_final);

    let kept: Vec<usize> = if dropped.is_empty() { all } else { keep };
    let kept_observed: Vec<f64> = kept.iter().map(|&i| observed[i]).collect();
    let kept_predicted: Vec<f64> = {
        let preds = predict_all(&model, observations);
        kept.iter()
            .map(|&i| *preds[i].as_ref().unwrap_or(&f64::INFINITY))
            .collect()
    };
    let residuals = residual_stats(&kept_observed, &kept_predicted)?;
    let residual_norm = kept_observed
        .iter()
        .zip(&kept_predicted)
        .map(|(o, p)| (o - p) * (o - p))
        .sum::<f64>()
        .sqrt();

    Ok(DeviceFitReport {
        model,
        residuals,
        dropped,
        iterations: iter1 + iter2,
        residual_norm,
        converged: conv1 && conv2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> TransmonSpec {
        TransmonSpec {
            ej1: 11000.0,
            ej2: 4500.0,
            ec: 250.0,
        }
    }

    #[test]
    fn bare_frequency_sweet_spot_and_floor() {
        let t = spec();
        let top = bare_frequency(&t, 0.0);
        assert_relative_eq!(top, (8.0f64 * 250.0 * 15500.0).sqrt() - 250.0, max_relative = 1e-14);
        let bottom = bare_frequency(&t, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(bottom, (8.0f64 * 250.0 * 6500.0).sqrt() - 250.0, max_relative = 1e-14);
        assert!(top > bottom);
        // Symmetric SQUID floors at −E_C. cos(π/2) rounds to 6.1e-17, and
        // the fourth root amplifies that residual to ~4e-5 MHz, so the
        // comparison is absolute at the 1e-3 MHz level.
        let sym = TransmonSpec {
            ej1: 8000.0,
            ej2: 8000.0,
            ec: 250.0,
        };
        assert_relative_eq!(
            bare_frequency(&sym, std::f64::consts::FRAC_PI_2),
            -250.0,
            epsilon = 1e-3
        );
    }

    #[test]
    fn bare_frequency_periodic_and_even() {
        let t = spec();
        for phi in [0.1, 0.7, 1.3] {
            assert_relative_eq!(
                bare_frequency(&t, phi),
                bare_frequency(&t, -phi),
                max_relative = 1e-14
            );
            assert_relative_eq!(
                bare_frequency(&t, phi),
                bare_frequency(&t, phi + std::f64::consts::PI),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn flux_inversion_endpoints_exact() {
        let t = spec();
        let hi = bare_frequency(&t, 0.0);
        let lo = bare_frequency(&t, std::f64::consts::FRAC_PI_2);
        assert_eq!(flux_from_frequency(&t, hi, FluxBranch::FirstQuadrant).unwrap(), 0.0);
        assert_eq!(
            flux_from_frequency(&t, lo, FluxBranch::FirstQuadrant).unwrap(),
            std::f64::consts::FRAC_PI_2
        );
    }

    #[test]
    fn flux_inversion_round_trip_interior() {
        let t = spec();
        for i in 1..40 {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / 40.0;
            let eps = bare_frequency(&t, phi);
            let rec = flux_from_frequency(&t, eps, FluxBranch::FirstQuadrant).unwrap();
            assert!(
                (rec - phi).abs() < 1e-9,
                "phi={phi}: recovered {rec}"
            );
        }
    }

    #[test]
    fn flux_inversion_out_of_band_names_band() {
        let t = spec();
        let hi = bare_frequency(&t, 0.0);
        let err = flux_from_frequency(&t, hi + 100.0, FluxBranch::FirstQuadrant).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("attainable band"), "message: {msg}");
    }

    #[test]
    fn dressed_pair_degenerate_splitting() {
        // ε = ν: splitting = 2√(kε) with k = slope²
        let eps = 5600.0;
        let slope = 0.6;
        let pair = dressed_from_bare(eps, eps, slope).unwrap();
        let k = slope * slope;
        assert_relative_eq!(pair.upper - pair.lower, 2.0 * (k * eps).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(pair.upper + pair.lower, 2.0 * eps, max_relative = 1e-12);
    }

    #[test]
    fn dressed_pair_zero_coupling_and_branch_flag() {
        let pair = dressed_from_bare(5400.0, 5800.0, 0.0).unwrap();
        assert_eq!((pair.lower, pair.upper), (5400.0, 5800.0));
        assert_eq!(pair.qubit_branch, Branch::Lower);
        let pair = dressed_from_bare(6000.0, 5800.0, 0.0).unwrap();
        assert_eq!((pair.lower, pair.upper), (5800.0, 6000.0));
        assert_eq!(pair.qubit_branch, Branch::Upper);
    }

    #[test]
    fn bare_dressed_round_trip() {
        let nu = 5900.0;
        let slope = 0.8;
        for eps in [4200.0, 5000.0, 5890.0, 6100.0, 7000.0] {
            let pair = dressed_from_bare(eps, nu, slope).unwrap();
            for ec in [pair.lower, pair.upper] {
                let back = bare_from_dressed(ec, nu, slope).unwrap();
                assert!(
                    (back - eps).abs() < 1e-9,
                    "eps={eps}, dressed={ec}: recovered {back}"
                );
            }
        }
    }

    #[test]
    fn bare_from_dressed_forbidden_gap() {
        let nu = 5800.0;
        let slope = 2.0; // k = 4 MHz
        let err = bare_from_dressed(nu - 2.0, nu, slope).unwrap_err();
        assert!(err.to_string().contains("forbidden gap"));
        assert!(bare_from_dressed(nu - 5.0, nu, slope).is_ok());
        assert!(bare_from_dressed(nu + 1.0, nu, slope).is_ok());
        // zero coupling is the identity
        assert_eq!(bare_from_dressed(5400.0, nu, 0.0).unwrap(), 5400.0);
    }

    #[test]
    fn voltages_identity_and_diagonal() {
        let map = FluxMap {
            inductance_matrix: DMatrix::identity(3, 3),
            frozen_offsets: DVector::zeros(3),
        };
        let phi = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let sol = voltages_from_fluxes(&map, &phi).unwrap();
        assert_relative_eq!(sol.voltages, phi, epsilon = 1e-14);
        assert!(sol.residual_norm < 1e-14);

        let map = FluxMap {
            inductance_matrix: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
            frozen_offsets: DVector::from_vec(vec![0.5, -0.5]),
        };
        let phi = DVector::from_vec(vec![1.5, 0.3]);
        let sol = voltages_from_fluxes(&map, &phi).unwrap();
        assert_relative_eq!(sol.voltages[0], (1.5 - 0.5) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(sol.voltages[1], (0.3 + 0.5) / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn extended_modes_decoupled_identity() {
        let eps = [5600.0, 5650.0];
        let readouts = [
            ReadoutSpec {
                nu_ind: 6600.0,
                k_ind: 0.0,
                k_common: 0.0,
            },
            ReadoutSpec {
                nu_ind: 6700.0,
                k_ind: 0.0,
                k_common: 0.0,
            },
        ];
        let modes = extended_eigenfrequencies(5755.0, &eps, &readouts).unwrap();
        let expected = {
            let mut v = vec![5755.0, 5600.0, 5650.0, 6600.0, 6700.0];
            v.sort_by(f64::total_cmp);
            v
        };
        for (a, b) in modes.frequencies.iter().zip(&expected) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert_eq!(modes.qubit_modes, vec![0, 1]);
    }

    #[test]
    fn extended_modes_two_mode_reduction() {
        // k_common = 0 decouples the cavity: the qubit–readout block is the
        // exact two-mode model.
        let eps = 5600.0;
        let r = ReadoutSpec {
            nu_ind: 6600.0,
            k_ind: 0.9,
            k_common: 0.0,
        };
        let modes = extended_eigenfrequencies(5755.0, &[eps], &[r]).unwrap();
        let pair = dressed_from_bare(eps, r.nu_ind, r.k_ind).unwrap();
        let mut expected = vec![5755.0, pair.lower, pair.upper];
        expected.sort_by(f64::total_cmp);
        for (a, b) in modes.frequencies.iter().zip(&expected) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        // qubit mode is the dressed branch closer to the bare frequency
        let assigned = modes.frequencies[modes.qubit_modes[0]];
        let dressed_qubit = match pair.qubit_branch {
            Branch::Lower => pair.lower,
            Branch::Upper => pair.upper,
        };
        assert_relative_eq!(assigned, dressed_qubit, max_relative = 1e-12);
    }

    #[test]
    fn extended_modes_trace_invariant() {
        let eps = [5600.0, 5650.0, 5700.0];
        let readouts = [
            ReadoutSpec {
                nu_ind: 6600.0,
                k_ind: 0.9,
                k_common: 0.55,
            },
            ReadoutSpec {
                nu_ind: 6650.0,
                k_ind: 0.8,
                k_common: 0.55,
            },
            ReadoutSpec {
                nu_ind: 6700.0,
                k_ind: 1.0,
                k_common: 0.55,
            },
        ];
        let nu_c = 5755.0;
        let modes = extended_eigenfrequencies(nu_c, &eps, &readouts).unwrap();
        let trace: f64 = nu_c + eps.iter().sum::<f64>() + readouts.iter().map(|r| r.nu_ind).sum::<f64>();
        let sum: f64 = modes.frequencies.iter().sum();
        assert_relative_eq!(sum, trace, max_relative = 1e-9);
    }

    #[test]
    fn transmon_regime_flag() {
        assert!(spec().is_transmon_regime());
        let weak = TransmonSpec {
            ej1: 1000.0,
            ej2: 1000.0,
            ec: 250.0,
        };
        assert!(!weak.is_transmon_regime());
    }
}
