//! Domain types and construction of the single-excitation operator.
//!
//! One shared excitation lives either in the cavity mode or on one of the N
//! qubits, so the system is an (N+1)-dimensional symmetric matrix `H` plus a
//! diagonal damping vector `D`: basis index 0 is the photon, indices 1..=N
//! are the qubits. All frequencies and rates are in MHz.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Cavity mode parameters: resonance frequency, internal loss, and the two
/// radiation rates into the input/output lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CavityParams {
    /// Cavity resonance frequency ν_c (MHz).
    pub nu_c: f64,
    /// Internal cavity loss rate κ (MHz).
    pub kappa: f64,
    /// Radiation rate into the input port (MHz).
    pub gamma_in: f64,
    /// Radiation rate into the output port (MHz).
    pub gamma_out: f64,
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("nu_c", self.nu_c),
            ("kappa", self.kappa),
            ("gamma_in", self.gamma_in),
            ("gamma_out", self.gamma_out),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "cavity {name} must be finite, got {v}"
                )));
            }
        }
        if self.nu_c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cavity nu_c must be positive, got {}",
                self.nu_c
            )));
        }
        if self.kappa < 0.0 || self.gamma_in < 0.0 || self.gamma_out < 0.0 {
            return Err(Error::InvalidParameter(
                "cavity rates kappa, gamma_in, gamma_out must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One qubit: bare frequency, relaxation rate, and cavity coupling.
///
/// The coupling may carry either sign; only even powers of `g` enter the
/// photon response, and the sign convention is preserved by the full
/// resolvent route.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitParams {
    /// Bare qubit frequency ε (MHz).
    pub epsilon: f64,
    /// Qubit relaxation rate Γ (MHz).
    pub gamma: f64,
    /// Qubit–cavity coupling g (MHz, signed).
    pub g: f64,
}

impl QubitParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("gamma", self.gamma), ("g", self.g)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "qubit {name} must be finite, got {v}"
                )));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "qubit epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "qubit gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// A cavity plus an ordered list of qubits. N = 0 (bare cavity) is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub cavity: CavityParams,
    pub qubits: Vec<QubitParams>,
}

impl SystemConfig {
    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        for (j, q) in self.qubits.iter().enumerate() {
            q.validate()
                .map_err(|e| Error::InvalidParameter(format!("qubit {j}: {e}")))?;
        }
        Ok(())
    }

    /// Collective coupling |g| = √(Σ_j g_j²), the quantity that sets the
    /// bright-mode splitting.
    pub fn collective_coupling(&self) -> f64 {
        self.qubits.iter().map(|q| q.g * q.g).sum::<f64>().sqrt()
    }
}

/// The (N+1)-dimensional single-excitation representation: a symmetric
/// frequency matrix (stored as diagonal + photon coupling row, the only
/// nonzero entries) and the diagonal damping vector `D = [κ, Γ_1..Γ_N]`.
///
/// The dissipative matrix it denotes is `H − iD` with
/// `H[0,0] = ν_c`, `H[j,j] = ε_j`, `H[0,j] = H[j,0] = g_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleExcitationOperator {
    diagonal: Vec<f64>,
    damping: Vec<f64>,
    coupling_row: Vec<f64>,
}

impl SingleExcitationOperator {
    /// Dimension N+1 of the single-excitation sector.
    pub fn dimension(&self) -> usize {
        self.diagonal.len()
    }

    /// Frequency diagonal `[ν_c, ε_1, .., ε_N]` (MHz).
    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Damping diagonal `[κ, Γ_1, .., Γ_N]` (MHz).
    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    /// Photon–qubit couplings `[g_1, .., g_N]` (MHz).
    pub fn coupling_row(&self) -> &[f64] {
        &self.coupling_row
    }

    /// Dense symmetric `H` (no damping).
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = self.diagonal[i];
        }
        for (j, &g) in self.coupling_row.iter().enumerate() {
            h[(0, j + 1)] = g;
            h[(j + 1, 0)] = g;
        }
        h
    }

    /// Eigenvalues of `H`, ascending. Real because `H` is symmetric.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.dense().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals
    }

    /// Eigenvalues of `H` paired with the squared photon component of the
    /// corresponding eigenvector, ascending in eigenvalue. The photon weight
    /// tells how strongly each eigenmode shows up in the cavity response
    /// (bright modes carry almost all of it; dark modes almost none).
    pub fn photon_weighted_eigenvalues(&self) -> Vec<(f64, f64)> {
        let eig = self.dense().symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &lambda)| {
                let w = eig.eigenvectors[(0, k)];
                (lambda, w * w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs
    }
}

/// Builds the single-excitation representation of a system configuration.
pub fn build_hamiltonian(config: &SystemConfig) -> Result<SingleExcitationOperator> {
    config.validate()?;
    let n = config.n_qubits();
    let mut diagonal = Vec::with_capacity(n + 1);
    let mut damping = Vec::with_capacity(n + 1);
    let mut coupling_row = Vec::with_capacity(n);
    diagonal.push(config.cavity.nu_c);
    damping.push(config.cavity.kappa);
    for q in &config.qubits {
        diagonal.push(q.epsilon);
        damping.push(q.gamma);
        coupling_row.push(q.g);
    }
    Ok(SingleExcitationOperator {
        diagonal,
        damping,
        coupling_row,
    })
}

/// Absolute tolerance (MHz) within which qubit frequencies count as
/// degenerate for the collective-mode formulas. Distinguishes intentional
/// uniformity from disorder draws.
pub const DEGENERACY_TOL: f64 = 1e-9;

fn uniform_epsilon(config: &SystemConfig) -> Result<f64> {
    if config.qubits.is_empty() {
        return Err(Error::InvalidParameter(
            "collective-mode formulas require at least one qubit".into(),
        ));
    }
    let eps0 = config.qubits[0].epsilon;
    let spread = config
        .qubits
        .iter()
        .map(|q| (q.epsilon - eps0).abs())
        .fold(0.0, f64::max);
    if spread > DEGENERACY_TOL {
        return Err(Error::NonUniformQubits);
    }
    Ok(eps0)
}

/// Frequencies (ν_−, ν_+) of the two cavity-hybridized collective modes for
/// a degenerate qubit ensemble:
/// ν_± = ½(ν_c + ε ± √((ν_c − ε)² + 4 Σ g_j²)).
pub fn bright_mode_frequencies(config: &SystemConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let eps = uniform_epsilon(config)?;
    let nu_c = config.cavity.nu_c;
    let g2: f64 = config.qubits.iter().map(|q| q.g * q.g).sum();
    let root = ((nu_c - eps).powi(2) + 4.0 * g2).sqrt();
    let center = 0.5 * (nu_c + eps);
    Ok((center - 0.5 * root, center + 0.5 * root))
}

/// Half the bright-mode gap, (ν_+ − ν_−)/2 — the quantity conventionally
/// fitted as g·√N against ensemble size. For a resonant uniform ensemble it
/// equals |g|√N exactly.
pub fn rabi_splitting(config: &SystemConfig) -> Result<f64> {
    let (lo, hi) = bright_mode_frequencies(config)?;
    Ok(0.5 * (hi - lo))
}
