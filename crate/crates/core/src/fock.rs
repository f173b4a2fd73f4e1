//! Truncated Fock-space linear algebra: ladder operators, displacement
//! and squeezing unitaries, canonical state constructors, populations.
//!
//! All dynamics are in the interaction picture of the bare oscillator
//! (ħ = 1), so the oscillator frequency never enters a generator. The
//! basis is {|0⟩ … |dim−1⟩}, optionally tensored with a qubit ordered
//! (|↑,0⟩, |↓,0⟩, |↑,1⟩, …). The top `margin` Fock levels form a guard
//! band: states must keep negligible weight there, and operator
//! identities are only enforced on the complement (the guarded
//! subspace).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg;

/// Guard-band occupation above which constructions refuse to proceed.
pub const LEAKAGE_TOL: f64 = 1e-8;
/// ‖U†U − I‖_max allowed on the guarded subspace.
pub const UNITARITY_TOL: f64 = 1e-9;

/// Guard band width for a given cutoff.
pub fn default_margin(dim: usize) -> usize {
    (dim / 8).max(1)
}

/// Fock cutoff adequate for squeezing strength `r` and displacement
/// magnitude `alpha_mag` at [`LEAKAGE_TOL`]. Squeezed-vacuum populations
/// decay geometrically with ratio tanh²r, which keeps the required
/// cutoff proportional to e^{2r}; the e^{2r} term dominates the sinh²
/// one for r ≳ 1 and is what actually pins boundary leakage below
/// 1e−8 up to r = 1.5.
pub fn default_cutoff(r: f64, alpha_mag: f64) -> usize {
    let a2 = 8.0 * alpha_mag * alpha_mag;
    let sinh_term = (16.0 * r.sinh().powi(2) + a2 + 48.0).ceil() as usize;
    let exp_term = (10.0 * (2.0 * r).exp() + a2 + 16.0).ceil() as usize;
    64.max(sinh_term).max(exp_term)
}

/// Which Hilbert space a matrix or state lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Oscillator only; matrices are dim × dim.
    Fock,
    /// Qubit ⊗ oscillator, index 2n + q with q=0 ↦ |↑⟩; matrices are
    /// 2·dim × 2·dim.
    QubitFock,
}

impl Space {
    pub fn matrix_dim(self, dim: usize) -> usize {
        match self {
            Space::Fock => dim,
            Space::QubitFock => 2 * dim,
        }
    }

    fn json_name(self) -> &'static str {
        match self {
            Space::Fock => "fock",
            Space::QubitFock => "qubit_fock",
        }
    }
}

/// Complex squeezing parameter ξ = r·e^{iθ}. θ/2 is the squeezed
/// quadrature angle in phase space; θ is stored as given (reduction mod
/// 2π is for reporting only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezeParams {
    pub r: f64,
    pub theta: f64,
}

impl SqueezeParams {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !(r >= 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!(
                "squeeze parameters must have r ≥ 0 and finite θ, got r={r}, θ={theta}"
            )));
        }
        Ok(SqueezeParams { r, theta })
    }

    pub fn xi(&self) -> C64 {
        C64::from_polar(self.r, self.theta)
    }

    /// Parameters of the inverse pulse: Ŝ(ξ)† = Ŝ(r, θ+π).
    pub fn inverse(&self) -> SqueezeParams {
        SqueezeParams {
            r: self.r,
            theta: self.theta + std::f64::consts::PI,
        }
    }

    pub fn theta_mod_2pi(&self) -> f64 {
        self.theta.rem_euclid(2.0 * std::f64::consts::PI)
    }
}

/// Displacement amplitude α = magnitude·e^{iφ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementParams {
    pub magnitude: f64,
    pub phi: f64,
}

impl DisplacementParams {
    pub fn new(magnitude: f64, phi: f64) -> Result<Self> {
        if !(magnitude >= 0.0) || !phi.is_finite() {
            return Err(Error::invalid(format!(
                "displacement parameters must have magnitude ≥ 0 and finite φ, got {magnitude}, {phi}"
            )));
        }
        Ok(DisplacementParams { magnitude, phi })
    }

    pub fn from_complex(alpha: C64) -> Self {
        DisplacementParams {
            magnitude: alpha.norm(),
            phi: if alpha.norm() == 0.0 { 0.0 } else { alpha.arg() },
        }
    }

    pub fn alpha(&self) -> C64 {
        C64::from_polar(self.magnitude, self.phi)
    }
}

/// Dense complex matrix on the truncated basis, tagged with its cutoff.
#[derive(Debug, Clone)]
pub struct Operator {
    dim: usize,
    space: Space,
    entries: Array2<C64>,
    label: String,
}

impl Operator {
    pub fn new(
        dim: usize,
        space: Space,
        entries: Array2<C64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let md = space.matrix_dim(dim);
        if entries.nrows() != md || entries.ncols() != md {
            return Err(Error::invalid(format!(
                "operator entries must be {md}×{md}, got {}×{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if !linalg::all_finite(&entries) {
            return Err(Error::invalid("operator entries contain NaN/Inf"));
        }
        Ok(Operator {
            dim,
            space,
            entries,
            label: label.into(),
        })
    }

    pub fn identity(dim: usize, space: Space) -> Self {
        Operator {
            dim,
            space,
            entries: linalg::identity(space.matrix_dim(dim)),
            label: "identity".into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn matrix_dim(&self) -> usize {
        self.space.matrix_dim(self.dim)
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            dim: self.dim,
            space: self.space,
            entries: linalg::dagger(&self.entries),
            label: format!("({})†", self.label),
        }
    }

    pub fn scale(&self, factor: C64) -> Operator {
        Operator {
            dim: self.dim,
            space: self.space,
            entries: self.entries.mapv(|z| z * factor),
            label: self.label.clone(),
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        self.check_same_basis(other)?;
        Ok(Operator {
            dim: self.dim,
            space: self.space,
            entries: &self.entries + &other.entries,
            label: format!("{}+{}", self.label, other.label),
        })
    }

    /// Matrix product self·other (other acts first on states).
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        self.check_same_basis(other)?;
        Ok(Operator {
            dim: self.dim,
            space: self.space,
            entries: self.entries.dot(&other.entries),
            label: format!("{}·{}", self.label, other.label),
        })
    }

    fn check_same_basis(&self, other: &Operator) -> Result<()> {
        if self.dim != other.dim || self.space != other.space {
            return Err(Error::invalid(format!(
                "basis mismatch: {}@{:?} vs {}@{:?}",
                self.dim, self.space, other.dim, other.space
            )));
        }
        Ok(())
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.dim != self.dim || state.space != self.space {
            return Err(Error::invalid("operator/state basis mismatch"));
        }
        Ok(StateVector {
            dim: self.dim,
            space: self.space,
            amplitudes: self.entries.dot(&state.amplitudes),
        })
    }

    /// U ρ U†.
    pub fn conjugate_density(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.dim != self.dim || rho.space != self.space {
            return Err(Error::invalid("operator/state basis mismatch"));
        }
        let ud = linalg::dagger(&self.entries);
        Ok(DensityMatrix {
            dim: self.dim,
            space: self.space,
            entries: self.entries.dot(&rho.entries).dot(&ud),
        })
    }

    /// Number of leading matrix rows inside the guarded subspace for a
    /// Fock guard band of `margin` levels.
    pub fn guarded_rows(&self, margin: usize) -> usize {
        match self.space {
            Space::Fock => self.dim.saturating_sub(margin),
            Space::QubitFock => 2 * self.dim.saturating_sub(margin),
        }
    }

    /// ‖U†U − I‖_max on the guarded subspace.
    pub fn unitarity_defect(&self, margin: usize) -> f64 {
        let prod = linalg::dagger(&self.entries).dot(&self.entries);
        let eye = linalg::identity(self.matrix_dim());
        linalg::guarded_max_diff(&prod, &eye, self.guarded_rows(margin))
    }

    /// Lift a Fock-space operator to qubit ⊗ Fock (identity on the qubit).
    pub fn lift_to_qubit(&self) -> Result<Operator> {
        if self.space != Space::Fock {
            return Err(Error::invalid("operator already lives on qubit ⊗ Fock"));
        }
        Ok(Operator {
            dim: self.dim,
            space: Space::QubitFock,
            entries: linalg::kron(&self.entries, &linalg::identity(2)),
            label: format!("{} ⊗ I₂", self.label),
        })
    }

    /// Row-major JSON dump with entries as [re, im] pairs.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<[f64; 2]>> = self
            .entries
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        json!({
            "dim": self.dim,
            "space": self.space.json_name(),
            "label": self.label,
            "entries": rows,
        })
    }
}

/// Pure state on the truncated basis.
#[derive(Debug, Clone)]
pub struct StateVector {
    dim: usize,
    space: Space,
    amplitudes: Array1<C64>,
}

impl StateVector {
    /// Strict constructor: requires Σ|c|² = 1 ± 1e−12.
    pub fn new(dim: usize, space: Space, amplitudes: Array1<C64>) -> Result<Self> {
        let md = space.matrix_dim(dim);
        if amplitudes.len() != md {
            return Err(Error::invalid(format!(
                "state vector must have {md} amplitudes, got {}",
                amplitudes.len()
            )));
        }
        if !amplitudes.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::invalid("state amplitudes contain NaN/Inf"));
        }
        let state = StateVector {
            dim,
            space,
            amplitudes,
        };
        let norm2 = state.norm_squared();
        if (norm2 - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "state norm² = {norm2:.15} deviates from 1 by more than 1e-12"
            )));
        }
        Ok(state)
    }

    pub fn vacuum(dim: usize, space: Space) -> Self {
        let md = space.matrix_dim(dim);
        let mut amplitudes = Array1::zeros(md);
        amplitudes[0] = linalg::ONE;
        StateVector {
            dim,
            space,
            amplitudes,
        }
    }

    /// |n⟩ on the oscillator-only basis.
    pub fn fock_basis(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::invalid(format!("Fock index {n} ≥ cutoff {dim}")));
        }
        let mut amplitudes = Array1::zeros(dim);
        amplitudes[n] = linalg::ONE;
        Ok(StateVector {
            dim,
            space: Space::Fock,
            amplitudes,
        })
    }

    /// |q, n⟩ on qubit ⊗ Fock; `up` selects |↑⟩.
    pub fn qubit_fock_basis(dim: usize, up: bool, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::invalid(format!("Fock index {n} ≥ cutoff {dim}")));
        }
        let mut amplitudes = Array1::zeros(2 * dim);
        amplitudes[2 * n + usize::from(!up)] = linalg::ONE;
        Ok(StateVector {
            dim,
            space: Space::QubitFock,
            amplitudes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Occupation of the top `margin` Fock levels (qubit traced out).
    pub fn guard_leakage(&self, margin: usize) -> f64 {
        let start = self.dim.saturating_sub(margin);
        (start..self.dim).map(|n| self.level_population(n)).sum()
    }

    /// Total population of Fock level `n` (summed over qubit states).
    pub fn level_population(&self, n: usize) -> f64 {
        match self.space {
            Space::Fock => self.amplitudes[n].norm_sqr(),
            Space::QubitFock => {
                self.amplitudes[2 * n].norm_sqr() + self.amplitudes[2 * n + 1].norm_sqr()
            }
        }
    }

    /// Population of the qubit |↑⟩ manifold.
    pub fn qubit_up_population(&self) -> Result<f64> {
        if self.space != Space::QubitFock {
            return Err(Error::invalid("state has no qubit factor"));
        }
        Ok((0..self.dim).map(|n| self.amplitudes[2 * n].norm_sqr()).sum())
    }

    pub fn overlap(&self, other: &StateVector) -> Result<C64> {
        if self.dim != other.dim || self.space != other.space {
            return Err(Error::invalid("state basis mismatch"));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// |⟨self|other⟩|².
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.overlap(other)?.norm_sqr())
    }

    pub fn to_density(&self) -> DensityMatrix {
        let n = self.amplitudes.len();
        let mut entries = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                entries[[i, j]] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        DensityMatrix {
            dim: self.dim,
            space: self.space,
            entries,
        }
    }

    pub fn to_debug_json(&self) -> serde_json::Value {
        json!({
            "dim": self.dim,
            "space": self.space.json_name(),
            "amplitudes": self.amplitudes.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        })
    }
}

/// Mixed state on the truncated basis.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    dim: usize,
    space: Space,
    entries: Array2<C64>,
}

impl DensityMatrix {
    /// Strict constructor: Hermitian to 1e−12, trace 1 ± 1e−10.
    pub fn new(dim: usize, space: Space, entries: Array2<C64>) -> Result<Self> {
        let md = space.matrix_dim(dim);
        if entries.nrows() != md || entries.ncols() != md {
            return Err(Error::invalid(format!(
                "density matrix must be {md}×{md}, got {}×{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if !linalg::all_finite(&entries) {
            return Err(Error::invalid("density matrix contains NaN/Inf"));
        }
        if !linalg::is_hermitian(&entries, 1e-12) {
            return Err(Error::invalid("density matrix is not Hermitian to 1e-12"));
        }
        let rho = DensityMatrix {
            dim,
            space,
            entries,
        };
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "density matrix trace {tr} deviates from 1 by more than 1e-10"
            )));
        }
        Ok(rho)
    }

    /// Relaxed constructor for propagation intermediates; finiteness only.
    pub fn from_evolved(dim: usize, space: Space, entries: Array2<C64>) -> Result<Self> {
        let md = space.matrix_dim(dim);
        if entries.nrows() != md || entries.ncols() != md {
            return Err(Error::invalid("density matrix shape mismatch"));
        }
        if !linalg::all_finite(&entries) {
            return Err(Error::invalid("density matrix contains NaN/Inf"));
        }
        Ok(DensityMatrix {
            dim,
            space,
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn trace(&self) -> C64 {
        (0..self.entries.nrows()).map(|i| self.entries[[i, i]]).sum()
    }

    pub fn purity(&self) -> f64 {
        self.entries.dot(&self.entries).diag().iter().map(|z| z.re).sum()
    }

    pub fn level_population(&self, n: usize) -> f64 {
        match self.space {
            Space::Fock => self.entries[[n, n]].re,
            Space::QubitFock => self.entries[[2 * n, 2 * n]].re + self.entries[[2 * n + 1, 2 * n + 1]].re,
        }
    }

    pub fn guard_leakage(&self, margin: usize) -> f64 {
        let start = self.dim.saturating_sub(margin);
        (start..self.dim).map(|n| self.level_population(n)).sum()
    }

    pub fn qubit_up_population(&self) -> Result<f64> {
        if self.space != Space::QubitFock {
            return Err(Error::invalid("state has no qubit factor"));
        }
        Ok((0..self.dim).map(|n| self.entries[[2 * n, 2 * n]].re).sum())
    }

    /// Smallest eigenvalue; negative values beyond −1e−10 indicate an
    /// invalid state (reported, never clipped).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (w, _) = linalg::eigh(&self.entries)?;
        Ok(w.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    pub fn to_debug_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<[f64; 2]>> = self
            .entries
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        json!({
            "dim": self.dim,
            "space": self.space.json_name(),
            "entries": rows,
        })
    }
}

/// ½‖ρ − σ‖₁ for Hermitian ρ, σ.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim != b.dim || a.space != b.space {
        return Err(Error::invalid("state basis mismatch"));
    }
    let diff = &a.entries - &b.entries;
    let (w, _) = linalg::eigh(&diff)?;
    Ok(0.5 * w.iter().map(|x| x.abs()).sum::<f64>())
}

/// Pure or mixed state, as returned by [`make_state`].
#[derive(Debug, Clone)]
pub enum MotionalState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl MotionalState {
    pub fn dim(&self) -> usize {
        match self {
            MotionalState::Pure(s) => s.dim,
            MotionalState::Mixed(r) => r.dim,
        }
    }

    pub fn space(&self) -> Space {
        match self {
            MotionalState::Pure(s) => s.space,
            MotionalState::Mixed(r) => r.space,
        }
    }

    pub fn as_pure(&self) -> Result<&StateVector> {
        match self {
            MotionalState::Pure(s) => Ok(s),
            MotionalState::Mixed(_) => Err(Error::invalid("expected a pure state")),
        }
    }

    pub fn as_mixed(&self) -> Result<&DensityMatrix> {
        match self {
            MotionalState::Mixed(r) => Ok(r),
            MotionalState::Pure(_) => Err(Error::invalid("expected a density matrix")),
        }
    }

    pub fn guard_leakage(&self, margin: usize) -> f64 {
        match self {
            MotionalState::Pure(s) => s.guard_leakage(margin),
            MotionalState::Mixed(r) => r.guard_leakage(margin),
        }
    }

    pub fn level_population(&self, n: usize) -> f64 {
        match self {
            MotionalState::Pure(s) => s.level_population(n),
            MotionalState::Mixed(r) => r.level_population(n),
        }
    }
}

/// Fock-basis probabilities up to n_max plus the unaccounted remainder.
#[derive(Debug, Clone)]
pub struct PopulationVector {
    pub probs: Vec<f64>,
    pub leakage: f64,
}

impl PopulationVector {
    pub fn new(probs: Vec<f64>, leakage: f64) -> Result<Self> {
        if probs.iter().any(|p| !(-1e-10..=1.0 + 1e-10).contains(p)) {
            return Err(Error::invalid("populations must lie in [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 + 1e-10 {
            return Err(Error::invalid(format!("populations sum to {sum} > 1")));
        }
        Ok(PopulationVector { probs, leakage })
    }

    pub fn n_max(&self) -> usize {
        self.probs.len().saturating_sub(1)
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Canonical state specification for [`make_state`].
#[derive(Debug, Clone)]
pub enum StateSpec {
    Vacuum,
    Coherent(DisplacementParams),
    SqueezedVacuum(SqueezeParams),
    Thermal { nbar: f64 },
}

/// (â, â†) with â|n⟩ = √n |n−1⟩.
pub fn ladder_ops(cutoff: usize) -> Result<(Operator, Operator)> {
    if cutoff < 2 {
        return Err(Error::invalid(format!(
            "ladder operators need cutoff ≥ 2, got {cutoff}"
        )));
    }
    let mut a = Array2::<C64>::zeros((cutoff, cutoff));
    for n in 1..cutoff {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    let adag = linalg::dagger(&a);
    Ok((
        Operator::new(cutoff, Space::Fock, a, "a")?,
        Operator::new(cutoff, Space::Fock, adag, "a†")?,
    ))
}

/// â†â as a diagonal matrix.
pub fn number_op(cutoff: usize) -> Result<Operator> {
    if cutoff < 2 {
        return Err(Error::invalid(format!(
            "number operator needs cutoff ≥ 2, got {cutoff}"
        )));
    }
    let mut n = Array2::<C64>::zeros((cutoff, cutoff));
    for k in 0..cutoff {
        n[[k, k]] = C64::new(k as f64, 0.0);
    }
    Operator::new(cutoff, Space::Fock, n, "a†a")
}

/// exp(A), preserving the basis tag.
pub fn matrix_exponential(a: &Operator) -> Result<Operator> {
    let entries = linalg::expm(a.entries())?;
    Operator::new(a.dim(), a.space(), entries, format!("exp({})", a.label()))
}

/// Unitary for the displacement generator without the vacuum-column
/// leakage gate; sequence evolution applies its own state-level check.
pub(crate) fn displacement_unitary(alpha: &DisplacementParams, cutoff: usize) -> Result<Operator> {
    let (a, adag) = ladder_ops(cutoff)?;
    let al = alpha.alpha();
    let gen = adag.entries().mapv(|z| z * al) - a.entries().mapv(|z| z * al.conj());
    let u = linalg::expm(&gen)?;
    Operator::new(
        cutoff,
        Space::Fock,
        u,
        format!("D({:.4}e^{{i{:.4}}})", alpha.magnitude, alpha.phi),
    )
}

pub(crate) fn squeeze_unitary(xi: &SqueezeParams, cutoff: usize) -> Result<Operator> {
    let (a, adag) = ladder_ops(cutoff)?;
    let x = xi.xi();
    let a2 = a.entries().dot(a.entries());
    let adag2 = adag.entries().dot(adag.entries());
    let half = C64::new(0.5, 0.0);
    let gen = (a2.mapv(|z| z * x.conj()) - adag2.mapv(|z| z * x)).mapv(|z| z * half);
    let u = linalg::expm(&gen)?;
    Operator::new(
        cutoff,
        Space::Fock,
        u,
        format!("S(r={:.4},θ={:.4})", xi.r, xi.theta),
    )
}

/// D̂(α) = exp(α↠− α*â) as a unitary on the truncated basis. Errors if
/// D(α)|0⟩ puts more than [`LEAKAGE_TOL`] weight in the guard band.
pub fn displacement_op(alpha: &DisplacementParams, cutoff: usize) -> Result<Operator> {
    let op = displacement_unitary(alpha, cutoff)?;
    check_vacuum_column_leakage(&op, "displacement operator", alpha.magnitude, 0.0)?;
    Ok(op)
}

/// Ŝ(ξ) = exp((ξ*â² − ξâ†²)/2). Errors if S|0⟩ leaks into the guard band.
pub fn squeeze_op(xi: &SqueezeParams, cutoff: usize) -> Result<Operator> {
    let op = squeeze_unitary(xi, cutoff)?;
    check_vacuum_column_leakage(&op, "squeeze operator", 0.0, xi.r)?;
    Ok(op)
}

fn check_vacuum_column_leakage(op: &Operator, what: &str, alpha_mag: f64, r: f64) -> Result<()> {
    let margin = default_margin(op.dim());
    let start = op.dim() - margin;
    let leakage: f64 = (start..op.dim()).map(|n| op.entries()[[n, 0]].norm_sqr()).sum();
    if leakage > LEAKAGE_TOL {
        return Err(Error::InsufficientCutoff {
            what: format!("{what} (suggest cutoff ≥ {})", default_cutoff(r, alpha_mag)),
            cutoff: op.dim(),
            leakage,
            tol: LEAKAGE_TOL,
        });
    }
    Ok(())
}

/// Canonical states from closed-form amplitudes. Pure specs return a
/// [`StateVector`]; thermal returns a [`DensityMatrix`] with
/// P_n = n̄ⁿ/(1+n̄)^{n+1}.
pub fn make_state(spec: &StateSpec, cutoff: usize) -> Result<MotionalState> {
    if cutoff < 2 {
        return Err(Error::invalid("make_state needs cutoff ≥ 2"));
    }
    let margin = default_margin(cutoff);
    match spec {
        StateSpec::Vacuum => Ok(MotionalState::Pure(StateVector::vacuum(cutoff, Space::Fock))),
        StateSpec::Coherent(alpha) => {
            let al = alpha.alpha();
            let mut amps = Array1::<C64>::zeros(cutoff);
            amps[0] = C64::new((-al.norm_sqr() / 2.0).exp(), 0.0);
            for n in 1..cutoff {
                amps[n] = amps[n - 1] * al / C64::new((n as f64).sqrt(), 0.0);
            }
            finish_pure_state(amps, cutoff, margin, "coherent state", alpha.magnitude, 0.0)
        }
        StateSpec::SqueezedVacuum(xi) => {
            let mut amps = Array1::<C64>::zeros(cutoff);
            if xi.r == 0.0 {
                amps[0] = linalg::ONE;
            } else {
                let factor = -C64::from_polar(xi.r.tanh(), xi.theta);
                amps[0] = C64::new(1.0 / xi.r.cosh().sqrt(), 0.0);
                let mut m = 1usize;
                while 2 * m < cutoff {
                    let ratio = ((2.0 * m as f64 - 1.0) / (2.0 * m as f64)).sqrt();
                    amps[2 * m] = amps[2 * m - 2] * factor * C64::new(ratio, 0.0);
                    m += 1;
                }
            }
            finish_pure_state(amps, cutoff, margin, "squeezed vacuum", 0.0, xi.r)
        }
        StateSpec::Thermal { nbar } => {
            if !(*nbar >= 0.0) {
                return Err(Error::invalid(format!("thermal n̄ must be ≥ 0, got {nbar}")));
            }
            let mut entries = Array2::<C64>::zeros((cutoff, cutoff));
            let ratio = nbar / (1.0 + nbar);
            let mut p = 1.0 / (1.0 + nbar);
            let mut total = 0.0;
            for n in 0..cutoff {
                entries[[n, n]] = C64::new(p, 0.0);
                total += p;
                p *= ratio;
            }
            let tail = 1.0 - total;
            // Trace must hold to 1e-10, tighter than the leakage gate.
            if tail > 1e-10 {
                return Err(Error::InsufficientCutoff {
                    what: format!("thermal state n̄={nbar}"),
                    cutoff,
                    leakage: tail,
                    tol: 1e-10,
                });
            }
            Ok(MotionalState::Mixed(DensityMatrix::new(
                cutoff,
                Space::Fock,
                entries,
            )?))
        }
    }
}

fn finish_pure_state(
    amps: Array1<C64>,
    cutoff: usize,
    margin: usize,
    what: &str,
    alpha_mag: f64,
    r: f64,
) -> Result<MotionalState> {
    let norm2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let truncated = 1.0 - norm2;
    let guard: f64 = (cutoff - margin..cutoff).map(|n| amps[n].norm_sqr()).sum();
    let leakage = truncated.max(0.0) + guard;
    if leakage > LEAKAGE_TOL {
        return Err(Error::InsufficientCutoff {
            what: format!("{what} (suggest cutoff ≥ {})", default_cutoff(r, alpha_mag)),
            cutoff,
            leakage,
            tol: LEAKAGE_TOL,
        });
    }
    // Renormalize the sub-1e-8 truncation remainder so downstream code
    // sees an exactly normalized vector; the leakage stays reported via
    // guard_leakage.
    let scale = C64::new(1.0 / norm2.sqrt(), 0.0);
    Ok(MotionalState::Pure(StateVector::new(
        cutoff,
        Space::Fock,
        amps.mapv(|z| z * scale),
    )?))
}

/// Diagonal populations P_0..P_{n_max} plus leakage = 1 − ΣP.
pub fn fock_populations(state: &MotionalState, n_max: usize) -> Result<PopulationVector> {
    if n_max >= state.dim() {
        return Err(Error::invalid(format!(
            "n_max {n_max} out of range for cutoff {}",
            state.dim()
        )));
    }
    let probs: Vec<f64> = (0..=n_max)
        .map(|n| state.level_population(n).max(0.0))
        .collect();
    let sum: f64 = probs.iter().sum();
    PopulationVector::new(probs, 1.0 - sum)
}

/// ⟨â⟩; for qubit ⊗ Fock states the qubit is traced out.
pub fn mean_displacement(state: &MotionalState) -> Result<C64> {
    match state {
        MotionalState::Pure(s) => {
            let mut acc = linalg::ZERO;
            for n in 0..s.dim - 1 {
                let root = C64::new(((n + 1) as f64).sqrt(), 0.0);
                match s.space {
                    Space::Fock => {
                        acc += s.amplitudes[n].conj() * root * s.amplitudes[n + 1];
                    }
                    Space::QubitFock => {
                        for q in 0..2 {
                            acc += s.amplitudes[2 * n + q].conj() * root * s.amplitudes[2 * (n + 1) + q];
                        }
                    }
                }
            }
            Ok(acc)
        }
        MotionalState::Mixed(r) => {
            // tr(âρ) = Σ_n √(n+1) ρ[n+1, n]
            let mut acc = linalg::ZERO;
            for n in 0..r.dim - 1 {
                let root = C64::new(((n + 1) as f64).sqrt(), 0.0);
                match r.space {
                    Space::Fock => acc += root * r.entries[[n + 1, n]],
                    Space::QubitFock => {
                        for q in 0..2 {
                            acc += root * r.entries[[2 * (n + 1) + q, 2 * n + q]];
                        }
                    }
                }
            }
            Ok(acc)
        }
    }
}

/// ⟨â†â⟩.
pub fn mean_occupation(state: &MotionalState) -> f64 {
    (0..state.dim())
        .map(|n| n as f64 * state.level_population(n))
        .sum()
}
