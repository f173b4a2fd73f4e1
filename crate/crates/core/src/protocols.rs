//! Pulse-sequence builders and evaluators: phase-sensitive amplification,
//! phase-independent amplification of displacements, Trotterized
//! amplification of a general coupling, and the Jaynes–Cummings
//! interaction.
//!
//! Sequences are lists of primitive pulses in time order (first pulse
//! first). Squeezing pulses act as instantaneous unitaries; any physical
//! pulse duration rides along as metadata only.

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    self, default_margin, DisplacementParams, MotionalState, Operator, Space, SqueezeParams,
    StateVector, LEAKAGE_TOL,
};
use crate::linalg;

/// One primitive pulse. `duration_s` on displacement and squeezing
/// pulses is reporting metadata; the unitaries are instantaneous.
#[derive(Debug, Clone, PartialEq)]
pub enum Pulse {
    Displace {
        params: DisplacementParams,
        duration_s: f64,
    },
    Squeeze {
        params: SqueezeParams,
        duration_s: f64,
    },
    EvolveH {
        hamiltonian_id: String,
        duration_s: f64,
        omega: f64,
    },
    Wait {
        duration_s: f64,
    },
}

impl Pulse {
    pub fn displace(params: DisplacementParams) -> Self {
        Pulse::Displace {
            params,
            duration_s: 0.0,
        }
    }

    pub fn squeeze(params: SqueezeParams) -> Self {
        Pulse::Squeeze {
            params,
            duration_s: 0.0,
        }
    }

    pub fn evolve_h(hamiltonian_id: impl Into<String>, duration_s: f64, omega: f64) -> Self {
        Pulse::EvolveH {
            hamiltonian_id: hamiltonian_id.into(),
            duration_s,
            omega,
        }
    }

    pub fn wait(duration_s: f64) -> Self {
        Pulse::Wait { duration_s }
    }

    fn duration(&self) -> f64 {
        match self {
            Pulse::Displace { duration_s, .. }
            | Pulse::Squeeze { duration_s, .. }
            | Pulse::EvolveH { duration_s, .. }
            | Pulse::Wait { duration_s } => *duration_s,
        }
    }
}

/// Wire format for one pulse in the JSON dump.
#[derive(Debug, Serialize, Deserialize)]
struct PulseDump {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    r: f64,
    #[serde(default)]
    theta: f64,
    #[serde(default)]
    alpha_mag: f64,
    #[serde(default)]
    alpha_phase: f64,
    #[serde(default)]
    duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hamiltonian_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega_rad_s: Option<f64>,
}

/// Ordered pulse list; nonempty, with nonnegative durations.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pulses: Vec<Pulse>,
}

impl PulseSequence {
    pub fn new(pulses: Vec<Pulse>) -> Result<Self> {
        if pulses.is_empty() {
            return Err(Error::invalid("pulse sequence must be nonempty"));
        }
        for (i, p) in pulses.iter().enumerate() {
            let d = p.duration();
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::invalid(format!(
                    "pulse {i} has invalid duration {d}"
                )));
            }
        }
        Ok(PulseSequence { pulses })
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Total metadata duration of all pulses.
    pub fn total_duration(&self) -> f64 {
        self.pulses.iter().map(|p| p.duration()).sum()
    }

    /// Sum of EvolveH durations only (the interaction time of the
    /// amplified coupling, excluding squeezing pulses).
    pub fn interaction_duration(&self) -> f64 {
        self.pulses
            .iter()
            .map(|p| match p {
                Pulse::EvolveH { duration_s, .. } => *duration_s,
                _ => 0.0,
            })
            .sum()
    }

    /// JSON dump: a list of {type, r, theta, alpha_mag, alpha_phase,
    /// duration_s} objects (plus hamiltonian_id / omega_rad_s on
    /// evolve_h pulses).
    pub fn to_json(&self) -> Result<String> {
        let dump: Vec<PulseDump> = self
            .pulses
            .iter()
            .map(|p| match p {
                Pulse::Displace { params, duration_s } => PulseDump {
                    kind: "displace".into(),
                    r: 0.0,
                    theta: 0.0,
                    alpha_mag: params.magnitude,
                    alpha_phase: params.phi,
                    duration_s: *duration_s,
                    hamiltonian_id: None,
                    omega_rad_s: None,
                },
                Pulse::Squeeze { params, duration_s } => PulseDump {
                    kind: "squeeze".into(),
                    r: params.r,
                    theta: params.theta,
                    alpha_mag: 0.0,
                    alpha_phase: 0.0,
                    duration_s: *duration_s,
                    hamiltonian_id: None,
                    omega_rad_s: None,
                },
                Pulse::EvolveH {
                    hamiltonian_id,
                    duration_s,
                    omega,
                } => PulseDump {
                    kind: "evolve_h".into(),
                    r: 0.0,
                    theta: 0.0,
                    alpha_mag: 0.0,
                    alpha_phase: 0.0,
                    duration_s: *duration_s,
                    hamiltonian_id: Some(hamiltonian_id.clone()),
                    omega_rad_s: Some(*omega),
                },
                Pulse::Wait { duration_s } => PulseDump {
                    kind: "wait".into(),
                    r: 0.0,
                    theta: 0.0,
                    alpha_mag: 0.0,
                    alpha_phase: 0.0,
                    duration_s: *duration_s,
                    hamiltonian_id: None,
                    omega_rad_s: None,
                },
            })
            .collect();
        Ok(serde_json::to_string_pretty(&dump)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: Vec<PulseDump> = serde_json::from_str(text)?;
        let pulses = dump
            .into_iter()
            .map(|d| match d.kind.as_str() {
                "displace" => Ok(Pulse::Displace {
                    params: DisplacementParams::new(d.alpha_mag, d.alpha_phase)?,
                    duration_s: d.duration_s,
                }),
                "squeeze" => Ok(Pulse::Squeeze {
                    params: SqueezeParams::new(d.r, d.theta)?,
                    duration_s: d.duration_s,
                }),
                "evolve_h" => Ok(Pulse::EvolveH {
                    hamiltonian_id: d
                        .hamiltonian_id
                        .ok_or_else(|| Error::invalid("evolve_h pulse missing hamiltonian_id"))?,
                    duration_s: d.duration_s,
                    omega: d.omega_rad_s.unwrap_or(0.0),
                }),
                "wait" => Ok(Pulse::Wait {
                    duration_s: d.duration_s,
                }),
                other => Err(Error::invalid(format!("unknown pulse type `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PulseSequence::new(pulses)
    }
}

/// Amplitude gain G = α_amp/α extracted from a final state.
#[derive(Debug, Clone, Serialize)]
pub struct GainReport {
    pub g_re: f64,
    pub g_im: f64,
    pub g_abs: f64,
    pub phase_deg: f64,
    pub r_used: Option<f64>,
    pub n_used: Option<usize>,
    pub phi_swept: Option<Vec<f64>>,
}

impl GainReport {
    pub fn new(g: C64) -> Self {
        GainReport {
            g_re: g.re,
            g_im: g.im,
            g_abs: g.norm(),
            phase_deg: g.arg().to_degrees(),
            r_used: None,
            n_used: None,
            phi_swept: None,
        }
    }

    pub fn g_complex(&self) -> C64 {
        C64::new(self.g_re, self.g_im)
    }

    pub fn with_context(mut self, r: f64, n: usize) -> Self {
        self.r_used = Some(r);
        self.n_used = Some(n);
        self
    }
}

/// Amplification scheme selector for [`predicted_gain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainScheme {
    PhaseSensitive,
    PhaseIndependent,
}

/// Closed-form gain: cosh r + e^{i(θ−2φ)} sinh r for the phase-sensitive
/// scheme, cosh r for the phase-independent one.
pub fn predicted_gain(scheme: GainScheme, r: f64, theta: f64, phi: f64) -> Result<C64> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("squeezing r must be ≥ 0, got {r}")));
    }
    Ok(match scheme {
        GainScheme::PhaseSensitive => {
            C64::new(r.cosh(), 0.0) + C64::from_polar(r.sinh(), theta - 2.0 * phi)
        }
        GainScheme::PhaseIndependent => C64::new(r.cosh(), 0.0),
    })
}

/// S(ξ), D(α), S(ξ)† — the phase-sensitive amplifier sandwich.
pub fn build_phase_sensitive(alpha: &DisplacementParams, xi: &SqueezeParams) -> PulseSequence {
    PulseSequence {
        pulses: vec![
            Pulse::squeeze(*xi),
            Pulse::displace(*alpha),
            Pulse::squeeze(xi.inverse()),
        ],
    }
}

/// Phase-independent amplification of D(α): 2N blocks of
/// [S(r,θ_k), D(α/2N), S(r,θ_k+π)] with θ_k alternating 0, π, 0, π….
pub fn build_ha_displacement(
    alpha: &DisplacementParams,
    r: f64,
    n_rounds: usize,
) -> Result<PulseSequence> {
    build_ha_displacement_with_offset(alpha, r, n_rounds, 0.0)
}

/// Same with a common offset added to every squeeze quadrature; the
/// gain is invariant under the offset.
pub fn build_ha_displacement_with_offset(
    alpha: &DisplacementParams,
    r: f64,
    n_rounds: usize,
    theta_offset: f64,
) -> Result<PulseSequence> {
    if n_rounds < 1 {
        return Err(Error::invalid("number of rounds must be ≥ 1"));
    }
    let step = DisplacementParams::new(alpha.magnitude / (2.0 * n_rounds as f64), alpha.phi)?;
    let mut pulses = Vec::with_capacity(6 * n_rounds);
    for block in 0..2 * n_rounds {
        let theta_k = theta_offset + if block % 2 == 0 { 0.0 } else { std::f64::consts::PI };
        pulses.push(Pulse::squeeze(SqueezeParams::new(r, theta_k)?));
        pulses.push(Pulse::displace(step));
        pulses.push(Pulse::squeeze(SqueezeParams::new(
            r,
            theta_k + std::f64::consts::PI,
        )?));
    }
    PulseSequence::new(pulses)
}

/// Hamiltonian family for the Trotterized protocol.
#[derive(Debug, Clone)]
pub enum HamiltonianKind {
    JaynesCummings,
    /// Dimensionless Hermitian coupling shape; the builder multiplies
    /// by Ω.
    CustomMatrix(Array2<C64>),
}

#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub kind: HamiltonianKind,
    /// Coupling strength in rad/s.
    pub omega: f64,
    pub cutoff: usize,
    /// Interaction phase χ (Ω → Ω·e^{iχ}); models an unstabilized
    /// drive phase. Amplified dynamics must not depend on it.
    pub phase: f64,
}

impl HamiltonianSpec {
    pub fn jaynes_cummings(omega: f64, cutoff: usize) -> Result<Self> {
        let spec = HamiltonianSpec {
            kind: HamiltonianKind::JaynesCummings,
            omega,
            cutoff,
            phase: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom(matrix: Array2<C64>, omega: f64, cutoff: usize) -> Result<Self> {
        let spec = HamiltonianSpec {
            kind: HamiltonianKind::CustomMatrix(matrix),
            omega,
            cutoff,
            phase: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_phase(mut self, chi: f64) -> Self {
        self.phase = chi;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0) {
            return Err(Error::invalid(format!(
                "coupling strength Ω must be ≥ 0, got {}",
                self.omega
            )));
        }
        if self.cutoff < 2 {
            return Err(Error::invalid("hamiltonian cutoff must be ≥ 2"));
        }
        if let HamiltonianKind::CustomMatrix(m) = &self.kind {
            let md_fock = self.cutoff;
            let md_qubit = 2 * self.cutoff;
            if m.nrows() != m.ncols() || (m.nrows() != md_fock && m.nrows() != md_qubit) {
                return Err(Error::invalid(format!(
                    "custom matrix must be {md_fock}×{md_fock} or {md_qubit}×{md_qubit}"
                )));
            }
            if !linalg::is_hermitian(m, 1e-10) {
                return Err(Error::invalid("custom matrix must be Hermitian to 1e-10"));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            HamiltonianKind::JaynesCummings => "jaynes_cummings",
            HamiltonianKind::CustomMatrix(_) => "custom",
        }
    }

    pub fn space(&self) -> Space {
        match &self.kind {
            HamiltonianKind::JaynesCummings => Space::QubitFock,
            HamiltonianKind::CustomMatrix(m) => {
                if m.nrows() == 2 * self.cutoff {
                    Space::QubitFock
                } else {
                    Space::Fock
                }
            }
        }
    }

    /// Assemble the Hamiltonian operator (ħ = 1).
    pub fn operator(&self) -> Result<Operator> {
        match &self.kind {
            HamiltonianKind::JaynesCummings => jc_hamiltonian(self),
            HamiltonianKind::CustomMatrix(m) => {
                let phase = C64::from_polar(1.0, self.phase);
                let omega = C64::new(self.omega, 0.0);
                // Ω·(e^{iχ}·upper + e^{-iχ}·lower) keeps Hermiticity.
                let mut h = Array2::<C64>::zeros(m.raw_dim());
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let factor = match i.cmp(&j) {
                            std::cmp::Ordering::Less => phase,
                            std::cmp::Ordering::Equal => linalg::ONE,
                            std::cmp::Ordering::Greater => phase.conj(),
                        };
                        h[[i, j]] = omega * factor * m[[i, j]];
                    }
                }
                Operator::new(self.cutoff, self.space(), h, "custom H")
            }
        }
    }
}

/// Ĥ_JC = Ω(σ̂⁻↠+ σ̂⁺â) on the qubit ⊗ Fock basis
/// (|↑,0⟩, |↓,0⟩, |↑,1⟩, …); couples |↑,n⟩ ↔ |↓,n+1⟩ with
/// element Ω√(n+1).
pub fn jc_hamiltonian(spec: &HamiltonianSpec) -> Result<Operator> {
    if !matches!(spec.kind, HamiltonianKind::JaynesCummings) {
        return Err(Error::invalid(
            "jc_hamiltonian requires kind = jaynes_cummings",
        ));
    }
    spec.validate()?;
    let dim = spec.cutoff;
    let md = 2 * dim;
    let mut h = Array2::<C64>::zeros((md, md));
    let phase = C64::from_polar(1.0, spec.phase);
    for n in 0..dim - 1 {
        let element = C64::new(spec.omega * ((n + 1) as f64).sqrt(), 0.0) * phase;
        let up_n = 2 * n; // |↑, n⟩
        let down_np1 = 2 * (n + 1) + 1; // |↓, n+1⟩
        h[[down_np1, up_n]] = element;
        h[[up_n, down_np1]] = element.conj();
    }
    Operator::new(dim, Space::QubitFock, h, "H_JC")
}

/// Trotterized amplification: N repetitions of
/// [S₀, evolve(Δt), S₀†, S_π, evolve(Δt), S_π†] with Δt = t/(2N).
/// Squeezing acts on the oscillator factor only.
pub fn build_ha_trotter(
    spec: &HamiltonianSpec,
    r: f64,
    t_total: f64,
    n_steps: usize,
) -> Result<PulseSequence> {
    if n_steps < 1 {
        return Err(Error::invalid("number of Trotter steps must be ≥ 1"));
    }
    if !(t_total > 0.0) {
        return Err(Error::invalid(format!(
            "total evolution time must be > 0, got {t_total}"
        )));
    }
    let dt = t_total / (2.0 * n_steps as f64);
    let pi = std::f64::consts::PI;
    let mut pulses = Vec::with_capacity(6 * n_steps);
    for _ in 0..n_steps {
        for &theta in &[0.0, pi] {
            pulses.push(Pulse::squeeze(SqueezeParams::new(r, theta)?));
            pulses.push(Pulse::evolve_h(spec.id(), dt, spec.omega));
            pulses.push(Pulse::squeeze(SqueezeParams::new(r, theta + pi)?));
        }
    }
    PulseSequence::new(pulses)
}

/// Rough Trotter fineness bound Δt ≪ [Ω√sinh(2r)]⁻¹; returns the bound
/// itself (∞ at r = 0, where no Trotterization is needed).
pub fn trotter_step_bound(omega: f64, r: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::invalid(format!("Ω must be > 0, got {omega}")));
    }
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("r must be ≥ 0, got {r}")));
    }
    let s = (2.0 * r).sinh();
    if s == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (omega * s.sqrt()))
}

/// Named Hamiltonians referenced by EvolveH pulses.
#[derive(Debug, Default)]
pub struct HamiltonianRegistry {
    ops: HashMap<String, Operator>,
}

impl HamiltonianRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, op: Operator) {
        self.ops.insert(id.into(), op);
    }

    /// Build and register the operator for `spec`; returns its id.
    pub fn register_spec(&mut self, spec: &HamiltonianSpec) -> Result<String> {
        let id = spec.id().to_string();
        self.ops.insert(id.clone(), spec.operator()?);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<&Operator> {
        self.ops
            .get(id)
            .ok_or_else(|| Error::UnknownHamiltonian(id.to_string()))
    }
}

/// Options for the sequence interpreter.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Guard-band occupation allowed after each pulse.
    pub leakage_tol: f64,
    /// Guard band width; defaults to dim/8.
    pub margin: Option<usize>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            leakage_tol: LEAKAGE_TOL,
            margin: None,
        }
    }
}

#[derive(Hash, PartialEq, Eq)]
enum PulseKey {
    Displace(u64, u64),
    Squeeze(u64, u64),
    Evolve(String, u64),
}

fn pulse_key(pulse: &Pulse) -> Option<PulseKey> {
    match pulse {
        Pulse::Wait { .. } => None,
        Pulse::Displace { params, .. } => Some(PulseKey::Displace(
            params.magnitude.to_bits(),
            params.phi.to_bits(),
        )),
        Pulse::Squeeze { params, .. } => Some(PulseKey::Squeeze(
            params.r.to_bits(),
            params.theta.to_bits(),
        )),
        Pulse::EvolveH {
            hamiltonian_id,
            duration_s,
            ..
        } => Some(PulseKey::Evolve(hamiltonian_id.clone(), duration_s.to_bits())),
    }
}

/// Sequence interpreter with a pulse-unitary cache that persists across
/// calls; reuse one evolver for parameter sweeps so common squeeze
/// pulses are exponentiated once.
pub struct SequenceEvolver<'a> {
    dim: usize,
    space: Space,
    registry: &'a HamiltonianRegistry,
    cache: HashMap<PulseKey, Operator>,
}

impl<'a> SequenceEvolver<'a> {
    pub fn new(dim: usize, space: Space, registry: &'a HamiltonianRegistry) -> Self {
        SequenceEvolver {
            dim,
            space,
            registry,
            cache: HashMap::new(),
        }
    }

    fn unitary(&mut self, pulse: &Pulse) -> Result<Option<&Operator>> {
        let Some(key) = pulse_key(pulse) else {
            return Ok(None);
        };
        if !self.cache.contains_key(&key) {
            let op = self.build(pulse)?;
            self.cache.insert(pulse_key(pulse).expect("non-wait pulse"), op);
        }
        Ok(self.cache.get(&key))
    }

    /// Apply the pulses of `seq` in list order, checking the guard-band
    /// occupation after every pulse.
    pub fn evolve(
        &mut self,
        state: &MotionalState,
        seq: &PulseSequence,
        opts: &EvolveOptions,
    ) -> Result<MotionalState> {
        if state.dim() != self.dim || state.space() != self.space {
            return Err(Error::invalid("state basis mismatch with evolver"));
        }
        let margin = opts.margin.unwrap_or_else(|| default_margin(self.dim));
        let mut current = state.clone();
        for (index, pulse) in seq.pulses().iter().enumerate() {
            let Some(u) = self.unitary(pulse)? else {
                continue; // Wait: interaction picture, no dynamics
            };
            current = match current {
                MotionalState::Pure(s) => MotionalState::Pure(u.apply(&s)?),
                MotionalState::Mixed(r) => MotionalState::Mixed(u.conjugate_density(&r)?),
            };
            let leakage = current.guard_leakage(margin);
            if leakage > opts.leakage_tol {
                return Err(Error::SequenceLeakage {
                    pulse_index: index,
                    leakage,
                    tol: opts.leakage_tol,
                });
            }
        }
        Ok(current)
    }

    /// Compose the whole sequence into one matrix (time order: first
    /// pulse rightmost).
    pub fn compose(&mut self, seq: &PulseSequence) -> Result<Operator> {
        let mut total = Operator::identity(self.dim, self.space).with_label("U_seq");
        for pulse in seq.pulses() {
            if let Some(u) = self.unitary(pulse)? {
                total = u.compose(&total)?.with_label("U_seq");
            }
        }
        Ok(total)
    }

    fn build(&self, pulse: &Pulse) -> Result<Operator> {
        match pulse {
            Pulse::Wait { .. } => unreachable!(),
            Pulse::Displace { params, .. } => {
                let op = fock::displacement_unitary(params, self.dim)?;
                match self.space {
                    Space::Fock => Ok(op),
                    Space::QubitFock => op.lift_to_qubit(),
                }
            }
            Pulse::Squeeze { params, .. } => {
                let op = fock::squeeze_unitary(params, self.dim)?;
                match self.space {
                    Space::Fock => Ok(op),
                    Space::QubitFock => op.lift_to_qubit(),
                }
            }
            Pulse::EvolveH {
                hamiltonian_id,
                duration_s,
                ..
            } => {
                let h = self.registry.get(hamiltonian_id)?;
                if h.dim() != self.dim || h.space() != self.space {
                    return Err(Error::invalid(format!(
                        "hamiltonian `{hamiltonian_id}` basis mismatch with state"
                    )));
                }
                let gen = h
                    .entries()
                    .mapv(|z| -linalg::I * z * C64::new(*duration_s, 0.0));
                Operator::new(
                    self.dim,
                    self.space,
                    linalg::expm(&gen)?,
                    format!("exp(-i·{hamiltonian_id}·{duration_s:.3e})"),
                )
            }
        }
    }
}

/// One-shot wrapper around [`SequenceEvolver::evolve`].
pub fn evolve_sequence(
    state: &MotionalState,
    seq: &PulseSequence,
    registry: &HamiltonianRegistry,
    opts: &EvolveOptions,
) -> Result<MotionalState> {
    SequenceEvolver::new(state.dim(), state.space(), registry).evolve(state, seq, opts)
}

/// One-shot wrapper around [`SequenceEvolver::compose`].
pub fn sequence_unitary(
    seq: &PulseSequence,
    registry: &HamiltonianRegistry,
    cutoff: usize,
    space: Space,
) -> Result<Operator> {
    SequenceEvolver::new(cutoff, space, registry).compose(seq)
}

/// G = ⟨â⟩_out / α_in.
pub fn estimate_gain(state_out: &MotionalState, alpha_in: C64) -> Result<GainReport> {
    if alpha_in.norm() == 0.0 {
        return Err(Error::invalid("input amplitude must be nonzero"));
    }
    let mean = fock::mean_displacement(state_out)?;
    Ok(GainReport::new(mean / alpha_in))
}

/// Convenience: P_↑ after evolving |↑,0⟩ through a Trotterized
/// amplification sequence (qubit ⊗ Fock).
pub fn evolve_qubit_up_probability(
    seq: &PulseSequence,
    registry: &HamiltonianRegistry,
    cutoff: usize,
    opts: &EvolveOptions,
) -> Result<f64> {
    let initial = MotionalState::Pure(StateVector::qubit_fock_basis(cutoff, true, 0)?);
    let final_state = evolve_sequence(&initial, seq, registry, opts)?;
    match final_state {
        MotionalState::Pure(s) => s.qubit_up_population(),
        MotionalState::Mixed(r) => r.qubit_up_population(),
    }
}

/// Fidelity |⟨a|b⟩|² of two pure states (global-phase independent).
pub fn pure_state_fidelity(a: &MotionalState, b: &MotionalState) -> Result<f64> {
    match (a, b) {
        (MotionalState::Pure(x), MotionalState::Pure(y)) => x.fidelity(y),
        _ => Err(Error::invalid("fidelity helper expects pure states")),
    }
}
