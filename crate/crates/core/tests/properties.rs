//! Randomized invariant checks with seeded RNG.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squeeze_amp_core::fock::{
    self, default_cutoff, default_margin, displacement_op, make_state, squeeze_op,
    DisplacementParams, MotionalState, Space, SqueezeParams, StateSpec, StateVector,
};
use squeeze_amp_core::linalg;
use squeeze_amp_core::open_system::{
    effective_lindbladian, stroboscopic_ha_propagate, DephasingConfig, StroboOptions,
};
use squeeze_amp_core::protocols::{
    build_ha_displacement_with_offset, build_phase_sensitive, estimate_gain, evolve_sequence,
    predicted_gain, EvolveOptions, GainScheme, HamiltonianRegistry, HamiltonianSpec,
    PulseSequence, SequenceEvolver,
};
use squeeze_amp_core::tomography::{
    bsb_signal, fit_model_free, model_populations, sample_trace, FitModel, SidebandCal,
};

/// Basis size on which the truncated S†DS sandwich is faithful for the
/// lowest `IDENTITY_BLOCK` levels: squeezing spreads level n out to
/// ~e^{2r}·n, so the faithful depth shrinks exponentially with r and
/// the basis must grow accordingly.
pub fn identity_check_cutoff(r: f64, alpha_worst: f64) -> usize {
    (28.0 * (2.0 * r).exp() + 8.0 * alpha_worst * alpha_worst + 32.0).ceil() as usize
}

pub const IDENTITY_BLOCK: usize = 8;

/// Eq-(2) amplifier identity: S†(ξ)D(α)S(ξ) = D(α cosh r + α* e^{iθ} sinh r),
/// checked on the lowest levels (entrywise and by column action).
#[test]
fn amplifier_identity_random_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    for trial in 0..10 {
        let r: f64 = rng.gen_range(0.0..1.5);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let mag = rng.gen_range(0.05..1.0);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let alpha = C64::from_polar(mag, phi);
        let alpha_amp = alpha * r.cosh() + alpha.conj() * C64::from_polar(r.sinh(), theta);

        let cutoff = identity_check_cutoff(r, alpha_amp.norm().max(mag));
        let s = squeeze_op(&SqueezeParams::new(r, theta).unwrap(), cutoff).unwrap();
        let d = displacement_op(&DisplacementParams::new(mag, phi).unwrap(), cutoff).unwrap();
        let d_amp = displacement_op(&DisplacementParams::from_complex(alpha_amp), cutoff).unwrap();
        let sandwich = s.dagger().compose(&d).unwrap().compose(&s).unwrap();
        let dev =
            linalg::guarded_max_diff(sandwich.entries(), d_amp.entries(), IDENTITY_BLOCK);
        assert!(dev <= 1e-7, "trial {trial}: deviation {dev:.3e} at cutoff {cutoff}");
        // full column action on the lowest basis states
        for n in 0..IDENTITY_BLOCK {
            let col_dev: f64 = (0..cutoff)
                .map(|m| (sandwich.entries()[[m, n]] - d_amp.entries()[[m, n]]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(
                col_dev <= 1e-7,
                "trial {trial}: ‖(S†DS − D_amp)|{n}⟩‖ = {col_dev:.3e}"
            );
        }
    }
}

/// Eq-(4) phase independence: |G| = cosh r to 1e−6 relative for every φ
/// and any common quadrature offset, with arg G = 0 (direction
/// preserved).
#[test]
fn ha_gain_phase_independent_and_direction_preserving() {
    let r: f64 = 1.0;
    let cutoff = default_cutoff(r, 0.55 * (2.0 * r).exp() / 2.0);
    let vac = make_state(&StateSpec::Vacuum, cutoff).unwrap();
    let registry = HamiltonianRegistry::new();
    let opts = EvolveOptions::default();
    let cosh_r = r.cosh();
    for n_rounds in [1usize, 2] {
        for theta_offset in [0.0, 0.77] {
            let mut evolver = SequenceEvolver::new(cutoff, Space::Fock, &registry);
            let mut gains = Vec::new();
            for k in 0..10 {
                let phi = std::f64::consts::TAU * k as f64 / 10.0;
                let alpha = DisplacementParams::new(0.55, phi).unwrap();
                let seq =
                    build_ha_displacement_with_offset(&alpha, r, n_rounds, theta_offset).unwrap();
                let out = evolver.evolve(&vac, &seq, &opts).unwrap();
                let g = estimate_gain(&out, alpha.alpha()).unwrap();
                assert!(
                    (g.g_abs - cosh_r).abs() / cosh_r <= 1e-6,
                    "N={n_rounds} offset={theta_offset} φ={phi}: |G|={}",
                    g.g_abs
                );
                assert!(
                    g.g_complex().arg().abs() <= 1e-6,
                    "arg G = {}",
                    g.g_complex().arg()
                );
                gains.push(g.g_abs);
            }
            let spread = gains.iter().cloned().fold(f64::MIN, f64::max)
                - gains.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread / cosh_r <= 1e-6, "gain spread {spread:.3e}");
        }
    }
}

/// Phase-sensitive gain envelope spans [e^{−r}, e^{r}] and follows
/// |cosh r + e^{i(θ−2φ)} sinh r|.
#[test]
fn phase_sensitive_envelope() {
    let r: f64 = 1.0;
    let cutoff = default_cutoff(r, 0.55 * r.exp());
    let vac = make_state(&StateSpec::Vacuum, cutoff).unwrap();
    let registry = HamiltonianRegistry::new();
    let opts = EvolveOptions::default();
    let xi = SqueezeParams::new(r, 0.0).unwrap();
    let mut evolver = SequenceEvolver::new(cutoff, Space::Fock, &registry);
    let mut min_g = f64::MAX;
    let mut max_g = f64::MIN;
    for k in 0..20 {
        let phi = std::f64::consts::TAU * k as f64 / 20.0;
        let alpha = DisplacementParams::new(0.55, phi).unwrap();
        let seq = build_phase_sensitive(&alpha, &xi);
        let out = evolver.evolve(&vac, &seq, &opts).unwrap();
        let g = estimate_gain(&out, alpha.alpha()).unwrap();
        let predicted = predicted_gain(GainScheme::PhaseSensitive, r, 0.0, phi)
            .unwrap()
            .norm();
        assert!(
            (g.g_abs - predicted).abs() / predicted <= 1e-6,
            "φ={phi}: {} vs {predicted}",
            g.g_abs
        );
        min_g = min_g.min(g.g_abs);
        max_g = max_g.max(g.g_abs);
    }
    assert!((max_g - r.exp()).abs() / r.exp() <= 1e-6, "max {max_g}");
    assert!((min_g - (-r).exp()).abs() / (-r).exp() <= 1e-6, "min {min_g}");
}

/// Every constructed unitary satisfies the guarded unitarity bound.
#[test]
fn constructed_unitaries_pass_guarded_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB4);
    for _ in 0..5 {
        let r: f64 = rng.gen_range(0.1..1.3);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let cutoff = default_cutoff(r, 0.0);
        let s = squeeze_op(&SqueezeParams::new(r, theta).unwrap(), cutoff).unwrap();
        assert!(s.unitarity_defect(default_margin(cutoff)) <= 1e-9);

        let mag = rng.gen_range(0.1..1.5);
        let cutoff = default_cutoff(0.0, mag);
        let d = displacement_op(
            &DisplacementParams::new(mag, rng.gen_range(0.0..6.28)).unwrap(),
            cutoff,
        )
        .unwrap();
        assert!(d.unitarity_defect(default_margin(cutoff)) <= 1e-9);
    }
    // exp(−iHt) for the JC coupling
    let spec = HamiltonianSpec::jaynes_cummings(2.0 * std::f64::consts::PI * 1000.0, 32).unwrap();
    let mut registry = HamiltonianRegistry::new();
    let id = registry.register_spec(&spec).unwrap();
    let seq = PulseSequence::new(vec![squeeze_amp_core::protocols::Pulse::evolve_h(
        &id, 2.3e-4, spec.omega,
    )])
    .unwrap();
    let u = squeeze_amp_core::protocols::sequence_unitary(&seq, &registry, 32, Space::QubitFock)
        .unwrap();
    assert!(u.unitarity_defect(default_margin(32)) <= 1e-9);
}

/// σ⁺σ⁻ + â†â is conserved by the bare JC evolution.
#[test]
fn jc_conserves_total_excitation() {
    let cutoff = 24;
    let omega = 2.0 * std::f64::consts::PI * 1000.0;
    let spec = HamiltonianSpec::jaynes_cummings(omega, cutoff).unwrap();
    let mut registry = HamiltonianRegistry::new();
    let id = registry.register_spec(&spec).unwrap();

    let excitation = |s: &StateVector| -> f64 {
        let amps = s.amplitudes();
        (0..cutoff)
            .map(|n| {
                let up = amps[2 * n].norm_sqr();
                let down = amps[2 * n + 1].norm_sqr();
                (n as f64 + 1.0) * up + n as f64 * down
            })
            .sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    for _ in 0..4 {
        // random low-lying superposition
        let mut amps = Array1::<C64>::zeros(2 * cutoff);
        for idx in 0..10 {
            amps[idx] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps = amps.mapv(|z| z / C64::new(norm, 0.0));
        let state = StateVector::new(cutoff, Space::QubitFock, amps).unwrap();
        let before = excitation(&state);
        let t = rng.gen_range(1e-5..5e-4);
        let seq = PulseSequence::new(vec![squeeze_amp_core::protocols::Pulse::evolve_h(
            &id, t, omega,
        )])
        .unwrap();
        let out = evolve_sequence(
            &MotionalState::Pure(state),
            &seq,
            &registry,
            &EvolveOptions::default(),
        )
        .unwrap();
        let after = excitation(out.as_pure().unwrap());
        assert!(
            (before - after).abs() <= 1e-10,
            "excitation drifted {before} → {after}"
        );
    }
}

/// The amplified dynamics must not depend on the drive phase χ
/// (Ω → Ω e^{iχ}); compare P_↑ traces through the fitted frequency.
#[test]
fn ha_jc_gain_invariant_under_drive_phase() {
    // Trotter error transiently populates mid levels, and squeezing
    // spreads level n out to ~e^{2r}·n; 22·e^{2r} keeps that spray
    // below 1e-4 for the whole trace.
    let cutoff = (22.0 * (2.2f64).exp()).ceil() as usize;
    let omega = 2.0 * std::f64::consts::PI * 1000.0;
    let r: f64 = 1.1;
    let n_steps = 6;
    let omega_fit = |chi: f64| -> f64 {
        let spec = HamiltonianSpec::jaynes_cummings(omega, cutoff)
            .unwrap()
            .with_phase(chi);
        let mut registry = HamiltonianRegistry::new();
        registry.register_spec(&spec).unwrap();
        let mut evolver = SequenceEvolver::new(cutoff, Space::QubitFock, &registry);
        let opts = EvolveOptions {
            leakage_tol: 1e-4,
            margin: None,
        };
        let f_amp = omega * r.cosh() / std::f64::consts::PI;
        let span = 2.5 / f_amp;
        let times: Vec<f64> = (1..=40).map(|i| span * i as f64 / 40.0).collect();
        let initial = MotionalState::Pure(
            StateVector::qubit_fock_basis(cutoff, true, 0).unwrap(),
        );
        let p_up: Vec<f64> = times
            .iter()
            .map(|&t| {
                let seq = squeeze_amp_core::protocols::build_ha_trotter(&spec, r, t, n_steps)
                    .unwrap();
                let out = evolver.evolve(&initial, &seq, &opts).unwrap();
                out.as_pure().unwrap().qubit_up_population().unwrap()
            })
            .collect();
        let trace = squeeze_amp_core::tomography::BsbTrace::new(times, p_up, 0).unwrap();
        squeeze_amp_core::tomography::fit_rabi(&trace).unwrap().params["omega_rad_s"]
    };
    let f0 = omega_fit(0.0);
    let f1 = omega_fit(1.234);
    assert!(
        (f0 - f1).abs() / f0 < 0.01,
        "fitted Ω changed with χ: {f0} vs {f1}"
    );
}

/// Strobe → effective-generator convergence is monotone in N.
#[test]
fn strobe_converges_monotonically_to_effective_generator() {
    let cutoff = 16;
    let omega = 2.0 * std::f64::consts::PI * 1000.0;
    let gamma = 0.01 * omega;
    let spec = HamiltonianSpec::jaynes_cummings(omega, cutoff).unwrap();
    let h = spec.operator().unwrap();
    let t = 2e-4;
    let psi = StateVector::qubit_fock_basis(cutoff, true, 0).unwrap();
    let rho0 = psi.to_density();
    for r in [0.3, 0.6] {
        let cfg = DephasingConfig::new(gamma).unwrap();
        let eff = effective_lindbladian(Some(&h), &cfg, r, cutoff, Space::QubitFock).unwrap();
        let target = eff.propagator(t).unwrap().apply(&rho0).unwrap();
        let mut last = f64::MAX;
        for n in [8usize, 16, 32, 64] {
            let strobo = stroboscopic_ha_propagate(
                &rho0,
                Some(&h),
                &cfg,
                r,
                n,
                t,
                &StroboOptions::default(),
            )
            .unwrap();
            let dist = fock::trace_distance(&strobo, &target).unwrap();
            assert!(
                dist <= last * (1.0 + 1e-12),
                "r={r}, N={n}: distance {dist:.3e} rose above {last:.3e}"
            );
            last = dist;
        }
    }
}

/// Model-free and model-based populations agree on noiseless traces.
#[test]
fn model_free_agrees_with_model_law() {
    let cal = SidebandCal::new(2.0 * std::f64::consts::PI * 40e3, 0.0).unwrap();
    let times = cal.default_time_grid(50);
    let cases = [
        (FitModel::Coherent, 0.55, 12usize),
        (FitModel::Thermal, 0.06, 12),
        (FitModel::SqueezedVacuum, 0.8, 16),
    ];
    for (model, param, n_max) in cases {
        let law = model_populations(model, param).unwrap();
        let total: f64 = law.iter().sum();
        let pv = squeeze_amp_core::fock::PopulationVector::new(law.clone(), 1.0 - total).unwrap();
        let trace = bsb_signal(&pv, &cal, &times).unwrap();
        let fit = fit_model_free(&trace, &cal, n_max).unwrap();
        let got = &fit.populations.as_ref().unwrap().probs;
        for n in 0..=n_max {
            let expect = law.get(n).copied().unwrap_or(0.0);
            assert!(
                (got[n] - expect).abs() <= 1e-3,
                "{model:?} P_{n}: {} vs {expect}",
                got[n]
            );
        }
    }
}

/// Noisy squeezed-vacuum trace keeps odd populations near zero.
#[test]
fn noisy_squeezed_fit_shows_even_dominance() {
    let cal = SidebandCal::new(2.0 * std::f64::consts::PI * 40e3, 300.0).unwrap();
    let times = cal.default_time_grid(50);
    let law = model_populations(FitModel::SqueezedVacuum, 1.38).unwrap();
    let total: f64 = law.iter().sum();
    let pv = squeeze_amp_core::fock::PopulationVector::new(law, 1.0 - total).unwrap();
    let clean = bsb_signal(&pv, &cal, &times).unwrap();
    let mut odd_sums: Vec<f64> = (1..=5u64)
        .map(|seed| {
            let noisy = sample_trace(&clean, 300, seed).unwrap();
            let fit = fit_model_free(&noisy, &cal, 12).unwrap();
            let probs = &fit.populations.as_ref().unwrap().probs;
            probs.iter().take(10).skip(1).step_by(2).sum()
        })
        .collect();
    odd_sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = odd_sums[2];
    assert!(median <= 0.05, "median odd-population sum {median} ({odd_sums:?})");
}

/// Round-trip with γ > 0 and the 0.7 exponent on both sides.
#[test]
fn exponent_variant_roundtrips_with_decay() {
    let cal = SidebandCal::new(2.0 * std::f64::consts::PI * 40e3, 300.0)
        .unwrap()
        .with_exponent(0.7)
        .unwrap();
    let times = cal.default_time_grid(50);
    let law = model_populations(FitModel::Coherent, 0.55).unwrap();
    let total: f64 = law.iter().sum();
    let pv = squeeze_amp_core::fock::PopulationVector::new(law.clone(), 1.0 - total).unwrap();
    let trace = bsb_signal(&pv, &cal, &times).unwrap();
    let fit = fit_model_free(&trace, &cal, 10).unwrap();
    let got = &fit.populations.as_ref().unwrap().probs;
    for n in 0..=10 {
        assert!(
            (got[n] - law[n]).abs() <= 1e-3,
            "P_{n}: {} vs {}",
            got[n],
            law[n]
        );
    }
}
