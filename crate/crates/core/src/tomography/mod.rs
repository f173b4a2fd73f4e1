//! Synthetic blue-sideband experiment and the fitting pipeline:
//! BSB signal model, projection-noise sampling, model-free population
//! extraction, model-based single-parameter fits, and decaying-sinusoid
//! Rabi fits.
//!
//! The signal model is
//!
//!   P↓(t) = ½[1 + Σ_n P_n · e^{−γ(n+1)^q t} · cos(Ω_SB √(n+1) t)]
//!
//! with q the decay exponent (0.5 or 0.7). Once (Ω_SB, γ) are fixed by
//! a vacuum calibration fit, the model is linear in {P_n}, so the
//! model-free fit is simplex-constrained linear least squares; the
//! model-based fits optimize a single scalar parameter.

pub mod nnls;
pub mod optim;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::SVD;
use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fock::PopulationVector;
use crate::seeds::derive_seed;

const BOOTSTRAP_RESAMPLES: usize = 200;

/// Sideband calibration: Rabi frequency, phenomenological decay, and
/// the (n+1) exponent applied inside the decay factor.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SidebandCal {
    pub omega_sb: f64,
    pub gamma: f64,
    pub decay_exponent: f64,
}

impl SidebandCal {
    pub fn new(omega_sb: f64, gamma: f64) -> Result<Self> {
        if !(omega_sb > 0.0) {
            return Err(Error::invalid(format!("Ω_SB must be > 0, got {omega_sb}")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::invalid(format!("γ must be ≥ 0, got {gamma}")));
        }
        Ok(SidebandCal {
            omega_sb,
            gamma,
            decay_exponent: 0.5,
        })
    }

    pub fn with_exponent(mut self, q: f64) -> Result<Self> {
        if q != 0.5 && q != 0.7 {
            return Err(Error::invalid(format!(
                "decay exponent must be 0.5 or 0.7, got {q}"
            )));
        }
        self.decay_exponent = q;
        Ok(self)
    }

    /// 50 uniform points over 4 vacuum Rabi periods.
    pub fn default_time_grid(&self, n_points: usize) -> Vec<f64> {
        let span = 4.0 * 2.0 * std::f64::consts::PI / self.omega_sb;
        (0..n_points)
            .map(|i| span * i as f64 / (n_points as f64 - 1.0))
            .collect()
    }
}

/// A measured (or synthesized) BSB flopping trace.
#[derive(Debug, Clone)]
pub struct BsbTrace {
    pub times: Vec<f64>,
    pub p_down: Vec<f64>,
    /// Shots per point; 0 means noiseless.
    pub shots: u32,
    pub seed: Option<u64>,
}

impl BsbTrace {
    pub fn new(times: Vec<f64>, p_down: Vec<f64>, shots: u32) -> Result<Self> {
        if times.len() != p_down.len() || times.is_empty() {
            return Err(Error::invalid("trace vectors must be nonempty, equal length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("times must be strictly increasing"));
        }
        if p_down.iter().any(|p| !(-1e-9..=1.0 + 1e-9).contains(p)) {
            return Err(Error::invalid("populations must lie in [0, 1]"));
        }
        Ok(BsbTrace {
            times,
            p_down,
            shots,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// Evaluate the BSB signal model for fixed populations.
pub fn bsb_signal(p: &PopulationVector, cal: &SidebandCal, times: &[f64]) -> Result<BsbTrace> {
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("times must be ≥ 0"));
    }
    let values: Vec<f64> = times
        .iter()
        .map(|&t| signal_value(&p.probs, cal, t))
        .collect();
    BsbTrace::new(times.to_vec(), values, 0)
}

fn signal_value(probs: &[f64], cal: &SidebandCal, t: f64) -> f64 {
    let mut acc = 0.0;
    for (n, &pn) in probs.iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        let np1 = (n + 1) as f64;
        let decay = (-cal.gamma * np1.powf(cal.decay_exponent) * t).exp();
        acc += pn * decay * (cal.omega_sb * np1.sqrt() * t).cos();
    }
    0.5 * (1.0 + acc)
}

/// Replace each point with k/shots, k ~ Binomial(shots, p). Deterministic
/// under a fixed seed.
pub fn sample_trace(trace: &BsbTrace, shots: u32, seed: u64) -> Result<BsbTrace> {
    if shots < 1 {
        return Err(Error::invalid("shots must be ≥ 1"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sampled: Vec<f64> = trace
        .p_down
        .iter()
        .map(|&p| {
            let clamped = p.clamp(0.0, 1.0);
            let dist = Binomial::new(u64::from(shots), clamped)
                .expect("probability clamped into [0,1]");
            dist.sample(&mut rng) as f64 / f64::from(shots)
        })
        .collect();
    let mut out = BsbTrace::new(trace.times.clone(), sampled, shots)?;
    out.seed = Some(seed);
    Ok(out)
}

/// Fit model tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    ModelFree,
    Coherent,
    SqueezedVacuum,
    Thermal,
    RabiSinusoid,
}

/// Result of any fit in this module.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FitModel,
    pub params: BTreeMap<String, f64>,
    pub populations: Option<PopulationVector>,
    pub populations_ci68: Option<Vec<(f64, f64)>>,
    pub residual_rms: f64,
    pub ci68: BTreeMap<String, (f64, f64)>,
    /// Set when a fitted parameter landed on its search boundary.
    pub at_boundary: bool,
}

impl FitResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "model": serde_json::to_value(self.model).unwrap(),
            "params": self.params,
            "ci68": self.ci68.iter().map(|(k, (lo, hi))| (k.clone(), json!([lo, hi]))).collect::<BTreeMap<_, _>>(),
            "residual_rms": self.residual_rms,
            "populations": self.populations.as_ref().map(|p| json!({
                "probs": p.probs,
                "leakage": p.leakage,
                "ci68": self.populations_ci68,
            })),
            "at_boundary": self.at_boundary,
        })
    }
}

/// Design matrix of the linear model: column n holds
/// ½·e^{−γ(n+1)^q t_i}·cos(Ω√(n+1) t_i).
fn design_matrix(times: &[f64], cal: &SidebandCal, n_max: usize) -> Array2<f64> {
    Array2::from_shape_fn((times.len(), n_max + 1), |(i, n)| {
        let np1 = (n + 1) as f64;
        let decay = (-cal.gamma * np1.powf(cal.decay_exponent) * times[i]).exp();
        0.5 * decay * (cal.omega_sb * np1.sqrt() * times[i]).cos()
    })
}

/// Simplex-constrained linear solve: NNLS with a weighted Σp = 1 row to
/// find the support, then an exact equality-constrained polish on it.
fn solve_simplex_ls(a: &Array2<f64>, z: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, k) = a.dim();
    let lambda = 1e4;
    let mut stacked = Array2::<f64>::zeros((m + 1, k));
    stacked.slice_mut(ndarray::s![..m, ..]).assign(a);
    for j in 0..k {
        stacked[[m, j]] = lambda;
    }
    let mut rhs = Array1::<f64>::zeros(m + 1);
    rhs.slice_mut(ndarray::s![..m]).assign(z);
    rhs[m] = lambda;

    let rough = nnls::nnls(&stacked, &rhs)?;
    let mut support: Vec<usize> = (0..k).filter(|&j| rough[j] > 1e-12).collect();
    if support.is_empty() {
        support = vec![0];
    }

    // Polish: KKT system for min ‖A_S p − z‖ s.t. Σp = 1, dropping any
    // component the equality solution pushes negative.
    for _ in 0..k + 1 {
        let s = support.len();
        let mut kkt = vec![vec![0.0_f64; s + 1]; s + 1];
        let mut rhs_kkt = vec![0.0_f64; s + 1];
        for (ci, &jc) in support.iter().enumerate() {
            rhs_kkt[ci] = a.column(jc).dot(z);
            for (cj, &jd) in support.iter().enumerate().skip(ci) {
                let v = a.column(jc).dot(&a.column(jd));
                kkt[ci][cj] = v;
                kkt[cj][ci] = v;
            }
            kkt[ci][s] = 1.0;
            kkt[s][ci] = 1.0;
        }
        rhs_kkt[s] = 1.0;
        let sol = nnls::solve_dense(&mut kkt, &mut rhs_kkt)?;
        if let Some((worst_idx, &worst)) = sol[..s]
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .filter(|(_, &v)| v < -1e-12)
        {
            let _ = worst;
            support.remove(worst_idx);
            if support.is_empty() {
                return Err(Error::FitFailure(
                    "simplex constraint infeasible on the fitted support".into(),
                ));
            }
            continue;
        }
        let mut p = Array1::<f64>::zeros(k);
        for (ci, &jc) in support.iter().enumerate() {
            p[jc] = sol[ci].max(0.0);
        }
        let total: f64 = p.sum();
        if total > 0.0 {
            p.mapv_inplace(|v| v / total);
        }
        return Ok(p);
    }
    Err(Error::FitFailure("simplex polish did not settle".into()))
}

/// Model-free Fock population extraction under P_n ≥ 0, ΣP_n = 1, with
/// 68% intervals from a seeded residual bootstrap.
pub fn fit_model_free(trace: &BsbTrace, cal: &SidebandCal, n_max: usize) -> Result<FitResult> {
    if n_max + 1 > trace.len() {
        return Err(Error::invalid(format!(
            "n_max+1 = {} exceeds the {} time points",
            n_max + 1,
            trace.len()
        )));
    }
    let a = design_matrix(&trace.times, cal, n_max);
    let (_, sv, _) = a
        .svd(false, false)
        .map_err(|e| Error::Numerical(format!("svd failed: {e}")))?;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > 1e10 {
        return Err(Error::RankDeficient { condition });
    }

    let z = Array1::from_iter(trace.p_down.iter().map(|&y| y - 0.5));
    let p = solve_simplex_ls(&a, &z)?;
    let fitted = a.dot(&p);
    let residuals: Vec<f64> = fitted
        .iter()
        .zip(z.iter())
        .map(|(f, zz)| f - zz)
        .collect();
    let residual_rms = rms(&residuals);

    // residual bootstrap over the population vector
    let root = trace.seed.unwrap_or(0x5eed);
    let samples: Vec<Array1<f64>> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(root, b as u64));
            let z_star = resample_target(&fitted, &residuals, &mut rng);
            solve_simplex_ls(&a, &z_star)
        })
        .collect::<Result<Vec<_>>>()?;
    let populations_ci68: Vec<(f64, f64)> = (0..=n_max)
        .map(|n| {
            let mut vals: Vec<f64> = samples.iter().map(|s| s[n]).collect();
            let lo = optim::percentile(&mut vals, 0.16);
            let hi = optim::percentile(&mut vals, 0.84);
            (lo, hi)
        })
        .collect();

    let probs: Vec<f64> = p.to_vec();
    let total: f64 = probs.iter().sum();
    let populations = PopulationVector::new(probs, 1.0 - total)?;
    Ok(FitResult {
        model: FitModel::ModelFree,
        params: BTreeMap::from([("condition_number".to_string(), condition)]),
        populations: Some(populations),
        populations_ci68: Some(populations_ci68),
        residual_rms,
        ci68: BTreeMap::new(),
        at_boundary: false,
    })
}

fn resample_target(
    fitted: &Array1<f64>,
    residuals: &[f64],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Array1<f64> {
    use rand::Rng;
    Array1::from_iter(fitted.iter().map(|&f| {
        let r = residuals[rng.gen_range(0..residuals.len())];
        f + r
    }))
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Population law of a single-parameter model, truncated once the tail
/// is negligible.
pub fn model_populations(model: FitModel, param: f64) -> Result<Vec<f64>> {
    const CAP: usize = 2048;
    const TAIL: f64 = 1e-14;
    match model {
        FitModel::Coherent => {
            let lambda = param * param; // mean phonon number |α|²
            let mut probs = vec![(-lambda).exp()];
            let mut n = 1usize;
            while n < CAP {
                let next = probs[n - 1] * lambda / n as f64;
                probs.push(next);
                if next < TAIL && lambda < n as f64 {
                    break;
                }
                n += 1;
            }
            Ok(probs)
        }
        FitModel::SqueezedVacuum => {
            let r: f64 = param;
            if r == 0.0 {
                return Ok(vec![1.0]);
            }
            let t2 = r.tanh() * r.tanh();
            let mut probs = vec![1.0 / r.cosh(), 0.0];
            let mut m = 1usize;
            while 2 * m < CAP {
                let prev = probs[2 * m - 2];
                let next = prev * t2 * (2.0 * m as f64 - 1.0) / (2.0 * m as f64);
                probs.push(next);
                probs.push(0.0);
                if next < TAIL {
                    break;
                }
                m += 1;
            }
            Ok(probs)
        }
        FitModel::Thermal => {
            let nbar: f64 = param;
            if nbar == 0.0 {
                return Ok(vec![1.0]);
            }
            let ratio = nbar / (1.0 + nbar);
            let mut probs = vec![1.0 / (1.0 + nbar)];
            let mut n = 1usize;
            while n < CAP {
                let next = probs[n - 1] * ratio;
                probs.push(next);
                if next < TAIL {
                    break;
                }
                n += 1;
            }
            Ok(probs)
        }
        _ => Err(Error::invalid("model_populations needs a population model")),
    }
}

fn model_param_name(model: FitModel) -> &'static str {
    match model {
        FitModel::Coherent => "alpha",
        FitModel::SqueezedVacuum => "r",
        FitModel::Thermal => "nbar",
        _ => "param",
    }
}

fn model_search_range(model: FitModel) -> (f64, f64) {
    match model {
        FitModel::Coherent => (0.0, 5.0),
        FitModel::SqueezedVacuum => (0.0, 2.5),
        FitModel::Thermal => (0.0, 20.0),
        _ => (0.0, 1.0),
    }
}

/// Fit tuning knobs. `bootstrap_resamples = 0` skips the confidence
/// intervals (batch hit-rate studies only need point estimates).
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub bootstrap_resamples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
        }
    }
}

/// Population law evaluated up to a fixed level count (padded with the
/// exact law values; no tail break).
fn model_populations_upto(model: FitModel, param: f64, n_levels: usize) -> Vec<f64> {
    let mut probs = Vec::with_capacity(n_levels);
    match model {
        FitModel::Coherent => {
            let lambda = param * param;
            let mut p = (-lambda).exp();
            for n in 0..n_levels {
                if n > 0 {
                    p *= lambda / n as f64;
                }
                probs.push(p);
            }
        }
        FitModel::SqueezedVacuum => {
            if param == 0.0 {
                probs.push(1.0);
                probs.resize(n_levels, 0.0);
            } else {
                let t2 = param.tanh() * param.tanh();
                let mut p = 1.0 / param.cosh();
                for n in 0..n_levels {
                    if n % 2 == 1 {
                        probs.push(0.0);
                        continue;
                    }
                    if n > 0 {
                        let m = n as f64 / 2.0;
                        p *= t2 * (2.0 * m - 1.0) / (2.0 * m);
                    }
                    probs.push(p);
                }
            }
        }
        FitModel::Thermal => {
            let ratio = param / (1.0 + param);
            let mut p = 1.0 / (1.0 + param);
            for n in 0..n_levels {
                if n > 0 {
                    p *= ratio;
                }
                probs.push(p);
            }
        }
        _ => {}
    }
    probs
}

/// Level count that keeps the truncated-law residual below ~1e−10 at
/// the top of the model's search range.
fn model_level_cap(model: FitModel) -> usize {
    let (_, hi) = model_search_range(model);
    match model {
        FitModel::Coherent => {
            let lambda = hi * hi;
            (lambda + 12.0 * lambda.sqrt() + 24.0).ceil() as usize
        }
        FitModel::SqueezedVacuum => {
            let t2 = hi.tanh() * hi.tanh();
            ((1e-10f64.ln() / t2.ln()).ceil() as usize).max(32)
        }
        FitModel::Thermal => {
            let ratio = hi / (1.0 + hi);
            ((1e-12f64.ln() / ratio.ln()).ceil() as usize).max(32)
        }
        _ => 32,
    }
}

/// Single-parameter model fit (coherent | squeezed_vacuum | thermal) by
/// bracketed scan plus golden-section refinement; 68% intervals from a
/// seeded residual bootstrap.
pub fn fit_model(trace: &BsbTrace, model: FitModel, cal: &SidebandCal) -> Result<FitResult> {
    fit_model_with(trace, model, cal, &FitOptions::default())
}

pub fn fit_model_with(
    trace: &BsbTrace,
    model: FitModel,
    cal: &SidebandCal,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !matches!(
        model,
        FitModel::Coherent | FitModel::SqueezedVacuum | FitModel::Thermal
    ) {
        return Err(Error::invalid(
            "fit_model handles coherent, squeezed_vacuum, and thermal models",
        ));
    }
    let (lo, hi) = model_search_range(model);
    let n_cap = model_level_cap(model);
    // the signal is linear in the populations: precompute the design
    // once, so objective evaluations are plain dot products
    let design = design_matrix(&trace.times, cal, n_cap - 1);

    let fit_once = |ys: &[f64]| -> Result<(f64, f64, bool)> {
        let objective = |param: f64| -> f64 {
            let probs = model_populations_upto(model, param, n_cap);
            let mut cost = 0.0;
            for (i, &y) in ys.iter().enumerate() {
                let mut v = 0.5;
                for (n, &pn) in probs.iter().enumerate() {
                    if pn != 0.0 {
                        v += pn * design[[i, n]];
                    }
                }
                let d = v - y;
                cost += d * d;
            }
            cost
        };
        optim::grid_then_golden(&objective, lo, hi, 256, 1e-11)
    };

    let (param, cost, at_boundary) = fit_once(&trace.p_down)?;
    if at_boundary && param > lo + 1e-9 {
        return Err(Error::FitFailure(format!(
            "{} = {param:.6} sits at the search boundary",
            model_param_name(model)
        )));
    }
    let residual_rms = (cost / trace.len() as f64).sqrt();
    let name = model_param_name(model);

    let probs = model_populations_upto(model, param, n_cap);
    let mut ci68 = BTreeMap::new();
    if opts.bootstrap_resamples > 0 {
        let fitted: Vec<f64> = (0..trace.len())
            .map(|i| {
                let mut v = 0.5;
                for (n, &pn) in probs.iter().enumerate() {
                    if pn != 0.0 {
                        v += pn * design[[i, n]];
                    }
                }
                v
            })
            .collect();
        let residuals: Vec<f64> = fitted
            .iter()
            .zip(trace.p_down.iter())
            .map(|(f, y)| y - f)
            .collect();
        let root = trace.seed.unwrap_or(0x5eed);
        let mut boot: Vec<f64> = (0..opts.bootstrap_resamples)
            .into_par_iter()
            .map(|b| {
                use rand::Rng;
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(root, b as u64));
                let ys: Vec<f64> = fitted
                    .iter()
                    .map(|&f| f + residuals[rng.gen_range(0..residuals.len())])
                    .collect();
                fit_once(&ys).map(|(p, _, _)| p)
            })
            .collect::<Result<Vec<_>>>()?;
        ci68.insert(
            name.to_string(),
            (
                optim::percentile(&mut boot, 0.16),
                optim::percentile(&mut boot, 0.84),
            ),
        );
    }

    let n_report = 12.min(probs.len() - 1);
    let report_probs: Vec<f64> = probs[..=n_report].to_vec();
    let total: f64 = report_probs.iter().sum();
    Ok(FitResult {
        model,
        params: BTreeMap::from([(name.to_string(), param)]),
        populations: Some(PopulationVector::new(report_probs, 1.0 - total)?),
        populations_ci68: None,
        residual_rms,
        ci68,
        at_boundary,
    })
}

/// Fit A·e^{−t/τ}·cos(2πft + φ₀) + c, initializing the frequency from
/// the discrete-spectrum peak. Returns Ω = πf under the flop convention
/// P(t) = cos²(Ωt).
pub fn fit_rabi(trace: &BsbTrace) -> Result<FitResult> {
    if trace.len() < 12 {
        return Err(Error::invalid(format!(
            "rabi fit needs ≥ 12 points, got {}",
            trace.len()
        )));
    }
    let n = trace.len();
    let mean = trace.p_down.iter().sum::<f64>() / n as f64;
    let demeaned: Vec<f64> = trace.p_down.iter().map(|y| y - mean).collect();
    let span = trace.span();

    // periodogram over [0.5/span, Nyquist]
    let dt_med = span / (n as f64 - 1.0);
    let f_lo = 0.5 / span;
    let f_hi = 0.5 / dt_med;
    let grid = 4096;
    let mut best = (f_lo, 0.0_f64);
    let mut powers = Vec::with_capacity(grid);
    for k in 0..grid {
        let f = f_lo + (f_hi - f_lo) * k as f64 / (grid as f64 - 1.0);
        let (mut re, mut im) = (0.0_f64, 0.0_f64);
        for (t, y) in trace.times.iter().zip(demeaned.iter()) {
            let phase = 2.0 * std::f64::consts::PI * f * t;
            re += y * phase.cos();
            im -= y * phase.sin();
        }
        let p = re * re + im * im;
        powers.push(p);
        if p > best.1 {
            best = (f, p);
        }
    }
    let mut sorted = powers.clone();
    let floor = optim::percentile(&mut sorted, 0.5);
    if best.1 < 10.0 * floor.max(1e-300) {
        return Err(Error::FitFailure(
            "no spectral peak above the noise floor".into(),
        ));
    }
    let f0 = best.0;
    if span * f0 < 1.5 {
        return Err(Error::invalid(format!(
            "trace spans only {:.2} oscillation periods; need ≥ 1.5",
            span * f0
        )));
    }

    // phase/amplitude seed from the projection at f0
    let (mut re, mut im) = (0.0_f64, 0.0_f64);
    for (t, y) in trace.times.iter().zip(demeaned.iter()) {
        let phase = 2.0 * std::f64::consts::PI * f0 * t;
        re += y * phase.cos();
        im -= y * phase.sin();
    }
    let phi0 = im.atan2(re);
    let amp0 = 2.0 * (re * re + im * im).sqrt() / n as f64;

    let fit_once = |ys: &[f64]| -> Result<(Vec<f64>, f64)> {
        let times = &trace.times;
        let residuals = move |p: &[f64]| -> Vec<f64> {
            times
                .iter()
                .zip(ys.iter())
                .map(|(&t, &y)| {
                    p[0] * (-p[4] * t).exp()
                        * (2.0 * std::f64::consts::PI * p[1] * t + p[2]).cos()
                        + p[3]
                        - y
                })
                .collect()
        };
        let jacobian = move |p: &[f64]| -> Vec<Vec<f64>> {
            times
                .iter()
                .map(|&t| {
                    let env = (-p[4] * t).exp();
                    let arg = 2.0 * std::f64::consts::PI * p[1] * t + p[2];
                    let cosv = arg.cos();
                    let sinv = arg.sin();
                    vec![
                        env * cosv,
                        -p[0] * env * sinv * 2.0 * std::f64::consts::PI * t,
                        -p[0] * env * sinv,
                        1.0,
                        -t * p[0] * env * cosv,
                    ]
                })
                .collect()
        };
        let x0 = vec![amp0, f0, phi0, mean, 0.5 / span];
        let sol = optim::levenberg_marquardt(
            &optim::LmProblem {
                residuals: &residuals,
                jacobian: &jacobian,
            },
            &x0,
            400,
        )?;
        if !sol.converged {
            return Err(Error::FitFailure(format!(
                "decaying-sinusoid fit did not converge in {} iterations",
                sol.iterations
            )));
        }
        Ok((sol.params, sol.cost))
    };

    let (params, cost) = fit_once(&trace.p_down)?;
    let (amp, freq, phase, offset, k) = (
        params[0].abs(),
        params[1].abs(),
        params[2],
        params[3],
        params[4],
    );
    let omega = std::f64::consts::PI * freq;
    let residual_rms = (cost / n as f64).sqrt();

    // bootstrap the frequency
    let fitted: Vec<f64> = trace
        .times
        .iter()
        .map(|&t| {
            params[0] * (-params[4] * t).exp()
                * (2.0 * std::f64::consts::PI * params[1] * t + params[2]).cos()
                + params[3]
        })
        .collect();
    let residuals_vec: Vec<f64> = fitted
        .iter()
        .zip(trace.p_down.iter())
        .map(|(f, y)| y - f)
        .collect();
    let root = trace.seed.unwrap_or(0x5eed);
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(root, b as u64));
            let ys: Vec<f64> = fitted
                .iter()
                .map(|&f| f + residuals_vec[rng.gen_range(0..residuals_vec.len())])
                .collect();
            fit_once(&ys).map(|(p, _)| std::f64::consts::PI * p[1].abs())
        })
        .collect::<Result<Vec<_>>>()?;
    let ci = (
        optim::percentile(&mut boot, 0.16),
        optim::percentile(&mut boot, 0.84),
    );

    let mut out_params = BTreeMap::from([
        ("amplitude".to_string(), amp),
        ("frequency_hz".to_string(), freq),
        ("phase_rad".to_string(), phase),
        ("offset".to_string(), offset),
        ("decay_rate_per_s".to_string(), k),
        ("omega_rad_s".to_string(), omega),
    ]);
    if k > 1e-12 {
        out_params.insert("tau_s".to_string(), 1.0 / k);
    }
    Ok(FitResult {
        model: FitModel::RabiSinusoid,
        params: out_params,
        populations: None,
        populations_ci68: None,
        residual_rms,
        ci68: BTreeMap::from([("omega_rad_s".to_string(), ci)]),
        at_boundary: false,
    })
}

/// Fixed-width float formatting (12 significant digits) shared by all
/// CSV writers; byte-identical output for identical inputs.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Write `time_s,p_down,shots` CSV.
pub fn write_trace_csv(trace: &BsbTrace, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "time_s,p_down,shots")?;
    for (t, p) in trace.times.iter().zip(trace.p_down.iter()) {
        writeln!(file, "{},{},{}", sig12(*t), sig12(*p), trace.shots)?;
    }
    Ok(())
}

/// Read a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<BsbTrace> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut times = Vec::new();
    let mut p_down = Vec::new();
    let mut shots: Option<u32> = None;
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "time_s,p_down,shots" {
                return Err(Error::invalid(format!("unexpected CSV header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::invalid(format!("line {}: need 3 fields", i + 1)));
        }
        let t: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("line {}: bad time ({e})", i + 1)))?;
        let p: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("line {}: bad population ({e})", i + 1)))?;
        let s: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("line {}: bad shots ({e})", i + 1)))?;
        match shots {
            None => shots = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::invalid("shots column must be uniform"));
            }
            _ => {}
        }
        times.push(t);
        p_down.push(p);
    }
    BsbTrace::new(times, p_down, shots.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cal() -> SidebandCal {
        SidebandCal::new(2.0 * std::f64::consts::PI * 40e3, 0.0).unwrap()
    }

    #[test]
    fn vacuum_signal_is_full_contrast_cosine() {
        let p = PopulationVector::new(vec![1.0], 0.0).unwrap();
        let c = cal();
        let times = c.default_time_grid(50);
        let trace = bsb_signal(&p, &c, &times).unwrap();
        for (t, y) in trace.times.iter().zip(trace.p_down.iter()) {
            assert_abs_diff_eq!(*y, 0.5 * (1.0 + (c.omega_sb * t).cos()), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(trace.p_down[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn signal_starts_at_one_for_any_population() {
        let p = PopulationVector::new(vec![0.3, 0.2, 0.5], 0.0).unwrap();
        let c = cal();
        let trace = bsb_signal(&p, &c, &[0.0, 1e-6]).unwrap();
        assert_abs_diff_eq!(trace.p_down[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn coherent_signal_at_vacuum_null() {
        // frozen oracle: ½(1 + Σ Pₙ cos(π√(n+1))) for α = 0.55
        let probs = model_populations(FitModel::Coherent, 0.55).unwrap();
        let c = cal();
        let t_null = std::f64::consts::PI / c.omega_sb;
        let v = signal_value(&probs, &c, t_null);
        assert_abs_diff_eq!(v, 0.11381834016885523, epsilon = 1e-10);
    }

    #[test]
    fn sampling_is_deterministic_and_respects_extremes() {
        let p = PopulationVector::new(vec![1.0], 0.0).unwrap();
        let c = cal();
        let times = c.default_time_grid(40);
        let trace = bsb_signal(&p, &c, &times).unwrap();
        let s1 = sample_trace(&trace, 300, 77).unwrap();
        let s2 = sample_trace(&trace, 300, 77).unwrap();
        assert_eq!(s1.p_down, s2.p_down);
        // p = 1 at t = 0 stays exactly 1
        assert_eq!(s1.p_down[0], 1.0);
        assert!(sample_trace(&trace, 0, 1).is_err());
    }

    #[test]
    fn binomial_concentration_at_many_shots() {
        let probs = model_populations(FitModel::Coherent, 0.55).unwrap();
        let total: f64 = probs.iter().sum();
        let p = PopulationVector::new(probs, 1.0 - total).unwrap();
        let c = cal();
        let times = c.default_time_grid(50);
        let trace = bsb_signal(&p, &c, &times).unwrap();
        let sampled = sample_trace(&trace, 1_000_000, 3).unwrap();
        let max_dev = trace
            .p_down
            .iter()
            .zip(sampled.p_down.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_dev <= 5e-3, "max deviation {max_dev}");
    }

    #[test]
    fn model_free_recovers_vacuum() {
        let p = PopulationVector::new(vec![1.0], 0.0).unwrap();
        let c = cal();
        let times = c.default_time_grid(50);
        let trace = bsb_signal(&p, &c, &times).unwrap();
        let fit = fit_model_free(&trace, &c, 12).unwrap();
        let probs = &fit.populations.as_ref().unwrap().probs;
        assert!((probs[0] - 1.0).abs() < 1e-6, "P0 = {}", probs[0]);
        for pn in &probs[1..] {
            assert!(*pn < 1e-6);
        }
    }

    #[test]
    fn model_free_recovers_coherent_populations() {
        let probs = model_populations(FitModel::Coherent, 0.55).unwrap();
        let total: f64 = probs.iter().sum();
        let p = PopulationVector::new(probs.clone(), 1.0 - total).unwrap();
        let c = cal();
        let times = c.default_time_grid(50);
        let trace = bsb_signal(&p, &c, &times).unwrap();
        let fit = fit_model_free(&trace, &c, 10).unwrap();
        let got = &fit.populations.as_ref().unwrap().probs;
        for n in 0..=10 {
            assert!(
                (got[n] - probs[n]).abs() < 1e-4,
                "P_{n}: {} vs {}",
                got[n],
                probs[n]
            );
        }
    }

    #[test]
    fn model_free_is_linear_in_populations() {
        // 50/50 mixture of vacuum and coherent traces
        let c = cal();
        let times = c.default_time_grid(50);
        let p_a = model_populations(FitModel::Coherent, 0.55).unwrap();
        let p_b = vec![1.0];
        let mix: Vec<f64> = (0..p_a.len())
            .map(|n| 0.5 * p_a[n] + 0.5 * p_b.get(n).copied().unwrap_or(0.0))
            .collect();
        let total: f64 = mix.iter().sum();
        let pv = PopulationVector::new(mix.clone(), 1.0 - total).unwrap();
        let trace = bsb_signal(&pv, &c, &times).unwrap();
        let fit = fit_model_free(&trace, &c, 10).unwrap();
        let got = &fit.populations.as_ref().unwrap().probs;
        for n in 0..=10 {
            assert!(
                (got[n] - mix[n]).abs() < 1e-6,
                "P_{n}: {} vs {}",
                got[n],
                mix[n]
            );
        }
    }

    #[test]
    fn model_fit_roundtrips_noiselessly() {
        let c = cal();
        let times = c.default_time_grid(50);
        for (model, truth) in [
            (FitModel::Coherent, 0.55),
            (FitModel::SqueezedVacuum, 1.38),
            (FitModel::Thermal, 0.06),
        ] {
            let probs = model_populations(model, truth).unwrap();
            let total: f64 = probs.iter().sum();
            let pv = PopulationVector::new(probs, 1.0 - total).unwrap();
            let trace = bsb_signal(&pv, &c, &times).unwrap();
            let fit = fit_model(&trace, model, &c).unwrap();
            let got = fit.params[model_param_name(model)];
            assert!(
                (got - truth).abs() < 1e-3,
                "{model:?}: {got} vs {truth}"
            );
        }
    }

    #[test]
    fn decay_exponent_inactive_at_gamma_zero() {
        let c05 = cal();
        let c07 = cal().with_exponent(0.7).unwrap();
        let times = c05.default_time_grid(50);
        let probs = model_populations(FitModel::Coherent, 0.55).unwrap();
        let total: f64 = probs.iter().sum();
        let pv = PopulationVector::new(probs, 1.0 - total).unwrap();
        let t05 = bsb_signal(&pv, &c05, &times).unwrap();
        let t07 = bsb_signal(&pv, &c07, &times).unwrap();
        assert_eq!(t05.p_down, t07.p_down);
        let f05 = fit_model_free(&t05, &c05, 8).unwrap();
        let f07 = fit_model_free(&t07, &c07, 8).unwrap();
        let p05 = &f05.populations.as_ref().unwrap().probs;
        let p07 = &f07.populations.as_ref().unwrap().probs;
        for n in 0..p05.len() {
            assert_abs_diff_eq!(p05[n], p07[n], epsilon = 1e-12);
        }
    }

    #[test]
    fn rabi_fit_exact_model() {
        let omega = 2.0 * std::f64::consts::PI * 1000.0;
        let times: Vec<f64> = (0..60).map(|i| i as f64 * 4e-3 / 60.0).collect();
        let ys: Vec<f64> = times.iter().map(|&t| (omega * t).cos().powi(2)).collect();
        let trace = BsbTrace::new(times, ys, 0).unwrap();
        let fit = fit_rabi(&trace).unwrap();
        let got = fit.params["omega_rad_s"];
        assert!(
            (got - omega).abs() / omega < 1e-3,
            "Ω = {got} vs {omega}"
        );
    }

    #[test]
    fn rabi_fit_needs_enough_points() {
        let times: Vec<f64> = (0..8).map(|i| i as f64 * 1e-4).collect();
        let ys = vec![0.5; 8];
        let trace = BsbTrace::new(times, ys, 0).unwrap();
        assert!(fit_rabi(&trace).is_err());
    }

    #[test]
    fn rabi_fit_rejects_flat_trace() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 1e-4).collect();
        let ys = vec![0.5; 50];
        let trace = BsbTrace::new(times, ys, 0).unwrap();
        assert!(fit_rabi(&trace).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join("squeeze_amp_trace_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.csv");
        let p = PopulationVector::new(vec![1.0], 0.0).unwrap();
        let c = cal();
        let trace = bsb_signal(&p, &c, &c.default_time_grid(10)).unwrap();
        write_trace_csv(&trace, &path).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.len(), trace.len());
        for (a, b) in trace.p_down.iter().zip(back.p_down.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-11);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn trace_validation() {
        assert!(BsbTrace::new(vec![0.0, 0.0], vec![1.0, 0.5], 0).is_err());
        assert!(BsbTrace::new(vec![0.0], vec![1.5], 0).is_err());
        assert!(BsbTrace::new(vec![], vec![], 0).is_err());
    }
}
