//! Small real-valued optimizers for the fitting pipeline: bracketed
//! scalar minimization and Levenberg–Marquardt for the decaying
//! sinusoid.

use crate::error::{Error, Result};

/// Coarse grid scan over [lo, hi] followed by golden-section refinement
/// around the best cell. Returns (x_min, f(x_min), at_boundary).
pub fn grid_then_golden(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n_grid: usize,
    tol: f64,
) -> Result<(f64, f64, bool)> {
    if !(hi > lo) || n_grid < 4 {
        return Err(Error::invalid("bad bracket for scalar minimization"));
    }
    let step = (hi - lo) / (n_grid as f64 - 1.0);
    let mut best_i = 0usize;
    let mut best_v = f64::INFINITY;
    for i in 0..n_grid {
        let v = f(lo + step * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + step * best_i.saturating_sub(1) as f64;
    let b = (lo + step * (best_i + 1) as f64).min(hi);
    let (x, v) = golden_section(f, a, b, tol)?;
    let edge = 2.0 * tol.max(step * 1e-6);
    let at_boundary = (x - lo).abs() < edge || (hi - x).abs() < edge;
    Ok((x, v, at_boundary))
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)))
}

/// Levenberg–Marquardt with analytic Jacobian supplied by the caller.
/// `model` fills residuals r_i(x); `jacobian` fills J[i][p] = ∂r_i/∂x_p.
pub struct LmProblem<'a> {
    pub residuals: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub jacobian: &'a dyn Fn(&[f64]) -> Vec<Vec<f64>>,
}

pub struct LmSolution {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn levenberg_marquardt(
    problem: &LmProblem,
    x0: &[f64],
    max_iter: usize,
) -> Result<LmSolution> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = (problem.residuals)(&x);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let j = (problem.jacobian)(&x);
        // normal equations JᵀJ + λ·diag(JᵀJ)
        let mut jtj = vec![vec![0.0_f64; n]; n];
        let mut jtr = vec![0.0_f64; n];
        for (row, ri) in j.iter().zip(r.iter()) {
            for p in 0..n {
                jtr[p] += row[p] * ri;
                for q in p..n {
                    jtj[p][q] += row[p] * row[q];
                }
            }
        }
        for p in 0..n {
            for q in 0..p {
                jtj[p][q] = jtj[q][p];
            }
        }

        let mut improved = false;
        for _ in 0..24 {
            let mut lhs = jtj.clone();
            for p in 0..n {
                lhs[p][p] += lambda * jtj[p][p].max(1e-12);
            }
            let mut rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Ok(step) = super::nnls::solve_dense(&mut lhs, &mut rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            let trial_r = (problem.residuals)(&trial);
            let trial_cost: f64 = trial_r.iter().map(|v| v * v).sum();
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                x = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 || cost < 1e-28 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if converged {
            break;
        }
        if !improved {
            // stuck: accept current point as converged if the gradient
            // is tiny, otherwise report failure through `converged`
            let grad_norm: f64 = jtr.iter().map(|v| v.abs()).fold(0.0, f64::max);
            converged = grad_norm < 1e-9 * (1.0 + cost);
            break;
        }
    }
    Ok(LmSolution {
        params: x,
        cost,
        iterations,
        converged,
    })
}

/// Percentile with linear interpolation (q in [0,1]).
pub fn percentile(samples: &mut [f64], q: f64) -> f64 {
    assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (samples.len() as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        samples[lo]
    } else {
        let w = pos - lo as f64;
        samples[lo] * (1.0 - w) + samples[hi] * w
    }
}
