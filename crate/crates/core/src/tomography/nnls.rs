//! Non-negative least squares (Lawson–Hanson active set).
//!
//! Minimizes ‖Ax − b‖₂ subject to x ≥ 0. The simplex-constrained
//! model-free fit appends a heavily weighted Σx = 1 row before calling
//! this.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub fn nnls(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, n) = a.dim();
    if b.len() != m || m == 0 || n == 0 {
        return Err(Error::invalid("nnls dimension mismatch"));
    }
    let mut x = Array1::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-12 * scale.max(1.0) * (m as f64).sqrt();

    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        // dual w = Aᵀ(b − Ax)
        let resid = b - &a.dot(&x);
        let w = a.t().dot(&resid);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol {
                if best.map_or(true, |(_, bw)| w[j] > bw) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((j_star, _)) = best else {
            return Ok(x); // KKT satisfied
        };
        passive[j_star] = true;

        // inner loop: restrict to passive set, back off along the
        // segment to keep feasibility
        for _ in 0..max_outer {
            let z = ls_on_passive(a, b, &passive)?;
            let min_passive = passive
                .iter()
                .enumerate()
                .filter(|(_, &p)| p)
                .map(|(j, _)| z[j])
                .fold(f64::INFINITY, f64::min);
            if min_passive > tol.min(1e-14) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= tol.min(1e-14) {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for j in 0..n {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                    if x[j] <= tol.min(1e-14) {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Least squares over the passive columns via normal equations with
/// a ridge of machine-precision scale; the active-set problems here are
/// small and well conditioned after the rank gate upstream.
fn ls_on_passive(a: &Array2<f64>, b: &Array1<f64>, passive: &[bool]) -> Result<Array1<f64>> {
    let n = passive.len();
    let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
    let k = cols.len();
    let mut z = Array1::<f64>::zeros(n);
    if k == 0 {
        return Ok(z);
    }
    let mut ata = vec![vec![0.0_f64; k]; k];
    let mut atb = vec![0.0_f64; k];
    for (ci, &jc) in cols.iter().enumerate() {
        let col_i = a.column(jc);
        atb[ci] = col_i.dot(b);
        for (cj, &jd) in cols.iter().enumerate().skip(ci) {
            let v = col_i.dot(&a.column(jd));
            ata[ci][cj] = v;
            ata[cj][ci] = v;
        }
    }
    let ridge = 1e-13 * (0..k).map(|i| ata[i][i]).fold(0.0_f64, f64::max).max(1e-300);
    for i in 0..k {
        ata[i][i] += ridge;
    }
    let sol = solve_dense(&mut ata, &mut atb)?;
    for (ci, &jc) in cols.iter().enumerate() {
        z[jc] = sol[ci];
    }
    Ok(z)
}

/// Gaussian elimination with partial pivoting, in place.
pub(crate) fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular system in linear solve".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0_f64; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unconstrained_optimum_inside_cone() {
        let a = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let b = array![1.0, 2.0, 2.0];
        let x = nnls(&a, &b).unwrap();
        // least squares solution is positive, so nnls must match it
        let resid = &b - &a.dot(&x);
        let grad = a.t().dot(&resid);
        assert!(grad.iter().all(|g| g.abs() < 1e-9), "gradient {grad:?}");
    }

    #[test]
    fn negative_component_clamped_to_zero() {
        // b is anti-aligned with the second column
        let a = array![[1.0, -1.0], [0.0, 1.0]];
        let b = array![2.0, -1.0];
        let x = nnls(&a, &b).unwrap();
        assert!(x[1].abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_known_mixture() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = 40;
        let n = 6;
        let a = Array2::from_shape_fn((m, n), |_| rng.gen_range(0.0..1.0));
        let truth = array![0.3, 0.0, 0.2, 0.5, 0.0, 0.1];
        let b = a.dot(&truth);
        let x = nnls(&a, &b).unwrap();
        for j in 0..n {
            assert!((x[j] - truth[j]).abs() < 1e-8, "col {j}: {} vs {}", x[j], truth[j]);
        }
    }
}
