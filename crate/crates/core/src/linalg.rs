//! Dense complex linear algebra: matrix exponentials, Kronecker products,
//! norms, and vectorization helpers for superoperators.
//!
//! Matrix exponentials use an eigendecomposition for Hermitian and
//! anti-Hermitian generators (all closed-system generators here) and
//! scaling-and-squaring with a Padé(13) approximant (Higham 2005) for
//! general matrices such as Lindbladians.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, ONE)
}

pub fn all_finite(a: &Array2<C64>) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest entry magnitude.
pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// ‖a − b‖_max over all entries.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()))
}

/// ‖a − b‖_max restricted to the leading `rows` × `rows` block.
pub fn guarded_max_diff(a: &Array2<C64>, b: &Array2<C64>, rows: usize) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut m = 0.0_f64;
    for i in 0..rows.min(a.nrows()) {
        for j in 0..rows.min(a.ncols()) {
            m = m.max((a[[i, j]] - b[[i, j]]).norm());
        }
    }
    m
}

/// Induced 1-norm (max absolute column sum), used for Padé scaling.
pub fn one_norm(a: &Array2<C64>) -> f64 {
    let mut m = 0.0_f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|z| z.norm()).sum();
        m = m.max(s);
    }
    m
}

pub fn is_hermitian(a: &Array2<C64>, tol: f64) -> bool {
    let scale = 1.0 + max_abs(a);
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            if (a[[i, j]] - a[[j, i]].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn is_anti_hermitian(a: &Array2<C64>, tol: f64) -> bool {
    let scale = 1.0 + max_abs(a);
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            if (a[[i, j]] + a[[j, i]].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Kronecker product, row-major blocks: (a ⊗ b)[i·p+k, j·q+l] = a[i,j]·b[k,l].
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    let mut out = Array2::zeros((m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..p {
                for l in 0..q {
                    out[[i * p + k, j * q + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Eigendecomposition of a Hermitian matrix (ascending eigenvalues),
/// returned so that a = V·diag(w)·V†.
///
/// LAPACK sees row-major input as its transpose, which for Hermitian
/// matrices is the conjugate problem; depending on the backend the
/// eigenvectors may come back conjugated. A probe-vector residual picks
/// the orientation that actually reconstructs `a`.
pub fn eigh(a: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (w, v) = a
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Numerical(format!("eigh failed: {e}")))?;
    let n = a.nrows();
    let probe = Array1::from_shape_fn(n, |i| {
        C64::new((0.7391 * i as f64).sin() + 0.3, (1.137 * i as f64).cos())
    });
    let target = a.dot(&probe);
    let residual = |vv: &Array2<C64>| -> f64 {
        let coeff = dagger(vv).dot(&probe);
        let scaled = Array1::from_iter(coeff.iter().zip(w.iter()).map(|(z, &wi)| z * wi));
        let rec = vv.dot(&scaled);
        rec.iter()
            .zip(target.iter())
            .map(|(x, y)| (x - y).norm())
            .sum()
    };
    let vc = v.mapv(|z| z.conj());
    if residual(&vc) < residual(&v) {
        Ok((w, vc))
    } else {
        Ok((w, v))
    }
}

/// exp(A) for A = V diag(w) V† with `f` applied to the Hermitian
/// eigenvalues: exp(c·H) uses f(w) = exp(c·w).
fn exp_via_eigh(h: &Array2<C64>, f: impl Fn(f64) -> C64) -> Result<Array2<C64>> {
    let (w, v) = eigh(h)?;
    let fw: Array1<C64> = w.mapv(f);
    // V · diag(fw) · V†
    let mut scaled = v.clone();
    for (j, col) in scaled.columns_mut().into_iter().enumerate() {
        let fj = fw[j];
        for z in col {
            *z *= fj;
        }
    }
    Ok(scaled.dot(&dagger(&v)))
}

/// Matrix exponential. Dispatches on structure: Hermitian and
/// anti-Hermitian inputs go through an eigendecomposition, everything
/// else through Padé scaling-and-squaring.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("expm requires a square matrix"));
    }
    if !all_finite(a) {
        return Err(Error::invalid("expm input contains NaN/Inf entries"));
    }
    if is_diagonal(a) {
        let n = a.nrows();
        let mut out = Array2::zeros((n, n));
        for k in 0..n {
            out[[k, k]] = a[[k, k]].exp();
        }
        return Ok(out);
    }
    let tol = 1e-13;
    if is_hermitian(a, tol) {
        return exp_via_eigh(a, |w| C64::new(w.exp(), 0.0));
    }
    if is_anti_hermitian(a, tol) {
        // A = -i·H with H = i·A Hermitian; exp(A) = V e^{-i w} V†.
        let h = a.mapv(|z| I * z);
        return exp_via_eigh(&h, |w| (-I * w).exp());
    }
    Ok(expm_pade(a))
}

fn is_diagonal(a: &Array2<C64>) -> bool {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[[i, j]] != ZERO {
                return false;
            }
        }
    }
    true
}

/// Scaling-and-squaring Padé(13) matrix exponential (Higham 2005).
/// Exposed separately so the eigendecomposition route can be validated
/// against it.
pub fn expm_pade(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    const THETA_13: f64 = 5.371920351148152;
    #[rustfmt::skip]
    const B: [f64; 14] = [
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ];

    let norm = one_norm(a);
    let s: u32 = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let a1 = a.mapv(|z| z / C64::new((1u64 << s) as f64, 0.0));

    let eye = identity(n);
    let a2 = a1.dot(&a1);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let w1 = &a6 * c(B[13]) + &a4 * c(B[11]) + &a2 * c(B[9]);
    let w2 = &a6 * c(B[7]) + &a4 * c(B[5]) + &a2 * c(B[3]) + &eye * c(B[1]);
    let u = a1.dot(&(a6.dot(&w1) + &w2));
    let z1 = &a6 * c(B[12]) + &a4 * c(B[10]) + &a2 * c(B[8]);
    let v = a6.dot(&z1) + &a6 * c(B[6]) + &a4 * c(B[4]) + &a2 * c(B[2]) + &eye * c(B[0]);

    // (V − U)^{-1} (V + U); V − U is well conditioned after scaling.
    let num = &v + &u;
    let den = &v - &u;
    let mut f = lu_solve_matrix(&den, &num)
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        f = f.dot(&f);
    }
    f
}

/// Solve A·X = B by blocked LU with partial pivoting. Heap-only and
/// GEMM-backed for the trailing updates (the LAPACK wrappers in the
/// linalg backend overflow small thread stacks at dimensions ≥ ~700).
pub fn lu_solve_matrix(a: &Array2<C64>, b: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::invalid("lu_solve_matrix dimension mismatch"));
    }
    const NB: usize = 48;
    let mut lu = a.clone();
    let mut x = b.clone();

    let mut k = 0usize;
    while k < n {
        let kb = NB.min(n - k);
        // factor the panel lu[k.., k..k+kb] unblocked, applying the row
        // swaps across the whole of lu and x
        for col in k..k + kb {
            let mut p = col;
            let mut pmax = lu[[col, col]].norm();
            for i in col + 1..n {
                let v = lu[[i, col]].norm();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax < 1e-300 {
                return Err(Error::Numerical("singular matrix in LU solve".into()));
            }
            if p != col {
                for j in 0..n {
                    lu.swap([col, j], [p, j]);
                }
                for j in 0..x.ncols() {
                    x.swap([col, j], [p, j]);
                }
            }
            let inv_piv = ONE / lu[[col, col]];
            for i in col + 1..n {
                let factor = lu[[i, col]] * inv_piv;
                lu[[i, col]] = factor;
                if factor != ZERO {
                    for j in col + 1..k + kb {
                        let t = lu[[col, j]];
                        lu[[i, j]] -= factor * t;
                    }
                }
            }
        }
        let end = k + kb;
        if end < n {
            // U block row: solve unit-lower panel against lu[k..end, end..]
            for col in k..end {
                for i in col + 1..end {
                    let factor = lu[[i, col]];
                    if factor != ZERO {
                        for j in end..n {
                            let t = lu[[col, j]];
                            lu[[i, j]] -= factor * t;
                        }
                    }
                }
            }
            // trailing update via GEMM: A22 -= L21 · U12
            let l21 = lu.slice(ndarray::s![end..n, k..end]).to_owned();
            let u12 = lu.slice(ndarray::s![k..end, end..n]).to_owned();
            let update = l21.dot(&u12);
            let mut a22 = lu.slice_mut(ndarray::s![end..n, end..n]);
            a22 -= &update;
        }
        k = end;
    }

    // forward substitution (unit lower), blocked
    let mut k = 0usize;
    while k < n {
        let kb = NB.min(n - k);
        let end = k + kb;
        for col in k..end {
            for i in col + 1..end {
                let factor = lu[[i, col]];
                if factor != ZERO {
                    for j in 0..x.ncols() {
                        let t = x[[col, j]];
                        x[[i, j]] -= factor * t;
                    }
                }
            }
        }
        if end < n {
            let l21 = lu.slice(ndarray::s![end..n, k..end]).to_owned();
            let xk = x.slice(ndarray::s![k..end, ..]).to_owned();
            let update = l21.dot(&xk);
            let mut xb = x.slice_mut(ndarray::s![end..n, ..]);
            xb -= &update;
        }
        k = end;
    }

    // back substitution (upper), blocked
    let mut k = n;
    while k > 0 {
        let kb = NB.min(k);
        let start = k - kb;
        for col in (start..k).rev() {
            let inv_piv = ONE / lu[[col, col]];
            for j in 0..x.ncols() {
                x[[col, j]] *= inv_piv;
            }
            for i in start..col {
                let factor = lu[[i, col]];
                if factor != ZERO {
                    for j in 0..x.ncols() {
                        let t = x[[col, j]];
                        x[[i, j]] -= factor * t;
                    }
                }
            }
        }
        if start > 0 {
            let u01 = lu.slice(ndarray::s![0..start, start..k]).to_owned();
            let xk = x.slice(ndarray::s![start..k, ..]).to_owned();
            let update = u01.dot(&xk);
            let mut xb = x.slice_mut(ndarray::s![0..start, ..]);
            xb -= &update;
        }
        k = start;
    }
    Ok(x)
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Scale `a` by the global phase that makes it best match `b` at b's
/// largest-magnitude entry, then return ‖a·e^{iφ} − b‖_max.
pub fn max_diff_up_to_phase(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let phase = relative_phase(a, b);
    let rotated = a.mapv(|z| z * phase);
    max_abs_diff(&rotated, b)
}

/// Same as [`max_diff_up_to_phase`] restricted to the leading block.
pub fn guarded_max_diff_up_to_phase(a: &Array2<C64>, b: &Array2<C64>, rows: usize) -> f64 {
    let phase = relative_phase(a, b);
    let rotated = a.mapv(|z| z * phase);
    guarded_max_diff(&rotated, b, rows)
}

fn relative_phase(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    let mut best = (0usize, 0usize);
    let mut mag = -1.0_f64;
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if b[[i, j]].norm() > mag {
                mag = b[[i, j]].norm();
                best = (i, j);
            }
        }
    }
    let (i, j) = best;
    if a[[i, j]].norm() < 1e-300 {
        return ONE;
    }
    let ratio = b[[i, j]] / a[[i, j]];
    let r = ratio.norm();
    if r < 1e-300 {
        ONE
    } else {
        ratio / r
    }
}

/// Row-major vectorization: vec(ρ)[r·d + c] = ρ[r, c].
pub fn vec_rho(rho: &Array2<C64>) -> Array1<C64> {
    Array1::from_iter(rho.iter().cloned())
}

pub fn unvec_rho(v: &Array1<C64>, d: usize) -> Array2<C64> {
    Array2::from_shape_vec((d, d), v.to_vec()).expect("vector length is d²")
}

/// Superoperator for ρ ↦ AρB under row-major vectorization: A ⊗ Bᵀ.
pub fn sandwich_superop(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    kron(a, &b.t().to_owned())
}

/// Left multiplication ρ ↦ Aρ.
pub fn spre(a: &Array2<C64>) -> Array2<C64> {
    let d = a.nrows();
    kron(a, &identity(d))
}

/// Right multiplication ρ ↦ ρB.
pub fn spost(b: &Array2<C64>) -> Array2<C64> {
    let d = b.nrows();
    kron(&identity(d), &b.t().to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_matrix(n: usize, seed: u64) -> Array2<C64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = Array2::<C64>::zeros((5, 5));
        let e = expm(&z).unwrap();
        assert!(max_abs_diff(&e, &identity(5)) < 1e-15);
    }

    #[test]
    fn expm_diagonal_phases() {
        // exp(iπ·diag(0,1,2,…)) = diag(1,−1,1,…)
        let n = 6;
        let mut a = Array2::<C64>::zeros((n, n));
        for k in 0..n {
            a[[k, k]] = I * std::f64::consts::PI * k as f64;
        }
        let e = expm(&a).unwrap();
        for k in 0..n {
            let expect = if k % 2 == 0 { ONE } else { -ONE };
            assert!((e[[k, k]] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn expm_rejects_nan() {
        let mut a = Array2::<C64>::zeros((3, 3));
        a[[1, 1]] = C64::new(f64::NAN, 0.0);
        assert!(matches!(expm(&a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pade_matches_eig_route_on_antihermitian() {
        for seed in 0..5 {
            let g = random_matrix(24, seed);
            let anti = (&g - &dagger(&g)).mapv(|z| z * C64::new(2.0, 0.0));
            let via_eig = expm(&anti).unwrap();
            let via_pade = expm_pade(&anti);
            let scale = max_abs(&via_eig).max(1.0);
            assert!(
                max_abs_diff(&via_eig, &via_pade) / scale < 1e-12,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn pade_matches_eig_route_on_large_norm_hermitian() {
        // relative accuracy up to generator norms of ~50
        let g = random_matrix(16, 42);
        let h = (&g + &dagger(&g)).mapv(|z| z * C64::new(6.0, 0.0));
        assert!(one_norm(&h) > 50.0);
        let via_eig = expm(&h).unwrap();
        let via_pade = expm_pade(&h);
        let scale = max_abs(&via_eig);
        assert!(max_abs_diff(&via_eig, &via_pade) / scale < 1e-11);
    }

    #[test]
    fn expm_general_matches_series_small() {
        let a = random_matrix(8, 7).mapv(|z| z * C64::new(0.05, 0.0));
        let e = expm(&a).unwrap();
        // Taylor series converges fast at this norm.
        let mut series = identity(8);
        let mut term = identity(8);
        for k in 1..30 {
            term = term.dot(&a).mapv(|z| z / C64::new(k as f64, 0.0));
            series = series + &term;
        }
        assert!(max_abs_diff(&e, &series) < 1e-13);
    }

    #[test]
    fn kron_2x2_blocks() {
        let a = array![[c(1.0), c(2.0)], [c(0.0), c(1.0)]];
        let b = array![[c(0.0), I], [-I, c(0.0)]];
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (4, 4));
        assert_eq!(k[[0, 1]], I);
        assert_eq!(k[[0, 3]], C64::new(0.0, 2.0));
        assert_eq!(k[[3, 0]], ZERO);
        assert_eq!(k[[3, 2]], -I);
    }

    #[test]
    fn vectorization_roundtrip_and_sandwich() {
        let rho = random_matrix(6, 3);
        let a = random_matrix(6, 4);
        let b = random_matrix(6, 5);
        let direct = a.dot(&rho).dot(&b);
        let via_super = unvec_rho(&sandwich_superop(&a, &b).dot(&vec_rho(&rho)), 6);
        assert!(max_abs_diff(&direct, &via_super) < 1e-12);
        assert!(max_abs_diff(&unvec_rho(&vec_rho(&rho), 6), &rho) < 1e-15);
    }

    #[test]
    fn phase_alignment_ignores_global_phase() {
        let u = expm(&(random_matrix(5, 9) * C64::new(0.3, 0.0))).unwrap();
        let rotated = u.mapv(|z| z * C64::from_polar(1.0, 1.234));
        assert!(max_diff_up_to_phase(&rotated, &u) < 1e-12);
    }

    #[test]
    fn lu_solve_reproduces_rhs() {
        for n in [3usize, 17, 100] {
            let a = random_matrix(n, n as u64) + Array2::from_diag_elem(n, c(4.0));
            let b = random_matrix(n, 1000 + n as u64);
            let x = lu_solve_matrix(&a, &b).unwrap();
            let resid = max_abs_diff(&a.dot(&x), &b);
            assert!(resid < 1e-10, "n={n}: residual {resid:.3e}");
        }
    }

    #[test]
    fn lu_solve_rejects_singular() {
        let a = Array2::<C64>::zeros((4, 4));
        let b = identity(4);
        assert!(lu_solve_matrix(&a, &b).is_err());
    }
}
