//! Dense linear algebra for seminorm least-squares problems.
//!
//! The weighting distribution of a seminorm LSTD system may put zero mass
//! on some states, so the Gram matrix `Z = FᵀDF` is only positive
//! *semi*definite and every solve goes through generalized inverses:
//!
//! * [`pseudoinverse`] — Moore-Penrose pseudoinverse via SVD,
//! * [`psd_eig`] — spectral decomposition of a symmetric PSD matrix,
//! * [`psd_pinv_sqrt`] — the PSD square root `Z^{†/2}` of `Z†`,
//! * [`seminorm_ls_minimizer`] — one minimizer of `‖Xw − y‖²_{Z†}`,
//!   computed as `(Z^{†/2} X)† Z^{†/2} y`.
//!
//! All matrices are small and dense (`f64`); every operation rejects
//! non-finite entries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;
/// Dense `f64` column vector.
pub type Vector = DVector<f64>;

/// Spectral decomposition of a symmetric PSD matrix: `U diag(μ) Uᵀ`
/// with orthonormal columns in `eigenvectors` and eigenvalues sorted
/// in descending order, all clamped to be nonnegative.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub eigenvalues: Vector,
    pub eigenvectors: Matrix,
}

/// Relative rank cutoff: singular/eigen values below
/// `max(rows, cols) · σ_max · 1e-12` are treated as zero.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * 1e-12
}

fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Moore-Penrose pseudoinverse `A†` of an arbitrary real matrix.
///
/// Singular values below `rank_tol · σ_max` are treated as zero. The
/// result satisfies all four defining conditions (`AA†A = A`,
/// `A†AA† = A†`, and both products symmetric) up to numerical error.
///
/// Computed with a one-sided Jacobi SVD: it resolves small singular
/// values to high relative accuracy on the small dense matrices used
/// here, where QR-iteration SVDs can lose the rank-deficient directions.
pub fn pseudoinverse(m: &Matrix, rank_tol: f64) -> Result<Matrix> {
    ensure_finite(m, "matrix")?;
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "rank_tol must be nonnegative, got {rank_tol}"
        )));
    }
    // Orthogonalize the columns of the taller orientation.
    let transposed = m.nrows() < m.ncols();
    let mut b = if transposed { m.transpose() } else { m.clone() };
    let (p, q) = b.shape();
    let mut v = Matrix::identity(q, q);
    // Stop rotating once inner products sit at the rounding floor of the
    // dot products themselves; columns below the representable floor are
    // numerically zero and keep re-correlating with the large ones, so
    // they are skipped outright.
    let tol = p as f64 * f64::EPSILON;
    let column_floor = {
        let f = f64::EPSILON * b.norm();
        f * f
    };
    const MAX_SWEEPS: usize = 64;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for cp in 0..q {
            for cq in cp + 1..q {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..p {
                    let x = b[(r, cp)];
                    let y = b[(r, cq)];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if alpha <= column_floor
                    || beta <= column_floor
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..p {
                    let x = b[(r, cp)];
                    let y = b[(r, cq)];
                    b[(r, cp)] = c * x - s * y;
                    b[(r, cq)] = s * x + c * y;
                }
                for r in 0..q {
                    let x = v[(r, cp)];
                    let y = v[(r, cq)];
                    v[(r, cp)] = c * x - s * y;
                    v[(r, cq)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "Jacobi SVD did not converge within the sweep cap".into(),
        ));
    }
    let sigmas: Vec<f64> = (0..q).map(|j| b.column(j).norm()).collect();
    let sigma_max = sigmas.iter().cloned().fold(0.0, f64::max);
    let cutoff = (rank_tol * sigma_max).max(column_floor.sqrt());
    // A = U Σ Vᵀ with u_j = b_j / σ_j, so A† = Σ_j v_j b_jᵀ / σ_j².
    let mut pinv = Matrix::zeros(q, p);
    for j in 0..q {
        let sigma = sigmas[j];
        if sigma > cutoff && sigma > 0.0 {
            let scale = 1.0 / (sigma * sigma);
            for r in 0..q {
                let vr = v[(r, j)] * scale;
                for c in 0..p {
                    pinv[(r, c)] += vr * b[(c, j)];
                }
            }
        }
    }
    Ok(if transposed { pinv.transpose() } else { pinv })
}

/// Least-squares solution of an overdetermined full-column-rank system
/// via Householder QR.
pub fn least_squares(a: &Matrix, rhs: &Vector) -> Result<Vector> {
    if a.nrows() < a.ncols() || rhs.len() != a.nrows() {
        return Err(Error::InvalidInput(format!(
            "least squares expects a tall system, got {}x{} with rhs {}",
            a.nrows(),
            a.ncols(),
            rhs.len()
        )));
    }
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * rhs;
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("least-squares system is rank deficient".into()))
}

/// Spectral decomposition of a symmetric PSD matrix.
///
/// The input must be symmetric within `‖Z − Zᵀ‖_F ≤ 1e-10 ‖Z‖_F`.
/// Small negative eigenvalues (within `10 · n · 1e-12 · μ_max` of zero)
/// are clamped to zero; anything more negative is a hard error so that
/// upstream bugs surface instead of being silently absorbed.
pub fn psd_eig(z: &Matrix) -> Result<EigPair> {
    ensure_finite(z, "matrix")?;
    if z.nrows() != z.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            z.nrows(),
            z.ncols()
        )));
    }
    let n = z.nrows();
    let asym = (z - z.transpose()).norm();
    if asym > 1e-10 * z.norm() {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric: ‖Z − Zᵀ‖ = {asym:e}"
        )));
    }
    // Exact symmetry for the eigensolver; floating-point sums upstream
    // may break it at the last ulp.
    let zs = (z + z.transpose()) * 0.5;
    let eig = zs.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let mu_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, |m, x| m.max(x.abs()));
    let tol = default_rank_tol(n, n) * mu_max;

    let mut eigenvalues = Vector::zeros(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut mu = eig.eigenvalues[src];
        if mu < 0.0 {
            if mu < -10.0 * tol {
                return Err(Error::Numerical(format!(
                    "matrix is not positive semidefinite: eigenvalue {mu:e}"
                )));
            }
            mu = 0.0;
        }
        eigenvalues[dst] = mu;
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigPair {
        eigenvalues,
        eigenvectors,
    })
}

/// `Z^{†/2}`: the symmetric PSD square root of the pseudoinverse of a
/// symmetric PSD matrix, `U diag(μ^{-1/2} on nonzero μ, else 0) Uᵀ`.
pub fn psd_pinv_sqrt(z: &Matrix) -> Result<Matrix> {
    let pair = psd_eig(z)?;
    let n = z.nrows();
    let mu_max = pair.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = default_rank_tol(n, n) * mu_max;
    let mut d = Vector::zeros(n);
    for i in 0..n {
        let mu = pair.eigenvalues[i];
        if mu > cutoff {
            d[i] = 1.0 / mu.sqrt();
        }
    }
    let u = &pair.eigenvectors;
    let s = u * Matrix::from_diagonal(&d) * u.transpose();
    // The construction is symmetric up to rounding; make it exact.
    Ok((&s + s.transpose()) * 0.5)
}

/// One minimizer of `‖Xw − y‖²_{Z†}` for symmetric PSD `Z`:
/// `w̃ = (Z^{†/2} X)† Z^{†/2} y`.
///
/// The result satisfies the normal equation `XᵀZ†X w̃ = XᵀZ†y`. It is a
/// particular solution (the constant term of the general least-squares
/// solution family set to zero), not the minimal-seminorm one.
pub fn seminorm_ls_minimizer(x: &Matrix, z: &Matrix, y: &Vector) -> Result<Vector> {
    let d = x.nrows();
    if x.ncols() != d || z.nrows() != d || z.ncols() != d || y.len() != d {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: X is {}x{}, Z is {}x{}, y has length {}",
            x.nrows(),
            x.ncols(),
            z.nrows(),
            z.ncols(),
            y.len()
        )));
    }
    ensure_finite(x, "X")?;
    ensure_finite_vec(y, "y")?;
    let s = psd_pinv_sqrt(z)?;
    let a = &s * x;
    let a_pinv = pseudoinverse(&a, default_rank_tol(a.nrows(), a.ncols()))?;
    Ok(a_pinv * (s * y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn frob_rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / (1.0 + b.norm())
    }

    /// Check the four defining pseudoinverse conditions.
    fn assert_moore_penrose(a: &Matrix, pinv: &Matrix, tol: f64) {
        let apa = a * pinv * a;
        let pap = pinv * a * pinv;
        let ap = a * pinv;
        let pa = pinv * a;
        assert!(frob_rel(&apa, a) <= tol, "AA†A != A: {:e}", frob_rel(&apa, a));
        assert!(frob_rel(&pap, pinv) <= tol, "A†AA† != A†");
        assert!(frob_rel(&ap.transpose(), &ap) <= tol, "AA† not symmetric");
        assert!(frob_rel(&pa.transpose(), &pa) <= tol, "A†A not symmetric");
    }

    #[test]
    fn pseudoinverse_diagonal_reciprocal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        let p = pseudoinverse(&m, default_rank_tol(2, 2)).unwrap();
        let expect = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]));
        assert_relative_eq!(p, expect, epsilon = 1e-12);
    }

    #[test]
    fn pseudoinverse_identity() {
        let m = Matrix::identity(3, 3);
        let p = pseudoinverse(&m, default_rank_tol(3, 3)).unwrap();
        assert_relative_eq!(p, m, epsilon = 1e-12);
    }

    #[test]
    fn pseudoinverse_rank_one_ones() {
        let m = Matrix::from_element(2, 2, 1.0);
        let p = pseudoinverse(&m, default_rank_tol(2, 2)).unwrap();
        let expect = Matrix::from_element(2, 2, 0.25);
        assert_relative_eq!(p, expect, epsilon = 1e-12);
        assert_moore_penrose(&m, &p, 1e-12);
    }

    #[test]
    fn pseudoinverse_rejects_nan() {
        let m = Matrix::from_element(2, 2, f64::NAN);
        assert!(matches!(
            pseudoinverse(&m, 1e-12),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn psd_eig_diagonal() {
        let z = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        let pair = psd_eig(&z).unwrap();
        assert_relative_eq!(pair.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(pair.eigenvalues[1], 1.0, epsilon = 1e-12);
        let rebuilt = &pair.eigenvectors
            * Matrix::from_diagonal(&pair.eigenvalues)
            * pair.eigenvectors.transpose();
        assert_relative_eq!(rebuilt, z, epsilon = 1e-10);
    }

    #[test]
    fn psd_eig_two_by_two_hand_solved() {
        // Characteristic polynomial of [[2,1],[1,2]]: (2-μ)² = 1, so μ = 3, 1
        // with eigenvectors (1,1)/√2 and (1,-1)/√2.
        let z = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let pair = psd_eig(&z).unwrap();
        assert_relative_eq!(pair.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(pair.eigenvalues[1], 1.0, epsilon = 1e-12);
        let s = 1.0 / 2.0_f64.sqrt();
        let u0 = pair.eigenvectors.column(0);
        let u1 = pair.eigenvectors.column(1);
        assert_relative_eq!((u0[0] * s + u0[1] * s).abs(), 1.0, epsilon = 1e-10);
        assert_relative_eq!((u1[0] * s - u1[1] * s).abs(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn psd_eig_zero_matrix() {
        let z = Matrix::zeros(2, 2);
        let pair = psd_eig(&z).unwrap();
        assert_eq!(pair.eigenvalues.as_slice(), &[0.0, 0.0]);
        let utu = pair.eigenvectors.transpose() * &pair.eigenvectors;
        assert_relative_eq!(utu, Matrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn psd_eig_rejects_asymmetric() {
        let z = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psd_eig(&z), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn psd_eig_rejects_indefinite() {
        let z = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(psd_eig(&z), Err(Error::Numerical(_))));
    }

    #[test]
    fn pinv_sqrt_diagonal() {
        let z = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 0.0]));
        let s = psd_pinv_sqrt(&z).unwrap();
        let expect = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]));
        assert_relative_eq!(s, expect, epsilon = 1e-12);
    }

    #[test]
    fn pinv_sqrt_identity() {
        let z = Matrix::identity(3, 3);
        assert_relative_eq!(psd_pinv_sqrt(&z).unwrap(), z, epsilon = 1e-12);
    }

    #[test]
    fn pinv_sqrt_matches_spectral_form() {
        let z = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = psd_pinv_sqrt(&z).unwrap();
        let pair = psd_eig(&z).unwrap();
        let d = Vector::from_vec(vec![
            1.0 / pair.eigenvalues[0].sqrt(),
            1.0 / pair.eigenvalues[1].sqrt(),
        ]);
        let expect =
            &pair.eigenvectors * Matrix::from_diagonal(&d) * pair.eigenvectors.transpose();
        assert_relative_eq!(s, expect, epsilon = 1e-12);
    }

    #[test]
    fn seminorm_minimizer_identity_weighting() {
        // Invertible X with Z = I reduces to a plain solve.
        let x = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let z = Matrix::identity(2, 2);
        let y = Vector::from_vec(vec![1.0, 3.0]);
        let w = seminorm_ls_minimizer(&x, &z, &y).unwrap();
        let direct = x.clone().lu().solve(&y).unwrap();
        assert_relative_eq!(w, direct, epsilon = 1e-10);
    }

    #[test]
    fn seminorm_minimizer_two_state_chain() {
        // Hand computation: the rank-one system of a symmetric two-state
        // chain has minimizer (0.5, -0.5).
        let x = Matrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        let z = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.5]));
        let y = Vector::from_vec(vec![0.25, -0.25]);
        let w = seminorm_ls_minimizer(&x, &z, &y).unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(w[1], -0.5, epsilon = 1e-10);
    }

    #[test]
    fn seminorm_minimizer_zero_x() {
        let x = Matrix::zeros(2, 2);
        let z = Matrix::identity(2, 2);
        let y = Vector::from_vec(vec![1.0, 2.0]);
        let w = seminorm_ls_minimizer(&x, &z, &y).unwrap();
        assert_relative_eq!(w.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn seminorm_minimizer_dimension_mismatch() {
        let x = Matrix::zeros(2, 2);
        let z = Matrix::identity(3, 3);
        let y = Vector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            seminorm_ls_minimizer(&x, &z, &y),
            Err(Error::InvalidInput(_))
        ));
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Matrix {
        let g = random_matrix(rng, rank.max(1), n);
        g.transpose() * g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_moore_penrose_conditions(seed in 0u64..1000, rows in 1usize..=8, cols in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, rows, cols);
            let p = pseudoinverse(&m, default_rank_tol(rows, cols)).unwrap();
            let tol = 1e-9;
            let apa = &m * &p * &m;
            prop_assert!(frob_rel(&apa, &m) <= tol);
            let pap = &p * &m * &p;
            prop_assert!(frob_rel(&pap, &p) <= tol);
            let ap = &m * &p;
            prop_assert!(frob_rel(&ap.transpose(), &ap) <= tol);
            let pa = &p * &m;
            prop_assert!(frob_rel(&pa.transpose(), &pa) <= tol);
        }

        #[test]
        fn prop_pinv_sqrt_squares_to_pinv(seed in 0u64..1000, n in 1usize..=8, rank in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_psd(&mut rng, n, rank.min(n));
            let s = psd_pinv_sqrt(&z).unwrap();
            prop_assert!(frob_rel(&s.transpose(), &s) <= 1e-12);
            let z_pinv = pseudoinverse(&z, default_rank_tol(n, n)).unwrap();
            prop_assert!(frob_rel(&(&s * &s), &z_pinv) <= 1e-9);
        }

        #[test]
        fn prop_normal_equation_residual(seed in 0u64..1000, n in 1usize..=6, rank in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, n, n);
            let z = random_psd(&mut rng, n, rank.min(n));
            let y = Vector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let w = seminorm_ls_minimizer(&x, &z, &y).unwrap();
            let z_pinv = pseudoinverse(&z, default_rank_tol(n, n)).unwrap();
            let lhs = x.transpose() * &z_pinv * &x * &w;
            let rhs = x.transpose() * &z_pinv * &y;
            prop_assert!((lhs - &rhs).norm() <= 1e-8 * (rhs.norm() + 1.0));
        }

        #[test]
        fn prop_pd_invertible_reduces_to_direct_solve(seed in 0u64..1000, n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Shifted Gram matrix keeps Z positive definite.
            let z = random_psd(&mut rng, n, n) + Matrix::identity(n, n);
            let x = random_matrix(&mut rng, n, n) + Matrix::identity(n, n) * 3.0;
            let y = Vector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let w = seminorm_ls_minimizer(&x, &z, &y).unwrap();
            if let Some(direct) = x.clone().lu().solve(&y) {
                prop_assert!((&w - &direct).norm() <= 1e-8 * (direct.norm() + 1.0));
            }
        }

        #[test]
        fn prop_objective_optimality(seed in 0u64..1000, n in 1usize..=6, rank in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, n, n);
            let z = random_psd(&mut rng, n, rank.min(n));
            let y = Vector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let w = seminorm_ls_minimizer(&x, &z, &y).unwrap();
            let z_pinv = pseudoinverse(&z, default_rank_tol(n, n)).unwrap();
            let objective = |w: &Vector| {
                let r = &x * w - &y;
                (r.transpose() * &z_pinv * &r)[(0, 0)]
            };
            let best = objective(&w);
            for _ in 0..8 {
                let delta = Vector::from_fn(n, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * 0.3);
                prop_assert!(objective(&(&w + delta)) >= best - 1e-10);
            }
        }
    }
}
