//! Dense symmetric positive (semi)definite solves and their adjoints.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Systems up to this order are factorized directly; larger ones use CG.
pub const DIRECT_SOLVE_MAX_DIM: usize = 512;

const SYMMETRY_TOL: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolveReport {
    pub solution: DVector<f64>,
    /// CG iterations used; 0 when the direct factorization succeeded.
    pub iterations: usize,
    /// `‖(L+λI)p − b‖₂ / ‖b‖₂`.
    pub final_residual: f64,
    pub regularization_used: f64,
}

/// `λ = rel · trace(L) / m`, the ridge the solver adds to `L`.
pub fn scaled_regularization(l: &DMatrix<f64>, rel: f64) -> f64 {
    let m = l.nrows().max(1) as f64;
    rel * l.trace().abs() / m
}

fn check_symmetric(l: &DMatrix<f64>) -> Result<()> {
    let scale = l.amax();
    let mut asym = 0.0f64;
    for j in 0..l.ncols() {
        for i in 0..j {
            asym = asym.max((l[(i, j)] - l[(j, i)]).abs());
        }
    }
    let rel = if scale > 0.0 { asym / scale } else { asym };
    if rel > SYMMETRY_TOL || !rel.is_finite() {
        return Err(Error::NotSymmetric { asymmetry: rel });
    }
    Ok(())
}

fn check_shapes(l: &DMatrix<f64>, b: &DVector<f64>, reg: f64) -> Result<()> {
    if l.nrows() != l.ncols() {
        return Err(Error::DimensionMismatch {
            what: "L columns",
            expected: l.nrows(),
            found: l.ncols(),
        });
    }
    if b.len() != l.nrows() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: l.nrows(),
            found: b.len(),
        });
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::InvalidConfig("regularization must be non-negative".into()));
    }
    Ok(())
}

fn relative_residual(l: &DMatrix<f64>, p: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let bn = b.norm();
    let r = (l * p - b).norm();
    if bn > 0.0 {
        r / bn
    } else {
        r
    }
}

fn with_ridge(l: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let mut shifted = l.clone();
    if reg > 0.0 {
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += reg;
        }
    }
    shifted
}

fn direct(l: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, f64)> {
    let chol = Cholesky::new(l.clone())?;
    let mut p = chol.solve(b);
    let mut res = relative_residual(l, &p, b);
    for _ in 0..REFINEMENT_STEPS {
        if res <= tol {
            break;
        }
        let r = b - l * &p;
        p += chol.solve(&r);
        res = relative_residual(l, &p, b);
    }
    p.iter().all(|v| v.is_finite()).then_some((p, res))
}

/// Jacobi-preconditioned conjugate gradient. Returns the iterate, the
/// iteration count and the achieved relative residual.
fn conjugate_gradient(l: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, usize, f64) {
    let n = b.len();
    let bn = b.norm();
    let mut x = DVector::zeros(n);
    if bn == 0.0 {
        return (x, 0, 0.0);
    }
    let inv_diag = DVector::from_fn(n, |i, _| {
        let d = l[(i, i)];
        if d > 0.0 {
            1.0 / d
        } else {
            1.0
        }
    });
    let mut r = b.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    for k in 0..max_iter {
        let ld = l * &d;
        let dld = d.dot(&ld);
        if !(dld > 0.0) {
            let res = relative_residual(l, &x, b);
            return (x, k, res);
        }
        let alpha = rz / dld;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &ld, 1.0);
        if r.norm() <= tol * bn {
            let res = relative_residual(l, &x, b);
            return (x, k + 1, res);
        }
        z = r.component_mul(&inv_diag);
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        d = &z + beta * &d;
    }
    let res = relative_residual(l, &x, b);
    (x, max_iter, res)
}

/// Solves `(L + λI) p = b` for symmetric positive semidefinite `L`.
pub fn spd_solve(l: &DMatrix<f64>, b: &DVector<f64>, tol: f64, reg: f64) -> Result<SpdSolveReport> {
    check_shapes(l, b, reg)?;
    check_symmetric(l)?;
    let shifted = with_ridge(l, reg);
    let m = b.len();
    let max_cg = 10 * m.max(1);

    let report = |solution, iterations, final_residual| SpdSolveReport {
        solution,
        iterations,
        final_residual,
        regularization_used: reg,
    };

    // A successful factorization is kept even when ill-conditioning stops it
    // from reaching `tol`; only a failed factorization plus stalled CG is a
    // breakdown.
    let (factored, cg) = if m <= DIRECT_SOLVE_MAX_DIM {
        let factored = direct(&shifted, b, tol);
        if let Some((p, res)) = &factored {
            if *res <= tol {
                return Ok(report(p.clone(), 0, *res));
            }
        }
        (factored, conjugate_gradient(&shifted, b, tol, max_cg))
    } else {
        let cg = conjugate_gradient(&shifted, b, tol, max_cg);
        if cg.2 <= tol {
            return Ok(report(cg.0, cg.1.max(1), cg.2));
        }
        (direct(&shifted, b, tol), cg)
    };
    let (p, it, res) = cg;
    match factored {
        _ if res <= tol => Ok(report(p, it.max(1), res)),
        Some((q, qres)) if qres <= res => Ok(report(q, 0, qres)),
        Some(_) if res.is_finite() => Ok(report(p, it.max(1), res)),
        Some((q, qres)) => Ok(report(q, 0, qres)),
        None => Err(Error::Breakdown {
            residual: res,
            regularization: reg,
        }),
    }
}

/// Reverse-mode rule for `p = (L + λI)⁻¹ b`.
///
/// Returns `(grad_L, grad_b)` where `grad_b = (L + λI)⁻ᵀ grad_p` and
/// `grad_L = −grad_b pᵀ`. `λ` is treated as a constant.
pub fn spd_solve_adjoint(
    l: &DMatrix<f64>,
    p: &DVector<f64>,
    grad_p: &DVector<f64>,
    tol: f64,
    reg: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if p.len() != l.nrows() {
        return Err(Error::DimensionMismatch {
            what: "primal solution",
            expected: l.nrows(),
            found: p.len(),
        });
    }
    let grad_b = spd_solve(l, grad_p, tol, reg)?.solution;
    let grad_l = -(&grad_b * p.transpose());
    Ok((grad_l, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(m, m) * 0.5
    }

    #[test]
    fn identity_system() {
        let r = spd_solve(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0]), 1e-10, 0.0).unwrap();
        assert_eq!(r.solution, DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn diagonal_system() {
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let r = spd_solve(&l, &DVector::from_vec(vec![2.0, 4.0]), 1e-10, 0.0).unwrap();
        assert!((r.solution - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn singular_rank_one_gives_minimum_norm_solution() {
        // L = [[1,1],[1,1]] has pseudoinverse L/4, so L⁺[1,1] = [0.5,0.5]
        let l = DMatrix::from_element(2, 2, 1.0);
        let r = spd_solve(&l, &DVector::from_vec(vec![1.0, 1.0]), 1e-10, 1e-8).unwrap();
        assert!((r.solution[0] - 0.5).abs() < 1e-6);
        assert!((r.solution[1] - 0.5).abs() < 1e-6);
        assert_eq!(r.regularization_used, 1e-8);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            spd_solve(&l, &DVector::from_vec(vec![1.0, 1.0]), 1e-10, 0.0),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn singular_without_ridge_breaks_down() {
        let l = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            spd_solve(&l, &DVector::from_vec(vec![1.0, -1.0]), 1e-10, 0.0),
            Err(Error::Breakdown { .. })
        ));
    }

    #[test]
    fn large_system_uses_conjugate_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DIRECT_SOLVE_MAX_DIM + 8;
        let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0) / m as f64);
        let l = &g * g.transpose() + DMatrix::identity(m, m);
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let r = spd_solve(&l, &b, 1e-10, 0.0).unwrap();
        assert!(r.iterations > 0);
        assert!(r.final_residual <= 1e-10);
    }

    #[test]
    fn adjoint_identity() {
        let (gl, gb) = spd_solve_adjoint(
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![1.0, 2.0]),
            &DVector::from_vec(vec![1.0, 0.0]),
            1e-12,
            0.0,
        )
        .unwrap();
        assert_eq!(gb, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(gl, DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, 0.0, 0.0]));
    }

    #[test]
    fn adjoint_diagonal() {
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let (gl, gb) = spd_solve_adjoint(
            &l,
            &DVector::from_vec(vec![1.0, 1.0]),
            &DVector::from_vec(vec![2.0, 4.0]),
            1e-12,
            0.0,
        )
        .unwrap();
        assert!((gb - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
        assert!((gl - DMatrix::from_element(2, 2, -1.0)).amax() < 1e-15);
    }

    #[test]
    fn adjoint_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 4;
        let l = random_spd(&mut rng, m);
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let loss = |l: &DMatrix<f64>, b: &DVector<f64>| spd_solve(l, b, 1e-14, 0.0).unwrap().solution.sum();
        let p = spd_solve(&l, &b, 1e-14, 0.0).unwrap().solution;
        let (gl, gb) = spd_solve_adjoint(&l, &p, &DVector::from_element(m, 1.0), 1e-14, 0.0).unwrap();
        let step = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for i in 0..m {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += step;
            bm[i] -= step;
            let fd = (loss(&l, &bp) - loss(&l, &bm)) / (2.0 * step);
            assert!(rel(gb[i], fd) <= 1e-5, "b[{i}]: {} vs {fd}", gb[i]);
        }
        // symmetric perturbation of an off-diagonal pair sees grad[i,j] + grad[j,i]
        for i in 0..m {
            for j in 0..m {
                let (mut lp, mut lm) = (l.clone(), l.clone());
                lp[(i, j)] += step;
                lm[(i, j)] -= step;
                if i != j {
                    lp[(j, i)] += step;
                    lm[(j, i)] -= step;
                }
                let fd = (loss(&lp, &b) - loss(&lm, &b)) / (2.0 * step);
                let an = if i == j { gl[(i, i)] } else { gl[(i, j)] + gl[(j, i)] };
                assert!(rel(an, fd) <= 1e-5, "L[{i},{j}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn adjoint_dot_product_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = rng.random_range(2..7);
            let l = random_spd(&mut rng, m);
            let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let db = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let gp = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let p = spd_solve(&l, &b, 1e-14, 0.0).unwrap().solution;
            let dp = spd_solve(&l, &db, 1e-14, 0.0).unwrap().solution;
            let (_, gb) = spd_solve_adjoint(&l, &p, &gp, 1e-14, 0.0).unwrap();
            let lhs = gp.dot(&dp);
            let rhs = gb.dot(&db);
            assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1e-12));
        }
    }

    #[test]
    fn solve_reproduces_rhs_and_ridge_shrinks_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = rng.random_range(1..9);
            let l = random_spd(&mut rng, m);
            let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let tol = 1e-10;
            let p = spd_solve(&l, &b, tol, 0.0).unwrap().solution;
            assert!(relative_residual(&l, &p, &b) <= 10.0 * tol);
            let mut prev = p.norm();
            for reg in [1e-3, 1e-1, 1.0, 10.0] {
                let norm = spd_solve(&l, &b, tol, reg).unwrap().solution.norm();
                assert!(norm <= prev * (1.0 + 1e-12));
                prev = norm;
            }
        }
    }

    #[test]
    fn scaled_ridge_uses_mean_diagonal() {
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        assert!((scaled_regularization(&l, 1e-10) - 3e-10).abs() < 1e-24);
    }
}
