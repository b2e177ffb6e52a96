//! Reverse-mode gradients of the unrolled solver with respect to `(c, A, b)`.
//!
//! The forward pass records every update; [`backward`] walks the records in
//! reverse applying the chain rule to
//!
//! ```text
//! w = x / ĉ,  L = Â diag(w) Âᵀ + λI,  p = L⁻¹ b̂,  q = w ⊙ (Âᵀ p),
//! x⁺ = max((1 − h) x + h q, ε)
//! ```
//!
//! The clamp passes gradients where it was inactive and blocks them where it
//! held a coordinate at the floor. The ridge `λ` is treated as a constant.
//! Gradients are then pulled back through the axis flip and the zero-cost
//! perturbation to the caller's original LP; the perturbation itself has no
//! gradient.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, spd_solve_adjoint};
use crate::lp::{self, SolveResult, SolverConfig, StandardFormLP};
use crate::solver::{initial_point, prepare, step_record, Monitor, PreparedLP, StepRecord};

/// Forward intermediates of one solve.
#[derive(Debug, Clone)]
pub struct UnrolledTape {
    pub prepared: PreparedLP,
    pub cfg: SolverConfig,
    /// Starting point in solver coordinates.
    pub x0: DVector<f64>,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpGradients {
    pub grad_c: DVector<f64>,
    pub grad_a: DMatrix<f64>,
    pub grad_b: DVector<f64>,
}

impl LpGradients {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            grad_c: DVector::zeros(cols),
            grad_a: DMatrix::zeros(rows, cols),
            grad_b: DVector::zeros(rows),
        }
    }

    /// `⟨self, (dc, dA, db)⟩`.
    pub fn dot(&self, dc: &DVector<f64>, da: &DMatrix<f64>, db: &DVector<f64>) -> f64 {
        self.grad_c.dot(dc) + self.grad_a.dot(da) + self.grad_b.dot(db)
    }

    pub fn is_finite(&self) -> bool {
        self.grad_c
            .iter()
            .chain(self.grad_a.iter())
            .chain(self.grad_b.iter())
            .all(|v| v.is_finite())
    }
}

impl UnrolledTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Final iterate in solver coordinates.
    pub fn final_point(&self) -> &DVector<f64> {
        self.steps.last().map_or(&self.x0, |s| &s.x_after)
    }

    /// Final iterate in the original coordinates.
    pub fn final_x(&self) -> DVector<f64> {
        self.prepared.decode_x(self.final_point())
    }

    /// Variables the clamp held at the floor during at least one update.
    pub fn clamp_ever_active(&self) -> Vec<bool> {
        let mut active = vec![false; self.x0.len()];
        for s in &self.steps {
            for (flag, hit) in active.iter_mut().zip(s.clamped(self.cfg.clamp_floor)) {
                *flag |= hit;
            }
        }
        active
    }

    /// Reruns the forward pass from the stored start and prepared LP.
    pub fn replay(&self) -> Result<Vec<DVector<f64>>> {
        let mut x = self.x0.clone();
        let mut out = Vec::with_capacity(self.steps.len());
        for k in 0..self.steps.len() {
            x = step_record(&self.prepared, &x, &self.cfg, k)?.x_after;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Bit-exact comparison of [`replay`](Self::replay) against the tape.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.steps).all(|(a, s)| a == &s.x_after))
    }

    fn sign(&self) -> DVector<f64> {
        DVector::from_fn(
            self.x0.len(),
            |i, _| if self.prepared.flip_mask[i] { -1.0 } else { 1.0 },
        )
    }

    /// Forward-mode derivative of the final iterate along `(dc, dA, db)`,
    /// propagated through the stored updates.
    pub fn jvp(&self, dc: &DVector<f64>, da: &DMatrix<f64>, db: &DVector<f64>) -> Result<DVector<f64>> {
        let prep = &self.prepared;
        let (m, n) = prep.lp.a.shape();
        check_shapes(m, n, dc, da, db)?;
        let sign = self.sign();
        let bound = prep.flip_bound.unwrap_or(0.0);

        // tangents of the prepared data
        let mut da_hat = da.clone();
        let mut db_hat = db.clone();
        for j in 0..n {
            if prep.flip_mask[j] {
                let col = da.column(j).clone_owned();
                db_hat -= &col * bound;
                da_hat.set_column(j, &(-col));
            }
        }
        let dc_hat = DVector::from_fn(n, |j, _| {
            if prep.original_c[j] == 0.0 {
                0.0
            } else {
                sign[j] * dc[j]
            }
        });

        let a = &prep.lp.a;
        let c = &prep.lp.c;
        let h = self.cfg.step_size;
        let mut dx = DVector::zeros(n);
        for s in &self.steps {
            let dw = DVector::from_fn(n, |j, _| dx[j] / c[j] - s.w[j] * dc_hat[j] / c[j]);
            let w_mat = DMatrix::from_diagonal(&s.w);
            let dw_mat = DMatrix::from_diagonal(&dw);
            let dl = &da_hat * &w_mat * a.transpose() + a * &dw_mat * a.transpose() + a * &w_mat * da_hat.transpose();
            let rhs = &db_hat - &dl * &s.p;
            let dp = spd_solve(&s.l, &rhs, self.cfg.linsolve_tol, s.reg)?.solution;
            let dr = da_hat.transpose() * &s.p + a.transpose() * &dp;
            let dq = dw.component_mul(&s.r) + s.w.component_mul(&dr);
            let dy = &dx * (1.0 - h) + dq * h;
            dx = DVector::from_fn(n, |j, _| {
                if s.unclamped[j] > self.cfg.clamp_floor {
                    dy[j]
                } else {
                    0.0
                }
            });
        }
        Ok(dx.component_mul(&sign))
    }
}

fn check_shapes(m: usize, n: usize, dc: &DVector<f64>, da: &DMatrix<f64>, db: &DVector<f64>) -> Result<()> {
    let mismatch = |what, expected, found| Err(Error::DimensionMismatch { what, expected, found });
    if dc.len() != n {
        return mismatch("dc", n, dc.len());
    }
    if da.shape() != (m, n) {
        return mismatch("dA", m * n, da.len());
    }
    if db.len() != m {
        return mismatch("db", m, db.len());
    }
    Ok(())
}

fn run(
    lp: &StandardFormLP,
    cfg: &SolverConfig,
    x0: Option<&DVector<f64>>,
    early_stop: bool,
) -> Result<(SolveResult, UnrolledTape)> {
    lp::check(lp)?;
    cfg.validate_allow_zero_iters()?;
    let prep = prepare(lp, cfg)?;
    let start = initial_point(&prep, cfg, x0)?;
    let mut monitor = Monitor::new(lp, &prep, cfg);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(cfg.max_iters);
    let mut x = start.clone();
    for k in 0..cfg.max_iters {
        let rec = step_record(&prep, &x, cfg, k)?;
        x = rec.x_after.clone();
        let settled = monitor.record(k, &x, rec.linsolve_iters);
        steps.push(rec);
        if settled && early_stop {
            break;
        }
    }
    let result = monitor.finish(&x, false);
    let tape = UnrolledTape {
        prepared: prep,
        cfg: cfg.clone(),
        x0: start,
        steps,
    };
    Ok((result, tape))
}

/// Forward solve that also records a tape. Runs exactly `cfg.max_iters`
/// updates (zero is allowed) so the computation graph is fixed.
pub fn solve_with_tape(
    lp: &StandardFormLP,
    cfg: &SolverConfig,
    x0: Option<&DVector<f64>>,
) -> Result<(SolveResult, UnrolledTape)> {
    run(lp, cfg, x0, false)
}

/// Like [`solve_with_tape`] but honours `cfg.early_stop`.
pub fn solve_with_tape_early_stop(
    lp: &StandardFormLP,
    cfg: &SolverConfig,
    x0: Option<&DVector<f64>>,
) -> Result<(SolveResult, UnrolledTape)> {
    run(lp, cfg, x0, cfg.early_stop)
}

/// Gradients of a scalar loss with respect to the original `(c, A, b)`,
/// given `grad_x = ∂loss/∂x_final`.
pub fn backward(tape: &UnrolledTape, grad_x: &DVector<f64>) -> Result<LpGradients> {
    let prep = &tape.prepared;
    let (m, n) = prep.lp.a.shape();
    if grad_x.len() != n {
        return Err(Error::DimensionMismatch {
            what: "grad_x",
            expected: n,
            found: grad_x.len(),
        });
    }
    let a = &prep.lp.a;
    let c = &prep.lp.c;
    let h = tape.cfg.step_size;
    let floor = tape.cfg.clamp_floor;
    let sign = tape.sign();

    let mut ga = DMatrix::<f64>::zeros(m, n);
    let mut gb = DVector::<f64>::zeros(m);
    let mut gc = DVector::<f64>::zeros(n);
    let mut gx = grad_x.component_mul(&sign);

    for (k, s) in tape.steps.iter().enumerate().rev() {
        let gu = DVector::from_fn(n, |j, _| if s.unclamped[j] > floor { gx[j] } else { 0.0 });
        let mut gx_prev = &gu * (1.0 - h);
        let gq = gu * h;
        let mut gw = gq.component_mul(&s.r);
        let gr = gq.component_mul(&s.w);
        // r = Âᵀ p
        ga += &s.p * gr.transpose();
        let gp = a * &gr;
        let (gl, gb_step) =
            spd_solve_adjoint(&s.l, &s.p, &gp, tape.cfg.linsolve_tol, s.reg).map_err(|e| Error::LinSolveFailure {
                iter: k,
                source: Box::new(e),
            })?;
        gb += &gb_step;
        // L = Â diag(w) Âᵀ
        let gl_sym = &gl + gl.transpose();
        ga += &gl_sym * a * DMatrix::from_diagonal(&s.w);
        let lt_a = gl.transpose() * a;
        for j in 0..n {
            gw[j] += a.column(j).dot(&lt_a.column(j));
        }
        // w = x / ĉ
        for j in 0..n {
            gx_prev[j] += gw[j] / c[j];
            gc[j] -= gw[j] * s.w[j] / c[j];
        }
        gx = gx_prev;
    }

    // undo the flip and drop the perturbation
    let bound = prep.flip_bound.unwrap_or(0.0);
    let mut grad_a = ga;
    for j in 0..n {
        if prep.flip_mask[j] {
            let col = -grad_a.column(j).clone_owned() - &gb * bound;
            grad_a.set_column(j, &col);
        }
    }
    let grad_c = DVector::from_fn(n, |j, _| {
        if prep.original_c[j] == 0.0 {
            0.0
        } else {
            sign[j] * gc[j]
        }
    });
    Ok(LpGradients {
        grad_c,
        grad_a,
        grad_b: gb,
    })
}

/// Default central-difference step for an entry of magnitude `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central finite differences of `loss(x_final)` over every entry of
/// `c`, `A` and `b`. Runs a fixed number of updates, ignoring early stop.
pub fn finite_diff_grad<F>(
    lp: &StandardFormLP,
    cfg: &SolverConfig,
    x0: Option<&DVector<f64>>,
    loss: F,
) -> Result<LpGradients>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let (m, n) = lp.a.shape();
    lp::check(lp)?;
    let eval = |perturbed: &StandardFormLP| -> Result<f64> {
        let (res, _) = run(perturbed, cfg, x0, false)?;
        Ok(loss(&res.x))
    };

    // coordinate k: [0, n) cost, [n, n + m·n) A column-major, then b
    let total = n + m * n + m;
    let partials: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|k| {
            let bump = |lp: &mut StandardFormLP, delta: f64| {
                if k < n {
                    lp.c[k] += delta;
                } else if k < n + m * n {
                    lp.a.as_mut_slice()[k - n] += delta;
                } else {
                    lp.b[k - n - m * n] += delta;
                }
            };
            let entry = if k < n {
                lp.c[k]
            } else if k < n + m * n {
                lp.a.as_slice()[k - n]
            } else {
                lp.b[k - n - m * n]
            };
            let eta = fd_step(entry);
            let mut plus = lp.clone();
            bump(&mut plus, eta);
            let mut minus = lp.clone();
            bump(&mut minus, -eta);
            Ok((eval(&plus)? - eval(&minus)?) / (2.0 * eta))
        })
        .collect::<Result<_>>()?;

    Ok(LpGradients {
        grad_c: DVector::from_column_slice(&partials[..n]),
        grad_a: DMatrix::from_column_slice(m, n, &partials[n..n + m * n]),
        grad_b: DVector::from_column_slice(&partials[n + m * n..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> StandardFormLP {
        StandardFormLP::from_rows(&[&[1.0, 1.0]], &[1.0], &[1.0, 2.0])
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn tape_length_follows_iteration_budget() {
        let (_, tape) = solve_with_tape(&toy(), &SolverConfig::default().with_iters(1), None).unwrap();
        assert_eq!(tape.len(), 1);
        let (res, tape) = solve_with_tape(&toy(), &SolverConfig::default().with_iters(25), None).unwrap();
        assert_eq!(tape.len(), 25);
        assert_eq!(res.trace.len(), 25);
        assert!(tape.replay_matches().unwrap());
        assert_eq!(&tape.final_x(), &res.x);
    }

    #[test]
    fn early_stop_is_opt_in() {
        let cfg = SolverConfig::default().with_iters(400);
        let (_, fixed) = solve_with_tape(&toy(), &cfg, None).unwrap();
        let (_, early) = solve_with_tape_early_stop(&toy(), &cfg, None).unwrap();
        assert_eq!(fixed.len(), 400);
        assert!(early.len() < 400);
    }

    #[test]
    fn zero_iterations_give_the_linear_cost_gradient() {
        // loss = cᵀx with x_final = x0: the only dependence on c is explicit
        let lp = toy();
        let x0 = DVector::from_vec(vec![0.3, 0.8]);
        let (res, tape) = solve_with_tape(&lp, &SolverConfig::default().with_iters(0), Some(&x0)).unwrap();
        assert!(tape.is_empty());
        assert_eq!(res.x, x0);
        let g = backward(&tape, &lp.c).unwrap();
        assert_eq!(g.grad_c + &res.x, x0);
        assert_eq!(g.grad_a, DMatrix::zeros(1, 2));
        assert_eq!(g.grad_b, DVector::zeros(1));
    }

    #[test]
    fn backward_matches_finite_differences_on_toy() {
        let lp = toy();
        let cfg = SolverConfig::default().with_iters(10);
        let (_, tape) = solve_with_tape(&lp, &cfg, None).unwrap();
        let g = backward(&tape, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let fd = finite_diff_grad(&lp, &cfg, None, |x| x[1]).unwrap();
        for (a, b) in g.grad_c.iter().zip(fd.grad_c.iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "c: {a} vs {b}");
        }
        for (a, b) in g.grad_a.iter().zip(fd.grad_a.iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "A: {a} vs {b}");
        }
        for (a, b) in g.grad_b.iter().zip(fd.grad_b.iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "b: {a} vs {b}");
        }
    }

    #[test]
    fn finite_differences_of_constant_loss_vanish() {
        let cfg = SolverConfig::default().with_iters(5);
        let fd = finite_diff_grad(&toy(), &cfg, None, |_| 3.5).unwrap();
        assert!(fd.grad_c.amax() <= 1e-9 && fd.grad_a.amax() <= 1e-9 && fd.grad_b.amax() <= 1e-9);
    }

    #[test]
    fn finite_differences_are_deterministic() {
        let cfg = SolverConfig::default().with_iters(5).with_seed(42);
        let a = finite_diff_grad(&toy(), &cfg, None, |x| x[0]).unwrap();
        let b = finite_diff_grad(&toy(), &cfg, None, |x| x[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flipped_coordinates_differentiate_correctly() {
        let lp = StandardFormLP::from_rows(&[&[1.0, 1.0, 1.0], &[1.0, 2.0, 0.5]], &[1.5, 2.0], &[-0.5, 1.0, 0.0]);
        let cfg = SolverConfig {
            flip_bound: Some(3.0),
            max_iters: 6,
            gamma: Some(0.4),
            ..SolverConfig::default()
        };
        let w = DVector::from_vec(vec![0.7, -0.2, 1.1]);
        let (_, tape) = solve_with_tape(&lp, &cfg, None).unwrap();
        assert!(tape.prepared.flip_mask[0]);
        let g = backward(&tape, &w).unwrap();
        let fd = finite_diff_grad(&lp, &cfg, None, |x| w.dot(x)).unwrap();
        // the zero-cost column gets no cost gradient by construction
        assert_eq!(g.grad_c[2], 0.0);
        for j in 0..2 {
            assert!(rel_err(g.grad_c[j], fd.grad_c[j]) <= 1e-4, "c[{j}]");
        }
        for (a, b) in g.grad_a.iter().zip(fd.grad_a.iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "A: {a} vs {b}");
        }
        for (a, b) in g.grad_b.iter().zip(fd.grad_b.iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "b: {a} vs {b}");
        }
    }

    #[test]
    fn jvp_and_backward_agree() {
        let lp = StandardFormLP::from_rows(&[&[1.0, 1.0, 1.0], &[1.0, 2.0, 0.5]], &[1.5, 2.0], &[0.5, 1.0, 0.8]);
        let cfg = SolverConfig::default().with_iters(8);
        let (_, tape) = solve_with_tape(&lp, &cfg, None).unwrap();
        let gx = DVector::from_vec(vec![0.3, -1.0, 0.4]);
        let dc = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let da = DMatrix::from_row_slice(2, 3, &[0.2, -0.1, 0.05, 0.3, 0.1, -0.4]);
        let db = DVector::from_vec(vec![-0.3, 0.2]);
        let lhs = gx.dot(&tape.jvp(&dc, &da, &db).unwrap());
        let rhs = backward(&tape, &gx).unwrap().dot(&dc, &da, &db);
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn backward_rejects_wrong_gradient_length() {
        let (_, tape) = solve_with_tape(&toy(), &SolverConfig::default(), None).unwrap();
        assert!(backward(&tape, &DVector::zeros(3)).is_err());
    }
}
