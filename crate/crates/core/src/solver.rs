//! Forward Physarum solver with zero-cost perturbation, negative-cost
//! flipping and the positivity clamp.

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{scaled_regularization, spd_solve};
use crate::lp::{self, SolveResult, SolveStatus, SolverConfig, StandardFormLP, TraceRecord};

/// Ridge escalation factor applied once when a linear solve fails.
const RETRY_REG_FACTOR: f64 = 100.0;

/// Window over which the objective has to stall before stopping early.
const STALL_WINDOW: usize = 3;

/// `1 / (2√(m+n))`, the perturbation used when the caller does not pick one.
pub fn default_gamma(rows: usize, cols: usize) -> f64 {
    1.0 / (2.0 * ((rows + cols) as f64).sqrt())
}

/// Replaces zero costs with `gamma`; nonzero entries are untouched.
pub fn perturb_cost(c: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    let has_zero = c.iter().any(|&v| v == 0.0);
    if has_zero && gamma <= 0.0 {
        return Err(Error::ZeroCostNeedsGamma);
    }
    Ok(c.map(|v| if v == 0.0 { gamma } else { v }))
}

/// An LP rewritten so that every cost is strictly positive.
///
/// Flipped coordinates use `yᵢ = M − xᵢ`, which negates column `i`, moves
/// `M·A[:,i]` into the right-hand side and adds `cᵢ·M` to the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLP {
    pub lp: StandardFormLP,
    pub flip_mask: Vec<bool>,
    pub original_c: DVector<f64>,
    pub gamma_applied: f64,
    pub flip_bound: Option<f64>,
    /// `Σ_{flipped} cᵢ·M`; original objective = prepared objective + offset.
    pub objective_offset: f64,
}

/// Flips the axes of negative-cost coordinates. Zero costs are left for
/// [`perturb_cost`].
pub fn flip_negative_costs(lp: &StandardFormLP, bound: Option<f64>) -> Result<PreparedLP> {
    let n = lp.cols();
    let mut out = lp.clone();
    let mut mask = vec![false; n];
    let mut offset = 0.0;
    for (i, &ci) in lp.c.iter().enumerate() {
        if ci < 0.0 {
            let m = bound.ok_or(Error::MissingBound { index: i })?;
            let col = lp.a.column(i).clone_owned();
            out.b -= &col * m;
            out.a.set_column(i, &(-col));
            out.c[i] = -ci;
            offset += ci * m;
            mask[i] = true;
        }
    }
    Ok(PreparedLP {
        lp: out,
        flip_mask: mask,
        original_c: lp.c.clone(),
        gamma_applied: 0.0,
        flip_bound: bound,
        objective_offset: offset,
    })
}

/// Flip then perturb, using `cfg.gamma` or [`default_gamma`].
pub fn prepare(lp: &StandardFormLP, cfg: &SolverConfig) -> Result<PreparedLP> {
    let mut prep = flip_negative_costs(lp, cfg.flip_bound)?;
    let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(lp.rows(), lp.cols()));
    prep.lp.c = perturb_cost(&prep.lp.c, gamma)?;
    prep.gamma_applied = gamma;
    Ok(prep)
}

impl PreparedLP {
    fn bound(&self) -> f64 {
        self.flip_bound.unwrap_or(0.0)
    }

    /// Maps a solver-space iterate back to the original coordinates.
    pub fn decode_x(&self, y: &DVector<f64>) -> DVector<f64> {
        let m = self.bound();
        DVector::from_fn(y.len(), |i, _| if self.flip_mask[i] { m - y[i] } else { y[i] })
    }

    /// Maps original coordinates into solver space (the map is an involution).
    pub fn encode_x(&self, x: &DVector<f64>) -> DVector<f64> {
        self.decode_x(x)
    }

    /// Recovers the original `(A, b, c)`.
    pub fn original_lp(&self) -> StandardFormLP {
        let mut lp = self.lp.clone();
        let m = self.bound();
        for i in 0..lp.cols() {
            if self.flip_mask[i] {
                let col = -lp.a.column(i).clone_owned();
                lp.b += &col * m;
                lp.a.set_column(i, &col);
            }
        }
        lp.c = self.original_c.clone();
        lp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysarumState {
    pub x: DVector<f64>,
    pub iter: usize,
}

/// Everything one update computed, kept for differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x_before: DVector<f64>,
    /// Diagonal of `W = diag(x/ĉ)`.
    pub w: DVector<f64>,
    /// `A W Aᵀ` without the ridge.
    pub l: DMatrix<f64>,
    pub reg: f64,
    pub p: DVector<f64>,
    /// `Aᵀp`.
    pub r: DVector<f64>,
    pub q: DVector<f64>,
    /// Update before clamping.
    pub unclamped: DVector<f64>,
    pub x_after: DVector<f64>,
    pub linsolve_iters: usize,
}

impl StepRecord {
    /// Coordinates held at the floor by the clamp.
    pub fn clamped(&self, floor: f64) -> impl Iterator<Item = bool> + '_ {
        self.unclamped.iter().map(move |&v| v <= floor)
    }
}

pub(crate) fn step_record(prep: &PreparedLP, x: &DVector<f64>, cfg: &SolverConfig, iter: usize) -> Result<StepRecord> {
    let a = &prep.lp.a;
    let w = x.component_div(&prep.lp.c);
    let aw = a * DMatrix::from_diagonal(&w);
    let mut l = &aw * a.transpose();
    // symmetrize away rounding so the solver's symmetry check is exact
    l = (&l + l.transpose()) * 0.5;
    let mut reg = scaled_regularization(&l, cfg.linsolve_reg);
    let solved = match spd_solve(&l, &prep.lp.b, cfg.linsolve_tol, reg) {
        Ok(rep) => rep,
        Err(_) => {
            reg = (reg * RETRY_REG_FACTOR).max(scaled_regularization(&l, 1e-8));
            spd_solve(&l, &prep.lp.b, cfg.linsolve_tol, reg).map_err(|e| Error::LinSolveFailure {
                iter,
                source: Box::new(e),
            })?
        }
    };
    let p = solved.solution;
    let r = a.transpose() * &p;
    let q = w.component_mul(&r);
    let h = cfg.step_size;
    let unclamped = x * (1.0 - h) + &q * h;
    let floor = cfg.clamp_floor;
    let x_after = unclamped.map(|v| v.max(floor));
    Ok(StepRecord {
        x_before: x.clone(),
        w,
        l,
        reg,
        p,
        r,
        q,
        unclamped,
        x_after,
        linsolve_iters: solved.iterations,
    })
}

/// One discretized Physarum update followed by the clamp at `ε`.
pub fn physarum_step(prep: &PreparedLP, state: &PhysarumState, cfg: &SolverConfig) -> Result<PhysarumState> {
    let rec = step_record(prep, &state.x, cfg, state.iter)?;
    Ok(PhysarumState {
        x: rec.x_after,
        iter: state.iter + 1,
    })
}

/// Initial point in solver space: the caller's `x0` (original coordinates)
/// or uniform `(0,1)` draws from `cfg.seed`.
pub(crate) fn initial_point(prep: &PreparedLP, cfg: &SolverConfig, x0: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = prep.lp.cols();
    match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "x0",
                    expected: n,
                    found: x0.len(),
                });
            }
            if let Some(index) = x0.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::NonPositiveInit {
                    index,
                    value: x0[index],
                });
            }
            Ok(prep.encode_x(x0).map(|v| v.max(cfg.clamp_floor)))
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(DVector::from_fn(n, |_, _| rng.sample::<f64, _>(Open01)))
        }
    }
}

/// Early-stop bookkeeping shared by the plain and taped solvers.
pub(crate) struct Monitor<'a> {
    lp: &'a StandardFormLP,
    prep: &'a PreparedLP,
    cfg: &'a SolverConfig,
    pub trace: Vec<TraceRecord>,
}

impl<'a> Monitor<'a> {
    pub fn new(lp: &'a StandardFormLP, prep: &'a PreparedLP, cfg: &'a SolverConfig) -> Self {
        Self {
            lp,
            prep,
            cfg,
            trace: Vec::with_capacity(cfg.max_iters),
        }
    }

    /// Records iteration `iter` and reports whether the run may stop.
    pub fn record(&mut self, iter: usize, y: &DVector<f64>, linsolve_iters: usize) -> bool {
        let x = self.prep.decode_x(y);
        let objective = self.lp.c.dot(&x);
        let residual = (&self.lp.a * &x - &self.lp.b).norm();
        self.trace.push(TraceRecord {
            iter,
            objective,
            residual,
            linsolve_iters,
            min_x: y.min(),
        });
        let tol = self.cfg.residual_tol;
        if residual > tol || self.trace.len() <= STALL_WINDOW {
            return false;
        }
        let past = self.trace[self.trace.len() - 1 - STALL_WINDOW].objective;
        (objective - past).abs() <= tol * objective.abs().max(1e-12)
    }

    pub fn finish(self, y: &DVector<f64>, failed: bool) -> SolveResult {
        let x = self.prep.decode_x(y);
        let objective = self.lp.c.dot(&x);
        let residual = (&self.lp.a * &x - &self.lp.b).norm();
        let status = if failed {
            SolveStatus::LinSolveFailure
        } else if residual <= self.cfg.residual_tol {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIters
        };
        SolveResult {
            x,
            objective,
            residual,
            status,
            trace: self.trace,
        }
    }
}

/// Runs up to `cfg.max_iters` Physarum updates.
///
/// `x0` need not be feasible, only strictly positive. If a linear solve
/// fails after some iterations have completed, the last good iterate is
/// returned with [`SolveStatus::LinSolveFailure`]; a failure on the very
/// first update is returned as an error.
pub fn solve(lp: &StandardFormLP, cfg: &SolverConfig, x0: Option<&DVector<f64>>) -> Result<SolveResult> {
    lp::check(lp)?;
    cfg.validate()?;
    let prep = prepare(lp, cfg)?;
    let mut state = PhysarumState {
        x: initial_point(&prep, cfg, x0)?,
        iter: 0,
    };
    let mut monitor = Monitor::new(lp, &prep, cfg);
    for k in 0..cfg.max_iters {
        let rec = match step_record(&prep, &state.x, cfg, k) {
            Ok(rec) => rec,
            Err(e) if k == 0 => return Err(e),
            Err(_) => return Ok(monitor.finish(&state.x, true)),
        };
        state = PhysarumState {
            x: rec.x_after,
            iter: k + 1,
        };
        if monitor.record(k, &state.x, rec.linsolve_iters) && cfg.early_stop {
            break;
        }
    }
    Ok(monitor.finish(&state.x, false))
}
