//! Desk-scale experiments behind the `auxpd` subcommands. Everything here
//! is deterministic given the seed; wall-clock timings are opt-in so that
//! reports stay byte-identical across runs.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backward, solve_with_tape};
use crate::error::{Error, Result};
use crate::lp::{SolveResult, SolveStatus, SolverConfig, StandardFormLP};
use crate::oracles::{dijkstra, hungarian};
use crate::problems::{
    build_l1svm_lp, build_matching_lp, build_shortest_path_lp, decode_matching, embed_assignment, fit_svm,
    DecodedMatching, Graph, Kernel, MatchingInstance, SvmInstance, SvmLayout, SvmParams,
};
use crate::solver::solve;

/// Where the matching solver starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStart {
    /// `X = 1/m`, `s = 1 − n/m`, lifted to the clamp floor.
    Uniform,
    /// Open-interval uniform draws from the solver seed.
    Random,
    AllOnes,
}

impl MatchStart {
    pub fn point(&self, inst: &MatchingInstance, floor: f64) -> Option<DVector<f64>> {
        match self {
            MatchStart::Uniform => Some(inst.uniform_point().map(|v| v.max(floor))),
            MatchStart::Random => None,
            MatchStart::AllOnes => Some(DVector::from_element(inst.num_vars(), 1.0)),
        }
    }
}

/// Solves a matching relaxation and rounds it.
pub fn solve_matching(
    inst: &MatchingInstance,
    cfg: &SolverConfig,
    start: MatchStart,
) -> Result<(DecodedMatching, SolveResult)> {
    let lp = build_matching_lp(inst)?;
    let x0 = start.point(inst, cfg.clamp_floor);
    let res = solve(&lp, cfg, x0.as_ref())?;
    let dec = decode_matching(&res.x, inst.templates(), inst.proposals())?;
    Ok((dec, res))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchBenchConfig {
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub iters: Vec<usize>,
    pub seed: u64,
    /// Slack cost.
    pub gamma: f64,
    pub step: f64,
    pub start: MatchStart,
    /// Compare only the `X` block instead of the full variable vector.
    pub x_block_only: bool,
    #[serde(skip)]
    pub timings: bool,
}

impl Default for MatchBenchConfig {
    fn default() -> Self {
        Self {
            n: 5,
            m: 50,
            trials: 100,
            iters: vec![10, 50, 100],
            seed: 0,
            gamma: 1e-3,
            step: 1.0,
            start: MatchStart::Uniform,
            x_block_only: false,
            timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub trial: usize,
    pub seed: u64,
    pub budget: usize,
    pub iterations: usize,
    pub error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchAggregate {
    pub budget: usize,
    pub trials: usize,
    pub mean_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: MatchBenchConfig,
    /// `"full"` or `"x_block"`.
    pub comparison: String,
    pub records: Vec<BenchRecord>,
    pub aggregates: Vec<BenchAggregate>,
}

impl BenchReport {
    /// Per-budget means over `records`, in order of first appearance.
    pub fn aggregate(records: &[BenchRecord]) -> Vec<BenchAggregate> {
        let mut budgets: Vec<usize> = Vec::new();
        for r in records {
            if !budgets.contains(&r.budget) {
                budgets.push(r.budget);
            }
        }
        budgets
            .into_iter()
            .map(|budget| {
                let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.budget == budget).collect();
                let k = rows.len() as f64;
                let mean_error = rows.iter().map(|r| r.error).sum::<f64>() / k;
                let mean_time_ms = rows.iter().map(|r| r.time_ms).sum::<Option<f64>>().map(|t| t / k);
                BenchAggregate {
                    budget,
                    trials: rows.len(),
                    mean_error,
                    mean_time_ms,
                }
            })
            .collect()
    }

    pub fn mean_error(&self, budget: usize) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.budget == budget)
            .map(|a| a.mean_error)
    }

    /// One row per record with a header.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::InvalidInstance(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInstance(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Distance between a relaxed matching solution and the Hungarian
/// assignment embedded in the same coordinates.
pub fn matching_error(x: &DVector<f64>, map: &[usize], n: usize, m: usize, x_block_only: bool) -> f64 {
    let oracle = embed_assignment(map, n, m);
    let len = if x_block_only { n * m } else { n * m + m };
    (x.rows(0, len) - oracle.rows(0, len)).norm()
}

/// Random matching instances solved at each iteration budget and compared
/// against the Hungarian assignment. Trials run in parallel.
pub fn match_bench(cfg: &MatchBenchConfig) -> Result<BenchReport> {
    if cfg.n == 0 || cfg.n > cfg.m {
        return Err(Error::InvalidInstance(format!(
            "need 1 <= n <= m, got n={} m={}",
            cfg.n, cfg.m
        )));
    }
    if cfg.iters.is_empty() || cfg.iters.contains(&0) {
        return Err(Error::InvalidConfig("iteration budgets must be positive".into()));
    }
    let per_trial: Vec<Vec<BenchRecord>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = cfg.seed.wrapping_add(trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = MatchingInstance::random(&mut rng, cfg.n, cfg.m, cfg.gamma)?;
            let oracle = hungarian(&inst.cost);
            cfg.iters
                .iter()
                .map(|&budget| {
                    let solver = SolverConfig::default()
                        .with_iters(budget)
                        .with_step(cfg.step)
                        .with_gamma(cfg.gamma)
                        .with_seed(seed);
                    let t = Instant::now();
                    let (_, res) = solve_matching(&inst, &solver, cfg.start)?;
                    let elapsed = t.elapsed().as_secs_f64() * 1e3;
                    Ok(BenchRecord {
                        trial,
                        seed,
                        budget,
                        iterations: res.iterations(),
                        error: matching_error(&res.x, &oracle.map, cfg.n, cfg.m, cfg.x_block_only),
                        time_ms: cfg.timings.then_some(elapsed),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<BenchRecord> = per_trial.into_iter().flatten().collect();
    Ok(BenchReport {
        config: cfg.clone(),
        comparison: if cfg.x_block_only { "x_block" } else { "full" }.into(),
        aggregates: BenchReport::aggregate(&records),
        records,
    })
}

/// Two Gaussian classes with identity covariance and means `±sep·1/√dim`.
/// Points alternate `+1, −1, +1, ...`.
pub fn two_blobs<R: Rng + ?Sized>(rng: &mut R, n_per_class: usize, dim: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let shift = sep / (dim as f64).sqrt();
    let mut points = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for y in [1.0, -1.0] {
            points.push((0..dim).map(|_| y * shift + normal.sample(rng)).collect());
            labels.push(y);
        }
    }
    (points, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDemoConfig {
    pub n_per_class: usize,
    pub dim: usize,
    pub sep: f64,
    pub kernel: Kernel,
    pub c_reg: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for SvmDemoConfig {
    fn default() -> Self {
        Self {
            n_per_class: 10,
            dim: 4,
            sep: 2.0,
            kernel: Kernel::Linear,
            c_reg: 10.0,
            iters: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDemoReport {
    pub config: SvmDemoConfig,
    pub accuracy: f64,
    pub variables: usize,
    pub equalities: usize,
    pub objective: f64,
    pub residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub alpha: Vec<f64>,
    pub bias: f64,
}

pub fn svm_demo(cfg: &SvmDemoConfig) -> Result<SvmDemoReport> {
    if cfg.n_per_class == 0 || cfg.dim == 0 {
        return Err(Error::InvalidConfig(
            "need at least one point per class and one dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (points, labels) = two_blobs(&mut rng, cfg.n_per_class, cfg.dim, cfg.sep);
    let params = SvmParams {
        kernel: cfg.kernel,
        c_reg: cfg.c_reg,
        ..SvmParams::default()
    };
    let inst = SvmInstance::new(points, labels, params)?;
    let lay = SvmLayout { n: inst.len() };
    let solver = SolverConfig::default().with_iters(cfg.iters).with_seed(cfg.seed);
    let (clf, res) = fit_svm(&inst, &solver)?;
    Ok(SvmDemoReport {
        config: cfg.clone(),
        accuracy: clf.accuracy(&inst.points, &inst.labels),
        variables: lay.num_vars(),
        equalities: lay.num_rows(),
        objective: res.objective,
        residual: res.residual,
        status: res.status,
        iterations: res.iterations(),
        alpha: clf.alpha.iter().copied().collect(),
        bias: clf.bias,
    })
}

/// Structural size of the ℓ1-SVM LP for `n` training points.
pub fn svm_lp_shape(n: usize) -> Result<(usize, usize)> {
    let inst = SvmInstance::new(
        (0..n).map(|i| vec![i as f64]).collect(),
        (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        SvmParams::default(),
    )?;
    let lp = build_l1svm_lp(&inst)?;
    Ok((lp.cols(), lp.rows()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnCostConfig {
    pub n: usize,
    pub m: usize,
    /// Drawn from the seed when absent.
    pub target: Option<Vec<usize>>,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    /// Unrolled solver iterations per forward pass.
    pub iters: usize,
    pub step: f64,
    pub gamma: f64,
}

impl Default for LearnCostConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 5,
            target: None,
            lr: 0.5,
            steps: 200,
            seed: 0,
            iters: 8,
            step: 0.1,
            gamma: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnCostReport {
    pub config: LearnCostConfig,
    pub target: Vec<usize>,
    pub initial_cost: Vec<Vec<f64>>,
    pub final_cost: Vec<Vec<f64>>,
    /// Loss before the first step and after each step.
    pub losses: Vec<f64>,
    pub assignment: Vec<usize>,
    pub success: bool,
}

fn rows_of(c: &DMatrix<f64>) -> Vec<Vec<f64>> {
    c.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn random_injection<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..m).collect();
    for i in 0..n {
        let k = rng.random_range(i..m);
        cols.swap(i, k);
    }
    cols.truncate(n);
    cols
}

/// Gradient descent on the matching cost so that the relaxed solution puts
/// its mass on `target`. The loss is `Σᵢ (1 − X[i, target(i)])`.
pub fn learn_cost(cfg: &LearnCostConfig) -> Result<LearnCostReport> {
    let (n, m) = (cfg.n, cfg.m);
    if n == 0 || n > m {
        return Err(Error::InvalidInstance(format!("need 1 <= n <= m, got n={n} m={m}")));
    }
    if !cfg.lr.is_finite() {
        return Err(Error::InvalidConfig("learning rate must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cost = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
    let target = match &cfg.target {
        Some(t) => {
            let mut seen = vec![false; m];
            if t.len() != n || t.iter().any(|&j| j >= m || std::mem::replace(&mut seen[j], true)) {
                return Err(Error::InvalidInstance(format!(
                    "target must map {n} rows to distinct columns below {m}"
                )));
            }
            t.clone()
        }
        None => random_injection(&mut rng, n, m),
    };
    let initial_cost = rows_of(&cost);
    let solver = SolverConfig {
        flip_bound: Some(1.0),
        ..SolverConfig::default()
    }
    .with_iters(cfg.iters)
    .with_step(cfg.step)
    .with_gamma(cfg.gamma)
    .with_seed(cfg.seed);
    let mut grad_x = DVector::zeros(n * m + m);
    for (i, &j) in target.iter().enumerate() {
        grad_x[i * m + j] = -1.0;
    }

    let forward = |cost: &DMatrix<f64>| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let inst = MatchingInstance::new(cost.clone(), cfg.gamma)?;
        let lp = build_matching_lp(&inst)?;
        let (res, tape) = solve_with_tape(&lp, &solver, Some(&inst.uniform_point()))?;
        let loss = target.iter().enumerate().map(|(i, &j)| 1.0 - res.x[i * m + j]).sum();
        let g = backward(&tape, &grad_x)?;
        let grad_cost = DMatrix::from_fn(n, m, |i, j| g.grad_c[i * m + j]);
        Ok((loss, res.x, grad_cost))
    };

    let (mut loss, mut x, mut grad) = forward(&cost)?;
    let mut losses = vec![loss];
    for _ in 0..cfg.steps {
        cost -= &grad * cfg.lr;
        (loss, x, grad) = forward(&cost)?;
        losses.push(loss);
    }
    let assignment = decode_matching(&x, n, m)?.map;
    Ok(LearnCostReport {
        config: cfg.clone(),
        success: assignment == target,
        target,
        initial_cost,
        final_cost: rows_of(&cost),
        losses,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortestPathReport {
    pub source: usize,
    pub sink: usize,
    pub pd_objective: f64,
    pub dijkstra_objective: f64,
    pub dijkstra_path: Vec<usize>,
    pub residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub agree: bool,
}

/// Solves the unit-flow LP and checks it against Dijkstra within
/// `1e-3·(1 + d*)`.
pub fn shortest_path_compare(
    graph: &Graph,
    source: usize,
    sink: usize,
    cfg: &SolverConfig,
) -> Result<ShortestPathReport> {
    let lp: StandardFormLP = build_shortest_path_lp(graph, source, sink)?;
    let exact = dijkstra(graph, source, sink)?;
    let res = solve(&lp, cfg, None)?;
    Ok(ShortestPathReport {
        source,
        sink,
        pd_objective: res.objective,
        dijkstra_objective: exact.length,
        dijkstra_path: exact.nodes,
        residual: res.residual,
        status: res.status,
        iterations: res.iterations(),
        agree: (res.objective - exact.length).abs() <= 1e-3 * (1.0 + exact.length),
    })
}

/// Bounded, feasible standard-form LP with `m` rows and `n > m` columns.
///
/// The first row has strictly positive entries, which bounds the feasible
/// set; `b = A x_f` for an interior `x_f`, and `c > 0`.
pub fn random_feasible_lp<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> StandardFormLP {
    let a = DMatrix::from_fn(m, n, |i, _| {
        if i == 0 {
            rng.random_range(0.1..1.0)
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    let xf = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
    let c = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
    let b = &a * xf;
    StandardFormLP::new(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_recompute_from_rows() {
        let cfg = MatchBenchConfig {
            n: 2,
            m: 4,
            trials: 6,
            iters: vec![5, 20],
            ..MatchBenchConfig::default()
        };
        let rep = match_bench(&cfg).unwrap();
        assert_eq!(rep.records.len(), 12);
        assert_eq!(BenchReport::aggregate(&rep.records), rep.aggregates);
        let trials: Vec<usize> = rep.records.iter().map(|r| r.trial).collect();
        assert_eq!(trials, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert!(rep.aggregates.iter().all(|a| a.mean_time_ms.is_none()));
    }

    #[test]
    fn one_by_one_bench_is_exact() {
        let cfg = MatchBenchConfig {
            n: 1,
            m: 1,
            trials: 5,
            iters: vec![10],
            ..MatchBenchConfig::default()
        };
        assert!(match_bench(&cfg).unwrap().mean_error(10).unwrap() <= 1e-6);
    }

    #[test]
    fn csv_has_header() {
        let cfg = MatchBenchConfig {
            n: 1,
            m: 2,
            trials: 2,
            iters: vec![3],
            timings: true,
            ..MatchBenchConfig::default()
        };
        let text = match_bench(&cfg).unwrap().to_csv().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("trial,seed,budget,iterations,error,time_ms"));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn blobs_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (pts, labels) = two_blobs(&mut rng, 7, 3, 2.0);
        assert_eq!(pts.len(), 14);
        assert!(pts.iter().all(|p| p.len() == 3));
        assert_eq!(labels.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn svm_shapes() {
        assert_eq!(svm_lp_shape(10).unwrap(), (92, 40));
    }

    #[test]
    fn learn_cost_without_steps_keeps_cost() {
        let cfg = LearnCostConfig {
            steps: 0,
            ..LearnCostConfig::default()
        };
        let rep = learn_cost(&cfg).unwrap();
        assert_eq!(rep.initial_cost, rep.final_cost);
        assert_eq!(rep.losses.len(), 1);
    }

    #[test]
    fn learn_cost_zero_rate_is_flat() {
        let cfg = LearnCostConfig {
            steps: 5,
            lr: 0.0,
            ..LearnCostConfig::default()
        };
        let rep = learn_cost(&cfg).unwrap();
        assert!(rep.losses.iter().all(|&l| l == rep.losses[0]));
    }

    #[test]
    fn learn_cost_rejects_bad_target() {
        for t in [vec![0, 0, 1], vec![0, 1], vec![0, 1, 5]] {
            let cfg = LearnCostConfig {
                target: Some(t),
                ..LearnCostConfig::default()
            };
            assert!(learn_cost(&cfg).is_err());
        }
    }

    #[test]
    fn random_lp_is_feasible_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lp = random_feasible_lp(&mut rng, 3, 6);
        assert_eq!((lp.rows(), lp.cols()), (3, 6));
        assert!(lp.c.iter().all(|&c| c > 0.0));
        assert!(lp.a.row(0).iter().all(|&a| a > 0.0));
    }
}
