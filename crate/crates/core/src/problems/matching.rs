use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Assignment;
use crate::error::{Error, Result};
use crate::lp::{self, StandardFormLP};
use crate::solver::default_gamma;

/// Bipartite matching of `n` templates to `m ≥ n` proposals.
///
/// The relaxation is `min tr(CXᵀ) + γ·1ᵀs` subject to `X1 = 1` and
/// `Xᵀ1 + s = 1`, with `X ≥ 0, s ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingInstance {
    pub cost: DMatrix<f64>,
    /// Cost on each slack variable.
    pub gamma_slack: f64,
}

#[derive(Serialize, Deserialize)]
struct MatchingFile {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    gamma: f64,
}

/// `1 / (2√m)` for `m` slack variables.
pub fn slack_gamma(slacks: usize) -> f64 {
    1.0 / (2.0 * (slacks as f64).sqrt())
}

impl MatchingInstance {
    pub fn new(cost: DMatrix<f64>, gamma_slack: f64) -> Result<Self> {
        let (n, m) = cost.shape();
        if n == 0 || m < n {
            return Err(Error::InvalidInstance(format!(
                "matching needs 1 <= templates <= proposals, got {n}x{m}"
            )));
        }
        if !(gamma_slack >= 0.0 && gamma_slack.is_finite()) {
            return Err(Error::InvalidInstance(
                "slack cost must be finite and non-negative".into(),
            ));
        }
        Ok(Self { cost, gamma_slack })
    }

    /// Slack cost set to the solver's default perturbation for this size.
    pub fn with_default_gamma(cost: DMatrix<f64>) -> Result<Self> {
        let (n, m) = cost.shape();
        Self::new(cost, default_gamma(n + m, n * m + m))
    }

    /// Costs drawn i.i.d. uniform on `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, gamma_slack: f64) -> Result<Self> {
        let cost = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
        Self::new(cost, gamma_slack)
    }

    pub fn templates(&self) -> usize {
        self.cost.nrows()
    }

    pub fn proposals(&self) -> usize {
        self.cost.ncols()
    }

    pub fn num_vars(&self) -> usize {
        self.templates() * self.proposals() + self.proposals()
    }

    /// Strictly interior feasible point: `X = 1/m`, `s = 1 − n/m`.
    /// Equals the boundary value 0 on the slacks when `n = m`.
    pub fn uniform_point(&self) -> DVector<f64> {
        let (n, m) = self.cost.shape();
        let mut x = DVector::from_element(n * m + m, 1.0 / m as f64);
        for j in 0..m {
            x[n * m + j] = 1.0 - n as f64 / m as f64;
        }
        x
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: MatchingFile = serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))?;
        let n = f.c.len();
        let m = f.c.first().map_or(0, Vec::len);
        if f.c.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInstance("ragged cost matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| f.c[i][j]), f.gamma)
    }

    pub fn to_json(&self) -> String {
        let f = MatchingFile {
            c: self.cost.row_iter().map(|r| r.iter().copied().collect()).collect(),
            gamma: self.gamma_slack,
        };
        serde_json::to_string_pretty(&f).expect("matching serializes")
    }
}

/// Standard form with `X` row-major followed by the slacks: `nm + m`
/// variables and `n + m` equalities (row sums, then column sums + slack).
pub fn build_matching_lp(inst: &MatchingInstance) -> Result<StandardFormLP> {
    let (n, m) = inst.cost.shape();
    lp::finite(inst.cost.as_slice(), "C")?;
    let vars = n * m + m;
    let mut a = DMatrix::zeros(n + m, vars);
    for i in 0..n {
        for j in 0..m {
            a[(i, i * m + j)] = 1.0;
            a[(n + j, i * m + j)] = 1.0;
        }
    }
    for j in 0..m {
        a[(n + j, n * m + j)] = 1.0;
    }
    let b = DVector::from_element(n + m, 1.0);
    let c = DVector::from_fn(vars, |k, _| {
        if k < n * m {
            inst.cost[(k / m, k % m)]
        } else {
            inst.gamma_slack
        }
    });
    let lp = StandardFormLP::new(a, b, c);
    debug_assert!(lp::feasibility_residual(&lp, &inst.uniform_point()).unwrap() <= 1e-10);
    Ok(lp)
}

/// Greedy rounding of a relaxed solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMatching {
    pub map: Vec<usize>,
    /// Continuous `X` block, `n × m`.
    pub block: DMatrix<f64>,
    pub slack: DVector<f64>,
}

impl DecodedMatching {
    pub fn assignment(&self, cost: &DMatrix<f64>) -> Assignment {
        let total = self.map.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        Assignment {
            map: self.map.clone(),
            cost: total,
        }
    }
}

/// Repeatedly fixes the largest remaining entry of `X`, scanning rows then
/// columns so ties go to the lowest indices.
pub fn decode_matching(x: &DVector<f64>, n: usize, m: usize) -> Result<DecodedMatching> {
    if n > m || x.len() != n * m + m {
        return Err(Error::DimensionMismatch {
            what: "matching solution",
            expected: n * m + m,
            found: x.len(),
        });
    }
    let block = DMatrix::from_fn(n, m, |i, j| x[i * m + j]);
    let slack = DVector::from_fn(m, |j, _| x[n * m + j]);
    let mut map = vec![usize::MAX; n];
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    for _ in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| !row_used[i]) {
            for j in (0..m).filter(|&j| !col_used[j]) {
                if best.is_none_or(|(bi, bj)| block[(i, j)] > block[(bi, bj)]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("free row and column remain");
        map[i] = j;
        row_used[i] = true;
        col_used[j] = true;
    }
    Ok(DecodedMatching { map, block, slack })
}

/// 0/1 solution vector of an assignment: `X[i, map[i]] = 1` and each slack
/// is 1 on unmatched columns.
pub fn embed_assignment(map: &[usize], n: usize, m: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n * m + m);
    for j in 0..m {
        x[n * m + j] = 1.0;
    }
    for (i, &j) in map.iter().enumerate() {
        x[i * m + j] = 1.0;
        x[n * m + j] = 0.0;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{enumerate_vertices, hungarian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dimensions() {
        let inst = MatchingInstance::new(DMatrix::from_element(2, 3, 0.5), 0.1).unwrap();
        let lp = build_matching_lp(&inst).unwrap();
        assert_eq!((lp.rows(), lp.cols()), (5, 9));
        let big = MatchingInstance::new(DMatrix::from_element(5, 50, 0.5), 0.1).unwrap();
        let lp = build_matching_lp(&big).unwrap();
        assert_eq!((lp.rows(), lp.cols()), (55, 300));
    }

    #[test]
    fn one_by_one_is_fully_constrained() {
        let inst = MatchingInstance::new(DMatrix::from_element(1, 1, 5.0), 0.1).unwrap();
        let lp = build_matching_lp(&inst).unwrap();
        assert_eq!(lp.a, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        let v = enumerate_vertices(&lp).unwrap();
        assert_eq!(v.x_star, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(v.objective, 5.0);
        assert_eq!(v.vertices, 1);
    }

    #[test]
    fn rejects_more_templates_than_proposals() {
        assert!(MatchingInstance::new(DMatrix::zeros(3, 2), 0.1).is_err());
    }

    #[test]
    fn cost_vector_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = MatchingInstance::random(&mut rng, 3, 7, 0.2).unwrap();
        let lp = build_matching_lp(&inst).unwrap();
        let back = DMatrix::from_fn(3, 7, |i, j| lp.c[i * 7 + j]);
        assert_eq!(back, inst.cost);
        assert!(lp.c.rows(21, 7).iter().all(|&g| g == 0.2));
    }

    #[test]
    fn uniform_point_is_feasible() {
        for (n, m) in [(1, 1), (2, 3), (5, 50), (4, 4)] {
            let inst = MatchingInstance::new(DMatrix::from_element(n, m, 1.0), 0.1).unwrap();
            let lp = build_matching_lp(&inst).unwrap();
            assert!(lp::feasibility_residual(&lp, &inst.uniform_point()).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn decode_examples() {
        let x = DVector::from_vec(vec![0.9, 0.1, 0.2, 0.8, 0.0, 0.0]);
        assert_eq!(decode_matching(&x, 2, 2).unwrap().map, vec![0, 1]);
        let tie = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0]);
        assert_eq!(decode_matching(&tie, 2, 2).unwrap().map, vec![0, 1]);
        assert!(decode_matching(&tie, 2, 3).is_err());
    }

    #[test]
    fn decode_inverts_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(1..5);
            let m = rng.random_range(n..8);
            let mut cols: Vec<usize> = (0..m).collect();
            for i in 0..n {
                let k = rng.random_range(i..m);
                cols.swap(i, k);
            }
            let map = cols[..n].to_vec();
            let x = embed_assignment(&map, n, m);
            assert_eq!(decode_matching(&x, n, m).unwrap().map, map);
        }
    }

    #[test]
    fn two_by_three_vertex_objective() {
        // the optimum leaves one proposal unmatched: 0.1 + 0.1 + γ·1
        let cost = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.9, 0.9, 0.1, 0.9]);
        for gamma in [0.05, 0.3, 1.0] {
            let inst = MatchingInstance::new(cost.clone(), gamma).unwrap();
            let v = enumerate_vertices(&build_matching_lp(&inst).unwrap()).unwrap();
            assert!((v.objective - (0.2 + gamma)).abs() < 1e-12);
            let x = decode_matching(&v.x_star, 2, 3).unwrap();
            assert_eq!(x.map, vec![0, 1]);
            assert_eq!(x.map, hungarian(&cost).map);
        }
    }

    #[test]
    fn json_round_trip() {
        let inst = MatchingInstance::new(DMatrix::from_row_slice(1, 2, &[0.25, 0.5]), 0.125).unwrap();
        assert_eq!(MatchingInstance::from_json(&inst.to_json()).unwrap(), inst);
        assert!(MatchingInstance::from_json(r#"{"C": [[1, 2], [3]], "gamma": 0.1}"#).is_err());
    }
}
