use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, SolveResult, SolverConfig, StandardFormLP};
use crate::solver::solve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Gaussian { sigma: f64 },
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            Kernel::Gaussian { sigma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

/// Hyperparameters shared by every binary problem of a multiclass fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    #[serde(rename = "C")]
    pub c_reg: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Linear,
            c_reg: 1.0,
            big_m: 0.001,
            gamma: None,
        }
    }
}

/// Binary ℓ1-SVM training problem with labels in `{−1, +1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmInstance {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    #[serde(flatten)]
    pub params: SvmParams,
}

impl SvmInstance {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>, params: SvmParams) -> Result<Self> {
        let inst = Self { points, labels, params };
        inst.check()?;
        Ok(inst)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        if self.points.len() != self.labels.len() {
            return bad(format!("{} points but {} labels", self.points.len(), self.labels.len()));
        }
        if let Some(k) = self.labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return bad(format!("label {k} is not ±1"));
        }
        if !self.labels.contains(&1.0) || !self.labels.contains(&-1.0) {
            return bad("both classes need at least one point".into());
        }
        let dim = self.points[0].len();
        if self.points.iter().any(|p| p.len() != dim) {
            return bad("points have different dimensions".into());
        }
        if let Kernel::Gaussian { sigma } = self.params.kernel {
            if !(sigma > 0.0) {
                return bad("gaussian kernel needs sigma > 0".into());
            }
        }
        if !(self.params.c_reg > 0.0) || !(self.params.big_m > 0.0) {
            return bad("C and M must be positive".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gram(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        let k = DMatrix::from_fn(n, n, |i, j| self.params.kernel.eval(&self.points[i], &self.points[j]));
        match k.iter().position(|v| !v.is_finite()) {
            Some(idx) => Err(Error::KernelDegenerate {
                row: idx % n,
                col: idx / n,
            }),
            None => Ok(k),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: SvmInstance = serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))?;
        inst.check()?;
        Ok(inst)
    }
}

/// Column offsets of the SVM LP:
/// `[α₁, α₂, s, b₁, b₂, ξ, z, l, p, q, r]`, all blocks of length `n`
/// except the two bias scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvmLayout {
    pub n: usize,
}

impl SvmLayout {
    pub fn alpha1(&self) -> usize {
        0
    }
    pub fn alpha2(&self) -> usize {
        self.n
    }
    pub fn s(&self) -> usize {
        2 * self.n
    }
    pub fn b1(&self) -> usize {
        3 * self.n
    }
    pub fn b2(&self) -> usize {
        3 * self.n + 1
    }
    pub fn xi(&self) -> usize {
        3 * self.n + 2
    }
    pub fn z(&self) -> usize {
        4 * self.n + 2
    }
    pub fn l(&self) -> usize {
        5 * self.n + 2
    }
    pub fn p(&self) -> usize {
        6 * self.n + 2
    }
    pub fn q(&self) -> usize {
        7 * self.n + 2
    }
    pub fn r(&self) -> usize {
        8 * self.n + 2
    }
    pub fn num_vars(&self) -> usize {
        9 * self.n + 2
    }
    pub fn num_rows(&self) -> usize {
        4 * self.n
    }

    /// Feasible point with a zero classifier: `ξ = 1`, `r = 1`, rest 0.
    pub fn witness(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.num_vars());
        for i in 0..self.n {
            x[self.xi() + i] = 1.0;
            x[self.r() + i] = 1.0;
        }
        x
    }
}

/// Standard-form ℓ1-SVM.
///
/// With `fᵢ = Σⱼ yⱼ K(xᵢ,xⱼ)(α₁ⱼ − α₂ⱼ)`, row blocks are
///
/// ```text
/// yᵢ(fᵢ + b₁ − b₂) + ξᵢ − M zᵢ − lᵢ = 1
/// fᵢ − sᵢ + pᵢ = 0
/// fᵢ + sᵢ − qᵢ = 0
/// zᵢ + rᵢ = 1
/// ```
///
/// and the cost is `Σ s + C Σ (ξ + 2z)`; every other column costs zero.
pub fn build_l1svm_lp(inst: &SvmInstance) -> Result<StandardFormLP> {
    inst.check()?;
    let n = inst.len();
    let k = inst.gram()?;
    let lay = SvmLayout { n };
    let y = &inst.labels;
    let big_m = inst.params.big_m;
    let mut a = DMatrix::zeros(lay.num_rows(), lay.num_vars());
    let mut b = DVector::zeros(lay.num_rows());
    for i in 0..n {
        let (hinge, lo, hi, ind) = (i, n + i, 2 * n + i, 3 * n + i);
        for j in 0..n {
            let kij = y[j] * k[(i, j)];
            for (row, scale) in [(hinge, y[i]), (lo, 1.0), (hi, 1.0)] {
                a[(row, lay.alpha1() + j)] += scale * kij;
                a[(row, lay.alpha2() + j)] -= scale * kij;
            }
        }
        a[(hinge, lay.b1())] = y[i];
        a[(hinge, lay.b2())] = -y[i];
        a[(hinge, lay.xi() + i)] = 1.0;
        a[(hinge, lay.z() + i)] = -big_m;
        a[(hinge, lay.l() + i)] = -1.0;
        b[hinge] = 1.0;

        a[(lo, lay.s() + i)] = -1.0;
        a[(lo, lay.p() + i)] = 1.0;

        a[(hi, lay.s() + i)] = 1.0;
        a[(hi, lay.q() + i)] = -1.0;

        a[(ind, lay.z() + i)] = 1.0;
        a[(ind, lay.r() + i)] = 1.0;
        b[ind] = 1.0;
    }
    let mut c = DVector::zeros(lay.num_vars());
    for i in 0..n {
        c[lay.s() + i] = 1.0;
        c[lay.xi() + i] = inst.params.c_reg;
        c[lay.z() + i] = 2.0 * inst.params.c_reg;
    }
    let lp = StandardFormLP::new(a, b, c);
    let witness_residual = lp::feasibility_residual(&lp, &lay.witness())?;
    if witness_residual > 1e-10 {
        return Err(Error::InvalidInstance(format!(
            "feasibility witness has residual {witness_residual:.3e}"
        )));
    }
    Ok(lp)
}

/// Kernel classifier `sign(Σⱼ yⱼ αⱼ K(x, xⱼ) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmClassifier {
    pub alpha: DVector<f64>,
    pub bias: f64,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub kernel: Kernel,
}

impl SvmClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .points
            .iter()
            .zip(&self.labels)
            .zip(self.alpha.iter())
            .map(|((p, y), a)| y * a * self.kernel.eval(x, p))
            .sum();
        sum + self.bias
    }

    /// `+1`, `−1`, or `0` on the decision boundary.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let d = self.decision(x);
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    pub fn accuracy(&self, points: &[Vec<f64>], labels: &[f64]) -> f64 {
        let hits = points.iter().zip(labels).filter(|(p, &y)| self.predict(p) == y).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Reads `α = α₁ − α₂` and `b = b₁ − b₂` off an LP solution.
pub fn decode_svm(x: &DVector<f64>, inst: &SvmInstance) -> Result<SvmClassifier> {
    let n = inst.len();
    let lay = SvmLayout { n };
    if x.len() != lay.num_vars() {
        return Err(Error::DimensionMismatch {
            what: "svm solution",
            expected: lay.num_vars(),
            found: x.len(),
        });
    }
    Ok(SvmClassifier {
        alpha: DVector::from_fn(n, |j, _| x[lay.alpha1() + j] - x[lay.alpha2() + j]),
        bias: x[lay.b1()] - x[lay.b2()],
        points: inst.points.clone(),
        labels: inst.labels.clone(),
        kernel: inst.params.kernel,
    })
}

/// Builds, solves and decodes. `inst.params.gamma` overrides `cfg.gamma`.
pub fn fit_svm(inst: &SvmInstance, cfg: &SolverConfig) -> Result<(SvmClassifier, SolveResult)> {
    let lp = build_l1svm_lp(inst)?;
    let mut cfg = cfg.clone();
    if inst.params.gamma.is_some() {
        cfg.gamma = inst.params.gamma;
    }
    let res = solve(&lp, &cfg, None)?;
    Ok((decode_svm(&res.x, inst)?, res))
}

/// One binary problem per unordered class pair `(a, b)`, `a < b`; class `a`
/// is labelled `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseProblem {
    pub classes: usize,
    pub pairs: Vec<(usize, usize, SvmInstance)>,
}

pub fn pairwise_multiclass(
    points: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    params: SvmParams,
) -> Result<PairwiseProblem> {
    if classes < 2 {
        return Err(Error::InvalidInstance("need at least two classes".into()));
    }
    if points.len() != labels.len() {
        return Err(Error::InvalidInstance("points and labels differ in length".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInstance(format!("label {bad} out of range")));
    }
    if let Some(empty) = (0..classes).find(|c| !labels.contains(c)) {
        return Err(Error::EmptyClass(empty));
    }
    let mut pairs = Vec::with_capacity(classes * (classes - 1) / 2);
    for a in 0..classes {
        for b in a + 1..classes {
            let (pts, ys): (Vec<_>, Vec<_>) = points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == a || l == b)
                .map(|(p, &l)| (p.clone(), if l == a { 1.0 } else { -1.0 }))
                .unzip();
            pairs.push((a, b, SvmInstance::new(pts, ys, params)?));
        }
    }
    Ok(PairwiseProblem { classes, pairs })
}

/// Majority vote over pairwise classifiers; ties go to the lowest class.
#[derive(Debug, Clone)]
pub struct PairwiseClassifier {
    pub classes: usize,
    pub voters: Vec<(usize, usize, SvmClassifier)>,
}

impl PairwiseClassifier {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.classes];
        for (a, b, clf) in &self.voters {
            if clf.decision(x) >= 0.0 {
                votes[*a] += 1;
            } else {
                votes[*b] += 1;
            }
        }
        // max_by_key keeps the last maximum, so scan in reverse
        (0..self.classes).rev().max_by_key(|&c| votes[c]).unwrap_or(0)
    }

    pub fn accuracy(&self, points: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = points.iter().zip(labels).filter(|(p, &l)| self.predict(p) == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Solves every pairwise problem (in parallel) and assembles the voter.
pub fn fit_pairwise(problem: &PairwiseProblem, cfg: &SolverConfig) -> Result<PairwiseClassifier> {
    let voters = problem
        .pairs
        .par_iter()
        .map(|(a, b, inst)| fit_svm(inst, cfg).map(|(clf, _)| (*a, *b, clf)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairwiseClassifier {
        classes: problem.classes,
        voters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::enumerate_vertices;

    fn two_points(c_reg: f64) -> SvmInstance {
        SvmInstance::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![1.0, -1.0],
            SvmParams {
                c_reg,
                ..SvmParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn variable_and_row_counts() {
        let inst = two_points(1.0);
        let lp = build_l1svm_lp(&inst).unwrap();
        assert_eq!((lp.cols(), lp.rows()), (20, 8));
        let ten = SvmInstance::new(
            (0..10).map(|i| vec![i as f64, 1.0]).collect(),
            (0..10).map(|i| if i < 5 { 1.0 } else { -1.0 }).collect(),
            SvmParams::default(),
        )
        .unwrap();
        let lp = build_l1svm_lp(&ten).unwrap();
        assert_eq!((lp.cols(), lp.rows()), (92, 40));
    }

    #[test]
    fn cost_blocks() {
        let inst = two_points(1.5);
        let lp = build_l1svm_lp(&inst).unwrap();
        let lay = SvmLayout { n: 2 };
        assert_eq!(lp.c[lay.s()], 1.0);
        assert_eq!(lp.c[lay.xi() + 1], 1.5);
        assert_eq!(lp.c[lay.z()], 3.0);
        assert_eq!(lp.c.iter().filter(|&&v| v == 0.0).count(), 20 - 6);
    }

    #[test]
    fn witness_is_feasible() {
        let lay = SvmLayout { n: 2 };
        let lp = build_l1svm_lp(&two_points(1.0)).unwrap();
        assert!(lp::feasibility_residual(&lp, &lay.witness()).unwrap() <= 1e-12);
    }

    #[test]
    fn balanced_alphas_give_zero_classifier() {
        let inst = two_points(1.0);
        let lay = SvmLayout { n: 2 };
        let mut x = DVector::from_element(lay.num_vars(), 0.3);
        x[lay.b1()] = 0.7;
        x[lay.b2()] = 0.7;
        let clf = decode_svm(&x, &inst).unwrap();
        assert_eq!(clf.decision(&[0.4, -2.0]), 0.0);
        assert_eq!(clf.decision(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn unit_hinge_weight_ties_with_the_zero_classifier() {
        // with C = 1 the ℓ1 penalty on f exactly cancels the hinge saving
        let lp = build_l1svm_lp(&two_points(1.0)).unwrap();
        let v = enumerate_vertices(&lp).unwrap();
        assert!((v.objective - 2.0).abs() < 1e-9);
        let lay = SvmLayout { n: 2 };
        assert!((lp.c.dot(&lay.witness()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_vertex_classifier_separates() {
        let inst = two_points(2.0);
        let v = enumerate_vertices(&build_l1svm_lp(&inst).unwrap()).unwrap();
        assert!((v.objective - 2.0).abs() < 1e-9);
        let clf = decode_svm(&v.x_star, &inst).unwrap();
        assert!(clf.decision(&[1.0, 0.0]) > 0.0);
        assert!(clf.decision(&[-1.0, 0.0]) < 0.0);
    }

    #[test]
    fn two_point_physarum_classifier_separates() {
        let inst = two_points(2.0);
        let (clf, res) = fit_svm(&inst, &SolverConfig::default().with_iters(200)).unwrap();
        assert!(clf.decision(&[1.0, 0.0]) > 0.0 && clf.decision(&[-1.0, 0.0]) < 0.0);
        assert_eq!(clf.accuracy(&inst.points, &inst.labels), 1.0);
        assert!(res.residual < 1e-6);
    }

    #[test]
    fn instance_validation() {
        let p = SvmParams::default();
        assert!(SvmInstance::new(vec![vec![0.0]], vec![1.0], p).is_err());
        assert!(SvmInstance::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.5], p).is_err());
        let g = SvmParams {
            kernel: Kernel::Gaussian { sigma: 0.0 },
            ..p
        };
        assert!(SvmInstance::new(vec![vec![0.0], vec![1.0]], vec![1.0, -1.0], g).is_err());
    }

    #[test]
    fn non_finite_kernel_is_reported() {
        let inst = SvmInstance::new(
            vec![vec![f64::INFINITY], vec![1.0]],
            vec![1.0, -1.0],
            SvmParams::default(),
        )
        .unwrap();
        assert!(matches!(build_l1svm_lp(&inst), Err(Error::KernelDegenerate { .. })));
    }

    #[test]
    fn json_schema() {
        let text = r#"{"points": [[1, 0], [-1, 0]], "labels": [1, -1],
                       "kernel": {"type": "gaussian", "sigma": 0.5}, "C": 1.0, "M": 0.001}"#;
        let inst = SvmInstance::from_json(text).unwrap();
        assert_eq!(inst.params.kernel, Kernel::Gaussian { sigma: 0.5 });
        assert_eq!(inst.params.big_m, 0.001);
        let back = SvmInstance::from_json(&serde_json::to_string(&inst).unwrap()).unwrap();
        assert_eq!(back, inst);
        let lin = SvmInstance::from_json(
            r#"{"points": [[1], [2]], "labels": [1, -1], "kernel": {"type": "linear"}, "C": 2, "M": 1}"#,
        )
        .unwrap();
        assert_eq!(lin.params.kernel, Kernel::Linear);
    }

    #[test]
    fn pairwise_counts_and_errors() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let two: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert_eq!(
            pairwise_multiclass(&pts, &two, 2, SvmParams::default())
                .unwrap()
                .pairs
                .len(),
            1
        );
        let five: Vec<usize> = (0..10).map(|i| i % 5).collect();
        assert_eq!(
            pairwise_multiclass(&pts, &five, 5, SvmParams::default())
                .unwrap()
                .pairs
                .len(),
            10
        );
        assert_eq!(
            pairwise_multiclass(&pts, &two, 3, SvmParams::default()).unwrap_err(),
            Error::EmptyClass(2)
        );
    }

    #[test]
    fn vote_ties_go_to_lowest_class() {
        let clf = |bias: f64| SvmClassifier {
            alpha: DVector::zeros(1),
            bias,
            points: vec![vec![0.0]],
            labels: vec![1.0],
            kernel: Kernel::Linear,
        };
        // 0 beats 1, 1 beats 2, 2 beats 0: one vote each
        let voter = PairwiseClassifier {
            classes: 3,
            voters: vec![(0, 1, clf(1.0)), (1, 2, clf(1.0)), (0, 2, clf(-1.0))],
        };
        assert_eq!(voter.predict(&[0.0]), 0);
    }
}
