//! Standard-form linear programs: `min cᵀx  s.t.  Ax = b, x ≥ 0`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense standard-form LP `(A, b, c)`.
///
/// Costs of any sign are legal here; the solver is responsible for
/// perturbing zero costs and flipping negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardFormLP {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub names: Option<Vec<String>>,
}

impl StandardFormLP {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Self {
        Self { a, b, c, names: None }
    }

    /// Builds an LP from row-major nested slices, mostly for tests and examples.
    pub fn from_rows(rows: &[&[f64]], b: &[f64], c: &[f64]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let a = DMatrix::from_fn(m, n, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN));
        Self::new(a, DVector::from_column_slice(b), DVector::from_column_slice(c))
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = Some(names);
        self
    }

    /// Number of equality constraints.
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Number of variables.
    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let file: LpFile = serde_json::from_str(text)?;
        Ok(file.into())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&LpFile::from(self)).expect("LP serializes")
    }
}

/// An LP whose shapes and entries have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedLp(StandardFormLP);

impl ValidatedLp {
    pub fn into_inner(self) -> StandardFormLP {
        self.0
    }
}

impl Deref for ValidatedLp {
    type Target = StandardFormLP;

    fn deref(&self) -> &StandardFormLP {
        &self.0
    }
}

/// Shape and finiteness checks. Feasibility is assumed, not verified.
pub fn validate(lp: StandardFormLP) -> Result<ValidatedLp> {
    check(&lp)?;
    Ok(ValidatedLp(lp))
}

pub(crate) fn check(lp: &StandardFormLP) -> Result<()> {
    let (m, n) = lp.a.shape();
    if m == 0 || n == 0 {
        return Err(Error::EmptyProblem);
    }
    if lp.b.len() != m {
        return Err(Error::DimensionMismatch {
            what: "b",
            expected: m,
            found: lp.b.len(),
        });
    }
    if lp.c.len() != n {
        return Err(Error::DimensionMismatch {
            what: "c",
            expected: n,
            found: lp.c.len(),
        });
    }
    if let Some(names) = &lp.names {
        if names.len() != n {
            return Err(Error::DimensionMismatch {
                what: "names",
                expected: n,
                found: names.len(),
            });
        }
    }
    // nalgebra storage is column-major; report the row-major index
    if let Some(k) = lp.a.iter().position(|v| !v.is_finite()) {
        let (i, j) = (k % m, k / m);
        return Err(Error::NonFiniteEntry {
            what: "A",
            index: i * n + j,
        });
    }
    finite(lp.b.as_slice(), "b")?;
    finite(lp.c.as_slice(), "c")?;
    Ok(())
}

pub(crate) fn finite(v: &[f64], what: &'static str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFiniteEntry { what, index }),
        None => Ok(()),
    }
}

fn check_len(lp: &StandardFormLP, x: &DVector<f64>) -> Result<()> {
    if x.len() != lp.cols() {
        return Err(Error::DimensionMismatch {
            what: "x",
            expected: lp.cols(),
            found: x.len(),
        });
    }
    Ok(())
}

/// `cᵀx`.
pub fn objective(lp: &StandardFormLP, x: &DVector<f64>) -> Result<f64> {
    check_len(lp, x)?;
    Ok(lp.c.dot(x))
}

/// `‖Ax − b‖₂`. Nonnegativity of `x` is not included.
pub fn feasibility_residual(lp: &StandardFormLP, x: &DVector<f64>) -> Result<f64> {
    check_len(lp, x)?;
    Ok((&lp.a * x - &lp.b).norm())
}

/// Knobs for the Physarum iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Iteration budget `K`.
    pub max_iters: usize,
    /// Euler step `h` in `(0, 1]`.
    pub step_size: f64,
    /// Projection floor `ε`; iterates never drop below it.
    pub clamp_floor: f64,
    /// Cost assigned to zero-cost coordinates. `None` picks `1 / (2√(m+n))`.
    pub gamma: Option<f64>,
    pub linsolve_tol: f64,
    /// Ridge added to `L`, relative to `trace(L)/m`.
    pub linsolve_reg: f64,
    pub residual_tol: f64,
    /// Seeds the uniform `(0,1)` initial point when none is supplied.
    pub seed: u64,
    /// Upper bound `M` on flipped (negative-cost) coordinates.
    pub flip_bound: Option<f64>,
    /// Stop once the residual and the objective have both settled.
    pub early_stop: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            step_size: 1.0,
            clamp_floor: 1e-8,
            gamma: None,
            linsolve_tol: 1e-10,
            linsolve_reg: 1e-10,
            residual_tol: 1e-8,
            seed: 0,
            flip_bound: None,
            early_stop: true,
        }
    }
}

impl SolverConfig {
    pub fn with_iters(mut self, k: usize) -> Self {
        self.max_iters = k;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.step_size = h;
        self
    }

    pub fn without_early_stop(mut self) -> Self {
        self.early_stop = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        self.validate_allow_zero_iters()
    }

    pub(crate) fn validate_allow_zero_iters(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return bad("step_size must lie in (0, 1]");
        }
        if !(self.clamp_floor > 0.0 && self.clamp_floor.is_finite()) {
            return bad("clamp_floor must be positive");
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return bad("gamma must be non-negative");
            }
        }
        if !(self.linsolve_tol > 0.0) {
            return bad("linsolve_tol must be positive");
        }
        if !(self.linsolve_reg >= 0.0 && self.linsolve_reg.is_finite()) {
            return bad("linsolve_reg must be non-negative");
        }
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        if let Some(m) = self.flip_bound {
            if !(m > 0.0 && m.is_finite()) {
                return bad("flip_bound must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    LinSolveFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
    pub linsolve_iters: usize,
    /// Smallest coordinate of the iterate in solver space.
    pub min_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    /// Objective under the original, unperturbed costs.
    pub objective: f64,
    pub residual: f64,
    pub status: SolveStatus,
    pub trace: Vec<TraceRecord>,
}

impl SolveResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Serialize, Deserialize)]
struct LpFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

impl From<LpFile> for StandardFormLP {
    fn from(f: LpFile) -> Self {
        let m = f.a.len();
        let n = f.a.first().map_or(0, Vec::len);
        // ragged rows become NaN so validation reports them
        let a = DMatrix::from_fn(m, n, |i, j| f.a[i].get(j).copied().unwrap_or(f64::NAN));
        let ragged = f.a.iter().any(|r| r.len() != n);
        let mut lp = StandardFormLP::new(a, DVector::from_vec(f.b), DVector::from_vec(f.c));
        if ragged {
            lp.a = DMatrix::from_element(m, n.max(1), f64::NAN);
        }
        lp.names = f.names;
        lp
    }
}

impl From<&StandardFormLP> for LpFile {
    fn from(lp: &StandardFormLP) -> Self {
        LpFile {
            a: lp.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: lp.b.iter().copied().collect(),
            c: lp.c.iter().copied().collect(),
            names: lp.names.clone(),
        }
    }
}

pub(crate) mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
