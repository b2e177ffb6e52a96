use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{self, StandardFormLP};

/// Largest column count the enumerator accepts.
pub const MAX_COLUMNS: usize = 24;
/// Largest number of candidate bases the enumerator accepts.
pub const MAX_BASES: u128 = 200_000;

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;
const SAME_VERTEX_TOL: f64 = 1e-9;
const TIE_GAP: f64 = 1e-9;

/// Best basic feasible solution found by exhaustive basis enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSolution {
    pub x_star: DVector<f64>,
    pub objective: f64,
    pub basis: Vec<usize>,
    /// No other distinct vertex has objective within `1e-9` of the best.
    pub unique: bool,
    /// Objective of the best vertex distinct from `x_star`, if any.
    pub second_best: Option<f64>,
    pub vertices: usize,
    /// Bases skipped because their square system was singular.
    pub singular_bases: usize,
}

impl VertexSolution {
    /// Gap between the best and second-best vertex objectives.
    pub fn delta(&self) -> Option<f64> {
        self.second_best.map(|s| s - self.objective)
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Row-reduces `[A | b]`, dropping dependent equalities.
fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (m, n) = a.shape();
    let mut aug = DMatrix::zeros(m, n + 1);
    aug.view_mut((0, 0), (m, n)).copy_from(a);
    aug.set_column(n, b);
    let scale = a.amax().max(1.0);
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let (piv, val) = (row..m)
            .map(|r| (r, aug[(r, col)].abs()))
            .fold((row, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if val <= PIVOT_TOL * scale {
            continue;
        }
        aug.swap_rows(row, piv);
        let p = aug[(row, col)];
        for r in 0..m {
            if r != row {
                let f = aug[(r, col)] / p;
                if f != 0.0 {
                    for k in 0..=n {
                        aug[(r, k)] -= f * aug[(row, k)];
                    }
                }
            }
        }
        row += 1;
    }
    let bscale = b.amax().max(1.0);
    if (row..m).any(|r| aug[(r, n)].abs() > 1e-9 * bscale) {
        return Err(Error::InfeasibleDetected);
    }
    let reduced = aug.rows(0, row).clone_owned();
    Ok((reduced.columns(0, n).clone_owned(), reduced.column(n).clone_owned()))
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn solve_basis(a: &DMatrix<f64>, b: &DVector<f64>, basis: &[usize]) -> Option<DVector<f64>> {
    let r = basis.len();
    let sq = DMatrix::from_fn(r, r, |i, j| a[(i, basis[j])]);
    let lu = sq.clone().full_piv_lu();
    let u = lu.u();
    let diag_max = (0..r).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
    let diag_min = (0..r).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(diag_min > PIVOT_TOL * diag_max.max(1e-300)) {
        return None;
    }
    let xb = lu.solve(b)?;
    let res = (&sq * &xb - b).norm();
    (xb.iter().all(|v| v.is_finite()) && res <= 1e-9 * (1.0 + b.norm())).then_some(xb)
}

/// Exhaustive search over bases of a small, bounded, feasible LP.
///
/// Dependent equality rows are removed first. Ties between equal-cost
/// vertices keep the lexicographically smallest basis.
pub fn enumerate_vertices(lp: &StandardFormLP) -> Result<VertexSolution> {
    lp::check(lp)?;
    let n = lp.cols();
    for j in 0..n {
        if lp.c[j] < 0.0 && lp.a.column(j).amax() == 0.0 {
            return Err(Error::UnboundedUnsupported { column: j });
        }
    }
    let (a, b) = independent_rows(&lp.a, &lp.b)?;
    let r = a.nrows();
    let bases = binomial(n, r);
    if n > MAX_COLUMNS || bases > MAX_BASES {
        return Err(Error::TooLarge { bases, columns: n });
    }

    let mut vertices: Vec<(f64, Vec<usize>, DVector<f64>)> = Vec::new();
    let mut singular = 0;
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        match solve_basis(&a, &b, &idx) {
            None => singular += 1,
            Some(xb) if xb.iter().all(|&v| v >= -FEAS_TOL) => {
                let mut x = DVector::zeros(n);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = xb[k].max(0.0);
                }
                let obj = lp.c.dot(&x);
                if !vertices.iter().any(|(_, _, y)| (y - &x).amax() <= SAME_VERTEX_TOL) {
                    vertices.push((obj, idx.clone(), x));
                }
            }
            Some(_) => {}
        }
        if r == 0 || !next_combination(&mut idx, n) {
            break;
        }
    }
    if vertices.is_empty() {
        return Err(Error::InfeasibleDetected);
    }
    // enumeration order is lexicographic, so a stable sort keeps the
    // smallest basis first among equal objectives
    vertices.sort_by(|p, q| p.0.total_cmp(&q.0));
    let count = vertices.len();
    let second_best = vertices.get(1).map(|v| v.0);
    let (objective, basis, x_star) = vertices.swap_remove(0);
    let unique = second_best.is_none_or(|s| s - objective > TIE_GAP);
    Ok(VertexSolution {
        x_star,
        objective,
        basis,
        unique,
        second_best,
        vertices: count,
        singular_bases: singular,
    })
}
