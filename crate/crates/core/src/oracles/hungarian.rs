use nalgebra::DMatrix;

use crate::problems::Assignment;

/// Exact minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`), via shortest augmenting paths with potentials.
///
/// # Panics
///
/// If there are more rows than columns.
pub fn hungarian(cost: &DMatrix<f64>) -> Assignment {
    let (n, m) = cost.shape();
    assert!(n <= m, "hungarian needs rows <= cols, got {n}x{m}");
    if n == 0 {
        return Assignment {
            map: Vec::new(),
            cost: 0.0,
        };
    }
    // 1-based potentials; column 0 is the virtual root
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut map = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            map[owner[j] - 1] = j - 1;
        }
    }
    let total = map.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Assignment { map, cost: total }
}
