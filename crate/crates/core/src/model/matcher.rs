//! Minimum-cost bipartite assignment (Kuhn-Munkres with potentials).

use crate::error::{DealError, Result};

/// Minimum-total-cost one-to-one assignment of size `min(rows, cols)` for a
/// row-major `rows x cols` cost matrix. Pairs are `(row, col)` sorted by row.
pub fn hungarian_match(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
    if cost.len() != rows * cols {
        return Err(DealError::Argument(format!(
            "cost has {} entries, expected {rows} x {cols}",
            cost.len()
        )));
    }
    if let Some(i) = cost.iter().position(|c| !c.is_finite()) {
        return Err(DealError::Argument(format!(
            "non-finite cost at ({}, {})",
            i / cols.max(1),
            i % cols.max(1)
        )));
    }
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    if rows > cols {
        let transposed: Vec<f64> = (0..cols).flat_map(|c| (0..rows).map(move |r| cost[r * cols + c])).collect();
        let mut pairs: Vec<(usize, usize)> = assign(&transposed, cols, rows).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(assign(cost, rows, cols))
}

/// Requires `n <= m`. Shortest augmenting paths with dual potentials, O(n^2 m).
fn assign(cost: &[f64], n: usize, m: usize) -> Vec<(usize, usize)> {
    let a = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // owner[j] is the row (1-based) assigned to column j, 0 if free
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}
