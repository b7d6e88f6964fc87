//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

fn check(cost: &[Vec<f64>]) -> Result<usize> {
    let cols = cost.first().map_or(0, Vec::len);
    for (r, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Length {
                what: format!("cost matrix row {r}"),
                expected: cols,
                actual: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost { row: r, col: c });
        }
    }
    Ok(cols)
}

/// Solves for a `rows <= cols` matrix; returns the column of every row.
fn hungarian(cost: &[Vec<f64>], rows: usize, cols: usize) -> Vec<usize> {
    // 1-based potentials; index 0 is the virtual column.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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

    let mut col_of = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] > 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Minimum-total-cost matching of size `min(rows, cols)`, sorted by row.
pub fn solve(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let cols = check(cost)?;
    let rows = cost.len();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let mut pairs: Vec<(usize, usize)> = if rows <= cols {
        hungarian(cost, rows, cols)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|c| cost.iter().map(|row| row[c]).collect())
            .collect();
        hungarian(&t, cols, rows)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    Ok(pairs)
}

/// Optimal assignment followed by gating: pairs costing more than `max_cost`
/// are moved to the unmatched lists. A matrix with no rows has no known
/// column count, so `unmatched_cols` is empty for it.
pub fn assign(cost: &[Vec<f64>], max_cost: f64) -> Result<Assignment> {
    let pairs = solve(cost)?;
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut matches = Vec::with_capacity(pairs.len());
    for (r, c) in pairs {
        if cost[r][c] <= max_cost {
            row_used[r] = true;
            col_used[c] = true;
            matches.push((r, c));
        }
    }
    Ok(Assignment {
        matches,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
    })
}
