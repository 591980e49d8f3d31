//! Maximum-score linear assignment (Kuhn–Munkres, shortest augmenting path
//! form, `O(rows² · cols)`).
//!
//! Scores may be `-inf` to forbid a pairing. Among optimal assignments the
//! lexicographically smallest column vector (row 0 first) is returned.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("no complete assignment avoids the forbidden (-inf) entries")]
    Infeasible,
    #[error("score at ({row}, {col}) is {value}; only finite values or -inf are allowed")]
    InvalidScore { row: usize, col: usize, value: f64 },
    #[error("{rows} rows cannot be assigned to {cols} columns")]
    TooManyRows { rows: usize, cols: usize },
    #[error("ragged score matrix")]
    Ragged,
}

/// Relative tolerance under which two assignment totals count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

fn validate(score: &[Vec<f64>]) -> Result<usize, AssignmentError> {
    let cols = score.first().map_or(0, Vec::len);
    for (r, row) in score.iter().enumerate() {
        if row.len() != cols {
            return Err(AssignmentError::Ragged);
        }
        for (c, &v) in row.iter().enumerate() {
            if v.is_nan() || v == f64::INFINITY {
                return Err(AssignmentError::InvalidScore { row: r, col: c, value: v });
            }
        }
    }
    if score.len() > cols {
        return Err(AssignmentError::TooManyRows { rows: score.len(), cols });
    }
    Ok(cols)
}

/// Core solver on a cost matrix (minimization); `+inf` marks forbidden cells.
fn solve_min(cost: &[Vec<f64>], cols: usize) -> Result<Vec<usize>, AssignmentError> {
    let n = cost.len();
    let m = cols;
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(AssignmentError::Infeasible);
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

/// Sum of the chosen scores, accumulated in row order.
pub fn assignment_total(score: &[Vec<f64>], cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(r, &c)| score[r][c]).sum()
}

fn solve_max_raw(score: &[Vec<f64>], cols: usize) -> Result<Vec<usize>, AssignmentError> {
    let cost: Vec<Vec<f64>> = score.iter().map(|row| row.iter().map(|&s| -s).collect()).collect();
    solve_min(&cost, cols)
}

/// Best completion of `fixed` (columns for the first rows) over the
/// remaining rows, or `None` when infeasible.
fn complete(score: &[Vec<f64>], cols: usize, fixed: &[usize]) -> Option<Vec<usize>> {
    let mut taken = vec![false; cols];
    for &c in fixed {
        taken[c] = true;
    }
    let free: Vec<usize> = (0..cols).filter(|&c| !taken[c]).collect();
    let rest: Vec<Vec<f64>> = score[fixed.len()..].iter().map(|row| free.iter().map(|&c| row[c]).collect()).collect();
    let sub = solve_max_raw(&rest, free.len()).ok()?;
    let mut full = fixed.to_vec();
    full.extend(sub.into_iter().map(|c| free[c]));
    Some(full)
}

/// Maximum-total assignment of every row to a distinct column.
pub fn solve_max(score: &[Vec<f64>]) -> Result<Vec<usize>, AssignmentError> {
    let cols = validate(score)?;
    let mut best = solve_max_raw(score, cols)?;
    let target = assignment_total(score, &best);
    let tol = TIE_TOLERANCE * target.abs().max(1.0);
    for r in 0..score.len() {
        for c in 0..best[r] {
            if score[r][c] == f64::NEG_INFINITY || best[..r].contains(&c) {
                continue;
            }
            let mut fixed = best[..r].to_vec();
            fixed.push(c);
            if let Some(candidate) = complete(score, cols, &fixed) {
                if assignment_total(score, &candidate) >= target - tol {
                    best = candidate;
                    break;
                }
            }
        }
    }
    Ok(best)
}

/// Maximum-weight matching where `None` forbids a pair and rows or columns
/// may stay unmatched. The number of matched pairs is maximized first, then
/// the total weight.
pub fn solve_partial(weights: &[Vec<Option<f64>>]) -> Result<Vec<Option<usize>>, AssignmentError> {
    let rows = weights.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = weights[0].len();
    if weights.iter().any(|r| r.len() != cols) {
        return Err(AssignmentError::Ragged);
    }
    let max_abs = weights.iter().flatten().flatten().fold(0.0f64, |m, w| m.max(w.abs()));
    let bonus = (rows.min(cols) as f64 + 1.0) * (2.0 * max_abs + 1.0);
    let score: Vec<Vec<f64>> = weights
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut out: Vec<f64> = row.iter().map(|w| w.map_or(f64::NEG_INFINITY, |w| bonus + w)).collect();
            out.extend((0..rows).map(|k| if k == r { 0.0 } else { f64::NEG_INFINITY }));
            out
        })
        .collect();
    let assign = solve_max(&score)?;
    Ok(assign.into_iter().map(|c| (c < cols).then_some(c)).collect())
}
