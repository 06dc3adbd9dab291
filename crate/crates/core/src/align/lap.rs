//! Square linear assignment.

use crate::engine::Mat;
use crate::error::{Error, Result};
use crate::symmetry::Permutation;

/// Shortest augmenting path with row/column potentials. Minimizes
/// `sum_i cost[i][assign[i]]` and returns `assign`.
fn hungarian_min(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // row_of[j]: row (1-based) matched to column j; 0 means free.
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    assign
}

fn check(cost: &Mat) -> Result<()> {
    if cost.rows != cost.cols {
        return Err(Error::NonSquare {
            rows: cost.rows,
            cols: cost.cols,
        });
    }
    if let Some(&bad) = cost.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(bad));
    }
    Ok(())
}

/// Values closer than this are treated as ties.
fn tie_tol(cost: &Mat) -> f64 {
    let scale = cost.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-10 * (1.0 + scale * cost.rows as f64)
}

/// Optimal value of `cost` restricted to the given rows and columns.
fn sub_optimum(cost: &Mat, rows: &[usize], cols: &[usize], sign: f64) -> f64 {
    let a = hungarian_min(rows.len(), |i, j| sign * cost.at(rows[i], cols[j]));
    a.iter().enumerate().map(|(i, &j)| cost.at(rows[i], cols[j])).sum()
}

/// Optimal assignment of rows to columns. Among optimal assignments the
/// lexicographically smallest one is returned, so the answer does not
/// depend on solver internals.
pub fn solve_lap(cost: &Mat, maximize: bool) -> Result<Permutation> {
    check(cost)?;
    let n = cost.rows;
    let sign = if maximize { -1.0 } else { 1.0 };
    let all: Vec<usize> = (0..n).collect();
    let best = sub_optimum(cost, &all, &all, sign);
    let tol = tie_tol(cost);
    let mut free: Vec<usize> = all.clone();
    let mut prefix = 0.0;
    let mut assign = Vec::with_capacity(n);
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (k, &j) in free.iter().enumerate() {
            let mut cols = free.clone();
            cols.remove(k);
            let total = prefix + cost.at(i, j) + sub_optimum(cost, &rest_rows, &cols, sign);
            if sign * (total - best) <= tol {
                chosen = Some(k);
                break;
            }
        }
        // Some candidate always reaches the optimum; fall back on rounding noise.
        let k = chosen.unwrap_or(0);
        let j = free.remove(k);
        prefix += cost.at(i, j);
        assign.push(j);
    }
    Permutation::new(assign)
}

/// Reference solver trying every permutation in lexicographic order.
pub fn solve_lap_exhaustive(cost: &Mat, maximize: bool) -> Result<Permutation> {
    check(cost)?;
    let n = cost.rows;
    let sign = if maximize { -1.0 } else { 1.0 };
    let tol = tie_tol(cost);
    let mut perm: Vec<usize> = (0..n).collect();
    let value = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum::<f64>();
    let mut best = perm.clone();
    let mut best_v = value(&perm);
    while next_permutation(&mut perm) {
        let v = value(&perm);
        if sign * (v - best_v) < -tol {
            best_v = v;
            best.clone_from(&perm);
        }
    }
    Permutation::new(best)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
