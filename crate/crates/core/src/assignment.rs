//! Centralized assignment oracles used for regret accounting and for checking
//! the distributed auction: a Hungarian solver, an exhaustive enumerator, and
//! valuation helpers.
//!
//! Matrices are given as rows, `q[n][i - 1]` being the value of link `n` on
//! channel `i`. Both solvers break ties between optimal assignments the same
//! way, returning the lexicographically smallest channel vector.

use crate::error::{Error, Result};
use crate::model::SILENT;

/// Largest link count accepted by [`brute_force_optimal`].
pub const BRUTE_FORCE_MAX_LINKS: usize = 8;

/// An injective map from links to channels (`0` = silent) and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub channel_of: Vec<usize>,
    pub value: f64,
}

fn dims(q: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = q.len();
    let k = q.first().map_or(0, Vec::len);
    if q.iter().any(|r| r.len() != k) {
        return Err(Error::Config("matrix rows have unequal lengths".into()));
    }
    if q.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("matrix entries must be finite".into()));
    }
    if k < n {
        return Err(Error::Dimension { links: n, channels: k });
    }
    Ok((n, k))
}

/// Absolute tolerance under which two assignment values count as tied.
fn tie_tolerance(q: &[Vec<f64>]) -> f64 {
    let scale = q.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-9 * (q.len() as f64 * scale).max(1.0)
}

/// Minimum-cost perfect matching of a square cost matrix (shortest augmenting
/// paths with potentials, O(n³)). Returns the column of each row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based internally; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[r - 1][col - 1] - u[r] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for col in 1..=n {
        if row_of[col] != 0 {
            col_of[row_of[col] - 1] = col - 1;
        }
    }
    col_of
}

/// Maximum-weight assignment of `rows` (values over `cols` columns) by
/// negation and zero-padding to a square problem. Returns 0-based columns.
fn max_weight(rows: &[&[f64]], cols: usize) -> (Vec<usize>, f64) {
    if rows.is_empty() {
        return (Vec::new(), 0.0);
    }
    let mut cost = vec![vec![0.0; cols]; cols];
    for (r, row) in rows.iter().enumerate() {
        for c in 0..cols {
            cost[r][c] = -row[c];
        }
    }
    let col_of = hungarian_min(&cost);
    let picked: Vec<usize> = col_of[..rows.len()].to_vec();
    let value = picked.iter().enumerate().map(|(r, &c)| rows[r][c]).sum();
    (picked, value)
}

/// Optimal assignment value, without tie-breaking.
pub fn optimal_value(q: &[Vec<f64>]) -> Result<f64> {
    let (_, k) = dims(q)?;
    let rows: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
    Ok(max_weight(&rows, k).1)
}

/// Maximum-weight injective assignment of all links (Hungarian method), with
/// ties resolved to the lexicographically smallest channel vector.
pub fn solve_optimal(q: &[Vec<f64>]) -> Result<Assignment> {
    let (n, k) = dims(q)?;
    let tol = tie_tolerance(q);
    let all: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
    let best = max_weight(&all, k).1;

    // Fix links in order to the smallest channel that still admits an optimal completion.
    let mut free: Vec<usize> = (0..k).collect();
    let mut channel_of = Vec::with_capacity(n);
    let mut fixed = 0.0;
    for link in 0..n {
        let mut chosen = None;
        for (slot, &c) in free.iter().enumerate() {
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&x| x != c).collect();
            let rest: Vec<Vec<f64>> = q[link + 1..]
                .iter()
                .map(|row| rest_cols.iter().map(|&x| row[x]).collect())
                .collect();
            let rest_refs: Vec<&[f64]> = rest.iter().map(Vec::as_slice).collect();
            let completion = max_weight(&rest_refs, rest_cols.len()).1;
            if fixed + q[link][c] + completion >= best - tol {
                chosen = Some(slot);
                break;
            }
        }
        let slot = chosen.expect("an optimal completion always exists");
        let c = free.remove(slot);
        fixed += q[link][c];
        channel_of.push(c + 1);
    }
    let value = assignment_value(q, &channel_of)?;
    Ok(Assignment { channel_of, value })
}

/// Exact optimum by exhaustive enumeration of all injective channel vectors in
/// lexicographic order; the first maximum found wins ties.
pub fn brute_force_optimal(q: &[Vec<f64>]) -> Result<Assignment> {
    let (n, k) = dims(q)?;
    if n > BRUTE_FORCE_MAX_LINKS {
        return Err(Error::Size {
            max: BRUTE_FORCE_MAX_LINKS,
            got: n,
        });
    }
    let tol = tie_tolerance(q);
    let mut best: Option<Assignment> = None;
    for_each_assignment(q, k, |channels, value| {
        if best.as_ref().is_none_or(|b| value > b.value + tol) {
            best = Some(Assignment {
                channel_of: channels.to_vec(),
                value,
            });
        }
    });
    Ok(best.unwrap_or(Assignment {
        channel_of: Vec::new(),
        value: 0.0,
    }))
}

/// Visits every injective assignment of all links (channels 1-based) in
/// lexicographic order together with its value.
pub fn for_each_assignment(q: &[Vec<f64>], n_channels: usize, mut visit: impl FnMut(&[usize], f64)) {
    fn rec(
        q: &[Vec<f64>],
        k: usize,
        link: usize,
        used: &mut [bool],
        current: &mut Vec<usize>,
        value: f64,
        visit: &mut dyn FnMut(&[usize], f64),
    ) {
        if link == q.len() {
            visit(current, value);
            return;
        }
        for c in 0..k {
            if used[c] {
                continue;
            }
            used[c] = true;
            current.push(c + 1);
            rec(q, k, link + 1, used, current, value + q[link][c], visit);
            current.pop();
            used[c] = false;
        }
    }
    let mut used = vec![false; n_channels];
    let mut current = Vec::with_capacity(q.len());
    rec(q, n_channels, 0, &mut used, &mut current, 0.0, &mut visit);
}

/// Sum of the assigned entries; silent links contribute nothing.
pub fn assignment_value(q: &[Vec<f64>], channel_of: &[usize]) -> Result<f64> {
    let k = q.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for (link, &c) in channel_of.iter().enumerate() {
        if c == SILENT {
            continue;
        }
        if c > k || link >= q.len() {
            return Err(Error::Index {
                link,
                channel: c,
                channels: k,
            });
        }
        total += q[link][c - 1];
    }
    Ok(total)
}

/// True iff no two links share a (non-silent) channel.
pub fn is_injective(channel_of: &[usize]) -> bool {
    let mut seen = std::collections::HashSet::new();
    channel_of.iter().filter(|&&c| c != SILENT).all(|&c| seen.insert(c))
}

/// True iff the assignment is within `eps` of the optimum.
pub fn is_eps_optimal(q: &[Vec<f64>], channel_of: &[usize], eps: f64) -> Result<bool> {
    let best = optimal_value(q)?;
    let value = assignment_value(q, channel_of)?;
    Ok(best - value <= eps + tie_tolerance(q))
}
