//! Cross-sample location calibration, label-switching resolution and the
//! final point classification.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ChainState, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedDataset {
    /// `y - shift`
    pub y_tilde: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub shift: DMatrix<f64>,
}

fn check_chain(chain: &[ChainState], data: &Dataset) -> Result<()> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    for s in chain {
        let dims_ok = s.labels.len() == data.n()
            && s.log_weights.nrows() == data.n_samples()
            && s.clusters.iter().all(|c| c.xi.len() == data.n_samples() && c.xi0.len() == data.p());
        if !dims_ok {
            return Err(Error::invalid(format!(
                "snapshot at iteration {} does not match the data dimensions",
                s.iteration
            )));
        }
    }
    Ok(())
}

/// Shifts every observation by the chain average of `ξ_{j,T_i} - ξ_{0,T_i}`,
/// which integrates over assignment uncertainty. Labels are the majority
/// vote of the chain as given.
pub fn calibrate(chain: &[ChainState], data: &Dataset) -> Result<CalibratedDataset> {
    check_chain(chain, data)?;
    let p = data.p();
    let n_snap = chain.len() as f64;
    let shifts: Vec<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let j = data.sample_of()[i];
            let mut acc = vec![0.0; p];
            for s in chain {
                let c = &s.clusters[s.labels[i]];
                for a in 0..p {
                    acc[a] += c.xi[j][a] - c.xi0[a];
                }
            }
            acc.iter().map(|v| v / n_snap).collect()
        })
        .collect();
    let shift = DMatrix::from_fn(data.n(), p, |i, a| shifts[i][a]);
    let y_tilde = DMatrix::from_fn(data.n(), p, |i, a| data.row(i)[a] - shift[(i, a)]);
    Ok(CalibratedDataset {
        y_tilde,
        labels: classify(chain),
        shift,
    })
}

/// Minimum-cost perfect matching on a square integer cost matrix
/// (potentials form of the Hungarian method, `O(n³)`). Returns `assign` with
/// row `r` matched to column `assign[r]`.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is a virtual start
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_row = vec![0usize; n + 1];
    for row in 1..=n {
        col_row[0] = row;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
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
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if col_row[j] > 0 {
            assign[col_row[j] - 1] = j - 1;
        }
    }
    assign
}

/// Number of observations whose permuted snapshot label differs from the
/// reference.
pub fn disagreement(reference: &[usize], labels: &[usize], perm: &[usize]) -> usize {
    reference.iter().zip(labels).filter(|(r, l)| perm[**l] != **r).count()
}

/// Permutation `perm[old] = new` of `0..k` minimizing disagreement between
/// `perm ∘ labels` and `reference`.
///
/// Only labels used by either classification enter the assignment problem.
/// Mapping snapshot label `b` to reference label `a` costs the number of
/// `b`-observations whose reference label is not `a`; padding rows cost
/// nothing and padding columns cost the full count. Labels left over are
/// paired with the free targets in increasing order.
pub fn matching_permutation(reference: &[usize], labels: &[usize], k: usize) -> Vec<usize> {
    let mut used_snap = vec![false; k];
    let mut used_ref = vec![false; k];
    for (&r, &l) in reference.iter().zip(labels) {
        used_ref[r] = true;
        used_snap[l] = true;
    }
    let rows: Vec<usize> = (0..k).filter(|&b| used_snap[b]).collect();
    let cols: Vec<usize> = (0..k).filter(|&a| used_ref[a]).collect();
    let n = rows.len().max(cols.len());
    let mut row_of = vec![usize::MAX; k];
    for (r, &b) in rows.iter().enumerate() {
        row_of[b] = r;
    }
    let mut col_of = vec![usize::MAX; k];
    for (c, &a) in cols.iter().enumerate() {
        col_of[a] = c;
    }
    let mut matches = vec![vec![0i64; n]; n];
    let mut size = vec![0i64; n];
    for (&r, &l) in reference.iter().zip(labels) {
        matches[row_of[l]][col_of[r]] += 1;
        size[row_of[l]] += 1;
    }
    let cost: Vec<Vec<i64>> = (0..n)
        .map(|r| (0..n).map(|c| size[r] - matches[r][c]).collect())
        .collect();
    let assign = hungarian(&cost);

    let mut perm = vec![usize::MAX; k];
    let mut taken = vec![false; k];
    for (r, &b) in rows.iter().enumerate() {
        let c = assign[r];
        if c < cols.len() {
            perm[b] = cols[c];
            taken[cols[c]] = true;
        }
    }
    let mut free = (0..k).filter(|&a| !taken[a]);
    for slot in perm.iter_mut() {
        if *slot == usize::MAX {
            *slot = free.next().expect("as many free targets as unassigned labels");
        }
    }
    perm
}

/// Aligns every snapshot's labels and cluster-indexed parameters with the
/// last snapshot.
pub fn relabel(chain: &mut [ChainState]) {
    let Some(last) = chain.last() else { return };
    let reference = last.labels.clone();
    let last_idx = chain.len() - 1;
    chain[..last_idx].par_iter_mut().for_each(|s| {
        let perm = matching_permutation(&reference, &s.labels, s.k());
        if perm.iter().enumerate().any(|(a, &b)| a != b) {
            s.permute(&perm);
        }
    });
}

/// Per-observation majority vote over snapshots; ties go to the smaller
/// label.
pub fn classify(chain: &[ChainState]) -> Vec<usize> {
    let Some(first) = chain.first() else { return Vec::new() };
    let n = first.labels.len();
    let k = first.k();
    (0..n)
        .into_par_iter()
        .map_init(
            || vec![0u32; k],
            |votes, i| {
                for s in chain {
                    votes[s.labels[i]] += 1;
                }
                let mut best = 0;
                for l in 0..k {
                    if votes[l] > votes[best] {
                        best = l;
                    }
                }
                for s in chain {
                    votes[s.labels[i]] = 0;
                }
                best
            },
        )
        .collect()
}
