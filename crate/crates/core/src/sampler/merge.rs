//! Merging of clusters whose moment-matched Gaussians are close in
//! symmetrised Kullback–Leibler divergence.

use std::f64::consts::FRAC_2_PI;

use nalgebra::{DMatrix, DVector};

use crate::dist::{self, SpdFactor};
use crate::error::Result;
use crate::model::{ChainState, ClusterParams};

/// Mean `ξ₀ + ψ√(2/π)` and covariance `G + (1 - 2/π)ψψᵀ` of a cluster's
/// skew-normal at its grand location.
pub fn gaussian_approx(c: &ClusterParams) -> (DVector<f64>, DMatrix<f64>) {
    let mean = &c.xi0 + &c.psi * FRAC_2_PI.sqrt();
    let cov = &c.g + dist::outer(&c.psi) * (1.0 - FRAC_2_PI);
    (mean, cov)
}

/// `KL(P‖Q) + KL(Q‖P)` for two Gaussians.
pub fn symmetrized_kl(m1: &DVector<f64>, s1: &DMatrix<f64>, m2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let p = m1.len() as f64;
    let f1 = SpdFactor::new(s1)?;
    let f2 = SpdFactor::new(s2)?;
    let i1 = f1.inverse();
    let i2 = f2.inverse();
    let d = m1 - m2;
    let tr = i2.component_mul(s1).sum() + i1.component_mul(s2).sum();
    Ok(0.5 * tr - p + 0.5 * (f1.inv_quad(&d) + f2.inv_quad(&d)))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges every connected group of occupied clusters linked by pairwise
/// divergence `≤ threshold`. Each group keeps the parameters of its most
/// populated member (lowest index on ties), takes over the others'
/// observations and receives their summed weight; absorbed clusters get
/// weight zero. Returns `(absorbed, keeper)` pairs.
pub fn merge_clusters(state: &mut ChainState, threshold: f64) -> Result<Vec<(usize, usize)>> {
    let k = state.k();
    let mut counts = vec![0usize; k];
    for &t in &state.labels {
        counts[t] += 1;
    }
    let occupied: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    let approx: Vec<(DVector<f64>, DMatrix<f64>)> =
        occupied.iter().map(|&c| gaussian_approx(&state.clusters[c])).collect();

    let mut parent: Vec<usize> = (0..k).collect();
    for a in 0..occupied.len() {
        for b in a + 1..occupied.len() {
            let kl = symmetrized_kl(&approx[a].0, &approx[a].1, &approx[b].0, &approx[b].1)?;
            if kl <= threshold {
                let ra = find(&mut parent, occupied[a]);
                let rb = find(&mut parent, occupied[b]);
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    // keeper of each group: largest count, then lowest index
    let mut keeper = vec![usize::MAX; k];
    for &c in &occupied {
        let root = find(&mut parent, c);
        let cur = keeper[root];
        if cur == usize::MAX || counts[c] > counts[cur] {
            keeper[root] = c;
        }
    }
    let mut target: Vec<usize> = (0..k).collect();
    let mut merged = Vec::new();
    for &c in &occupied {
        let kc = keeper[find(&mut parent, c)];
        if kc != c {
            target[c] = kc;
            merged.push((c, kc));
        }
    }
    if merged.is_empty() {
        return Ok(merged);
    }
    for t in state.labels.iter_mut() {
        *t = target[*t];
    }
    for mut row in state.log_weights.row_iter_mut() {
        for &(absorbed, kc) in &merged {
            let (a, b) = (row[absorbed], row[kc]);
            row[kc] = dist::log_sum_exp(&[a, b]);
            row[absorbed] = f64::NEG_INFINITY;
        }
    }
    Ok(merged)
}
