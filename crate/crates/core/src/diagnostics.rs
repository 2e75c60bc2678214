//! Post-run summaries: cluster counts per sample, alignment of calibrated
//! samples, partition agreement, marginal histograms and the `ζ` sweep.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Hyper};
use crate::pipeline;
use crate::sampler::SamplerConfig;

/// Per sample, the number of labels whose share of that sample's
/// observations exceeds `min_weight`.
pub fn active_clusters(labels: &[usize], sample_of: &[usize], n_samples: usize, min_weight: f64) -> Vec<usize> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; k]; n_samples];
    let mut totals = vec![0usize; n_samples];
    for (&l, &j) in labels.iter().zip(sample_of) {
        counts[j][l] += 1;
        totals[j] += 1;
    }
    counts
        .iter()
        .zip(&totals)
        .map(|(row, &tot)| {
            row.iter()
                .filter(|&&c| c > 0 && c as f64 / tot as f64 > min_weight)
                .count()
        })
        .collect()
}

fn mean_spread(y: &DMatrix<f64>, sample_of: &[usize], n_samples: usize, labels: &[usize]) -> f64 {
    let p = y.ncols();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![DVector::<f64>::zeros(p); n_samples * k];
    let mut counts = vec![0usize; n_samples * k];
    for (i, (&l, &j)) in labels.iter().zip(sample_of).enumerate() {
        sums[j * k + l] += y.row(i).transpose();
        counts[j * k + l] += 1;
    }
    let mut total = 0.0;
    let mut clusters = 0usize;
    for c in 0..k {
        let n_c: usize = (0..n_samples).map(|j| counts[j * k + c]).sum();
        if n_c == 0 {
            continue;
        }
        let grand = (0..n_samples).fold(DVector::zeros(p), |acc, j| acc + &sums[j * k + c]) / n_c as f64;
        let mut acc = 0.0;
        let mut present = 0usize;
        for j in 0..n_samples {
            let m = counts[j * k + c];
            if m == 0 {
                continue;
            }
            acc += (&sums[j * k + c] / m as f64 - &grand).norm();
            present += 1;
        }
        total += acc / present as f64;
        clusters += 1;
    }
    if clusters == 0 {
        0.0
    } else {
        total / clusters as f64
    }
}

/// Average distance between per-sample cluster means and the pooled cluster
/// mean on calibrated data, relative to the same on raw data. Values below 1
/// mean the samples moved closer together.
pub fn alignment_score(raw: &Dataset, calibrated: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if calibrated.shape() != (raw.n(), raw.p()) || labels.len() != raw.n() {
        return Err(Error::invalid("calibrated data and labels must match the raw data"));
    }
    let before = mean_spread(&raw.y(), raw.sample_of(), raw.n_samples(), labels);
    let after = mean_spread(calibrated, raw.sample_of(), raw.n_samples(), labels);
    Ok(if before == 0.0 {
        if after == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        after / before
    })
}

/// Adjusted Rand index between two partitions of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut ra = vec![0u64; ka];
    let mut rb = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let sa: f64 = ra.iter().map(|&v| c2(v)).sum();
    let sb: f64 = rb.iter().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

/// Histogram densities of every marker in every sample on shared bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    /// `edges[marker]`, `bins + 1` increasing values
    pub edges: Vec<Vec<f64>>,
    /// `density[marker][sample][bin]`
    pub density: Vec<Vec<Vec<f64>>>,
}

/// Bins span the pooled range of each marker; a constant marker gets a unit
/// range centred on its value.
pub fn marginal_export(values: &DMatrix<f64>, sample_of: &[usize], n_samples: usize, bins: usize) -> Result<MarginalTable> {
    if bins < 2 {
        return Err(Error::invalid("at least 2 bins are required"));
    }
    if values.nrows() != sample_of.len() {
        return Err(Error::invalid("sample indices do not match the data"));
    }
    let mut per_sample = vec![0usize; n_samples];
    for &j in sample_of {
        per_sample[j] += 1;
    }
    let mut edges = Vec::with_capacity(values.ncols());
    let mut density = Vec::with_capacity(values.ncols());
    for col in values.column_iter() {
        let (mut lo, mut hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !(hi > lo) {
            let c = if lo.is_finite() { lo } else { 0.0 };
            lo = c - 0.5;
            hi = c + 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let e: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
        let mut counts = vec![vec![0usize; bins]; n_samples];
        for (&v, &j) in col.iter().zip(sample_of) {
            let b = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[j][b] += 1;
        }
        let d = counts
            .iter()
            .zip(&per_sample)
            .map(|(row, &n)| {
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / (n as f64 * width) })
                    .collect()
            })
            .collect();
        edges.push(e);
        density.push(d);
    }
    Ok(MarginalTable { edges, density })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub zeta: f64,
    /// active clusters per sample; empty when the run failed
    pub counts: Vec<usize>,
    pub constant: bool,
    pub alignment: Option<f64>,
    pub error: Option<String>,
}

/// Runs the full pipeline for each `ζ` and tabulates the per-sample cluster
/// counts. A row is flagged `constant` when every sample has the same count.
/// Failed runs are recorded and the sweep continues.
pub fn zeta_sweep(
    data: &Dataset,
    hyper: &Hyper,
    zetas: &[f64],
    config: &SamplerConfig,
    min_weight: f64,
) -> Vec<SweepRow> {
    zetas
        .iter()
        .map(|&zeta| {
            let mut h = hyper.clone();
            h.zeta = zeta;
            match pipeline::analyze(data, &h, config, min_weight) {
                Ok(a) => sweep_row(zeta, &a),
                Err(e) => SweepRow {
                    zeta,
                    counts: Vec::new(),
                    constant: false,
                    alignment: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub(crate) fn sweep_row(zeta: f64, a: &pipeline::Analysis) -> SweepRow {
    SweepRow {
        zeta,
        constant: is_constant(&a.active),
        counts: a.active.clone(),
        alignment: Some(a.alignment),
        error: None,
    }
}

pub fn is_constant(counts: &[usize]) -> bool {
    counts.windows(2).all(|w| w[0] == w[1])
}
