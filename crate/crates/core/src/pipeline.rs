//! Fit, relabel, classify and calibrate in one call.

use crate::calibrate::{self, CalibratedDataset};
use crate::diagnostics;
use crate::error::Result;
use crate::model::{Dataset, Hyper};
use crate::sampler::{self, Chain, SamplerConfig};

/// Default share of a sample below which a label is not counted as an active
/// cluster in summaries.
pub const DEFAULT_MIN_WEIGHT: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Analysis {
    /// Relabeled chain.
    pub chain: Chain,
    pub labels: Vec<usize>,
    pub calibrated: CalibratedDataset,
    /// Active clusters per sample at the requested `min_weight`.
    pub active: Vec<usize>,
    pub alignment: f64,
}

pub fn analyze(data: &Dataset, hyper: &Hyper, config: &SamplerConfig, min_weight: f64) -> Result<Analysis> {
    let mut chain = sampler::run(data, hyper, config)?;
    summarize(data, &mut chain, min_weight).map(|(labels, calibrated, active, alignment)| Analysis {
        chain,
        labels,
        calibrated,
        active,
        alignment,
    })
}

/// Relabels `chain` in place and derives labels, calibrated data, active
/// cluster counts and the alignment score.
pub fn summarize(
    data: &Dataset,
    chain: &mut Chain,
    min_weight: f64,
) -> Result<(Vec<usize>, CalibratedDataset, Vec<usize>, f64)> {
    calibrate::relabel(&mut chain.snapshots);
    let calibrated = calibrate::calibrate(&chain.snapshots, data)?;
    let labels = calibrated.labels.clone();
    let active = diagnostics::active_clusters(&labels, data.sample_of(), data.n_samples(), min_weight);
    let alignment = diagnostics::alignment_score(data, &calibrated.y_tilde, &labels)?;
    Ok((labels, calibrated, active, alignment))
}
