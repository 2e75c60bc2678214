//! Observations, hyperparameters and the latent state of one sweep.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{self, SpdFactor};
use crate::error::{Error, Result};
use crate::sn::SnShape;

/// `n` observations in `p` dimensions, each tagged with a sample index in
/// `0..n_samples`. Rows are stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    p: usize,
    sample_of: Vec<usize>,
    n_samples: usize,
    sample_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: &DMatrix<f64>, sample_of: Vec<usize>, n_samples: usize) -> Result<Self> {
        let n = y.nrows();
        let p = y.ncols();
        let mut values = Vec::with_capacity(n * p);
        for i in 0..n {
            values.extend(y.row(i).iter());
        }
        let names = (1..=n_samples).map(|j| j.to_string()).collect();
        Self::from_rows(values, p, sample_of, names)
    }

    /// Builds a dataset from row-major values. `sample_names[j]` labels sample
    /// index `j` in outputs.
    pub fn from_rows(
        values: Vec<f64>,
        p: usize,
        sample_of: Vec<usize>,
        sample_names: Vec<String>,
    ) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidData("at least one marker column is required".into()));
        }
        if values.len() != sample_of.len() * p {
            return Err(Error::InvalidData(format!(
                "{} values do not form {} rows of {} columns",
                values.len(),
                sample_of.len(),
                p
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value in row {}", pos / p)));
        }
        let n_samples = sample_names.len();
        let mut seen = vec![false; n_samples];
        for (i, &j) in sample_of.iter().enumerate() {
            if j >= n_samples {
                return Err(Error::InvalidData(format!(
                    "row {i}: sample index {j} out of range 0..{n_samples}"
                )));
            }
            seen[j] = true;
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidData(format!("sample {j} has no observations")));
        }
        Ok(Dataset {
            values,
            p,
            sample_of,
            n_samples,
            sample_names,
        })
    }

    /// A dataset with `n_samples` samples and no observations; the sampler
    /// then explores the prior.
    pub fn empty(n_samples: usize, p: usize) -> Self {
        Dataset {
            values: Vec::new(),
            p,
            sample_of: Vec::new(),
            n_samples,
            sample_names: (1..=n_samples).map(|j| j.to_string()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.sample_of.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_of(&self) -> &[usize] {
        &self.sample_of
    }

    pub fn sample_names(&self) -> &[String] {
        &self.sample_names
    }

    pub fn with_sample_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_samples {
            return Err(Error::InvalidData("sample name count mismatch".into()));
        }
        self.sample_names = names;
        Ok(self)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn y(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.p, &self.values)
    }

    /// Observation counts per sample.
    pub fn sample_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_samples];
        for &j in &self.sample_of {
            c[j] += 1;
        }
        c
    }

    pub fn pooled_mean(&self) -> DVector<f64> {
        let n = self.n().max(1) as f64;
        let mut m = DVector::zeros(self.p);
        for i in 0..self.n() {
            for (d, v) in self.row(i).iter().enumerate() {
                m[d] += v;
            }
        }
        m / n
    }

    pub fn pooled_covariance(&self) -> DMatrix<f64> {
        let mean = self.pooled_mean();
        let mut s = DMatrix::zeros(self.p, self.p);
        for i in 0..self.n() {
            let r = DVector::from_column_slice(self.row(i)) - &mean;
            s += &r * r.transpose();
        }
        s / (self.n().max(2) - 1) as f64
    }

    /// Returns a copy with replaced values and identical sample structure.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_rows(values, self.p, self.sample_of.clone(), self.sample_names.clone())
    }
}

/// Fixed hyperparameters. Inverse-Wishart scales follow the convention
/// `X ~ W⁻¹(ν, Ψ)` with `E[X] = Ψ / (ν - p - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Truncation level: the maximal number of clusters.
    pub k: usize,
    /// Coarsening exponent of the power likelihood, in `(0, 1]`.
    pub zeta: f64,
    pub a_eta: f64,
    pub b_eta: f64,
    /// Prior mean of grand locations.
    pub b0: DVector<f64>,
    /// Prior covariance of grand locations.
    pub big_b0: DMatrix<f64>,
    /// Inverse-Wishart dof and scale for the cluster scale `Σ`.
    pub m: f64,
    pub lambda: DMatrix<f64>,
    /// Inverse-Wishart dof and scale for the cross-sample dispersion `E`.
    pub nu0: f64,
    pub e0: DMatrix<f64>,
    /// Symmetrised-KL cutoff below which two clusters are merged.
    pub merge_threshold: f64,
    /// Particles per cluster.
    pub particles: usize,
}

pub const DEFAULT_ZETA: f64 = 0.2;
pub const DEFAULT_K: usize = 150;
pub const DEFAULT_PARTICLES: usize = 20;
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.25;

impl Hyper {
    /// Data-scaled defaults: priors centred on the pooled mean with spreads
    /// set from the pooled marginal variances.
    pub fn from_data(data: &Dataset) -> Self {
        let p = data.p();
        let var = if data.n() >= 2 {
            data.pooled_covariance().diagonal().map(|v| if v > 0.0 { v } else { 1.0 })
        } else {
            DVector::from_element(p, 1.0)
        };
        let diag = DMatrix::from_diagonal(&var);
        let pf = p as f64;
        Hyper {
            k: DEFAULT_K,
            zeta: DEFAULT_ZETA,
            a_eta: 1.0,
            b_eta: 1.0,
            b0: data.pooled_mean(),
            big_b0: &diag * 4.0,
            m: pf + 2.0,
            lambda: &diag * 0.1,
            nu0: pf + 2.0,
            e0: &diag * 0.1,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            particles: DEFAULT_PARTICLES,
        }
    }

    pub fn dim(&self) -> usize {
        self.b0.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad("zeta must lie in (0, 1]");
        }
        if self.k < 1 {
            return bad("K must be at least 1");
        }
        if self.particles < 2 {
            return bad("at least 2 particles are required");
        }
        if !(self.a_eta > 0.0 && self.b_eta > 0.0) {
            return bad("a_eta and b_eta must be positive");
        }
        let pf = p as f64;
        if !(self.m > pf - 1.0) || !(self.nu0 > pf - 1.0) {
            return bad("inverse-Wishart degrees of freedom must exceed p - 1");
        }
        if !(self.merge_threshold >= 0.0) {
            return bad("merge_threshold must be non-negative");
        }
        if self.b0.len() != p
            || self.big_b0.shape() != (p, p)
            || self.lambda.shape() != (p, p)
            || self.e0.shape() != (p, p)
        {
            return bad("hyperparameter dimensions do not match the data");
        }
        for (name, mat) in [("B0", &self.big_b0), ("Lambda", &self.lambda), ("E0", &self.e0)] {
            if (mat - mat.transpose()).abs().max() > 1e-12 * mat.abs().max().max(1.0) {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
            SpdFactor::new(mat).map_err(|e| Error::invalid(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Skew-normal block of one cluster in augmented form, plus its hierarchical
/// location structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// Sample-specific locations `ξ_{j,k}`, one per sample.
    pub xi: Vec<DVector<f64>>,
    /// Grand location `ξ_{0,k}`.
    pub xi0: DVector<f64>,
    pub g: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// Dispersion of sample locations around the grand location.
    pub e: DMatrix<f64>,
}

impl ClusterParams {
    pub fn shape(&self) -> Result<SnShape> {
        SnShape::from_augmented(&self.g, &self.psi)
    }

    /// Scale matrix `Σ = G + ψψᵀ`.
    pub fn sigma(&self) -> DMatrix<f64> {
        &self.g + dist::outer(&self.psi)
    }

    /// Element-wise mean of a non-empty set of cluster parameters.
    pub fn mean_of<'a>(items: impl IntoIterator<Item = &'a ClusterParams>) -> ClusterParams {
        let mut it = items.into_iter();
        let first = it.next().expect("at least one particle");
        let mut acc = first.clone();
        let mut count = 1.0;
        for c in it {
            for (a, b) in acc.xi.iter_mut().zip(&c.xi) {
                *a += b;
            }
            acc.xi0 += &c.xi0;
            acc.g += &c.g;
            acc.psi += &c.psi;
            acc.e += &c.e;
            count += 1.0;
        }
        let s = 1.0 / count;
        for a in acc.xi.iter_mut() {
            *a *= s;
        }
        acc.xi0 *= s;
        acc.g *= s;
        acc.psi *= s;
        acc.e *= s;
        acc
    }

    pub fn approx_eq(&self, other: &ClusterParams, tol: f64) -> bool {
        let close = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).abs().max() <= tol;
        let closev = |a: &DVector<f64>, b: &DVector<f64>| (a - b).abs().max() <= tol;
        self.xi.iter().zip(&other.xi).all(|(a, b)| closev(a, b))
            && closev(&self.xi0, &other.xi0)
            && close(&self.g, &other.g)
            && closev(&self.psi, &other.psi)
            && close(&self.e, &other.e)
    }
}

/// Complete latent state after one sweep. Cluster parameters are the
/// particle-cloud means.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub iteration: usize,
    /// `J × K` log mixture weights; each row exponentiates onto the simplex.
    pub log_weights: DMatrix<f64>,
    /// Cluster assignment per observation, in `0..K`.
    pub labels: Vec<usize>,
    pub clusters: Vec<ClusterParams>,
    pub eta: f64,
    /// Particle-mean latent half-normal scale per observation.
    pub z: Vec<f64>,
}

/// Occupancy of clusters overall and per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    pub total: Vec<usize>,
    /// `per_sample[j][k]`
    pub per_sample: Vec<Vec<usize>>,
}

impl Counts {
    pub fn from_labels(labels: &[usize], sample_of: &[usize], n_samples: usize, k: usize) -> Self {
        let mut total = vec![0; k];
        let mut per_sample = vec![vec![0; k]; n_samples];
        for (&t, &j) in labels.iter().zip(sample_of) {
            total[t] += 1;
            per_sample[j][t] += 1;
        }
        Counts { total, per_sample }
    }

    pub fn active(&self) -> usize {
        self.total.iter().filter(|&&c| c > 0).count()
    }
}

impl ChainState {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn weights(&self) -> DMatrix<f64> {
        self.log_weights.map(f64::exp)
    }

    pub fn counts(&self, data: &Dataset) -> Counts {
        Counts::from_labels(&self.labels, data.sample_of(), data.n_samples(), self.k())
    }

    /// Checks the simplex, positive-definiteness and label-range invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let k = self.k();
        for (j, row) in self.log_weights.row_iter().enumerate() {
            let s: f64 = row.iter().map(|l| l.exp()).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("weights of sample {j} sum to {s}")));
            }
        }
        if let Some(i) = self.labels.iter().position(|&t| t >= k) {
            return Err(Error::invalid(format!("label of observation {i} out of range")));
        }
        for (c, cl) in self.clusters.iter().enumerate() {
            for (name, m) in [("G", &cl.g), ("E", &cl.e)] {
                if (m - m.transpose()).abs().max() > 1e-9 * m.abs().max() {
                    return Err(Error::invalid(format!("{name} of cluster {c} is not symmetric")));
                }
                SpdFactor::new(m).map_err(|e| Error::invalid(format!("{name} of cluster {c}: {e}")))?;
            }
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        Ok(())
    }

    /// Applies `perm[old] = new` to labels and every cluster-indexed field.
    pub fn permute(&mut self, perm: &[usize]) {
        let k = self.k();
        assert_eq!(perm.len(), k);
        for t in self.labels.iter_mut() {
            *t = perm[*t];
        }
        let mut clusters = self.clusters.clone();
        let mut lw = self.log_weights.clone();
        for old in 0..k {
            clusters[perm[old]] = self.clusters[old].clone();
            lw.set_column(perm[old], &self.log_weights.column(old));
        }
        self.clusters = clusters;
        self.log_weights = lw;
    }
}

/// Population of `M` particles for one cluster. `z[m][r]` is particle `m`'s
/// latent draw for the `r`-th member observation (`members[r]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub particles: Vec<ClusterParams>,
    pub members: Vec<usize>,
    pub z: Vec<Vec<f64>>,
    /// Normalized importance log-weights of the last sweep.
    pub log_weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn replicate(params: &ClusterParams, m: usize) -> Self {
        ParticleCloud {
            particles: vec![params.clone(); m],
            members: Vec::new(),
            z: vec![Vec::new(); m],
            log_weights: vec![-(m as f64).ln(); m],
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn mean(&self) -> ClusterParams {
        ClusterParams::mean_of(&self.particles)
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        dist::normalize_log_weights(&self.log_weights).unwrap_or_default()
    }
}

/// Builds the initial state and one particle cloud per cluster.
///
/// Grand locations come from k-means++ seeding on the pooled data; every
/// cluster starts with the pooled covariance as `G`, zero skew, the prior
/// mean of `E` (or `E0` when that mean is undefined), uniform weights and
/// `η = a_η / b_η`. Assignments are drawn from their conditional given these
/// parameters; `z` is standard half-normal.
pub fn init_state<R: Rng + ?Sized>(
    data: &Dataset,
    hyper: &Hyper,
    rng: &mut R,
) -> Result<(ChainState, Vec<ParticleCloud>)> {
    let p = data.p();
    hyper.validate(p)?;
    let k = hyper.k;
    let n = data.n();
    let n_samples = data.n_samples();
    if n < k {
        log::warn!("{n} observations for {k} clusters; some clusters start empty");
    }

    let centers = kmeans_pp_centers(data, hyper, k, rng)?;

    let pf = p as f64;
    let g0 = if n > p {
        let c = data.pooled_covariance();
        if SpdFactor::new(&c).is_ok() {
            c
        } else {
            prior_scale_mean(hyper)
        }
    } else {
        prior_scale_mean(hyper)
    };
    let e_init = if hyper.nu0 > pf + 1.0 {
        &hyper.e0 / (hyper.nu0 - pf - 1.0)
    } else {
        hyper.e0.clone()
    };
    let clusters: Vec<ClusterParams> = centers
        .into_iter()
        .map(|c| ClusterParams {
            xi: vec![c.clone(); n_samples],
            xi0: c,
            g: g0.clone(),
            psi: DVector::zeros(p),
            e: e_init.clone(),
        })
        .collect();

    let log_weights = DMatrix::from_element(n_samples, k, -(k as f64).ln());

    let shape = SnShape::from_augmented(&g0, &DVector::zeros(p))?;
    let mut labels = Vec::with_capacity(n);
    let mut logp = vec![0.0; k];
    let mut scratch = vec![0.0; p];
    for i in 0..n {
        let y = data.row(i);
        let j = data.sample_of()[i];
        for (c, cl) in clusters.iter().enumerate() {
            logp[c] = log_weights[(j, c)] + shape.log_density_with(y, cl.xi[j].as_slice(), &mut scratch);
        }
        labels.push(sample_categorical_log(&logp, rng).ok_or(Error::NoFeasibleCluster { observation: i })?);
    }

    let z: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v.abs()
        })
        .collect();

    let clouds = clusters
        .iter()
        .map(|c| ParticleCloud::replicate(c, hyper.particles))
        .collect();

    let state = ChainState {
        iteration: 0,
        log_weights,
        labels,
        clusters,
        eta: hyper.a_eta / hyper.b_eta,
        z,
    };
    Ok((state, clouds))
}

fn prior_scale_mean(hyper: &Hyper) -> DMatrix<f64> {
    let pf = hyper.dim() as f64;
    if hyper.m > pf + 1.0 {
        &hyper.lambda / (hyper.m - pf - 1.0)
    } else {
        hyper.lambda.clone()
    }
}

/// k-means++ seeding: the first center uniformly, later ones proportional to
/// squared distance to the nearest chosen center. With no data the centers
/// are prior draws of the grand location.
fn kmeans_pp_centers<R: Rng + ?Sized>(
    data: &Dataset,
    hyper: &Hyper,
    k: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let n = data.n();
    if n == 0 {
        let bf = SpdFactor::new(&hyper.big_b0)?;
        return Ok((0..k).map(|_| dist::mvn_sample(&hyper.b0, &bf, rng)).collect());
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centers.push(DVector::from_column_slice(data.row(first)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq(data.row(i), data.row(first))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(data.row(i), &c));
        }
        centers.push(DVector::from_vec(c));
    }
    Ok(centers)
}

/// Draws an index from unnormalized log-probabilities (max-subtracted).
/// Returns `None` when every entry is `-inf`.
pub fn sample_categorical_log<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> Option<usize> {
    pick_log(logp, rng.random::<f64>())
}

/// Inverse-CDF pick from unnormalized log-probabilities with a given uniform
/// `u ∈ [0, 1)`.
pub fn pick_log(logp: &[f64], u: f64) -> Option<usize> {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = logp.iter().map(|l| (l - max).exp()).sum();
    let mut u = u * total;
    let mut last = 0;
    for (i, l) in logp.iter().enumerate() {
        let w = (l - max).exp();
        if w > 0.0 {
            last = i;
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    Some(last)
}

/// `ζ · Σ_i ln Σ_k π_{j(i),k} SN(y_i; ξ_{j(i),k}, G_k, ψ_k)`: the coarsened
/// mixture log-likelihood with assignments marginalized out.
pub fn power_loglik(state: &ChainState, data: &Dataset, hyper: &Hyper) -> Result<f64> {
    let shapes: Vec<SnShape> = state.clusters.iter().map(|c| c.shape()).collect::<Result<_>>()?;
    let k = state.k();
    let mut scratch = vec![0.0; data.p()];
    let mut terms = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..data.n() {
        let j = data.sample_of()[i];
        let y = data.row(i);
        for c in 0..k {
            terms[c] = state.log_weights[(j, c)]
                + shapes[c].log_density_with(y, state.clusters[c].xi[j].as_slice(), &mut scratch);
        }
        total += dist::log_sum_exp(&terms);
    }
    Ok(hyper.zeta * total)
}
