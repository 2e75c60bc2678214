//! Synthetic multi-sample skew-normal mixtures with hierarchical locations,
//! and an asymmetric narrowing that makes them misspecified.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{self, SpdFactor};
use crate::error::{Error, Result};
use crate::model::{self, Dataset};
use crate::sn::SnDirect;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distortion {
    None,
    /// Per sample, cluster and coordinate, values below the median move
    /// toward it by factor `low`, values above by factor `high`.
    AsymmetricNarrowing { low: f64, high: f64 },
}

impl Default for Distortion {
    fn default() -> Self {
        Distortion::AsymmetricNarrowing { low: 0.5, high: 0.9 }
    }
}

/// Ground-truth design of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_samples: usize,
    pub p: usize,
    pub k_true: usize,
    /// `n_samples × k_true`, rows on the simplex.
    pub weights: DMatrix<f64>,
    pub xi0: Vec<DVector<f64>>,
    pub e: Vec<DMatrix<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub alpha: Vec<DVector<f64>>,
    pub n_per_sample: Vec<usize>,
    pub distortion: Distortion,
}

impl SimSpec {
    /// Three bivariate skew-normal clusters at the corners of a triangle with
    /// side 10, observed in three samples of 1000 points. Sample locations
    /// scatter around the grand ones with covariance `2I`, a root-mean-square
    /// shift of 2.
    pub fn replica() -> Self {
        let m = |a: f64, b: f64, c: f64| DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
        let v = |a: f64, b: f64| DVector::from_column_slice(&[a, b]);
        SimSpec {
            n_samples: 3,
            p: 2,
            k_true: 3,
            weights: DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5]),
            xi0: vec![v(0.0, 0.0), v(10.0, 0.0), v(5.0, 8.66)],
            e: vec![m(2.0, 0.0, 2.0); 3],
            sigma: vec![m(2.25, 0.3, 1.0), m(1.0, -0.4, 2.0), m(1.5, 0.2, 1.5)],
            alpha: vec![v(4.0, -2.0), v(-5.0, 3.0), v(2.0, 6.0)],
            n_per_sample: vec![1000; 3],
            distortion: Distortion::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (j, k, p) = (self.n_samples, self.k_true, self.p);
        if j == 0 || k == 0 || p == 0 {
            return Err(Error::invalid("J, K and p must be positive"));
        }
        if self.weights.shape() != (j, k) || self.n_per_sample.len() != j {
            return Err(Error::invalid("weights must be J × K and n_per_sample of length J"));
        }
        for row in self.weights.row_iter() {
            if row.iter().any(|w| *w < 0.0) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("weight rows must lie on the simplex"));
            }
        }
        if self.xi0.len() != k || self.e.len() != k || self.sigma.len() != k || self.alpha.len() != k {
            return Err(Error::invalid("per-cluster arrays must have K entries"));
        }
        for c in 0..k {
            SnDirect::new(self.xi0[c].clone(), self.sigma[c].clone(), self.alpha[c].clone())?;
            SpdFactor::new(&self.e[c])?;
        }
        if let Distortion::AsymmetricNarrowing { low, high } = self.distortion {
            if !(low > 0.0 && high > 0.0) {
                return Err(Error::invalid("narrowing factors must be positive"));
            }
        }
        Ok(())
    }
}

/// A generated data set with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    pub labels: Vec<usize>,
    /// `xi[j][k]`: true sample-specific location.
    pub xi: Vec<Vec<DVector<f64>>>,
    pub xi0: Vec<DVector<f64>>,
}

impl Simulated {
    /// True location shift `ξ_{j,k} - ξ_{0,k}` of every observation.
    pub fn true_shifts(&self) -> Vec<DVector<f64>> {
        (0..self.data.n())
            .map(|i| {
                let (j, k) = (self.data.sample_of()[i], self.labels[i]);
                &self.xi[j][k] - &self.xi0[k]
            })
            .collect()
    }
}

/// Draws sample locations, labels and observations. Rows are grouped by
/// sample in index order.
pub fn generate<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<Simulated> {
    spec.validate()?;
    let (nj, k, p) = (spec.n_samples, spec.k_true, spec.p);
    let mut xi = Vec::with_capacity(nj);
    for _ in 0..nj {
        let row: Vec<DVector<f64>> = (0..k)
            .map(|c| SpdFactor::new(&spec.e[c]).map(|f| dist::mvn_sample(&spec.xi0[c], &f, rng)))
            .collect::<Result<_>>()?;
        xi.push(row);
    }

    let n: usize = spec.n_per_sample.iter().sum();
    let mut values = vec![0.0; n * p];
    let mut labels = Vec::with_capacity(n);
    let mut sample_of = Vec::with_capacity(n);
    let mut offset = 0;
    for j in 0..nj {
        let logw: Vec<f64> = spec.weights.row(j).iter().map(|w| w.ln()).collect();
        let lab: Vec<usize> = (0..spec.n_per_sample[j])
            .map(|_| model::sample_categorical_log(&logw, rng).expect("weights on the simplex"))
            .collect();
        for c in 0..k {
            let rows: Vec<usize> = (0..lab.len()).filter(|&r| lab[r] == c).collect();
            if rows.is_empty() {
                continue;
            }
            let sn = SnDirect::new(xi[j][c].clone(), spec.sigma[c].clone(), spec.alpha[c].clone())?;
            let draws = sn.sample(rng, rows.len())?;
            for (d, &r) in rows.iter().enumerate() {
                for a in 0..p {
                    values[(offset + r) * p + a] = draws[(d, a)];
                }
            }
        }
        sample_of.extend(std::iter::repeat_n(j, lab.len()));
        offset += lab.len();
        labels.extend(lab);
    }
    let data = Dataset::from_rows(values, p, sample_of, (1..=nj).map(|j| format!("s{j}")).collect())?;
    Ok(Simulated {
        data,
        labels,
        xi,
        xi0: spec.xi0.clone(),
    })
}

/// Lower median: the `⌈n/2⌉`-th order statistic. Being a data value, it is a
/// fixed point of the contraction, so group medians survive distortion.
pub fn lower_median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[(xs.len() - 1) / 2]
}

/// Applies `distortion` within every (sample, label) group and coordinate:
/// `y ← med + f (y - med)` with `f = low` below the lower median `med` and
/// `high` above it.
pub fn distort(data: &Dataset, labels: &[usize], distortion: Distortion) -> Result<Dataset> {
    if labels.len() != data.n() {
        return Err(Error::InvalidData("labels do not match the data".into()));
    }
    let Distortion::AsymmetricNarrowing { low, high } = distortion else {
        return Ok(data.clone());
    };
    let p = data.p();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); data.n_samples() * k];
    for i in 0..data.n() {
        groups[data.sample_of()[i] * k + labels[i]].push(i);
    }
    let mut values = data.values().to_vec();
    for g in groups.iter().filter(|g| !g.is_empty()) {
        for a in 0..p {
            let mut col: Vec<f64> = g.iter().map(|&i| data.row(i)[a]).collect();
            let med = lower_median(&mut col);
            for &i in g {
                let y = data.row(i)[a];
                let f = if y < med { low } else { high };
                values[i * p + a] = med + f * (y - med);
            }
        }
    }
    data.with_values(values)
}
