#![allow(dead_code)]

use coarsemix::sn::SnDirect;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `AAᵀ/p + I/2` rescaled by random marginal scales in `[0.2, 5]`.
pub fn random_spd<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let base: DMatrix<f64> = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
    let s = DVector::from_fn(p, |_, _| rng.random_range(0.2..5.0));
    DMatrix::from_fn(p, p, |i, j| base[(i, j)] * s[i] * s[j])
}

pub fn random_direct<R: Rng>(p: usize, rng: &mut R) -> SnDirect {
    let xi = DVector::from_fn(p, |_, _| rng.random_range(-10.0..10.0));
    let alpha = DVector::from_fn(p, |_, _| rng.random_range(-6.0..6.0));
    SnDirect::new(xi, random_spd(p, rng), alpha).unwrap()
}

/// Largest elementwise deviation relative to the largest magnitude of `a`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Kolmogorov–Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Asymptotic one-sample KS critical value at level 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.627_76 / (n as f64).sqrt()
}
