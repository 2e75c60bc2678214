//! Numerical building blocks shared by the kernel and the sampler: normal
//! CDFs in log space, SPD factorizations with jitter repair, and the Gaussian,
//! inverse-Wishart, Gamma/Dirichlet and truncated-normal distributions.

use std::f64::consts::{LN_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
///
/// Below -8 the asymptotic Mills-ratio series is used so the result does not
/// underflow for arguments far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * libm::erfc(x / SQRT_2)).ln_1p()
    } else if x > -8.0 {
        (0.5 * libm::erfc(-x / SQRT_2)).ln()
    } else {
        // ln φ(x) - ln(-x) + ln Σ_k (-1)^k (2k-1)!! / x^{2k}; at x = -8 the
        // 16th term is ~1e-12.
        let x2 = x * x;
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..16 {
            term *= -((2 * k - 1) as f64) / x2;
            series += term;
        }
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Standard normal log-density.
#[inline]
pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Log of the multivariate gamma function Γ_p(a).
pub fn ln_mvgamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut acc = pf * (pf - 1.0) / 4.0 * PI.ln();
    for j in 0..p {
        acc += ln_gamma(a - j as f64 / 2.0);
    }
    acc
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Turns log-weights into probabilities with max subtraction. Returns `None`
/// when every entry is `-inf`.
pub fn normalize_log_weights(logw: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(logw);
    if !lse.is_finite() {
        return None;
    }
    Some(logw.iter().map(|w| (w - lse).exp()).collect())
}

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// A matrix that fails factorization but whose smallest eigenvalue is within
/// `1e-10 · trace/p` of zero is repaired by adding `1e-9 · trace/p` to its
/// diagonal; anything further from PD is rejected.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
    log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let sym = (m + m.transpose()) * 0.5;
        if let Some(f) = Self::try_factor(sym.clone()) {
            return Ok(f);
        }
        let p = sym.nrows() as f64;
        let scale = sym.trace() / p;
        if scale <= 0.0 {
            return Err(Error::invalid("matrix is not positive definite"));
        }
        let min_eig = SymmetricEigen::new(sym.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * scale {
            return Err(Error::invalid(format!(
                "matrix is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        let mut repaired = sym;
        for i in 0..repaired.nrows() {
            repaired[(i, i)] += 1e-9 * scale;
        }
        Self::try_factor(repaired)
            .ok_or_else(|| Error::invalid("matrix is not positive definite after jitter"))
    }

    fn try_factor(m: DMatrix<f64>) -> Option<Self> {
        let chol = m.cholesky()?;
        let l = chol.unpack();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(SpdFactor { l, log_det })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Lower-triangular factor `L` with `M = L Lᵀ`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// Solves `L u = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let u = self.solve_lower(b);
        self.l
            .tr_solve_lower_triangular(&u)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let linv = self
            .l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cholesky factor has a positive diagonal");
        let inv = linv.transpose() * linv;
        (&inv + inv.transpose()) * 0.5
    }

    /// `xᵀ M⁻¹ x`.
    pub fn inv_quad(&self, x: &DVector<f64>) -> f64 {
        self.solve_lower(x).norm_squared()
    }
}

/// Draws from `N(mean, L Lᵀ)`.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &SpdFactor, rng: &mut R) -> DVector<f64> {
    let eps = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + cov.l() * eps
}

pub fn mvn_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdFactor) -> f64 {
    let d = x - mean;
    -0.5 * (x.len() as f64 * LN_2PI + cov.log_det() + cov.inv_quad(&d))
}

/// Draws `X ~ W⁻¹(dof, Ψ)` (density ∝ |X|^{-(dof+p+1)/2} exp(-tr(Ψ X⁻¹)/2))
/// through the Bartlett decomposition of the corresponding Wishart.
pub fn inv_wishart_sample<R: Rng + ?Sized>(dof: f64, scale: &SpdFactor, rng: &mut R) -> DMatrix<f64> {
    let p = scale.dim();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let shape = (dof - i as f64) / 2.0;
        let chi2 = 2.0 * Gamma::new(shape, 1.0).expect("dof > p - 1").sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // X = L (A Aᵀ)⁻¹ Lᵀ = (L A⁻ᵀ)(L A⁻ᵀ)ᵀ
    let a_inv_t = a
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .expect("bartlett factor has a positive diagonal")
        .transpose();
    let b = scale.l() * a_inv_t;
    let x = &b * b.transpose();
    (&x + x.transpose()) * 0.5
}

/// Log-density of `W⁻¹(dof, Ψ)` at `x`, with `x` already factored.
pub fn inv_wishart_log_pdf(x: &SpdFactor, dof: f64, scale: &SpdFactor) -> f64 {
    let p = x.dim();
    let pf = p as f64;
    let x_inv = x.inverse();
    let tr = (scale.matrix().component_mul(&x_inv)).sum();
    0.5 * dof * scale.log_det() - 0.5 * dof * pf * LN_2 - ln_mvgamma(p, dof / 2.0)
        - 0.5 * (dof + pf + 1.0) * x.log_det()
        - 0.5 * tr
}

/// Gamma(shape, rate) log-density.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `ln G` with `G ~ Gamma(shape, 1)`, accurate for very small shapes where the
/// variate itself would underflow.
pub fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// Log-probabilities of a Dirichlet(`alpha`) draw.
pub fn log_dirichlet_sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_variate(a, rng)).collect();
    let lse = log_sum_exp(&logs);
    logs.into_iter().map(|l| l - lse).collect()
}

/// Dirichlet log-density evaluated from log-probabilities.
pub fn dirichlet_log_pdf(log_p: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let mut acc = ln_gamma(a0);
    for (&lp, &a) in log_p.iter().zip(alpha) {
        acc += (a - 1.0) * lp - ln_gamma(a);
    }
    acc
}

/// Draws from `N(mean, sd²)` truncated to `[0, ∞)`.
///
/// Uses plain rejection when the truncation point is at or below the mean and
/// Robert's translated-exponential proposal otherwise, so the draw is exact in
/// both regimes.
pub fn truncated_normal_positive<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let a = -mean / sd;
    let x = if a <= 0.0 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            if x >= a {
                break x;
            }
        }
    } else {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        let exp = Exp::new(lambda).expect("positive rate");
        loop {
            let x = a + exp.sample(rng);
            let u: f64 = rng.random();
            if u <= (-0.5 * (x - lambda) * (x - lambda)).exp() {
                break x;
            }
        }
    };
    (mean + sd * x).max(0.0)
}

/// Log-density of `N(mean, sd²)` truncated to `[0, ∞)`.
pub fn truncated_normal_positive_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    log_norm_pdf((x - mean) / sd) - sd.ln() - log_norm_cdf(mean / sd)
}

/// Symmetrised outer-product helper: `v vᵀ`.
pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}
