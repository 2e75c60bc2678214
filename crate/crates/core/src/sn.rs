//! Multivariate skew-normal kernel in its three interchangeable
//! parametrizations.
//!
//! * [`SnDirect`] `(ξ, Σ, α)`: density `2 φ_p(y; ξ, Σ) Φ(αᵀ ω⁻¹ (y - ξ))`
//!   with `ω = diag(√Σ_ii)` and correlation `Ω = ω⁻¹ Σ ω⁻¹`.
//! * [`SnDelta`] `(ξ, Σ, δ)`: `δ = Ωα / √(1 + αᵀΩα)`, the correlation between
//!   the latent half-normal `Z` and the symmetric part.
//! * [`SnAugmented`] `(ξ, G, ψ)`: `ψ = ωδ`, `G = Σ - ψψᵀ`, so that
//!   `y | z ~ N(ξ + ψ|z|, G)`. This is the form the sampler stores.

use std::f64::consts::{FRAC_2_PI, LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dist::{self, SpdFactor, LN_2PI};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SnDirect {
    pub xi: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnDelta {
    pub xi: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnAugmented {
    pub xi: DVector<f64>,
    pub g: DMatrix<f64>,
    pub psi: DVector<f64>,
}

fn check_dims(xi: &DVector<f64>, m: &DMatrix<f64>, v: &DVector<f64>) -> Result<usize> {
    let p = xi.len();
    if p == 0 || m.nrows() != p || m.ncols() != p || v.len() != p {
        return Err(Error::invalid(format!(
            "dimension mismatch: xi {}, matrix {}x{}, vector {}",
            p,
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    if xi.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite location or skewness"));
    }
    Ok(p)
}

fn marginal_scales(sigma: &DMatrix<f64>) -> DVector<f64> {
    sigma.diagonal().map(f64::sqrt)
}

fn correlation(sigma: &DMatrix<f64>, omega: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |i, j| {
        sigma[(i, j)] / (omega[i] * omega[j])
    })
}

impl SnDirect {
    pub fn new(xi: DVector<f64>, sigma: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let params = SnDirect { xi, sigma, alpha };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(&self.xi, &self.sigma, &self.alpha)?;
        SpdFactor::new(&self.sigma)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// Marginal scales `ω_i = √Σ_ii`.
    pub fn omega(&self) -> DVector<f64> {
        marginal_scales(&self.sigma)
    }

    /// Correlation matrix `Ω = ω⁻¹ Σ ω⁻¹`.
    pub fn correlation(&self) -> DMatrix<f64> {
        correlation(&self.sigma, &self.omega())
    }

    pub fn to_delta(&self) -> Result<SnDelta> {
        self.validate()?;
        let omega_c = self.correlation();
        let oa = &omega_c * &self.alpha;
        let q = self.alpha.dot(&oa);
        let delta = oa / (1.0 + q).sqrt();
        Ok(SnDelta {
            xi: self.xi.clone(),
            sigma: self.sigma.clone(),
            delta,
        })
    }

    /// `G` is formed as `(Σ⁻¹ + ββᵀ)⁻¹` with `β = ω⁻¹α`, which equals
    /// `Σ - ψψᵀ` but avoids the cancellation of the subtraction for large
    /// skewness.
    pub fn to_augmented(&self) -> Result<SnAugmented> {
        self.validate()?;
        let sigma_f = SpdFactor::new(&self.sigma)?;
        let omega = self.omega();
        let beta = self.alpha.component_div(&omega);
        let sb = &self.sigma * &beta;
        let q = beta.dot(&sb);
        let psi = sb / (1.0 + q).sqrt();
        let g_inv = sigma_f.inverse() + dist::outer(&beta);
        let g = SpdFactor::new(&g_inv)
            .map_err(|e| Error::invalid(format!("augmented scale is not PD: {e}")))?
            .inverse();
        SpdFactor::new(&g).map_err(|e| Error::invalid(format!("augmented scale is not PD: {e}")))?;
        Ok(SnAugmented {
            xi: self.xi.clone(),
            g,
            psi,
        })
    }

    /// `E(Y) = ξ + ωδ√(2/π)`.
    pub fn mean(&self) -> Result<DVector<f64>> {
        let aug = self.to_augmented()?;
        Ok(aug.mean())
    }

    pub fn shape(&self) -> Result<SnShape> {
        SnShape::from_direct(&self.sigma, &self.alpha)
    }

    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        let shape = self.shape()?;
        Ok(shape.log_density(y.as_slice(), self.xi.as_slice()))
    }

    pub fn density(&self, y: &DVector<f64>) -> Result<f64> {
        self.log_density(y).map(f64::exp)
    }

    /// Draws `count` observations (rows of the returned matrix) through the
    /// latent representation: `(Z, W) ~ N_{p+1}(0, [[1, δᵀ], [δ, Ω]])`,
    /// `U = sign(Z) W`, `Y = ξ + ωU`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<DMatrix<f64>> {
        let delta = self.to_delta()?;
        let p = self.dim();
        let omega = self.omega();
        let omega_c = self.correlation();
        let mut joint = DMatrix::<f64>::zeros(p + 1, p + 1);
        joint[(0, 0)] = 1.0;
        for i in 0..p {
            joint[(0, i + 1)] = delta.delta[i];
            joint[(i + 1, 0)] = delta.delta[i];
            for j in 0..p {
                joint[(i + 1, j + 1)] = omega_c[(i, j)];
            }
        }
        let joint_f = SpdFactor::new(&joint)
            .map_err(|e| Error::invalid(format!("latent covariance is not PD: {e}")))?;
        let mut out = DMatrix::<f64>::zeros(count, p);
        let zero = DVector::<f64>::zeros(p + 1);
        for r in 0..count {
            let zw = dist::mvn_sample(&zero, &joint_f, rng);
            let sign = if zw[0] >= 0.0 { 1.0 } else { -1.0 };
            for i in 0..p {
                out[(r, i)] = self.xi[i] + omega[i] * sign * zw[i + 1];
            }
        }
        Ok(out)
    }
}

impl SnDelta {
    pub fn validate(&self) -> Result<()> {
        check_dims(&self.xi, &self.sigma, &self.delta)?;
        SpdFactor::new(&self.sigma)?;
        if self.delta.iter().any(|d| d.abs() >= 1.0) {
            return Err(Error::invalid("|delta| components must be < 1"));
        }
        Ok(())
    }

    pub fn omega(&self) -> DVector<f64> {
        marginal_scales(&self.sigma)
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        correlation(&self.sigma, &self.omega())
    }

    /// `δᵀ Ω⁻¹ δ`; the parameter is admissible iff this is below one.
    pub fn support_radius(&self) -> Result<f64> {
        let of = SpdFactor::new(&self.correlation())?;
        Ok(of.inv_quad(&self.delta))
    }

    pub fn to_direct(&self) -> Result<SnDirect> {
        self.validate()?;
        let of = SpdFactor::new(&self.correlation())?;
        let od = of.solve(&self.delta);
        let r = self.delta.dot(&od);
        if r >= 1.0 {
            return Err(Error::invalid("delta outside the admissible ellipsoid"));
        }
        Ok(SnDirect {
            xi: self.xi.clone(),
            sigma: self.sigma.clone(),
            alpha: od / (1.0 - r).sqrt(),
        })
    }

    pub fn to_augmented(&self) -> Result<SnAugmented> {
        self.validate()?;
        let psi = self.delta.component_mul(&self.omega());
        let g = &self.sigma - dist::outer(&psi);
        SpdFactor::new(&g).map_err(|e| Error::invalid(format!("augmented scale is not PD: {e}")))?;
        Ok(SnAugmented {
            xi: self.xi.clone(),
            g,
            psi,
        })
    }

    /// Log of the uniform prior on the ellipsoid `{δ : δᵀΩ⁻¹δ < 1}`:
    /// `-ln(π^{p/2} / Γ(p/2 + 1) · √|Ω|)`, and `-inf` outside it.
    pub fn skew_prior_log_density(&self) -> f64 {
        let omega_c = self.correlation();
        let Ok(of) = SpdFactor::new(&omega_c) else {
            return f64::NEG_INFINITY;
        };
        if of.inv_quad(&self.delta) >= 1.0 {
            return f64::NEG_INFINITY;
        }
        skew_prior_log_density_from_corr_logdet(self.xi.len(), of.log_det())
    }
}

pub(crate) fn skew_prior_log_density_from_corr_logdet(p: usize, log_det_corr: f64) -> f64 {
    let half_p = p as f64 / 2.0;
    -(half_p * PI.ln() - dist::ln_gamma(half_p + 1.0) + 0.5 * log_det_corr)
}

impl SnAugmented {
    pub fn validate(&self) -> Result<()> {
        check_dims(&self.xi, &self.g, &self.psi)?;
        SpdFactor::new(&self.g)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.g + dist::outer(&self.psi)
    }

    /// `α = ω G⁻¹ψ / √(1 + ψᵀG⁻¹ψ)`, algebraically equal to
    /// `Ω⁻¹δ / √(1 - δᵀΩ⁻¹δ)` without the cancellation in the denominator.
    pub fn to_direct(&self) -> Result<SnDirect> {
        self.validate()?;
        let gf = SpdFactor::new(&self.g)?;
        let sigma = self.sigma();
        let omega = marginal_scales(&sigma);
        let gp = gf.solve(&self.psi);
        let q = self.psi.dot(&gp);
        let alpha = gp.component_mul(&omega) / (1.0 + q).sqrt();
        Ok(SnDirect {
            xi: self.xi.clone(),
            sigma,
            alpha,
        })
    }

    pub fn to_delta(&self) -> Result<SnDelta> {
        self.validate()?;
        let sigma = self.sigma();
        let omega = marginal_scales(&sigma);
        Ok(SnDelta {
            xi: self.xi.clone(),
            delta: self.psi.component_div(&omega),
            sigma,
        })
    }

    /// `E(Y) = ξ + ψ√(2/π)`.
    pub fn mean(&self) -> DVector<f64> {
        &self.xi + &self.psi * FRAC_2_PI.sqrt()
    }

    /// `ln |∂(Σ, δ)/∂(G, ψ)| = -½ Σ_j ln(G_jj + ψ_j²)`.
    pub fn jacobian_log(&self) -> f64 {
        jacobian_log(&self.g, &self.psi)
    }

    pub fn shape(&self) -> Result<SnShape> {
        SnShape::from_augmented(&self.g, &self.psi)
    }

    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.shape()?.log_density(y.as_slice(), self.xi.as_slice()))
    }
}

pub fn jacobian_log(g: &DMatrix<f64>, psi: &DVector<f64>) -> f64 {
    -0.5 * (0..psi.len())
        .map(|j| (g[(j, j)] + psi[j] * psi[j]).ln())
        .sum::<f64>()
}

/// Location-free part of a skew-normal density, precomputed for repeated
/// evaluation: Cholesky factor of `Σ`, the slant vector `ω⁻¹α` and the
/// normalizing constant. Locations are passed per call, so one shape serves
/// every sample-specific location of a cluster.
#[derive(Debug, Clone)]
pub struct SnShape {
    p: usize,
    /// row-major lower-triangular factor of Σ
    l: Vec<f64>,
    slant: Vec<f64>,
    log_norm: f64,
}

impl SnShape {
    pub fn from_direct(sigma: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<Self> {
        let f = SpdFactor::new(sigma)?;
        let omega = marginal_scales(sigma);
        let slant = alpha.component_div(&omega);
        Ok(Self::build(&f, slant))
    }

    /// Slant `ω⁻¹α = G⁻¹ψ / √(1 + ψᵀG⁻¹ψ)`.
    pub fn from_augmented(g: &DMatrix<f64>, psi: &DVector<f64>) -> Result<Self> {
        let gf = SpdFactor::new(g)?;
        let gp = gf.solve(psi);
        let q = psi.dot(&gp);
        let slant = gp / (1.0 + q).sqrt();
        let sigma = g + dist::outer(psi);
        let f = SpdFactor::new(&sigma)?;
        Ok(Self::build(&f, slant))
    }

    fn build(f: &SpdFactor, slant: DVector<f64>) -> Self {
        let p = f.dim();
        let mut l = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                l[i * p + j] = f.l()[(i, j)];
            }
        }
        SnShape {
            p,
            l,
            slant: slant.as_slice().to_vec(),
            log_norm: LN_2 - 0.5 * (p as f64 * LN_2PI + f.log_det()),
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Log-density at `y` for location `xi`.
    pub fn log_density(&self, y: &[f64], xi: &[f64]) -> f64 {
        let mut scratch = [0.0f64; 32];
        if self.p <= scratch.len() {
            self.log_density_with(y, xi, &mut scratch[..self.p])
        } else {
            let mut v = vec![0.0; self.p];
            self.log_density_with(y, xi, &mut v)
        }
    }

    /// As [`log_density`](Self::log_density) with caller-provided scratch of
    /// length `p`.
    #[inline]
    pub fn log_density_with(&self, y: &[f64], xi: &[f64], scratch: &mut [f64]) -> f64 {
        let p = self.p;
        let mut quad = 0.0;
        let mut arg = 0.0;
        for i in 0..p {
            let r = y[i] - xi[i];
            arg += self.slant[i] * r;
            let row = &self.l[i * p..i * p + i];
            let mut s = r;
            for (j, lij) in row.iter().enumerate() {
                s -= lij * scratch[j];
            }
            let u = s / self.l[i * p + i];
            scratch[i] = u;
            quad += u * u;
        }
        self.log_norm - 0.5 * quad + dist::log_norm_cdf(arg)
    }
}

/// Draws `(Σ, δ)` from the prior pair `Σ ~ W⁻¹(m, Λ)`, `δ | Σ` uniform on the
/// ellipsoid `δᵀΩ⁻¹δ < 1`, and returns it in augmented form `(G, ψ)`.
pub fn sample_scale_skew_prior<R: Rng + ?Sized>(
    m: f64,
    lambda: &SpdFactor,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = lambda.dim();
    loop {
        let sigma = dist::inv_wishart_sample(m, lambda, rng);
        let omega = marginal_scales(&sigma);
        let corr = correlation(&sigma, &omega);
        let Ok(cf) = SpdFactor::new(&corr) else { continue };
        // uniform in the unit ball, mapped through the correlation factor
        let dir: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let radius = rng.random::<f64>().powf(1.0 / p as f64);
        let u = dir * (radius / norm);
        let delta: DVector<f64> = cf.l() * u;
        let psi = delta.component_mul(&omega);
        let g = &sigma - dist::outer(&psi);
        if SpdFactor::new(&g).is_ok() {
            return (g, psi);
        }
    }
}
