//! Full conditionals and proposal distributions, as pure functions returning
//! distribution parameters. Location arguments are in whatever frame the
//! caller uses, as long as data statistics and locations share it.

use nalgebra::{DMatrix, DVector};

use crate::dist::{self, SpdFactor};
use crate::error::Result;
use crate::sn::SnShape;

/// Statistics of one sample's members of a cluster that do not involve `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberStats {
    pub n: usize,
    pub sum_y: DVector<f64>,
    pub sum_yy: DMatrix<f64>,
}

impl MemberStats {
    pub fn zeros(p: usize) -> Self {
        MemberStats {
            n: 0,
            sum_y: DVector::zeros(p),
            sum_yy: DMatrix::zeros(p, p),
        }
    }

    pub fn push(&mut self, y: &[f64]) {
        let p = y.len();
        self.n += 1;
        for a in 0..p {
            self.sum_y[a] += y[a];
            for b in 0..p {
                self.sum_yy[(a, b)] += y[a] * y[b];
            }
        }
    }
}

/// Statistics of one sample's members that involve the latent `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub sum_z: f64,
    pub sum_zz: f64,
    pub sum_zy: DVector<f64>,
}

impl LatentStats {
    pub fn zeros(p: usize) -> Self {
        LatentStats {
            sum_z: 0.0,
            sum_zz: 0.0,
            sum_zy: DVector::zeros(p),
        }
    }

    pub fn push(&mut self, z: f64, y: &[f64]) {
        self.sum_z += z;
        self.sum_zz += z * z;
        for (a, v) in y.iter().enumerate() {
            self.sum_zy[a] += z * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvWishart {
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

/// Unnormalized log-probabilities of `T = k` for one observation:
/// `ln π_{j,k} + ln SN(y; ξ_{j,k}, G_k, ψ_k)`.
pub fn assignment_log_probs(
    y: &[f64],
    log_weights: &[f64],
    shapes: &[SnShape],
    locations: &[&[f64]],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    for k in 0..shapes.len() {
        let lw = log_weights[k];
        out[k] = if lw == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lw + shapes[k].log_density_with(y, locations[k], scratch)
        };
    }
}

/// Dirichlet parameters `ζ n_{j,k} + η/K` for one sample's weights.
pub fn weight_concentrations(counts: &[usize], eta: f64, zeta: f64) -> Vec<f64> {
    let k = counts.len() as f64;
    counts.iter().map(|&n| zeta * n as f64 + eta / k).collect()
}

/// Conditional of `|z|` given cluster parameters: `N(m_i, v)` truncated to
/// `[0, ∞)` with `v = 1/(1 + ζ ψᵀG⁻¹ψ)` and `m_i = coef · (y_i - ξ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZConditional {
    pub v: f64,
    pub coef: DVector<f64>,
}

impl ZConditional {
    pub fn new(g: &SpdFactor, psi: &DVector<f64>, zeta: f64) -> Self {
        let gp = g.solve(psi);
        let v = 1.0 / (1.0 + zeta * psi.dot(&gp));
        ZConditional {
            v,
            coef: gp * (v * zeta),
        }
    }

    #[inline]
    pub fn mean(&self, y: &[f64], xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..y.len() {
            s += self.coef[a] * (y[a] - xi[a]);
        }
        s
    }
}

/// Sample location `ξ_{j,k}`: precision `E⁻¹ + ζ n_{jk} G⁻¹`, mean
/// `E*(E⁻¹ξ₀ + ζ G⁻¹ Σ_i (y_i - ψ z_i))`.
pub fn xi_j_conditional(
    g_inv: &DMatrix<f64>,
    e_inv: &DMatrix<f64>,
    xi0: &DVector<f64>,
    psi: &DVector<f64>,
    stats: &MemberStats,
    lat: &LatentStats,
    zeta: f64,
) -> Result<Gaussian> {
    let prec = e_inv + g_inv * (zeta * stats.n as f64);
    let cov = SpdFactor::new(&prec)?.inverse();
    let resid = &stats.sum_y - psi * lat.sum_z;
    let mean = &cov * (e_inv * xi0 + g_inv * resid * zeta);
    Ok(Gaussian { mean, cov })
}

/// `Σ_i (y_i - ψ z_i - ξ_{j(i)})(…)ᵀ` summed over the cluster, from
/// per-sample statistics.
pub fn residual_scatter(
    stats: &[MemberStats],
    lat: &[LatentStats],
    xi: &[DVector<f64>],
    psi: &DVector<f64>,
) -> DMatrix<f64> {
    let p = psi.len();
    let mut s = DMatrix::zeros(p, p);
    for ((st, lt), x) in stats.iter().zip(lat).zip(xi) {
        if st.n == 0 {
            continue;
        }
        // Σ r rᵀ with r = y - (ψ z + ξ): Σ y yᵀ - Σ y wᵀ - Σ w yᵀ + Σ w wᵀ
        let sum_yw = &st.sum_y * x.transpose() + &lt.sum_zy * psi.transpose();
        let sum_ww = dist::outer(psi) * lt.sum_zz
            + (psi * x.transpose() + x * psi.transpose()) * lt.sum_z
            + dist::outer(x) * st.n as f64;
        s += &st.sum_yy - &sum_yw - sum_yw.transpose() + sum_ww;
    }
    (&s + s.transpose()) * 0.5
}

/// Proposal for `G_k`: `W⁻¹(ζ n_k + m, Λ + ζ·scatter)`.
pub fn g_conditional(lambda: &DMatrix<f64>, m: f64, n_k: usize, scatter: &DMatrix<f64>, zeta: f64) -> InvWishart {
    InvWishart {
        dof: zeta * n_k as f64 + m,
        scale: lambda + scatter * zeta,
    }
}

/// Proposal for `ψ_k`: `N(Σ z (y - ξ) / Σ z², G / (ζ Σ z²))`.
pub fn psi_conditional(
    g: &DMatrix<f64>,
    stats: &[MemberStats],
    lat: &[LatentStats],
    xi: &[DVector<f64>],
    zeta: f64,
) -> Option<Gaussian> {
    let p = g.nrows();
    let mut num = DVector::zeros(p);
    let mut szz = 0.0;
    for ((st, lt), x) in stats.iter().zip(lat).zip(xi) {
        if st.n == 0 {
            continue;
        }
        num += &lt.sum_zy - x * lt.sum_z;
        szz += lt.sum_zz;
    }
    if !(szz > 0.0) {
        return None;
    }
    Some(Gaussian {
        mean: num / szz,
        cov: g / (zeta * szz),
    })
}

/// Grand location `ξ_{0,k}`: precision `B₀⁻¹ + ζ J E⁻¹`, mean
/// `B*(B₀⁻¹ b₀ + ζ E⁻¹ Σ_j ξ_{j,k})`.
pub fn xi0_conditional(
    b0: &DVector<f64>,
    b0_inv: &DMatrix<f64>,
    e_inv: &DMatrix<f64>,
    xi: &[DVector<f64>],
    zeta: f64,
) -> Result<Gaussian> {
    let j = xi.len() as f64;
    let prec = b0_inv + e_inv * (zeta * j);
    let cov = SpdFactor::new(&prec)?.inverse();
    let sum = xi.iter().fold(DVector::zeros(b0.len()), |acc, x| acc + x);
    let mean = &cov * (b0_inv * b0 + e_inv * sum * zeta);
    Ok(Gaussian { mean, cov })
}

/// Dispersion `E_k`: `W⁻¹(ν₀ + J, E₀ + Σ_j (ξ_j - ξ₀)(ξ_j - ξ₀)ᵀ)`.
pub fn e_conditional(e0: &DMatrix<f64>, nu0: f64, xi: &[DVector<f64>], xi0: &DVector<f64>) -> InvWishart {
    let mut scale = e0.clone();
    for x in xi {
        scale += dist::outer(&(x - xi0));
    }
    InvWishart {
        dof: nu0 + xi.len() as f64,
        scale,
    }
}

/// Log target of the concentration `η`: its Gamma prior plus, optionally,
/// the symmetric Dirichlet density of every sample's weights.
pub fn eta_log_target(eta: f64, log_weights: &DMatrix<f64>, a_eta: f64, b_eta: f64, with_weights: bool) -> f64 {
    let mut lt = dist::gamma_log_pdf(eta, a_eta, b_eta);
    if with_weights && lt.is_finite() {
        let k = log_weights.ncols();
        let alpha = vec![eta / k as f64; k];
        for row in log_weights.row_iter() {
            let lp: Vec<f64> = row.iter().copied().collect();
            lt += dist::dirichlet_log_pdf(&lp, &alpha);
        }
    }
    lt
}

/// Gamma proposal `(shape, rate) = (η a₀, a₀)`: mean `η`, variance `η/a₀`.
/// The shape shrinks only linearly as `η → 0`, so the chain keeps leaving
/// small values.
pub fn eta_proposal(eta: f64, a0: f64) -> (f64, f64) {
    (eta * a0, a0)
}

/// Log Metropolis–Hastings ratio for moving `η → η*`.
pub fn eta_log_accept_ratio(
    eta: f64,
    eta_star: f64,
    a0: f64,
    log_weights: &DMatrix<f64>,
    a_eta: f64,
    b_eta: f64,
    with_weights: bool,
) -> f64 {
    let (s_fwd, r_fwd) = eta_proposal(eta, a0);
    let (s_rev, r_rev) = eta_proposal(eta_star, a0);
    eta_log_target(eta_star, log_weights, a_eta, b_eta, with_weights)
        - eta_log_target(eta, log_weights, a_eta, b_eta, with_weights)
        + dist::gamma_log_pdf(eta, s_rev, r_rev)
        - dist::gamma_log_pdf(eta_star, s_fwd, r_fwd)
}
