//! Population Monte Carlo move for the skew-normal block of one cluster.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::conditionals::{self as cond, LatentStats, MemberStats, ZConditional};
use super::Priors;
use crate::dist::{self, SpdFactor, LN_2PI};
use crate::error::{Error, Result};
use crate::model::{ClusterParams, Dataset, ParticleCloud};
use crate::rng::{self, Tag};
use crate::sn;

/// The five parameter blocks refreshed after the latent `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    SampleLocations,
    Scale,
    Skew,
    GrandLocation,
    Dispersion,
}

pub const BLOCKS: [Block; 5] = [
    Block::SampleLocations,
    Block::Scale,
    Block::Skew,
    Block::GrandLocation,
    Block::Dispersion,
];

/// Members of one cluster, centred on their mean, with per-sample
/// statistics.
#[derive(Debug, Clone)]
pub struct ClusterData {
    pub centre: DVector<f64>,
    pub p: usize,
    /// centred rows, `n_k × p`
    pub rows: Vec<f64>,
    pub sample: Vec<usize>,
    pub stats: Vec<MemberStats>,
}

impl ClusterData {
    pub fn gather(data: &Dataset, members: &[usize]) -> Self {
        let p = data.p();
        let mut centre = DVector::zeros(p);
        for &i in members {
            for (a, v) in data.row(i).iter().enumerate() {
                centre[a] += v;
            }
        }
        if !members.is_empty() {
            centre /= members.len() as f64;
        }
        let mut rows = Vec::with_capacity(members.len() * p);
        let mut sample = Vec::with_capacity(members.len());
        let mut stats = vec![MemberStats::zeros(p); data.n_samples()];
        for &i in members {
            let j = data.sample_of()[i];
            let start = rows.len();
            rows.extend(data.row(i).iter().zip(centre.iter()).map(|(y, c)| y - c));
            stats[j].push(&rows[start..]);
            sample.push(j);
        }
        ClusterData {
            centre,
            p,
            rows,
            sample,
            stats,
        }
    }

    pub fn n(&self) -> usize {
        self.sample.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.p..(r + 1) * self.p]
    }
}

/// Draws a fresh set of block parameters from the priors.
pub fn prior_particle<R: Rng + ?Sized>(priors: &Priors, rng: &mut R) -> Result<ClusterParams> {
    let xi0 = dist::mvn_sample(&priors.b0, &priors.b0_factor, rng);
    let (g, psi) = sn::sample_scale_skew_prior(priors.m, &priors.lambda_factor, rng);
    let e = dist::inv_wishart_sample(priors.nu0, &priors.e0_factor, rng);
    let ef = SpdFactor::new(&e)?;
    let xi = (0..priors.n_samples)
        .map(|_| dist::mvn_sample(&xi0, &ef, rng))
        .collect();
    Ok(ClusterParams { xi, xi0, g, psi, e })
}

/// Log of the block target: coarsened augmented likelihood of the members,
/// half-normal density of `z`, and the priors of every block parameter
/// (with the skew prior and the change-of-variables term for `(G, ψ)`).
/// Locations and `b0` are in the centred frame of `cd`.
pub fn log_target(
    part: &ClusterParams,
    cd: &ClusterData,
    lat: &[LatentStats],
    priors: &Priors,
    b0: &DVector<f64>,
    zeta: f64,
) -> Result<f64> {
    let p = cd.p;
    let pf = p as f64;
    let n = cd.n() as f64;
    let gf = SpdFactor::new(&part.g)?;
    let scatter = cond::residual_scatter(&cd.stats, lat, &part.xi, &part.psi);
    let tr = gf.inverse().component_mul(&scatter).sum();
    let loglik = zeta * (-0.5 * n * (pf * LN_2PI + gf.log_det()) - 0.5 * tr);
    let szz: f64 = lat.iter().map(|l| l.sum_zz).sum();
    let half_normal = n * (LN_2 - 0.5 * LN_2PI) - 0.5 * szz;

    let ef = SpdFactor::new(&part.e)?;
    let mut prior: f64 = part.xi.iter().map(|x| dist::mvn_log_pdf(x, &part.xi0, &ef)).sum();
    prior += dist::mvn_log_pdf(&part.xi0, b0, &priors.b0_factor);
    prior += dist::inv_wishart_log_pdf(&ef, priors.nu0, &priors.e0_factor);
    let sigma = &part.g + dist::outer(&part.psi);
    let sf = SpdFactor::new(&sigma)?;
    prior += dist::inv_wishart_log_pdf(&sf, priors.m, &priors.lambda_factor);
    let log_det_corr = sf.log_det() - sigma.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    prior += sn::skew_prior_log_density_from_corr_logdet(p, log_det_corr);
    prior += sn::jacobian_log(&part.g, &part.psi);
    Ok(loglik + half_normal + prior)
}

fn draw_gaussian<R: Rng + ?Sized>(g: &cond::Gaussian, rng: &mut R) -> Result<(DVector<f64>, f64)> {
    let f = SpdFactor::new(&g.cov)?;
    let x = dist::mvn_sample(&g.mean, &f, rng);
    let lq = dist::mvn_log_pdf(&x, &g.mean, &f);
    Ok((x, lq))
}

fn draw_inv_wishart<R: Rng + ?Sized>(iw: &cond::InvWishart, rng: &mut R) -> Result<(DMatrix<f64>, f64)> {
    let sf = SpdFactor::new(&iw.scale)?;
    let x = dist::inv_wishart_sample(iw.dof, &sf, rng);
    let xf = SpdFactor::new(&x)?;
    let lq = dist::inv_wishart_log_pdf(&xf, iw.dof, &sf);
    Ok((x, lq))
}

/// Moves one particle through `z` and the five blocks in `order`, all in the
/// centred frame, and returns its log importance weight (target over the
/// product of the proposal densities actually used).
fn propagate_centred<R: Rng + ?Sized>(
    part: &mut ClusterParams,
    z: &mut Vec<f64>,
    cd: &ClusterData,
    priors: &Priors,
    b0: &DVector<f64>,
    zeta: f64,
    order: &[Block],
    rng: &mut R,
) -> Result<f64> {
    let p = cd.p;
    let n_samples = priors.n_samples;
    let gf = SpdFactor::new(&part.g)?;
    let zc = ZConditional::new(&gf, &part.psi, zeta);
    let sd = zc.v.sqrt();
    let mut log_q = 0.0;
    let mut lat = vec![LatentStats::zeros(p); n_samples];
    z.clear();
    for r in 0..cd.n() {
        let y = cd.row(r);
        let j = cd.sample[r];
        let mu = zc.mean(y, part.xi[j].as_slice());
        let zr = dist::truncated_normal_positive(mu, sd, rng);
        log_q += dist::truncated_normal_positive_log_pdf(zr, mu, sd);
        lat[j].push(zr, y);
        z.push(zr);
    }

    for block in order {
        match block {
            Block::SampleLocations => {
                let g_inv = SpdFactor::new(&part.g)?.inverse();
                let e_inv = SpdFactor::new(&part.e)?.inverse();
                for j in 0..n_samples {
                    let c = cond::xi_j_conditional(&g_inv, &e_inv, &part.xi0, &part.psi, &cd.stats[j], &lat[j], zeta)?;
                    let (x, lq) = draw_gaussian(&c, rng)?;
                    part.xi[j] = x;
                    log_q += lq;
                }
            }
            Block::Scale => {
                let scatter = cond::residual_scatter(&cd.stats, &lat, &part.xi, &part.psi);
                let iw = cond::g_conditional(&priors.lambda, priors.m, cd.n(), &scatter, zeta);
                let (g, lq) = draw_inv_wishart(&iw, rng)?;
                part.g = g;
                log_q += lq;
            }
            Block::Skew => {
                let c = cond::psi_conditional(&part.g, &cd.stats, &lat, &part.xi, zeta)
                    .ok_or_else(|| Error::invalid("skew proposal undefined: all latent scales are zero"))?;
                let (x, lq) = draw_gaussian(&c, rng)?;
                part.psi = x;
                log_q += lq;
            }
            Block::GrandLocation => {
                let e_inv = SpdFactor::new(&part.e)?.inverse();
                let c = cond::xi0_conditional(b0, &priors.b0_inv, &e_inv, &part.xi, zeta)?;
                let (x, lq) = draw_gaussian(&c, rng)?;
                part.xi0 = x;
                log_q += lq;
            }
            Block::Dispersion => {
                let iw = cond::e_conditional(&priors.e0, priors.nu0, &part.xi, &part.xi0);
                let (e, lq) = draw_inv_wishart(&iw, rng)?;
                part.e = e;
                log_q += lq;
            }
        }
    }

    let lt = log_target(part, cd, &lat, priors, b0, zeta)?;
    Ok(lt - log_q)
}

/// Propagates one particle and returns its log importance weight; invalid
/// proposals (a non-PD matrix along the way) get weight `-inf`.
pub fn propagate_particle<R: Rng + ?Sized>(
    part: &mut ClusterParams,
    z: &mut Vec<f64>,
    cd: &ClusterData,
    priors: &Priors,
    zeta: f64,
    order: &[Block],
    rng: &mut R,
) -> f64 {
    let c = &cd.centre;
    for x in part.xi.iter_mut() {
        *x -= c;
    }
    part.xi0 -= c;
    let b0 = &priors.b0 - c;
    let w = propagate_centred(part, z, cd, priors, &b0, zeta, order, rng);
    for x in part.xi.iter_mut() {
        *x += c;
    }
    part.xi0 += c;
    match w {
        Ok(w) if !w.is_nan() => w,
        _ => f64::NEG_INFINITY,
    }
}

/// Multinomial resampling: `count` indices drawn with the given probabilities.
pub fn resample_indices<R: Rng + ?Sized>(probs: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &w in probs {
        acc += w;
        cum.push(acc);
    }
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cum.partition_point(|&c| c <= u).min(probs.len() - 1)
        })
        .collect()
}

/// Uniformly random block order for cluster `k` at `iteration`.
pub fn block_order(seed: u64, iteration: u64, k: usize) -> [Block; 5] {
    let mut order = BLOCKS;
    order.shuffle(&mut rng::stream(seed, Tag::BlockOrder, iteration, k as u64));
    order
}

fn particle_index(k: usize, m: usize) -> u64 {
    ((k as u64) << 32) | m as u64
}

/// One PMC sweep of an occupied cluster: propagate every particle, weight,
/// resample, and return the particle means of the block parameters together
/// with the particle-mean `z` of each member.
pub fn sweep_cluster(
    cloud: &mut ParticleCloud,
    k: usize,
    members: Vec<usize>,
    data: &Dataset,
    priors: &Priors,
    zeta: f64,
    seed: u64,
    iteration: u64,
) -> Result<(ClusterParams, Vec<f64>)> {
    let cd = ClusterData::gather(data, &members);
    let order = block_order(seed, iteration, k);
    let log_w: Vec<f64> = cloud
        .particles
        .par_iter_mut()
        .zip(cloud.z.par_iter_mut())
        .enumerate()
        .map(|(m, (part, z))| {
            let mut r = rng::stream(seed, Tag::Particle, iteration, particle_index(k, m));
            propagate_particle(part, z, &cd, priors, zeta, &order, &mut r)
        })
        .collect();

    let probs = dist::normalize_log_weights(&log_w).ok_or(Error::DegenerateCloud { cluster: k })?;
    let valid = log_w.iter().filter(|w| w.is_finite()).count();
    if valid == 1 {
        log::warn!("iteration {iteration}: cluster {k} has a single valid particle; resampling collapses to it");
    }
    let mut r = rng::stream(seed, Tag::Resample, iteration, k as u64);
    let idx = resample_indices(&probs, cloud.len(), &mut r);
    let particles: Vec<ClusterParams> = idx.iter().map(|&i| cloud.particles[i].clone()).collect();
    let z: Vec<Vec<f64>> = idx.iter().map(|&i| cloud.z[i].clone()).collect();
    cloud.particles = particles;
    cloud.z = z;
    let lse = dist::log_sum_exp(&log_w);
    cloud.log_weights = log_w.iter().map(|w| w - lse).collect();
    cloud.members = members;

    let mean = cloud.mean();
    let m = cloud.len() as f64;
    let z_mean = (0..cloud.members.len())
        .map(|r| cloud.z.iter().map(|zs| zs[r]).sum::<f64>() / m)
        .collect();
    Ok((mean, z_mean))
}

/// Redraws every particle of an empty cluster from the priors. The cluster's
/// reported parameters are the first particle, a single exact prior draw.
pub fn refresh_from_prior(
    cloud: &mut ParticleCloud,
    k: usize,
    priors: &Priors,
    seed: u64,
    iteration: u64,
) -> Result<ClusterParams> {
    for (m, part) in cloud.particles.iter_mut().enumerate() {
        let mut r = rng::stream(seed, Tag::Prior, iteration, particle_index(k, m));
        *part = prior_particle(priors, &mut r)?;
    }
    let m = cloud.len();
    cloud.members.clear();
    cloud.z = vec![Vec::new(); m];
    cloud.log_weights = vec![-(m as f64).ln(); m];
    Ok(cloud.particles[0].clone())
}
