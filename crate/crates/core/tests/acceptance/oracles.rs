use coarsemix::dist::{self, SpdFactor};
use coarsemix::model::ClusterParams;
use coarsemix::sampler::conditionals::{self as cond, LatentStats, MemberStats, ZConditional};
use coarsemix::sn::{SnAugmented, SnShape};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{random_spd, rel_err};
use crate::{Checks, Verdict};

fn random_cluster(p: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> ClusterParams {
    let xi: Vec<DVector<f64>> = (0..n_samples).map(|_| DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0))).collect();
    let xi0 = xi.iter().fold(DVector::zeros(p), |a, x| a + x) / n_samples as f64;
    ClusterParams {
        xi,
        xi0,
        g: random_spd(p, rng) * 0.3,
        psi: DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0)),
        e: random_spd(p, rng),
    }
}

/// Largest gap between assignment probabilities and a direct normalization
/// of weight times skew-normal density.
fn assignment_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, j, k) = (2, 2, 4);
    let clusters: Vec<ClusterParams> = (0..k).map(|_| random_cluster(p, j, &mut rng)).collect();
    let weights = [[0.1, 0.2, 0.3, 0.4], [0.25, 0.05, 0.5, 0.2]];
    let shapes: Vec<SnShape> = clusters.iter().map(|c| c.shape().unwrap()).collect();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let y: Vec<f64> = (0..p).map(|_| rng.random_range(-4.0..4.0)).collect();
        let s = rng.random_range(0..j);
        let lw: Vec<f64> = weights[s].iter().map(|w: &f64| w.ln()).collect();
        let locs: Vec<&[f64]> = clusters.iter().map(|c| c.xi[s].as_slice()).collect();
        let mut out = vec![0.0; k];
        cond::assignment_log_probs(&y, &lw, &shapes, &locs, &mut vec![0.0; p], &mut out);
        let got = dist::normalize_log_weights(&out).unwrap();
        let dens: Vec<f64> = (0..k)
            .map(|c| {
                let aug = SnAugmented {
                    xi: clusters[c].xi[s].clone(),
                    g: clusters[c].g.clone(),
                    psi: clusters[c].psi.clone(),
                };
                weights[s][c] * aug.to_direct().unwrap().density(&DVector::from_vec(y.clone())).unwrap()
            })
            .collect();
        let total: f64 = dens.iter().sum();
        for c in 0..k {
            worst = worst.max((got[c] - dens[c] / total).abs());
        }
    }
    worst
}

/// Sup-norm between a 10⁶-draw histogram of the latent sampler and the
/// Simpson-integrated augmented conditional on the same bins.
fn latent_sup_error() -> f64 {
    let g = DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, 0.8]);
    let gf = SpdFactor::new(&g).unwrap();
    let psi = DVector::from_column_slice(&[1.5, -0.7]);
    let zeta = 0.6;
    let (y, xi) = ([1.0, 0.3], [0.0, 0.0]);
    let zc = ZConditional::new(&gf, &psi, zeta);
    let (mu, sd) = (zc.mean(&y, &xi), zc.v.sqrt());
    let r = DVector::from_column_slice(&y);
    let log_f = |z: f64| -0.5 * z * z - 0.5 * zeta * gf.inv_quad(&(&r - &psi * z));
    let width = 0.05;
    let bins = ((mu.max(0.0) + 10.0 * sd) / width).ceil() as usize;
    let sub = 64;
    let h = width / sub as f64;
    let mass: Vec<f64> = (0..bins)
        .map(|b| {
            let a = b as f64 * width;
            let mut s = log_f(a).exp() + log_f(a + width).exp();
            for i in 1..sub {
                s += log_f(a + i as f64 * h).exp() * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        })
        .collect();
    let total: f64 = mass.iter().sum();
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hist = vec![0usize; bins];
    for _ in 0..n {
        let z = dist::truncated_normal_positive(mu, sd, &mut rng);
        hist[((z / width) as usize).min(bins - 1)] += 1;
    }
    (0..bins)
        .map(|b| (hist[b] as f64 / (n as f64 * width) - mass[b] / (total * width)).abs())
        .fold(0.0, f64::max)
}

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().unwrap()
}

/// Largest relative error of every block conditional at `ζ = 1` against
/// the textbook forms written out from the raw observations.
fn uncoarsened_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = 2;
    let sizes = [7, 5, 1];
    let ys: Vec<Vec<DVector<f64>>> = sizes
        .iter()
        .map(|&n| (0..n).map(|_| DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0))).collect())
        .collect();
    let zs: Vec<Vec<f64>> = sizes.iter().map(|&n| (0..n).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
    let c = random_cluster(p, sizes.len(), &mut rng);
    let b0 = DVector::from_column_slice(&[0.5, -0.5]);
    let big_b0 = random_spd(p, &mut rng);
    let lambda = random_spd(p, &mut rng);
    let e0 = random_spd(p, &mut rng);

    let mut st = vec![MemberStats::zeros(p); sizes.len()];
    let mut lt = vec![LatentStats::zeros(p); sizes.len()];
    for j in 0..sizes.len() {
        for (y, &z) in ys[j].iter().zip(&zs[j]) {
            st[j].push(y.as_slice());
            lt[j].push(z, y.as_slice());
        }
    }
    let (gi, ei, bi) = (inv(&c.g), inv(&c.e), inv(&big_b0));
    let mut worst = 0.0f64;
    let mut cmp = |a: &[f64], b: &[f64]| worst = worst.max(rel_err(b, a));

    for j in 0..sizes.len() {
        let cov = inv(&(&ei + &gi * ys[j].len() as f64));
        let s = ys[j].iter().zip(&zs[j]).fold(DVector::zeros(p), |a, (y, &z)| a + y - &c.psi * z);
        let mean = &cov * (&ei * &c.xi0 + &gi * s);
        let got = cond::xi_j_conditional(&gi, &ei, &c.xi0, &c.psi, &st[j], &lt[j], 1.0).unwrap();
        cmp(got.cov.as_slice(), cov.as_slice());
        cmp(got.mean.as_slice(), mean.as_slice());
    }

    let mut scatter = DMatrix::zeros(p, p);
    let (mut szy, mut szz) = (DVector::zeros(p), 0.0);
    for j in 0..sizes.len() {
        for (y, &z) in ys[j].iter().zip(&zs[j]) {
            let r = y - &c.xi[j] - &c.psi * z;
            scatter += &r * r.transpose();
            szy += (y - &c.xi[j]) * z;
            szz += z * z;
        }
    }
    let n_k: usize = sizes.iter().sum();
    let got = cond::g_conditional(&lambda, 4.0, n_k, &cond::residual_scatter(&st, &lt, &c.xi, &c.psi), 1.0);
    cmp(got.scale.as_slice(), (&lambda + &scatter).as_slice());
    cmp(&[got.dof], &[n_k as f64 + 4.0]);

    let got = cond::psi_conditional(&c.g, &st, &lt, &c.xi, 1.0).unwrap();
    cmp(got.mean.as_slice(), (&szy / szz).as_slice());
    cmp(got.cov.as_slice(), (&c.g / szz).as_slice());

    let cov = inv(&(&bi + &ei * sizes.len() as f64));
    let sum = c.xi.iter().fold(DVector::zeros(p), |a, x| a + x);
    let mean = &cov * (&bi * &b0 + &ei * sum);
    let got = cond::xi0_conditional(&b0, &bi, &ei, &c.xi, 1.0).unwrap();
    cmp(got.cov.as_slice(), cov.as_slice());
    cmp(got.mean.as_slice(), mean.as_slice());

    let scale = c.xi.iter().fold(e0.clone(), |a, x| {
        let d = x - &c.xi0;
        a + &d * d.transpose()
    });
    let got = cond::e_conditional(&e0, 5.0, &c.xi, &c.xi0);
    cmp(got.scale.as_slice(), scale.as_slice());
    cmp(&[got.dof], &[5.0 + sizes.len() as f64]);

    let gf = SpdFactor::new(&c.g).unwrap();
    let zc = ZConditional::new(&gf, &c.psi, 1.0);
    let vz = 1.0 / (1.0 + (c.psi.transpose() * &gi * &c.psi)[0]);
    let y = &ys[0][0];
    let m = vz * (c.psi.transpose() * &gi * (y - &c.xi[0]))[0];
    cmp(&[zc.v], &[vz]);
    cmp(&[zc.mean(y.as_slice(), c.xi[0].as_slice())], &[m]);
    worst
}

pub fn suite() -> Verdict {
    let mut c = Checks::new();
    let a = assignment_error();
    c.check(a < 1e-12, format!("assignment probabilities off by {a:.1e} < 1e-12"));
    let z = latent_sup_error();
    c.check(z < 0.01, format!("latent histogram sup error {z:.4} < 0.01"));
    let u = uncoarsened_error();
    c.check(u < 1e-12, format!("uncoarsened conditionals rel err {u:.1e} < 1e-12"));
    c.verdict()
}
