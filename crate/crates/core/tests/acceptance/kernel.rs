use std::f64::consts::FRAC_2_PI;

use coarsemix::dist::{self, SpdFactor};
use coarsemix::sn::SnDirect;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{random_direct, random_spd, rel_err};
use crate::{Checks, Verdict};

fn round_trip_error(d: &SnDirect) -> f64 {
    let back = d.to_augmented().unwrap().to_direct().unwrap();
    let via_delta = d.to_delta().unwrap().to_direct().unwrap();
    rel_err(d.sigma.as_slice(), back.sigma.as_slice())
        .max(rel_err(d.alpha.as_slice(), back.alpha.as_slice()))
        .max(rel_err(d.xi.as_slice(), back.xi.as_slice()))
        .max(rel_err(d.alpha.as_slice(), via_delta.alpha.as_slice()))
}

/// Largest |z| of the per-coordinate sample mean against `ξ + ωδ√(2/π)`.
fn worst_mean_z(d: &SnDirect, count: usize, rng: &mut ChaCha8Rng) -> f64 {
    let draws = d.sample(rng, count).unwrap();
    let psi = d.to_augmented().unwrap().psi;
    let mean = d.xi.clone() + d.omega().component_mul(&d.to_delta().unwrap().delta) * FRAC_2_PI.sqrt();
    let cov = &d.sigma - dist::outer(&psi) * FRAC_2_PI;
    (0..d.dim())
        .map(|a| ((draws.column(a).mean() - mean[a]) / (cov[(a, a)] / count as f64).sqrt()).abs())
        .fold(0.0, f64::max)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn suite() -> Verdict {
    let mut c = Checks::new();

    let mut worst = 0.0f64;
    for p in [1, 2, 5, 19] {
        let mut rng = ChaCha8Rng::seed_from_u64(p as u64);
        for _ in 0..1000 {
            worst = worst.max(round_trip_error(&random_direct(p, &mut rng)));
        }
    }
    c.check(worst < 1e-10, format!("round-trip rel err {worst:.1e} < 1e-10"));

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = [1, 2, 5]
        .iter()
        .map(|&p| worst_mean_z(&random_direct(p, &mut rng), 100_000, &mut rng))
        .fold(0.0, f64::max);
    c.check(z < 3.0, format!("sample mean max |z| {z:.2} < 3 at 1e5 draws"));

    // α = 0 against the Gaussian density, in units of machine epsilon
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ulps = 0.0f64;
    for p in [1, 2, 5, 19] {
        for _ in 0..50 {
            let mut d = random_direct(p, &mut rng);
            d.alpha = DVector::zeros(p);
            let f = SpdFactor::new(&d.sigma).unwrap();
            for _ in 0..5 {
                let y = &d.xi + random_spd(p, &mut rng).column(0).into_owned();
                let a = d.log_density(&y).unwrap();
                let b = dist::mvn_log_pdf(&y, &d.xi, &f);
                ulps = ulps.max((a - b).abs() / (f64::EPSILON * b.abs().max(1.0)));
            }
        }
    }
    c.check(ulps <= 64.0, format!("zero-skew log density within {ulps:.1} eps of Gaussian"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases: Vec<SnDirect> = (0..30).map(|_| random_direct(1, &mut rng)).collect();
    for alpha in [-20.0, 20.0, 40.0] {
        cases.push(
            SnDirect::new(
                DVector::from_element(1, 1.0),
                DMatrix::from_element(1, 1, 0.3),
                DVector::from_element(1, alpha),
            )
            .unwrap(),
        );
    }
    let dev = cases
        .iter()
        .map(|d| {
            let w = d.sigma[(0, 0)].sqrt();
            let f = |x: f64| d.density(&DVector::from_element(1, x)).unwrap();
            (simpson(f, d.xi[0] - 12.0 * w, d.xi[0] + 12.0 * w, 40_000) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    c.check(dev < 1e-6, format!("1-d integral off by {dev:.1e} < 1e-6"));
    c.verdict()
}
