use coarsemix::dist;
use coarsemix::model::{Dataset, Hyper};
use coarsemix::sampler::{Sampler, SamplerConfig};
use nalgebra::{DMatrix, DVector};

use crate::common::{ks_critical_01, ks_statistic};
use crate::{Checks, Verdict};

const DRAWS: usize = 10_000;
const THIN: usize = 200;

pub fn suite() -> Verdict {
    // hyperparameters scaled from a 4-point stand-in; the chain itself sees no data
    let stand_in = Dataset::new(&DMatrix::from_fn(4, 2, |i, a| (i * (a + 1)) as f64), vec![0, 0, 1, 1], 2).unwrap();
    let mut h = Hyper::from_data(&stand_in);
    h.b0 = DVector::from_column_slice(&[1.0, -2.0]);
    h.big_b0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
    h.k = 3;
    h.particles = 2;
    h.a_eta = 1.0;
    h.b_eta = 1.0;
    let config = SamplerConfig {
        n_iter: 2000 + DRAWS * THIN,
        n_burn: 2000,
        thin: THIN,
        seed: 21,
        workers: 1,
        progress_every: 0,
        ..SamplerConfig::default()
    };
    let chain = Sampler::new(&Dataset::empty(2, 2), h.clone(), config)
        .and_then(|s| s.run())
        .expect("empty-data chain runs");
    let snaps = &chain.snapshots;
    let crit = ks_critical_01(snaps.len());
    let mut c = Checks::new();
    c.check(snaps.len() == DRAWS, format!("{} draws thinned by {THIN}", snaps.len()));

    // Gamma(1, 1) prior on η is Exp(1)
    let mut etas: Vec<f64> = snaps.iter().map(|s| s.eta).collect();
    let d = ks_statistic(&mut etas, |x| 1.0 - (-x).exp());
    c.check(d < crit, format!("eta KS {d:.4} < {crit:.4}"));
    for a in 0..2 {
        let sd = h.big_b0[(a, a)].sqrt();
        let mut xs: Vec<f64> = snaps.iter().map(|s| s.clusters[1].xi0[a]).collect();
        let d = ks_statistic(&mut xs, |x| dist::norm_cdf((x - h.b0[a]) / sd));
        c.check(d < crit, format!("xi0[{a}] KS {d:.4} < {crit:.4}"));
    }
    c.verdict()
}
