use std::collections::HashMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use coarsemix::diagnostics::adjusted_rand_index;
use coarsemix::model::{Dataset, Hyper};
use coarsemix::pipeline::{self, Analysis};
use coarsemix::sampler::SamplerConfig;
use coarsemix::simulate::{self, SimSpec, Simulated};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Checks, Verdict};

const MIN_WEIGHT: f64 = 0.01;
const BUDGET: Duration = Duration::from_secs(15 * 60);
const SEED: u64 = 1;

struct Fit {
    analysis: Analysis,
    elapsed: Duration,
}

struct Replica {
    sim: Simulated,
    ideal: [Fit; 2],
    distorted: [Fit; 2],
}

fn fit(data: &Dataset, zeta: f64) -> Fit {
    let mut hyper = Hyper::from_data(data);
    hyper.zeta = zeta;
    let config = SamplerConfig {
        seed: SEED,
        progress_every: 0,
        ..SamplerConfig::default()
    };
    let t0 = Instant::now();
    let analysis = pipeline::analyze(data, &hyper, &config, MIN_WEIGHT).expect("replica fit runs");
    Fit {
        analysis,
        elapsed: t0.elapsed(),
    }
}

/// Four fits shared by the first three criteria: ideal and distorted data at
/// `ζ = 0.2` and `ζ = 1`, 2000 iterations with 20 particles and K = 150.
fn replica() -> &'static Replica {
    static CELL: OnceLock<Replica> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = SimSpec::replica();
        let sim = simulate::generate(&spec, &mut ChaCha8Rng::seed_from_u64(SEED)).unwrap();
        let distorted = simulate::distort(&sim.data, &sim.labels, spec.distortion).unwrap();
        let ideal = [fit(&sim.data, 0.2), fit(&sim.data, 1.0)];
        let distorted = [fit(&distorted, 0.2), fit(&distorted, 1.0)];
        Replica { sim, ideal, distorted }
    })
}

fn secs(d: Duration) -> String {
    format!("{:.0}s", d.as_secs_f64())
}

pub fn ideal_recovery() -> Verdict {
    let r = replica();
    let mut c = Checks::new();
    for (fit, zeta) in r.ideal.iter().zip(["0.2", "1"]) {
        let ari = adjusted_rand_index(&fit.analysis.labels, &r.sim.labels);
        c.check(ari >= 0.9, format!("zeta {zeta} ARI {ari:.4} >= 0.90"));
        c.check(fit.elapsed <= BUDGET, format!("zeta {zeta} runtime {}", secs(fit.elapsed)));
    }
    let active = &r.ideal[0].analysis.active;
    c.check(active.iter().all(|&a| a == 3), format!("zeta 0.2 active {active:?} == 3 each"));
    c.note(format!("zeta 1 active {:?}", r.ideal[1].analysis.active));
    c.verdict()
}

pub fn coarsening_contrast() -> Verdict {
    let r = replica();
    let mut c = Checks::new();
    let coarse = &r.distorted[0].analysis.active;
    let exact = &r.distorted[1].analysis.active;
    c.check(coarse.iter().all(|&a| a == 3), format!("zeta 0.2 active {coarse:?} == 3 each"));
    c.check(exact.iter().any(|&a| a > 3), format!("zeta 1 active {exact:?} > 3 somewhere"));
    for (fit, zeta) in r.distorted.iter().zip(["0.2", "1"]) {
        c.check(fit.elapsed <= BUDGET, format!("zeta {zeta} runtime {}", secs(fit.elapsed)));
    }
    c.verdict()
}

/// Each estimated label mapped to the true label it overlaps most.
fn majority_map(labels: &[usize], truth: &[usize]) -> HashMap<usize, usize> {
    let mut tab: HashMap<(usize, usize), usize> = HashMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *tab.entry((l, t)).or_default() += 1;
    }
    let mut best: HashMap<usize, (usize, usize)> = HashMap::new();
    for (&(l, t), &n) in &tab {
        let e = best.entry(l).or_insert((t, 0));
        if n > e.1 || (n == e.1 && t < e.0) {
            *e = (t, n);
        }
    }
    best.into_iter().map(|(l, (t, _))| (l, t)).collect()
}

/// Square root of the per-coordinate average of the pooled within-group
/// variance, groups being (sample, true cluster).
fn pooled_sd(data: &Dataset, truth: &[usize], k: usize) -> f64 {
    let (n, p) = (data.n(), data.p());
    let groups = data.n_samples() * k;
    let group = |i: usize| data.sample_of()[i] * k + truth[i];
    let mut sums = vec![vec![0.0; p]; groups];
    let mut counts = vec![0usize; groups];
    for i in 0..n {
        counts[group(i)] += 1;
        for a in 0..p {
            sums[group(i)][a] += data.row(i)[a];
        }
    }
    let mut ss = 0.0;
    for i in 0..n {
        let g = group(i);
        for a in 0..p {
            let d = data.row(i)[a] - sums[g][a] / counts[g] as f64;
            ss += d * d;
        }
    }
    let used = counts.iter().filter(|&&c| c > 0).count();
    (ss / ((n - used) * p) as f64).sqrt()
}

struct ShiftReport {
    correct: usize,
    within: usize,
    worst: f64,
    within_strict: usize,
    worst_strict: f64,
}

/// Per-observation shift errors of correctly classified observations
/// against both oracles.
fn shift_report(sim: &Simulated, a: &Analysis, tol: f64) -> ShiftReport {
    let k = sim.xi0.len();
    let j = sim.data.n_samples();
    // per-cluster offsets are identified only relative to the sample average
    let centre: Vec<DVector<f64>> = (0..k)
        .map(|c| (0..j).fold(DVector::zeros(sim.data.p()), |s, jj| s + &sim.xi[jj][c]) / j as f64)
        .collect();
    let map = majority_map(&a.labels, &sim.labels);
    let mut r = ShiftReport {
        correct: 0,
        within: 0,
        worst: 0.0,
        within_strict: 0,
        worst_strict: 0.0,
    };
    for i in 0..sim.data.n() {
        let t = sim.labels[i];
        if map[&a.labels[i]] != t {
            continue;
        }
        r.correct += 1;
        let s = sim.data.sample_of()[i];
        let shift: DVector<f64> = a.calibrated.shift.row(i).transpose();
        let err = (&shift - (&sim.xi[s][t] - &centre[t])).norm();
        let err_strict = (&shift - (&sim.xi[s][t] - &sim.xi0[t])).norm();
        r.worst = r.worst.max(err);
        r.worst_strict = r.worst_strict.max(err_strict);
        r.within += usize::from(err <= tol);
        r.within_strict += usize::from(err_strict <= tol);
    }
    r
}

pub fn calibration_quality() -> Verdict {
    let r = replica();
    let sim = &r.sim;
    let a = &r.ideal[0].analysis;
    let mut c = Checks::new();
    c.check(a.alignment < 0.2, format!("zeta 0.2 alignment {:.4} < 0.2", a.alignment));
    let tol = 0.15 * pooled_sd(&sim.data, &sim.labels, sim.xi0.len());
    let s = shift_report(sim, a, tol);
    c.check(
        s.correct > 0 && s.within == s.correct,
        format!(
            "zeta 0.2 shift within {tol:.3} (0.15 pooled SD) of xi_jk - mean_j xi_jk for {}/{} correctly classified, worst {:.3}",
            s.within, s.correct, s.worst
        ),
    );
    c.note(format!(
        "against xi_jk - xi0_k: {}/{} within, worst {:.3}",
        s.within_strict, s.correct, s.worst_strict
    ));
    let s1 = shift_report(sim, &r.ideal[1].analysis, tol);
    c.note(format!(
        "zeta 1 for reference: alignment {:.4}, {}/{} within, worst {:.3}",
        r.ideal[1].analysis.alignment, s1.within, s1.correct, s1.worst
    ));
    c.verdict()
}
