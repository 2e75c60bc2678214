use coarsemix::calibrate::{self, disagreement, matching_permutation};
use coarsemix::model::{ChainState, ClusterParams, Dataset};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Checks, Verdict};

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn snapshot(n: usize, p: usize, j: usize, k: usize, rng: &mut ChaCha8Rng) -> ChainState {
    let clusters = (0..k)
        .map(|_| {
            let xi0 = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
            ClusterParams {
                xi: (0..j).map(|_| &xi0 + DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0))).collect(),
                xi0,
                g: DMatrix::identity(p, p),
                psi: DVector::zeros(p),
                e: DMatrix::identity(p, p),
            }
        })
        .collect();
    ChainState {
        iteration: 0,
        log_weights: DMatrix::from_element(j, k, -(k as f64).ln()),
        labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
        clusters,
        eta: 1.0,
        z: vec![0.5; n],
    }
}

/// Cases where the matching is worse than the best of all `K!` relabelings.
fn hungarian_mismatches(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let (mut cases, mut bad) = (0, 0);
    for k in 1..=7 {
        let perms = permutations(k);
        let reps = if k == 7 { 20 } else { 30 };
        for _ in 0..reps {
            let n = rng.random_range(1..40);
            let used = rng.random_range(1..=k);
            let reference: Vec<usize> = (0..n).map(|_| rng.random_range(0..used)).collect();
            let mut shuffle: Vec<usize> = (0..k).collect();
            shuffle.shuffle(rng);
            let labels: Vec<usize> = reference
                .iter()
                .map(|&r| if rng.random::<f64>() < 0.3 { rng.random_range(0..k) } else { shuffle[r] })
                .collect();
            let perm = matching_permutation(&reference, &labels, k);
            let mut seen = perm.clone();
            seen.sort();
            let best = perms.iter().map(|q| disagreement(&reference, &labels, q)).min().unwrap();
            if seen != (0..k).collect::<Vec<_>>() || disagreement(&reference, &labels, &perm) != best {
                bad += 1;
            }
            cases += 1;
        }
    }
    (cases, bad)
}

/// Chains whose calibration changes in any bit after a random relabeling
/// of every snapshot.
fn calibration_changes(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let (trials, mut bad) = (50, 0);
    for _ in 0..trials {
        let (n, p, j, k) = (60, 2, 3, 6);
        let y = DMatrix::from_fn(n, p, |_, _| rng.random_range(-10.0..10.0));
        let data = Dataset::new(&y, (0..n).map(|i| i % j).collect(), j).unwrap();
        let chain: Vec<ChainState> = (0..5).map(|_| snapshot(n, p, j, k, rng)).collect();
        let mut permuted = chain.clone();
        for s in permuted.iter_mut() {
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(rng);
            s.permute(&perm);
        }
        let a = calibrate::calibrate(&chain, &data).unwrap();
        let b = calibrate::calibrate(&permuted, &data).unwrap();
        let same = |x: &DMatrix<f64>, y: &DMatrix<f64>| x.iter().zip(y.iter()).all(|(u, v)| u.to_bits() == v.to_bits());
        if !same(&a.y_tilde, &b.y_tilde) || !same(&a.shift, &b.shift) {
            bad += 1;
        }
    }
    (trials, bad)
}

pub fn suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut c = Checks::new();
    let (cases, bad) = hungarian_mismatches(&mut rng);
    c.check(cases >= 200 && bad == 0, format!("matching beaten by exhaustive search in {bad} of {cases} cases"));
    let (trials, bad) = calibration_changes(&mut rng);
    c.check(bad == 0, format!("calibration changed under relabeling in {bad} of {trials} chains"));
    c.verdict()
}
