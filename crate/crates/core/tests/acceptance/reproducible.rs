use std::path::Path;

use coarsemix::io::{self, Table};
use coarsemix::runner::{self, RunConfig};
use coarsemix::simulate::{self, SimSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Checks, Verdict};

const ARTIFACTS: [&str; 2] = ["labels.csv", "calibrated.csv"];

fn run(table: &Table, workers: usize, dir: &Path) -> Vec<Vec<u8>> {
    let mut config = RunConfig::default();
    config.sampler.n_iter = 300;
    config.sampler.n_burn = 150;
    config.sampler.seed = 42;
    config.sampler.workers = workers;
    config.sampler.progress_every = 0;
    config.stages.chain = false;
    runner::run_single(table, &config, dir).expect("run completes");
    ARTIFACTS.iter().map(|a| std::fs::read(dir.join(a)).unwrap()).collect()
}

pub fn suite() -> Verdict {
    let spec = SimSpec::replica();
    let sim = simulate::generate(&spec, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let table = Table {
        data: sim.data,
        markers: io::default_markers(2),
    };
    let tmp = tempfile::tempdir().unwrap();
    let first = run(&table, 1, &tmp.path().join("a"));
    let again = run(&table, 1, &tmp.path().join("b"));
    let wide = run(&table, 4, &tmp.path().join("c"));
    let mut c = Checks::new();
    for (i, name) in ARTIFACTS.iter().enumerate() {
        c.check(first[i] == again[i], format!("{name} identical across runs ({} bytes)", first[i].len()));
        c.check(first[i] == wide[i], format!("{name} identical with 1 and 4 workers"));
    }
    c.verdict()
}
