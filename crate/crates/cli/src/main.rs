use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use coarsemix::runner::{self, PipelineOutcome, RunConfig};

/// Fit a coarsened hierarchical skew-normal mixture to multi-sample data,
/// then classify and calibrate every observation.
#[derive(Debug, Parser)]
#[command(name = "coarsemix", version)]
struct Args {
    /// Delimited file: `sample_id` then one numeric column per marker.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for the artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML or JSON run configuration, or a previous run's manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coarsening exponent in (0, 1].
    #[arg(long)]
    zeta: Option<f64>,
    /// Maximal number of clusters.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Particles per cluster.
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    merge_threshold: Option<f64>,
    /// Comma-separated coarsening exponents; one run per value.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "COARSEMIX_WORKERS")]
    workers: Option<usize>,
}

impl Args {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src { c.$($dst).+ = v; })*
            };
        }
        macro_rules! set_opt {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src { c.$($dst).+ = Some(v); })*
            };
        }
        set_opt!(input => input, out => output, zeta => hyper.zeta, k_max => hyper.k,
            particles => hyper.particles, merge_threshold => hyper.merge_threshold);
        set!(iters => sampler.n_iter, burn => sampler.n_burn, thin => sampler.thin,
            seed => sampler.seed, workers => sampler.workers, sweep => sweep);
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<bool> {
    let config = Args::parse().into_config()?;
    let outcome = runner::run_pipeline(&config)?;
    match &outcome {
        PipelineOutcome::Single(o) => log::info!(
            "wrote {} (active clusters per sample {:?}, alignment {:.4})",
            o.dir.display(),
            o.analysis.active,
            o.analysis.alignment
        ),
        PipelineOutcome::Sweep(rows) => {
            for r in rows {
                match &r.error {
                    None => log::info!("zeta {}: active {:?} constant {}", r.zeta, r.counts, r.constant),
                    Some(e) => log::error!("zeta {}: {e}", r.zeta),
                }
            }
        }
    }
    Ok(outcome.all_succeeded())
}
