//! Batch runs: configuration, artifact writing and `ζ` sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, SweepRow};
use crate::error::{Error, Result};
use crate::io::{self, DiagnosticRow, Table};
use crate::model::{Dataset, Hyper};
use crate::pipeline;
use crate::sampler::{self, SamplerConfig};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const FAILURE_FILE: &str = "FAILED";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Hyperparameters left unset take their data-scaled defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub k: Option<usize>,
    pub zeta: Option<f64>,
    pub a_eta: Option<f64>,
    pub b_eta: Option<f64>,
    pub b0: Option<Vec<f64>>,
    pub big_b0: Option<Vec<Vec<f64>>>,
    pub m: Option<f64>,
    pub lambda: Option<Vec<Vec<f64>>>,
    pub nu0: Option<f64>,
    pub e0: Option<Vec<Vec<f64>>>,
    pub merge_threshold: Option<f64>,
    pub particles: Option<usize>,
}

fn to_matrix(name: &str, rows: &[Vec<f64>], p: usize) -> Result<DMatrix<f64>> {
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Config(format!("{name} must be a {p} × {p} matrix")));
    }
    Ok(DMatrix::from_fn(p, p, |r, c| rows[r][c]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl HyperConfig {
    /// Every field set from `hyper`.
    pub fn from_hyper(h: &Hyper) -> Self {
        HyperConfig {
            k: Some(h.k),
            zeta: Some(h.zeta),
            a_eta: Some(h.a_eta),
            b_eta: Some(h.b_eta),
            b0: Some(h.b0.iter().copied().collect()),
            big_b0: Some(to_rows(&h.big_b0)),
            m: Some(h.m),
            lambda: Some(to_rows(&h.lambda)),
            nu0: Some(h.nu0),
            e0: Some(to_rows(&h.e0)),
            merge_threshold: Some(h.merge_threshold),
            particles: Some(h.particles),
        }
    }

    pub fn resolve(&self, data: &Dataset) -> Result<Hyper> {
        let p = data.p();
        let mut h = Hyper::from_data(data);
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { h.$f = v; })* };
        }
        take!(k, zeta, a_eta, b_eta, m, nu0, merge_threshold, particles);
        if let Some(b0) = &self.b0 {
            if b0.len() != p {
                return Err(Error::Config(format!("b0 must have {p} entries")));
            }
            h.b0 = DVector::from_column_slice(b0);
        }
        if let Some(v) = &self.big_b0 {
            h.big_b0 = to_matrix("big_b0", v, p)?;
        }
        if let Some(v) = &self.lambda {
            h.lambda = to_matrix("lambda", v, p)?;
        }
        if let Some(v) = &self.e0 {
            h.e0 = to_matrix("e0", v, p)?;
        }
        h.validate(p)?;
        Ok(h)
    }
}

/// Optional pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    /// Write `chain.bin`.
    pub chain: bool,
    /// Write `calibrated.csv` and the alignment score.
    pub calibrate: bool,
    /// Bins of `marginals.csv` for raw and calibrated data; 0 skips it.
    pub marginal_bins: usize,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            chain: true,
            calibrate: true,
            marginal_bins: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub hyper: HyperConfig,
    pub sampler: SamplerConfig,
    pub stages: Stages,
    /// Share of a sample below which a label is not counted as active in
    /// the `active_clusters_min_weight` diagnostic.
    pub min_weight: f64,
    /// Run once per value, each into its own subdirectory.
    pub sweep: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            output: None,
            hyper: HyperConfig::default(),
            sampler: SamplerConfig::default(),
            stages: Stages::default(),
            min_weight: pipeline::DEFAULT_MIN_WEIGHT,
            sweep: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`. A run manifest is
    /// accepted too and yields the configuration it recorded.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let value = match value.get("config") {
                Some(c) if value.get("tool").is_some() => c.clone(),
                _ => value,
            };
            Ok(serde_json::from_value(value)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if !(0.0..1.0).contains(&self.min_weight) {
            return Err(Error::Config("min_weight must lie in [0, 1)".into()));
        }
        if let Some(z) = self.sweep.iter().find(|z| !(**z > 0.0 && **z <= 1.0)) {
            return Err(Error::Config(format!("sweep value {z} is outside (0, 1]")));
        }
        Ok(())
    }
}

/// Structured record of a run, written next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub status: String,
    /// Configuration with every hyperparameter resolved.
    pub config: RunConfig,
    pub n: usize,
    pub p: usize,
    pub samples: Vec<String>,
    pub markers: Vec<String>,
    pub artifacts: Vec<String>,
    pub snapshots: Option<usize>,
    pub eta_acceptance: Option<f64>,
    pub error: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Result of one single-`ζ` run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub analysis: pipeline::Analysis,
}

fn diagnostic_rows(data: &Dataset, labels: &[usize], min_weight: f64, alignment: Option<f64>) -> Vec<DiagnosticRow> {
    let j = data.n_samples();
    let all = diagnostics::active_clusters(labels, data.sample_of(), j, 0.0);
    let cut = diagnostics::active_clusters(labels, data.sample_of(), j, min_weight);
    let mut rows = Vec::new();
    for (name, counts) in [("active_clusters", &all), ("active_clusters_min_weight", &cut)] {
        for (s, &c) in data.sample_names().iter().zip(counts) {
            rows.push(DiagnosticRow {
                metric: name.into(),
                sample_id: s.clone(),
                value: c as f64,
            });
        }
    }
    rows.push(DiagnosticRow {
        metric: "min_weight".into(),
        sample_id: String::new(),
        value: min_weight,
    });
    if let Some(a) = alignment {
        rows.push(DiagnosticRow {
            metric: "alignment_score".into(),
            sample_id: String::new(),
            value: a,
        });
    }
    rows
}

/// Fits `table` with `config` and writes every artifact into `dir`. On
/// failure a `FAILED` marker holding the error is left beside whatever was
/// already written.
pub fn run_single(table: &Table, config: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(FAILURE_FILE));
    let data = &table.data;
    let mut manifest = Manifest {
        tool: "coarsemix".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status: "running".into(),
        config: config.clone(),
        n: data.n(),
        p: data.p(),
        samples: data.sample_names().to_vec(),
        markers: table.markers.clone(),
        artifacts: Vec::new(),
        snapshots: None,
        eta_acceptance: None,
        error: None,
    };
    let result = (|| -> Result<RunOutcome> {
        config.validate()?;
        let hyper = config.hyper.resolve(data)?;
        manifest.config.hyper = HyperConfig::from_hyper(&hyper);
        manifest.write(dir)?;
        let outcome = fit_and_write(table, &hyper, config, dir, &mut manifest.artifacts)?;
        manifest.snapshots = Some(outcome.analysis.chain.snapshots.len());
        manifest.eta_acceptance = Some(outcome.analysis.chain.eta_tuning.acceptance_rate());
        Ok(outcome)
    })();
    match result {
        Ok(outcome) => {
            manifest.status = "completed".into();
            manifest.artifacts.push(MANIFEST_FILE.into());
            manifest.write(dir)?;
            Ok(outcome)
        }
        Err(e) => {
            let msg = e.to_string();
            fs::write(dir.join(FAILURE_FILE), format!("{msg}\n"))?;
            manifest.status = "failed".into();
            manifest.error = Some(msg);
            let _ = manifest.write(dir);
            Err(e)
        }
    }
}

fn fit_and_write(
    table: &Table,
    hyper: &Hyper,
    config: &RunConfig,
    dir: &Path,
    written: &mut Vec<String>,
) -> Result<RunOutcome> {
    let data = &table.data;
    let mut chain = sampler::run(data, hyper, &config.sampler)?;
    let (labels, calibrated, active, alignment) = pipeline::summarize(data, &mut chain, config.min_weight)?;

    let mut put = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(&dir.join(name))?;
        written.push(name.into());
        Ok(())
    };
    if config.stages.chain {
        put("chain.bin", &|p| io::write_chain(p, &chain.snapshots))?;
    }
    put("labels.csv", &|p| io::write_labels(p, data, &labels))?;
    if config.stages.calibrate {
        put("calibrated.csv", &|p| {
            io::write_calibrated(p, data, &table.markers, &calibrated.y_tilde, &labels)
        })?;
    }
    let align = config.stages.calibrate.then_some(alignment);
    put("diagnostics.csv", &|p| {
        io::write_diagnostics(p, &diagnostic_rows(data, &labels, config.min_weight, align))
    })?;
    if config.stages.marginal_bins > 0 {
        let bins = config.stages.marginal_bins;
        let raw = diagnostics::marginal_export(&data.y(), data.sample_of(), data.n_samples(), bins)?;
        put("marginals_raw.csv", &|p| io::write_marginals(p, &table.markers, data.sample_names(), &raw))?;
        if config.stages.calibrate {
            let cal = diagnostics::marginal_export(&calibrated.y_tilde, data.sample_of(), data.n_samples(), bins)?;
            put("marginals_calibrated.csv", &|p| {
                io::write_marginals(p, &table.markers, data.sample_names(), &cal)
            })?;
        }
    }
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        analysis: pipeline::Analysis {
            chain,
            labels,
            calibrated,
            active,
            alignment,
        },
    })
}

/// Subdirectory name of one sweep run.
pub fn sweep_dir_name(zeta: f64) -> String {
    format!("zeta_{zeta}")
}

/// Runs every `ζ` into its own subdirectory of `out` and writes the sweep
/// table. Failed runs are recorded in the table and the sweep continues.
pub fn run_sweep(table: &Table, config: &RunConfig, zetas: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(zetas.len());
    for &zeta in zetas {
        let mut cfg = config.clone();
        cfg.hyper.zeta = Some(zeta);
        cfg.sweep.clear();
        let dir = out.join(sweep_dir_name(zeta));
        rows.push(match run_single(table, &cfg, &dir) {
            Ok(o) => diagnostics::sweep_row(zeta, &o.analysis),
            Err(e) => {
                log::error!("zeta {zeta}: {e}");
                SweepRow {
                    zeta,
                    counts: Vec::new(),
                    constant: false,
                    alignment: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    write_sweep(&out.join(SWEEP_FILE), table.data.sample_names(), &rows)?;
    Ok(rows)
}

/// Sweep table: one row per `ζ` with the active-cluster count of every
/// sample, the constant-count flag, the alignment score and any error.
pub fn write_sweep(path: &Path, samples: &[String], rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["zeta".to_string()];
    header.extend(samples.iter().cloned());
    header.extend(["constant", "alignment", "error"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.zeta.to_string()];
        if r.counts.len() == samples.len() {
            rec.extend(r.counts.iter().map(|c| c.to_string()));
        } else {
            rec.extend(samples.iter().map(|_| String::new()));
        }
        rec.push(r.constant.to_string());
        rec.push(r.alignment.map(|a| a.to_string()).unwrap_or_default());
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Ingests `config.input` and runs either once or as a sweep.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let input = config.input.as_deref().ok_or_else(|| Error::Config("no input file given".into()))?;
    let out = config.output.as_deref().ok_or_else(|| Error::Config("no output directory given".into()))?;
    let table = io::ingest(input)?;
    if config.sweep.is_empty() {
        run_single(&table, config, out).map(|o| PipelineOutcome::Single(Box::new(o)))
    } else {
        run_sweep(&table, config, &config.sweep, out).map(PipelineOutcome::Sweep)
    }
}

#[derive(Debug)]
pub enum PipelineOutcome {
    Single(Box<RunOutcome>),
    Sweep(Vec<SweepRow>),
}

impl PipelineOutcome {
    /// False when any sweep run failed.
    pub fn all_succeeded(&self) -> bool {
        match self {
            PipelineOutcome::Single(_) => true,
            PipelineOutcome::Sweep(rows) => rows.iter().all(|r| r.error.is_none()),
        }
    }
}
