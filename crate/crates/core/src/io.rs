//! Tabular ingest, result tables and the binary chain format.
//!
//! Chain layout (`chain.bin`), all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "CMXCHAIN"
//! version  u32      1
//! n p J K  u64 × 4  observations, markers, samples, clusters
//! count    u64      number of snapshots
//! per snapshot:
//!   iteration  u64
//!   eta        f64
//!   log_w      f64 × J·K   row-major, sample by sample
//!   labels     u32 × n
//!   z          f64 × n
//!   per cluster:
//!     xi   f64 × J·p   sample by sample
//!     xi0  f64 × p
//!     G    f64 × p·p   row-major
//!     psi  f64 × p
//!     E    f64 × p·p   row-major
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, ClusterParams, Dataset};

pub const CHAIN_MAGIC: &[u8; 8] = b"CMXCHAIN";
pub const CHAIN_VERSION: u32 = 1;

/// Observations read from a delimited file, with the marker column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub data: Dataset,
    pub markers: Vec<String>,
}

fn ingest_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn sniff_delimiter(first_line: &str) -> u8 {
    if !first_line.contains(',') && first_line.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads a delimited file whose header starts with `sample_id` followed by
/// one column per marker. Samples are numbered by first appearance.
pub fn ingest(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| ingest_error(path, e.to_string()))?;
    ingest_str(&text).map_err(|msg| ingest_error(path, msg))
}

/// [`ingest`] on in-memory text; errors are plain messages.
pub fn ingest_str(text: &str) -> std::result::Result<Table, String> {
    let first = text.lines().find(|l| !l.trim().is_empty()).ok_or("empty file")?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(first))
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| e.to_string())?,
        None => return Err("empty file".into()),
    };
    if header.len() < 2 {
        return Err("at least one marker column is required after sample_id".into());
    }
    if header.iter().skip(1).all(|c| c.parse::<f64>().is_ok()) {
        return Err("missing header: the first line must name the columns, starting with sample_id".into());
    }
    if &header[0] != "sample_id" {
        return Err(format!("first header column must be sample_id, found {:?}", &header[0]));
    }
    let markers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let p = markers.len();

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut sample_of = Vec::new();
    for (r, rec) in records.enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| format!("data row {row}: {e}"))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let id = rec[0].to_string();
        let j = *index.entry(id.clone()).or_insert_with(|| {
            names.push(id);
            names.len() - 1
        });
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| format!("data row {row}, column {}: {cell:?} is not a number", markers[c]))?;
            if !v.is_finite() {
                return Err(format!("data row {row}, column {}: non-finite value {cell:?}", markers[c]));
            }
            values.push(v);
        }
        sample_of.push(j);
    }
    if sample_of.is_empty() {
        return Err("no data rows after the header".into());
    }
    let data = Dataset::from_rows(values, p, sample_of, names).map_err(|e| e.to_string())?;
    Ok(Table { data, markers })
}

/// Default marker names `m1..mp` for data without named columns.
pub fn default_markers(p: usize) -> Vec<String> {
    (1..=p).map(|a| format!("m{a}")).collect()
}

fn check_markers(data: &Dataset, markers: &[String]) -> Result<()> {
    if markers.len() != data.p() {
        return Err(Error::invalid(format!(
            "{} marker names for {} columns",
            markers.len(),
            data.p()
        )));
    }
    Ok(())
}

/// Writes `data` in the format [`ingest`] reads. Values use the shortest
/// decimal form that parses back to the same bits.
pub fn write_dataset(path: &Path, data: &Dataset, markers: &[String]) -> Result<()> {
    check_markers(data, markers)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("sample_id").chain(markers.iter().map(String::as_str)))?;
    for i in 0..data.n() {
        let mut rec = vec![data.sample_names()[data.sample_of()[i]].clone()];
        rec.extend(data.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub row: usize,
    pub sample_id: String,
    pub label: usize,
}

pub fn write_labels(path: &Path, data: &Dataset, labels: &[usize]) -> Result<()> {
    if labels.len() != data.n() {
        return Err(Error::invalid("labels do not match the data"));
    }
    let mut w = csv::Writer::from_path(path)?;
    for (i, &label) in labels.iter().enumerate() {
        w.serialize(LabelRow {
            row: i,
            sample_id: data.sample_names()[data.sample_of()[i]].clone(),
            label,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Calibrated observations with `sample_id`, one column per marker and the
/// final label.
pub fn write_calibrated(
    path: &Path,
    data: &Dataset,
    markers: &[String],
    y_tilde: &DMatrix<f64>,
    labels: &[usize],
) -> Result<()> {
    check_markers(data, markers)?;
    if y_tilde.shape() != (data.n(), data.p()) || labels.len() != data.n() {
        return Err(Error::invalid("calibrated values do not match the data"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let header = std::iter::once("sample_id")
        .chain(markers.iter().map(String::as_str))
        .chain(std::iter::once("label"));
    w.write_record(header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.sample_names()[data.sample_of()[i]].clone()];
        rec.extend(y_tilde.row(i).iter().map(|v| v.to_string()));
        rec.push(labels[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Calibrated values as a [`Table`] plus the label column.
pub fn read_calibrated(path: &Path) -> Result<(Table, Vec<usize>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let w = header.len();
    if w < 3 || &header[0] != "sample_id" || &header[w - 1] != "label" {
        return Err(ingest_error(path, "expected sample_id, marker and label columns"));
    }
    let markers: Vec<String> = header.iter().skip(1).take(w - 2).map(str::to_string).collect();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let (mut values, mut sample_of, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |cell: &str| ingest_error(path, format!("data row {}: cannot parse {cell:?}", r + 1));
        let id = rec[0].to_string();
        let j = *index.entry(id.clone()).or_insert_with(|| {
            names.push(id);
            names.len() - 1
        });
        sample_of.push(j);
        for cell in rec.iter().skip(1).take(w - 2) {
            values.push(cell.parse::<f64>().map_err(|_| bad(cell))?);
        }
        labels.push(rec[w - 1].parse::<usize>().map_err(|_| bad(&rec[w - 1]))?);
    }
    let data = Dataset::from_rows(values, markers.len(), sample_of, names)?;
    Ok((Table { data, markers }, labels))
}

/// One line of `diagnostics.csv`; `sample_id` is empty for run-level
/// metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub metric: String,
    pub sample_id: String,
    pub value: f64,
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Long-format marginal histograms: one row per marker, sample and bin.
pub fn write_marginals(
    path: &Path,
    markers: &[String],
    sample_names: &[String],
    table: &crate::diagnostics::MarginalTable,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["marker", "sample_id", "bin", "lower", "upper", "density"])?;
    for (a, (edges, dens)) in table.edges.iter().zip(&table.density).enumerate() {
        for (j, row) in dens.iter().enumerate() {
            for (b, d) in row.iter().enumerate() {
                w.write_record([
                    markers[a].clone(),
                    sample_names[j].clone(),
                    b.to_string(),
                    edges[b].to_string(),
                    edges[b + 1].to_string(),
                    d.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Dimensions recorded in a chain file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainDims {
    pub n: usize,
    pub p: usize,
    pub n_samples: usize,
    pub k: usize,
}

impl ChainDims {
    fn of(s: &ChainState) -> Self {
        ChainDims {
            n: s.labels.len(),
            p: s.clusters.first().map_or(0, |c| c.xi0.len()),
            n_samples: s.log_weights.nrows(),
            k: s.k(),
        }
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<'a>(w: &mut impl Write, vs: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn put_row_major(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    for r in m.row_iter() {
        put_f64s(w, r.iter())?;
    }
    Ok(())
}

/// Writes snapshots in the layout described at the top of this module.
pub fn write_chain(path: &Path, snapshots: &[ChainState]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_chain_to(&mut w, snapshots)?;
    w.flush()?;
    Ok(())
}

pub fn write_chain_to(w: &mut impl Write, snapshots: &[ChainState]) -> Result<()> {
    let dims = snapshots.first().map(ChainDims::of).unwrap_or(ChainDims {
        n: 0,
        p: 0,
        n_samples: 0,
        k: 0,
    });
    if let Some(s) = snapshots.iter().find(|s| ChainDims::of(s) != dims) {
        return Err(Error::ChainFormat(format!(
            "snapshot at iteration {} has different dimensions",
            s.iteration
        )));
    }
    w.write_all(CHAIN_MAGIC)?;
    w.write_all(&CHAIN_VERSION.to_le_bytes())?;
    for d in [dims.n, dims.p, dims.n_samples, dims.k, snapshots.len()] {
        put_u64(w, d as u64)?;
    }
    for s in snapshots {
        put_u64(w, s.iteration as u64)?;
        put_f64s(w, [s.eta].iter())?;
        put_row_major(w, &s.log_weights)?;
        for &l in &s.labels {
            let l = u32::try_from(l).map_err(|_| Error::ChainFormat("label exceeds u32".into()))?;
            w.write_all(&l.to_le_bytes())?;
        }
        put_f64s(w, s.z.iter())?;
        for c in &s.clusters {
            for x in &c.xi {
                put_f64s(w, x.iter())?;
            }
            put_f64s(w, c.xi0.iter())?;
            put_row_major(w, &c.g)?;
            put_f64s(w, c.psi.iter())?;
            put_row_major(w, &c.e)?;
        }
    }
    Ok(())
}

struct LeReader<R> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::ChainFormat("truncated file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        let v = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(v))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let v = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_row_slice(rows, cols, &v))
    }
}

pub fn read_chain(path: &Path) -> Result<(ChainDims, Vec<ChainState>)> {
    read_chain_from(BufReader::new(File::open(path)?))
}

pub fn read_chain_from(r: impl Read) -> Result<(ChainDims, Vec<ChainState>)> {
    let mut r = LeReader { inner: r };
    if &r.bytes::<8>()? != CHAIN_MAGIC {
        return Err(Error::ChainFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != CHAIN_VERSION {
        return Err(Error::ChainFormat(format!("unsupported version {version}")));
    }
    let mut dim = || -> Result<usize> {
        usize::try_from(r.u64()?).map_err(|_| Error::ChainFormat("dimension overflow".into()))
    };
    let dims = ChainDims {
        n: dim()?,
        p: dim()?,
        n_samples: dim()?,
        k: dim()?,
    };
    let count = dim()?;
    let (n, p, nj, k) = (dims.n, dims.p, dims.n_samples, dims.k);
    let mut snapshots = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let iteration = dim_of(r.u64()?)?;
        let eta = r.f64()?;
        let log_weights = r.matrix(nj, k)?;
        let labels = (0..n)
            .map(|_| {
                let l = u32::from_le_bytes(r.bytes()?) as usize;
                if l >= k {
                    return Err(Error::ChainFormat(format!("label {l} out of range")));
                }
                Ok(l)
            })
            .collect::<Result<Vec<_>>>()?;
        let z = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut clusters = Vec::with_capacity(k);
        for _ in 0..k {
            let xi = (0..nj).map(|_| r.vector(p)).collect::<Result<Vec<_>>>()?;
            clusters.push(ClusterParams {
                xi,
                xi0: r.vector(p)?,
                g: r.matrix(p, p)?,
                psi: r.vector(p)?,
                e: r.matrix(p, p)?,
            });
        }
        snapshots.push(ChainState {
            iteration,
            log_weights,
            labels,
            clusters,
            eta,
            z,
        });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::ChainFormat("trailing bytes after the last snapshot".into()));
    }
    Ok((dims, snapshots))
}

fn dim_of(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::ChainFormat("dimension overflow".into()))
}
