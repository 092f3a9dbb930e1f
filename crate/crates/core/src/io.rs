//! On-disk formats.
//!
//! Binary files are little-endian. An instance file is
//!
//! ```text
//! magic      8 bytes  "PGDINST1"
//! kind       u8       0 identity, 1 gaussian, 2 custom
//! norm       u8       0 count, 1 unit
//! n, m, r    u64 x 3
//! r_star     u64      0 when the instance carries no ground truth
//! sigma2     f64
//! noise_seed u64
//! y          m x f64
//! matrices   m x (n x n) f64, row-major, absent for the identity kind
//! z          n x r_star f64, row-major, absent when r_star = 0
//! ```
//!
//! An ensemble file holds user supplied matrices:
//! `"PGDENS01"`, `n: u64`, `m: u64`, then `m` row-major `n x n` blocks of f64.
//!
//! Factors are CSV with one matrix row per line and no header. Traces are CSV
//! with the header [`TRACE_COLUMNS`]; missing values are empty fields.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Factor, GroundTruth, ProblemInstance};
use crate::sensing::{EnsembleKind, MeasurementEnsemble, Normalization, Observations};
use crate::solver::{IterationRecord, RecordFlag};
use crate::Mat;

const INSTANCE_MAGIC: &[u8; 8] = b"PGDINST1";
const ENSEMBLE_MAGIC: &[u8; 8] = b"PGDENS01";

pub const TRACE_COLUMNS: [&str; 12] = [
    "k",
    "f",
    "eta",
    "alpha",
    "grad_fro",
    "grad_dual_p",
    "lambda_min_gram",
    "err_fro",
    "sin_theta_rstar",
    "pl_ratio",
    "wall_ns",
    "flag",
];

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn row_major(&mut self, m: &Mat) -> std::io::Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)])?;
            }
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> std::io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn row_major(&mut self, rows: usize, cols: usize) -> std::io::Result<Mat> {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

fn create(path: &Path) -> Result<Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(Writer { inner: BufWriter::new(f) })
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Reader { inner: BufReader::new(f) })
}

fn read_err(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format(format!("{}: truncated file", path.display()))
    } else {
        Error::io(path, e)
    }
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in memory")))
}

fn checked_len(parts: &[usize], what: &str) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .filter(|&len| len <= (1usize << 34))
        .ok_or_else(|| Error::Format(format!("{what} is implausibly large")))
}

pub fn save_instance(path: &Path, instance: &ProblemInstance) -> Result<()> {
    let ens = instance.ensemble();
    let mut w = create(path)?;
    let kind = match ens.kind() {
        EnsembleKind::Identity => 0u8,
        EnsembleKind::GaussianSym => 1,
        EnsembleKind::Custom => 2,
    };
    let norm = match ens.normalization() {
        Normalization::Count => 0u8,
        Normalization::Unit => 1,
    };
    let r_star = instance.truth().map_or(0, |t| t.r_star());
    let body = (|| -> std::io::Result<()> {
        w.bytes(INSTANCE_MAGIC)?;
        w.bytes(&[kind, norm])?;
        w.u64(ens.n() as u64)?;
        w.u64(ens.m() as u64)?;
        w.u64(instance.search_rank() as u64)?;
        w.u64(r_star as u64)?;
        w.f64(instance.observations().sigma2())?;
        w.u64(instance.observations().noise_seed())?;
        for &v in instance.y().iter() {
            w.f64(v)?;
        }
        if let Some(rows) = ens.rows() {
            for i in 0..ens.m() {
                // Row i of `rows` is the column-stacked A_i; A_i is symmetric so
                // this is also its row-major layout.
                for &v in rows.row(i).iter() {
                    w.f64(v)?;
                }
            }
        }
        if let Some(t) = instance.truth() {
            w.row_major(t.z())?;
        }
        w.inner.flush()
    })();
    body.map_err(|e| Error::io(path, e))
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    let mut rd = open(path)?;
    let e = |err| read_err(path, err);
    let magic: [u8; 8] = rd.bytes().map_err(e)?;
    if &magic != INSTANCE_MAGIC {
        return Err(Error::Format(format!("{}: not an instance file", path.display())));
    }
    let kind = match rd.u8().map_err(e)? {
        0 => EnsembleKind::Identity,
        1 => EnsembleKind::GaussianSym,
        2 => EnsembleKind::Custom,
        k => return Err(Error::Format(format!("unknown ensemble kind tag {k}"))),
    };
    let norm = match rd.u8().map_err(e)? {
        0 => Normalization::Count,
        1 => Normalization::Unit,
        k => return Err(Error::Format(format!("unknown normalization tag {k}"))),
    };
    let n = to_usize(rd.u64().map_err(e)?, "n")?;
    let m = to_usize(rd.u64().map_err(e)?, "m")?;
    let r = to_usize(rd.u64().map_err(e)?, "r")?;
    let r_star = to_usize(rd.u64().map_err(e)?, "r_star")?;
    let sigma2 = rd.f64().map_err(e)?;
    let noise_seed = rd.u64().map_err(e)?;
    checked_len(&[m, n, n], "measurement block")?;
    let mut y = crate::Vector::zeros(m);
    for v in y.iter_mut() {
        *v = rd.f64().map_err(e)?;
    }
    let ensemble = match kind {
        EnsembleKind::Identity => {
            if m != n * n {
                return Err(Error::Format(format!("identity ensemble needs m = n^2, got n={n}, m={m}")));
            }
            MeasurementEnsemble::identity(n).with_normalization(norm)
        }
        _ => {
            let mut rows = Mat::zeros(m, n * n);
            for i in 0..m {
                for j in 0..n * n {
                    rows[(i, j)] = rd.f64().map_err(e)?;
                }
            }
            MeasurementEnsemble::from_rows(kind, n, rows, norm)
        }
    };
    let truth = if r_star > 0 {
        checked_len(&[n, r_star], "ground truth")?;
        Some(GroundTruth::from_factor(rd.row_major(n, r_star).map_err(e)?)?)
    } else {
        None
    };
    let mut rest = Vec::new();
    rd.inner.read_to_end(&mut rest).map_err(e)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    ProblemInstance::new(ensemble, Observations::new(y, sigma2, noise_seed)?, truth, r)
}

pub fn save_ensemble_matrices(path: &Path, matrices: &[Mat]) -> Result<()> {
    let n = matrices.first().map_or(0, |a| a.nrows());
    let mut w = create(path)?;
    let body = (|| -> std::io::Result<()> {
        w.bytes(ENSEMBLE_MAGIC)?;
        w.u64(n as u64)?;
        w.u64(matrices.len() as u64)?;
        for a in matrices {
            w.row_major(a)?;
        }
        w.inner.flush()
    })();
    body.map_err(|e| Error::io(path, e))
}

/// Reads an ensemble file into a custom ensemble (count normalization).
pub fn load_ensemble(path: &Path) -> Result<MeasurementEnsemble> {
    let mut rd = open(path)?;
    let e = |err| read_err(path, err);
    let magic: [u8; 8] = rd.bytes().map_err(e)?;
    if &magic != ENSEMBLE_MAGIC {
        return Err(Error::Format(format!("{}: not an ensemble file", path.display())));
    }
    let n = to_usize(rd.u64().map_err(e)?, "n")?;
    let m = to_usize(rd.u64().map_err(e)?, "m")?;
    checked_len(&[m, n, n], "measurement block")?;
    let matrices = (0..m)
        .map(|_| rd.row_major(n, n))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(e)?;
    MeasurementEnsemble::custom(&matrices)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, e),
        _ => Error::Format(format!("{}: {e}", path.display())),
    }
}

pub fn save_factor(path: &Path, x: &Factor) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let m = x.as_mat();
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_factor(path: &Path) -> Result<Factor> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("{}: bad number {s:?}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let r = rows.first().map_or(0, |row| row.len());
    let n = rows.len();
    if rows.iter().any(|row| row.len() != r) {
        return Err(Error::Format(format!("{}: ragged factor rows", path.display())));
    }
    Factor::new(Mat::from_fn(n, r, |i, j| rows[i][j]))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_row(rec: &IterationRecord) -> [String; 12] {
    [
        rec.k.to_string(),
        rec.f.to_string(),
        opt(rec.eta),
        opt(rec.alpha),
        rec.grad_fro.to_string(),
        opt(rec.grad_dual_p),
        rec.lambda_min_gram.to_string(),
        opt(rec.err_fro),
        opt(rec.sin_theta_rstar),
        opt(rec.pl_ratio),
        rec.wall_ns.to_string(),
        match rec.flag {
            RecordFlag::Ok => "ok".to_string(),
            other => other.as_str().to_string(),
        },
    ]
}

pub fn write_trace<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(TRACE_COLUMNS).map_err(fmt)?;
    for rec in records {
        w.write_record(trace_row(rec)).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn save_trace(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(BufWriter::new(f), records).map_err(|e| match e {
        Error::Format(msg) => Error::Io { path: path.display().to_string(), message: msg },
        other => other,
    })
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Format(format!("unexpected trace header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| Error::Format(format!("row {}: bad {} value {:?}", line + 1, TRACE_COLUMNS[i], field(i)));
        let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
        let maybe = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let flag = match field(11) {
            "ok" => RecordFlag::Ok,
            "diverged" => RecordFlag::Diverged,
            "singular" => RecordFlag::Singular,
            _ => return Err(bad(11)),
        };
        out.push(IterationRecord {
            k: field(0).parse().map_err(|_| bad(0))?,
            f: num(1)?,
            eta: maybe(2)?,
            alpha: maybe(3)?,
            grad_fro: num(4)?,
            grad_dual_p: maybe(5)?,
            lambda_min_gram: num(6)?,
            err_fro: maybe(7)?,
            sin_theta_rstar: maybe(8)?,
            pl_ratio: maybe(9)?,
            wall_ns: field(10).parse().map_err(|_| bad(10))?,
            flag,
        });
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(f)).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
