//! Trace file formats.
//!
//! Binary (`EMTR`): magic, `u8` version 1, `u32` row count, `u32` column
//! count, row-major `f64` samples, then one label byte per row
//! (0 = benign, 1 = anomalous). All integers and floats are little-endian.
//!
//! CSV: one trace per line, comma-separated decimal samples. Labels and
//! per-row provenance live in a JSON sidecar next to the data file
//! (`<file>.json`), which is also written for binary files.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::signal::{Label, TraceMatrix, TraceMeta};

pub const TRACE_MAGIC: &[u8; 4] = b"EMTR";
pub const TRACE_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Binary,
}

impl TraceFormat {
    /// `.csv` files are CSV, anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TraceFormat::Csv,
            _ => TraceFormat::Binary,
        }
    }
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TraceFormat::Csv),
            "binary" | "bin" | "emtr" => Ok(TraceFormat::Binary),
            other => Err(Error::InvalidParameter(format!(
                "unknown trace format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRecord {
    pub index: usize,
    pub label: Label,
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<String>,
}

/// Sidecar manifest: run provenance plus the per-row label table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub run: Option<RunManifest>,
    pub rows: Vec<RowRecord>,
}

impl Sidecar {
    pub fn for_matrix(m: &TraceMatrix, run: Option<RunManifest>) -> Self {
        let rows = m
            .labels()
            .iter()
            .zip(m.meta())
            .enumerate()
            .map(|(index, (&label, meta))| RowRecord {
                index,
                label,
                snr_db: meta.snr_db,
                seed: meta.seed,
                injection: meta.injection.clone(),
            })
            .collect();
        Sidecar { run, rows }
    }

    /// The SNR shared by every row, if there is one.
    pub fn common_snr_db(&self) -> Option<f64> {
        let first = self.rows.first()?.snr_db?;
        self.rows
            .iter()
            .all(|r| r.snr_db == Some(first))
            .then_some(first)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_binary(m: &TraceMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Format("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * 8 + m.rows());
    out.extend_from_slice(TRACE_MAGIC);
    out.push(TRACE_VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend(m.labels().iter().map(|l| l.as_byte()));
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<TraceMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is too short for an EMTR header",
            bytes.len()
        )));
    }
    if &bytes[..4] != TRACE_MAGIC {
        return Err(Error::Format("bad magic, expected EMTR".into()));
    }
    if bytes[4] != TRACE_VERSION {
        return Err(Error::Format(format!(
            "unsupported EMTR version {}",
            bytes[4]
        )));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("row x column overflow".into()))?;
    let expected = HEADER_LEN + n * 8 + rows;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "EMTR {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + n * 8];
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = bytes[HEADER_LEN + n * 8..]
        .iter()
        .map(|&b| Label::from_byte(b))
        .collect::<Result<Vec<_>>>()?;
    TraceMatrix::from_row_major(rows, cols, data, labels)
}

pub fn encode_csv(m: &TraceMatrix) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses CSV samples; every row is labeled benign until a sidecar says otherwise.
pub fn decode_csv(text: &str) -> Result<TraceMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {f:?}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "line {}: {} samples, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("no trace rows".into()));
    }
    let n = rows.len();
    TraceMatrix::from_rows(rows, vec![Label::Benign; n])
}

pub fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let sc =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
    Ok(Some(sc))
}

fn apply_sidecar(m: &mut TraceMatrix, sc: &Sidecar, labels_from_sidecar: bool) -> Result<()> {
    if sc.rows.len() != m.rows() {
        return Err(Error::Format(format!(
            "sidecar lists {} rows, data has {}",
            sc.rows.len(),
            m.rows()
        )));
    }
    for r in &sc.rows {
        if r.index >= m.rows() {
            return Err(Error::Format(format!(
                "sidecar row index {} out of range",
                r.index
            )));
        }
        if labels_from_sidecar {
            m.set_label(r.index, r.label);
        } else if m.labels()[r.index] != r.label {
            return Err(Error::Format(format!(
                "row {}: label disagrees with sidecar",
                r.index
            )));
        }
        m.meta_mut()[r.index] = TraceMeta {
            snr_db: r.snr_db,
            seed: r.seed,
            injection: r.injection.clone(),
        };
    }
    Ok(())
}

pub fn save_traces(m: &TraceMatrix, path: &Path, format: TraceFormat) -> Result<()> {
    save_traces_with(m, path, format, None)
}

/// Writes the data file and its sidecar.
pub fn save_traces_with(
    m: &TraceMatrix,
    path: &Path,
    format: TraceFormat,
    run: Option<&RunManifest>,
) -> Result<()> {
    let bytes = match format {
        TraceFormat::Binary => encode_binary(m)?,
        TraceFormat::Csv => encode_csv(m).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sc = Sidecar::for_matrix(m, run.cloned());
    let json = serde_json::to_string_pretty(&sc).map_err(|e| Error::Format(e.to_string()))?;
    let sp = sidecar_path(path);
    fs::write(&sp, json).map_err(|e| Error::io(&sp, e))
}

pub fn load_traces(path: &Path, format: TraceFormat) -> Result<TraceMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut m = match format {
        TraceFormat::Binary => decode_binary(&bytes)?,
        TraceFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
            decode_csv(&text)?
        }
    };
    if let Some(sc) = read_sidecar(path)? {
        apply_sidecar(&mut m, &sc, format == TraceFormat::Csv)?;
    }
    Ok(m)
}
