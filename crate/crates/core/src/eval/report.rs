use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellResult, DataConfig, Preset};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub run: Option<RunManifest>,
    pub preset: Option<Preset>,
    pub data: DataConfig,
    pub cells: Vec<CellResult>,
}

impl ExperimentReport {
    pub fn new(preset: Option<Preset>, data: DataConfig, cells: Vec<CellResult>) -> Self {
        ExperimentReport {
            run: None,
            preset,
            data,
            cells,
        }
    }
}

/// One line per cell, fold AUCs joined with `;`.
pub fn cells_csv(report: &ExperimentReport) -> String {
    let mut out =
        String::from("preset,injection,train_snr_db,test_snr_db,strategy,cp_train,cp_test,k,auc,auc_std,fold_aucs\n");
    let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
    for c in &report.cells {
        let folds: Vec<String> = c.fold_aucs().iter().map(|a| a.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.preset.as_deref().unwrap_or(""),
            c.injection,
            c.train_snr_db,
            c.test_snr_db,
            c.strategy,
            opt(c.cp_train),
            opt(c.cp_test),
            c.k,
            c.auc,
            c.auc_std,
            folds.join(";")
        );
    }
    out
}

pub fn roc_csv(cell: &CellResult) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in &cell.roc {
        let _ = writeln!(out, "{f},{t}");
    }
    out
}

fn write(path: PathBuf, body: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report.json`, `cells.csv` and one `roc_*.csv` per cell into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    let mut written = vec![
        write(dir.join("report.json"), &json)?,
        write(dir.join("cells.csv"), cells_csv(report).as_bytes())?,
    ];
    for (i, c) in report.cells.iter().enumerate() {
        let name = format!(
            "roc_{:02}_{}_{}_{}.csv",
            i,
            c.injection.name().to_ascii_lowercase(),
            c.train_snr_db,
            c.test_snr_db
        );
        written.push(write(dir.join(name), roc_csv(c).as_bytes())?);
    }
    Ok(written)
}
