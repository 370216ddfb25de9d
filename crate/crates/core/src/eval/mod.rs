//! Cross-validated evaluation and the preset experiment grids.

mod auc;
mod presets;
mod report;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use auc::{roc_auc, roc_curve};
pub use presets::{preset_configs, Preset, SNR_GRID};
pub use report::{cells_csv, roc_csv, write_report, ExperimentReport};

use crate::denoise::{
    brute_force_cutting_point, formula_cutting_point, svd_decompose, traditional_cutting_point,
    CuttingPoint,
};
use crate::detector::{fingerprint, fingerprint_with_svd, transduce_cohort, BaselineModel};
use crate::error::{Error, Result};
use crate::noise::add_awgn_batch;
use crate::seed;
use crate::signal::{
    generate_dataset, Injection, JitterConfig, Label, Program, TraceMatrix,
    DEFAULT_INJECTION_POSITION, DEFAULT_OVERSAMPLE,
};

/// Largest cutting point tried by the brute-force strategy.
pub const BRUTE_FORCE_MAX: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CpStrategy {
    /// No denoising.
    None,
    /// Knee of the training batch spectrum, used in both phases.
    Traditional,
    /// Exponential fit evaluated at the train and test SNR.
    Formula,
    Fixed {
        value: usize,
    },
    /// Separate cutting points for the training and deployment batches.
    Pair {
        train: usize,
        test: usize,
    },
    /// Best AUC on a validation split of the training data.
    BruteForce,
}

impl fmt::Display for CpStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CpStrategy::None => f.write_str("none"),
            CpStrategy::Traditional => f.write_str("traditional"),
            CpStrategy::Formula => f.write_str("formula"),
            CpStrategy::Fixed { value } => write!(f, "fixed:{value}"),
            CpStrategy::Pair { train, test } => write!(f, "fixed:{train},{test}"),
            CpStrategy::BruteForce => f.write_str("brute_force"),
        }
    }
}

impl FromStr for CpStrategy {
    type Err = Error;

    /// Accepts `none`, `traditional`, `formula`, `brute_force`, an integer,
    /// `fixed:N` or `fixed:TRAIN,TEST`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown cutting-point strategy {s:?}"));
        let parse = |v: &str| -> Result<usize> {
            let n: usize = v.trim().parse().map_err(|_| bad())?;
            CuttingPoint::new(n).map(CuttingPoint::get)
        };
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "raw" => Ok(CpStrategy::None),
            "traditional" | "auto" => Ok(CpStrategy::Traditional),
            "formula" => Ok(CpStrategy::Formula),
            "brute_force" | "brute-force" => Ok(CpStrategy::BruteForce),
            other => {
                let body = other.strip_prefix("fixed:").unwrap_or(other);
                match body.split_once(',') {
                    Some((a, b)) => Ok(CpStrategy::Pair {
                        train: parse(a)?,
                        test: parse(b)?,
                    }),
                    None => Ok(CpStrategy::Fixed {
                        value: parse(body)?,
                    }),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub injection: Injection,
    pub train_snr_db: f64,
    pub test_snr_db: f64,
    pub cp_strategy: CpStrategy,
    pub k: usize,
    pub folds: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            injection: Injection::Add,
            train_snr_db: 10.0,
            test_snr_db: 10.0,
            cp_strategy: CpStrategy::Formula,
            k: 3,
            folds: 10,
            confidence: crate::detector::DEFAULT_CONFIDENCE,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        crate::detector::check_confidence(self.confidence)?;
        if !self.train_snr_db.is_finite() || !self.test_snr_db.is_finite() {
            return Err(Error::InvalidParameter("SNR values must be finite".into()));
        }
        if self.test_snr_db > self.train_snr_db {
            return Err(Error::InvalidParameter(format!(
                "test SNR {} dB is above train SNR {} dB",
                self.test_snr_db, self.train_snr_db
            )));
        }
        let split = matches!(
            self.cp_strategy,
            CpStrategy::Formula | CpStrategy::Pair { .. }
        );
        if self.test_snr_db != self.train_snr_db && !split {
            return Err(Error::InvalidParameter(format!(
                "train and test SNR may differ only with per-phase cutting points, not {}",
                self.cp_strategy
            )));
        }
        Ok(())
    }
}

/// Shape of the synthetic data behind an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_benign: usize,
    pub n_anomalous: usize,
    /// Instruction index the payload is inserted before.
    pub position: usize,
    /// Samples per clock cycle.
    pub oversample: usize,
    pub jitter: JitterConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_benign: 12_000,
            n_anomalous: 12_000,
            position: DEFAULT_INJECTION_POSITION,
            oversample: DEFAULT_OVERSAMPLE,
            jitter: JitterConfig::default(),
        }
    }
}

/// Clean benign and anomalous traces sharing one aligned length.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub benign: TraceMatrix,
    pub anomalous: TraceMatrix,
}

impl Dataset {
    pub fn synthetic(injection: Injection, cfg: &DataConfig, seed: u64) -> Result<Dataset> {
        let base = Program::default().with_oversample(cfg.oversample)?;
        let injected = base.inject(cfg.position, injection.instruction())?;
        let m = generate_dataset(
            &base,
            &injected,
            cfg.n_benign,
            cfg.n_anomalous,
            &cfg.jitter,
            seed,
        )?;
        Ok(Dataset::from_matrix(&m))
    }

    pub fn from_matrix(m: &TraceMatrix) -> Dataset {
        let split = |label: Label| -> Vec<usize> {
            (0..m.rows()).filter(|&i| m.labels()[i] == label).collect()
        };
        Dataset {
            benign: m.select(&split(Label::Benign)),
            anomalous: m.select(&split(Label::Anomalous)),
        }
    }
}

/// Fold `f` of a seeded permutation of `0..n`, cut into `folds` parts whose
/// sizes differ by at most one.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(Error::Data(format!(
            "cannot split {n} traces into {folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed::derive(seed, &[seed::TAG_FOLDS])));
    Ok((0..folds)
        .map(|f| perm[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect())
}

/// Which traces a fold uses. Indices refer to the benign and anomalous pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub train: Vec<usize>,
    pub test_benign: Vec<usize>,
    pub test_anomalous: Vec<usize>,
}

/// Train/test assignment for every fold. Anomalous test chunks are taken in
/// turn from the pool, wrapping around when it runs out.
pub fn fold_plan(
    cfg: &ExperimentConfig,
    n_benign: usize,
    n_anomalous: usize,
) -> Result<Vec<FoldPlan>> {
    let parts = fold_partition(n_benign, cfg.folds, cfg.seed)?;
    let largest = parts.iter().map(Vec::len).max().unwrap_or(0);
    if n_anomalous < largest {
        return Err(Error::Data(format!(
            "each fold needs {largest} anomalous traces, pool has {n_anomalous}"
        )));
    }
    let mut cursor = 0;
    let mut plans = Vec::with_capacity(parts.len());
    for (f, test) in parts.iter().enumerate() {
        let mut train: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        train.sort_unstable();
        let mut test_benign = test.clone();
        test_benign.sort_unstable();
        let test_anomalous = (0..test.len())
            .map(|j| (cursor + j) % n_anomalous)
            .collect();
        cursor = (cursor + test.len()) % n_anomalous;
        plans.push(FoldPlan {
            train,
            test_benign,
            test_anomalous,
        });
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub auc: f64,
    pub cp_train: Option<usize>,
    pub cp_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub preset: Option<String>,
    pub injection: Injection,
    pub train_snr_db: f64,
    pub test_snr_db: f64,
    pub strategy: String,
    pub cp_train: Option<usize>,
    pub cp_test: Option<usize>,
    pub k: usize,
    pub auc: f64,
    pub auc_std: f64,
    pub folds: Vec<FoldResult>,
    /// Pooled ROC over all folds.
    #[serde(skip)]
    pub roc: Vec<(f64, f64)>,
}

impl CellResult {
    pub fn fold_aucs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.auc).collect()
    }

    /// `(cp_train, cp_test, k)` as printed in the tables, `-` for no denoising.
    pub fn hyperparameters(&self) -> String {
        let cp = |c: Option<usize>| c.map_or("-".to_string(), |v| v.to_string());
        match (self.cp_train, self.cp_test) {
            (None, None) => format!("({})", self.k),
            (a, b) => format!("({},{},{})", cp(a), cp(b), self.k),
        }
    }
}

fn noisy(m: &TraceMatrix, snr_db: f64, seed: u64, tags: &[u64]) -> Result<TraceMatrix> {
    add_awgn_batch(m, snr_db, seed::derive(seed, tags))
}

/// Fingerprints `train`, choosing the cutting points per `cfg`, and returns
/// the model with the deployment cutting point.
fn train_phase(
    cfg: &ExperimentConfig,
    train: &TraceMatrix,
    validation: impl FnOnce() -> Result<(TraceMatrix, TraceMatrix)>,
) -> Result<(BaselineModel, Option<CuttingPoint>)> {
    let fixed = |v: usize| CuttingPoint::new(v);
    let (model, test_cp) = match cfg.cp_strategy {
        CpStrategy::None => (fingerprint(train, None, cfg.k)?, None),
        CpStrategy::Traditional => {
            let svd = svd_decompose(train)?;
            let cp = traditional_cutting_point(svd.singular_values());
            (fingerprint_with_svd(train, &svd, cp, cfg.k)?, Some(cp))
        }
        CpStrategy::Formula => {
            let a = formula_cutting_point(cfg.train_snr_db)?;
            let b = formula_cutting_point(cfg.test_snr_db)?;
            (fingerprint(train, Some(a), cfg.k)?, Some(b))
        }
        CpStrategy::Fixed { value } => {
            let cp = fixed(value)?;
            (fingerprint(train, Some(cp), cfg.k)?, Some(cp))
        }
        CpStrategy::Pair { train: a, test: b } => {
            (fingerprint(train, Some(fixed(a)?), cfg.k)?, Some(fixed(b)?))
        }
        CpStrategy::BruteForce => {
            let (inner, val) = validation()?;
            let candidates: Vec<usize> = (1..=BRUTE_FORCE_MAX).collect();
            let cp = brute_force_cutting_point(&inner, &val, cfg.k, &candidates)?.best;
            (fingerprint(train, Some(cp), cfg.k)?, Some(cp))
        }
    };
    Ok((model.with_train_snr(Some(cfg.train_snr_db)), test_cp))
}

/// Runs every fold of one cell.
pub fn run_cell(cfg: &ExperimentConfig, data: &Dataset) -> Result<CellResult> {
    cfg.validate()?;
    if data.benign.cols() != data.anomalous.cols() && data.anomalous.rows() > 0 {
        return Err(Error::Data(
            "benign and anomalous traces differ in length".into(),
        ));
    }
    let plans = fold_plan(cfg, data.benign.rows(), data.anomalous.rows())?;
    let mut folds = Vec::with_capacity(plans.len());
    let (mut pooled_scores, mut pooled_labels) = (Vec::new(), Vec::new());

    for (f, plan) in plans.iter().enumerate() {
        let fu = f as u64;
        let train = noisy(
            &data.benign.select(&plan.train),
            cfg.train_snr_db,
            cfg.seed,
            &[seed::TAG_NOISE_TRAIN, fu],
        )?;
        let cohort_clean = data
            .benign
            .select(&plan.test_benign)
            .vstack(&data.anomalous.select(&plan.test_anomalous))?;
        let cohort = noisy(
            &cohort_clean,
            cfg.test_snr_db,
            cfg.seed,
            &[seed::TAG_NOISE_TEST, fu],
        )?;

        let validation = || brute_force_split(cfg, data, plan, fu);
        let (model, test_cp) = train_phase(cfg, &train, validation)?;
        let scores: Vec<f64> = transduce_cohort(&model, &cohort, test_cp)?
            .iter()
            .map(|d| d.strangeness)
            .collect();
        let labels: Vec<bool> = cohort.labels().iter().map(|l| l.is_anomalous()).collect();
        folds.push(FoldResult {
            auc: roc_auc(&scores, &labels)?,
            cp_train: model.train_cp().map(CuttingPoint::get),
            cp_test: test_cp.map(CuttingPoint::get),
        });
        pooled_scores.extend(scores);
        pooled_labels.extend(labels);
    }

    let aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aucs.len() - 1) as f64;
    Ok(CellResult {
        preset: None,
        injection: cfg.injection,
        train_snr_db: cfg.train_snr_db,
        test_snr_db: cfg.test_snr_db,
        strategy: cfg.cp_strategy.to_string(),
        cp_train: folds[0].cp_train,
        cp_test: folds[0].cp_test,
        k: cfg.k,
        auc: mean,
        auc_std: var.sqrt(),
        folds,
        roc: roc_curve(&pooled_scores, &pooled_labels)?,
    })
}

/// Inner split for the brute-force search: 90% of the fold's training benign
/// traces fingerprint, the rest plus anomalous traces outside the fold's test
/// chunk validate.
fn brute_force_split(
    cfg: &ExperimentConfig,
    data: &Dataset,
    plan: &FoldPlan,
    fold: u64,
) -> Result<(TraceMatrix, TraceMatrix)> {
    let na = data.anomalous.rows();
    let outside: Vec<usize> = (0..na)
        .filter(|i| !plan.test_anomalous.contains(i))
        .collect();
    let n_val = plan.train.len() / 10;
    if n_val < 1 || outside.len() < n_val {
        return Err(Error::Data(
            "not enough traces outside the test fold for a validation split".into(),
        ));
    }
    let mut order = plan.train.clone();
    order.shuffle(&mut seed::rng(seed::derive(
        cfg.seed,
        &[seed::TAG_VALIDATION, fold],
    )));
    let (val_b, inner) = order.split_at(n_val);
    let start = plan.test_anomalous.last().map_or(0, |&l| l + 1);
    let val_a: Vec<usize> = (0..n_val)
        .map(|j| outside[(start + j) % outside.len()])
        .collect();

    let inner = noisy(
        &data.benign.select(inner),
        cfg.train_snr_db,
        cfg.seed,
        &[seed::TAG_VALIDATION, fold, 0],
    )?;
    let val = data
        .benign
        .select(val_b)
        .vstack(&data.anomalous.select(&val_a))?;
    let val = noisy(
        &val,
        cfg.test_snr_db,
        cfg.seed,
        &[seed::TAG_VALIDATION, fold, 1],
    )?;
    Ok((inner, val))
}

/// Runs a list of cells, generating each injection's dataset once.
pub fn run_cells(
    configs: &[ExperimentConfig],
    data_cfg: &DataConfig,
    data_seed: u64,
    mut on_cell: impl FnMut(usize, &CellResult),
) -> Result<Vec<CellResult>> {
    let mut cache: Vec<(Injection, Dataset)> = Vec::new();
    let mut out = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        if !cache.iter().any(|(inj, _)| *inj == cfg.injection) {
            cache.push((
                cfg.injection,
                Dataset::synthetic(cfg.injection, data_cfg, data_seed)?,
            ));
        }
        let data = &cache
            .iter()
            .find(|(inj, _)| *inj == cfg.injection)
            .unwrap()
            .1;
        let cell = run_cell(cfg, data)?;
        on_cell(i, &cell);
        out.push(cell);
    }
    Ok(out)
}

/// Runs every cell of a preset grid on synthetic data.
pub fn run_table(
    preset: Preset,
    seed: u64,
    data_cfg: &DataConfig,
    mut on_cell: impl FnMut(usize, &CellResult),
) -> Result<ExperimentReport> {
    let configs = preset_configs(preset, seed);
    let mut cells = run_cells(&configs, data_cfg, seed, |i, c| on_cell(i, c))?;
    for c in &mut cells {
        c.preset = Some(preset.name().to_string());
    }
    Ok(ExperimentReport::new(Some(preset), *data_cfg, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            "formula".parse::<CpStrategy>().unwrap(),
            CpStrategy::Formula
        );
        assert_eq!(
            "7".parse::<CpStrategy>().unwrap(),
            CpStrategy::Fixed { value: 7 }
        );
        assert_eq!(
            "fixed:25,4".parse::<CpStrategy>().unwrap(),
            CpStrategy::Pair { train: 25, test: 4 }
        );
        assert!("0".parse::<CpStrategy>().is_err());
        assert!("bogus".parse::<CpStrategy>().is_err());
        for s in [
            CpStrategy::None,
            CpStrategy::Fixed { value: 3 },
            CpStrategy::Pair { train: 2, test: 1 },
        ] {
            assert_eq!(s.to_string().parse::<CpStrategy>().unwrap(), s);
        }
    }

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        let cross = ExperimentConfig {
            test_snr_db: -10.0,
            ..ok
        };
        assert!(cross.validate().is_ok());
        assert!(ExperimentConfig {
            cp_strategy: CpStrategy::Fixed { value: 1 },
            ..cross
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig {
            test_snr_db: 20.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig { folds: 1, ..ok }.validate().is_err());
    }

    #[test]
    fn partition_sizes() {
        let parts = fold_partition(23, 10, 4).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(fold_partition(5, 10, 0).is_err());
    }

    #[test]
    fn insufficient_anomalous() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(fold_plan(&cfg, 100, 5), Err(Error::Data(_))));
    }
}
