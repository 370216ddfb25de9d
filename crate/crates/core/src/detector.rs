//! Transductive strangeness test against a benign fingerprint.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::{svd_decompose, CuttingPoint, Projection, SvdDecomposition};
use crate::error::{Error, Result};
use crate::lof::NeighborIndex;
use crate::signal::{Label, TraceMatrix};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const MODEL_MAGIC: &[u8; 4] = b"EMMD";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Normal,
    Anomalous,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Normal => 0,
            Status::Anomalous => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Normal => "normal",
            Status::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub p_value: f64,
    pub strangeness: f64,
    pub status: Option<Status>,
    pub confidence: Option<f64>,
}

impl Detection {
    /// Applies the decision rule `p <= 1 - confidence`.
    pub fn decide(mut self, confidence: f64) -> Result<Detection> {
        check_confidence(confidence)?;
        self.status = Some(if self.p_value <= 1.0 - confidence {
            Status::Anomalous
        } else {
            Status::Normal
        });
        self.confidence = Some(confidence);
        Ok(self)
    }
}

pub fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    Ok(())
}

/// `(n + 1) / (|X| + 1)` where `n` counts baseline scores `>= s_q`.
pub fn p_value(baseline: &[f64], s_q: f64) -> f64 {
    let n = baseline.iter().filter(|&&s| s >= s_q).count();
    (n + 1) as f64 / (baseline.len() + 1) as f64
}

/// Benign fingerprint: the denoised baseline and its strangeness distribution.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    k: usize,
    train_cp: Option<CuttingPoint>,
    train_snr_db: Option<f64>,
    baseline: TraceMatrix,
    strangeness: Vec<f64>,
    projection: Option<Projection>,
    index: NeighborIndex,
}

impl BaselineModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn train_cp(&self) -> Option<CuttingPoint> {
        self.train_cp
    }

    pub fn train_snr_db(&self) -> Option<f64> {
        self.train_snr_db
    }

    /// Denoised baseline traces.
    pub fn baseline(&self) -> &TraceMatrix {
        &self.baseline
    }

    pub fn strangeness(&self) -> &[f64] {
        &self.strangeness
    }

    pub fn len(&self) -> usize {
        self.strangeness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strangeness.is_empty()
    }

    pub fn cols(&self) -> usize {
        self.baseline.cols()
    }

    pub fn with_train_snr(mut self, snr_db: Option<f64>) -> Self {
        self.train_snr_db = snr_db;
        self
    }

    /// Point in index space for a denoised trace.
    fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::Dimension {
                expected: self.cols(),
                got: x.len(),
            });
        }
        match &self.projection {
            None => Ok(x.to_vec()),
            Some(p) => {
                let (mut c, res) = p.embed(x)?;
                c.push(res);
                Ok(c)
            }
        }
    }

    /// LOF of one denoised trace against the baseline.
    pub fn score(&self, denoised: &[f64]) -> Result<f64> {
        self.index.score_query(&self.embed(denoised)?)
    }

    pub fn p_value(&self, s_q: f64) -> f64 {
        p_value(&self.strangeness, s_q)
    }

    fn assemble(
        baseline: TraceMatrix,
        projection: Option<Projection>,
        train_cp: Option<CuttingPoint>,
        k: usize,
    ) -> Result<BaselineModel> {
        // A rank-r baseline is isometric to its coordinates in the SVD basis
        // with one extra zero axis for the residual of later queries.
        let index = match &projection {
            None => NeighborIndex::new(baseline.data().to_vec(), baseline.cols(), k)?,
            Some(p) => {
                let dim = p.rank + 1;
                let mut pts = Vec::with_capacity(p.rows * dim);
                for i in 0..p.rows {
                    pts.extend_from_slice(p.coord_row(i));
                    pts.push(0.0);
                }
                NeighborIndex::new(pts, dim, k)?
            }
        };
        let strangeness = index.scores().to_vec();
        Ok(BaselineModel {
            k,
            train_cp,
            train_snr_db: None,
            baseline,
            strangeness,
            projection,
            index,
        })
    }
}

fn check_baseline(benign: &TraceMatrix, k: usize) -> Result<()> {
    let bad = benign.count(Label::Anomalous);
    if bad > 0 {
        return Err(Error::ContaminatedBaseline(bad));
    }
    if k == 0 {
        return Err(Error::InvalidK {
            k,
            points: benign.rows(),
        });
    }
    let required = (k + 2).max(2);
    if benign.rows() < required {
        return Err(Error::InsufficientBaseline {
            required,
            got: benign.rows(),
        });
    }
    Ok(())
}

/// Denoises `benign` with `cp` (or not at all) and scores every row against
/// the others.
pub fn fingerprint(
    benign: &TraceMatrix,
    cp: Option<CuttingPoint>,
    k: usize,
) -> Result<BaselineModel> {
    check_baseline(benign, k)?;
    match cp {
        None => {
            if !benign.is_finite() {
                return Err(Error::InvalidInput(
                    "baseline contains non-finite samples".into(),
                ));
            }
            BaselineModel::assemble(benign.clone(), None, None, k)
        }
        Some(cp) => {
            let svd = svd_decompose(benign)?;
            fingerprint_with_svd(benign, &svd, cp, k)
        }
    }
}

/// Same as [`fingerprint`] with a precomputed decomposition of `benign`.
pub fn fingerprint_with_svd(
    benign: &TraceMatrix,
    svd: &SvdDecomposition,
    cp: CuttingPoint,
    k: usize,
) -> Result<BaselineModel> {
    check_baseline(benign, k)?;
    if svd.rows() != benign.rows() || svd.cols() != benign.cols() {
        return Err(Error::Dimension {
            expected: benign.rows(),
            got: svd.rows(),
        });
    }
    let p = svd.projection(cp);
    let baseline = benign.with_data(p.reconstruct())?;
    BaselineModel::assemble(baseline, Some(p), Some(cp), k)
}

fn denoise_cohort(cohort: &TraceMatrix, test_cp: Option<CuttingPoint>) -> Result<TraceMatrix> {
    if cohort.rows() < 2 {
        return Err(Error::InvalidInput(format!(
            "deployment cohort needs at least 2 rows, got {}",
            cohort.rows()
        )));
    }
    match test_cp {
        None => Ok(cohort.clone()),
        Some(cp) => crate::denoise::denoise_batch(cohort, cp),
    }
}

fn check_cols(model: &BaselineModel, cohort: &TraceMatrix) -> Result<()> {
    if cohort.cols() != model.cols() {
        return Err(Error::Dimension {
            expected: model.cols(),
            got: cohort.cols(),
        });
    }
    Ok(())
}

/// p-value and strangeness of row `index` of `cohort`. The whole cohort is
/// denoised as one batch with `test_cp` first.
pub fn transduce(
    model: &BaselineModel,
    cohort: &TraceMatrix,
    index: usize,
    test_cp: Option<CuttingPoint>,
) -> Result<Detection> {
    if index >= cohort.rows() {
        return Err(Error::Index {
            index,
            len: cohort.rows(),
        });
    }
    check_cols(model, cohort)?;
    let den = denoise_cohort(cohort, test_cp)?;
    transduce_row(model, den.row(index))
}

fn transduce_row(model: &BaselineModel, denoised: &[f64]) -> Result<Detection> {
    let s = model.score(denoised)?;
    Ok(Detection {
        p_value: model.p_value(s),
        strangeness: s,
        status: None,
        confidence: None,
    })
}

/// [`transduce`] for every row of the cohort, denoising once.
pub fn transduce_cohort(
    model: &BaselineModel,
    cohort: &TraceMatrix,
    test_cp: Option<CuttingPoint>,
) -> Result<Vec<Detection>> {
    check_cols(model, cohort)?;
    let den = denoise_cohort(cohort, test_cp)?;
    transduce_denoised(model, &den)
}

/// Scores rows that are already denoised.
pub fn transduce_denoised(model: &BaselineModel, denoised: &TraceMatrix) -> Result<Vec<Detection>> {
    check_cols(model, denoised)?;
    if model.projection.is_some() {
        return denoised
            .iter_rows()
            .map(|r| transduce_row(model, r))
            .collect();
    }
    let scores = model.index.score_queries(denoised.data())?;
    Ok(scores
        .into_iter()
        .map(|s| Detection {
            p_value: model.p_value(s),
            strangeness: s,
            status: None,
            confidence: None,
        })
        .collect())
}

pub fn detect(
    model: &BaselineModel,
    cohort: &TraceMatrix,
    index: usize,
    test_cp: Option<CuttingPoint>,
    confidence: f64,
) -> Result<Detection> {
    check_confidence(confidence)?;
    transduce(model, cohort, index, test_cp)?.decide(confidence)
}

pub fn detect_cohort(
    model: &BaselineModel,
    cohort: &TraceMatrix,
    test_cp: Option<CuttingPoint>,
    confidence: f64,
) -> Result<Vec<Detection>> {
    check_confidence(confidence)?;
    transduce_cohort(model, cohort, test_cp)?
        .into_iter()
        .map(|d| d.decide(confidence))
        .collect()
}

/// Serializes a model: magic, version, k, cp (0 = none), train SNR (NaN =
/// none), rows, cols, the denoised baseline and its strangeness, all
/// little-endian.
pub fn encode_model(model: &BaselineModel) -> Vec<u8> {
    let (rows, cols) = model.baseline.shape();
    let mut out = Vec::with_capacity(29 + 8 * rows * (cols + 1));
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(model.k as u32).to_le_bytes());
    out.extend_from_slice(&(model.train_cp.map_or(0, |c| c.get()) as u32).to_le_bytes());
    out.extend_from_slice(&model.train_snr_db.unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in model.baseline.data().iter().chain(&model.strangeness) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<BaselineModel> {
    const HEADER: usize = 4 + 1 + 4 + 4 + 8 + 4 + 4;
    if bytes.len() < HEADER || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    if bytes[4] != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {}",
            bytes[4]
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let k = u32_at(5);
    let cp = u32_at(9);
    let snr = f64_at(13);
    let rows = u32_at(21);
    let cols = u32_at(25);
    let expected = rows
        .checked_mul(cols + 1)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::Format("model dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "model file is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let vals: Vec<f64> = (0..rows * (cols + 1))
        .map(|i| f64_at(HEADER + 8 * i))
        .collect();
    let baseline = TraceMatrix::from_row_major(
        rows,
        cols,
        vals[..rows * cols].to_vec(),
        vec![Label::Benign; rows],
    )?;
    let stored = vals[rows * cols..].to_vec();

    let train_cp = if cp == 0 {
        None
    } else {
        Some(CuttingPoint::new(cp)?)
    };
    let projection = match train_cp {
        None => None,
        Some(c) => Some(svd_decompose(&baseline)?.projection(c)),
    };
    let mut model = BaselineModel::assemble(baseline, projection, train_cp, k)
        .map_err(|e| Error::Format(format!("model does not rebuild: {e}")))?;
    model.strangeness = stored;
    model.train_snr_db = if snr.is_nan() { None } else { Some(snr) };
    Ok(model)
}

pub fn save_model(model: &BaselineModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<BaselineModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_examples() {
        let base: Vec<f64> = (1..=99).map(|i| i as f64).collect();
        assert_eq!(p_value(&base, 0.5), 1.0);
        assert_eq!(p_value(&base, 1000.0), 1.0 / 100.0);
        assert!(p_value(&base, 50.0) >= 51.0 / 100.0);
    }

    #[test]
    fn decision_rule() {
        let d = |p| Detection {
            p_value: p,
            strangeness: 1.0,
            status: None,
            confidence: None,
        };
        assert_eq!(
            d(0.01).decide(0.95).unwrap().status,
            Some(Status::Anomalous)
        );
        assert_eq!(d(0.5).decide(0.95).unwrap().status, Some(Status::Normal));
        assert_eq!(
            d(0.05).decide(0.95).unwrap().status,
            Some(Status::Anomalous)
        );
        assert!(d(0.5).decide(1.0).is_err());
    }

    #[test]
    fn contaminated_and_small_baselines() {
        let m = TraceMatrix::from_rows(
            vec![vec![1.0, 2.0]; 6],
            vec![
                Label::Benign,
                Label::Anomalous,
                Label::Benign,
                Label::Benign,
                Label::Benign,
                Label::Benign,
            ],
        )
        .unwrap();
        assert!(matches!(
            fingerprint(&m, None, 2),
            Err(Error::ContaminatedBaseline(1))
        ));
        let m = TraceMatrix::from_rows(vec![vec![1.0, 2.0]; 4], vec![Label::Benign; 4]).unwrap();
        assert!(matches!(
            fingerprint(&m, None, 3),
            Err(Error::InsufficientBaseline {
                required: 5,
                got: 4
            })
        ));
    }

    #[test]
    fn identical_traces_score_one() {
        let m = TraceMatrix::from_rows(vec![vec![1.0, -2.0, 0.5]; 100], vec![Label::Benign; 100])
            .unwrap();
        let model = fingerprint(&m, Some(CuttingPoint::new(1).unwrap()), 3).unwrap();
        assert!(model.strangeness().iter().all(|&s| s == 1.0));
    }
}
