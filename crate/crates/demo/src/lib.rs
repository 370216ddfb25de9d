//! Browser demo. Every operation returns a JSON string so the page can plot
//! it without extra bindings.

use emtrace_core::denoise::{formula_cutting_point, svd_decompose, traditional_cutting_point};
use emtrace_core::detector::{fingerprint, transduce_cohort};
use emtrace_core::eval::{roc_auc, roc_curve, DataConfig, Dataset};
use emtrace_core::noise::{add_awgn, add_awgn_batch, measure_snr, NoiseSpec};
use emtrace_core::signal::{synthesize_trace, Injection, JitterConfig, Program};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Traces per class in the spectrum and detection views. Small enough for a
/// page to stay responsive.
pub const MAX_TRACES: usize = 400;

#[derive(Serialize)]
struct TraceView {
    clean: Vec<f64>,
    noisy: Vec<f64>,
    measured_snr_db: f64,
}

#[derive(Serialize)]
struct SpectrumView {
    sigma: Vec<f64>,
    knee: usize,
    formula: usize,
}

#[derive(Serialize)]
struct DetectionView {
    cutting_point: Option<usize>,
    auc: f64,
    roc: Vec<(f64, f64)>,
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn injection(name: &str) -> Result<Injection, String> {
    name.parse().map_err(|e: emtrace_core::Error| e.to_string())
}

fn check_traces(n: usize) -> Result<(), String> {
    if !(4..=MAX_TRACES).contains(&n) {
        return Err(format!(
            "trace count must be between 4 and {MAX_TRACES}, got {n}"
        ));
    }
    Ok(())
}

/// Clean benign and injected traces.
fn data(inj: Injection, n: usize, seed: u64) -> Result<Dataset, String> {
    let cfg = DataConfig {
        n_benign: n,
        n_anomalous: n,
        ..DataConfig::default()
    };
    Dataset::synthetic(inj, &cfg, seed).map_err(|e| e.to_string())
}

/// One benign trace before and after noise.
pub fn trace_view(snr_db: f64, seed: u64) -> Result<String, String> {
    let clean = synthesize_trace(&Program::default(), &JitterConfig::default(), seed)
        .map_err(|e| e.to_string())?;
    let spec = NoiseSpec::new(snr_db, seed).map_err(|e| e.to_string())?;
    let noisy = add_awgn(&clean, &spec).map_err(|e| e.to_string())?;
    let measured_snr_db = measure_snr(&clean.samples, &noisy.samples).map_err(|e| e.to_string())?;
    json(&TraceView {
        clean: clean.samples,
        noisy: noisy.samples,
        measured_snr_db,
    })
}

/// Singular values of `n` noisy benign traces with the knee and formula
/// cutting points.
pub fn spectrum_view(snr_db: f64, n: usize, seed: u64) -> Result<String, String> {
    check_traces(n)?;
    let set = data(Injection::Add, n, seed)?;
    let noisy = add_awgn_batch(&set.benign, snr_db, seed).map_err(|e| e.to_string())?;
    let svd = svd_decompose(&noisy).map_err(|e| e.to_string())?;
    json(&SpectrumView {
        sigma: svd.singular_values().to_vec(),
        knee: traditional_cutting_point(svd.singular_values()).get(),
        formula: formula_cutting_point(snr_db)
            .map_err(|e| e.to_string())?
            .get(),
    })
}

/// Fingerprints `n` benign traces and scores a cohort of `n / 2` benign and
/// `n / 2` injected ones, all at `snr_db`.
pub fn detection_view(
    injection_name: &str,
    snr_db: f64,
    n: usize,
    denoise: bool,
    seed: u64,
) -> Result<String, String> {
    check_traces(n)?;
    let inj = injection(injection_name)?;
    let half = n / 2;
    let set = data(inj, n + half, seed)?;
    let train_idx: Vec<usize> = (0..n).collect();
    let test_idx: Vec<usize> = (n..n + half).collect();
    let anom_idx: Vec<usize> = (0..half).collect();
    let train =
        add_awgn_batch(&set.benign.select(&train_idx), snr_db, seed).map_err(|e| e.to_string())?;
    let cohort = set
        .benign
        .select(&test_idx)
        .vstack(&set.anomalous.select(&anom_idx))
        .map_err(|e| e.to_string())?;
    let cohort = add_awgn_batch(&cohort, snr_db, seed + 1).map_err(|e| e.to_string())?;

    let cp = if denoise {
        Some(formula_cutting_point(snr_db).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let model = fingerprint(&train, cp, 3).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = transduce_cohort(&model, &cohort, cp)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|d| d.strangeness)
        .collect();
    let labels: Vec<bool> = cohort.labels().iter().map(|l| l.is_anomalous()).collect();
    json(&DetectionView {
        cutting_point: cp.map(|c| c.get()),
        auc: roc_auc(&scores, &labels).map_err(|e| e.to_string())?,
        roc: roc_curve(&scores, &labels).map_err(|e| e.to_string())?,
    })
}

#[wasm_bindgen]
pub fn trace(snr_db: f64, seed: u32) -> Result<String, JsError> {
    trace_view(snr_db, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn spectrum(snr_db: f64, n: usize, seed: u32) -> Result<String, JsError> {
    spectrum_view(snr_db, n, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn detect(
    injection: &str,
    snr_db: f64,
    n: usize,
    denoise: bool,
    seed: u32,
) -> Result<String, JsError> {
    detection_view(injection, snr_db, n, denoise, seed.into()).map_err(|e| JsError::new(&e))
}
