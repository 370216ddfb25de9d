//! TOML defaults for every command.
//!
//! ```toml
//! seed = 7
//!
//! [generate]
//! injection = "jmp"
//! snr = -5.0
//! n = 200
//!
//! [fingerprint]
//! cp = "formula"
//! k = 3
//! ```
//!
//! Keys mirror the flag names with `-` written as `_`. A top-level `seed`
//! applies to every command that takes one. Flags given on the command line
//! win.

use std::fs;
use std::path::{Path, PathBuf};

use emtrace_core::eval::Preset;
use emtrace_core::io::TraceFormat;
use emtrace_core::signal::Injection;
use serde::Deserialize;

use crate::error::CliError;
use crate::{
    CpChoice, DenoiseArgs, DetectArgs, FingerprintArgs, GenerateArgs, ReproduceArgs, SnrArgs,
};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    seed: Option<u64>,
    generate: GenerateConfig,
    fingerprint: FingerprintConfig,
    detect: DetectConfig,
    reproduce: ReproduceConfig,
    denoise: DenoiseConfig,
    snr: SnrConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateConfig {
    injection: Option<String>,
    snr: Option<f64>,
    n: Option<usize>,
    n_anomalous: Option<usize>,
    seed: Option<u64>,
    position: Option<usize>,
    oversample: Option<usize>,
    format: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FingerprintConfig {
    traces: Option<PathBuf>,
    cp: Option<CpValue>,
    k: Option<usize>,
    snr: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DetectConfig {
    model: Option<PathBuf>,
    traces: Option<PathBuf>,
    confidence: Option<f64>,
    cp: Option<CpValue>,
    snr: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReproduceConfig {
    table: Option<CpValue>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    n_benign: Option<usize>,
    n_anomalous: Option<usize>,
    position: Option<usize>,
    oversample: Option<usize>,
    progress: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DenoiseConfig {
    traces: Option<PathBuf>,
    cp: Option<CpValue>,
    snr: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SnrConfig {
    clean: Option<PathBuf>,
    noisy: Option<PathBuf>,
}

/// `cp = 10` and `cp = "formula"` are both accepted.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CpValue {
    Int(u64),
    Text(String),
}

impl CpValue {
    fn text(&self) -> String {
        match self {
            CpValue::Int(v) => v.to_string(),
            CpValue::Text(s) => s.clone(),
        }
    }
}

/// Parsed values are checked when the file loads so errors name the file.
#[derive(Debug, Default)]
struct Parsed {
    injection: Option<Injection>,
    format: Option<TraceFormat>,
    fingerprint_cp: Option<CpChoice>,
    detect_cp: Option<CpChoice>,
    denoise_cp: Option<CpChoice>,
    table: Option<Preset>,
}

#[derive(Debug, Default)]
pub struct Loaded {
    raw: Config,
    parsed: Parsed,
}

impl Config {
    pub fn load(path: &Path) -> Result<Loaded, CliError> {
        let fail = |message: String| CliError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let raw: Config = toml::from_str(&text).map_err(|e| fail(e.to_string()))?;
        let parsed = Parsed {
            injection: raw
                .generate
                .injection
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(|e: emtrace_core::Error| fail(e.to_string()))?,
            format: raw
                .generate
                .format
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(|e: emtrace_core::Error| fail(e.to_string()))?,
            fingerprint_cp: parse_cp(raw.fingerprint.cp.as_ref()).map_err(&fail)?,
            detect_cp: parse_cp(raw.detect.cp.as_ref()).map_err(&fail)?,
            denoise_cp: parse_cp(raw.denoise.cp.as_ref()).map_err(&fail)?,
            table: raw
                .reproduce
                .table
                .as_ref()
                .map(|t| t.text().parse())
                .transpose()
                .map_err(|e: emtrace_core::Error| fail(e.to_string()))?,
        };
        Ok(Loaded { raw, parsed })
    }
}

fn parse_cp(v: Option<&CpValue>) -> Result<Option<CpChoice>, String> {
    v.map(|c| c.text().parse()).transpose()
}

impl GenerateArgs {
    pub fn merge(self, c: &Loaded) -> Self {
        let g = &c.raw.generate;
        GenerateArgs {
            injection: self.injection.or(c.parsed.injection),
            snr: self.snr.or(g.snr),
            n: self.n.or(g.n),
            n_anomalous: self.n_anomalous.or(g.n_anomalous),
            seed: self.seed.or(g.seed).or(c.raw.seed),
            position: self.position.or(g.position),
            oversample: self.oversample.or(g.oversample),
            format: self.format.or(c.parsed.format),
            out: self.out.or_else(|| g.out.clone()),
        }
    }
}

impl FingerprintArgs {
    pub fn merge(self, c: &Loaded) -> Self {
        let f = &c.raw.fingerprint;
        FingerprintArgs {
            traces: self.traces.or_else(|| f.traces.clone()),
            cp: self.cp.or(c.parsed.fingerprint_cp),
            k: self.k.or(f.k),
            snr: self.snr.or(f.snr),
            out: self.out.or_else(|| f.out.clone()),
        }
    }
}

impl DetectArgs {
    pub fn merge(self, c: &Loaded) -> Self {
        let d = &c.raw.detect;
        DetectArgs {
            model: self.model.or_else(|| d.model.clone()),
            traces: self.traces.or_else(|| d.traces.clone()),
            confidence: self.confidence.or(d.confidence),
            cp: self.cp.or(c.parsed.detect_cp),
            snr: self.snr.or(d.snr),
            out: self.out.or_else(|| d.out.clone()),
        }
    }
}

impl ReproduceArgs {
    pub fn merge(self, c: &Loaded) -> Self {
        let r = &c.raw.reproduce;
        ReproduceArgs {
            table: self.table.or(c.parsed.table),
            seed: self.seed.or(r.seed).or(c.raw.seed),
            out: self.out.or_else(|| r.out.clone()),
            n_benign: self.n_benign.or(r.n_benign),
            n_anomalous: self.n_anomalous.or(r.n_anomalous),
            position: self.position.or(r.position),
            oversample: self.oversample.or(r.oversample),
            progress: self.progress || r.progress.unwrap_or(false),
        }
    }
}

impl DenoiseArgs {
    pub fn merge(self, c: &Loaded) -> Self {
        let d = &c.raw.denoise;
        DenoiseArgs {
            traces: self.traces.or_else(|| d.traces.clone()),
            cp: self.cp.or(c.parsed.denoise_cp),
            snr: self.snr.or(d.snr),
            out: self.out.or_else(|| d.out.clone()),
        }
    }
}

impl SnrArgs {
    pub fn merge(self, c: &Loaded) -> Self {
        let s = &c.raw.snr;
        SnrArgs {
            clean: self.clean.or_else(|| s.clean.clone()),
            noisy: self.noisy.or_else(|| s.noisy.clone()),
        }
    }
}
