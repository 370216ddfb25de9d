mod config;
mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emtrace_core::denoise::{
    denoise_batch, formula_cutting_point, svd_decompose, traditional_cutting_point, CuttingPoint,
};
use emtrace_core::detector::{
    detect_cohort, fingerprint, load_model, save_model, DEFAULT_CONFIDENCE,
};
use emtrace_core::eval::{cells_csv, write_report, DataConfig, Preset};
use emtrace_core::io::{load_traces, read_sidecar, save_traces_with, TraceFormat};
use emtrace_core::manifest::RunManifest;
use emtrace_core::noise::{add_awgn_batch, measure_snr};
use emtrace_core::signal::{generate_dataset, Injection, Label, Program, TraceMatrix};
use emtrace_core::{eval, seed};

use crate::config::{Config, Loaded};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "emtrace",
    version,
    about = "Code-injection detection on EM side-channel traces"
)]
struct Cli {
    /// TOML file with default values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize benign and anomalous trace files.
    Generate(GenerateArgs),
    /// Build a baseline model from benign traces.
    Fingerprint(FingerprintArgs),
    /// Score a deployment cohort against a model.
    Detect(DetectArgs),
    /// Run a preset experiment grid.
    Reproduce(ReproduceArgs),
    /// Denoise a trace batch with a cutting point.
    Denoise(DenoiseArgs),
    /// Measure the SNR of noisy traces against clean ones.
    Snr(SnrArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// add or jmp.
    #[arg(long)]
    injection: Option<Injection>,
    /// Noise level in dB; clean traces when absent.
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Number of benign traces.
    #[arg(long)]
    n: Option<usize>,
    /// Number of anomalous traces (defaults to `--n`).
    #[arg(long)]
    n_anomalous: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Instruction index the payload is inserted before.
    #[arg(long)]
    position: Option<usize>,
    #[arg(long)]
    oversample: Option<usize>,
    /// csv or binary.
    #[arg(long)]
    format: Option<TraceFormat>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FingerprintArgs {
    /// Benign trace file.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Cutting point: auto, formula, none, or an integer.
    #[arg(long)]
    cp: Option<CpChoice>,
    #[arg(long)]
    k: Option<usize>,
    /// SNR used by `--cp formula`; read from the trace sidecar when absent.
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Model file to write.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Deployment cohort.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    confidence: Option<f64>,
    /// Cutting point for the cohort: train (same as the model), auto,
    /// formula, none, or an integer.
    #[arg(long)]
    cp: Option<CpChoice>,
    /// SNR used by `--cp formula`; read from the trace sidecar when absent.
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Verdict CSV; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// 1, 2, 3 or 4.
    #[arg(long)]
    table: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_benign: Option<usize>,
    #[arg(long)]
    n_anomalous: Option<usize>,
    #[arg(long)]
    position: Option<usize>,
    #[arg(long)]
    oversample: Option<usize>,
    /// Print a line per finished cell to stderr.
    #[arg(long)]
    progress: bool,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Cutting point: auto, formula, or an integer.
    #[arg(long)]
    cp: Option<CpChoice>,
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SnrArgs {
    /// Clean reference traces.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Noisy traces, row-aligned with `--clean`.
    #[arg(long)]
    noisy: Option<PathBuf>,
}

/// How a command picks its cutting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CpChoice {
    Auto,
    Formula,
    None,
    Train,
    Value(usize),
}

impl std::str::FromStr for CpChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auto" | "traditional" => Ok(CpChoice::Auto),
            "formula" => Ok(CpChoice::Formula),
            "none" | "raw" => Ok(CpChoice::None),
            "train" => Ok(CpChoice::Train),
            other => match other.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(CpChoice::Value(v)),
                _ => Err(format!(
                    "expected auto, formula, none, train or a positive integer, got {s:?}"
                )),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Loaded::default(),
    };
    let config_path = cli.config.as_ref().map(|p| p.display().to_string());
    let manifest = |command: &str| RunManifest {
        config_path: config_path.clone(),
        ..RunManifest::new(command)
    };
    match cli.command {
        Command::Generate(a) => generate(a.merge(&cfg), manifest("generate")),
        Command::Fingerprint(a) => cmd_fingerprint(a.merge(&cfg), manifest("fingerprint")),
        Command::Detect(a) => detect(a.merge(&cfg)),
        Command::Reproduce(a) => reproduce(a.merge(&cfg), manifest("reproduce")),
        Command::Denoise(a) => denoise(a.merge(&cfg), manifest("denoise")),
        Command::Snr(a) => snr(a.merge(&cfg)),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn stdout_line(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::io("stdout", e))
}

fn generate(a: GenerateArgs, run: RunManifest) -> Result<(), CliError> {
    let injection = a.injection.unwrap_or(Injection::Add);
    let n = required(a.n, "n")?;
    let n_anomalous = a.n_anomalous.unwrap_or(n);
    let seed = a.seed.unwrap_or(0);
    let out = a.out.unwrap_or_else(|| PathBuf::from("."));
    let format = a.format.unwrap_or(TraceFormat::Binary);
    let defaults = DataConfig::default();
    let base =
        Program::tank_filling().with_oversample(a.oversample.unwrap_or(defaults.oversample))?;
    let injected = base.inject(
        a.position.unwrap_or(defaults.position),
        injection.instruction(),
    )?;
    let data = generate_dataset(&base, &injected, n, n_anomalous, &defaults.jitter, seed)?;
    let data = match a.snr {
        Some(s) => add_awgn_batch(&data, s, seed::derive(seed, &[0x6e6f_6973]))?,
        None => data,
    };
    let (benign, anomalous) = split_labels(&data);
    fs::create_dir_all(&out).map_err(|e| CliError::io(out.clone(), e))?;
    let ext = match format {
        TraceFormat::Csv => "csv",
        TraceFormat::Binary => "emtr",
    };
    let benign_path = out.join(format!("benign.{ext}"));
    let anomalous_path = out.join(format!("anomalous.{ext}"));
    let mut run = RunManifest {
        seed: Some(seed),
        outputs: vec![
            benign_path.display().to_string(),
            anomalous_path.display().to_string(),
        ],
        ..run
    }
    .param("injection", injection.name())
    .param("snr_db", a.snr)
    .param("n", n)
    .param("n_anomalous", n_anomalous)
    .param("position", a.position.unwrap_or(defaults.position))
    .param("oversample", base.oversample());
    save_traces_with(&benign, &benign_path, format, Some(&run))?;
    save_traces_with(&anomalous, &anomalous_path, format, Some(&run))?;
    let manifest_path = out.join("manifest.json");
    run.outputs.push(manifest_path.display().to_string());
    write_json(&manifest_path, &run)?;
    stdout_line(&benign_path.display().to_string())?;
    stdout_line(&anomalous_path.display().to_string())
}

fn split_labels(m: &TraceMatrix) -> (TraceMatrix, TraceMatrix) {
    let (mut b, mut a) = (Vec::new(), Vec::new());
    for (i, l) in m.labels().iter().enumerate() {
        match l {
            Label::Benign => b.push(i),
            Label::Anomalous => a.push(i),
        }
    }
    (m.select(&b), m.select(&a))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(path.to_path_buf(), e))
}

fn load(path: &Path) -> Result<TraceMatrix, CliError> {
    Ok(load_traces(path, TraceFormat::from_path(path))?)
}

/// SNR for `--cp formula`: the flag, else the sidecar's common value.
fn resolve_snr(flag: Option<f64>, path: &Path) -> Result<f64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    let sidecar = read_sidecar(path)?;
    sidecar.and_then(|s| s.common_snr_db()).ok_or_else(|| {
        CliError::Usage(format!(
            "--cp formula needs --snr; {} records no common SNR",
            path.display()
        ))
    })
}

fn resolve_cp(
    choice: CpChoice,
    m: &TraceMatrix,
    snr: Option<f64>,
    path: &Path,
) -> Result<Option<CuttingPoint>, CliError> {
    Ok(match choice {
        CpChoice::None => None,
        CpChoice::Value(v) => Some(CuttingPoint::new(v)?),
        CpChoice::Formula => Some(formula_cutting_point(resolve_snr(snr, path)?)?),
        CpChoice::Auto => Some(traditional_cutting_point(
            svd_decompose(m)?.singular_values(),
        )),
        CpChoice::Train => return Err(CliError::Usage("--cp train only applies to detect".into())),
    })
}

fn cmd_fingerprint(a: FingerprintArgs, run: RunManifest) -> Result<(), CliError> {
    let path = required(a.traces, "traces")?;
    let out = required(a.out, "out")?;
    let k = a.k.unwrap_or(3);
    let m = load(&path)?;
    let choice = a.cp.unwrap_or(CpChoice::Formula);
    let cp = resolve_cp(choice, &m, a.snr, &path)?;
    let snr = match choice {
        CpChoice::Formula => Some(resolve_snr(a.snr, &path)?),
        _ => a.snr.or_else(|| {
            read_sidecar(&path)
                .ok()
                .flatten()
                .and_then(|s| s.common_snr_db())
        }),
    };
    let model = fingerprint(&m, cp, k)?.with_train_snr(snr);
    save_model(&model, &out)?;
    let run = RunManifest {
        inputs: vec![path.display().to_string()],
        outputs: vec![out.display().to_string()],
        ..run
    }
    .param("cp", cp.map(CuttingPoint::get))
    .param("k", k)
    .param("snr_db", snr);
    write_json(&emtrace_core::io::sidecar_path(&out), &run)?;
    stdout_line(&format!(
        "model {} rows={} cols={} cp={} k={k}",
        out.display(),
        model.len(),
        model.cols(),
        cp.map_or("none".to_string(), |c| c.get().to_string())
    ))
}

fn detect(a: DetectArgs) -> Result<(), CliError> {
    let model_path = required(a.model, "model")?;
    let path = required(a.traces, "traces")?;
    let confidence = a.confidence.unwrap_or(DEFAULT_CONFIDENCE);
    let model = load_model(&model_path)?;
    let cohort = load(&path)?;
    if cohort.rows() < 2 {
        return Err(CliError::Usage(format!(
            "the deployment cohort needs at least 2 traces, {} has {}",
            path.display(),
            cohort.rows()
        )));
    }
    let cp = match a.cp.unwrap_or(CpChoice::Train) {
        CpChoice::Train => model.train_cp(),
        other => resolve_cp(other, &cohort, a.snr, &path)?,
    };
    let verdicts = detect_cohort(&model, &cohort, cp, confidence)?;
    let mut csv = String::from("index,strangeness,p_value,status\n");
    for (i, d) in verdicts.iter().enumerate() {
        let status = d.status.map_or("", |s| s.name());
        csv.push_str(&format!("{i},{},{},{status}\n", d.strangeness, d.p_value));
    }
    match a.out {
        Some(p) => fs::write(&p, csv).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(csv.as_bytes())
                .map_err(|e| CliError::io("stdout", e))
        }
    }
}

fn reproduce(a: ReproduceArgs, run: RunManifest) -> Result<(), CliError> {
    let preset = required(a.table, "table")?;
    let seed = a.seed.unwrap_or(0);
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("report-{}", preset.name())));
    let d = DataConfig::default();
    let data = DataConfig {
        n_benign: a.n_benign.unwrap_or(d.n_benign),
        n_anomalous: a.n_anomalous.unwrap_or(d.n_anomalous),
        position: a.position.unwrap_or(d.position),
        oversample: a.oversample.unwrap_or(d.oversample),
        jitter: d.jitter,
    };
    let progress = a.progress;
    let mut report = eval::run_table(preset, seed, &data, |i, c| {
        if progress {
            eprintln!(
                "cell {i}: {} {}/{} {} auc {:.4}",
                c.injection,
                c.train_snr_db,
                c.test_snr_db,
                c.hyperparameters(),
                c.auc
            );
        }
    })?;
    report.run = Some(
        RunManifest {
            seed: Some(seed),
            outputs: vec![out.display().to_string()],
            ..run
        }
        .param("table", preset.number())
        .param("data", data),
    );
    write_report(&report, &out)?;
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(cells_csv(&report).as_bytes())
        .map_err(|e| CliError::io("stdout", e))
}

fn denoise(a: DenoiseArgs, run: RunManifest) -> Result<(), CliError> {
    let path = required(a.traces, "traces")?;
    let out = required(a.out, "out")?;
    let m = load(&path)?;
    let cp = resolve_cp(a.cp.unwrap_or(CpChoice::Formula), &m, a.snr, &path)?
        .ok_or_else(|| CliError::Usage("denoise needs a cutting point".into()))?;
    let den = denoise_batch(&m, cp)?;
    let run = RunManifest {
        inputs: vec![path.display().to_string()],
        outputs: vec![out.display().to_string()],
        ..run
    }
    .param("cp", cp.get());
    save_traces_with(&den, &out, TraceFormat::from_path(&out), Some(&run))?;
    stdout_line(&format!("{} cp={}", out.display(), cp.get()))
}

fn snr(a: SnrArgs) -> Result<(), CliError> {
    let clean = load(&required(a.clean, "clean")?)?;
    let noisy = load(&required(a.noisy, "noisy")?)?;
    if clean.shape() != noisy.shape() {
        return Err(CliError::Data(format!(
            "shape mismatch: clean {:?}, noisy {:?}",
            clean.shape(),
            noisy.shape()
        )));
    }
    let mut text = String::from("index,snr_db\n");
    let mut sum = 0.0;
    for i in 0..clean.rows() {
        let s = measure_snr(clean.row(i), noisy.row(i))?;
        sum += s;
        text.push_str(&format!("{i},{s}\n"));
    }
    text.push_str(&format!("mean,{}\n", sum / clean.rows() as f64));
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io("stdout", e))
}
