use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use emtrace_core::detector::load_model;

fn emtrace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emtrace"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run emtrace")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = emtrace(dir, args);
    assert_eq!(
        code(&o),
        0,
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "generate",
            "--injection",
            "add",
            "--snr",
            "-5",
            "--n",
            "200",
            "--seed",
            "7",
            "--out",
            out,
        ]
    };
    ok(dir.path(), &args("a"));
    ok(dir.path(), &args("b"));
    for f in ["benign.emtr", "anomalous.emtr"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "generate");
}

#[test]
fn single_trace_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = emtrace(dir.path(), &["generate", "--n", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 2"));
    assert!(o.stdout.is_empty());
}

#[test]
fn formula_reads_snr_from_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["generate", "--snr", "0", "--n", "60", "--out", "d"],
    );
    ok(
        dir.path(),
        &[
            "fingerprint",
            "--traces",
            "d/benign.emtr",
            "--cp",
            "formula",
            "--out",
            "m.emmd",
        ],
    );
    let model = load_model(&dir.path().join("m.emmd")).unwrap();
    assert_eq!(model.train_cp().unwrap().get(), 10);
    assert_eq!(model.train_snr_db(), Some(0.0));
}

#[test]
fn formula_without_snr_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--n", "60", "--out", "d"]);
    let o = emtrace(
        dir.path(),
        &[
            "fingerprint",
            "--traces",
            "d/benign.emtr",
            "--cp",
            "formula",
            "--out",
            "m",
        ],
    );
    assert_eq!(code(&o), 2);
    let with_flag = [
        "fingerprint",
        "--traces",
        "d/benign.emtr",
        "--cp",
        "formula",
        "--snr",
        "5",
        "--out",
        "m",
    ];
    ok(dir.path(), &with_flag);
}

#[test]
fn contaminated_baseline_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--n", "30", "--out", "d"]);
    let o = emtrace(
        dir.path(),
        &[
            "fingerprint",
            "--traces",
            "d/anomalous.emtr",
            "--cp",
            "4",
            "--out",
            "m",
        ],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn detect_writes_one_verdict_per_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "generate",
            "--snr",
            "10",
            "--n",
            "80",
            "--n-anomalous",
            "25",
            "--out",
            "d",
        ],
    );
    ok(
        dir.path(),
        &[
            "fingerprint",
            "--traces",
            "d/benign.emtr",
            "--out",
            "m.emmd",
        ],
    );
    let csv = ok(
        dir.path(),
        &[
            "detect",
            "--model",
            "m.emmd",
            "--traces",
            "d/anomalous.emtr",
        ],
    );
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,strangeness,p_value,status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r.ends_with(",anomalous")));
}

#[test]
fn single_row_cohort_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["generate", "--n", "20", "--n-anomalous", "1", "--out", "d"],
    );
    ok(
        dir.path(),
        &[
            "fingerprint",
            "--traces",
            "d/benign.emtr",
            "--cp",
            "3",
            "--out",
            "m.emmd",
        ],
    );
    let o = emtrace(
        dir.path(),
        &[
            "detect",
            "--model",
            "m.emmd",
            "--traces",
            "d/anomalous.emtr",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn benign_false_positive_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (n, reps) = (1000, 5);
    let mut flagged = 0;
    for rep in 0..reps {
        let (a, b) = (format!("a{rep}"), format!("b{rep}"));
        let (sa, sb) = ((2 * rep + 1).to_string(), (2 * rep + 2).to_string());
        let gen = |seed: &str, out: &str| {
            let n = n.to_string();
            ok(
                dir.path(),
                &[
                    "generate",
                    "--snr",
                    "5",
                    "--n",
                    &n,
                    "--n-anomalous",
                    "0",
                    "--seed",
                    seed,
                    "--out",
                    out,
                ],
            );
        };
        gen(&sa, &a);
        gen(&sb, &b);
        // Queries and baseline must be processed alike for the null to hold, so
        // neither side is denoised here.
        let model = format!("m{rep}.emmd");
        ok(
            dir.path(),
            &[
                "fingerprint",
                "--traces",
                &format!("{a}/benign.emtr"),
                "--cp",
                "none",
                "--out",
                &model,
            ],
        );
        let traces = format!("{b}/benign.emtr");
        let csv = ok(
            dir.path(),
            &[
                "detect",
                "--model",
                &model,
                "--traces",
                &traces,
                "--confidence",
                "0.95",
            ],
        );
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), n);
        flagged += rows.iter().filter(|r| r.ends_with(",anomalous")).count();
    }
    // Flags against one baseline are correlated: the spread doubles the
    // binomial variance.
    let alpha = 0.05;
    let total = (n * reps) as f64;
    let sd = (2.0 * alpha * (1.0 - alpha) / total).sqrt();
    let rate = flagged as f64 / total;
    assert!(
        rate <= alpha + 1.0 / (n as f64 + 1.0) + 3.0 * sd,
        "false-positive rate {rate}"
    );
}

#[test]
fn reproduce_emits_preset_cells() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = ["--n-benign", "60", "--n-anomalous", "60"];
    for (table, cells) in [("3", 10), ("4", 30)] {
        let mut args = vec!["reproduce", "--table", table, "--out", table];
        args.extend(tiny);
        let csv = ok(dir.path(), &args);
        assert_eq!(csv.lines().count(), cells + 1);
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(table).join("report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["cells"].as_array().unwrap().len(), cells);
        assert_eq!(report["run"]["command"], "reproduce");
    }
    let o = emtrace(dir.path(), &["reproduce", "--table", "5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "seed = 3\n[generate]\nn = 12\nn_anomalous = 4\nout = \"cfg\"\n",
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.toml", "generate"]);
    ok(
        dir.path(),
        &[
            "--config", "run.toml", "generate", "--n", "9", "--out", "flag",
        ],
    );
    let rows = |p: &str| {
        let sc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(p)).unwrap()).unwrap();
        (
            sc["rows"].as_array().unwrap().len(),
            sc["run"]["seed"].clone(),
        )
    };
    assert_eq!(rows("cfg/benign.emtr.json"), (12, 3.into()));
    assert_eq!(rows("flag/benign.emtr.json"), (9, 3.into()));
    assert_eq!(rows("flag/anomalous.emtr.json").0, 4);

    fs::write(dir.path().join("bad.toml"), "[generate]\nbogus = 1\n").unwrap();
    let o = emtrace(
        dir.path(),
        &["--config", "bad.toml", "generate", "--n", "5"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn denoise_and_snr_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "generate",
            "--n",
            "20",
            "--n-anomalous",
            "0",
            "--out",
            "clean",
        ],
    );
    ok(
        dir.path(),
        &[
            "generate",
            "--n",
            "20",
            "--n-anomalous",
            "0",
            "--snr",
            "0",
            "--out",
            "noisy",
        ],
    );
    let out = ok(
        dir.path(),
        &[
            "snr",
            "--clean",
            "clean/benign.emtr",
            "--noisy",
            "noisy/benign.emtr",
        ],
    );
    let mean: f64 = out
        .lines()
        .last()
        .unwrap()
        .strip_prefix("mean,")
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean.abs() < 0.5, "{mean}");
    ok(
        dir.path(),
        &[
            "denoise",
            "--traces",
            "noisy/benign.emtr",
            "--cp",
            "formula",
            "--out",
            "den.csv",
        ],
    );
    let text = fs::read_to_string(dir.path().join("den.csv")).unwrap();
    assert_eq!(text.lines().count(), 20);
    let out = ok(
        dir.path(),
        &["snr", "--clean", "clean/benign.emtr", "--noisy", "den.csv"],
    );
    let denoised: f64 = out
        .lines()
        .last()
        .unwrap()
        .strip_prefix("mean,")
        .unwrap()
        .parse()
        .unwrap();
    assert!(denoised > mean, "{denoised} <= {mean}");
}
