//! Synthetic instruction-level emission model.
//!
//! A trace is a carrier at the CPU clock, sampled at `oversample` samples per
//! cycle, whose envelope steps to the amplitude of whichever instruction is
//! executing. Injecting an instruction inserts `cycles * oversample` samples
//! at that point and delays everything after it.

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_OVERSAMPLE: usize = 24;
pub const DEFAULT_CLOCK_HZ: f64 = 16.0e6;
/// Injection point used by the default experiments, inside the critical section.
pub const DEFAULT_INJECTION_POSITION: usize = 17;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionKind {
    Clr,
    Add,
    Jmp,
    Nop,
    Custom(String),
}

impl fmt::Display for InstructionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstructionKind::Clr => f.write_str("CLR"),
            InstructionKind::Add => f.write_str("ADD"),
            InstructionKind::Jmp => f.write_str("JMP"),
            InstructionKind::Nop => f.write_str("NOP"),
            InstructionKind::Custom(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    kind: InstructionKind,
    cycles: u32,
    amplitude: f64,
}

impl Instruction {
    pub fn new(kind: InstructionKind, cycles: u32, amplitude: f64) -> Result<Self> {
        if cycles == 0 {
            return Err(Error::InvalidParameter(format!(
                "{kind}: cycles must be >= 1"
            )));
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{kind}: amplitude must be finite and > 0, got {amplitude}"
            )));
        }
        Ok(Instruction {
            kind,
            cycles,
            amplitude,
        })
    }

    fn table(kind: InstructionKind, cycles: u32, amplitude: f64) -> Self {
        Instruction {
            kind,
            cycles,
            amplitude,
        }
    }

    pub fn clr() -> Self {
        Self::table(InstructionKind::Clr, 1, 1.0)
    }

    pub fn add() -> Self {
        Self::table(InstructionKind::Add, 1, 1.3)
    }

    pub fn jmp() -> Self {
        Self::table(InstructionKind::Jmp, 3, 1.6)
    }

    pub fn nop() -> Self {
        Self::table(InstructionKind::Nop, 1, 1.0)
    }

    pub fn custom(name: &str, cycles: u32, amplitude: f64) -> Result<Self> {
        Self::new(InstructionKind::Custom(name.to_string()), cycles, amplitude)
    }

    pub fn kind(&self) -> &InstructionKind {
        &self.kind
    }

    pub fn cycles(&self) -> u32 {
        self.cycles
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

/// Injection payloads used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Injection {
    Add,
    Jmp,
}

impl Injection {
    pub const ALL: [Injection; 2] = [Injection::Add, Injection::Jmp];

    pub fn instruction(self) -> Instruction {
        match self {
            Injection::Add => Instruction::add(),
            Injection::Jmp => Instruction::jmp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Injection::Add => "ADD",
            Injection::Jmp => "JMP",
        }
    }
}

impl std::str::FromStr for Injection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "add" => Ok(Injection::Add),
            "jmp" => Ok(Injection::Jmp),
            other => Err(Error::InvalidParameter(format!(
                "unknown injection {other:?} (expected add or jmp)"
            ))),
        }
    }
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    instructions: Vec<Instruction>,
    clock_hz: f64,
    oversample: usize,
}

impl Program {
    pub fn new(instructions: Vec<Instruction>, clock_hz: f64, oversample: usize) -> Result<Self> {
        if !(clock_hz.is_finite() && clock_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clock_hz must be > 0, got {clock_hz}"
            )));
        }
        if oversample == 0 {
            return Err(Error::InvalidParameter(
                "oversample factor must be >= 1".into(),
            ));
        }
        Ok(Program {
            instructions,
            clock_hz,
            oversample,
        })
    }

    pub fn with_instructions(instructions: Vec<Instruction>) -> Self {
        Program {
            instructions,
            clock_hz: DEFAULT_CLOCK_HZ,
            oversample: DEFAULT_OVERSAMPLE,
        }
    }

    /// Emission profile of the critical section of the tank-filling control
    /// loop: sensor reads and actuator writes interleaved with register
    /// clears, followed by an idle tail.
    pub fn tank_filling() -> Self {
        let cpi = Instruction::table(InstructionKind::Custom("CPI".into()), 1, 5.6);
        let inp = Instruction::table(InstructionKind::Custom("IN".into()), 1, 6.0);
        let out = Instruction::table(InstructionKind::Custom("OUT".into()), 1, 6.5);
        let clr = Instruction::clr();
        let nop = Instruction::nop();
        let layout = "CCCIOC--O----O---CC--I--....";
        let instructions = layout
            .chars()
            .map(|c| match c {
                'C' => cpi.clone(),
                'I' => inp.clone(),
                'O' => out.clone(),
                '-' => clr.clone(),
                _ => nop.clone(),
            })
            .collect();
        Self::with_instructions(instructions)
    }

    pub fn with_oversample(&self, oversample: usize) -> Result<Program> {
        Program::new(self.instructions.clone(), self.clock_hz, oversample)
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn clock_hz(&self) -> f64 {
        self.clock_hz
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.clock_hz * self.oversample as f64
    }

    pub fn total_cycles(&self) -> u64 {
        self.instructions.iter().map(|i| u64::from(i.cycles)).sum()
    }

    /// Number of samples a synthesized trace of this program has.
    pub fn trace_len(&self) -> usize {
        self.total_cycles() as usize * self.oversample
    }

    /// Returns a copy with `inst` inserted before position `position`.
    pub fn inject(&self, position: usize, inst: Instruction) -> Result<Program> {
        if position > self.instructions.len() {
            return Err(Error::Index {
                index: position,
                len: self.instructions.len(),
            });
        }
        let mut out = self.clone();
        out.instructions.insert(position, inst);
        Ok(out)
    }
}

impl Default for Program {
    fn default() -> Self {
        Self::tank_filling()
    }
}

/// Free-function form of [`Program::inject`].
pub fn inject_instruction(
    program: &Program,
    position: usize,
    inst: Instruction,
) -> Result<Program> {
    program.inject(position, inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Anomalous,
}

impl Label {
    pub fn as_byte(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Anomalous => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Anomalous),
            other => Err(Error::Format(format!("invalid label byte {other}"))),
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
    pub injection: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<f64>,
    pub label: Label,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(samples: Vec<f64>, label: Label) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("trace has no samples".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "trace contains non-finite samples".into(),
            ));
        }
        Ok(Trace {
            samples,
            label,
            meta: TraceMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-trace perturbations applied during synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    /// Carrier phase offset is drawn uniformly from `[-phase, phase]` radians.
    pub phase: f64,
    /// Relative standard deviation of the per-trace envelope gain.
    pub amplitude: f64,
}

impl JitterConfig {
    pub const NONE: JitterConfig = JitterConfig {
        phase: 0.0,
        amplitude: 0.0,
    };

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phase jitter", self.phase),
            ("amplitude jitter", self.amplitude),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            phase: 0.1,
            amplitude: 0.03,
        }
    }
}

/// Synthesizes one observation of `program`.
///
/// The envelope gain `1 + amplitude_jitter * z` and the carrier phase offset
/// are drawn once per trace from a stream seeded by `seed`.
pub fn synthesize_trace(program: &Program, jitter: &JitterConfig, seed: u64) -> Result<Trace> {
    if program.is_empty() {
        return Err(Error::InvalidProgram("program has no instructions".into()));
    }
    jitter.validate()?;

    let mut rng = seed::rng(seed);
    let z: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random_range(-1.0..=1.0);
    let gain = 1.0 + jitter.amplitude * z;
    let phase = jitter.phase * u;

    let per_cycle = program.oversample;
    let step = TAU / per_cycle as f64;
    let mut samples = Vec::with_capacity(program.trace_len());
    for inst in &program.instructions {
        let envelope = gain * inst.amplitude;
        for _ in 0..inst.cycles as usize * per_cycle {
            // Reduced modulo the carrier period; keeps sin arguments small.
            let k = samples.len() % per_cycle;
            samples.push(envelope * (step * k as f64 + phase).sin());
        }
    }
    Ok(Trace {
        samples,
        label: Label::Benign,
        meta: TraceMeta {
            snr_db: None,
            seed: Some(seed),
            injection: None,
        },
    })
}

/// An aligned batch of observations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    labels: Vec<Label>,
    meta: Vec<TraceMeta>,
}

impl TraceMatrix {
    pub fn from_row_major(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Format(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if labels.len() != rows {
            return Err(Error::Format(format!(
                "{} labels for {rows} rows",
                labels.len()
            )));
        }
        Ok(TraceMatrix {
            rows,
            cols,
            data,
            labels,
            meta: vec![TraceMeta::default(); rows],
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::Format(format!(
                "row {i} has {} samples, expected {cols}",
                r.len()
            )));
        }
        let n = rows.len();
        Self::from_row_major(n, cols, rows.concat(), labels)
    }

    /// Stacks traces, zero-padding each at the end to the longest length.
    pub fn from_traces(traces: &[Trace]) -> Result<Self> {
        let cols = traces.iter().map(Trace::len).max().unwrap_or(0);
        let mut data = vec![0.0; traces.len() * cols];
        for (i, t) in traces.iter().enumerate() {
            data[i * cols..i * cols + t.len()].copy_from_slice(&t.samples);
        }
        Ok(TraceMatrix {
            rows: traces.len(),
            cols,
            data,
            labels: traces.iter().map(|t| t.label).collect(),
            meta: traces.iter().map(|t| t.meta.clone()).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn meta(&self) -> &[TraceMeta] {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut [TraceMeta] {
        &mut self.meta
    }

    pub fn set_label(&mut self, i: usize, label: Label) {
        self.labels[i] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn trace(&self, i: usize) -> Trace {
        Trace {
            samples: self.row(i).to_vec(),
            label: self.labels[i],
            meta: self.meta[i].clone(),
        }
    }

    /// Copies the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> TraceMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        TraceMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }

    /// Appends the rows of `other`; both must have the same column count.
    pub fn vstack(&self, other: &TraceMatrix) -> Result<TraceMatrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: other.cols,
            });
        }
        let mut out = self.clone();
        out.rows += other.rows;
        out.data.extend_from_slice(&other.data);
        out.labels.extend_from_slice(&other.labels);
        out.meta.extend_from_slice(&other.meta);
        Ok(out)
    }

    /// Replaces the sample values, keeping labels and metadata.
    pub fn with_data(&self, data: Vec<f64>) -> Result<TraceMatrix> {
        if data.len() != self.data.len() {
            return Err(Error::Dimension {
                expected: self.data.len(),
                got: data.len(),
            });
        }
        Ok(TraceMatrix {
            data,
            ..self.clone()
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Generates `n_benign` traces of `base` and `n_anomalous` traces of
/// `injected`, zero-padded at the end to a common length.
///
/// Row `i` of each class is seeded from `(seed, class, i)`, so a row does not
/// depend on how many other rows are requested.
pub fn generate_dataset(
    base: &Program,
    injected: &Program,
    n_benign: usize,
    n_anomalous: usize,
    jitter: &JitterConfig,
    seed: u64,
) -> Result<TraceMatrix> {
    if n_benign < 2 {
        return Err(Error::InsufficientBaseline {
            required: 2,
            got: n_benign,
        });
    }
    let mut traces = Vec::with_capacity(n_benign + n_anomalous);
    for i in 0..n_benign {
        let t = synthesize_trace(
            base,
            jitter,
            seed::derive(seed, &[seed::TAG_BENIGN, i as u64]),
        )?;
        traces.push(t);
    }
    let description = describe_injection(base, injected);
    for i in 0..n_anomalous {
        let mut t = synthesize_trace(
            injected,
            jitter,
            seed::derive(seed, &[seed::TAG_ANOMALOUS, i as u64]),
        )?;
        t.label = Label::Anomalous;
        t.meta.injection = description.clone();
        traces.push(t);
    }
    TraceMatrix::from_traces(&traces)
}

/// Locates the first instruction where `injected` departs from `base`.
fn describe_injection(base: &Program, injected: &Program) -> Option<String> {
    let a = base.instructions();
    let b = injected.instructions();
    let pos = (0..b.len()).find(|&i| a.get(i) != Some(&b[i]))?;
    Some(format!("{}@{pos}", b[pos].kind()))
}
