use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CpStrategy, ExperimentConfig};
use crate::error::{Error, Result};
use crate::signal::Injection;

pub const SNR_GRID: [f64; 5] = [10.0, 5.0, 0.0, -5.0, -10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// No denoising.
    Table1,
    /// Spectrum-knee cutting point.
    Table2,
    /// Per-SNR cutting points, matched train and test noise.
    Table3,
    /// Training at one SNR, deployment at the same or a lower one.
    Table4,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Table1,
        Preset::Table2,
        Preset::Table3,
        Preset::Table4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Table2 => "table2",
            Preset::Table3 => "table3",
            Preset::Table4 => "table4",
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Preset::Table1 => 1,
            Preset::Table2 => 2,
            Preset::Table3 => 3,
            Preset::Table4 => 4,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| t == p.name() || t == p.number().to_string())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset {s:?} (expected 1-4)")))
    }
}

/// Matched-noise cutting points and neighbor counts, by position in `SNR_GRID`.
const TABLE3_CP: [usize; 5] = [25, 15, 10, 6, 4];
const TABLE3_K: [usize; 5] = [3, 3, 3, 5, 5];

/// `(train_snr, test_snr, cp_train, cp_test, k)`.
const TABLE4_ADD: [(f64, f64, usize, usize, usize); 15] = [
    (10.0, 10.0, 25, 25, 3),
    (10.0, 5.0, 25, 15, 3),
    (10.0, 0.0, 25, 10, 3),
    (10.0, -5.0, 25, 6, 3),
    (10.0, -10.0, 25, 4, 25),
    (5.0, 5.0, 15, 15, 3),
    (5.0, 0.0, 15, 10, 3),
    (5.0, -5.0, 15, 6, 5),
    (5.0, -10.0, 15, 4, 25),
    (0.0, 0.0, 10, 10, 5),
    (0.0, -5.0, 10, 6, 5),
    (0.0, -10.0, 10, 4, 25),
    (-5.0, -5.0, 6, 6, 5),
    (-5.0, -10.0, 6, 4, 51),
    (-10.0, -10.0, 4, 4, 5),
];

fn table4_rows(injection: Injection) -> [(f64, f64, usize, usize, usize); 15] {
    let mut rows = TABLE4_ADD;
    if injection == Injection::Jmp {
        // The only cell where the two injections were tuned differently.
        rows[9].4 = 3;
    }
    rows
}

/// Every cell of a preset, ADD cells first.
pub fn preset_configs(preset: Preset, seed: u64) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for injection in Injection::ALL {
        let base = ExperimentConfig {
            injection,
            seed,
            ..ExperimentConfig::default()
        };
        match preset {
            Preset::Table1 | Preset::Table2 | Preset::Table3 => {
                for (i, &snr) in SNR_GRID.iter().enumerate() {
                    let (cp_strategy, k) = match preset {
                        Preset::Table1 => (CpStrategy::None, 3),
                        Preset::Table2 => (CpStrategy::Traditional, 3),
                        _ => (
                            CpStrategy::Fixed {
                                value: TABLE3_CP[i],
                            },
                            TABLE3_K[i],
                        ),
                    };
                    out.push(ExperimentConfig {
                        train_snr_db: snr,
                        test_snr_db: snr,
                        cp_strategy,
                        k,
                        ..base
                    });
                }
            }
            Preset::Table4 => {
                for (train, test, a, b, k) in table4_rows(injection) {
                    out.push(ExperimentConfig {
                        train_snr_db: train,
                        test_snr_db: test,
                        cp_strategy: CpStrategy::Pair { train: a, test: b },
                        k,
                        ..base
                    });
                }
            }
        }
    }
    out
}
