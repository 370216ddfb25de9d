//! Detection of injected instructions in electromagnetic side-channel traces.
//!
//! Traces are denoised in batches by truncated SVD, fingerprinted with Local
//! Outlier Factor scores, and new observations are ranked against that
//! fingerprint with a transductive p-value.
//!
//! ```
//! use emtrace_core::{denoise::CuttingPoint, detector, eval::Dataset, noise, signal::Injection};
//!
//! let cfg = emtrace_core::eval::DataConfig { n_benign: 60, n_anomalous: 10, ..Default::default() };
//! let data = Dataset::synthetic(Injection::Jmp, &cfg, 1).unwrap();
//! let train = noise::add_awgn_batch(&data.benign, 10.0, 2).unwrap();
//! let model = detector::fingerprint(&train, Some(CuttingPoint::new(5).unwrap()), 3).unwrap();
//! let cohort = noise::add_awgn_batch(&data.anomalous, 10.0, 3).unwrap();
//! let verdicts = detector::detect_cohort(&model, &cohort, Some(CuttingPoint::new(5).unwrap()), 0.95).unwrap();
//! assert_eq!(verdicts.len(), 10);
//! ```

pub mod denoise;
pub mod detector;
pub mod error;
pub mod eval;
pub mod io;
pub mod lof;
pub mod manifest;
pub mod noise;
pub mod seed;
pub mod signal;

pub use error::{Error, Result};
