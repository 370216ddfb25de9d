//! White Gaussian noise calibrated to a target SNR.
//!
//! SNR is measured on mean-square power over the whole trace.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::signal::{Trace, TraceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "snr_db must be finite, got {snr_db}"
            )));
        }
        Ok(NoiseSpec { snr_db, seed })
    }

    /// Noise variance that puts a signal of power `power` at this SNR.
    pub fn noise_variance(&self, power: f64) -> f64 {
        power / 10f64.powf(self.snr_db / 10.0)
    }
}

/// Mean of squared samples.
pub fn signal_power(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "signal_power of an empty vector".into(),
        ));
    }
    Ok(samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64)
}

fn add_noise_in_place(samples: &mut [f64], spec: &NoiseSpec) -> Result<()> {
    if !spec.snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "snr_db must be finite, got {}",
            spec.snr_db
        )));
    }
    let power = signal_power(samples)?;
    if power == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let normal = Normal::new(0.0, spec.noise_variance(power).sqrt())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let mut rng = seed::rng(spec.seed);
    for x in samples.iter_mut() {
        *x += normal.sample(&mut rng);
    }
    Ok(())
}

pub fn add_awgn(trace: &Trace, spec: &NoiseSpec) -> Result<Trace> {
    let mut out = trace.clone();
    add_noise_in_place(&mut out.samples, spec)?;
    out.meta.snr_db = Some(spec.snr_db);
    Ok(out)
}

/// Adds independent noise to every row at the same target SNR. Row `i` uses
/// the stream `derive(seed, [i])`.
pub fn add_awgn_batch(m: &TraceMatrix, snr_db: f64, seed: u64) -> Result<TraceMatrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let spec = NoiseSpec {
            snr_db,
            seed: seed::derive(seed, &[seed::TAG_NOISE, i as u64]),
        };
        add_noise_in_place(out.row_mut(i), &spec)?;
        out.meta_mut()[i].snr_db = Some(snr_db);
    }
    Ok(out)
}

/// Achieved SNR in dB of `noisy` relative to `clean`; `+inf` when they are identical.
pub fn measure_snr(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::Dimension {
            expected: clean.len(),
            got: noisy.len(),
        });
    }
    let signal = signal_power(clean)?;
    let residual: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    let noise = signal_power(&residual)?;
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Label;

    fn sine(n: usize) -> Trace {
        let s = (0..n).map(|i| (i as f64 * 0.3).sin() + 0.5).collect();
        Trace::new(s, Label::Benign).unwrap()
    }

    #[test]
    fn power_examples() {
        assert_eq!(signal_power(&[1.0; 8]).unwrap(), 1.0);
        assert_eq!(signal_power(&[0.0; 8]).unwrap(), 0.0);
        assert_eq!(signal_power(&[2.0, -2.0, 2.0, -2.0]).unwrap(), 4.0);
        assert!(matches!(signal_power(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn variance_definition() {
        let s = NoiseSpec::new(0.0, 0).unwrap();
        assert_eq!(s.noise_variance(3.0), 3.0);
        let s = NoiseSpec::new(-10.0, 0).unwrap();
        assert!((s.noise_variance(3.0) - 30.0).abs() < 1e-12);
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn awgn_hits_target() {
        let clean = sine(10_000);
        let noisy = add_awgn(&clean, &NoiseSpec::new(5.0, 11).unwrap()).unwrap();
        assert_eq!(noisy.meta.snr_db, Some(5.0));
        let snr = measure_snr(&clean.samples, &noisy.samples).unwrap();
        assert!((4.5..=5.5).contains(&snr), "{snr}");
    }

    #[test]
    fn awgn_deterministic() {
        let clean = sine(256);
        let spec = NoiseSpec::new(0.0, 5).unwrap();
        let a = add_awgn(&clean, &spec).unwrap();
        let b = add_awgn(&clean, &spec).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = add_awgn(&clean, &NoiseSpec::new(0.0, 6).unwrap()).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn zero_signal_rejected() {
        let z = Trace::new(vec![0.0; 16], Label::Benign).unwrap();
        assert!(matches!(
            add_awgn(&z, &NoiseSpec::new(0.0, 0).unwrap()),
            Err(Error::ZeroSignal)
        ));
    }

    #[test]
    fn scaling_scales_noise() {
        let clean = sine(512);
        let spec = NoiseSpec::new(3.0, 99).unwrap();
        let scaled = Trace::new(
            clean.samples.iter().map(|x| -4.0 * x).collect(),
            Label::Benign,
        )
        .unwrap();
        let a = add_awgn(&clean, &spec).unwrap();
        let b = add_awgn(&scaled, &spec).unwrap();
        for i in 0..clean.len() {
            let na = a.samples[i] - clean.samples[i];
            let nb = b.samples[i] - scaled.samples[i];
            assert!((nb - 4.0 * na).abs() < 1e-9);
        }
    }

    #[test]
    fn measure_examples() {
        let clean = vec![1.0, -1.0, 1.0, -1.0];
        assert_eq!(measure_snr(&clean, &clean).unwrap(), f64::INFINITY);
        let noisy: Vec<f64> = clean.iter().map(|x| x + 1.0).collect();
        assert!(measure_snr(&clean, &noisy).unwrap().abs() < 1e-12);
        assert!(matches!(
            measure_snr(&clean, &clean[..2]),
            Err(Error::Dimension { .. })
        ));
    }
}
