//! Complex baseband sample sequences and their on-disk format.
//!
//! On disk a signal is a raw file of little-endian interleaved `f64` I/Q
//! pairs plus a JSON sidecar named `<file>.json` holding the sample rate,
//! the length and the generator seed (when known).

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, mean_power, to_f64, Real, C};

/// Complex baseband signal with its sample rate in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSignal<T: Real> {
    pub samples: Vec<C<T>>,
    pub sample_rate: f64,
}

impl<T: Real> IqSignal<T> {
    /// Builds a signal, rejecting empty or non-finite input.
    pub fn new(samples: Vec<C<T>>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySignal("IqSignal::new"));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::Format(format!("non-finite sample at index {i}")));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::config(format!("invalid sample rate {sample_rate}")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Builds a signal without validation; for internal pipelines whose
    /// output is finite by construction.
    pub fn from_parts(samples: Vec<C<T>>, sample_rate: f64) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> T {
        mean_power(&self.samples)
    }

    pub fn peak_amplitude(&self) -> T {
        self.samples
            .iter()
            .map(|s| s.norm())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn scaled(&self, k: C<T>) -> Self {
        Self::from_parts(self.samples.iter().map(|s| s * k).collect(), self.sample_rate)
    }

    /// Copy of samples `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() || len == 0 {
            return Err(Error::Index {
                index: start + len,
                len: self.len(),
            });
        }
        Ok(Self::from_parts(self.samples[start..start + len].to_vec(), self.sample_rate))
    }

    pub fn convert<U: Real>(&self) -> IqSignal<U> {
        IqSignal::from_parts(
            self.samples
                .iter()
                .map(|s| Complex::new(lit::<U>(to_f64(s.re)), lit::<U>(to_f64(s.im))))
                .collect(),
            self.sample_rate,
        )
    }
}

/// JSON sidecar written next to every raw I/Q file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSidecar {
    pub sample_rate: f64,
    pub length: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Encodes samples as little-endian interleaved `f64` pairs.
pub fn encode_iq<T: Real>(samples: &[C<T>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 16);
    for s in samples {
        out.extend_from_slice(&to_f64(s.re).to_le_bytes());
        out.extend_from_slice(&to_f64(s.im).to_le_bytes());
    }
    out
}

pub fn decode_iq<T: Real>(bytes: &[u8]) -> Result<Vec<C<T>>> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "I/Q payload length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex::new(lit(re), lit(im))
        })
        .collect())
}

/// Writes the raw I/Q file and its sidecar.
pub fn write_signal<T: Real>(path: &Path, sig: &IqSignal<T>, seed: Option<u64>) -> Result<()> {
    fs::write(path, encode_iq(&sig.samples))?;
    let side = SignalSidecar {
        sample_rate: sig.sample_rate,
        length: sig.len(),
        seed,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_signal<T: Real>(path: &Path) -> Result<(IqSignal<T>, SignalSidecar)> {
    let side: SignalSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let samples = decode_iq(&fs::read(path)?)?;
    if samples.len() != side.length {
        return Err(Error::LengthMismatch {
            what: "sidecar length vs payload",
            left: side.length,
            right: samples.len(),
        });
    }
    Ok((IqSignal::new(samples, side.sample_rate)?, side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(IqSignal::<f64>::new(vec![], 1.0).is_err());
        assert!(IqSignal::new(vec![Complex::new(f64::NAN, 0.0)], 1.0).is_err());
        assert!(IqSignal::new(vec![cplx::<f64>(1.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.iq");
        let sig = IqSignal::new(vec![cplx::<f64>(0.5, -1.25), cplx(3.0, 1e-9)], 1e6).unwrap();
        write_signal(&p, &sig, Some(7)).unwrap();
        let raw = fs::read(&p).unwrap();
        assert_eq!(raw.len(), 32);
        assert_eq!(&raw[..8], &0.5f64.to_le_bytes());
        let (back, side) = read_signal::<f64>(&p).unwrap();
        assert_eq!(back, sig);
        assert_eq!(side.seed, Some(7));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        assert!(decode_iq::<f64>(&[0u8; 15]).is_err());
    }
}
