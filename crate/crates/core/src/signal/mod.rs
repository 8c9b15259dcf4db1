//! Uniformly sampled signals and the DSP used to derive model inputs.

mod filters;
pub mod io;
mod waveform;

pub use filters::{
    butterworth_bandpass, gaussian_smooth, median_filter, resample, sosfilt, sosfiltfilt,
    BiquadCascade,
};
pub use waveform::{
    derive_breathing_waveform, derive_heart_waveform, normalize_patch, pan_tompkins, BREATH_FS,
    BREATH_MEDIAN_LEN, HEART_BAND_HZ, HEART_BUTTERWORTH_ORDER, HEART_FS, HEART_GAUSSIAN_SIGMA_S,
};

use crate::{Error, Result};

/// A uniformly sampled real-valued time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub samples: Vec<f64>,
    /// Sampling frequency in Hz.
    pub fs: f64,
    pub label: String,
    /// Start time in seconds since the start of the recording.
    pub t0: f64,
}

impl SampledSignal {
    /// Builds a signal, rejecting non-positive rates and non-finite samples.
    pub fn new(samples: Vec<f64>, fs: f64, label: impl Into<String>) -> Result<Self> {
        Self::with_start(samples, fs, label, 0.0)
    }

    pub fn with_start(
        samples: Vec<f64>,
        fs: f64,
        label: impl Into<String>,
        t0: f64,
    ) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "sampling frequency {fs} must be > 0"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidSignal("start time must be finite".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {i} is not finite")));
        }
        let label = label.into();
        if label.chars().any(char::is_whitespace) {
            return Err(Error::InvalidSignal(format!(
                "label `{label}` contains whitespace"
            )));
        }
        Ok(Self {
            samples,
            fs,
            label,
            t0,
        })
    }

    /// Duration in seconds, `len / fs`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same metadata, new samples (and possibly a new rate).
    pub(crate) fn derived(&self, samples: Vec<f64>, fs: f64) -> Self {
        Self {
            samples,
            fs,
            label: self.label.clone(),
            t0: self.t0,
        }
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// A filter applied to a [`SampledSignal`].
#[derive(Debug, Clone, PartialEq)]
pub enum FilterSpec {
    /// Zero-phase Butterworth bandpass; `order` is the prototype order.
    ButterworthBandpass {
        low_hz: f64,
        high_hz: f64,
        order: usize,
    },
    Gaussian {
        sigma_s: f64,
    },
    /// Running median with an odd kernel length.
    Median {
        kernel_len: usize,
    },
    /// Bandpass, derivative, squaring and moving-window integration.
    PanTompkins,
}

impl FilterSpec {
    /// Checks the spec against the rate it will be applied at.
    pub fn validate(&self, fs: f64) -> Result<()> {
        match *self {
            FilterSpec::ButterworthBandpass {
                low_hz,
                high_hz,
                order,
            } => {
                if order == 0 {
                    return Err(Error::InvalidFilter("order must be >= 1".into()));
                }
                if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
                    return Err(Error::InvalidFilter(format!(
                        "need 0 < low ({low_hz}) < high ({high_hz}) < fs/2 ({})",
                        fs / 2.0
                    )));
                }
            }
            FilterSpec::Gaussian { sigma_s } => {
                if !(sigma_s > 0.0 && sigma_s.is_finite()) {
                    return Err(Error::InvalidFilter(format!("sigma {sigma_s} must be > 0")));
                }
            }
            FilterSpec::Median { kernel_len } => {
                if kernel_len == 0 || kernel_len % 2 == 0 {
                    return Err(Error::InvalidFilter(format!(
                        "median kernel length {kernel_len} must be odd and >= 1"
                    )));
                }
            }
            FilterSpec::PanTompkins => {
                if fs < waveform::MIN_ECG_FS {
                    return Err(Error::InvalidFilter(format!(
                        "ECG rate {fs} Hz is below {} Hz",
                        waveform::MIN_ECG_FS
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &SampledSignal) -> Result<SampledSignal> {
        self.validate(x.fs)?;
        match *self {
            FilterSpec::ButterworthBandpass { .. } => butterworth_bandpass(x, self),
            FilterSpec::Gaussian { sigma_s } => gaussian_smooth(x, sigma_s),
            FilterSpec::Median { kernel_len } => median_filter(x, kernel_len),
            FilterSpec::PanTompkins => pan_tompkins(x),
        }
    }
}
