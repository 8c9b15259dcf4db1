//! Heart and breathing waveform derivation and per-patch normalisation.

use super::filters::{sosfiltfilt, BiquadCascade};
use super::{gaussian_smooth, median_filter, resample, FilterSpec, SampledSignal};
use crate::{Error, Result};

/// Output rate of the heart waveform.
pub const HEART_FS: f64 = 10.0;
/// Output rate of the breathing waveform.
pub const BREATH_FS: f64 = 5.0;
/// Heart waveform passband, 40 to 168 beats per minute.
pub const HEART_BAND_HZ: (f64, f64) = (0.66, 2.8);
pub const HEART_BUTTERWORTH_ORDER: usize = 4;
pub const HEART_GAUSSIAN_SIGMA_S: f64 = 0.15;
pub const BREATH_MEDIAN_LEN: usize = 5;

pub(crate) const MIN_ECG_FS: f64 = 100.0;
const MIN_ECG_SECONDS: f64 = 60.0;
const QRS_BAND_HZ: (f64, f64) = (5.0, 15.0);
const QRS_BAND_ORDER: usize = 2;
const INTEGRATION_WINDOW_S: f64 = 0.150;

/// The QRS-enhancement chain: 5-15 Hz bandpass, five-point derivative,
/// squaring and a 150 ms trailing moving-window integrator. The output keeps
/// the input rate.
pub fn pan_tompkins(ecg: &SampledSignal) -> Result<SampledSignal> {
    FilterSpec::PanTompkins.validate(ecg.fs)?;
    let fs = ecg.fs;
    let band =
        BiquadCascade::butterworth_bandpass(QRS_BAND_ORDER, QRS_BAND_HZ.0, QRS_BAND_HZ.1, fs)?;
    let x = sosfiltfilt(&band, &ecg.samples)?;

    let at = |i: usize, back: usize| x[i.saturating_sub(back)];
    let squared: Vec<f64> = (0..x.len())
        .map(|i| {
            let d = fs / 8.0 * (2.0 * at(i, 0) + at(i, 1) - at(i, 3) - 2.0 * at(i, 4));
            d * d
        })
        .collect();

    let w = ((INTEGRATION_WINDOW_S * fs).round() as usize).max(1);
    let mut out = Vec::with_capacity(squared.len());
    let mut acc = 0.0;
    for i in 0..squared.len() {
        acc += squared[i];
        if i >= w {
            acc -= squared[i - w];
        }
        out.push(acc / w as f64);
    }
    // The running sum cannot go negative; clamp away cancellation residue.
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(ecg.derived(out, fs).relabel("hw"))
}

/// ECG to 10 Hz heart waveform: QRS-enhancement chain, resample to 10 Hz,
/// zero-phase Butterworth bandpass 0.66-2.8 Hz, then Gaussian smoothing.
pub fn derive_heart_waveform(ecg: &SampledSignal) -> Result<SampledSignal> {
    if ecg.fs < MIN_ECG_FS {
        return Err(Error::InvalidSignal(format!(
            "ECG sampled at {} Hz; at least {MIN_ECG_FS} Hz is needed for the QRS band",
            ecg.fs
        )));
    }
    if ecg.duration() < MIN_ECG_SECONDS {
        return Err(Error::InvalidSignal(format!(
            "ECG of {:.1} s is shorter than the {MIN_ECG_SECONDS} s filter warm-up",
            ecg.duration()
        )));
    }
    let integrated = pan_tompkins(ecg)?;
    let at_10hz = resample(&integrated, HEART_FS)?;
    let band = FilterSpec::ButterworthBandpass {
        low_hz: HEART_BAND_HZ.0,
        high_hz: HEART_BAND_HZ.1,
        order: HEART_BUTTERWORTH_ORDER,
    };
    let filtered = band.apply(&at_10hz)?;
    Ok(gaussian_smooth(&filtered, HEART_GAUSSIAN_SIGMA_S)?.relabel("hw"))
}

/// Thoracic effort to 5 Hz breathing waveform: downsample to 5 Hz then a
/// length-5 running median.
pub fn derive_breathing_waveform(thor: &SampledSignal) -> Result<SampledSignal> {
    if thor.is_empty() {
        return Err(Error::InvalidSignal("empty respiratory signal".into()));
    }
    if thor.fs < BREATH_FS {
        return Err(Error::InvalidSignal(format!(
            "respiratory signal at {} Hz is below the {BREATH_FS} Hz output rate",
            thor.fs
        )));
    }
    let at_5hz = resample(thor, BREATH_FS)?;
    Ok(median_filter(&at_5hz, BREATH_MEDIAN_LEN)?.relabel("bw"))
}

/// Zero-mean, unit population-variance copy of `patch`. A constant patch
/// maps to zeros because the deviation is floored at `1e-8`.
pub fn normalize_patch(patch: &[f64]) -> Vec<f64> {
    if patch.is_empty() {
        return Vec::new();
    }
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    patch.iter().map(|v| (v - mean) / sd).collect()
}
