use ndarray::Array2;

use super::InputMode;
use crate::signal::{normalize_patch, SampledSignal, BREATH_FS, HEART_FS};
use crate::{Error, Result, EPOCH_SECONDS};

/// Samples per epoch of the 10 Hz heart waveform.
pub const HEART_PATCH_LEN: usize = 300;
/// Samples per epoch of the 5 Hz breathing waveform.
pub const BREATH_PATCH_LEN: usize = 150;
/// Rate series are sampled once per second.
pub const RATE_FS: f64 = 1.0;
pub const RATE_PATCH_LEN: usize = 30;

/// Per-epoch patches, one column per epoch, each column normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchedInputs {
    pub mode: InputMode,
    /// `[heart_patch_len, n]`: heart waveform or heart rate.
    pub heart: Array2<f32>,
    /// `[breath_patch_len, n]`: breathing waveform or breathing rate.
    pub breath: Array2<f32>,
}

impl PatchedInputs {
    pub fn new(mode: InputMode, heart: Array2<f32>, breath: Array2<f32>) -> Result<Self> {
        if heart.nrows() != mode.heart_patch_len() || breath.nrows() != mode.breath_patch_len() {
            return Err(Error::Shape(format!(
                "{mode} patches need {} and {} rows, got {} and {}",
                mode.heart_patch_len(),
                mode.breath_patch_len(),
                heart.nrows(),
                breath.nrows()
            )));
        }
        if heart.ncols() != breath.ncols() {
            return Err(Error::Shape(format!(
                "{} heart patches but {} breathing patches",
                heart.ncols(),
                breath.ncols()
            )));
        }
        Ok(Self {
            mode,
            heart,
            breath,
        })
    }

    /// Number of epochs.
    pub fn n(&self) -> usize {
        self.heart.ncols()
    }

    pub fn x_hw(&self) -> Option<&Array2<f32>> {
        (!self.mode.heart_is_rate()).then_some(&self.heart)
    }

    pub fn x_hr(&self) -> Option<&Array2<f32>> {
        self.mode.heart_is_rate().then_some(&self.heart)
    }

    pub fn x_bw(&self) -> Option<&Array2<f32>> {
        (!self.mode.breath_is_rate()).then_some(&self.breath)
    }

    pub fn x_br(&self) -> Option<&Array2<f32>> {
        self.mode.breath_is_rate().then_some(&self.breath)
    }

    /// Epochs `start..start + len`, right-padded with zero patches when the
    /// range runs past the end. Also returns the validity mask.
    pub fn window(&self, start: usize, len: usize) -> (PatchedInputs, Vec<bool>) {
        let n = self.n();
        let take = n.saturating_sub(start).min(len);
        let mut heart = Array2::zeros((self.heart.nrows(), len));
        let mut breath = Array2::zeros((self.breath.nrows(), len));
        heart
            .slice_mut(ndarray::s![.., ..take])
            .assign(&self.heart.slice(ndarray::s![.., start..start + take]));
        breath
            .slice_mut(ndarray::s![.., ..take])
            .assign(&self.breath.slice(ndarray::s![.., start..start + take]));
        let mask = (0..len).map(|i| i < take).collect();
        (
            PatchedInputs {
                mode: self.mode,
                heart,
                breath,
            },
            mask,
        )
    }
}

fn expected_fs(is_rate: bool, wave_fs: f64) -> f64 {
    if is_rate {
        RATE_FS
    } else {
        wave_fs
    }
}

fn patches(sig: &SampledSignal, len: usize, n: usize) -> Array2<f32> {
    let mut out = Array2::zeros((len, n));
    for j in 0..n {
        let col = normalize_patch(&sig.samples[j * len..(j + 1) * len]);
        for (i, v) in col.into_iter().enumerate() {
            out[[i, j]] = v as f32;
        }
    }
    out
}

/// Splits the heart and breathing inputs into non-overlapping 30-second
/// patches aligned to epoch boundaries. A trailing partial epoch is
/// dropped; the two inputs may differ in duration by less than one epoch.
pub fn patchify(
    heart: &SampledSignal,
    breath: &SampledSignal,
    mode: InputMode,
) -> Result<PatchedInputs> {
    let fs_h = expected_fs(mode.heart_is_rate(), HEART_FS);
    let fs_b = expected_fs(mode.breath_is_rate(), BREATH_FS);
    if (heart.fs - fs_h).abs() > 1e-9 || (breath.fs - fs_b).abs() > 1e-9 {
        return Err(Error::InvalidSignal(format!(
            "{mode} expects heart at {fs_h} Hz and breathing at {fs_b} Hz, got {} and {}",
            heart.fs, breath.fs
        )));
    }
    let (dh, db) = (heart.duration(), breath.duration());
    if (dh - db).abs() >= EPOCH_SECONDS {
        return Err(Error::InvalidSignal(format!(
            "heart lasts {dh} s but breathing lasts {db} s"
        )));
    }
    let n = (heart.len() / mode.heart_patch_len()).min(breath.len() / mode.breath_patch_len());
    if n == 0 {
        return Err(Error::InvalidSignal(
            "inputs are shorter than one 30-second epoch".into(),
        ));
    }
    Ok(PatchedInputs {
        mode,
        heart: patches(heart, mode.heart_patch_len(), n),
        breath: patches(breath, mode.breath_patch_len(), n),
    })
}
