//! The patch-encoder transformer.
//!
//! Each 30-second epoch of the heart and breathing inputs is encoded
//! independently into a feature vector (a small residual 1-D CNN for
//! waveforms, a linear map for rate series). The concatenated features get
//! sinusoidal positions added and pass through a pre-norm transformer
//! encoder, whose outputs are classified epoch by epoch by a linear head.

mod checkpoint;
mod network;
mod params;
mod patch;

use std::fmt;
use std::str::FromStr;

use crate::config::ConfigFile;
use crate::{Error, Result};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{sinusoidal_positions, Batch, BnUpdate, ForwardOutput, Inference, Model, Pass};
pub use params::{ParamStore, Tensor, TensorKind};
pub use patch::{
    patchify, PatchedInputs, BREATH_PATCH_LEN, HEART_PATCH_LEN, RATE_FS, RATE_PATCH_LEN,
};

/// Which representation feeds each branch of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputMode {
    /// Heart waveform and breathing waveform.
    HwBw,
    /// Heart rate and breathing rate.
    HrBr,
    HwBr,
    HrBw,
}

impl InputMode {
    pub const ALL: [InputMode; 4] = [
        InputMode::HwBw,
        InputMode::HrBr,
        InputMode::HwBr,
        InputMode::HrBw,
    ];

    pub fn heart_is_rate(self) -> bool {
        matches!(self, InputMode::HrBr | InputMode::HrBw)
    }

    pub fn breath_is_rate(self) -> bool {
        matches!(self, InputMode::HrBr | InputMode::HwBr)
    }

    /// Samples per epoch on the heart branch.
    pub fn heart_patch_len(self) -> usize {
        if self.heart_is_rate() {
            RATE_PATCH_LEN
        } else {
            HEART_PATCH_LEN
        }
    }

    pub fn breath_patch_len(self) -> usize {
        if self.breath_is_rate() {
            RATE_PATCH_LEN
        } else {
            BREATH_PATCH_LEN
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputMode::HwBw => "HW+BW",
            InputMode::HrBr => "HR+BR",
            InputMode::HwBr => "HW+BR",
            InputMode::HrBw => "HR+BW",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        InputMode::ALL
            .into_iter()
            .find(|m| m.name() == up)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown input mode `{s}` (expected HW+BW, HR+BR, HW+BR or HR+BW)"
                ))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub mlp_dim: usize,
    pub d_hw: usize,
    pub d_bw: usize,
    /// Sequence length in epochs the model is trained on.
    pub seq_len: usize,
    pub n_classes: usize,
    pub input_mode: InputMode,
    /// Channels of the stem convolution and the first residual block.
    pub stem_channels: usize,
    /// Channels of the second residual block.
    pub wide_channels: usize,
    /// Add sinusoidal position encodings before the first layer.
    pub positions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            n_heads: 8,
            dropout: 0.1,
            mlp_dim: 512,
            d_hw: 64,
            d_bw: 64,
            seq_len: 240,
            n_classes: 4,
            input_mode: InputMode::HwBw,
            stem_channels: 32,
            wide_channels: 64,
            positions: true,
        }
    }
}

const KEYS: &[&str] = &[
    "n_layers",
    "n_heads",
    "dropout",
    "mlp_dim",
    "d_hw",
    "d_bw",
    "seq_len",
    "n_classes",
    "input_mode",
    "stem_channels",
    "wide_channels",
    "positions",
];

impl ModelConfig {
    /// Width of the transformer, `d_hw + d_bw`.
    pub fn d_model(&self) -> usize {
        self.d_hw + self.d_bw
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_heads == 0 || !self.d_model().is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_hw + d_bw = {} is not divisible by n_heads = {}",
                self.d_model(),
                self.n_heads
            ));
        }
        if !self.d_model().is_multiple_of(2) {
            return bad("d_hw + d_bw must be even for sinusoidal positions".into());
        }
        if self.seq_len == 0 {
            return bad("seq_len must be at least 1".into());
        }
        if !(2..=5).contains(&self.n_classes) {
            return bad(format!("n_classes = {} must be in 2..=5", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout = {} must be in [0, 1)", self.dropout));
        }
        if self.d_hw == 0
            || self.d_bw == 0
            || self.mlp_dim == 0
            || self.stem_channels == 0
            || self.wide_channels == 0
        {
            return bad("dimensions must be positive".into());
        }
        Ok(())
    }

    /// Reads keys from `section`, starting from the defaults.
    pub fn from_config(cfg: &ConfigFile, section: &str) -> Result<Self> {
        cfg.check_known(section, KEYS)?;
        let mut c = Self::default();
        cfg.read_into(section, "n_layers", &mut c.n_layers)?;
        cfg.read_into(section, "n_heads", &mut c.n_heads)?;
        cfg.read_into(section, "dropout", &mut c.dropout)?;
        cfg.read_into(section, "mlp_dim", &mut c.mlp_dim)?;
        cfg.read_into(section, "d_hw", &mut c.d_hw)?;
        cfg.read_into(section, "d_bw", &mut c.d_bw)?;
        cfg.read_into(section, "seq_len", &mut c.seq_len)?;
        cfg.read_into(section, "n_classes", &mut c.n_classes)?;
        cfg.read_into(section, "input_mode", &mut c.input_mode)?;
        cfg.read_into(section, "stem_channels", &mut c.stem_channels)?;
        cfg.read_into(section, "wide_channels", &mut c.wide_channels)?;
        cfg.read_into(section, "positions", &mut c.positions)?;
        c.validate()?;
        Ok(c)
    }

    /// Writes every key into `section`.
    pub fn write_config(&self, cfg: &mut ConfigFile, section: &str) {
        cfg.set(section, "n_layers", self.n_layers);
        cfg.set(section, "n_heads", self.n_heads);
        cfg.set(section, "dropout", self.dropout);
        cfg.set(section, "mlp_dim", self.mlp_dim);
        cfg.set(section, "d_hw", self.d_hw);
        cfg.set(section, "d_bw", self.d_bw);
        cfg.set(section, "seq_len", self.seq_len);
        cfg.set(section, "n_classes", self.n_classes);
        cfg.set(section, "input_mode", self.input_mode);
        cfg.set(section, "stem_channels", self.stem_channels);
        cfg.set(section, "wide_channels", self.wide_channels);
        cfg.set(section, "positions", self.positions);
    }
}
