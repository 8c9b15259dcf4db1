//! Stage vocabularies and hypnograms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sleep-stage classification strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// W, Sleep
    SleepWake,
    /// W, NREM, REM
    WakeNremRem,
    /// W, N1/N2, N3, REM
    FourClass,
    /// W, N1, N2, N3, REM
    FiveClass,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SleepWake,
        Strategy::WakeNremRem,
        Strategy::FourClass,
        Strategy::FiveClass,
    ];

    pub fn n_classes(self) -> usize {
        self.labels().len()
    }

    /// The strategy with `n` classes.
    pub fn for_classes(n: usize) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|s| s.n_classes() == n)
            .ok_or_else(|| Error::Config(format!("no strategy has {n} classes")))
    }

    /// Class names in index order. Wake is always class 0.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Strategy::SleepWake => &["W", "Sleep"],
            Strategy::WakeNremRem => &["W", "NREM", "REM"],
            Strategy::FourClass => &["W", "N1/N2", "N3", "REM"],
            Strategy::FiveClass => &["W", "N1", "N2", "N3", "REM"],
        }
    }

    pub fn label(self, class: usize) -> &'static str {
        self.labels()[class]
    }

    pub fn class_of(self, label: &str) -> Result<usize> {
        let label = label.trim();
        self.labels()
            .iter()
            .position(|l| l.eq_ignore_ascii_case(label))
            .ok_or_else(|| Error::Label(label.to_string()))
    }

    /// Class index of a five-class AASM stage under this strategy.
    pub fn map_aasm(self, stage: usize) -> Result<usize> {
        let mapped = match (self, stage) {
            (_, s) if s >= 5 => return Err(Error::Label(format!("stage index {s}"))),
            (Strategy::FiveClass, s) => s,
            (Strategy::FourClass, 0) => 0,
            (Strategy::FourClass, 1 | 2) => 1,
            (Strategy::FourClass, 3) => 2,
            (Strategy::FourClass, _) => 3,
            (Strategy::WakeNremRem, 0) => 0,
            (Strategy::WakeNremRem, 1..=3) => 1,
            (Strategy::WakeNremRem, _) => 2,
            (Strategy::SleepWake, 0) => 0,
            (Strategy::SleepWake, _) => 1,
        };
        Ok(mapped)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SleepWake => "2class",
            Strategy::WakeNremRem => "3class",
            Strategy::FourClass => "4class",
            Strategy::FiveClass => "5class",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2" | "2class" | "sleep-wake" | "sleepwake" => Ok(Strategy::SleepWake),
            "3" | "3class" | "w-nrem-rem" | "wnremrem" => Ok(Strategy::WakeNremRem),
            "4" | "4class" | "w-n1/n2-n3-rem" => Ok(Strategy::FourClass),
            "5" | "5class" | "w-n1-n2-n3-rem" | "aasm" => Ok(Strategy::FiveClass),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Per-epoch stage labels under a strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypnogram {
    pub stages: Vec<usize>,
    pub strategy: Strategy,
}

impl Hypnogram {
    pub fn new(stages: Vec<usize>, strategy: Strategy) -> Result<Self> {
        let c = strategy.n_classes();
        if let Some(bad) = stages.iter().find(|&&s| s >= c) {
            return Err(Error::Label(format!("class {bad} under {strategy}")));
        }
        Ok(Self { stages, strategy })
    }

    pub fn from_labels<S: AsRef<str>>(labels: &[S], strategy: Strategy) -> Result<Self> {
        let stages = labels
            .iter()
            .map(|l| strategy.class_of(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages, strategy })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.stages
            .iter()
            .map(|&s| self.strategy.label(s))
            .collect()
    }

    /// `epoch_index,stage_label` lines with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch_index,stage_label\n");
        for (i, &s) in self.stages.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", self.strategy.label(s)));
        }
        out
    }

    pub fn from_csv(text: &str, strategy: Strategy) -> Result<Self> {
        let mut stages = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (line_no == 0 && line.starts_with("epoch_index")) {
                continue;
            }
            let (idx, label) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("line {}: `{line}`", line_no + 1)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad epoch index", line_no + 1)))?;
            if idx != stages.len() {
                return Err(Error::Format(format!(
                    "line {}: epoch {idx} out of order",
                    line_no + 1
                )));
            }
            stages.push(strategy.class_of(label)?);
        }
        Ok(Self { stages, strategy })
    }
}

/// Maps a five-class hypnogram to `target`.
pub fn map_stages(h: &Hypnogram, target: Strategy) -> Result<Hypnogram> {
    if h.strategy != Strategy::FiveClass {
        return Err(Error::Label(format!(
            "stage mapping needs a 5class hypnogram, got {}",
            h.strategy
        )));
    }
    let stages = h
        .stages
        .iter()
        .map(|&s| target.map_aasm(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Hypnogram {
        stages,
        strategy: target,
    })
}
