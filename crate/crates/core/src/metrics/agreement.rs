//! Confusion matrices and Cohen's kappa.

use serde::{Deserialize, Serialize};

use super::{Hypnogram, Strategy};
use crate::{Error, Result};

/// Square count matrix; rows are the reference (scorer) class, columns the
/// predicted (model) class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        Self {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(
                "confusion matrix must be square and non-empty".into(),
            ));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.n + predicted]
    }

    pub fn add(&mut self, reference: usize, predicted: usize) {
        self.counts[reference * self.n + predicted] += 1;
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.counts[j * self.n + i] = self.get(i, j);
            }
        }
        t
    }

    /// Element-wise sum. Both matrices must have the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Shape(format!("{} vs {} classes", self.n, other.n)));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Recall of each reference class; `None` when the class never occurs.
    pub fn recall(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|i| {
                let row: u64 = (0..self.n).map(|j| self.get(i, j)).sum();
                (row > 0).then(|| self.get(i, i) as f64 / row as f64)
            })
            .collect()
    }

    /// Precision of each predicted class; `None` when never predicted.
    pub fn precision(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|j| {
                let col: u64 = (0..self.n).map(|i| self.get(i, j)).sum();
                (col > 0).then(|| self.get(j, j) as f64 / col as f64)
            })
            .collect()
    }

    /// CSV with a labelled header row and first column.
    pub fn to_csv(&self, strategy: Strategy) -> String {
        let labels = strategy.labels();
        let mut out = String::from("reference\\predicted");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.rows().iter().enumerate() {
            out.push_str(labels.get(i).copied().unwrap_or("?"));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Confusion matrix of `predicted` against `reference`.
pub fn confusion(reference: &Hypnogram, predicted: &Hypnogram) -> Result<ConfusionMatrix> {
    if reference.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "hypnogram lengths differ: {} vs {}",
            reference.len(),
            predicted.len()
        )));
    }
    if reference.strategy != predicted.strategy {
        return Err(Error::Shape(format!(
            "strategies differ: {} vs {}",
            reference.strategy, predicted.strategy
        )));
    }
    let mut m = ConfusionMatrix::zeros(reference.strategy.n_classes());
    for (&r, &p) in reference.stages.iter().zip(&predicted.stages) {
        m.add(r, p);
    }
    Ok(m)
}

/// Cohen's kappa as one minus the ratio of observed to chance-expected
/// off-diagonal mass.
///
/// Undefined (an error) for an empty matrix or when the expected
/// disagreement is zero, i.e. both raters put everything in one class.
pub fn kappa(m: &ConfusionMatrix) -> Result<f64> {
    let n = m.n_classes();
    let total = m.total() as f64;
    if total == 0.0 {
        return Err(Error::Undefined(
            "kappa of an empty confusion matrix".into(),
        ));
    }
    let row_sums: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j) as f64).sum())
        .collect();
    let col_sums: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| m.get(i, j) as f64).sum())
        .collect();
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                observed += m.get(i, j) as f64;
                expected += col_sums[j] * row_sums[i] / total;
            }
        }
    }
    if expected <= 0.0 {
        return Err(Error::Undefined(
            "kappa with zero expected disagreement".into(),
        ));
    }
    Ok(1.0 - observed / expected)
}

/// Pooled and per-recording agreement over a set of nights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub confusion: ConfusionMatrix,
    /// Kappa of the summed confusion matrix.
    pub kappa_total: Option<f64>,
    /// Unweighted mean of per-recording kappas, skipping undefined ones.
    pub kappa_mean: Option<f64>,
    pub acc_total: Option<f64>,
    pub acc_mean: Option<f64>,
    pub per_recording_kappa: Vec<Option<f64>>,
    pub excluded_from_kappa_mean: usize,
}

/// Computes total and per-night kappa and accuracy.
pub fn agreement(recordings: &[(Hypnogram, Hypnogram)]) -> Result<Agreement> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::Undefined("agreement over zero recordings".into()))?;
    let mut pooled = ConfusionMatrix::zeros(first.0.strategy.n_classes());
    let mut per_kappa = Vec::with_capacity(recordings.len());
    let mut accs = Vec::with_capacity(recordings.len());
    for (i, (reference, predicted)) in recordings.iter().enumerate() {
        let m = confusion(reference, predicted)?;
        pooled.merge(&m)?;
        let k = kappa(&m).ok();
        if k.is_none() {
            log::warn!("recording {i}: kappa undefined, excluded from the per-night mean");
        }
        per_kappa.push(k);
        if let Some(a) = m.accuracy() {
            accs.push(a);
        }
    }
    let defined: Vec<f64> = per_kappa.iter().flatten().copied().collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(Agreement {
        kappa_total: kappa(&pooled).ok(),
        kappa_mean: mean(&defined),
        acc_total: pooled.accuracy(),
        acc_mean: mean(&accs),
        excluded_from_kappa_mean: per_kappa.len() - defined.len(),
        per_recording_kappa: per_kappa,
        confusion: pooled,
    })
}

pub fn kappa_total(recordings: &[(Hypnogram, Hypnogram)]) -> Result<f64> {
    agreement(recordings)?
        .kappa_total
        .ok_or_else(|| Error::Undefined("pooled kappa".into()))
}

pub fn kappa_mean(recordings: &[(Hypnogram, Hypnogram)]) -> Result<f64> {
    agreement(recordings)?
        .kappa_mean
        .ok_or_else(|| Error::Undefined("no recording has a defined kappa".into()))
}

pub fn acc_total(recordings: &[(Hypnogram, Hypnogram)]) -> Result<f64> {
    agreement(recordings)?
        .acc_total
        .ok_or_else(|| Error::Undefined("accuracy".into()))
}

pub fn acc_mean(recordings: &[(Hypnogram, Hypnogram)]) -> Result<f64> {
    agreement(recordings)?
        .acc_mean
        .ok_or_else(|| Error::Undefined("accuracy".into()))
}

/// Epochs within `window` epochs of a transition to or from Wake in the
/// reference sequence.
pub fn fragmentation_mask(reference: &Hypnogram, window: usize) -> Vec<bool> {
    const WAKE: usize = 0;
    let y = &reference.stages;
    let n = y.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(n.saturating_sub(1));
            (lo..=hi).any(|u| (y[t] != y[u] && y[u] == WAKE) || (y[t] == WAKE && y[u] != WAKE))
        })
        .collect()
}

/// Confusion restricted to the fragmentation mask of `reference`.
pub fn fragmentation_confusion(
    reference: &Hypnogram,
    predicted: &Hypnogram,
    window: usize,
) -> Result<ConfusionMatrix> {
    let full = confusion(reference, predicted)?;
    let mut m = ConfusionMatrix::zeros(full.n_classes());
    for ((&r, &p), keep) in reference
        .stages
        .iter()
        .zip(&predicted.stages)
        .zip(fragmentation_mask(reference, window))
    {
        if keep {
            m.add(r, p);
        }
    }
    Ok(m)
}

/// Kappa over epochs near Wake transitions of the reference sequence.
pub fn kappa_fragmentation(
    reference: &Hypnogram,
    predicted: &Hypnogram,
    window: usize,
) -> Result<f64> {
    let m = fragmentation_confusion(reference, predicted, window)?;
    if m.total() == 0 {
        return Err(Error::Undefined("fragmentation mask is empty".into()));
    }
    kappa(&m)
}

/// Pooled fragmentation kappa across recordings.
pub fn kappa_fragmentation_total(
    recordings: &[(Hypnogram, Hypnogram)],
    window: usize,
) -> Result<f64> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::Undefined("fragmentation kappa over zero recordings".into()))?;
    let mut pooled = ConfusionMatrix::zeros(first.0.strategy.n_classes());
    for (r, p) in recordings {
        pooled.merge(&fragmentation_confusion(r, p, window)?)?;
    }
    if pooled.total() == 0 {
        return Err(Error::Undefined("fragmentation mask is empty".into()));
    }
    kappa(&pooled)
}
