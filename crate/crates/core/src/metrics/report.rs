//! Evaluation report assembled from pairs of hypnograms.

use serde::{Deserialize, Serialize};

use super::{agreement, kappa_fragmentation_total, Hypnogram, Strategy, FRAGMENTATION_WINDOW};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

/// Everything `eval` writes to `report.json`. Undefined statistics are
/// serialised as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub classes: Vec<String>,
    pub n_recordings: usize,
    pub n_epochs: u64,
    /// Rows are reference (scorer) classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub kappa_total: Option<f64>,
    pub kappa_mean: Option<f64>,
    pub acc_total: Option<f64>,
    pub acc_mean: Option<f64>,
    pub kappa_fragmentation: Option<f64>,
    pub per_recording_kappa: Vec<Option<f64>>,
    pub excluded_from_kappa_mean: usize,
    pub per_class: Vec<ClassScores>,
}

/// Builds the report for `(reference, predicted)` pairs, all under `strategy`.
pub fn evaluate(pairs: &[(Hypnogram, Hypnogram)], strategy: Strategy) -> Result<EvalReport> {
    if let Some((r, _)) = pairs
        .iter()
        .find(|(r, p)| r.strategy != strategy || p.strategy != strategy)
    {
        return Err(Error::Config(format!(
            "hypnogram under {} evaluated as {strategy}",
            r.strategy
        )));
    }
    let a = agreement(pairs)?;
    let recall = a.confusion.recall();
    let precision = a.confusion.precision();
    let per_class = strategy
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| ClassScores {
            label: l.to_string(),
            recall: recall[i],
            precision: precision[i],
        })
        .collect();
    Ok(EvalReport {
        strategy: strategy.name().to_string(),
        classes: strategy.labels().iter().map(|s| s.to_string()).collect(),
        n_recordings: pairs.len(),
        n_epochs: a.confusion.total(),
        confusion: a.confusion.rows(),
        kappa_total: a.kappa_total,
        kappa_mean: a.kappa_mean,
        acc_total: a.acc_total,
        acc_mean: a.acc_mean,
        kappa_fragmentation: kappa_fragmentation_total(pairs, FRAGMENTATION_WINDOW).ok(),
        per_recording_kappa: a.per_recording_kappa,
        excluded_from_kappa_mean: a.excluded_from_kappa_mean,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_report() {
        let h = Hypnogram::from_labels(&["W", "W", "N1/N2", "N3", "REM", "W"], Strategy::FourClass)
            .unwrap();
        let r = evaluate(
            &[(h.clone(), h.clone()), (h.clone(), h)],
            Strategy::FourClass,
        )
        .unwrap();
        assert_eq!(r.kappa_total, Some(1.0));
        assert_eq!(r.kappa_mean, Some(1.0));
        assert_eq!(r.acc_total, Some(1.0));
        assert_eq!(r.acc_mean, Some(1.0));
        assert_eq!(r.kappa_fragmentation, Some(1.0));
        assert_eq!(r.confusion.len(), 4);
        assert_eq!(r.n_epochs, 12);
    }

    #[test]
    fn undefined_values_serialise_as_null() {
        let h = Hypnogram::from_labels(&["N3", "N3"], Strategy::FourClass).unwrap();
        let r = evaluate(&[(h.clone(), h)], Strategy::FourClass).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"kappa_total\":null"));
        assert!(json.contains("\"kappa_fragmentation\":null"));
    }

    #[test]
    fn strategy_mismatch_is_rejected() {
        let h = Hypnogram::from_labels(&["W"], Strategy::FiveClass).unwrap();
        assert!(evaluate(&[(h.clone(), h)], Strategy::FourClass).is_err());
    }
}
