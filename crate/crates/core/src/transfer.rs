//! Transfer head inputs: frozen per-epoch transformer features, optionally
//! joined with motion features, as rows for the random forest.

use ndarray::{concatenate, Array2, Axis};

use crate::forest::Dataset;
use crate::metrics::Hypnogram;
use crate::motion::MotionGrid;
use crate::{Error, Result};

/// CSV of a `D × N` feature matrix: one row per epoch, columns
/// `epoch,z0..z{D-1}`. Values use the shortest representation that
/// round-trips.
pub fn features_to_csv(z: &Array2<f32>) -> String {
    let mut out = String::from("epoch");
    for d in 0..z.nrows() {
        out.push_str(&format!(",z{d}"));
    }
    out.push('\n');
    for (e, col) in z.columns().into_iter().enumerate() {
        out.push_str(&e.to_string());
        for v in col {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Array2<f32>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty feature table".into()))?;
    let d = header.split(',').count() - 1;
    if !header.starts_with("epoch") {
        return Err(Error::Format(
            "feature table must start with an `epoch` column".into(),
        ));
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let epoch: usize = cells
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("feature row {}: bad epoch", i + 1)))?;
        if epoch != n {
            return Err(Error::Format(format!(
                "feature row {}: epoch {epoch} out of order",
                i + 1
            )));
        }
        let row: Vec<f32> = cells
            .map(|c| {
                c.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("feature row {}: bad value `{c}`", i + 1)))
            })
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(Error::Format(format!(
                "feature row {} has {} values, expected {d}",
                i + 1,
                row.len()
            )));
        }
        values.extend(row);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, d), values)
        .expect("row lengths checked")
        .reversed_axes()
        .as_standard_layout()
        .to_owned())
}

/// Rows are epochs, columns the `D` transformer features followed by the
/// motion features when given.
pub fn design_matrix(features: &Array2<f32>, motion: Option<&MotionGrid>) -> Result<Array2<f64>> {
    let z = features.t().mapv(f64::from);
    match motion {
        None => Ok(z),
        Some(m) if m.n_epochs() != z.nrows() => Err(Error::Shape(format!(
            "{} epochs of features but {} of motion features",
            z.nrows(),
            m.n_epochs()
        ))),
        Some(m) => Ok(concatenate(Axis(1), &[z.view(), m.values.t()]).expect("row counts checked")),
    }
}

/// Column names matching [`design_matrix`].
pub fn design_columns(d: usize, motion: Option<&MotionGrid>) -> Vec<String> {
    let mut names: Vec<String> = (0..d).map(|i| format!("z{i}")).collect();
    if let Some(m) = motion {
        names.extend(m.names.iter().cloned());
    }
    names
}

/// Labelled rows of one recording.
pub fn transfer_dataset(
    features: &Array2<f32>,
    motion: Option<&MotionGrid>,
    labels: &Hypnogram,
) -> Result<Dataset> {
    let x = design_matrix(features, motion)?;
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    Dataset::new(x, labels.stages.clone(), labels.strategy.n_classes())
}
