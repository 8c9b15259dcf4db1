//! Applying the fixed-length model to whole nights.
//!
//! The model is run on overlapping windows. Per-epoch classes are the mode
//! of the votes of every covering window; per-epoch features come from the
//! covering window whose centre is closest to the epoch.

use ndarray::Array2;
use rayon::prelude::*;

use crate::metrics::{Hypnogram, Strategy};
use crate::model::{Inference, Model, PatchedInputs};
use crate::{Error, Result, Scalar};

/// Default step between window starts: 60 epochs (30 minutes).
pub const DEFAULT_STEP_EPOCHS: usize = 60;

/// Window placement over a recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingPlan {
    pub total_epochs: usize,
    pub window_epochs: usize,
    pub step_epochs: usize,
    pub window_starts: Vec<usize>,
}

/// Window starts `0, step, 2 step, …` while the window fits, plus a final
/// window ending at the last epoch when that is not already a start. A
/// recording no longer than one window gets a single window at 0.
pub fn window_starts(total: usize, window: usize, step: usize) -> Vec<usize> {
    if total <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|s| s + window <= total)
        .collect();
    let last = total - window;
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

pub fn plan_tiling(
    total_epochs: usize,
    window_epochs: usize,
    step_epochs: usize,
) -> Result<TilingPlan> {
    if total_epochs == 0 || window_epochs == 0 || step_epochs == 0 {
        return Err(Error::Config(format!(
            "tiling needs positive sizes (total {total_epochs}, window {window_epochs}, step {step_epochs})"
        )));
    }
    if step_epochs > window_epochs {
        return Err(Error::Config(format!(
            "tiling step {step_epochs} exceeds window {window_epochs} and would leave epochs uncovered"
        )));
    }
    Ok(TilingPlan {
        total_epochs,
        window_epochs,
        step_epochs,
        window_starts: window_starts(total_epochs, window_epochs, step_epochs),
    })
}

impl TilingPlan {
    pub fn n_windows(&self) -> usize {
        self.window_starts.len()
    }

    /// Number of real (unpadded) epochs in window `w`.
    pub fn window_len(&self, w: usize) -> usize {
        (self.total_epochs - self.window_starts[w]).min(self.window_epochs)
    }

    pub fn covers(&self, w: usize, t: usize) -> bool {
        let s = self.window_starts[w];
        t >= s && t < s + self.window_len(w)
    }

    /// Covering window whose centre `start + window/2` is closest to `t`;
    /// the earlier window wins ties.
    pub fn nearest_center(&self, t: usize) -> usize {
        let mut best = None;
        let mut best_dist = i64::MAX;
        for w in 0..self.n_windows() {
            if !self.covers(w, t) {
                continue;
            }
            // Twice the distance, to stay in integers for odd windows.
            let dist =
                (2 * t as i64 - (2 * self.window_starts[w] + self.window_epochs) as i64).abs();
            if dist < best_dist {
                best_dist = dist;
                best = Some(w);
            }
        }
        best.expect("every epoch is covered")
    }
}

/// Modal class per epoch. `window_classes[w][j]` is the class window `w`
/// assigns to epoch `start_w + j`; entries past the recording end are
/// ignored. Ties go to the tied class voted for by the earliest-starting
/// window.
pub fn fold_votes(
    plan: &TilingPlan,
    window_classes: &[Vec<usize>],
    n_classes: usize,
) -> Vec<usize> {
    assert_eq!(
        window_classes.len(),
        plan.n_windows(),
        "one class row per window"
    );
    let mut out = Vec::with_capacity(plan.total_epochs);
    let mut counts = vec![0usize; n_classes];
    let mut votes = Vec::new();
    for t in 0..plan.total_epochs {
        counts.iter_mut().for_each(|c| *c = 0);
        votes.clear();
        for (w, classes) in window_classes.iter().enumerate() {
            if plan.covers(w, t) {
                let c = classes[t - plan.window_starts[w]];
                counts[c] += 1;
                votes.push(c);
            }
        }
        let top = *counts.iter().max().unwrap();
        let winner = votes
            .iter()
            .copied()
            .find(|&c| counts[c] == top)
            .expect("at least one vote");
        out.push(winner);
    }
    out
}

/// Per-epoch columns taken from the nearest-centre window.
pub fn select_columns<T: Clone + num_traits::Zero>(
    plan: &TilingPlan,
    window_values: &[Array2<T>],
) -> Array2<T> {
    assert_eq!(
        window_values.len(),
        plan.n_windows(),
        "one matrix per window"
    );
    let rows = window_values[0].nrows();
    let mut out = Array2::zeros((rows, plan.total_epochs));
    for t in 0..plan.total_epochs {
        let w = plan.nearest_center(t);
        out.column_mut(t)
            .assign(&window_values[w].column(t - plan.window_starts[w]));
    }
    out
}

/// Model outputs for every window of a plan.
#[derive(Debug, Clone)]
pub struct LongInference<T> {
    pub plan: TilingPlan,
    pub windows: Vec<Inference<T>>,
    pub n_classes: usize,
}

impl<T: Scalar> LongInference<T> {
    /// Modal-vote classes per epoch.
    pub fn classes(&self) -> Vec<usize> {
        let per_window: Vec<Vec<usize>> = self.windows.iter().map(Inference::argmax).collect();
        fold_votes(&self.plan, &per_window, self.n_classes)
    }

    /// Nearest-centre transformer features, `[d_model, total_epochs]`.
    pub fn features(&self) -> Array2<T> {
        let f: Vec<Array2<T>> = self.windows.iter().map(|i| i.features.clone()).collect();
        select_columns(&self.plan, &f)
    }

    /// Nearest-centre class probabilities, `[n_classes, total_epochs]`.
    pub fn probs(&self) -> Array2<T> {
        let p: Vec<Array2<T>> = self.windows.iter().map(|i| i.probs.clone()).collect();
        select_columns(&self.plan, &p)
    }
}

/// Runs the model on every window of `inputs`. Windows are the model's
/// training length; a recording shorter than that is zero-padded.
pub fn infer_long<T: Scalar>(
    model: &Model<T>,
    inputs: &PatchedInputs,
    step_epochs: usize,
) -> Result<LongInference<T>> {
    let plan = plan_tiling(inputs.n(), model.config.seq_len, step_epochs)?;
    let windows = plan
        .window_starts
        .par_iter()
        .map(|&s| model.infer(&inputs.window(s, plan.window_epochs).0))
        .collect::<Result<Vec<_>>>()?;
    Ok(LongInference {
        plan,
        windows,
        n_classes: model.config.n_classes,
    })
}

/// Modal-vote hypnogram for a whole recording.
pub fn classify_long<T: Scalar>(
    model: &Model<T>,
    inputs: &PatchedInputs,
    step_epochs: usize,
) -> Result<Hypnogram> {
    let long = infer_long(model, inputs, step_epochs)?;
    Hypnogram::new(
        long.classes(),
        Strategy::for_classes(model.config.n_classes)?,
    )
}

/// Nearest-centre feature sequence `[d_model, total_epochs]`.
pub fn extract_features_long<T: Scalar>(
    model: &Model<T>,
    inputs: &PatchedInputs,
    step_epochs: usize,
) -> Result<Array2<T>> {
    Ok(infer_long(model, inputs, step_epochs)?.features())
}
