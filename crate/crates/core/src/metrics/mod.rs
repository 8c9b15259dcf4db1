//! Agreement metrics between model and scorer hypnograms.

mod agreement;
mod report;
mod stages;

pub use agreement::{
    acc_mean, acc_total, agreement, confusion, fragmentation_confusion, fragmentation_mask, kappa,
    kappa_fragmentation, kappa_fragmentation_total, kappa_mean, kappa_total, Agreement,
    ConfusionMatrix,
};
pub use report::{evaluate, ClassScores, EvalReport};
pub use stages::{map_stages, Hypnogram, Strategy};

/// Neighbourhood, in epochs, used by the fragmentation kappa.
pub const FRAGMENTATION_WINDOW: usize = 2;
