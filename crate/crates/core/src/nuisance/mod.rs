//! Nuisance estimation: the propensity score `e_n(X)` and the outcome
//! regression `Qbar_n(Z, X)`.

mod cv;
mod outcome;
mod propensity;

pub use cv::stratified_folds;
pub use outcome::{fit_outcome, OutcomeConfig, OutcomeKind, OutcomeModel};
pub use propensity::{
    fit_propensity, truncate, undersmooth_select, PropensityConfig, PropensityKind,
    PropensityModel, Selection, SelectionKind, UndersmoothDiagnostics,
};

/// Default positivity truncation level.
pub const DEFAULT_DELTA: f64 = 0.01;
