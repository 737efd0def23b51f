//! Crossed random-effects model `y = μ + τ_word + β_model + ι_cell + ε`
//! fitted by profiled REML.

mod blups;
pub(crate) mod design;
mod fit;
pub(crate) mod pls;

pub use blups::{blup_paths, blups, blups_at, read_iota, BlupTable, CellBlup, IotaEntry};
pub use design::Design;
pub(crate) use fit::fit_design;
pub use fit::{
    deviance_at, fit, profiled_criterion, variance_proportions, Components, FitOptions, VarianceFit, COMPONENT_NAMES,
};
pub use pls::Criterion;
