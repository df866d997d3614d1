//! Rater-effects measurement for person × item × rater score data.
//!
//! The crate ingests long-format rating files into a [`RatingsTensor`],
//! computes weighted kappa and Cronbach alpha, fits the rating-scale
//! many-facet Rasch model by joint maximum likelihood, derives infit and
//! outfit mean squares, builds averaged ensemble raters, simulates data
//! from the model and renders Wright maps and measure tables.

pub mod agreement;
pub mod ensemble;
pub mod error;
pub mod estimate;
pub mod fit;
pub mod idlist;
pub mod model;
pub mod ratings;
pub mod report;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use estimate::{estimate, EstimationConfig, FacetEstimates};
pub use model::ModelParams;
pub use ratings::{Facet, FacetIds, RatingsTensor, ScaleSpec};
