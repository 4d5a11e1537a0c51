//! Detection, testing and dating of multiple structural breaks in large panels
//! with interactive effects, using cross-section-average (CCE) defactoring.

pub mod cli;
pub mod defactor;
pub mod error;
pub mod inference;
pub mod estimator;
pub mod ingest;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod search;
pub mod simlab;

pub use error::{Error, ErrorCategory, Result};
pub use panel::{BreakSet, PanelDataset, PanelParts, Trimming};
