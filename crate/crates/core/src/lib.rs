//! Differentiable fuzzy-logic constraints for refining weak segmentation labels.
//!
//! ```
//! use fuzzyseg::constraints::{build_bboxes_tight, BoundingBox};
//! use fuzzyseg::fuzzy::Objective;
//! use fuzzyseg::refine::{refine, RefineConfig};
//! use fuzzyseg::{LogitField, Shape};
//!
//! # fn main() -> fuzzyseg::Result<()> {
//! let shape = Shape::new(8, 8, 2);
//! let formula = build_bboxes_tight(&[BoundingBox::new(2, 2, 5, 5, 1)?]);
//! let init = LogitField::zeros(shape)?;
//! let cfg = RefineConfig { learning_rate: 0.05, ..Default::default() };
//! let (logits, trace) = refine(&init, &formula, &cfg)?;
//! assert!(trace.last().unwrap().loss < trace.first().unwrap().loss);
//!
//! // loss and gradient for logits held in another tensor library
//! let objective = Objective::new(&formula, shape)?;
//! let (loss, grad) = objective.loss_and_grad_flat(logits.data())?;
//! assert_eq!(grad.len(), shape.len());
//! assert!(loss.is_finite());
//! # Ok(())
//! # }
//! ```

pub mod annotations;
pub mod constraints;
pub mod error;
pub mod formula;
pub mod fuzzy;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod refine;
pub mod superpixels;
pub mod synthetic;

pub use error::{Error, Result};
pub use formula::{Family, Formula, Label};
pub use grid::{LabelMap, LogProb, LogitField, ProbField, Shape};
