//! Detector-side tube toolkit for spatio-temporal video grounding.
//!
//! The numeric modules are generic over the [`Scalar`] type (`f32` or `f64`);
//! the aliases below pin them to double precision, which is what the
//! simulator, the file formats and the command-line tool use.

pub mod assignment;
pub mod association;
pub mod autolabel;
pub mod error;
pub mod exposure;
pub mod geometry;
pub mod grounding_eval;
pub mod mining;
pub mod scalar;
pub mod simulator;
pub mod ttreg;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type BoundingBox = geometry::BBox<f64>;
pub type CenterSizeBox = geometry::CenterSize<f64>;
pub type Costs = assignment::CostMatrix<f64>;
pub type Tube = association::Tube<f64>;
pub type Frame = association::FrameDetections<f64>;
pub type GtTube = mining::GtTube<f64>;
pub type MinedTube = ttreg::MinedTube<f64>;
pub type Prediction = grounding_eval::Prediction<f64>;
pub type CandidateTube = autolabel::CandidateTube<f64>;
