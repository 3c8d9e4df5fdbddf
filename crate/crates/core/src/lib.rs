//! Disentangled view-invariant action recognition.
//!
//! A 3D-CNN encoder feeds a transformer decoder driven by `N_a` learnable
//! action queries and a single view query. Training uses triplets of clips
//! (anchor, same-view, same-action) with action/view cross-entropy, two
//! opposing triplet-margin losses and an orthogonality penalty on the action
//! queries. A procedural multi-view video generator provides data with exact
//! action/view/subject ground truth.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod exec;
pub mod losses;
pub mod model;
pub mod optim;
pub mod splits;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
