//! Localized Hughes model for pedestrian crowds.
//!
//! Pedestrians compute exit potentials from the density they can see inside a
//! vision disc of diameter `L` and price the hidden remainder of the domain at a
//! constant density. Per-exit potentials are turned into a conviction field,
//! smoothed by a density-weighted consensus convolution and a smoothed
//! projection, and drive either a finite-volume density solver ([`macroscopic`])
//! or a particle ensemble ([`micro`]).
//!
//! Data-parallel loops (observer solves, convolutions, particle updates) run on
//! rayon when the `rayon` feature is enabled and fall back to plain iterators
//! otherwise; see [`par`].

pub mod direction;
pub mod eikonal;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod macroscopic;
pub mod micro;
pub mod par;
pub mod pipeline;
pub mod verify;

pub use error::{Error, Result};
