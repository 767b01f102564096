//! Multi-scale space-time Geyer saturation point processes: simulation and
//! estimation.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod glm;
pub mod inference;
pub mod io;
pub mod model;
pub mod quadrature;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use geometry::{EventPoint, NeighborIndex, PointPattern, SpacetimeWindow};
pub use model::{GeyerModel, ScaleComponent, ScaleShape, TrendFunction};

pub use nalgebra;
