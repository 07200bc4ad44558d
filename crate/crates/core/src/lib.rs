//! Saddle-point search and solution-landscape construction with the
//! improved high-index saddle dynamics: a crossover from gradient flow to
//! reflected-gradient dynamics, driven by a mixing ratio `alpha` that rises
//! from near zero to one.

pub mod dynamics;
pub mod eigen;
pub mod energy;
pub mod error;
pub mod landscape;
pub mod saddle;
pub mod verify;

pub use dynamics::{Direction, FlowConfig, SearchState, TerminalStatus, Trajectory};
pub use eigen::{EigenMode, EigenOptions, UnstableBasis};
pub use energy::{Butterfly, Energy, EnergyModel, ModelSpec, MorseCluster, Quadratic, Symmetry};
pub use error::{Error, Result};
pub use landscape::{build_landscape, export_graph, GraphFormat, LandscapeConfig, LandscapeGraph};
pub use saddle::{run_saddle_search, SaddleConfig, SearchResult, SearchStatus, StationaryPoint, StepPolicy};
