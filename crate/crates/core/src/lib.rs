//! Matrix-free wavelet-based atmospheric tomography.
//!
//! The solver works on wavelet coefficients of a stack of turbulent layers.
//! Measurements come from Shack-Hartmann sensors looking through the layers
//! towards natural or laser guide stars; the reconstruction is projected
//! onto deformable mirrors conjugated to the layers.

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod pcg;
pub mod presets;
pub mod reconstructor;
pub mod sim;
pub mod verify;
pub mod wavelet;

pub use bench::{SweepParam, SweepSpec};
pub use config::{load_config, GuideStar, LoopMode, StarKind, SystemGeometry, WfsConfig};
pub use data::{LayerStack, MeasurementSet, MirrorShapes, WaveletCoefficients};
pub use error::{Error, Result};
pub use operators::TomoOperators;
pub use pcg::{pcg_continue, pcg_solve, LinearOperator, PcgCarry, PcgOptions, PcgOutcome};
pub use reconstructor::{warm_restart_reset, Reconstructor, ReconstructorState, StepOutput, StepTelemetry};
pub use sim::{run_closed_loop, ClosedLoopRun, QualityRecord, SimSeeds};
pub use verify::{run_verification, VerifyOptions, VerifyReport};
pub use wavelet::Wavelet;
