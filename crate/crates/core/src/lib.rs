//! Coordinated transmit beamforming for networked integrated sensing and
//! communication: multi-cell downlink beams and dedicated sensing signals
//! designed jointly to maximize the worst-case target detection probability
//! under per-user SINR and per-BS power constraints.

pub mod beamform;
pub mod channel;
pub mod conic;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod harness;

pub use beamform::{design, rank_one_extract, solve_scheme, solve_variant, Design, ProblemVariant, Scheme, SdrSolution};
pub use channel::{build_channels, default_paper_scene, ChannelSet, PaperScene, Scene};
pub use conic::{ConicProgram, SolveReport, SolveStatus};
pub use detection::{BeamSolution, DetectorSpec, Receiver, Residuals, Scenario};
pub use error::{IsacError, Result};
pub use geometry::{ArraySpec, CMatrix, CVector, Point2D};
pub use harness::{run_sweep, SweepParam, SweepRow, SweepSpec};
