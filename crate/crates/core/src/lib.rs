//! Compiles sketch-extrude CAD sequences into UI action programs, runs them
//! in a deterministic headless CAD simulator and derives episodes, metrics
//! and visual questions from the results.

pub mod action;
pub mod compiler;
pub mod dataset;
pub mod geometry;
pub mod kernel;
pub mod metrics;
pub mod raster;
pub mod sequence;
pub mod sim;
pub mod synth;
pub mod ui;
pub mod vqa;

pub use action::{decode_action, encode_action, Action, ActionProgram, ActionVector, Command, HlTag, KeyId};
pub use compiler::{compile, compile_sequence, CompileConfig, CompileError};
pub use dataset::{cmd_build, cmd_eval, cmd_stats, BuildConfig, BuildSummary, DatasetError, EpisodeManifest};
pub use geometry::{lower_sequence, ExtrudeParams, GeometryError, LoweredRecord, PixelPoint, PlaneId};
pub use kernel::{build_solid, KernelError, PointCloud, Solid};
pub use metrics::{chamfer, quality_filter, FilterConfig, MetricsError, Verdict, SUCCESS_CD};
pub use raster::GrayImage;
pub use sequence::{parse_file, parse_sequence, validate, CadSequence, ParseError};
pub use sim::{run, EpisodeTrace, SimConfig, SimState, Status};
pub use vqa::{cmd_vqa, generate, grade, verify, Audit, Family, Question, VqaEpisode, VqaError};
