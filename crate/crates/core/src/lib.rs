//! High-order vertex-centred finite volumes for `-Lap u = f` on rectangles,
//! with a harness for measuring superconvergence at mesh nodes, Lobatto
//! points and Gauss points.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod fvcore;
pub mod linsolve;
pub mod meshdual;
pub mod polyquad;
pub mod study;
pub mod verify;

pub use analysis::{ConvergenceReport, ExactSolution, GradNorm, LevelErrors};
pub use fvcore::{Discretization, DualField, TrialField};
pub use linsolve::CsrMatrix;
pub use meshdual::{build_uniform_mesh, TensorMesh};
pub use polyquad::{gauss_rule, lobatto_points, QuadRule};
pub use study::{run_study, ProblemRegistry, StudyConfig};
