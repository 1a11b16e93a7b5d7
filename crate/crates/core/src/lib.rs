//! Pose graph optimization by iterated linear least squares.
//!
//! A pose graph holds `n + 1` poses (rotation `R_i`, position `p_i`) and `m`
//! relative measurements `(Z, d)` with scalar weights `(ω, λ)`. The estimate
//! minimizes
//!
//! ```text
//! Σ_k λ_k ‖d_k − R_i (p_j − p_i)‖² + ω_k ‖Z_k − R_j R_iᵀ‖_F²
//! ```
//!
//! with vertex 0 held at the identity and the origin. Two solvers are provided:
//!
//! * [`alg1_solve`] refines rotations alone by repeated linear solves on the
//!   graph Laplacian, then recovers positions in closed form.
//! * [`alg2_solve`] linearizes rotation corrections and positions together.
//!
//! Both start from [`chordal_init`].
//!
//! ```
//! use pgo_rls::{alg1_solve, generate, GenerateOptions, Shape, SolverOptions};
//!
//! let gen = generate(&GenerateOptions {
//!     shape: Shape::Grid3d { nx: 2, ny: 2, nz: 2 },
//!     loop_closures: true,
//!     seed: 7,
//! })?;
//! let (estimate, report) = alg1_solve(&gen.graph, &SolverOptions::default())?;
//! assert!(report.final_cost < 1e-9);
//! assert_eq!(estimate.len(), 8);
//! # Ok::<(), pgo_rls::PgoError>(())
//! ```

pub mod chordal;
pub mod diagnostics;
pub mod error;
pub mod full;
pub mod g2o;
pub mod graph;
pub mod orient;
pub mod report;
pub mod so3;
pub mod sparse;
pub mod synth;

pub use chordal::{chordal_init, chordal_init_with, ChordalOptions};
pub use diagnostics::{compute_am, compute_cm, compute_em, BasinReport};
pub use error::{PgoError, Result};
pub use full::{alg2_solve, StackedWeighting};
pub use g2o::{parse_g2o, write_g2o, WeightReduction};
pub use graph::{build_reduced_incidence, pgo_cost, Edge, PoseEstimate, PoseGraph};
pub use orient::{alg1_solve, recover_positions, DeltaTable};
pub use report::{Method, SolveReport, SolverOptions, Termination};
pub use so3::{Mat3, Rotation, Vec3};
pub use synth::{generate, perturb, GenerateOptions, NoiseSpec, Shape};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rotations.md")]
    mod rotations {}
    #[doc = include_str!("../../../book/src/pose-graphs.md")]
    mod pose_graphs {}
    #[doc = include_str!("../../../book/src/chordal.md")]
    mod chordal {}
    #[doc = include_str!("../../../book/src/orientation-solver.md")]
    mod orientation_solver {}
    #[doc = include_str!("../../../book/src/full-solver.md")]
    mod full_solver {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
