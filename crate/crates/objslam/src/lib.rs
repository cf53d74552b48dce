//! Sparse object-landmark SLAM with semantics-driven place recognition and
//! decentralized multi-robot map merging.
//!
//! The library is organized around five subsystems:
//!
//! - [`geometry`]: rigid-body transforms on SE(3) and the parametric shape
//!   models (cuboid, cylinder, ellipsoid) used for object landmarks.
//! - [`worldsim`]: deterministic synthetic worlds, trajectories, noisy
//!   odometry and object detections, with Hungarian instance tracking.
//! - [`backend`]: the metric-semantic factor graph (key poses + object
//!   landmarks) and its batch Levenberg-Marquardt optimizer.
//! - [`placerec`]: semantics-driven place recognition — an anytime grid
//!   search (`slidematch`) and a descriptor/consistency-graph pipeline
//!   (`slidegraph`) — plus closed-form 4-DoF alignment.
//! - [`swarm`]: per-robot observation databases, delta messaging under a
//!   scripted communication schedule, and peer map merging.
//! - [`bench`]: scenario configs, the end-to-end runner, evaluation metrics
//!   and artifact export.
//!
//! See the crate `examples/` directory for one runnable example per
//! subsystem; the `objslam` binary exposes the same machinery as a CLI
//! (`run`, `eval`, `plot`, `worldgen`).

pub mod backend;
pub mod bench;
pub mod geometry;
pub mod placerec;
pub mod swarm;
pub mod worldsim;
