//! Simulation and optimization library for a wireless-energy-transfer power
//! beacon built from a small digital feeder array and a large passive
//! intelligent transmitting surface (ITS).
//!
//! The crate models the full pipeline:
//!
//! - [`geometry`]: beacon layout (ITS element grid, feeder polygon, device
//!   deployment) and boresight angles,
//! - [`channel`]: near-field line-of-sight channel coefficients with
//!   per-element radiation profiles,
//! - [`power`]: Doherty amplifier consumption, static terms, insertion losses,
//! - [`conic`]: a small conic-programming layer (linear, second-order-cone and
//!   semidefinite blocks) over an interior-point backend,
//! - [`architectures`]: transmitter variants (ITS-based, fully digital, hybrid
//!   fully/partially connected) and their received-power semantics,
//! - [`sca`]: the successive-convex-approximation loop that minimizes total
//!   consumed power subject to per-device received-power targets,
//! - [`init`]: feasible starting points (element clustering, chain allocation,
//!   phase alignment, min-max-power precoders),
//! - [`harness`]: experiment configuration, Monte-Carlo sweeps, presets and
//!   result serialization.
//!
//! # Example
//!
//! ```
//! use wetbeam_core::harness::{ExperimentConfig, resolve};
//!
//! let mut config = ExperimentConfig::default();
//! config.m = 16;
//! config.n = 2;
//! config.k = 1;
//! let resolved = resolve(&config).unwrap();
//! assert!(resolved.wavelength > 0.059 && resolved.wavelength < 0.061);
//! ```

// The semidefinite cone support in the interior-point backend calls LAPACK;
// linking the system BLAS/LAPACK requires the crate to be referenced.
extern crate openblas_src as _;

pub mod architectures;
pub mod channel;
pub mod conic;
pub mod geometry;
pub mod harness;
pub mod init;
pub mod linalg;
pub mod power;
pub mod sca;

pub use architectures::Architecture;
pub use channel::{ChannelSet, RadiationParams};
pub use geometry::{ScenarioGeometry, ScenarioParams, Vec3};
pub use harness::{ExperimentConfig, ExperimentSet};
pub use power::{DohertyParams, InsertionLoss, ItsPowerParams, StaticPower};
pub use sca::{BeamformingSolution, ScaSettings};
