//! Entangled two-photon absorption (eTPA) delay signals and level-count
//! classification.
//!
//! - [`physics`]: closed-form delay-dependent absorption probability and an
//!   independent quadrature reference.
//! - [`dataset`]: sampling of hypothetical absorbers, labeled trace datasets,
//!   splitting, feature scaling and persistence.
//! - [`neuralnet`]: a sigmoid/softmax classifier trained with scaled
//!   conjugate gradient.
//! - [`experiment`]: replicate runs and the efficiency table sweep.
//! - [`cli`]: the `etpa` command-line front end.

pub mod cli;
pub mod dataset;
pub mod experiment;
pub mod fsutil;
pub mod neuralnet;
pub mod physics;
pub mod rng;
