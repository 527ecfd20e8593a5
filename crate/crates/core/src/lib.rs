//! Estimation of the Rabi angle of the atom maser from atom-detection
//! records.
//!
//! The cavity photon number is a truncated birth-death process driven by a
//! Poissonian stream of excited atoms; each atom leaves the cavity in its
//! ground or excited state and is detected. The crate provides the model
//! generators, a seeded simulator, the exact filter likelihood with its
//! maximum-likelihood estimator, asymptotic Fisher informations of the total
//! counts, seven summary statistics and a rejection ABC engine built on them.

pub mod abc;
pub mod counting;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod record;
pub mod seed;
pub mod simulate;
pub mod stats;

pub use error::{MaserError, Result};
pub use model::{build_generators, stationary_state, Channel, DiagonalState, GeneratorSet, MaserModel, ModelParams};
pub use record::{DetectionRecord, Event, FullRecord, RecordMeta, SCHEMA_VERSION};
