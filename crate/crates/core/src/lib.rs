//! Tree-tensor-network propagation of the bexcitonic hierarchical equations
//! of motion, with a dense reference propagator for verification.

// negated float comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bath;
pub mod config;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod ode;
pub mod oracle;
pub mod propagate;
pub mod scenarios;
pub mod tdvp;
pub mod trajectory;
pub mod ttn;
pub mod units;
pub mod verify;

pub use num_complex::Complex64 as C64;

pub use bath::{Feature, FeatureSet, SpectralComponent, SpectralKind};
pub use error::{Error, Result};
pub use generator::{BexcitonSpace, Envelope, MetricKind, SopGenerator, SopTerm, SystemModel};
pub use ode::IntegratorConfig;
pub use ttn::{TopologyKind, TreeTopology, TtnState};




