//! Bandwidth-limited quantum gate synthesis on a Slepian (DPSS) basis.

pub mod cli;
pub mod config;
pub mod error;
pub mod gradient;
pub mod models;
pub mod operator;
pub mod optimizer;
pub mod output;
pub mod propagation;
pub mod qsl;
pub mod rng;
pub mod slepian;

pub use error::{GrafsError, Result};
pub use operator::Operator;
pub use propagation::{ControlPulse, ControlSystem, PulseGrid};
pub use slepian::SlepianBasis;
