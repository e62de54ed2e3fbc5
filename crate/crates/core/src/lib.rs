//! Federated semi-supervised estimation of the QUIC share of mixed traffic.
//!
//! The pipeline windows packet traces into flow statistics ([`traffic`]),
//! ranks and selects features by mutual information ([`infotheory`],
//! [`featsel`]), fits a single-hidden-layer regressor trained with ADAM
//! ([`regressor`]) and simulates the edge-server / gateway federation with
//! byte-exact control-traffic accounting ([`federation`]).

pub mod benchmark;
pub mod cli;
pub mod compare;
pub mod config;
pub mod featsel;
pub mod federation;
pub mod infotheory;
pub mod matrix;
pub mod regressor;
pub mod traffic;

pub use matrix::Matrix;
