//! Perfect sampling of the stationary state of open generalized Jackson
//! networks (single-server FIFO stations, renewal arrivals, i.i.d. services,
//! Markovian routing) by dominated coupling from the past.
//!
//! The sampler is built from the following layers:
//!
//! - [`distributions`]: interarrival and service laws with mgf, tilting and
//!   equilibrium sampling.
//! - [`network`]: flow equations, stability, and the slowed auxiliary network.
//! - [`multiwalk`]: exact joint sampling of a multidimensional negative-drift
//!   random walk and its future maxima.
//! - [`stationary_queue`]: the time-reversed stationary autonomous system
//!   built from that walk.
//! - [`vacation`]: the dominating vacation system and its driving sequences.
//! - [`dcftp`]: the outer coupling-from-the-past loop and GJN replay.
//! - [`oracle_stats`]: product-form oracle and the statistical battery.
//!
//! ```no_run
//! use gjn_core::{network::NetworkSpec, dcftp::{sample_stationary, SamplerOptions}};
//!
//! let spec = NetworkSpec::table1_column(0);
//! let (state, record) = sample_stationary(&spec, 42, &SamplerOptions::default()).unwrap();
//! println!("{:?} after {} rounds", state.y, record.rounds);
//! ```

// `!(x < y)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod batch;
pub mod config;
pub mod dcftp;
pub mod distributions;
pub mod events;
pub mod fifo;
pub mod multiwalk;
pub mod network;
pub mod oracle_stats;
pub mod rng;
pub mod stationary_queue;
pub mod stats;
pub mod vacation;

pub use dcftp::{
    sample_stationary, CoalescenceRecord, SamplerContext, SamplerError, SamplerOptions,
    StationaryNetworkState,
};
pub use distributions::{DistributionError, DistributionSpec};
pub use network::{AuxiliaryRates, FlowSolution, NetworkError, NetworkSpec};
pub use oracle_stats::{ProductFormOracle, SampleSummary};
