//! Compiler, mapper and cycle-level simulator for a spatial PE array with a
//! decoupled control flow plane.
//!
//! The pipeline is: kernel source ([`frontend`]) → CDFG ([`ir`]) → placement and
//! schedule ([`mapper`]) → configuration bitstream → cycle-level execution
//! ([`sim`]) → metrics ([`metrics`]).

pub mod arch;
pub mod corpus;
pub mod frontend;
pub mod ir;
pub mod mapper;
pub mod metrics;
pub mod netctl;
pub mod sim;

pub use arch::ArchConfig;
