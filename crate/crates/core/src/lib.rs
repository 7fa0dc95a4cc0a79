//! Simulators and verification checks for a fixed-size population under
//! strong selection over accumulating mutation types, with an adversarial
//! two-allele weak-selection mechanism, together with its scaling-limit
//! objects: a jump SDE for the disadvantaged-allele frequency and
//! coalescent block-count chains.
//!
//! Crate layout:
//! - [`params`]: model parameters, derived scalings, assumption diagnostics
//! - [`moran`]: the event-driven finite-N simulator
//! - [`sde`]: the jump-SDE simulator (exact drift flow, truncated jumps)
//! - [`coalescent`]: block-count chains and the moment-duality experiment
//! - [`stats`]: estimators and pass/fail comparison reports
//! - [`config`], [`runner`]: CLI configuration and replicate orchestration

pub mod coalescent;
pub mod config;
pub mod moran;
pub mod params;
pub mod runner;
pub mod sde;
pub mod seed;
pub mod stats;
