//! Spatial-modulation coding, RLS detection and replica analysis.
//!
//! Everything here is `no_std` with `alloc`; IO and the CLI live in the
//! `smrls` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod channel;
pub mod codec;
pub mod constellation;
pub mod detect;
pub mod error;
pub mod math;
pub mod replica;

pub use channel::{CMatrix, ExperimentConfig, RayleighSpectrum, SpectralModel};
pub use codec::{CodebookPolicy, SmCodebook, UserPayload};
pub use constellation::{Constellation, ConstellationKind};
pub use error::{Error, Result};
