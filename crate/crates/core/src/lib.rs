#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod error;
pub mod harness;
pub mod potentials;
pub mod quantum;
pub mod sampling;
pub mod semiclassical;
pub mod transport;
pub mod vlasov;

pub use error::{Error, Result};
