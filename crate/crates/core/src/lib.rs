//! Privacy-preserving learning and inference for sum-product networks.
//!
//! Parties holding horizontal partitions of a binary dataset jointly learn
//! the weights of a selective sum-product network without revealing their
//! rows, and a client can query the shared model without revealing its
//! evidence. Everything runs over a prime field with additive and Shamir
//! secret sharing, scheduled by a manager over a member network.

pub mod arith;
pub mod field;
pub mod harness;
pub mod net;
pub mod protocols;
pub mod sharing;
pub mod spn;

pub use field::{FieldElement, FieldParams};
pub use sharing::{PartyId, SecretId, SharingParams};
