//! Permissioned health-status ledger with pseudonymous subjects.
//!
//! Testing centres and authorities sign status and zone transactions; a block
//! miner bundles them in arrival order, two randomly chosen validators
//! co-sign each block, and every stakeholder node keeps its own copy of the
//! chain. Individuals appear on the ledger only as the hash of their public
//! key. Epidemiological attributes are sealed to the Central Authority.

pub mod blockpipe;
pub mod cli;
pub mod crypto;
pub mod geoalert;
pub mod identity;
pub mod ledger;
pub mod merkle;
pub mod roles;
pub mod simnet;
pub mod txmodel;
pub mod verifypass;

pub use crypto::{Digest, KeyPair, PublicKey, Signature};
pub use ledger::NodeLedger;
pub use txmodel::{CovidStatus, Transaction, ZoneType};

/// Double-precision geographic point.
pub type GeoPoint = geoalert::GeoPoint<f64>;
/// Single-precision geographic point.
pub type GeoPointF32 = geoalert::GeoPoint<f32>;
/// Double-precision zone alert.
pub type ZoneAlert = geoalert::ZoneAlert<f64>;
