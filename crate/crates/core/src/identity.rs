//! App initialization: an individual's key pair is derived once from their
//! OTP-verified phone number and device entropy. The number is consumed by
//! [`init_identity`] and never retained; the public key is the identity from
//! then on.

use crate::crypto::{hash_concat, KeyPair, PrivateKey};

const DOMAIN: &[u8] = b"covidchain/identity/v1";

/// Derives an individual's key pair.
///
/// `device_entropy` keeps the key from being recomputable out of the phone
/// number alone (phone numbers are enumerable, which would let anyone link a
/// hashed key back to a number).
pub fn init_identity(verified_phone: String, device_entropy: &[u8; 32]) -> KeyPair {
    let seed = hash_concat(&[DOMAIN, verified_phone.as_bytes(), device_entropy]);
    drop(verified_phone);
    KeyPair::from_private(PrivateKey::from_bytes(*seed.as_bytes()))
}
