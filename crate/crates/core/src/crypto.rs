//! Hashing, signatures and sealed public-key encryption.
//!
//! Every key pair is an Ed25519 pair. Signing uses it directly; sealed-box
//! encryption uses the birationally equivalent X25519 form of the same key, so
//! one identity serves both purposes (the Central Authority publishes a single
//! public key).
//!
//! All byte values render as lowercase hex wherever they leave the process.

use std::fmt;

use crypto_box::aead::rand_core::CryptoRngCore;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const PRIVATE_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid seed: expected 32 bytes, got {0}")]
    InvalidSeed(usize),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("encryption failed")]
    EncryptionFailed,
    #[error("decryption failed")]
    DecryptionFailed,
}

/// Decodes strictly lowercase hex. Uppercase digits are rejected so that every
/// byte string has exactly one textual form.
pub fn decode_hex(s: &str) -> Result<Vec<u8>, CryptoError> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(CryptoError::Decode(format!("hex must be lowercase: {s:.16}")));
    }
    hex::decode(s).map_err(|e| CryptoError::Decode(e.to_string()))
}

fn decode_fixed<const N: usize>(s: &str, what: &str) -> Result<[u8; N], CryptoError> {
    let bytes = decode_hex(s)?;
    <[u8; N]>::try_from(bytes.as_slice())
        .map_err(|_| CryptoError::Decode(format!("{what}: expected {N} bytes, got {}", bytes.len())))
}

/// Output of the one-way hash (SHA-256).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        decode_fixed(s, "digest").map(Digest)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// SHA-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_concat(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Public key bytes. Not validated as a curve point until used, so that a
/// malformed key surfaces as a decode error at verification time.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub const fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        PublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        decode_fixed(s, "public key").map(PublicKey)
    }

    /// H(K_pub): the only form in which an individual's key reaches the ledger.
    pub fn fingerprint(&self) -> Digest {
        hash(&self.0)
    }

    fn verifying_key(&self) -> Result<VerifyingKey, CryptoError> {
        VerifyingKey::from_bytes(&self.0).map_err(|e| CryptoError::Decode(e.to_string()))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

/// The 32-byte Ed25519 secret seed.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey([u8; PRIVATE_KEY_LEN]);

impl PrivateKey {
    pub fn from_bytes(bytes: [u8; PRIVATE_KEY_LEN]) -> Self {
        PrivateKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; PRIVATE_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        decode_fixed(s, "private key").map(PrivateKey)
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing_key().verifying_key().to_bytes())
    }

    fn signing_key(&self) -> SigningKey {
        SigningKey::from_bytes(&self.0)
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    public: PublicKey,
    private: PrivateKey,
}

impl KeyPair {
    pub fn from_private(private: PrivateKey) -> Self {
        KeyPair { public: private.public_key(), private }
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn private(&self) -> &PrivateKey {
        &self.private
    }

    pub fn sign(&self, digest: &Digest) -> Signature {
        sign(&self.private, digest)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

/// Deterministic key pair from a 32-byte seed.
pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; PRIVATE_KEY_LEN] =
        seed.try_into().map_err(|_| CryptoError::InvalidSeed(seed.len()))?;
    Ok(KeyPair::from_private(PrivateKey(seed)))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub const fn from_bytes(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Signature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        decode_fixed(s, "signature").map(Signature)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

pub fn sign(private: &PrivateKey, digest: &Digest) -> Signature {
    Signature(private.signing_key().sign(digest.as_bytes()).to_bytes())
}

/// `Ok(true)` iff `sig` was produced by the holder of `public` over exactly
/// `digest`. A public key that is not a valid curve point is a decode error.
pub fn verify(public: &PublicKey, digest: &Digest, sig: &Signature) -> Result<bool, CryptoError> {
    let vk = public.verifying_key()?;
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    Ok(vk.verify_strict(digest.as_bytes(), &sig).is_ok())
}

/// Convenience wrapper treating decode errors as a failed verification.
pub fn verifies(public: &PublicKey, digest: &Digest, sig: &Signature) -> bool {
    verify(public, digest, sig).unwrap_or(false)
}

/// Sealed-box ciphertext tagged with the fingerprint of its recipient key.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CipherText {
    recipient: Digest,
    bytes: Vec<u8>,
}

impl CipherText {
    pub fn recipient(&self) -> &Digest {
        &self.recipient
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// `hex(recipient fingerprint ‖ sealed bytes)`.
    pub fn to_hex(&self) -> String {
        let mut out = self.recipient.to_hex();
        out.push_str(&hex::encode(&self.bytes));
        out
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = decode_hex(s)?;
        // ephemeral key + tag at minimum, plus one byte of plaintext
        if raw.len() < DIGEST_LEN + 32 + 16 + 1 {
            return Err(CryptoError::Decode(format!("ciphertext too short: {} bytes", raw.len())));
        }
        let (fp, body) = raw.split_at(DIGEST_LEN);
        Ok(CipherText {
            recipient: Digest(fp.try_into().expect("split at digest length")),
            bytes: body.to_vec(),
        })
    }
}

impl fmt::Debug for CipherText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CipherText(to={}, {} bytes)", &self.recipient.to_hex()[..8], self.bytes.len())
    }
}

/// Randomized sealed-box encryption to `public`, drawing the ephemeral key
/// from `rng`.
pub fn encrypt_with_rng(
    public: &PublicKey,
    plaintext: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Result<CipherText, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let montgomery = public.verifying_key()?.to_montgomery().to_bytes();
    let bytes = crypto_box::PublicKey::from(montgomery)
        .seal(rng, plaintext)
        .map_err(|_| CryptoError::EncryptionFailed)?;
    Ok(CipherText { recipient: public.fingerprint(), bytes })
}

pub fn encrypt(public: &PublicKey, plaintext: &[u8]) -> Result<CipherText, CryptoError> {
    encrypt_with_rng(public, plaintext, &mut rand::rngs::OsRng)
}

pub fn decrypt(private: &PrivateKey, ct: &CipherText) -> Result<Vec<u8>, CryptoError> {
    if private.public_key().fingerprint() != ct.recipient {
        return Err(CryptoError::DecryptionFailed);
    }
    let secret = crypto_box::SecretKey::from(private.signing_key().to_scalar_bytes());
    secret.unseal(&ct.bytes).map_err(|_| CryptoError::DecryptionFailed)
}
