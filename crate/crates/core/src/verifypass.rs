//! Digital-pass verification: a challenge–response proof of key possession
//! followed by an access decision against the holder's effective status.
//!
//! The verifier issues a fresh 32-byte nonce; the subject signs its hash and
//! returns the signature with their public key; the verifier checks the
//! signature, then looks the key's hash up on the ledger. The same code runs
//! in either direction between two parties.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::{NaiveDateTime, TimeDelta};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{self, decode_hex, hash, KeyPair, PublicKey, Signature};
use crate::ledger::NodeLedger;
use crate::txmodel::CovidStatus;

pub const RAND_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PassError {
    #[error("challenge already consumed")]
    Replay,
    #[error("challenge expired")]
    Expired,
    #[error("frame error: {0}")]
    Frame(String),
}

/// A single-use nonce. Consumption is atomic, so concurrent checks against
/// the same challenge admit at most one.
#[derive(Debug)]
pub struct Challenge {
    rand: [u8; RAND_LEN],
    issued_at: NaiveDateTime,
    consumed: AtomicBool,
}

impl Challenge {
    pub fn rand(&self) -> &[u8; RAND_LEN] {
        &self.rand
    }

    pub fn issued_at(&self) -> NaiveDateTime {
        self.issued_at
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.load(Ordering::Acquire)
    }

    pub fn frame(&self) -> Frame {
        Frame::Challenge(self.rand)
    }
}

pub fn issue_challenge<R: RngCore + CryptoRng>(rng: &mut R, issued_at: NaiveDateTime) -> Challenge {
    let mut rand = [0u8; RAND_LEN];
    rng.fill_bytes(&mut rand);
    Challenge { rand, issued_at, consumed: AtomicBool::new(false) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassResponse {
    pub x: Signature,
    pub subject_pub: PublicKey,
}

impl PassResponse {
    pub fn frame(&self) -> Frame {
        Frame::Response(*self)
    }
}

/// Signs `H(rand)` with the subject's private key.
pub fn respond(challenge_rand: &[u8; RAND_LEN], subject: &KeyPair) -> PassResponse {
    PassResponse { x: subject.sign(&hash(challenge_rand)), subject_pub: *subject.public() }
}

/// Optional challenge lifetime. Disabled by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassPolicy {
    pub expiry: Option<TimeDelta>,
}

/// Consumes the challenge and reports whether the response proves possession
/// of the private key matching `resp.subject_pub`.
pub fn check_response(challenge: &Challenge, resp: &PassResponse) -> Result<bool, PassError> {
    if challenge
        .consumed
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(PassError::Replay);
    }
    Ok(crypto::verifies(&resp.subject_pub, &hash(&challenge.rand), &resp.x))
}

/// [`check_response`] with an expiry window evaluated at `now`. An expired
/// challenge is still consumed.
pub fn check_response_at(
    challenge: &Challenge,
    resp: &PassResponse,
    policy: &PassPolicy,
    now: NaiveDateTime,
) -> Result<bool, PassError> {
    let ok = check_response(challenge, resp)?;
    match policy.expiry {
        Some(window) if now - challenge.issued_at > window => Err(PassError::Expired),
        _ => Ok(ok),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Allow,
    Deny,
    AuthFail,
}

impl Verdict {
    pub fn token(self) -> &'static str {
        match self {
            Verdict::Allow => "ALLOW",
            Verdict::Deny => "DENY",
            Verdict::AuthFail => "AUTH_FAIL",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Verdict {
    type Err = PassError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Verdict::Allow, Verdict::Deny, Verdict::AuthFail]
            .into_iter()
            .find(|v| v.token() == s)
            .ok_or_else(|| PassError::Frame(format!("unknown verdict {s:?}")))
    }
}

pub const REASON_CLEAR: &str = "clear";
pub const REASON_NO_RECORD: &str = "no-record";
pub const REASON_RESTRICTED: &str = "restricted";
pub const REASON_AUTH_FAIL: &str = "auth-fail";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessDecision {
    pub verdict: Verdict,
    pub reason: &'static str,
    /// Never set when authentication failed.
    pub status_seen: Option<CovidStatus>,
}

impl AccessDecision {
    pub fn frame(&self) -> Frame {
        Frame::Decision { verdict: self.verdict, reason: self.reason.to_owned() }
    }
}

/// Positive and in-quarantine subjects are denied; negative, out of
/// quarantine, or never-recorded subjects are admitted.
pub fn decide_access(ledger: &NodeLedger, resp: &PassResponse, authenticated: bool) -> AccessDecision {
    if !authenticated {
        return AccessDecision { verdict: Verdict::AuthFail, reason: REASON_AUTH_FAIL, status_seen: None };
    }
    match ledger.query_status(&resp.subject_pub).status {
        None => AccessDecision { verdict: Verdict::Allow, reason: REASON_NO_RECORD, status_seen: None },
        Some(s @ (CovidStatus::Positive | CovidStatus::InQuarantine)) => {
            AccessDecision { verdict: Verdict::Deny, reason: REASON_RESTRICTED, status_seen: Some(s) }
        }
        Some(s @ (CovidStatus::Negative | CovidStatus::OutOfQuarantine)) => {
            AccessDecision { verdict: Verdict::Allow, reason: REASON_CLEAR, status_seen: Some(s) }
        }
    }
}

/// Transcript of one full exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub frames: Vec<Frame>,
    pub decision: AccessDecision,
}

/// Runs the whole protocol: the verifier, reading `ledger`, checks
/// `subject`. Either party may play either role.
pub fn run_exchange<R: RngCore + CryptoRng>(
    ledger: &NodeLedger,
    subject: &KeyPair,
    rng: &mut R,
    now: NaiveDateTime,
) -> Exchange {
    let challenge = issue_challenge(rng, now);
    let resp = respond(challenge.rand(), subject);
    let authenticated = check_response(&challenge, &resp).unwrap_or(false);
    let decision = decide_access(ledger, &resp, authenticated);
    Exchange { frames: vec![challenge.frame(), resp.frame(), decision.frame()], decision }
}

/// Wire frames: `CHAL|hex(rand)`, `RESP|hex(x)|hex(pub)`, `DEC|verdict|reason`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Challenge([u8; RAND_LEN]),
    Response(PassResponse),
    Decision { verdict: Verdict, reason: String },
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Challenge(r) => write!(f, "CHAL|{}", hex::encode(r)),
            Frame::Response(r) => write!(f, "RESP|{}|{}", r.x.to_hex(), r.subject_pub.to_hex()),
            Frame::Decision { verdict, reason } => write!(f, "DEC|{verdict}|{reason}"),
        }
    }
}

impl FromStr for Frame {
    type Err = PassError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: &str| PassError::Frame(format!("{m}: {s:.40}"));
        let f: Vec<&str> = s.split('|').collect();
        match f.as_slice() {
            ["CHAL", r] => {
                let bytes = decode_hex(r).map_err(|e| bad(&e.to_string()))?;
                let rand: [u8; RAND_LEN] =
                    bytes.as_slice().try_into().map_err(|_| bad("nonce must be 32 bytes"))?;
                Ok(Frame::Challenge(rand))
            }
            ["RESP", x, key] => Ok(Frame::Response(PassResponse {
                x: Signature::from_hex(x).map_err(|e| bad(&e.to_string()))?,
                subject_pub: PublicKey::from_hex(key).map_err(|e| bad(&e.to_string()))?,
            })),
            ["DEC", v, reason] if !reason.is_empty() => {
                Ok(Frame::Decision { verdict: v.parse()?, reason: (*reason).to_owned() })
            }
            _ => Err(bad("unrecognized frame")),
        }
    }
}
