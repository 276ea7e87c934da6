//! The two transaction kinds: an individual's health-status record and an
//! authority's zone declaration.
//!
//! Both are identified by a TID, the hash of their canonical field encoding,
//! and carry the issuer's signature over that TID. The canonical encodings and
//! the `IND|`/`LOC|` wire lines are bit-exact: the wire line of a transaction
//! is what gets hashed into a block's Merkle tree, persisted, and transmitted.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime, Timelike};
use crypto_box::aead::rand_core::CryptoRngCore;
use thiserror::Error;

use crate::crypto::{
    self, hash, CipherText, CryptoError, Digest, KeyPair, PrivateKey, PublicKey, Signature,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn parse_err(msg: impl Into<String>) -> TxError {
    TxError::Parse(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovidStatus {
    Positive,
    Negative,
    InQuarantine,
    OutOfQuarantine,
}

impl CovidStatus {
    pub const ALL: [CovidStatus; 4] = [
        CovidStatus::Positive,
        CovidStatus::Negative,
        CovidStatus::InQuarantine,
        CovidStatus::OutOfQuarantine,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CovidStatus::Positive => "+ive",
            CovidStatus::Negative => "-ive",
            CovidStatus::InQuarantine => "IQ",
            CovidStatus::OutOfQuarantine => "OQ",
        }
    }
}

impl fmt::Display for CovidStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for CovidStatus {
    type Err = TxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CovidStatus::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| parse_err(format!("unknown status token {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ZoneType {
    Red,
    Orange,
    Green,
}

impl ZoneType {
    pub const ALL: [ZoneType; 3] = [ZoneType::Red, ZoneType::Orange, ZoneType::Green];

    pub fn token(self) -> &'static str {
        match self {
            ZoneType::Red => "RED",
            ZoneType::Orange => "ORANGE",
            ZoneType::Green => "GREEN",
        }
    }

    /// Red and orange zones raise proximity alerts; green is informational.
    pub fn is_alerting(self) -> bool {
        !matches!(self, ZoneType::Green)
    }
}

impl fmt::Display for ZoneType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ZoneType {
    type Err = TxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ZoneType::ALL
            .into_iter()
            .find(|z| z.token() == s)
            .ok_or_else(|| parse_err(format!("unknown zone type {s:?}")))
    }
}

/// Calendar date and second-resolution time of day, UTC. Orders by date,
/// then time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordTime {
    pub date: NaiveDate,
    pub time: NaiveTime,
}

impl RecordTime {
    pub fn new(date: NaiveDate, time: NaiveTime) -> Self {
        // drop sub-second precision; the encoding has none
        let time = time.with_nanosecond(0).expect("zero nanoseconds is valid");
        RecordTime { date, time }
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Option<Self> {
        Some(RecordTime::new(
            NaiveDate::from_ymd_opt(y, mo, d)?,
            NaiveTime::from_hms_opt(h, mi, s)?,
        ))
    }

    pub fn date_token(&self) -> String {
        self.date.format("%Y-%m-%d").to_string()
    }

    pub fn time_token(&self) -> String {
        self.time.format("%H:%M:%S").to_string()
    }

    /// `YYYY-MM-DDTHH:MM:SSZ`
    pub fn iso(&self) -> String {
        format!("{}T{}Z", self.date_token(), self.time_token())
    }

    pub fn parse(date: &str, time: &str) -> Result<Self, TxError> {
        let d = NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|e| parse_err(format!("date {date:?}: {e}")))?;
        let t = NaiveTime::parse_from_str(time, "%H:%M:%S")
            .map_err(|e| parse_err(format!("time {time:?}: {e}")))?;
        let rt = RecordTime::new(d, t);
        if rt.date_token() != date || rt.time_token() != time {
            return Err(parse_err(format!("non-canonical date/time {date} {time}")));
        }
        Ok(rt)
    }
}

/// A coordinate in millionths of a degree. Fixed point keeps the canonical
/// text form (sign, integer part, six decimals) exactly round-trippable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MicroDegrees(i64);

impl MicroDegrees {
    pub const fn from_micro(v: i64) -> Self {
        MicroDegrees(v)
    }

    /// Rounds to the nearest millionth of a degree.
    pub fn from_degrees(deg: f64) -> Result<Self, TxError> {
        if !deg.is_finite() {
            return Err(TxError::Validation(format!("coordinate is not finite: {deg}")));
        }
        Ok(MicroDegrees((deg * 1e6).round() as i64))
    }

    pub fn micro(self) -> i64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn canonical(self) -> String {
        let sign = if self.0 < 0 { '-' } else { '+' };
        let abs = self.0.unsigned_abs();
        format!("{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }

    pub fn parse(s: &str) -> Result<Self, TxError> {
        let bad = || parse_err(format!("coordinate {s:?}"));
        let (neg, rest) = match s.as_bytes().first() {
            Some(b'+') => (false, &s[1..]),
            Some(b'-') => (true, &s[1..]),
            _ => return Err(bad()),
        };
        let (int, frac) = rest.split_once('.').ok_or_else(bad)?;
        if int.is_empty()
            || frac.len() != 6
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: i64 = int.parse().map_err(|_| bad())?;
        let micro: i64 = frac.parse().map_err(|_| bad())?;
        let v = whole.checked_mul(1_000_000).and_then(|w| w.checked_add(micro)).ok_or_else(bad)?;
        let out = MicroDegrees(if neg { -v } else { v });
        if out.canonical() != s {
            return Err(bad());
        }
        Ok(out)
    }
}

fn check_lat_lon(lat: MicroDegrees, lon: MicroDegrees) -> Result<(), TxError> {
    if !(-90_000_000..=90_000_000).contains(&lat.0) {
        return Err(TxError::Validation(format!("latitude out of range: {}", lat.canonical())));
    }
    if !(-180_000_000..=180_000_000).contains(&lon.0) {
        return Err(TxError::Validation(format!("longitude out of range: {}", lon.canonical())));
    }
    Ok(())
}

/// Minimal epidemiological attribute set. Has no fields capable of holding a
/// direct identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EpidRecord {
    age: u32,
    gender: String,
    blood_group: String,
    state_province: String,
    preexisting_conditions: Vec<String>,
}

fn check_token(field: &str, t: &str) -> Result<(), TxError> {
    if t.is_empty() || t.chars().any(|c| matches!(c, ';' | ',' | '=' | '|') || c.is_control()) {
        return Err(TxError::Validation(format!("invalid {field} token {t:?}")));
    }
    Ok(())
}

impl EpidRecord {
    pub fn new(
        age: u32,
        gender: impl Into<String>,
        blood_group: impl Into<String>,
        state_province: impl Into<String>,
        preexisting_conditions: Vec<String>,
    ) -> Result<Self, TxError> {
        let rec = EpidRecord {
            age,
            gender: gender.into(),
            blood_group: blood_group.into(),
            state_province: state_province.into(),
            preexisting_conditions,
        };
        check_token("gender", &rec.gender)?;
        check_token("blood", &rec.blood_group)?;
        check_token("state", &rec.state_province)?;
        for c in &rec.preexisting_conditions {
            check_token("cond", c)?;
        }
        Ok(rec)
    }

    pub fn age(&self) -> u32 {
        self.age
    }

    pub fn gender(&self) -> &str {
        &self.gender
    }

    pub fn blood_group(&self) -> &str {
        &self.blood_group
    }

    pub fn state_province(&self) -> &str {
        &self.state_province
    }

    pub fn preexisting_conditions(&self) -> &[String] {
        &self.preexisting_conditions
    }

    /// `age=<n>;gender=<t>;blood=<t>;state=<t>;cond=<t1,t2,...>`
    pub fn canonical(&self) -> String {
        format!(
            "age={};gender={};blood={};state={};cond={}",
            self.age,
            self.gender,
            self.blood_group,
            self.state_province,
            self.preexisting_conditions.join(",")
        )
    }

    pub fn parse(s: &str) -> Result<Self, TxError> {
        let mut parts = s.split(';');
        let mut field = |key: &str| -> Result<&str, TxError> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(key)?.strip_prefix('='))
                .ok_or_else(|| parse_err(format!("epid record: expected {key}=")))
        };
        let age_s = field("age")?;
        let gender = field("gender")?;
        let blood = field("blood")?;
        let state = field("state")?;
        let cond = field("cond")?;
        if parts.next().is_some() {
            return Err(parse_err("epid record: trailing fields"));
        }
        let age = age_s.parse().map_err(|_| parse_err(format!("epid age {age_s:?}")))?;
        let conds =
            if cond.is_empty() { Vec::new() } else { cond.split(',').map(str::to_owned).collect() };
        let rec = EpidRecord::new(age, gender, blood, state, conds)
            .map_err(|e| parse_err(e.to_string()))?;
        if rec.canonical() != s {
            return Err(parse_err("epid record: non-canonical form"));
        }
        Ok(rec)
    }
}

/// `hex(subject)|status|YYYY-MM-DD|HH:MM:SS|hex(s_enc)` as UTF-8 bytes.
pub fn canonical_encode_individual(
    subject: &Digest,
    status: CovidStatus,
    at: &RecordTime,
    s_enc: &CipherText,
) -> Vec<u8> {
    format!(
        "{}|{}|{}|{}|{}",
        subject.to_hex(),
        status.token(),
        at.date_token(),
        at.time_token(),
        s_enc.to_hex()
    )
    .into_bytes()
}

/// Hash of the canonical coordinate pair `lat|lon`.
pub fn zone_id(lat: MicroDegrees, lon: MicroDegrees) -> Digest {
    hash(format!("{}|{}", lat.canonical(), lon.canonical()).as_bytes())
}

/// `hex(zoneId)|lat|lon|radius|YYYY-MM-DD|HH:MM:SS|zoneType` as UTF-8 bytes.
pub fn canonical_encode_location(
    zone_id: &Digest,
    lat: MicroDegrees,
    lon: MicroDegrees,
    radius_m: u32,
    at: &RecordTime,
    zone_type: ZoneType,
) -> Vec<u8> {
    format!(
        "{}|{}|{}|{}|{}|{}|{}",
        zone_id.to_hex(),
        lat.canonical(),
        lon.canonical(),
        radius_m,
        at.date_token(),
        at.time_token(),
        zone_type.token()
    )
    .into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndividualTx {
    pub tid: Digest,
    pub subject: Digest,
    pub status: CovidStatus,
    pub at: RecordTime,
    pub s_enc: CipherText,
    pub signer_key: PublicKey,
    pub ds: Signature,
}

impl IndividualTx {
    pub fn canonical(&self) -> Vec<u8> {
        canonical_encode_individual(&self.subject, self.status, &self.at, &self.s_enc)
    }

    pub fn recompute_tid(&self) -> Digest {
        hash(&self.canonical())
    }

    pub fn decrypt_epid(&self, ca_private: &PrivateKey) -> Result<EpidRecord, TxError> {
        let plain = crypto::decrypt(ca_private, &self.s_enc)?;
        let text =
            String::from_utf8(plain).map_err(|_| parse_err("epid record is not valid UTF-8"))?;
        EpidRecord::parse(&text)
    }
}

/// Builds and signs an individual status record. The subject's key enters
/// only as its hash; the epidemiological record only sealed to `ca_pub`.
pub fn make_individual_tx(
    subject_pub: &PublicKey,
    status: CovidStatus,
    at: RecordTime,
    epid: &EpidRecord,
    ca_pub: &PublicKey,
    signer: &KeyPair,
    rng: &mut impl CryptoRngCore,
) -> Result<IndividualTx, TxError> {
    let s_enc = crypto::encrypt_with_rng(ca_pub, epid.canonical().as_bytes(), rng)?;
    let subject = subject_pub.fingerprint();
    let tid = hash(&canonical_encode_individual(&subject, status, &at, &s_enc));
    Ok(IndividualTx {
        tid,
        subject,
        status,
        at,
        s_enc,
        signer_key: *signer.public(),
        ds: signer.sign(&tid),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LocationTx {
    pub tid: Digest,
    pub zone_id: Digest,
    pub lat: MicroDegrees,
    pub lon: MicroDegrees,
    pub radius_m: u32,
    pub at: RecordTime,
    pub zone_type: ZoneType,
    pub signer_key: PublicKey,
    pub ds: Signature,
}

impl LocationTx {
    pub fn canonical(&self) -> Vec<u8> {
        canonical_encode_location(
            &self.zone_id,
            self.lat,
            self.lon,
            self.radius_m,
            &self.at,
            self.zone_type,
        )
    }

    pub fn recompute_tid(&self) -> Digest {
        hash(&self.canonical())
    }
}

pub fn make_location_tx(
    lat: f64,
    lon: f64,
    radius_m: i64,
    at: RecordTime,
    zone_type: ZoneType,
    signer: &KeyPair,
) -> Result<LocationTx, TxError> {
    let lat = MicroDegrees::from_degrees(lat)?;
    let lon = MicroDegrees::from_degrees(lon)?;
    check_lat_lon(lat, lon)?;
    let radius_m = u32::try_from(radius_m)
        .ok()
        .filter(|r| *r > 0)
        .ok_or_else(|| TxError::Validation(format!("radius must be positive, got {radius_m}")))?;
    let zone_id = zone_id(lat, lon);
    let tid = hash(&canonical_encode_location(&zone_id, lat, lon, radius_m, &at, zone_type));
    Ok(LocationTx {
        tid,
        zone_id,
        lat,
        lon,
        radius_m,
        at,
        zone_type,
        signer_key: *signer.public(),
        ds: signer.sign(&tid),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Transaction {
    Individual(IndividualTx),
    Location(LocationTx),
}

impl From<IndividualTx> for Transaction {
    fn from(tx: IndividualTx) -> Self {
        Transaction::Individual(tx)
    }
}

impl From<LocationTx> for Transaction {
    fn from(tx: LocationTx) -> Self {
        Transaction::Location(tx)
    }
}

impl Transaction {
    pub fn tid(&self) -> &Digest {
        match self {
            Transaction::Individual(t) => &t.tid,
            Transaction::Location(t) => &t.tid,
        }
    }

    pub fn signer_key(&self) -> &PublicKey {
        match self {
            Transaction::Individual(t) => &t.signer_key,
            Transaction::Location(t) => &t.signer_key,
        }
    }

    pub fn at(&self) -> &RecordTime {
        match self {
            Transaction::Individual(t) => &t.at,
            Transaction::Location(t) => &t.at,
        }
    }

    pub fn as_individual(&self) -> Option<&IndividualTx> {
        match self {
            Transaction::Individual(t) => Some(t),
            Transaction::Location(_) => None,
        }
    }

    pub fn as_location(&self) -> Option<&LocationTx> {
        match self {
            Transaction::Location(t) => Some(t),
            Transaction::Individual(_) => None,
        }
    }

    /// The bit-exact wire line, without a trailing newline.
    pub fn to_line(&self) -> String {
        let (tag, canonical, key, ds) = match self {
            Transaction::Individual(t) => ("IND", t.canonical(), t.signer_key, t.ds),
            Transaction::Location(t) => ("LOC", t.canonical(), t.signer_key, t.ds),
        };
        format!(
            "{tag}|{}|{}|{}",
            String::from_utf8(canonical).expect("canonical encodings are ASCII"),
            key.to_hex(),
            ds.to_hex()
        )
    }

    /// Size on the wire including the line terminator.
    pub fn wire_size(&self) -> usize {
        self.to_line().len() + 1
    }

    /// Merkle leaf: hash of the wire line.
    pub fn leaf_hash(&self) -> Digest {
        hash(self.to_line().as_bytes())
    }

    /// Parses a wire line. Only the canonical form is accepted: any line that
    /// would not be reproduced byte-for-byte by [`Transaction::to_line`] is
    /// rejected. The TID is recomputed from the fields.
    pub fn parse_line(line: &str) -> Result<Self, TxError> {
        let f: Vec<&str> = line.split('|').collect();
        let tx = match f.first().copied() {
            Some("IND") => {
                if f.len() != 8 {
                    return Err(parse_err(format!("IND line has {} fields, expected 8", f.len())));
                }
                let mut t = IndividualTx {
                    tid: Digest::ZERO,
                    subject: Digest::from_hex(f[1])?,
                    status: f[2].parse()?,
                    at: RecordTime::parse(f[3], f[4])?,
                    s_enc: CipherText::from_hex(f[5])?,
                    signer_key: PublicKey::from_hex(f[6])?,
                    ds: Signature::from_hex(f[7])?,
                };
                t.tid = t.recompute_tid();
                Transaction::Individual(t)
            }
            Some("LOC") => {
                if f.len() != 10 {
                    return Err(parse_err(format!("LOC line has {} fields, expected 10", f.len())));
                }
                let radius_m: u32 = f[4]
                    .parse()
                    .ok()
                    .filter(|r| *r > 0)
                    .ok_or_else(|| parse_err(format!("radius {:?}", f[4])))?;
                let mut t = LocationTx {
                    tid: Digest::ZERO,
                    zone_id: Digest::from_hex(f[1])?,
                    lat: MicroDegrees::parse(f[2])?,
                    lon: MicroDegrees::parse(f[3])?,
                    radius_m,
                    at: RecordTime::parse(f[5], f[6])?,
                    zone_type: f[7].parse()?,
                    signer_key: PublicKey::from_hex(f[8])?,
                    ds: Signature::from_hex(f[9])?,
                };
                check_lat_lon(t.lat, t.lon).map_err(|e| parse_err(e.to_string()))?;
                t.tid = t.recompute_tid();
                Transaction::Location(t)
            }
            _ => return Err(parse_err("expected IND| or LOC| line")),
        };
        if tx.to_line() != line {
            return Err(parse_err("non-canonical transaction line"));
        }
        Ok(tx)
    }
}

/// True iff the TID recomputes from the fields and the issuer's signature
/// verifies over it. Zone transactions additionally require the zone id to
/// match the coordinates. Malformed key bytes yield `false`.
pub fn verify_tx(tx: &Transaction) -> bool {
    match tx {
        Transaction::Individual(t) => {
            t.recompute_tid() == t.tid && crypto::verifies(&t.signer_key, &t.tid, &t.ds)
        }
        Transaction::Location(t) => {
            check_lat_lon(t.lat, t.lon).is_ok()
                && t.radius_m > 0
                && t.zone_id == zone_id(t.lat, t.lon)
                && t.recompute_tid() == t.tid
                && crypto::verifies(&t.signer_key, &t.tid, &t.ds)
        }
    }
}

/// Effective-record ordering: later (date, time) wins, ties go to the
/// lexicographically greater TID.
pub fn recency_cmp(a: (&RecordTime, &Digest), b: (&RecordTime, &Digest)) -> Ordering {
    a.0.cmp(b.0).then_with(|| a.1.cmp(b.1))
}
