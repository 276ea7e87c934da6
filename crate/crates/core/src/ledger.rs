//! A node's append-only chain with derived status and zone indexes.
//!
//! The ledger file is the concatenation of block records in height order.
//! [`NodeLedger::load`] only parses: a file whose content was altered but is
//! still well-formed loads fine and then fails [`NodeLedger::validate_chain`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::blockpipe::{Block, BlockFault, BlockHeader, ChainTip};
use crate::crypto::{hash, CryptoError, Digest, PrivateKey, PublicKey};
use crate::txmodel::{
    recency_cmp, CovidStatus, EpidRecord, IndividualTx, LocationTx, RecordTime, Transaction,
    TxError,
};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("chain break at height {height}: {msg}")]
    ChainBreak { height: u64, msg: String },
    #[error("invalid block at height {height}: {fault}")]
    InvalidBlock { height: u64, fault: BlockFault },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("decryption failed for transaction {0}")]
    Decryption(Digest),
    #[error("transaction {tid}: {source}")]
    Record { tid: Digest, source: TxError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The effective record for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusEntry {
    pub status: CovidStatus,
    pub at: RecordTime,
    pub tid: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusQueryResult {
    pub found: bool,
    pub status: Option<CovidStatus>,
    pub as_of: Option<RecordTime>,
}

impl StatusQueryResult {
    /// `subject=<hex> status=<token> as_of=<iso>`, or `no-record`.
    pub fn to_line(&self, subject: &Digest) -> String {
        match (self.status, self.as_of) {
            (Some(s), Some(at)) if self.found => {
                format!("subject={} status={} as_of={}", subject.to_hex(), s, at.iso())
            }
            _ => "no-record".to_owned(),
        }
    }
}

/// First failure found by [`NodeLedger::validate_chain`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainFault {
    pub height: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLedger {
    chain: Vec<Block>,
    status_index: HashMap<Digest, StatusEntry>,
    zone_index: BTreeMap<Digest, LocationTx>,
}

fn is_newer(candidate: (&RecordTime, &Digest), current: (&RecordTime, &Digest)) -> bool {
    recency_cmp(candidate, current).is_gt()
}

impl NodeLedger {
    /// Starts a ledger from a genesis block.
    pub fn new(genesis: Block) -> Result<Self, LedgerError> {
        check_genesis(&genesis)?;
        let mut l = NodeLedger {
            chain: Vec::new(),
            status_index: HashMap::new(),
            zone_index: BTreeMap::new(),
        };
        l.push_indexed(genesis);
        Ok(l)
    }

    /// Builds a ledger from blocks without validating them.
    pub fn from_blocks_unchecked(blocks: Vec<Block>) -> Self {
        let mut l = NodeLedger {
            chain: Vec::with_capacity(blocks.len()),
            status_index: HashMap::new(),
            zone_index: BTreeMap::new(),
        };
        for b in blocks {
            l.push_indexed(b);
        }
        l
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn height(&self) -> u64 {
        self.chain.last().map_or(0, Block::height)
    }

    pub fn tip(&self) -> ChainTip {
        let last = self.chain.last().expect("ledger always holds genesis");
        ChainTip { next_height: last.height() + 1, prev_hash: last.header.link_hash() }
    }

    pub fn status_index(&self) -> &HashMap<Digest, StatusEntry> {
        &self.status_index
    }

    pub fn zone_index(&self) -> &BTreeMap<Digest, LocationTx> {
        &self.zone_index
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.chain.iter().flat_map(|b| b.txs.iter())
    }

    fn push_indexed(&mut self, block: Block) {
        for tx in &block.txs {
            match tx {
                Transaction::Individual(t) => {
                    let entry = StatusEntry { status: t.status, at: t.at, tid: t.tid };
                    self.status_index
                        .entry(t.subject)
                        .and_modify(|cur| {
                            if is_newer((&entry.at, &entry.tid), (&cur.at, &cur.tid)) {
                                *cur = entry;
                            }
                        })
                        .or_insert(entry);
                }
                Transaction::Location(z) => {
                    self.zone_index
                        .entry(z.zone_id)
                        .and_modify(|cur| {
                            if is_newer((&z.at, &z.tid), (&cur.at, &cur.tid)) {
                                *cur = z.clone();
                            }
                        })
                        .or_insert_with(|| z.clone());
                }
            }
        }
        self.chain.push(block);
    }

    /// Appends a sealed block after checking its link, signatures, Merkle
    /// root and transactions.
    pub fn append_block(&mut self, block: Block) -> Result<(), LedgerError> {
        let tip = self.tip();
        let h = &block.header;
        if h.height != tip.next_height {
            return Err(LedgerError::ChainBreak {
                height: h.height,
                msg: format!("expected height {}", tip.next_height),
            });
        }
        if h.prev_hash != tip.prev_hash {
            return Err(LedgerError::ChainBreak {
                height: h.height,
                msg: "prev_hash does not match the current tip".into(),
            });
        }
        block.check().map_err(|fault| LedgerError::InvalidBlock { height: h.height, fault })?;
        self.push_indexed(block);
        Ok(())
    }

    /// Checks every link, Merkle root and signature from genesis to tip.
    pub fn validate_chain(&self) -> Result<u64, ChainFault> {
        let Some(first) = self.chain.first() else {
            return Err(ChainFault { height: 0, reason: "empty chain".into() });
        };
        check_genesis(first).map_err(|e| ChainFault { height: 0, reason: e.to_string() })?;
        for (i, pair) in self.chain.windows(2).enumerate() {
            let (prev, cur) = (&pair[0], &pair[1]);
            let expected = i as u64 + 1;
            let fault = |reason: String| ChainFault { height: expected, reason };
            if cur.height() != expected {
                return Err(fault(format!("height field {} out of sequence", cur.height())));
            }
            if cur.header.prev_hash != prev.header.link_hash() {
                return Err(fault("prev_hash does not link".into()));
            }
            cur.check().map_err(|f| fault(f.to_string()))?;
        }
        Ok(self.height())
    }

    pub fn is_valid(&self) -> bool {
        self.validate_chain().is_ok()
    }

    pub fn query_subject(&self, subject: &Digest) -> StatusQueryResult {
        match self.status_index.get(subject) {
            Some(e) => StatusQueryResult { found: true, status: Some(e.status), as_of: Some(e.at) },
            None => StatusQueryResult { found: false, status: None, as_of: None },
        }
    }

    /// Effective status of the holder of `subject_pub`, looked up by the
    /// key's hash.
    pub fn query_status(&self, subject_pub: &PublicKey) -> StatusQueryResult {
        self.query_subject(&subject_pub.fingerprint())
    }

    /// Latest declaration per zone, ordered by zone id. Green zones are
    /// included.
    pub fn active_zones(&self) -> Vec<LocationTx> {
        self.zone_index.values().cloned().collect()
    }

    /// Decrypts every epidemiological record with the Central Authority key.
    /// Results are keyed by subject digest only. Fails on the first record
    /// the key cannot open.
    pub fn read_epidemiology(
        &self,
        ca_private: &PrivateKey,
    ) -> Result<Vec<(Digest, CovidStatus, EpidRecord)>, LedgerError> {
        self.transactions()
            .filter_map(Transaction::as_individual)
            .map(|t: &IndividualTx| match t.decrypt_epid(ca_private) {
                Ok(rec) => Ok((t.subject, t.status, rec)),
                Err(TxError::Crypto(CryptoError::DecryptionFailed)) => {
                    Err(LedgerError::Decryption(t.tid))
                }
                Err(source) => Err(LedgerError::Record { tid: t.tid, source }),
            })
            .collect()
    }

    /// Canonical serialization: block records in height order.
    pub fn serialize(&self) -> String {
        self.chain.iter().map(Block::to_record).collect()
    }

    pub fn digest(&self) -> Digest {
        hash(self.serialize().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self, LedgerError> {
        Ok(NodeLedger::from_blocks_unchecked(parse_blocks(text)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), LedgerError> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        NodeLedger::parse(&fs::read_to_string(path)?)
    }

    /// Replaces a stored block without any checks. Exists to model local
    /// corruption or tampering of one node's copy.
    pub fn replace_block_unchecked(&mut self, height: usize, block: Block) {
        let mut blocks = std::mem::take(&mut self.chain);
        blocks[height] = block;
        *self = NodeLedger::from_blocks_unchecked(blocks);
    }
}

fn check_genesis(b: &Block) -> Result<(), LedgerError> {
    let invalid = |msg: &str| LedgerError::ChainBreak { height: 0, msg: msg.to_owned() };
    if b.height() != 0 {
        return Err(invalid("genesis must have height 0"));
    }
    if b.header.prev_hash != Digest::ZERO {
        return Err(invalid("genesis prev_hash must be zero"));
    }
    if !b.txs.is_empty() {
        return Err(invalid("genesis must have an empty body"));
    }
    b.check().map_err(|fault| LedgerError::InvalidBlock { height: 0, fault })
}

/// Parses concatenated block records. Each record is a header line, its
/// transaction lines, and a terminating blank line.
pub fn parse_blocks(text: &str) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    let mut current: Option<Block> = None;
    let mut last_line = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let n = i + 1;
        last_line = n;
        let err = |msg: String| LedgerError::Parse { line: n, msg };
        let body = line
            .strip_suffix('\n')
            .ok_or_else(|| err("missing line terminator".into()))?;
        match (&mut current, body) {
            (None, "") => return Err(err("unexpected blank line".into())),
            (None, l) => {
                let header = BlockHeader::parse_line(l).map_err(|e| err(e.to_string()))?;
                current = Some(Block { header, txs: Vec::new() });
            }
            (Some(_), "") => blocks.push(current.take().expect("checked Some")),
            (Some(b), l) => {
                let tx = Transaction::parse_line(l).map_err(|e| err(e.to_string()))?;
                b.txs.push(tx);
            }
        }
    }
    if current.is_some() {
        return Err(LedgerError::Parse { line: last_line, msg: "truncated block record".into() });
    }
    if blocks.is_empty() {
        return Err(LedgerError::Parse { line: 0, msg: "ledger file holds no blocks".into() });
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockpipe::{finalize, genesis, mine_block, validate_block};
    use crate::crypto::{generate_keypair, KeyPair};
    use crate::txmodel::{make_individual_tx, make_location_tx, ZoneType};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn kp(b: u8) -> KeyPair {
        generate_keypair(&[b; 32]).unwrap()
    }

    fn day(d: u32) -> RecordTime {
        RecordTime::from_ymd_hms(2020, 8, d, 9, 0, 0).unwrap()
    }

    fn seal(l: &NodeLedger, txs: Vec<Transaction>, d: u32) -> Block {
        let m = mine_block(txs, l.tip(), day(d), &kp(2)).unwrap();
        let e1 = validate_block(&m, &kp(11)).unwrap();
        let e2 = validate_block(&m, &kp(12)).unwrap();
        finalize(m, e1, e2).unwrap()
    }

    fn ind(subject: &KeyPair, s: CovidStatus, d: u32, rng: &mut ChaCha20Rng) -> Transaction {
        let e = EpidRecord::new(20 + d, "F", "O-", "Bihar", vec![]).unwrap();
        make_individual_tx(subject.public(), s, day(d), &e, kp(9).public(), &kp(1), rng)
            .unwrap()
            .into()
    }

    fn fresh() -> NodeLedger {
        NodeLedger::new(genesis(day(1), &kp(2), &kp(11), &kp(12))).unwrap()
    }

    #[test]
    fn append_and_links() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut l = fresh();
        let b1 = seal(&l, vec![ind(&kp(50), CovidStatus::Negative, 2, &mut rng)], 2);
        l.append_block(b1).unwrap();
        assert_eq!(l.height(), 1);
        let b2 = seal(&l, vec![ind(&kp(51), CovidStatus::Negative, 3, &mut rng)], 3);
        l.append_block(b2).unwrap();
        let b3 = seal(&l, vec![ind(&kp(52), CovidStatus::Negative, 4, &mut rng)], 4);

        let mut stale = b3.clone();
        stale.header.prev_hash = l.chain()[1].header.link_hash();
        assert!(matches!(l.append_block(stale), Err(LedgerError::ChainBreak { .. })));

        let mut flipped = b3;
        if let Transaction::Individual(t) = &mut flipped.txs[0] {
            t.status = CovidStatus::Positive;
            t.tid = t.recompute_tid();
        }
        assert!(matches!(l.append_block(flipped), Err(LedgerError::InvalidBlock { .. })));
        assert_eq!(l.validate_chain(), Ok(2));
    }

    #[test]
    fn latest_status_wins() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let bob = kp(60);
        let mut l = fresh();
        assert!(!l.query_status(bob.public()).found);
        let b = seal(&l, vec![ind(&bob, CovidStatus::InQuarantine, 3, &mut rng)], 3);
        l.append_block(b).unwrap();
        // earlier-dated record arriving later does not override
        let b = seal(&l, vec![ind(&bob, CovidStatus::Negative, 1, &mut rng)], 4);
        l.append_block(b).unwrap();
        let r = l.query_status(bob.public());
        assert_eq!(r.status, Some(CovidStatus::InQuarantine));
        assert_eq!(r.as_of, Some(day(3)));
        assert!(r.to_line(&bob.public().fingerprint()).contains("status=IQ as_of=2020-08-03T09:00:00Z"));
    }

    #[test]
    fn zones_latest_per_id() {
        let lea = kp(7);
        let mut l = fresh();
        let red = make_location_tx(10.0, 20.0, 400, day(2), ZoneType::Red, &lea).unwrap();
        let orange = make_location_tx(10.0, 20.0, 400, day(3), ZoneType::Orange, &lea).unwrap();
        let other = make_location_tx(11.0, 20.0, 400, day(2), ZoneType::Green, &lea).unwrap();
        let b = seal(&l, vec![red.into(), other.clone().into(), orange.clone().into()], 3);
        l.append_block(b).unwrap();
        let zones = l.active_zones();
        assert_eq!(zones.len(), 2);
        assert!(zones.contains(&orange));
        assert!(zones.contains(&other));
    }

    #[test]
    fn epidemiology_only_for_ca() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut l = fresh();
        let txs = (0..3).map(|i| ind(&kp(70 + i), CovidStatus::Negative, 2, &mut rng)).collect();
        let b = seal(&l, txs, 2);
        l.append_block(b).unwrap();
        let recs = l.read_epidemiology(kp(9).private()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].2.age(), 22);
        assert!(matches!(l.read_epidemiology(kp(8).private()), Err(LedgerError::Decryption(_))));
    }

    #[test]
    fn parse_rejects_truncation() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut l = fresh();
        let b = seal(&l, vec![ind(&kp(80), CovidStatus::Negative, 2, &mut rng)], 2);
        l.append_block(b).unwrap();
        let text = l.serialize();
        assert_eq!(NodeLedger::parse(&text).unwrap(), l);
        let cut = &text[..text.len() - 1];
        assert!(matches!(NodeLedger::parse(cut), Err(LedgerError::Parse { .. })));
        let cut = &text[..text.len() - 40];
        assert!(matches!(NodeLedger::parse(cut), Err(LedgerError::Parse { line: 4, .. })));
    }
}
