//! Mempool ingestion, block cutting, miner signing, dual-validator
//! co-signing and sealing.
//!
//! A block moves through three shapes: a list of transactions cut from the
//! [`Mempool`], a [`MinedBlock`] carrying the miner's signature, and a sealed
//! [`Block`] once two distinct validators have endorsed it. The miner and
//! both validators sign the block's seal digest, which commits to the Merkle
//! root together with the height, previous-block hash and timestamp.

use std::collections::{HashSet, VecDeque};

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::crypto::{self, hash, Digest, KeyPair, PublicKey, Signature};
use crate::merkle::merkle_root;
use crate::roles::RoleRegistry;
use crate::txmodel::{verify_tx, RecordTime, Transaction, TxError};

/// Validators co-signing each block.
pub const VALIDATORS_PER_BLOCK: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("rejected transaction {0}: signature or TID check failed")]
    RejectedTransaction(Digest),
    #[error("duplicate transaction {0}")]
    Duplicate(Digest),
    #[error("transaction {0} signed by a key without authoring rights")]
    UnauthorizedSigner(Digest),
    #[error("mining aborted: invalid transaction {0}")]
    InvalidTransaction(Digest),
    #[error("a block needs at least one transaction")]
    EmptyBlock,
    #[error("need at least {needed} validators, registry has {available}")]
    InsufficientValidators { needed: usize, available: usize },
    #[error("validation refused: {reason}")]
    ValidationRefused { reason: String, tid: Option<Digest> },
    #[error("finalize refused: {0}")]
    FinalizeRefused(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockThreshold {
    /// Cut once this many transactions are pending.
    Count(usize),
    /// Cut once the pending wire size reaches this many bytes.
    Bytes(usize),
}

impl Default for BlockThreshold {
    fn default() -> Self {
        BlockThreshold::Count(4)
    }
}

impl BlockThreshold {
    pub const ONE_MIB: BlockThreshold = BlockThreshold::Bytes(1 << 20);
}

/// Arrival-ordered pending transactions.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    queue: VecDeque<Transaction>,
    tids: HashSet<Digest>,
    cumulative_size: usize,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn cumulative_size(&self) -> usize {
        self.cumulative_size
    }

    pub fn pending(&self) -> impl Iterator<Item = &Transaction> {
        self.queue.iter()
    }

    /// Appends `tx` at the tail. The transaction must verify and its TID must
    /// not already be pending.
    pub fn ingest(&mut self, tx: Transaction) -> Result<(), PipelineError> {
        if !verify_tx(&tx) {
            return Err(PipelineError::RejectedTransaction(*tx.tid()));
        }
        if !self.tids.insert(*tx.tid()) {
            return Err(PipelineError::Duplicate(*tx.tid()));
        }
        self.cumulative_size += tx.wire_size();
        self.queue.push_back(tx);
        Ok(())
    }

    /// Removes and returns the head segment once `policy` is met.
    ///
    /// In byte mode the segment ends with the first transaction at which the
    /// running wire size reaches the threshold.
    pub fn cut_block(&mut self, policy: BlockThreshold) -> Option<Vec<Transaction>> {
        let take = match policy {
            BlockThreshold::Count(n) => (n > 0 && self.queue.len() >= n).then_some(n)?,
            BlockThreshold::Bytes(limit) => {
                if self.cumulative_size < limit {
                    return None;
                }
                let mut running = 0;
                self.queue.iter().position(|tx| {
                    running += tx.wire_size();
                    running >= limit
                })? + 1
            }
        };
        Some(self.take_front(take))
    }

    /// Removes everything pending.
    pub fn drain_all(&mut self) -> Vec<Transaction> {
        self.take_front(self.queue.len())
    }

    fn take_front(&mut self, n: usize) -> Vec<Transaction> {
        let out: Vec<Transaction> = self.queue.drain(..n).collect();
        for tx in &out {
            self.tids.remove(tx.tid());
            self.cumulative_size -= tx.wire_size();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainTip {
    pub next_height: u64,
    pub prev_hash: Digest,
}

/// Digest signed by the miner and both validators.
pub fn seal_digest(
    height: u64,
    prev_hash: &Digest,
    merkle_root: &Digest,
    timestamp: &RecordTime,
) -> Digest {
    hash(
        format!("SEAL|{height}|{}|{}|{}", prev_hash.to_hex(), merkle_root.to_hex(), timestamp.iso())
            .as_bytes(),
    )
}

pub fn leaves(txs: &[Transaction]) -> Vec<Digest> {
    txs.iter().map(Transaction::leaf_hash).collect()
}

/// Merkle root of a transaction list; the empty (genesis) body maps to the
/// zero digest.
pub fn body_root(txs: &[Transaction]) -> Digest {
    merkle_root(&leaves(txs)).unwrap_or(Digest::ZERO)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endorsement {
    pub key: PublicKey,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedBlock {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub timestamp: RecordTime,
    pub miner_key: PublicKey,
    pub miner_sig: Signature,
    pub txs: Vec<Transaction>,
}

impl MinedBlock {
    pub fn seal_digest(&self) -> Digest {
        seal_digest(self.height, &self.prev_hash, &self.merkle_root, &self.timestamp)
    }
}

pub fn mine_block(
    txs: Vec<Transaction>,
    tip: ChainTip,
    timestamp: RecordTime,
    miner: &KeyPair,
) -> Result<MinedBlock, PipelineError> {
    if txs.is_empty() {
        return Err(PipelineError::EmptyBlock);
    }
    if let Some(bad) = txs.iter().find(|t| !verify_tx(t)) {
        return Err(PipelineError::InvalidTransaction(*bad.tid()));
    }
    let merkle_root = body_root(&txs);
    let sig = miner.sign(&seal_digest(tip.next_height, &tip.prev_hash, &merkle_root, &timestamp));
    Ok(MinedBlock {
        height: tip.next_height,
        prev_hash: tip.prev_hash,
        merkle_root,
        timestamp,
        miner_key: *miner.public(),
        miner_sig: sig,
        txs,
    })
}

/// Draws `count` distinct registry entries uniformly without replacement.
pub fn select_validator_set<T: Clone>(
    registry: &[T],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<T>, PipelineError> {
    if registry.len() < count {
        return Err(PipelineError::InsufficientValidators {
            needed: count,
            available: registry.len(),
        });
    }
    Ok(sample(rng, registry.len(), count).into_iter().map(|i| registry[i].clone()).collect())
}

pub fn select_validators<T: Clone>(
    registry: &[T],
    rng: &mut impl Rng,
) -> Result<(T, T), PipelineError> {
    let mut v = select_validator_set(registry, VALIDATORS_PER_BLOCK, rng)?;
    let second = v.pop().expect("two drawn");
    let first = v.pop().expect("two drawn");
    Ok((first, second))
}

/// Re-checks the miner signature, every transaction and the Merkle root, then
/// endorses the block.
pub fn validate_block(block: &MinedBlock, validator: &KeyPair) -> Result<Endorsement, PipelineError> {
    let refuse = |reason: &str, tid: Option<Digest>| PipelineError::ValidationRefused {
        reason: reason.to_owned(),
        tid,
    };
    let seal = block.seal_digest();
    if !crypto::verifies(&block.miner_key, &seal, &block.miner_sig) {
        return Err(refuse("miner signature does not verify", None));
    }
    if let Some(bad) = block.txs.iter().find(|t| !verify_tx(t)) {
        return Err(refuse("transaction fails verification", Some(*bad.tid())));
    }
    if block.txs.is_empty() || body_root(&block.txs) != block.merkle_root {
        return Err(refuse("merkle root mismatch", None));
    }
    Ok(Endorsement { key: *validator.public(), sig: validator.sign(&seal) })
}

/// Miner-side check of both endorsements, producing the sealed block.
pub fn finalize(block: MinedBlock, v1: Endorsement, v2: Endorsement) -> Result<Block, PipelineError> {
    if v1.key == v2.key {
        return Err(PipelineError::FinalizeRefused("validators must be distinct".into()));
    }
    let seal = block.seal_digest();
    for (n, e) in [(1, &v1), (2, &v2)] {
        if !crypto::verifies(&e.key, &seal, &e.sig) {
            return Err(PipelineError::FinalizeRefused(format!(
                "validator {n} signature does not verify"
            )));
        }
    }
    Ok(Block {
        header: BlockHeader {
            height: block.height,
            prev_hash: block.prev_hash,
            merkle_root: block.merkle_root,
            timestamp: block.timestamp,
            miner_key: block.miner_key,
            miner_sig: block.miner_sig,
            validator1_key: v1.key,
            validator1_sig: v1.sig,
            validator2_key: v2.key,
            validator2_sig: v2.sig,
        },
        txs: block.txs,
    })
}

/// Height-0 block with an empty body, signed by the miner and two validators.
pub fn genesis(timestamp: RecordTime, miner: &KeyPair, v1: &KeyPair, v2: &KeyPair) -> Block {
    let seal = seal_digest(0, &Digest::ZERO, &Digest::ZERO, &timestamp);
    Block {
        header: BlockHeader {
            height: 0,
            prev_hash: Digest::ZERO,
            merkle_root: Digest::ZERO,
            timestamp,
            miner_key: *miner.public(),
            miner_sig: miner.sign(&seal),
            validator1_key: *v1.public(),
            validator1_sig: v1.sign(&seal),
            validator2_key: *v2.public(),
            validator2_sig: v2.sign(&seal),
        },
        txs: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub timestamp: RecordTime,
    pub miner_key: PublicKey,
    pub miner_sig: Signature,
    pub validator1_key: PublicKey,
    pub validator1_sig: Signature,
    pub validator2_key: PublicKey,
    pub validator2_sig: Signature,
}

impl BlockHeader {
    pub fn seal_digest(&self) -> Digest {
        seal_digest(self.height, &self.prev_hash, &self.merkle_root, &self.timestamp)
    }

    /// `BLK|height|prev|mrh|timestamp|miner_key|miner_sig|v1_key|v1_sig|v2_key|v2_sig`
    pub fn to_line(&self) -> String {
        format!(
            "BLK|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.height,
            self.prev_hash.to_hex(),
            self.merkle_root.to_hex(),
            self.timestamp.iso(),
            self.miner_key.to_hex(),
            self.miner_sig.to_hex(),
            self.validator1_key.to_hex(),
            self.validator1_sig.to_hex(),
            self.validator2_key.to_hex(),
            self.validator2_sig.to_hex(),
        )
    }

    /// The header line with the three signature fields removed; hashed to
    /// form the next block's `prev_hash`.
    pub fn link_bytes(&self) -> Vec<u8> {
        format!(
            "BLK|{}|{}|{}|{}|{}|{}|{}",
            self.height,
            self.prev_hash.to_hex(),
            self.merkle_root.to_hex(),
            self.timestamp.iso(),
            self.miner_key.to_hex(),
            self.validator1_key.to_hex(),
            self.validator2_key.to_hex(),
        )
        .into_bytes()
    }

    pub fn link_hash(&self) -> Digest {
        hash(&self.link_bytes())
    }

    pub fn parse_line(line: &str) -> Result<Self, TxError> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 11 || f[0] != "BLK" {
            return Err(TxError::Parse("expected an 11-field BLK| header line".into()));
        }
        let height: u64 =
            f[1].parse().map_err(|_| TxError::Parse(format!("block height {:?}", f[1])))?;
        let ts = f[4]
            .strip_suffix('Z')
            .and_then(|s| s.split_once('T'))
            .ok_or_else(|| TxError::Parse(format!("block timestamp {:?}", f[4])))?;
        let header = BlockHeader {
            height,
            prev_hash: Digest::from_hex(f[2])?,
            merkle_root: Digest::from_hex(f[3])?,
            timestamp: RecordTime::parse(ts.0, ts.1)?,
            miner_key: PublicKey::from_hex(f[5])?,
            miner_sig: Signature::from_hex(f[6])?,
            validator1_key: PublicKey::from_hex(f[7])?,
            validator1_sig: Signature::from_hex(f[8])?,
            validator2_key: PublicKey::from_hex(f[9])?,
            validator2_sig: Signature::from_hex(f[10])?,
        };
        if header.to_line() != line {
            return Err(TxError::Parse("non-canonical header line".into()));
        }
        Ok(header)
    }
}

/// A sealed block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
}

/// Why a sealed block fails its self-consistency checks.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockFault {
    #[error("{0} signature does not verify")]
    Signature(&'static str),
    #[error("validator keys are not distinct")]
    DuplicateValidator,
    #[error("merkle root mismatch")]
    MerkleRoot,
    #[error("transaction {0} fails verification")]
    Transaction(Digest),
    #[error("empty body outside genesis")]
    EmptyBody,
}

impl Block {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Header line, transaction lines, then a blank line.
    pub fn to_record(&self) -> String {
        let mut out = self.header.to_line();
        out.push('\n');
        for tx in &self.txs {
            out.push_str(&tx.to_line());
            out.push('\n');
        }
        out.push('\n');
        out
    }

    /// Everything about a sealed block that can be checked without its
    /// predecessor.
    pub fn check(&self) -> Result<(), BlockFault> {
        let h = &self.header;
        if self.txs.is_empty() && h.height != 0 {
            return Err(BlockFault::EmptyBody);
        }
        if h.validator1_key == h.validator2_key {
            return Err(BlockFault::DuplicateValidator);
        }
        let seal = h.seal_digest();
        for (who, key, sig) in [
            ("miner", &h.miner_key, &h.miner_sig),
            ("validator 1", &h.validator1_key, &h.validator1_sig),
            ("validator 2", &h.validator2_key, &h.validator2_sig),
        ] {
            if !crypto::verifies(key, &seal, sig) {
                return Err(BlockFault::Signature(who));
            }
        }
        if body_root(&self.txs) != h.merkle_root {
            return Err(BlockFault::MerkleRoot);
        }
        if let Some(bad) = self.txs.iter().find(|t| !verify_tx(t)) {
            return Err(BlockFault::Transaction(*bad.tid()));
        }
        Ok(())
    }
}

/// The block miner: admits transactions from registered authors, cuts blocks
/// by threshold, and drives validation and sealing.
#[derive(Debug, Clone)]
pub struct BlockMiner {
    keys: KeyPair,
    roles: RoleRegistry,
    pool: Mempool,
    threshold: BlockThreshold,
}

impl BlockMiner {
    pub fn new(keys: KeyPair, roles: RoleRegistry, threshold: BlockThreshold) -> Self {
        BlockMiner { keys, roles, pool: Mempool::new(), threshold }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn pool(&self) -> &Mempool {
        &self.pool
    }

    pub fn roles(&self) -> &RoleRegistry {
        &self.roles
    }

    /// Role check, then mempool admission.
    pub fn submit(&mut self, tx: Transaction) -> Result<(), PipelineError> {
        let authorized = match &tx {
            Transaction::Individual(t) => self.roles.may_author_individual(&t.signer_key),
            Transaction::Location(t) => self.roles.may_author_location(&t.signer_key),
        };
        if !authorized {
            return Err(PipelineError::UnauthorizedSigner(*tx.tid()));
        }
        self.pool.ingest(tx)
    }

    pub fn cut(&mut self) -> Option<Vec<Transaction>> {
        self.pool.cut_block(self.threshold)
    }

    pub fn drain_all(&mut self) -> Vec<Transaction> {
        self.pool.drain_all()
    }

    pub fn mine(
        &self,
        txs: Vec<Transaction>,
        tip: ChainTip,
        timestamp: RecordTime,
    ) -> Result<MinedBlock, PipelineError> {
        mine_block(txs, tip, timestamp, &self.keys)
    }

    /// Runs a mined block past two validators chosen from `validators` and
    /// seals it. Validator refusal drops the block.
    pub fn seal_with(
        &self,
        mined: MinedBlock,
        validators: &[KeyPair],
        rng: &mut impl Rng,
    ) -> Result<Block, PipelineError> {
        let (v1, v2) = select_validators(validators, rng)?;
        let e1 = validate_block(&mined, &v1)?;
        let e2 = validate_block(&mined, &v2)?;
        finalize(mined, e1, e2)
    }
}
