//! Simulated blockchains.
//!
//! Each chain is a deterministic clock process parameterized by a
//! [`ChainProfile`]: blocks are cut every `block_interval` seconds of logical
//! time, a pending transaction becomes eligible once it has aged roughly
//! `confirmation_latency` seconds, and the mempool is capacity-limited with
//! fee-based eviction. No consensus puzzle is solved; what matters downstream
//! is latency, fees, mempool economics and the cost of rewriting history.

mod chain;
pub mod wallet;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use parking_lot::Mutex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use chain::{Chain, ChainState};
pub use wallet::{verify_sig, PublicKey, Signature, Wallet};

use crate::merkle::Digest;
use crate::num::ratio_to_decimal;
use crate::time::Timestamp;

/// Hourly cost of sustaining a majority attack on the reference
/// (Ethereum-like) network, in USD.
pub const REFERENCE_HOURLY_ATTACK_COST: f64 = 400_000.0;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid chain profile: {0}")]
    InvalidProfile(String),
    #[error("chain `{0}` already exists")]
    DuplicateChain(String),
    #[error("unknown chain `{0}`")]
    UnknownChain(String),
    #[error("chain `{0}` is not accepting submissions")]
    Unavailable(String),
    #[error("transaction rejected: {0}")]
    Rejected(String),
    #[error("malformed key material: {0}")]
    MalformedKey(String),
    #[error("invalid attack: {0}")]
    InvalidAttack(String),
    #[error("chain integrity violated at height {height}: {reason}")]
    Integrity { height: u64, reason: String },
    #[error("chain state encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// Fee amount in pico-USD (1e-12 USD). Serialized as a decimal USD string.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fee(pub u64);

impl Fee {
    pub const PICO_PER_USD: u64 = 1_000_000_000_000;

    pub fn from_usd(s: &str) -> Result<Self, ChainError> {
        let bad = || ChainError::InvalidProfile(format!("bad fee `{s}`"));
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if frac.len() > 12 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_pico: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<12}").parse().map_err(|_| bad())? };
        whole.checked_mul(Self::PICO_PER_USD).and_then(|w| w.checked_add(frac_pico)).map(Fee).ok_or_else(bad)
    }

    pub fn pico(self) -> u64 {
        self.0
    }

    pub fn to_usd(self) -> Ratio<i128> {
        Ratio::new(i128::from(self.0), i128::from(Self::PICO_PER_USD))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::PICO_PER_USD as f64
    }

    pub fn scaled(self, factor: u64) -> Self {
        Fee(self.0.saturating_mul(factor))
    }
}

impl fmt::Display for Fee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&ratio_to_decimal(&self.to_usd(), 12))
    }
}

impl fmt::Debug for Fee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${self}")
    }
}

impl Serialize for Fee {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fee {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Fee::from_usd(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainProfile {
    pub chain_id: String,
    pub fee_per_tx: Fee,
    /// Seconds between blocks.
    pub block_interval: u64,
    /// Target age (seconds) before a pending tx is included.
    pub confirmation_latency: u64,
    pub mempool_capacity: usize,
    /// Hour-equivalents of reference-network attack effort per rewritten block.
    pub rollback_resistance: f64,
}

impl ChainProfile {
    pub fn validate(&self) -> Result<(), ChainError> {
        let bad = |m: &str| Err(ChainError::InvalidProfile(format!("{}: {m}", self.chain_id)));
        if self.chain_id.is_empty() {
            return bad("empty chain_id");
        }
        if self.block_interval == 0 {
            return bad("block_interval must be > 0");
        }
        if self.mempool_capacity == 0 {
            return bad("mempool_capacity must be >= 1");
        }
        if !(self.rollback_resistance >= 0.0) || !self.rollback_resistance.is_finite() {
            return bad("rollback_resistance must be finite and >= 0");
        }
        Ok(())
    }

    /// EOS-like: cheap, one-second blocks, confirmed within a minute.
    pub fn eos() -> Self {
        ChainProfile {
            chain_id: "eos".into(),
            fee_per_tx: Fee::from_usd("0.0000636").expect("literal"),
            block_interval: 1,
            confirmation_latency: 60,
            mempool_capacity: 1000,
            rollback_resistance: 0.001 / 3600.0,
        }
    }

    /// Stellar-like: cheap, ledgers every ~4 s, confirmed within a minute.
    pub fn stellar() -> Self {
        ChainProfile {
            chain_id: "stellar".into(),
            fee_per_tx: Fee::from_usd("0.000054").expect("literal"),
            block_interval: 4,
            confirmation_latency: 60,
            mempool_capacity: 1000,
            rollback_resistance: 0.004 / 3600.0,
        }
    }

    /// Ethereum-like: expensive, 15 s blocks, ten-minute confirmation. One
    /// rewritten block costs `15/3600` hours of reference attack effort.
    pub fn ethereum() -> Self {
        ChainProfile {
            chain_id: "ethereum".into(),
            fee_per_tx: Fee::from_usd("0.0036").expect("literal"),
            block_interval: 15,
            confirmation_latency: 600,
            mempool_capacity: 1000,
            rollback_resistance: 15.0 / 3600.0,
        }
    }

    /// Price of a contract-creation transaction on the Ethereum-like chain.
    pub fn ethereum_contract_fee() -> Fee {
        Fee::from_usd("0.019").expect("literal")
    }

    /// Number of blocks produced in `hours` of chain time (rounded up).
    pub fn blocks_per_hours(&self, hours: u64) -> u64 {
        (hours * 3600).div_ceil(self.block_interval)
    }
}

/// Transaction identifier: SHA-256 of the canonical submission encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub Digest);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", &self.0.to_hex()[..12])
    }
}

impl std::str::FromStr for TxId {
    type Err = crate::merkle::MerkleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s).map(TxId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Pending,
    Confirmed,
    Evicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTx {
    pub tx_id: TxId,
    pub chain_id: String,
    pub payload_digest: Digest,
    pub submitter: String,
    pub signature: Signature,
    pub fee: Fee,
    pub submit_time: Timestamp,
    pub status: TxStatus,
    pub block_height: Option<u64>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl ChainTx {
    /// Bytes the submitter signs: chain id, payload digest, submit time.
    pub fn signing_message(chain_id: &str, payload_digest: &Digest, submit_time: Timestamp) -> Vec<u8> {
        let mut buf = Vec::with_capacity(4 + chain_id.len() + 40);
        put_str(&mut buf, chain_id);
        buf.extend_from_slice(payload_digest.as_bytes());
        buf.extend_from_slice(&submit_time.0.to_be_bytes());
        buf
    }

    pub fn compute_id(chain_id: &str, payload_digest: &Digest, submitter: &str, submit_time: Timestamp) -> TxId {
        let mut buf = Vec::with_capacity(8 + chain_id.len() + submitter.len() + 40);
        put_str(&mut buf, chain_id);
        buf.extend_from_slice(payload_digest.as_bytes());
        put_str(&mut buf, submitter);
        buf.extend_from_slice(&submit_time.0.to_be_bytes());
        TxId(Digest::sha256(&buf))
    }

    /// Whether `tx_id` still commits to the tx contents.
    pub fn id_matches_content(&self) -> bool {
        Self::compute_id(&self.chain_id, &self.payload_digest, &self.submitter, self.submit_time) == self.tx_id
    }

    /// Canonical encoding of a confirmed tx, used as a Merkle leaf preimage.
    /// Binds the tx to the block that confirmed it.
    pub fn leaf_encoding(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(128);
        buf.extend_from_slice(b"chaintx\x01");
        put_str(&mut buf, &self.chain_id);
        buf.extend_from_slice(self.tx_id.0.as_bytes());
        buf.extend_from_slice(self.payload_digest.as_bytes());
        put_str(&mut buf, &self.submitter);
        buf.extend_from_slice(&self.submit_time.0.to_be_bytes());
        buf.extend_from_slice(&self.block_height.unwrap_or(u64::MAX).to_be_bytes());
        buf
    }

    pub fn leaf_digest(&self) -> Digest {
        crate::merkle::hash_leaf(&self.leaf_encoding()).expect("leaf encoding is never empty")
    }
}

/// A materialized block. Empty blocks are produced on schedule too, but only
/// blocks that confirm at least one tx are stored; see [`Chain::block_at`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_ids: Vec<TxId>,
    pub timestamp: Timestamp,
    pub block_hash: Digest,
}

impl Block {
    pub fn compute_hash(height: u64, prev_hash: &Digest, tx_ids: &[TxId], timestamp: Timestamp) -> Digest {
        let mut buf = Vec::with_capacity(52 + 32 * tx_ids.len());
        buf.extend_from_slice(&height.to_be_bytes());
        buf.extend_from_slice(prev_hash.as_bytes());
        buf.extend_from_slice(&(tx_ids.len() as u32).to_be_bytes());
        for id in tx_ids {
            buf.extend_from_slice(id.0.as_bytes());
        }
        buf.extend_from_slice(&timestamp.0.to_be_bytes());
        Digest::sha256(&buf)
    }
}

/// Adversarial actions against a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    /// Majority rewrite discarding the top `depth` blocks; their txs go back
    /// to the mempool.
    Rollback { depth: u64 },
    /// Remove a pending tx before it is mined (censorship / interception).
    DropTx { tx_id: TxId },
    /// Fill the mempool with `count` adversary txs paying `fee` each.
    Flood { count: usize, fee: Fee },
    /// Rewrite history so an already-mined tx carries a different payload.
    /// Costs a rollback down to the tx's block.
    Rewrite { tx_id: TxId, payload_digest: Digest },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub chain_id: String,
    pub attack: Attack,
    /// Blocks rewritten (0 for mempool-only attacks).
    pub depth: u64,
    pub txs_returned_to_mempool: Vec<TxId>,
    pub evicted: Vec<TxId>,
    pub injected: Vec<TxId>,
    /// `depth × rollback_resistance × reference hourly cost`, plus fees paid
    /// by flood transactions.
    pub estimated_cost_usd: f64,
}

/// Shared, internally serialized handle to one simulated chain.
///
/// Clones refer to the same chain. Every operation takes the chain lock, so
/// concurrent submitters observe a single total order.
#[derive(Clone)]
pub struct ChainHandle {
    id: Arc<str>,
    inner: Arc<Mutex<Chain>>,
}

impl fmt::Debug for ChainHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainHandle({})", self.id)
    }
}

impl ChainHandle {
    pub fn new(chain: Chain) -> Self {
        ChainHandle { id: Arc::from(chain.profile().chain_id.as_str()), inner: Arc::new(Mutex::new(chain)) }
    }

    pub fn chain_id(&self) -> &str {
        &self.id
    }

    /// Runs `f` with exclusive access to the chain.
    pub fn with<R>(&self, f: impl FnOnce(&mut Chain) -> R) -> R {
        f(&mut self.inner.lock())
    }

    pub fn profile(&self) -> ChainProfile {
        self.inner.lock().profile().clone()
    }

    pub fn now(&self) -> Timestamp {
        self.inner.lock().now()
    }

    pub fn tip_height(&self) -> u64 {
        self.inner.lock().tip_height()
    }

    pub fn mempool_len(&self) -> usize {
        self.inner.lock().mempool_len()
    }

    pub fn register_account(&self, key_id: &str, public_key: PublicKey) -> Result<(), ChainError> {
        self.inner.lock().register_account(key_id, public_key)
    }

    pub fn account_key(&self, key_id: &str) -> Option<PublicKey> {
        self.inner.lock().account_key(key_id)
    }

    pub fn submit_tx(&self, payload_digest: Digest, wallet: &Wallet, fee: Fee) -> Result<TxId, ChainError> {
        self.inner.lock().submit_tx(payload_digest, wallet, fee)
    }

    pub fn submit_signed(
        &self,
        payload_digest: Digest,
        submitter: &str,
        submit_time: Timestamp,
        signature: Signature,
        fee: Fee,
    ) -> Result<TxId, ChainError> {
        self.inner.lock().submit_signed(payload_digest, submitter, submit_time, signature, fee)
    }

    pub fn advance(&self, dt: u64) -> Vec<TxId> {
        self.inner.lock().advance(dt)
    }

    pub fn advance_to(&self, t: Timestamp) -> Vec<TxId> {
        self.inner.lock().advance_to(t)
    }

    pub fn query_tx(&self, tx_id: &TxId) -> Option<ChainTx> {
        self.inner.lock().query_tx(tx_id).cloned()
    }

    pub fn fetch_confirmed(&self, t0: Timestamp, t1: Timestamp) -> Vec<ChainTx> {
        self.inner.lock().fetch_confirmed(t0, t1)
    }

    pub fn inject_attack(&self, attack: Attack) -> Result<AttackReport, ChainError> {
        self.inner.lock().inject_attack(attack, REFERENCE_HOURLY_ATTACK_COST)
    }

    pub fn set_online(&self, online: bool) {
        self.inner.lock().set_online(online)
    }

    pub fn verify_integrity(&self) -> Result<(), ChainError> {
        self.inner.lock().verify_integrity()
    }

    pub fn export_json(&self) -> String {
        self.inner.lock().export_json()
    }

    /// SHA-256 over the exported state; changes iff observable state changes.
    pub fn state_digest(&self) -> Digest {
        Digest::sha256(self.export_json().as_bytes())
    }
}

/// Creates chains and keeps their ids unique.
#[derive(Debug, Default)]
pub struct ChainRegistry {
    genesis_time: Timestamp,
    chains: BTreeMap<String, ChainHandle>,
}

impl ChainRegistry {
    pub fn new(genesis_time: Timestamp) -> Self {
        ChainRegistry { genesis_time, chains: BTreeMap::new() }
    }

    pub fn create_chain(&mut self, profile: ChainProfile, seed: u64) -> Result<ChainHandle, ChainError> {
        if self.chains.contains_key(&profile.chain_id) {
            return Err(ChainError::DuplicateChain(profile.chain_id));
        }
        let handle = ChainHandle::new(Chain::new(profile, seed, self.genesis_time)?);
        self.chains.insert(handle.chain_id().to_string(), handle.clone());
        Ok(handle)
    }

    pub fn insert(&mut self, handle: ChainHandle) -> Result<(), ChainError> {
        if self.chains.contains_key(handle.chain_id()) {
            return Err(ChainError::DuplicateChain(handle.chain_id().to_string()));
        }
        self.chains.insert(handle.chain_id().to_string(), handle);
        Ok(())
    }

    pub fn get(&self, chain_id: &str) -> Result<&ChainHandle, ChainError> {
        self.chains.get(chain_id).ok_or_else(|| ChainError::UnknownChain(chain_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChainHandle> {
        self.chains.values()
    }
}
