//! The company data center: an append-only event log plus a row index of
//! forensic metadata, and the end-of-day synchronization that builds one
//! Merkle tree per first-level chain, anchors its root on the second-level
//! chain and back-fills inclusion proofs into every covered row.
//!
//! A store is either in memory or backed by a directory containing
//! `events.log` (append-only, `u32` length-prefixed canonical event
//! encodings), `rows.jsonl`, `anchors.jsonl` and `devices.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainsim::{verify_sig, ChainError, ChainHandle, ChainTx, Fee, PublicKey, TxId, TxStatus, Wallet};
use crate::edge::{ChainSubmission, DeviceRegistration, EventRecord, SubmissionRecord, SubmissionStatus};
use crate::merkle::{build_tree, hash_leaf, Digest, MerkleError, MerkleProof, PathNode, Side};
use crate::time::{Day, Timestamp};

pub const EVENTS_FILE: &str = "events.log";
pub const ROWS_FILE: &str = "rows.jsonl";
pub const ANCHORS_FILE: &str = "anchors.jsonl";
pub const DEVICES_FILE: &str = "devices.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event `{0}` already stored")]
    Duplicate(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("event `{0}` not found")]
    NotFound(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("device `{0}` is already registered with different keys")]
    DeviceConflict(String),
    #[error("bad device signature on event `{0}`")]
    BadSignature(String),
    #[error("day {day} has not elapsed on chain `{chain}` (now {now})")]
    DayNotElapsed { day: Day, chain: String, now: Timestamp },
    #[error("no path recorded for chain `{chain}` on event `{event_id}`")]
    NoSuchField { event_id: String, chain: String },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("chain: {0}")]
    Chain(#[from] ChainError),
    #[error("merkle: {0}")]
    Merkle(#[from] MerkleError),
    #[error("store I/O at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// The per-event forensic bundle: where the event lives in the log, its
/// digest, the first-level transactions carrying that digest and, once the
/// event's day has been synchronized, the Merkle path, root and anchor tx for
/// each chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub row_id: u64,
    pub event_id: String,
    pub boat_id: String,
    pub device_id: String,
    pub event_time: Timestamp,
    /// Byte offset of the event's record in `events.log`.
    pub event_payload_ref: u64,
    pub payload_digest: Digest,
    pub device_signature: crate::chainsim::Signature,
    pub first_level: BTreeMap<String, ChainSubmission>,
    #[serde(default)]
    pub merkle_paths: BTreeMap<String, MerkleProof>,
    #[serde(default)]
    pub merkle_roots: BTreeMap<String, Digest>,
    #[serde(default)]
    pub anchor_refs: BTreeMap<String, TxId>,
    /// Day of the tree each chain's tx was included in.
    #[serde(default)]
    pub anchored_day: BTreeMap<String, Day>,
}

impl LedgerRow {
    pub fn day(&self) -> Day {
        self.event_time.day()
    }

    pub fn is_anchored_on(&self, chain_id: &str) -> bool {
        self.merkle_paths.contains_key(chain_id)
    }

    pub fn submission_record(&self) -> SubmissionRecord {
        SubmissionRecord {
            event_id: self.event_id.clone(),
            device_id: self.device_id.clone(),
            payload_digest: self.payload_digest,
            entries: self.first_level.values().cloned().collect(),
            created_at: self.first_level.values().map(|e| e.submitted_at).min().unwrap_or(self.event_time),
            device_signature: self.device_signature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStatus {
    Pending,
    Confirmed,
}

/// One day's root for one first-level chain, as committed to the second level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub day: Day,
    pub chain_id: String,
    pub merkle_root: Digest,
    pub leaf_count: usize,
    pub second_level_tx: Option<TxId>,
    pub status: AnchorStatus,
    pub attempts: u32,
}

/// Fleet-signed first-level tx that the store cannot account for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownTx {
    pub tx_id: TxId,
    pub payload_digest: Digest,
    pub submitter: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSyncReport {
    pub leaf_count: usize,
    pub root: Option<Digest>,
    pub anchor_tx: Option<TxId>,
    pub anchor_status: Option<AnchorStatus>,
    /// Events not yet covered by any tree on this chain and no longer in flight.
    pub missing: Vec<String>,
    /// Txs signed with a fleet key that do not match a stored event.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown: Vec<UnknownTx>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub already_anchored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub day: Day,
    pub chains: BTreeMap<String, ChainSyncReport>,
}

impl SyncReport {
    pub fn anchors(&self) -> usize {
        self.chains.values().filter(|c| c.root.is_some()).count()
    }

    pub fn missing_total(&self) -> usize {
        self.chains.values().map(|c| c.missing.len()).sum()
    }

    /// Cross-chain inconsistencies: fleet-signed txs that no stored event
    /// accounts for.
    pub fn anomalies(&self) -> Vec<(&str, &UnknownTx)> {
        self.chains.iter().flat_map(|(id, c)| c.unknown.iter().map(move |u| (id.as_str(), u))).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Which stored field [`DataCenter::tamper_row`] corrupts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Flip one bit of the stored event payload.
    Payload,
    /// Flip one bit of the stored payload digest.
    Digest,
    /// Flip one bit of the first Merkle path node (or append a node if the
    /// path is empty).
    Path,
    /// Flip one bit of the stored Merkle root.
    Root,
    /// Control case: change nothing.
    None,
}

impl std::str::FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown field `{s}` (expected payload, digest, path, root or none)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperOutcome {
    pub event_id: String,
    pub mutation: Mutation,
    pub chain_id: Option<String>,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Default)]
struct Inner {
    dir: Option<PathBuf>,
    log: Vec<u8>,
    rows: Vec<LedgerRow>,
    index: BTreeMap<String, usize>,
    anchors: Vec<AnchorRecord>,
    devices: BTreeMap<String, DeviceRegistration>,
}

/// The data-center store. All operations go through one internal lock.
#[derive(Debug, Default)]
pub struct DataCenter {
    inner: Mutex<Inner>,
}

fn to_lines<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("record serializes") + "\n").collect()
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(StoreError::from))
        .collect()
}

impl Inner {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn persist_rows(&self) -> Result<(), StoreError> {
        match self.path(ROWS_FILE) {
            Some(p) => write_atomic(&p, to_lines(&self.rows).as_bytes()),
            None => Ok(()),
        }
    }

    fn persist_anchors(&self) -> Result<(), StoreError> {
        match self.path(ANCHORS_FILE) {
            Some(p) => write_atomic(&p, to_lines(&self.anchors).as_bytes()),
            None => Ok(()),
        }
    }

    fn persist_devices(&self) -> Result<(), StoreError> {
        match self.path(DEVICES_FILE) {
            Some(p) => write_atomic(&p, serde_json::to_string_pretty(&self.devices)?.as_bytes()),
            None => Ok(()),
        }
    }

    fn row(&self, event_id: &str) -> Result<&LedgerRow, StoreError> {
        self.index.get(event_id).map(|&i| &self.rows[i]).ok_or_else(|| StoreError::NotFound(event_id.to_string()))
    }

    fn event_bytes(&self, offset: u64) -> Result<&[u8], StoreError> {
        let off = offset as usize;
        let len_bytes = self
            .log
            .get(off..off + 4)
            .ok_or_else(|| StoreError::Corrupt(format!("event offset {offset} beyond log")))?;
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        self.log
            .get(off + 4..off + 4 + len)
            .ok_or_else(|| StoreError::Corrupt(format!("event at {offset} truncated")))
    }

    /// key_id -> (device_id, chain_id, public key) over all registered devices.
    fn fleet_keys(&self) -> BTreeMap<String, (String, String, PublicKey)> {
        let mut out = BTreeMap::new();
        for reg in self.devices.values() {
            for (chain, (key_id, pk)) in &reg.chain_keys {
                out.insert(key_id.clone(), (reg.device_id.clone(), chain.clone(), *pk));
            }
        }
        out
    }

    fn fill_anchor_refs(&mut self, day: Day, chain_id: &str, tx: TxId) {
        for row in &mut self.rows {
            if row.anchored_day.get(chain_id) == Some(&day) {
                row.anchor_refs.insert(chain_id.to_string(), tx);
            }
        }
    }

    /// Marks confirmed anchors and resubmits any that were evicted or never
    /// made it onto the second-level chain.
    fn refresh_anchors(&mut self, second_level: &ChainHandle, anchor_wallet: &Wallet, anchor_fee: Fee) {
        let mut refs: Vec<(Day, String, TxId)> = Vec::new();
        for anchor in self.anchors.iter_mut().filter(|a| a.status == AnchorStatus::Pending) {
            let live = anchor.second_level_tx.and_then(|id| second_level.query_tx(&id));
            match live.map(|t| t.status) {
                Some(TxStatus::Confirmed) => anchor.status = AnchorStatus::Confirmed,
                Some(TxStatus::Pending) => {}
                Some(TxStatus::Evicted) | None => {
                    anchor.attempts += 1;
                    if let Ok(id) = second_level.submit_tx(anchor.merkle_root, anchor_wallet, anchor_fee) {
                        anchor.second_level_tx = Some(id);
                        refs.push((anchor.day, anchor.chain_id.clone(), id));
                    }
                }
            }
        }
        for (d, c, id) in refs {
            self.fill_anchor_refs(d, &c, id);
        }
    }
}

impl DataCenter {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a directory-backed store.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut inner = Inner { dir: Some(dir.clone()), ..Inner::default() };
        let events = dir.join(EVENTS_FILE);
        // touch every file up front so an unwritable directory fails here
        for name in [EVENTS_FILE, ROWS_FILE, ANCHORS_FILE] {
            let p = dir.join(name);
            OpenOptions::new().create(true).append(true).open(&p).map_err(io_err(&p))?;
        }
        inner.log = fs::read(&events).map_err(io_err(&events))?;
        inner.rows = read_lines(&dir.join(ROWS_FILE))?;
        inner.anchors = read_lines(&dir.join(ANCHORS_FILE))?;
        let devices = dir.join(DEVICES_FILE);
        if devices.exists() {
            inner.devices = serde_json::from_str(&fs::read_to_string(&devices).map_err(io_err(&devices))?)?;
        } else {
            inner.persist_devices()?;
        }
        for (i, row) in inner.rows.iter().enumerate() {
            if inner.index.insert(row.event_id.clone(), i).is_some() {
                return Err(StoreError::Corrupt(format!("duplicate row for `{}`", row.event_id)));
            }
            inner.event_bytes(row.event_payload_ref)?;
        }
        Ok(DataCenter { inner: Mutex::new(inner) })
    }

    pub fn dir(&self) -> Option<PathBuf> {
        self.inner.lock().dir.clone()
    }

    /// Registers a device's chain and data-center public keys. Re-registering
    /// identical keys is a no-op.
    pub fn register_device(&self, reg: DeviceRegistration) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        match inner.devices.get(&reg.device_id) {
            Some(existing) if *existing == reg => return Ok(()),
            Some(_) => return Err(StoreError::DeviceConflict(reg.device_id)),
            None => {}
        }
        inner.devices.insert(reg.device_id.clone(), reg);
        inner.persist_devices()
    }

    pub fn devices(&self) -> Vec<DeviceRegistration> {
        self.inner.lock().devices.values().cloned().collect()
    }

    /// Appends the event to the log and a row to the index.
    pub fn store_event(&self, event: &EventRecord, submission: &SubmissionRecord) -> Result<u64, StoreError> {
        let encoding = event.canonical_encoding();
        let digest = hash_leaf(&encoding)?;
        if digest != submission.payload_digest {
            return Err(StoreError::Integrity(format!(
                "{}: submitted digest {} does not match canonical encoding {}",
                event.event_id, submission.payload_digest, digest
            )));
        }
        if submission.event_id != event.event_id || submission.device_id != event.device_id {
            return Err(StoreError::Integrity(format!("{}: submission is for a different event", event.event_id)));
        }
        let mut inner = self.inner.lock();
        if inner.index.contains_key(&event.event_id) {
            return Err(StoreError::Duplicate(event.event_id.clone()));
        }
        let reg = inner.devices.get(&event.device_id).ok_or_else(|| StoreError::UnknownDevice(event.device_id.clone()))?;
        if reg.boat_id != event.boat_id {
            return Err(StoreError::Integrity(format!("{}: device is not on boat {}", event.event_id, event.boat_id)));
        }
        let msg = SubmissionRecord::signing_message(&event.event_id, &digest);
        if !verify_sig(&reg.dc_public_key, &msg, &submission.device_signature)? {
            return Err(StoreError::BadSignature(event.event_id.clone()));
        }

        let offset = inner.log.len() as u64;
        let mut record = Vec::with_capacity(4 + encoding.len());
        record.extend_from_slice(&(encoding.len() as u32).to_be_bytes());
        record.extend_from_slice(&encoding);
        let row = LedgerRow {
            row_id: inner.rows.len() as u64,
            event_id: event.event_id.clone(),
            boat_id: event.boat_id.clone(),
            device_id: event.device_id.clone(),
            event_time: event.timestamp,
            event_payload_ref: offset,
            payload_digest: digest,
            device_signature: submission.device_signature,
            first_level: submission.entries.iter().map(|e| (e.chain_id.clone(), e.clone())).collect(),
            merkle_paths: BTreeMap::new(),
            merkle_roots: BTreeMap::new(),
            anchor_refs: BTreeMap::new(),
            anchored_day: BTreeMap::new(),
        };
        if let Some(dir) = &inner.dir {
            let events = dir.join(EVENTS_FILE);
            let mut f = OpenOptions::new().append(true).open(&events).map_err(io_err(&events))?;
            f.write_all(&record).map_err(io_err(&events))?;
            let rows = dir.join(ROWS_FILE);
            let mut f = OpenOptions::new().append(true).open(&rows).map_err(io_err(&rows))?;
            f.write_all((serde_json::to_string(&row)? + "\n").as_bytes()).map_err(io_err(&rows))?;
        }
        inner.log.extend_from_slice(&record);
        let row_id = row.row_id;
        let at = inner.rows.len();
        inner.index.insert(row.event_id.clone(), at);
        inner.rows.push(row);
        Ok(row_id)
    }

    pub fn get_row(&self, event_id: &str) -> Result<LedgerRow, StoreError> {
        self.inner.lock().row(event_id).cloned()
    }

    pub fn contains(&self, event_id: &str) -> bool {
        self.inner.lock().index.contains_key(event_id)
    }

    /// Rows of events that happened on `day`, in event_id order.
    pub fn list_rows(&self, day: Day) -> Vec<LedgerRow> {
        let inner = self.inner.lock();
        let mut rows: Vec<_> = inner.rows.iter().filter(|r| r.day() == day).cloned().collect();
        rows.sort_by(|a, b| a.event_id.cmp(&b.event_id));
        rows
    }

    /// All rows in insertion order.
    pub fn all_rows(&self) -> Vec<LedgerRow> {
        self.inner.lock().rows.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored canonical event bytes, exactly as logged.
    pub fn event_bytes(&self, event_id: &str) -> Result<Vec<u8>, StoreError> {
        let inner = self.inner.lock();
        let off = inner.row(event_id)?.event_payload_ref;
        inner.event_bytes(off).map(<[u8]>::to_vec)
    }

    /// Decodes the stored event.
    pub fn read_event(&self, event_id: &str) -> Result<EventRecord, StoreError> {
        let bytes = self.event_bytes(event_id)?;
        EventRecord::decode_canonical(&bytes)
            .ok_or_else(|| StoreError::Corrupt(format!("event `{event_id}` does not decode")))
    }

    pub fn anchors(&self) -> Vec<AnchorRecord> {
        self.inner.lock().anchors.clone()
    }

    pub fn anchor(&self, day: Day, chain_id: &str) -> Option<AnchorRecord> {
        self.inner.lock().anchors.iter().find(|a| a.day == day && a.chain_id == chain_id).cloned()
    }

    /// Records of rows that still lack an anchor on some chain, for `device_id`.
    pub fn unanchored_records(&self, device_id: &str) -> Vec<SubmissionRecord> {
        let inner = self.inner.lock();
        inner
            .rows
            .iter()
            .filter(|r| r.device_id == device_id && r.first_level.keys().any(|c| !r.is_anchored_on(c)))
            .map(LedgerRow::submission_record)
            .collect()
    }

    /// Replaces the per-chain submission state of stored rows (after retries).
    /// Entries for chains the row is already anchored on are left untouched.
    pub fn update_submissions(&self, records: &[SubmissionRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut inner = self.inner.lock();
        for rec in records {
            let i = *inner.index.get(&rec.event_id).ok_or_else(|| StoreError::NotFound(rec.event_id.clone()))?;
            let row = &mut inner.rows[i];
            if rec.payload_digest != row.payload_digest {
                return Err(StoreError::Integrity(format!("{}: update changes the payload digest", rec.event_id)));
            }
            for entry in &rec.entries {
                if !row.is_anchored_on(&entry.chain_id) {
                    row.first_level.insert(entry.chain_id.clone(), entry.clone());
                }
            }
        }
        inner.persist_rows()
    }

    /// End-of-day synchronization for `day`.
    ///
    /// For each first-level chain: collect the txs confirmed during the day
    /// that carry a stored event's submission, in (block height, tx id) order,
    /// build the tree over their leaf digests, anchor the root on
    /// `second_level` and back-fill paths and roots. Fleet-signed txs that no
    /// row accounts for are reported as `unknown`; rows still uncovered and no
    /// longer in flight are reported as `missing`.
    ///
    /// Re-running for a (day, chain) that is already anchored only refreshes
    /// the anchor's status.
    pub fn daily_sync(
        &self,
        day: Day,
        first_level: &[ChainHandle],
        second_level: &ChainHandle,
        anchor_wallet: &Wallet,
        anchor_fee: Fee,
    ) -> Result<SyncReport, StoreError> {
        for chain in first_level.iter().chain(std::iter::once(second_level)) {
            let now = chain.now();
            if now < day.end() {
                return Err(StoreError::DayNotElapsed { day, chain: chain.chain_id().to_string(), now });
            }
        }
        let mut inner = self.inner.lock();
        let fleet = inner.fleet_keys();
        let mut report = SyncReport { day, chains: BTreeMap::new() };

        for chain in first_level {
            let chain_id = chain.chain_id().to_string();
            let mut cr = ChainSyncReport::default();
            if let Some(existing) = inner.anchors.iter().find(|a| a.day == day && a.chain_id == chain_id) {
                cr.already_anchored = true;
                cr.leaf_count = existing.leaf_count;
                cr.root = Some(existing.merkle_root);
            } else {
                // every tx id any row has used on this chain -> row index
                let mut by_tx: BTreeMap<TxId, usize> = BTreeMap::new();
                for (i, row) in inner.rows.iter().enumerate() {
                    if let Some(entry) = row.first_level.get(&chain_id) {
                        for id in entry.all_tx_ids() {
                            by_tx.insert(id, i);
                        }
                    }
                }
                let mut chosen: Vec<(usize, ChainTx)> = Vec::new();
                let mut taken: BTreeSet<usize> = BTreeSet::new();
                for tx in chain.fetch_confirmed(day.start(), day.end()) {
                    let Some((device, key_chain, pk)) = fleet.get(&tx.submitter) else {
                        continue; // not fleet traffic
                    };
                    let unknown = |reason: String| UnknownTx {
                        tx_id: tx.tx_id,
                        payload_digest: tx.payload_digest,
                        submitter: tx.submitter.clone(),
                        reason,
                    };
                    if *key_chain != chain_id {
                        cr.unknown.push(unknown(format!("key of {device} is registered for chain {key_chain}")));
                        continue;
                    }
                    let msg = ChainTx::signing_message(&chain_id, &tx.payload_digest, tx.submit_time);
                    if !tx.id_matches_content() || !verify_sig(pk, &msg, &tx.signature).unwrap_or(false) {
                        cr.unknown.push(unknown("signature or tx id does not match content".into()));
                        continue;
                    }
                    match by_tx.get(&tx.tx_id) {
                        Some(&i) => {
                            let row = &inner.rows[i];
                            if row.payload_digest != tx.payload_digest {
                                cr.unknown.push(unknown(format!("digest differs from stored event {}", row.event_id)));
                            } else if row.device_id != *device {
                                cr.unknown.push(unknown(format!("signed by {device}, event is from {}", row.device_id)));
                            } else if !row.is_anchored_on(&chain_id) && taken.insert(i) {
                                chosen.push((i, tx));
                            }
                            // otherwise a superseded duplicate of an already covered event
                        }
                        None => cr.unknown.push(unknown("no stored event carries this tx".into())),
                    }
                }

                if !chosen.is_empty() {
                    let leaves: Vec<Digest> = chosen.iter().map(|(_, tx)| tx.leaf_digest()).collect();
                    let tree = build_tree(&leaves)?;
                    let root = tree.root();
                    for (leaf_index, (i, tx)) in chosen.iter().enumerate() {
                        let proof = tree.proof(leaf_index)?;
                        let row = &mut inner.rows[*i];
                        let entry = row.first_level.get_mut(&chain_id).expect("row maps this chain");
                        if entry.tx_id != Some(tx.tx_id) {
                            if let Some(prev) = entry.tx_id.replace(tx.tx_id) {
                                entry.history.push(prev);
                            }
                            entry.history.retain(|h| *h != tx.tx_id);
                        }
                        entry.status = SubmissionStatus::Confirmed;
                        entry.block_height = tx.block_height;
                        row.merkle_paths.insert(chain_id.clone(), proof);
                        row.merkle_roots.insert(chain_id.clone(), root);
                        row.anchored_day.insert(chain_id.clone(), day);
                    }
                    inner.anchors.push(AnchorRecord {
                        day,
                        chain_id: chain_id.clone(),
                        merkle_root: root,
                        leaf_count: chosen.len(),
                        second_level_tx: None,
                        status: AnchorStatus::Pending,
                        attempts: 0,
                    });
                    cr.leaf_count = chosen.len();
                    cr.root = Some(root);
                }
            }

            // rows still uncovered on this chain whose last attempt is settled
            let grace = {
                let p = chain.profile();
                p.confirmation_latency + 2 * p.block_interval
            };
            let cutoff = day.end().0.saturating_sub(grace);
            let mut missing: Vec<String> = inner
                .rows
                .iter()
                .filter(|r| r.day() <= day && !r.is_anchored_on(&chain_id))
                .filter(|r| r.first_level.get(&chain_id).is_some_and(|e| e.submitted_at.0 < cutoff))
                .map(|r| r.event_id.clone())
                .collect();
            missing.sort();
            cr.missing = missing;
            report.chains.insert(chain_id, cr);
        }

        inner.refresh_anchors(second_level, anchor_wallet, anchor_fee);
        for (chain_id, cr) in report.chains.iter_mut() {
            if let Some(a) = inner.anchors.iter().find(|a| a.day == day && a.chain_id == *chain_id) {
                cr.anchor_tx = a.second_level_tx;
                cr.anchor_status = Some(a.status);
            }
        }
        inner.persist_rows()?;
        inner.persist_anchors()?;
        Ok(report)
    }

    /// Refreshes the status of pending anchors (see [`DataCenter::daily_sync`]).
    pub fn refresh_anchors(&self, second_level: &ChainHandle, anchor_wallet: &Wallet, anchor_fee: Fee) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        inner.refresh_anchors(second_level, anchor_wallet, anchor_fee);
        inner.persist_rows()?;
        inner.persist_anchors()
    }

    /// Corrupts one stored field, bypassing all integrity checks. Every
    /// mutation is a single bit flip, so applying it twice restores the
    /// original (except the empty-path case, which appends a node).
    pub fn tamper_row(
        &self,
        event_id: &str,
        mutation: Mutation,
        chain_id: Option<&str>,
    ) -> Result<TamperOutcome, StoreError> {
        let mut inner = self.inner.lock();
        let i = *inner.index.get(event_id).ok_or_else(|| StoreError::NotFound(event_id.to_string()))?;
        let pick_chain = |row: &LedgerRow, have: &dyn Fn(&LedgerRow, &str) -> bool| -> Result<String, StoreError> {
            match chain_id {
                Some(c) if have(row, c) => Ok(c.to_string()),
                Some(c) => Err(StoreError::NoSuchField { event_id: event_id.to_string(), chain: c.to_string() }),
                None => row.first_level.keys().find(|c| have(row, c)).cloned().ok_or_else(|| {
                    StoreError::NoSuchField { event_id: event_id.to_string(), chain: "<any>".into() }
                }),
            }
        };
        let mut outcome =
            TamperOutcome { event_id: event_id.to_string(), mutation, chain_id: None, old: String::new(), new: String::new() };
        match mutation {
            Mutation::None => {}
            Mutation::Payload => {
                let off = inner.rows[i].event_payload_ref as usize;
                let len = inner.event_bytes(off as u64)?.len();
                let pos = off + 4 + len - 1; // last payload byte
                let old = inner.log[pos];
                inner.log[pos] ^= 1;
                outcome.old = format!("{old:02x}");
                outcome.new = format!("{:02x}", inner.log[pos]);
                if let Some(p) = inner.path(EVENTS_FILE) {
                    let mut f = OpenOptions::new().write(true).open(&p).map_err(io_err(&p))?;
                    f.seek(SeekFrom::Start(pos as u64)).map_err(io_err(&p))?;
                    f.write_all(&[inner.log[pos]]).map_err(io_err(&p))?;
                }
            }
            Mutation::Digest => {
                let row = &mut inner.rows[i];
                outcome.old = row.payload_digest.to_hex();
                row.payload_digest = row.payload_digest.with_bit_flipped(0);
                outcome.new = row.payload_digest.to_hex();
            }
            Mutation::Path => {
                let c = pick_chain(&inner.rows[i], &|r, c| r.merkle_paths.contains_key(c))?;
                let proof = inner.rows[i].merkle_paths.get_mut(&c).expect("picked");
                outcome.old = serde_json::to_string(&proof.path)?;
                match proof.path.first_mut() {
                    Some(node) => node.digest = node.digest.with_bit_flipped(0),
                    None => proof.path.push(PathNode { digest: Digest::default(), side: Side::Right }),
                }
                outcome.new = serde_json::to_string(&proof.path)?;
                outcome.chain_id = Some(c);
            }
            Mutation::Root => {
                let c = pick_chain(&inner.rows[i], &|r, c| r.merkle_roots.contains_key(c))?;
                let root = inner.rows[i].merkle_roots.get_mut(&c).expect("picked");
                outcome.old = root.to_hex();
                *root = root.with_bit_flipped(0);
                outcome.new = root.to_hex();
                outcome.chain_id = Some(c);
            }
        }
        if mutation != Mutation::None && mutation != Mutation::Payload {
            inner.persist_rows()?;
        }
        Ok(outcome)
    }

    /// SHA-256 over the full persisted state.
    pub fn state_digest(&self) -> Digest {
        let inner = self.inner.lock();
        let mut buf = inner.log.clone();
        buf.extend_from_slice(to_lines(&inner.rows).as_bytes());
        buf.extend_from_slice(to_lines(&inner.anchors).as_bytes());
        buf.extend_from_slice(serde_json::to_string(&inner.devices).expect("devices serialize").as_bytes());
        Digest::sha256(&buf)
    }

    /// Rewrites all persisted files from memory.
    pub fn flush(&self) -> Result<(), StoreError> {
        let inner = self.inner.lock();
        if let Some(p) = inner.path(EVENTS_FILE) {
            let mut f = File::create(&p).map_err(io_err(&p))?;
            f.write_all(&inner.log).map_err(io_err(&p))?;
        }
        inner.persist_rows()?;
        inner.persist_anchors()?;
        inner.persist_devices()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::{ChainProfile, ChainRegistry};
    use crate::edge::geo::Point;
    use crate::edge::{EdgeDevice, EventKind, SignificancePolicy};
    use crate::time::DEFAULT_ORIGIN;

    struct Rig {
        eos: ChainHandle,
        xlm: ChainHandle,
        eth: ChainHandle,
        dev: EdgeDevice,
        dc: DataCenter,
        anchor: Wallet,
    }

    fn rig() -> Rig {
        let mut reg = ChainRegistry::new(DEFAULT_ORIGIN);
        let eos = reg.create_chain(ChainProfile::eos(), 7).unwrap();
        let xlm = reg.create_chain(ChainProfile::stellar(), 7).unwrap();
        let eth = reg.create_chain(ChainProfile::ethereum(), 7).unwrap();
        let dev = EdgeDevice::provision("boat-1", "dev-1", SignificancePolicy::default_zone(), &[eos.clone(), xlm.clone()], 7)
            .unwrap();
        let dc = DataCenter::in_memory();
        dc.register_device(dev.registration()).unwrap();
        let anchor = Wallet::derive("datacenter@ethereum", "ethereum", 7);
        eth.register_account(anchor.key_id(), anchor.public_key()).unwrap();
        Rig { eos, xlm, eth, dev, dc, anchor }
    }

    fn ev(id: &str, t: u64) -> EventRecord {
        EventRecord {
            event_id: id.into(),
            boat_id: "boat-1".into(),
            device_id: "dev-1".into(),
            timestamp: DEFAULT_ORIGIN.plus(t),
            kind: EventKind::Accident,
            payload: id.as_bytes().to_vec(),
            location: Point::new(25.8, -80.2),
        }
    }

    impl Rig {
        fn at(&self, t: Timestamp) {
            for c in [&self.eos, &self.xlm, &self.eth] {
                c.advance_to(t);
            }
        }

        fn sync(&self, day: Day) -> SyncReport {
            self.at(day.end());
            self.dc
                .daily_sync(day, &[self.eos.clone(), self.xlm.clone()], &self.eth, &self.anchor, ChainProfile::ethereum_contract_fee())
                .unwrap()
        }
    }

    #[test]
    fn store_and_read_back() {
        let r = rig();
        let e = ev("e-01", 100);
        r.at(e.timestamp);
        r.dev.process_event(&e, &r.dc).unwrap();
        assert_eq!(r.dc.read_event("e-01").unwrap(), EventRecord { location: e.location, ..e.clone() });
        assert_eq!(r.dc.event_bytes("e-01").unwrap(), e.canonical_encoding());
        let row = r.dc.get_row("e-01").unwrap();
        assert_eq!(row.first_level.len(), 2);
        assert!(row.merkle_paths.is_empty() && row.merkle_roots.is_empty());
        assert!(matches!(r.dev.process_event(&e, &r.dc), Err(crate::edge::EdgeError::Store(StoreError::Duplicate(_)))));
        assert!(matches!(r.dc.get_row("nope"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn digest_mismatch_rejected() {
        let r = rig();
        let e = ev("e-01", 100);
        r.at(e.timestamp);
        let mut rec = r.dev.process_event(&e, &r.dc).unwrap();
        rec.event_id = "e-02".into();
        let other = ev("e-02", 100);
        assert!(matches!(r.dc.store_event(&other, &rec), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn sync_requires_elapsed_day() {
        let r = rig();
        let err = r.dc.daily_sync(Day(DEFAULT_ORIGIN.day().0), &[r.eos.clone()], &r.eth, &r.anchor, Fee(1));
        assert!(matches!(err, Err(StoreError::DayNotElapsed { .. })));
    }

    #[test]
    fn sync_backfills_paths_and_is_idempotent() {
        let r = rig();
        for k in 0..10 {
            let e = ev(&format!("e-{k:02}"), 600 + 3600 * k);
            r.at(e.timestamp);
            r.dev.process_event(&e, &r.dc).unwrap();
        }
        let day = DEFAULT_ORIGIN.day();
        let rep = r.sync(day);
        assert_eq!(rep.anchors(), 2);
        assert_eq!(rep.missing_total(), 0);
        assert!(rep.anomalies().is_empty());
        for row in r.dc.list_rows(day) {
            assert_eq!(row.merkle_paths.len(), 2);
            assert_eq!(row.merkle_roots.len(), 2);
            assert_eq!(row.anchor_refs.len(), 2);
            for (c, proof) in &row.merkle_paths {
                let h = if c == "eos" { &r.eos } else { &r.xlm };
                let tx = h.query_tx(&row.first_level[c].tx_id.unwrap()).unwrap();
                assert!(crate::merkle::verify_proof(&tx.leaf_digest(), proof, &row.merkle_roots[c]));
            }
        }
        let ids: Vec<_> = r.dc.list_rows(day).into_iter().map(|r| r.event_id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(ids.len(), 10);

        let before = r.dc.state_digest();
        let again = r.dc.daily_sync(day, &[r.eos.clone(), r.xlm.clone()], &r.eth, &r.anchor, Fee(1)).unwrap();
        assert!(again.chains.values().all(|c| c.already_anchored));
        assert_eq!(r.dc.anchors().len(), 2);
        assert_eq!(r.dc.state_digest(), before);
    }

    #[test]
    fn empty_day_has_no_anchor() {
        let r = rig();
        let rep = r.sync(DEFAULT_ORIGIN.day());
        assert_eq!(rep.anchors(), 0);
        assert!(r.dc.anchors().is_empty());
    }

    #[test]
    fn dropped_tx_is_missing_then_recovered_next_day() {
        let r = rig();
        let e = ev("e-01", 1000);
        r.at(e.timestamp);
        let rec = r.dev.process_event(&e, &r.dc).unwrap();
        r.xlm.inject_attack(crate::chainsim::Attack::DropTx { tx_id: rec.entry("stellar").unwrap().tx_id.unwrap() }).unwrap();
        let day = DEFAULT_ORIGIN.day();
        let rep = r.sync(day);
        assert_eq!(rep.chains["stellar"].missing, vec!["e-01".to_string()]);
        assert!(rep.chains["eos"].missing.is_empty());
        let row = r.dc.get_row("e-01").unwrap();
        assert_eq!(row.merkle_paths.len(), 1);

        let mut recs = r.dc.unanchored_records("dev-1");
        let resent = r.dev.retry_unconfirmed(&mut recs, r.xlm.now(), 120);
        assert_eq!(resent.len(), 1);
        let entry = recs[0].entry("stellar").unwrap();
        assert_eq!(entry.attempt_count, 2);
        assert_eq!(entry.fee, ChainProfile::stellar().fee_per_tx.scaled(2));
        assert_eq!(entry.history.len(), 1);
        r.dc.update_submissions(&recs).unwrap();

        let rep = r.sync(day.next());
        assert_eq!(rep.chains["stellar"].leaf_count, 1);
        assert!(rep.missing_total() == 0);
        let row = r.dc.get_row("e-01").unwrap();
        assert_eq!(row.merkle_paths.len(), 2);
        assert_eq!(row.anchored_day["stellar"], day.next());
    }

    #[test]
    fn tampering_is_involutive() {
        let r = rig();
        for (id, t) in [("e-01", 1000), ("e-02", 2000)] {
            let e = ev(id, t);
            r.at(e.timestamp);
            r.dev.process_event(&e, &r.dc).unwrap();
        }
        r.sync(DEFAULT_ORIGIN.day());
        let clean = r.dc.state_digest();
        for m in [Mutation::Payload, Mutation::Digest, Mutation::Path, Mutation::Root] {
            let out = r.dc.tamper_row("e-01", m, None).unwrap();
            assert_ne!(out.old, out.new);
            assert_ne!(r.dc.state_digest(), clean);
            r.dc.tamper_row("e-01", m, out.chain_id.as_deref()).unwrap();
            assert_eq!(r.dc.state_digest(), clean, "{m:?}");
        }
        r.dc.tamper_row("e-01", Mutation::None, None).unwrap();
        assert_eq!(r.dc.state_digest(), clean);
        assert!(matches!(r.dc.tamper_row("zz", Mutation::Root, None), Err(StoreError::NotFound(_))));
        assert_eq!("root".parse::<Mutation>().unwrap(), Mutation::Root);
        assert!("colour".parse::<Mutation>().is_err());
    }

    #[test]
    fn directory_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = rig();
        let dc = DataCenter::open(dir.path()).unwrap();
        dc.register_device(r.dev.registration()).unwrap();
        let e = ev("e-01", 1000);
        r.at(e.timestamp);
        r.dev.process_event(&e, &dc).unwrap();
        r.at(DEFAULT_ORIGIN.day().end());
        dc.daily_sync(DEFAULT_ORIGIN.day(), &[r.eos.clone(), r.xlm.clone()], &r.eth, &r.anchor, Fee(1)).unwrap();
        dc.tamper_row("e-01", Mutation::Payload, None).unwrap();
        let digest = dc.state_digest();
        drop(dc);
        let reopened = DataCenter::open(dir.path()).unwrap();
        assert_eq!(reopened.state_digest(), digest);
        assert_eq!(reopened.get_row("e-01").unwrap().merkle_paths.len(), 2);
        assert!(fs::read_to_string(dir.path().join(ANCHORS_FILE)).unwrap().lines().count() == 2);
    }

    #[test]
    fn unknown_device_rejected() {
        let r = rig();
        let dc = DataCenter::in_memory();
        let e = ev("e-01", 1000);
        r.at(e.timestamp);
        assert!(matches!(r.dev.process_event(&e, &dc), Err(crate::edge::EdgeError::Store(StoreError::UnknownDevice(_)))));
    }
}
