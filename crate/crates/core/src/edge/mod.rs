//! Boat-side pipeline: significance filtering, hashing, signing, and dual
//! submission of event digests to the first-level chains.

pub mod geo;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainsim::{ChainError, ChainHandle, Fee, PublicKey, Signature, TxId, TxStatus, Wallet};
use crate::datacenter::{DataCenter, StoreError};
use crate::merkle::{hash_leaf, Digest};
use crate::time::{Day, Timestamp};
use geo::{Point, Polygon, PolygonError};

/// Default fee escalation applied on each resubmission.
pub const DEFAULT_FEE_MULTIPLIER: u64 = 2;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("geofence: {0}")]
    Geofence(#[from] PolygonError),
    #[error("no wallet for chain `{0}`")]
    MissingWallet(String),
    #[error("chain: {0}")]
    Chain(#[from] ChainError),
    #[error("data center: {0}")]
    Store(#[from] StoreError),
    #[error("event input line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Accident,
    GeofenceExit,
    SpeedViolation,
    Heartbeat,
    Other,
}

impl EventKind {
    pub const ALL: [EventKind; 5] =
        [EventKind::Accident, EventKind::GeofenceExit, EventKind::SpeedViolation, EventKind::Heartbeat, EventKind::Other];

    fn tag(self) -> u8 {
        match self {
            EventKind::Accident => 1,
            EventKind::GeofenceExit => 2,
            EventKind::SpeedViolation => 3,
            EventKind::Heartbeat => 4,
            EventKind::Other => 5,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().expect("kind is a string"))
    }
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// One raw sensor event as reported by a boat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub boat_id: String,
    pub device_id: String,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub location: Point<f64>,
}

const ENCODING_VERSION: u8 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn micro_degrees(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Option<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Option<String> {
        String::from_utf8(self.bytes()?.to_vec()).ok()
    }
}

impl EventRecord {
    pub fn validate(&self) -> Result<(), EdgeError> {
        let bad = |m: &str| Err(EdgeError::InvalidEvent(format!("{}: {m}", self.event_id)));
        if self.event_id.is_empty() {
            return bad("empty event_id");
        }
        if self.payload.is_empty() {
            return bad("empty payload");
        }
        if !self.location.lat.is_finite() || !self.location.lon.is_finite() || !self.location.in_range() {
            return bad("location out of range");
        }
        Ok(())
    }

    /// Canonical byte layout used for hashing: length-prefixed ids, fixed-width
    /// time, kind tag, micro-degree coordinates, length-prefixed payload (last,
    /// so the payload occupies the tail of the encoding).
    pub fn canonical_encoding(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + self.payload.len());
        buf.push(ENCODING_VERSION);
        put_str(&mut buf, &self.event_id);
        put_str(&mut buf, &self.boat_id);
        put_str(&mut buf, &self.device_id);
        buf.extend_from_slice(&self.timestamp.0.to_be_bytes());
        buf.push(self.kind.tag());
        buf.extend_from_slice(&micro_degrees(self.location.lat).to_be_bytes());
        buf.extend_from_slice(&micro_degrees(self.location.lon).to_be_bytes());
        buf.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        buf.extend_from_slice(&self.payload);
        buf
    }

    pub fn decode_canonical(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(1)? != [ENCODING_VERSION] {
            return None;
        }
        let event_id = r.string()?;
        let boat_id = r.string()?;
        let device_id = r.string()?;
        let timestamp = Timestamp(r.u64()?);
        let kind = EventKind::from_tag(r.take(1)?[0])?;
        let lat = r.u64()? as i64 as f64 / 1e6;
        let lon = r.u64()? as i64 as f64 / 1e6;
        let payload = r.bytes()?.to_vec();
        if !r.buf.is_empty() {
            return None;
        }
        Some(EventRecord { event_id, boat_id, device_id, timestamp, kind, payload, location: Point { lat, lon } })
    }

    /// `hash_leaf` over the canonical encoding.
    pub fn payload_digest(&self) -> Digest {
        hash_leaf(&self.canonical_encoding()).expect("encoding is never empty")
    }

    pub fn day(&self) -> Day {
        self.timestamp.day()
    }
}

/// Reads JSON Lines of [`EventRecord`]s. Blank lines are skipped.
pub fn read_events_jsonl(reader: impl BufRead) -> Result<Vec<EventRecord>, EdgeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: EventRecord =
            serde_json::from_str(&line).map_err(|e| EdgeError::Parse { line: i + 1, message: e.to_string() })?;
        ev.validate()?;
        out.push(ev);
    }
    Ok(out)
}

pub fn write_events_jsonl(events: &[EventRecord]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
}

/// Which events are worth committing.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificancePolicy {
    pub geofence: Polygon<f64>,
    pub significant_kinds: BTreeSet<EventKind>,
    /// Cap on location-only significant events per boat per day.
    pub max_events_per_day: u32,
}

/// JSON form: `{"geofence": [[lat, lon], ...], "significant_kinds": [...], "max_events_per_day": n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub geofence: Vec<[f64; 2]>,
    pub significant_kinds: Vec<EventKind>,
    pub max_events_per_day: u32,
}

impl SignificancePolicy {
    pub fn new(
        geofence: Vec<Point<f64>>,
        significant_kinds: impl IntoIterator<Item = EventKind>,
        max_events_per_day: u32,
    ) -> Result<Self, EdgeError> {
        let geofence = Polygon::new(geofence)?;
        let significant_kinds: BTreeSet<_> = significant_kinds.into_iter().collect();
        if significant_kinds.is_empty() {
            return Err(EdgeError::InvalidPolicy("significant_kinds is empty".into()));
        }
        Ok(SignificancePolicy { geofence, significant_kinds, max_events_per_day })
    }

    pub fn from_file(f: &PolicyFile) -> Result<Self, EdgeError> {
        Self::new(
            f.geofence.iter().map(|[lat, lon]| Point::new(*lat, *lon)).collect(),
            f.significant_kinds.iter().copied(),
            f.max_events_per_day,
        )
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            geofence: self.geofence.vertices().iter().map(|p| [p.lat, p.lon]).collect(),
            significant_kinds: self.significant_kinds.iter().copied().collect(),
            max_events_per_day: self.max_events_per_day,
        }
    }

    /// A rectangular rental zone off Miami with the usual incident kinds.
    pub fn default_zone() -> Self {
        let fence = vec![
            Point::new(25.70, -80.25),
            Point::new(25.70, -80.10),
            Point::new(25.85, -80.10),
            Point::new(25.85, -80.25),
        ];
        Self::new(fence, [EventKind::Accident, EventKind::GeofenceExit, EventKind::SpeedViolation], 1000)
            .expect("default zone is valid")
    }
}

/// True iff the event's kind is significant or it happened outside the fence.
pub fn filter_event(event: &EventRecord, policy: &SignificancePolicy) -> bool {
    policy.significant_kinds.contains(&event.kind) || !policy.geofence.contains(&event.location)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionStatus {
    Pending,
    Confirmed,
    Evicted,
    Failed,
}

impl From<TxStatus> for SubmissionStatus {
    fn from(s: TxStatus) -> Self {
        match s {
            TxStatus::Pending => SubmissionStatus::Pending,
            TxStatus::Confirmed => SubmissionStatus::Confirmed,
            TxStatus::Evicted => SubmissionStatus::Evicted,
        }
    }
}

/// Submission state of one event on one first-level chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSubmission {
    pub chain_id: String,
    pub tx_id: Option<TxId>,
    pub status: SubmissionStatus,
    pub attempt_count: u32,
    pub fee: Fee,
    pub submitted_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_height: Option<u64>,
    /// Earlier tx ids for this event on this chain, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<TxId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChainSubmission {
    /// Current and previous tx ids.
    pub fn all_tx_ids(&self) -> impl Iterator<Item = TxId> + '_ {
        self.history.iter().copied().chain(self.tx_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub event_id: String,
    pub device_id: String,
    pub payload_digest: Digest,
    pub entries: Vec<ChainSubmission>,
    pub created_at: Timestamp,
    /// Device's data-center credential over the payload digest.
    pub device_signature: Signature,
}

impl SubmissionRecord {
    pub fn entry(&self, chain_id: &str) -> Option<&ChainSubmission> {
        self.entries.iter().find(|e| e.chain_id == chain_id)
    }

    pub fn signing_message(event_id: &str, payload_digest: &Digest) -> Vec<u8> {
        let mut buf = b"dc-submission".to_vec();
        put_str(&mut buf, event_id);
        buf.extend_from_slice(payload_digest.as_bytes());
        buf
    }
}

/// Public keys a device registers with the data center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRegistration {
    pub device_id: String,
    pub boat_id: String,
    pub dc_public_key: PublicKey,
    /// chain_id -> (key_id, public key)
    pub chain_keys: BTreeMap<String, (String, PublicKey)>,
}

#[derive(Debug, Clone)]
struct Route {
    chain: ChainHandle,
    wallet: Wallet,
}

/// Why an event did not go out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Submit,
    Insignificant,
    OverDailyCap,
}

/// The edge device on one boat.
///
/// Holds one wallet per (device, first-level chain) plus a separate data-center
/// credential. Processing is sequential per device; several devices may share
/// chain handles and the data center concurrently.
#[derive(Debug)]
pub struct EdgeDevice {
    boat_id: String,
    device_id: String,
    policy: SignificancePolicy,
    routes: Vec<Route>,
    dc_wallet: Wallet,
    fee_multiplier: u64,
    capped_today: BTreeMap<Day, u32>,
}

impl EdgeDevice {
    /// Derives wallets from `seed` and registers the chain accounts.
    pub fn provision(
        boat_id: impl Into<String>,
        device_id: impl Into<String>,
        policy: SignificancePolicy,
        chains: &[ChainHandle],
        seed: u64,
    ) -> Result<Self, EdgeError> {
        let device_id = device_id.into();
        let mut routes = Vec::with_capacity(chains.len());
        for chain in chains {
            let wallet = Wallet::derive(Wallet::key_id_for(&device_id, chain.chain_id()), chain.chain_id(), seed);
            chain.register_account(wallet.key_id(), wallet.public_key())?;
            routes.push(Route { chain: chain.clone(), wallet });
        }
        let dc_wallet = Wallet::derive(Wallet::key_id_for(&device_id, "datacenter"), "datacenter", seed);
        Ok(EdgeDevice {
            boat_id: boat_id.into(),
            device_id,
            policy,
            routes,
            dc_wallet,
            fee_multiplier: DEFAULT_FEE_MULTIPLIER,
            capped_today: BTreeMap::new(),
        })
    }

    pub fn boat_id(&self) -> &str {
        &self.boat_id
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn policy(&self) -> &SignificancePolicy {
        &self.policy
    }

    pub fn set_fee_multiplier(&mut self, m: u64) {
        self.fee_multiplier = m.max(1);
    }

    pub fn chains(&self) -> impl Iterator<Item = &ChainHandle> {
        self.routes.iter().map(|r| &r.chain)
    }

    /// The device's wallet for a chain. Exposed for key-compromise scenarios.
    pub fn wallet(&self, chain_id: &str) -> Option<&Wallet> {
        self.routes.iter().find(|r| r.chain.chain_id() == chain_id).map(|r| &r.wallet)
    }

    pub fn registration(&self) -> DeviceRegistration {
        DeviceRegistration {
            device_id: self.device_id.clone(),
            boat_id: self.boat_id.clone(),
            dc_public_key: self.dc_wallet.public_key(),
            chain_keys: self
                .routes
                .iter()
                .map(|r| (r.chain.chain_id().to_string(), (r.wallet.key_id().to_string(), r.wallet.public_key())))
                .collect(),
        }
    }

    /// Applies the policy and the daily cap. Kind-significant events are never
    /// capped; only events that are significant by location alone count
    /// against `max_events_per_day`.
    pub fn admit(&mut self, event: &EventRecord) -> Admission {
        if self.policy.significant_kinds.contains(&event.kind) {
            return Admission::Submit;
        }
        if !filter_event(event, &self.policy) {
            return Admission::Insignificant;
        }
        let n = self.capped_today.entry(event.day()).or_insert(0);
        if *n >= self.policy.max_events_per_day {
            return Admission::OverDailyCap;
        }
        *n += 1;
        Admission::Submit
    }

    /// Hashes, signs and submits the event to every first-level chain, then
    /// hands the event and its submission record to the data center.
    ///
    /// A chain that rejects the submission is recorded as `failed`; the other
    /// chains are still attempted.
    pub fn process_event(&self, event: &EventRecord, store: &DataCenter) -> Result<SubmissionRecord, EdgeError> {
        event.validate()?;
        if event.device_id != self.device_id {
            return Err(EdgeError::InvalidEvent(format!("{} is not from device {}", event.event_id, self.device_id)));
        }
        let payload_digest = event.payload_digest();
        let created_at = self.routes.iter().map(|r| r.chain.now()).max().unwrap_or(event.timestamp);
        let entries = self.routes.iter().map(|r| Self::submit_one(r, payload_digest, r.chain.profile().fee_per_tx)).collect();
        let record = SubmissionRecord {
            event_id: event.event_id.clone(),
            device_id: self.device_id.clone(),
            payload_digest,
            entries,
            created_at,
            device_signature: self.dc_wallet.sign(&SubmissionRecord::signing_message(&event.event_id, &payload_digest)),
        };
        store.store_event(event, &record)?;
        Ok(record)
    }

    fn submit_one(route: &Route, digest: Digest, fee: Fee) -> ChainSubmission {
        let submitted_at = route.chain.now();
        let (tx_id, status, error) = match route.chain.submit_tx(digest, &route.wallet, fee) {
            Ok(id) => {
                // a full mempool may have evicted the new tx on arrival
                let status = route.chain.query_tx(&id).map(|t| t.status.into()).unwrap_or(SubmissionStatus::Failed);
                (Some(id), status, None)
            }
            Err(e) => (None, SubmissionStatus::Failed, Some(e.to_string())),
        };
        ChainSubmission {
            chain_id: route.chain.chain_id().to_string(),
            tx_id,
            status,
            attempt_count: 1,
            fee,
            submitted_at,
            block_height: None,
            history: Vec::new(),
            error,
        }
    }

    /// Resubmits every entry that is still unconfirmed more than `timeout`
    /// seconds after its last attempt, escalating the fee. Confirmed entries are
    /// left alone. Returns the new tx ids.
    pub fn retry_unconfirmed(&self, records: &mut [SubmissionRecord], now: Timestamp, timeout: u64) -> Vec<TxId> {
        let mut resubmitted = Vec::new();
        for record in records.iter_mut() {
            let digest = record.payload_digest;
            for entry in record.entries.iter_mut() {
                let Some(route) = self.routes.iter().find(|r| r.chain.chain_id() == entry.chain_id) else {
                    continue;
                };
                let confirmed = entry
                    .all_tx_ids()
                    .filter_map(|id| route.chain.query_tx(&id))
                    .find(|tx| tx.status == TxStatus::Confirmed);
                if let Some(confirmed) = confirmed {
                    if entry.tx_id != Some(confirmed.tx_id) {
                        if let Some(cur) = entry.tx_id.take() {
                            entry.history.push(cur);
                        }
                        entry.history.retain(|h| *h != confirmed.tx_id);
                        entry.tx_id = Some(confirmed.tx_id);
                    }
                    entry.status = SubmissionStatus::Confirmed;
                    entry.block_height = confirmed.block_height;
                    continue;
                }
                if let Some(tx) = entry.tx_id.and_then(|id| route.chain.query_tx(&id)) {
                    entry.status = tx.status.into();
                }
                if now.saturating_sub(entry.submitted_at) <= timeout {
                    continue;
                }
                let fee = entry.fee.scaled(self.fee_multiplier);
                let fresh = Self::submit_one(route, digest, fee);
                entry.attempt_count += 1;
                entry.fee = fee;
                entry.submitted_at = fresh.submitted_at;
                entry.error = fresh.error;
                if let Some(new_id) = fresh.tx_id {
                    if let Some(old) = entry.tx_id.replace(new_id) {
                        entry.history.push(old);
                    }
                    entry.status = fresh.status;
                    resubmitted.push(new_id);
                } else {
                    entry.status = SubmissionStatus::Failed;
                }
            }
        }
        resubmitted
    }
}
