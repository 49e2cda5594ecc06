//! A seeded, end-to-end world: a fleet of boats with edge devices, two
//! first-level chains, one second-level chain and the data center, all driven
//! by one logical clock.
//!
//! Events are generated per (day, boat) from independent ChaCha streams, so a
//! world is fully determined by its [`WorldConfig`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainsim::{Chain, ChainError, ChainHandle, ChainProfile, ChainRegistry, Fee, Wallet};
use crate::datacenter::{DataCenter, StoreError, SyncReport};
use crate::edge::geo::Point;
use crate::edge::{Admission, EdgeDevice, EdgeError, EventKind, EventRecord, PolicyFile, SignificancePolicy, SubmissionRecord};
use crate::merkle::Digest;
use crate::time::{Day, Timestamp, DEFAULT_ORIGIN, SECONDS_PER_DAY};
use crate::verifier::{verify_row, VerificationReport, Verdict};

pub const RUN_FILE: &str = "run.json";
pub const CHAINS_DIR: &str = "chains";

/// Events are generated within the first 22 hours of each day so that every
/// first-level submission can settle before the day closes.
const EVENT_WINDOW_SECS: u64 = 22 * 3600;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("chain: {0}")]
    Chain(#[from] ChainError),
    #[error("edge: {0}")]
    Edge(#[from] EdgeError),
    #[error("data center: {0}")]
    Store(#[from] StoreError),
    #[error("I/O at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io { path: path.to_path_buf(), source }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub boats: u32,
    /// Significant events generated per boat per day.
    pub events_per_boat_per_day: u32,
    /// Additional insignificant in-fence heartbeats per boat per day (filtered out).
    pub noise_per_boat_per_day: u32,
    pub days: u32,
    pub origin: Timestamp,
    pub first_level: Vec<ChainProfile>,
    pub second_level: ChainProfile,
    pub policy: PolicyFile,
    /// Seconds an unconfirmed submission may age before it is resubmitted.
    pub retry_timeout: u64,
    pub fee_multiplier: u64,
    pub anchor_fee: Fee,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 42,
            boats: 10,
            events_per_boat_per_day: 10,
            noise_per_boat_per_day: 5,
            days: 3,
            origin: DEFAULT_ORIGIN,
            first_level: vec![ChainProfile::eos(), ChainProfile::stellar()],
            second_level: ChainProfile::ethereum(),
            policy: SignificancePolicy::default_zone().to_file(),
            retry_timeout: 120,
            fee_multiplier: crate::edge::DEFAULT_FEE_MULTIPLIER,
            anchor_fee: ChainProfile::ethereum_contract_fee(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.boats == 0 {
            return bad("boats must be >= 1");
        }
        if self.days == 0 {
            return bad("days must be >= 1");
        }
        if self.events_per_boat_per_day == 0 {
            return bad("events_per_boat_per_day must be >= 1");
        }
        if self.origin.0 % SECONDS_PER_DAY != 0 {
            return bad("origin must be a UTC midnight");
        }
        if self.first_level.is_empty() {
            return bad("at least one first-level chain is required");
        }
        if self.retry_timeout == 0 {
            return bad("retry_timeout must be > 0");
        }
        for p in self.first_level.iter().chain(std::iter::once(&self.second_level)) {
            p.validate()?;
        }
        SignificancePolicy::from_file(&self.policy)?;
        Ok(())
    }

    pub fn boat_id(b: u32) -> String {
        format!("boat-{:03}", b + 1)
    }

    pub fn device_id(b: u32) -> String {
        format!("edge-{:03}", b + 1)
    }
}

/// Derives an independent sub-seed for a named component.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let d = Digest::sha256(format!("{seed}/{label}").as_bytes());
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}

/// What happened during one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: Day,
    pub generated: usize,
    pub submitted: usize,
    pub filtered: usize,
    pub sync: SyncReport,
    pub resubmitted: usize,
}

/// Persisted alongside a directory-backed store so later commands can reload
/// the world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub config: WorldConfig,
    pub days_completed: u32,
    /// Days whose events were generated but which have not been synchronized.
    #[serde(default)]
    pub unsynced: Vec<Day>,
}

pub struct World {
    config: WorldConfig,
    first_level: Vec<ChainHandle>,
    second_level: ChainHandle,
    store: DataCenter,
    devices: Vec<EdgeDevice>,
    anchor_wallet: Wallet,
    days_completed: u32,
    unsynced: Vec<Day>,
    history: Vec<DaySummary>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World").field("config", &self.config).field("days_completed", &self.days_completed).finish()
    }
}

impl World {
    /// A fresh world with an in-memory store.
    pub fn new(config: WorldConfig) -> Result<Self, SimError> {
        Self::build(config, DataCenter::in_memory())
    }

    /// A fresh world persisting into `dir`.
    pub fn create_in(config: WorldConfig, dir: &Path) -> Result<Self, SimError> {
        let store = DataCenter::open(dir)?;
        if !store.is_empty() {
            return Err(SimError::Config(format!("store {} is not empty", dir.display())));
        }
        let world = Self::build(config, store)?;
        world.save()?;
        Ok(world)
    }

    fn build(config: WorldConfig, store: DataCenter) -> Result<Self, SimError> {
        config.validate()?;
        let mut registry = ChainRegistry::new(config.origin);
        let mut first_level = Vec::new();
        for p in &config.first_level {
            first_level.push(registry.create_chain(p.clone(), sub_seed(config.seed, &p.chain_id))?);
        }
        let second_level =
            registry.create_chain(config.second_level.clone(), sub_seed(config.seed, &config.second_level.chain_id))?;
        Self::assemble(config, first_level, second_level, store, 0, Vec::new())
    }

    fn assemble(
        config: WorldConfig,
        first_level: Vec<ChainHandle>,
        second_level: ChainHandle,
        store: DataCenter,
        days_completed: u32,
        unsynced: Vec<Day>,
    ) -> Result<Self, SimError> {
        let policy = SignificancePolicy::from_file(&config.policy)?;
        let mut devices = Vec::new();
        for b in 0..config.boats {
            let mut dev = EdgeDevice::provision(
                WorldConfig::boat_id(b),
                WorldConfig::device_id(b),
                policy.clone(),
                &first_level,
                sub_seed(config.seed, "devices"),
            )?;
            dev.set_fee_multiplier(config.fee_multiplier);
            store.register_device(dev.registration())?;
            devices.push(dev);
        }
        let sl_id = second_level.chain_id().to_string();
        let anchor_wallet = Wallet::derive(Wallet::key_id_for("datacenter", &sl_id), &sl_id, sub_seed(config.seed, "anchor"));
        second_level.register_account(anchor_wallet.key_id(), anchor_wallet.public_key())?;
        Ok(World {
            config,
            first_level,
            second_level,
            store,
            devices,
            anchor_wallet,
            days_completed,
            unsynced,
            history: Vec::new(),
        })
    }

    /// Reloads a world saved with [`World::save`].
    pub fn load(dir: &Path) -> Result<Self, SimError> {
        let run_path = dir.join(RUN_FILE);
        let state: RunState =
            serde_json::from_str(&fs::read_to_string(&run_path).map_err(io_err(&run_path))?)?;
        let load_chain = |id: &str| -> Result<ChainHandle, SimError> {
            let p = dir.join(CHAINS_DIR).join(format!("{id}.json"));
            let json = fs::read_to_string(&p).map_err(io_err(&p))?;
            Ok(ChainHandle::new(Chain::import_json(&json)?))
        };
        let first_level =
            state.config.first_level.iter().map(|p| load_chain(&p.chain_id)).collect::<Result<Vec<_>, _>>()?;
        let second_level = load_chain(&state.config.second_level.chain_id)?;
        let store = DataCenter::open(dir)?;
        Self::assemble(state.config, first_level, second_level, store, state.days_completed, state.unsynced)
    }

    /// Writes `run.json` and one JSON file per chain (no-op for in-memory stores).
    pub fn save(&self) -> Result<(), SimError> {
        let Some(dir) = self.store.dir() else { return Ok(()) };
        let chains = dir.join(CHAINS_DIR);
        fs::create_dir_all(&chains).map_err(io_err(&chains))?;
        for c in self.all_chains() {
            let p = chains.join(format!("{}.json", c.chain_id()));
            fs::write(&p, c.export_json()).map_err(io_err(&p))?;
        }
        let state =
            RunState { config: self.config.clone(), days_completed: self.days_completed, unsynced: self.unsynced.clone() };
        let p = dir.join(RUN_FILE);
        fs::write(&p, serde_json::to_string_pretty(&state)?).map_err(io_err(&p))?;
        Ok(())
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn store(&self) -> &DataCenter {
        &self.store
    }

    pub fn first_level(&self) -> &[ChainHandle] {
        &self.first_level
    }

    pub fn second_level(&self) -> &ChainHandle {
        &self.second_level
    }

    pub fn all_chains(&self) -> impl Iterator<Item = &ChainHandle> {
        self.first_level.iter().chain(std::iter::once(&self.second_level))
    }

    pub fn chain(&self, chain_id: &str) -> Option<&ChainHandle> {
        self.all_chains().find(|c| c.chain_id() == chain_id)
    }

    pub fn devices(&self) -> &[EdgeDevice] {
        &self.devices
    }

    pub fn device_for_boat(&self, boat_id: &str) -> Option<&EdgeDevice> {
        self.devices.iter().find(|d| d.boat_id() == boat_id)
    }

    pub fn anchor_wallet(&self) -> &Wallet {
        &self.anchor_wallet
    }

    pub fn days_completed(&self) -> u32 {
        self.days_completed
    }

    pub fn history(&self) -> &[DaySummary] {
        &self.history
    }

    pub fn day(&self, index: u32) -> Day {
        self.config.origin.day().offset(index)
    }

    pub fn now(&self) -> Timestamp {
        self.all_chains().map(|c| c.now()).max().unwrap_or(self.config.origin)
    }

    /// Moves every chain's clock forward to `t`.
    pub fn advance_to(&self, t: Timestamp) {
        for c in self.all_chains() {
            c.advance_to(t);
        }
    }

    /// Deterministic events of one boat on one day, in time order: the
    /// configured number of significant events plus in-fence heartbeats.
    pub fn generate_events(&self, day_index: u32, boat: u32) -> Vec<EventRecord> {
        let policy = SignificancePolicy::from_file(&self.config.policy).expect("validated");
        let fence = &policy.geofence;
        let (lo_lat, hi_lat, lo_lon, hi_lon) = fence.vertices().iter().fold(
            (f64::MAX, f64::MIN, f64::MAX, f64::MIN),
            |(a, b, c, d), p| (a.min(p.lat), b.max(p.lat), c.min(p.lon), d.max(p.lon)),
        );
        let centroid = fence.centroid();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.config.seed, "events"));
        rng.set_stream(((day_index as u64) << 32) | boat as u64);
        let start = self.day(day_index).start();
        let boat_id = WorldConfig::boat_id(boat);
        let device_id = WorldConfig::device_id(boat);

        let inside = |rng: &mut ChaCha8Rng| -> Point<f64> {
            // rejection-sample the fence's bounding box, falling back to the centroid
            for _ in 0..64 {
                let p = Point::new(rng.random_range(lo_lat..hi_lat), rng.random_range(lo_lon..hi_lon));
                if fence.contains(&p) && !fence.on_boundary(&p) {
                    return p;
                }
            }
            centroid
        };
        let mut events = Vec::new();
        let n = self.config.events_per_boat_per_day;
        for k in 0..n + self.config.noise_per_boat_per_day {
            let significant = k < n;
            let t = start.plus(60 + rng.random_range(0..EVENT_WINDOW_SECS - 60));
            let (kind, location) = if !significant {
                (EventKind::Heartbeat, inside(&mut rng))
            } else {
                match rng.random_range(0..4u8) {
                    0 => (EventKind::Accident, inside(&mut rng)),
                    1 => (EventKind::SpeedViolation, inside(&mut rng)),
                    2 => {
                        let p = Point::new(hi_lat + rng.random_range(0.001..0.05), rng.random_range(lo_lon..hi_lon));
                        (EventKind::GeofenceExit, p)
                    }
                    _ => {
                        let p = Point::new(rng.random_range(lo_lat..hi_lat), lo_lon - rng.random_range(0.001..0.05));
                        (EventKind::Heartbeat, p)
                    }
                }
            };
            let len = rng.random_range(32..96);
            let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let event_id = if significant {
                format!("{boat_id}-d{day_index:03}-{k:03}")
            } else {
                format!("{boat_id}-d{day_index:03}-n{:02}", k - n)
            };
            events.push(EventRecord {
                event_id,
                boat_id: boat_id.clone(),
                device_id: device_id.clone(),
                timestamp: t,
                kind,
                payload,
                location: Point::new((location.lat * 1e6).round() / 1e6, (location.lon * 1e6).round() / 1e6),
            });
        }
        events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.event_id.cmp(&b.event_id)));
        events
    }

    /// All boats' events for a day, merged in (time, event_id) order.
    pub fn day_events(&self, day_index: u32) -> Vec<EventRecord> {
        let mut all: Vec<EventRecord> = (0..self.config.boats).flat_map(|b| self.generate_events(day_index, b)).collect();
        all.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.event_id.cmp(&b.event_id)));
        all
    }

    /// Advances to the event's time and runs it through its boat's pipeline.
    /// Returns `None` if the event was filtered out.
    pub fn step_event(&mut self, event: &EventRecord) -> Result<Option<SubmissionRecord>, SimError> {
        self.advance_to(event.timestamp);
        let dev = self
            .devices
            .iter_mut()
            .find(|d| d.device_id() == event.device_id)
            .ok_or_else(|| SimError::Config(format!("no device `{}`", event.device_id)))?;
        match dev.admit(event) {
            Admission::Submit => Ok(Some(dev.process_event(event, &self.store)?)),
            Admission::Insignificant | Admission::OverDailyCap => Ok(None),
        }
    }

    /// Closes a day: moves the clock to midnight, synchronizes the day and
    /// resubmits whatever is still unconfirmed.
    pub fn end_day(&mut self, day: Day) -> Result<(SyncReport, usize), SimError> {
        self.advance_to(day.end());
        let report = self.store.daily_sync(
            day,
            &self.first_level,
            &self.second_level,
            &self.anchor_wallet,
            self.config.anchor_fee,
        )?;
        self.unsynced.retain(|d| *d != day);
        let resubmitted = self.retry_all()?;
        Ok((report, resubmitted))
    }

    /// Runs the edge retry policy for every device over its unanchored rows.
    pub fn retry_all(&mut self) -> Result<usize, SimError> {
        let now = self.now();
        let mut total = 0;
        for dev in &self.devices {
            let mut records = self.store.unanchored_records(dev.device_id());
            total += dev.retry_unconfirmed(&mut records, now, self.config.retry_timeout).len();
            self.store.update_submissions(&records)?;
        }
        Ok(total)
    }

    /// Generates and processes one day's events, calling `hook` after each
    /// submitted event, without synchronizing.
    pub fn run_day_events(
        &mut self,
        day_index: u32,
        mut hook: impl FnMut(&mut World, &EventRecord, &SubmissionRecord) -> Result<(), SimError>,
    ) -> Result<(usize, usize), SimError> {
        let events = self.day_events(day_index);
        let mut submitted = 0;
        for ev in &events {
            if let Some(rec) = self.step_event(ev)? {
                submitted += 1;
                hook(self, ev, &rec)?;
            }
        }
        let day = self.day(day_index);
        if !self.unsynced.contains(&day) {
            self.unsynced.push(day);
        }
        Ok((events.len(), submitted))
    }

    /// One full day: events, sync, retries.
    pub fn run_day(&mut self, day_index: u32) -> Result<DaySummary, SimError> {
        let (generated, submitted) = self.run_day_events(day_index, |_, _, _| Ok(()))?;
        let day = self.day(day_index);
        let (sync, resubmitted) = self.end_day(day)?;
        let summary = DaySummary { day, generated, submitted, filtered: generated - submitted, sync, resubmitted };
        self.history.push(summary.clone());
        self.days_completed = self.days_completed.max(day_index + 1);
        Ok(summary)
    }

    /// Runs every configured day and settles anchors. With `sync_last` false,
    /// the final day's events are generated but left unsynchronized.
    pub fn run(&mut self, sync_last: bool) -> Result<Vec<DaySummary>, SimError> {
        let mut out = Vec::new();
        for d in self.days_completed..self.config.days {
            if d + 1 == self.config.days && !sync_last {
                self.run_day_events(d, |_, _, _| Ok(()))?;
                self.days_completed = d + 1;
            } else {
                out.push(self.run_day(d)?);
            }
        }
        self.settle()?;
        self.save()?;
        Ok(out)
    }

    /// Synchronizes an already-simulated day (idempotent).
    pub fn sync_day(&mut self, day: Day) -> Result<SyncReport, SimError> {
        if day >= self.day(self.days_completed) {
            return Err(SimError::Config(format!("day {day} has not been simulated")));
        }
        let (report, _) = self.end_day(day)?;
        self.settle()?;
        self.save()?;
        Ok(report)
    }

    /// Lets the second level confirm outstanding anchors and records their
    /// status.
    pub fn settle(&mut self) -> Result<(), SimError> {
        let p = &self.config.second_level;
        let horizon = self.now().plus(p.confirmation_latency + 2 * p.block_interval);
        self.advance_to(horizon);
        self.store.refresh_anchors(&self.second_level, &self.anchor_wallet, self.config.anchor_fee)?;
        Ok(())
    }

    pub fn verify(&self, event_id: &str) -> Result<VerificationReport, SimError> {
        Ok(crate::verifier::full_verify(event_id, &self.store, &self.first_level, &self.second_level)?)
    }

    /// Verifies every stored row; returns (event_id, verdict) in insertion order.
    pub fn verify_all(&self) -> Vec<(String, Verdict)> {
        self.store
            .all_rows()
            .iter()
            .map(|r| (r.event_id.clone(), verify_row(r, &self.store, &self.first_level, &self.second_level).verdict))
            .collect()
    }

    /// Verdict histogram over every stored row.
    pub fn verdict_counts(&self) -> BTreeMap<Verdict, usize> {
        let mut out = BTreeMap::new();
        for (_, v) in self.verify_all() {
            *out.entry(v).or_insert(0) += 1;
        }
        out
    }

    /// Combined digest of store and chain states.
    pub fn state_digest(&self) -> Digest {
        let mut buf = self.store.state_digest().0.to_vec();
        for c in self.all_chains() {
            buf.extend_from_slice(&c.state_digest().0);
        }
        Digest::sha256(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig { boats: 3, events_per_boat_per_day: 4, noise_per_boat_per_day: 2, days: 2, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(WorldConfig { days: 0, ..small() }.validate().is_err());
        assert!(WorldConfig { boats: 0, ..small() }.validate().is_err());
        assert!(WorldConfig { origin: Timestamp(5), ..small() }.validate().is_err());
        small().validate().unwrap();
        let json = serde_json::to_string(&small()).unwrap();
        assert_eq!(serde_json::from_str::<WorldConfig>(&json).unwrap(), small());
        assert!(serde_json::from_str::<WorldConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_filtered() {
        let w = World::new(small()).unwrap();
        let a = w.day_events(0);
        assert_eq!(a, World::new(small()).unwrap().day_events(0));
        assert_eq!(a.len(), 3 * 6);
        let policy = SignificancePolicy::from_file(&small().policy).unwrap();
        let sig = a.iter().filter(|e| crate::edge::filter_event(e, &policy)).count();
        assert_eq!(sig, 3 * 4);
        assert!(a.iter().all(|e| w.day(0).contains(e.timestamp)));
        assert_ne!(w.day_events(1)[0].payload, a[0].payload);
    }

    #[test]
    fn small_run_is_intact() {
        let mut w = World::new(small()).unwrap();
        let days = w.run(true).unwrap();
        assert_eq!(days.len(), 2);
        for d in &days {
            assert_eq!(d.sync.anchors(), 2);
            assert_eq!(d.sync.missing_total(), 0);
            assert_eq!(d.submitted, 12);
            assert_eq!(d.filtered, 6);
        }
        let counts = w.verdict_counts();
        assert_eq!(counts.get(&Verdict::Intact), Some(&24), "{counts:?}");
    }

    #[test]
    fn unsynced_last_day_is_incomplete() {
        let mut w = World::new(small()).unwrap();
        w.run(false).unwrap();
        let counts = w.verdict_counts();
        assert_eq!(counts.get(&Verdict::Intact), Some(&12));
        assert_eq!(counts.get(&Verdict::Incomplete), Some(&12));
        w.sync_day(w.day(1)).unwrap();
        assert_eq!(w.verdict_counts().get(&Verdict::Intact), Some(&24));
    }
}
