//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use multichain_forensics::chainsim::{ChainHandle, ChainProfile, ChainRegistry, Wallet};
use multichain_forensics::datacenter::{DataCenter, SyncReport};
use multichain_forensics::edge::geo::Point;
use multichain_forensics::edge::{EdgeDevice, EventKind, EventRecord, SignificancePolicy};
use multichain_forensics::time::{Day, Timestamp, DEFAULT_ORIGIN};

pub const SEED: u64 = 7;

/// Two first-level chains, one second-level chain, a store and any number of
/// provisioned devices.
pub struct Rig {
    pub eos: ChainHandle,
    pub xlm: ChainHandle,
    pub eth: ChainHandle,
    pub dc: DataCenter,
    pub anchor: Wallet,
    pub devices: Vec<EdgeDevice>,
}

impl Rig {
    pub fn new(devices: usize) -> Self {
        Self::with_store(devices, DataCenter::in_memory())
    }

    pub fn with_store(devices: usize, dc: DataCenter) -> Self {
        let mut reg = ChainRegistry::new(DEFAULT_ORIGIN);
        let eos = reg.create_chain(ChainProfile::eos(), SEED).unwrap();
        let xlm = reg.create_chain(ChainProfile::stellar(), SEED).unwrap();
        let eth = reg.create_chain(ChainProfile::ethereum(), SEED).unwrap();
        let anchor = Wallet::derive("datacenter@ethereum", "ethereum", SEED);
        eth.register_account(anchor.key_id(), anchor.public_key()).unwrap();
        let mut rig = Rig { eos, xlm, eth, dc, anchor, devices: Vec::new() };
        for i in 0..devices {
            rig.add_device(&boat(i), &device(i));
        }
        rig
    }

    pub fn add_device(&mut self, boat_id: &str, device_id: &str) {
        let dev = EdgeDevice::provision(boat_id, device_id, SignificancePolicy::default_zone(), &self.first_level(), SEED)
            .unwrap();
        self.dc.register_device(dev.registration()).unwrap();
        self.devices.push(dev);
    }

    pub fn first_level(&self) -> Vec<ChainHandle> {
        vec![self.eos.clone(), self.xlm.clone()]
    }

    pub fn chain(&self, id: &str) -> &ChainHandle {
        match id {
            "eos" => &self.eos,
            "stellar" => &self.xlm,
            "ethereum" => &self.eth,
            other => panic!("no chain {other}"),
        }
    }

    pub fn at(&self, t: Timestamp) {
        for c in [&self.eos, &self.xlm, &self.eth] {
            c.advance_to(t);
        }
    }

    pub fn sync(&self, day: Day) -> SyncReport {
        self.at(day.end());
        self.dc
            .daily_sync(day, &self.first_level(), &self.eth, &self.anchor, ChainProfile::ethereum_contract_fee())
            .unwrap()
    }

    /// Lets the second level confirm pending anchors.
    pub fn settle(&self) {
        let p = ChainProfile::ethereum();
        let t = self.eth.now().plus(p.confirmation_latency + 2 * p.block_interval);
        self.at(t);
        self.dc.refresh_anchors(&self.eth, &self.anchor, ChainProfile::ethereum_contract_fee()).unwrap();
    }

    /// Processes `n` accident events for device `d`, spaced `gap` seconds apart
    /// starting `start` seconds into the first day. Returns the event ids.
    pub fn feed(&self, d: usize, n: usize, start: u64, gap: u64) -> Vec<String> {
        (0..n)
            .map(|k| {
                let e = event(d, k, DEFAULT_ORIGIN.plus(start + gap * k as u64));
                self.at(e.timestamp);
                self.devices[d].process_event(&e, &self.dc).unwrap();
                e.event_id
            })
            .collect()
    }
}

pub fn boat(i: usize) -> String {
    format!("boat-{:03}", i + 1)
}

pub fn device(i: usize) -> String {
    format!("edge-{:03}", i + 1)
}

pub fn event(d: usize, k: usize, t: Timestamp) -> EventRecord {
    EventRecord {
        event_id: format!("{}-e{k:04}", boat(d)),
        boat_id: boat(d),
        device_id: device(d),
        timestamp: t,
        kind: EventKind::Accident,
        payload: format!("impact sensor {d}/{k}").into_bytes(),
        location: Point::new(25.78, -80.19),
    }
}

pub fn day0() -> Day {
    DEFAULT_ORIGIN.day()
}
