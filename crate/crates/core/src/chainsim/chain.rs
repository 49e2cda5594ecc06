use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    verify_sig, Attack, AttackReport, Block, ChainError, ChainProfile, ChainTx, Fee, PublicKey, Signature, TxId,
    TxStatus, Wallet,
};
use crate::merkle::Digest;
use crate::time::Timestamp;

/// Ordered so that the first element is the next eviction victim: lowest fee,
/// then oldest submission, then smallest id.
type EvictionKey = (Fee, Timestamp, TxId);

/// One simulated chain. Not synchronized; wrap in a
/// [`ChainHandle`](super::ChainHandle) to share.
///
/// Block `h` is cut at `genesis_time + h * block_interval`. Only blocks that
/// confirm something are stored; the hashes of empty blocks in between are
/// recomputed on demand from `(height, prev_hash, timestamp)`.
#[derive(Debug, Clone)]
pub struct Chain {
    profile: ChainProfile,
    seed: u64,
    genesis_time: Timestamp,
    now: Timestamp,
    online: bool,
    accounts: BTreeMap<String, PublicKey>,
    blocks: Vec<Block>,
    tip_height: u64,
    tip_hash: Digest,
    txs: BTreeMap<TxId, ChainTx>,
    by_fee: BTreeSet<EvictionKey>,
    by_time: BTreeSet<(Timestamp, TxId)>,
    flood_counter: u64,
}

/// Serializable snapshot of a [`Chain`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    pub profile: ChainProfile,
    pub seed: u64,
    pub genesis_time: Timestamp,
    pub now: Timestamp,
    pub online: bool,
    pub accounts: BTreeMap<String, PublicKey>,
    pub tip_height: u64,
    pub tip_hash: Digest,
    pub blocks: Vec<Block>,
    pub mempool: Vec<TxId>,
    pub txs: Vec<ChainTx>,
    pub flood_counter: u64,
}

impl Chain {
    pub fn new(profile: ChainProfile, seed: u64, genesis_time: Timestamp) -> Result<Self, ChainError> {
        profile.validate()?;
        let genesis_hash = Block::compute_hash(0, &Digest::default(), &[], genesis_time);
        let genesis = Block {
            height: 0,
            prev_hash: Digest::default(),
            tx_ids: Vec::new(),
            timestamp: genesis_time,
            block_hash: genesis_hash,
        };
        Ok(Chain {
            profile,
            seed,
            genesis_time,
            now: genesis_time,
            online: true,
            accounts: BTreeMap::new(),
            blocks: vec![genesis],
            tip_height: 0,
            tip_hash: genesis_hash,
            txs: BTreeMap::new(),
            by_fee: BTreeSet::new(),
            by_time: BTreeSet::new(),
            flood_counter: 0,
        })
    }

    pub fn profile(&self) -> &ChainProfile {
        &self.profile
    }

    pub fn chain_id(&self) -> &str {
        &self.profile.chain_id
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn tip_height(&self) -> u64 {
        self.tip_height
    }

    pub fn tip_hash(&self) -> Digest {
        self.tip_hash
    }

    pub fn mempool_len(&self) -> usize {
        self.by_fee.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = &ChainTx> {
        self.by_fee.iter().map(|(_, _, id)| &self.txs[id])
    }

    pub fn transactions(&self) -> impl Iterator<Item = &ChainTx> {
        self.txs.values()
    }

    /// Stored (non-empty) blocks plus genesis, ascending by height.
    pub fn stored_blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn set_online(&mut self, online: bool) {
        self.online = online;
    }

    fn slot_time(&self, height: u64) -> Timestamp {
        self.genesis_time.plus(height * self.profile.block_interval)
    }

    fn jitter(&self, height: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(height);
        rng.random_range(0..self.profile.block_interval)
    }

    pub fn register_account(&mut self, key_id: &str, public_key: PublicKey) -> Result<(), ChainError> {
        match self.accounts.get(key_id) {
            Some(existing) if *existing != public_key => {
                Err(ChainError::Rejected(format!("account `{key_id}` already bound to another key")))
            }
            Some(_) => Ok(()),
            None => {
                self.accounts.insert(key_id.to_string(), public_key);
                Ok(())
            }
        }
    }

    pub fn account_key(&self, key_id: &str) -> Option<PublicKey> {
        self.accounts.get(key_id).copied()
    }

    /// Signs with `wallet` at the chain's current time and submits.
    pub fn submit_tx(&mut self, payload_digest: Digest, wallet: &Wallet, fee: Fee) -> Result<TxId, ChainError> {
        if wallet.chain_id() != self.chain_id() {
            return Err(ChainError::Rejected(format!(
                "wallet `{}` is bound to chain `{}`",
                wallet.key_id(),
                wallet.chain_id()
            )));
        }
        let submit_time = self.now;
        let msg = ChainTx::signing_message(self.chain_id(), &payload_digest, submit_time);
        let signature = wallet.sign(&msg);
        self.submit_signed(payload_digest, wallet.key_id(), submit_time, signature, fee)
    }

    /// Accepts a pre-signed submission. If the mempool overflows, the lowest
    /// fee (oldest on ties) pending tx is evicted, possibly the new one.
    pub fn submit_signed(
        &mut self,
        payload_digest: Digest,
        submitter: &str,
        submit_time: Timestamp,
        signature: Signature,
        fee: Fee,
    ) -> Result<TxId, ChainError> {
        if !self.online {
            return Err(ChainError::Unavailable(self.chain_id().to_string()));
        }
        let key = self
            .accounts
            .get(submitter)
            .ok_or_else(|| ChainError::Rejected(format!("unknown account `{submitter}`")))?;
        if submit_time > self.now {
            return Err(ChainError::Rejected("submit_time is in the future".into()));
        }
        let msg = ChainTx::signing_message(self.chain_id(), &payload_digest, submit_time);
        if !verify_sig(key, &msg, &signature)? {
            return Err(ChainError::Rejected("bad signature".into()));
        }
        let tx_id = ChainTx::compute_id(self.chain_id(), &payload_digest, submitter, submit_time);
        if self.txs.contains_key(&tx_id) {
            return Err(ChainError::Rejected(format!("duplicate transaction {tx_id}")));
        }
        let tx = ChainTx {
            tx_id,
            chain_id: self.profile.chain_id.clone(),
            payload_digest,
            submitter: submitter.to_string(),
            signature,
            fee,
            submit_time,
            status: TxStatus::Pending,
            block_height: None,
        };
        self.txs.insert(tx_id, tx);
        self.enqueue(tx_id);
        Ok(tx_id)
    }

    /// Puts a pending tx into the mempool, evicting as needed.
    fn enqueue(&mut self, tx_id: TxId) -> Vec<TxId> {
        let (fee, t) = {
            let tx = &self.txs[&tx_id];
            (tx.fee, tx.submit_time)
        };
        self.by_fee.insert((fee, t, tx_id));
        self.by_time.insert((t, tx_id));
        let mut evicted = Vec::new();
        while self.by_fee.len() > self.profile.mempool_capacity {
            let victim = self.by_fee.pop_first().expect("over capacity implies non-empty");
            self.by_time.remove(&(victim.1, victim.2));
            if let Some(tx) = self.txs.get_mut(&victim.2) {
                tx.status = TxStatus::Evicted;
            }
            evicted.push(victim.2);
        }
        evicted
    }

    fn dequeue(&mut self, tx_id: &TxId) -> bool {
        let Some(tx) = self.txs.get(tx_id) else { return false };
        let removed = self.by_fee.remove(&(tx.fee, tx.submit_time, *tx_id));
        self.by_time.remove(&(tx.submit_time, *tx_id));
        removed
    }

    pub fn advance(&mut self, dt: u64) -> Vec<TxId> {
        if dt == 0 {
            return Vec::new();
        }
        self.now = self.now.plus(dt);
        self.produce_due_blocks()
    }

    /// Advances the clock to `t` (no-op if `t` is not in the future).
    pub fn advance_to(&mut self, t: Timestamp) -> Vec<TxId> {
        if t <= self.now {
            return Vec::new();
        }
        self.advance(t.0 - self.now.0)
    }

    fn produce_due_blocks(&mut self) -> Vec<TxId> {
        let mut confirmed = Vec::new();
        while self.slot_time(self.tip_height + 1) <= self.now {
            confirmed.extend(self.produce_block());
        }
        confirmed
    }

    fn produce_block(&mut self) -> Vec<TxId> {
        let height = self.tip_height + 1;
        let ts = self.slot_time(height);
        let latency = self.profile.confirmation_latency;
        let max_jitter = self.profile.block_interval - 1;
        let mut included: Vec<&ChainTx> = Vec::new();
        let may_confirm = matches!(self.by_time.first(), Some((t, _)) if t.0 + latency <= ts.0 + max_jitter);
        if may_confirm {
            // eligible iff (ts - submit_time) + jitter >= latency
            let horizon = (ts.0 + self.jitter(height)).checked_sub(latency);
            if let Some(horizon) = horizon {
                included = self
                    .by_time
                    .iter()
                    .take_while(|(t, _)| t.0 <= horizon)
                    .map(|(_, id)| &self.txs[id])
                    .collect();
            }
        }
        included.sort_by(|a, b| b.fee.cmp(&a.fee).then(a.submit_time.cmp(&b.submit_time)).then(a.tx_id.cmp(&b.tx_id)));
        let tx_ids: Vec<TxId> = included.iter().map(|tx| tx.tx_id).collect();
        let block_hash = Block::compute_hash(height, &self.tip_hash, &tx_ids, ts);
        if !tx_ids.is_empty() {
            for id in &tx_ids {
                self.dequeue(id);
                let tx = self.txs.get_mut(id).expect("mempool tx is in the table");
                tx.status = TxStatus::Confirmed;
                tx.block_height = Some(height);
            }
            self.blocks.push(Block { height, prev_hash: self.tip_hash, tx_ids: tx_ids.clone(), timestamp: ts, block_hash });
        }
        self.tip_height = height;
        self.tip_hash = block_hash;
        tx_ids
    }

    pub fn query_tx(&self, tx_id: &TxId) -> Option<&ChainTx> {
        self.txs.get(tx_id)
    }

    /// Confirmed txs whose block timestamp lies in `[t0, t1)`, ordered by
    /// `(block_height, tx_id)`.
    pub fn fetch_confirmed(&self, t0: Timestamp, t1: Timestamp) -> Vec<ChainTx> {
        if t0 >= t1 {
            return Vec::new();
        }
        let start = self.blocks.partition_point(|b| b.timestamp < t0);
        let mut out = Vec::new();
        for block in self.blocks[start..].iter().take_while(|b| b.timestamp < t1) {
            let mut ids = block.tx_ids.clone();
            ids.sort();
            out.extend(ids.iter().map(|id| self.txs[id].clone()));
        }
        out
    }

    /// Materializes the block at `height`, including empty ones.
    pub fn block_at(&self, height: u64) -> Option<Block> {
        if height > self.tip_height {
            return None;
        }
        let idx = self.blocks.partition_point(|b| b.height <= height) - 1;
        let base = &self.blocks[idx];
        if base.height == height {
            return Some(base.clone());
        }
        let mut prev = base.block_hash;
        for h in base.height + 1..height {
            prev = Block::compute_hash(h, &prev, &[], self.slot_time(h));
        }
        let ts = self.slot_time(height);
        Some(Block { height, prev_hash: prev, tx_ids: Vec::new(), timestamp: ts, block_hash: Block::compute_hash(height, &prev, &[], ts) })
    }

    fn hash_through(&self, from: &Block, to_height: u64) -> Digest {
        let mut prev = from.block_hash;
        for h in from.height + 1..=to_height {
            prev = Block::compute_hash(h, &prev, &[], self.slot_time(h));
        }
        prev
    }

    pub fn inject_attack(&mut self, attack: Attack, reference_hourly_cost: f64) -> Result<AttackReport, ChainError> {
        let mut report = AttackReport {
            chain_id: self.profile.chain_id.clone(),
            attack: attack.clone(),
            depth: 0,
            txs_returned_to_mempool: Vec::new(),
            evicted: Vec::new(),
            injected: Vec::new(),
            estimated_cost_usd: 0.0,
        };
        match attack {
            Attack::Rollback { depth } => {
                if depth > self.tip_height {
                    return Err(ChainError::InvalidAttack(format!(
                        "rollback depth {depth} exceeds height {}",
                        self.tip_height
                    )));
                }
                let new_tip = self.tip_height - depth;
                let keep = self.blocks.partition_point(|b| b.height <= new_tip);
                let removed: Vec<Block> = self.blocks.drain(keep..).collect();
                for block in &removed {
                    for id in &block.tx_ids {
                        let tx = self.txs.get_mut(id).expect("block tx is in the table");
                        tx.status = TxStatus::Pending;
                        tx.block_height = None;
                        report.txs_returned_to_mempool.push(*id);
                    }
                }
                for id in report.txs_returned_to_mempool.clone() {
                    report.evicted.extend(self.enqueue(id));
                }
                let base = self.blocks.last().expect("genesis is never removed").clone();
                self.tip_hash = self.hash_through(&base, new_tip);
                self.tip_height = new_tip;
                report.depth = depth;
            }
            Attack::DropTx { tx_id } => {
                let pending = self.txs.get(&tx_id).is_some_and(|tx| tx.status == TxStatus::Pending);
                if !pending {
                    return Err(ChainError::InvalidAttack(format!("tx {tx_id} is not pending")));
                }
                self.dequeue(&tx_id);
                self.txs.get_mut(&tx_id).expect("checked above").status = TxStatus::Evicted;
                report.evicted.push(tx_id);
            }
            Attack::Flood { count, fee } => {
                let wallet = Wallet::derive(format!("adversary@{}", self.chain_id()), self.chain_id(), self.seed ^ 0xADu64);
                self.register_account(wallet.key_id(), wallet.public_key())?;
                for _ in 0..count {
                    self.flood_counter += 1;
                    let mut preimage = b"flood".to_vec();
                    preimage.extend_from_slice(&self.flood_counter.to_be_bytes());
                    let payload = Digest::sha256(&preimage);
                    let msg = ChainTx::signing_message(self.chain_id(), &payload, self.now);
                    let sig = wallet.sign(&msg);
                    let before: BTreeSet<TxId> = self.by_fee.iter().map(|k| k.2).collect();
                    let id = self.submit_signed(payload, wallet.key_id(), self.now, sig, fee)?;
                    report.injected.push(id);
                    report.evicted.extend(before.into_iter().filter(|b| self.txs[b].status == TxStatus::Evicted));
                    if self.txs[&id].status == TxStatus::Evicted {
                        report.evicted.push(id);
                    }
                }
                report.estimated_cost_usd = count as f64 * fee.to_f64();
            }
            Attack::Rewrite { tx_id, payload_digest } => {
                let height = match self.txs.get(&tx_id) {
                    Some(tx) if tx.status == TxStatus::Confirmed => tx.block_height.expect("confirmed has height"),
                    _ => return Err(ChainError::InvalidAttack(format!("tx {tx_id} is not confirmed"))),
                };
                // Re-mined blocks keep their tx id lists, so block hashes (which
                // commit to ids only) are unchanged; the tx body is what differs.
                self.txs.get_mut(&tx_id).expect("checked above").payload_digest = payload_digest;
                report.depth = self.tip_height - height + 1;
            }
        }
        report.estimated_cost_usd +=
            report.depth as f64 * self.profile.rollback_resistance * reference_hourly_cost;
        Ok(report)
    }

    /// Checks hash links from genesis to tip and mempool/status consistency.
    pub fn verify_integrity(&self) -> Result<(), ChainError> {
        let fail = |height: u64, reason: String| Err(ChainError::Integrity { height, reason });
        let genesis = &self.blocks[0];
        if genesis.height != 0 || genesis.prev_hash != Digest::default() {
            return fail(0, "bad genesis".into());
        }
        let mut prev = genesis.block_hash;
        if Block::compute_hash(0, &genesis.prev_hash, &genesis.tx_ids, genesis.timestamp) != prev {
            return fail(0, "genesis hash mismatch".into());
        }
        let mut stored = self.blocks[1..].iter().peekable();
        for h in 1..=self.tip_height {
            match stored.peek() {
                Some(b) if b.height == h => {
                    if b.prev_hash != prev {
                        return fail(h, "prev_hash does not link to previous block".into());
                    }
                    if b.timestamp != self.slot_time(h) {
                        return fail(h, "timestamp off schedule".into());
                    }
                    if Block::compute_hash(h, &b.prev_hash, &b.tx_ids, b.timestamp) != b.block_hash {
                        return fail(h, "block_hash mismatch".into());
                    }
                    for id in &b.tx_ids {
                        match self.txs.get(id) {
                            Some(tx) if tx.status == TxStatus::Confirmed && tx.block_height == Some(h) => {}
                            _ => return fail(h, format!("tx {id} not recorded as confirmed here")),
                        }
                    }
                    prev = b.block_hash;
                    stored.next();
                }
                Some(b) if b.height < h => return fail(b.height, "blocks out of order".into()),
                _ => prev = Block::compute_hash(h, &prev, &[], self.slot_time(h)),
            }
        }
        if stored.next().is_some() {
            return fail(self.tip_height, "stored block above tip".into());
        }
        if prev != self.tip_hash {
            return fail(self.tip_height, "tip hash mismatch".into());
        }
        for tx in self.txs.values() {
            let in_pool = self.by_fee.contains(&(tx.fee, tx.submit_time, tx.tx_id));
            if in_pool != (tx.status == TxStatus::Pending) {
                return fail(self.tip_height, format!("tx {} status/mempool mismatch", tx.tx_id));
            }
            if (tx.status == TxStatus::Confirmed) != tx.block_height.is_some() {
                return fail(self.tip_height, format!("tx {} height/status mismatch", tx.tx_id));
            }
        }
        Ok(())
    }

    pub fn to_state(&self) -> ChainState {
        ChainState {
            profile: self.profile.clone(),
            seed: self.seed,
            genesis_time: self.genesis_time,
            now: self.now,
            online: self.online,
            accounts: self.accounts.clone(),
            tip_height: self.tip_height,
            tip_hash: self.tip_hash,
            blocks: self.blocks.clone(),
            mempool: self.by_fee.iter().map(|k| k.2).collect(),
            txs: self.txs.values().cloned().collect(),
            flood_counter: self.flood_counter,
        }
    }

    pub fn from_state(state: ChainState) -> Result<Self, ChainError> {
        state.profile.validate()?;
        let mut chain = Chain::new(state.profile, state.seed, state.genesis_time)?;
        chain.now = state.now;
        chain.online = state.online;
        chain.accounts = state.accounts;
        if state.blocks.is_empty() {
            return Err(ChainError::Integrity { height: 0, reason: "missing genesis".into() });
        }
        chain.blocks = state.blocks;
        chain.tip_height = state.tip_height;
        chain.tip_hash = state.tip_hash;
        chain.txs = state.txs.into_iter().map(|tx| (tx.tx_id, tx)).collect();
        for id in state.mempool {
            let tx = chain
                .txs
                .get(&id)
                .ok_or_else(|| ChainError::Integrity { height: 0, reason: format!("mempool tx {id} unknown") })?;
            chain.by_fee.insert((tx.fee, tx.submit_time, id));
            chain.by_time.insert((tx.submit_time, id));
        }
        chain.flood_counter = state.flood_counter;
        Ok(chain)
    }

    pub fn export_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_state()).expect("chain state serializes")
    }

    pub fn import_json(json: &str) -> Result<Self, ChainError> {
        Self::from_state(serde_json::from_str(json)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(profile: ChainProfile) -> (Chain, Wallet) {
        let mut c = Chain::new(profile, 11, Timestamp(1_000_000)).unwrap();
        let w = Wallet::derive("dev-1@x", c.chain_id(), 5);
        c.register_account(w.key_id(), w.public_key()).unwrap();
        (c, w)
    }

    fn small(capacity: usize) -> ChainProfile {
        ChainProfile { chain_id: "x".into(), mempool_capacity: capacity, ..ChainProfile::eos() }
    }

    fn d(i: u64) -> Digest {
        Digest::sha256(&i.to_be_bytes())
    }

    #[test]
    fn genesis_state() {
        let (c, _) = chain(ChainProfile::eos());
        assert_eq!(c.tip_height(), 0);
        assert_eq!(c.mempool_len(), 0);
        c.verify_integrity().unwrap();
    }

    #[test]
    fn submit_enters_mempool() {
        let (mut c, w) = chain(small(10));
        let id = c.submit_tx(d(1), &w, Fee(10)).unwrap();
        assert_eq!(c.mempool_len(), 1);
        assert_eq!(c.query_tx(&id).unwrap().status, TxStatus::Pending);
    }

    #[test]
    fn full_mempool_evicts_lowest_fee_oldest_first() {
        let (mut c, w) = chain(small(3));
        let mut low = Vec::new();
        for i in 0..3 {
            low.push(c.submit_tx(d(i), &w, Fee(10)).unwrap());
            c.now = c.now.plus(1);
        }
        let high = c.submit_tx(d(99), &w, Fee(20)).unwrap();
        assert_eq!(c.mempool_len(), 3);
        assert_eq!(c.query_tx(&low[0]).unwrap().status, TxStatus::Evicted);
        assert_eq!(c.query_tx(&low[1]).unwrap().status, TxStatus::Pending);
        assert_eq!(c.query_tx(&high).unwrap().status, TxStatus::Pending);
        // a newcomer paying less than everything evicts itself
        let cheap = c.submit_tx(d(100), &w, Fee(1)).unwrap();
        assert_eq!(c.query_tx(&cheap).unwrap().status, TxStatus::Evicted);
        c.verify_integrity().unwrap();
    }

    #[test]
    fn bad_signature_rejected() {
        let (mut c, w) = chain(small(3));
        let sig = w.sign(&ChainTx::signing_message("x", &d(1), c.now()));
        let err = c.submit_signed(d(2), w.key_id(), c.now(), sig, Fee(1)).unwrap_err();
        assert!(matches!(err, ChainError::Rejected(_)));
        let other = Wallet::derive("intruder@x", "x", 1);
        assert!(c.submit_tx(d(1), &other, Fee(1)).is_err());
        let wrong_chain = Wallet::derive("dev-1@y", "y", 5);
        assert!(c.submit_tx(d(1), &wrong_chain, Fee(1)).is_err());
    }

    #[test]
    fn offline_chain_rejects() {
        let (mut c, w) = chain(small(3));
        c.set_online(false);
        assert!(matches!(c.submit_tx(d(1), &w, Fee(1)), Err(ChainError::Unavailable(_))));
    }

    #[test]
    fn fast_chain_confirms_within_a_minute() {
        let (mut c, w) = chain(ChainProfile { chain_id: "x".into(), ..ChainProfile::eos() });
        let id = c.submit_tx(d(1), &w, Fee(1)).unwrap();
        let confirmed = c.advance(60);
        assert_eq!(confirmed, vec![id]);
        let tx = c.query_tx(&id).unwrap();
        assert_eq!(tx.status, TxStatus::Confirmed);
        assert!(tx.block_height.is_some());
        c.verify_integrity().unwrap();
    }

    #[test]
    fn slow_chain_still_pending_after_a_minute() {
        let (mut c, w) = chain(ChainProfile { chain_id: "x".into(), ..ChainProfile::ethereum() });
        let id = c.submit_tx(d(1), &w, Fee(1)).unwrap();
        assert!(c.advance(60).is_empty());
        assert_eq!(c.query_tx(&id).unwrap().status, TxStatus::Pending);
        c.advance(600);
        assert_eq!(c.query_tx(&id).unwrap().status, TxStatus::Confirmed);
    }

    #[test]
    fn empty_advance_still_grows_height() {
        let (mut c, _) = chain(ChainProfile::stellar());
        assert!(c.advance(40).is_empty());
        assert_eq!(c.tip_height(), 10);
        assert_eq!(c.stored_blocks().len(), 1);
        c.verify_integrity().unwrap();
        let b7 = c.block_at(7).unwrap();
        assert_eq!(b7.prev_hash, c.block_at(6).unwrap().block_hash);
        assert_eq!(c.block_at(10).unwrap().block_hash, c.tip_hash());
    }

    #[test]
    fn confirmation_order_is_fee_descending() {
        let (mut c, w) = chain(small(10));
        let a = c.submit_tx(d(1), &w, Fee(5)).unwrap();
        let b = c.submit_tx(d(2), &w, Fee(50)).unwrap();
        let e = c.submit_tx(d(3), &w, Fee(5)).unwrap();
        let confirmed = c.advance(61);
        let mut tail = vec![a, e];
        tail.sort_by_key(|id| (c.query_tx(id).unwrap().submit_time, *id));
        assert_eq!(confirmed, [vec![b], tail].concat());
    }

    #[test]
    fn rollback_returns_txs_to_mempool() {
        let (mut c, w) = chain(ChainProfile { chain_id: "x".into(), block_interval: 10, confirmation_latency: 10, ..ChainProfile::eos() });
        c.advance(40);
        let id = c.submit_tx(d(1), &w, Fee(1)).unwrap();
        c.advance(10);
        assert_eq!(c.tip_height(), 5);
        let h = c.query_tx(&id).unwrap().block_height.unwrap();
        assert_eq!(h, 5);
        let r = c.inject_attack(Attack::Rollback { depth: 1 }, 400_000.0).unwrap();
        assert_eq!(c.tip_height(), 4);
        assert_eq!(r.txs_returned_to_mempool, vec![id]);
        assert_eq!(c.query_tx(&id).unwrap().status, TxStatus::Pending);
        c.verify_integrity().unwrap();
        assert!(c.inject_attack(Attack::Rollback { depth: 5 }, 1.0).is_err());
        // honest miners re-cut the same slot identically
        c.advance(1);
        assert_eq!(c.query_tx(&id).unwrap().block_height, Some(5));
        c.verify_integrity().unwrap();
    }

    #[test]
    fn flood_at_capacity_evicts_prior_low_fee_txs() {
        let (mut c, w) = chain(small(8));
        let legit: Vec<_> = (0..5).map(|i| c.submit_tx(d(i), &w, Fee(10)).unwrap()).collect();
        let r = c.inject_attack(Attack::Flood { count: 8, fee: Fee(1000) }, 400_000.0).unwrap();
        for id in &legit {
            assert_eq!(c.query_tx(id).unwrap().status, TxStatus::Evicted);
            assert!(r.evicted.contains(id));
        }
        assert_eq!(c.mempool_len(), 8);
        c.verify_integrity().unwrap();
    }

    #[test]
    fn drop_tx_and_rewrite() {
        let (mut c, w) = chain(small(8));
        let a = c.submit_tx(d(1), &w, Fee(10)).unwrap();
        c.inject_attack(Attack::DropTx { tx_id: a }, 0.0).unwrap();
        assert_eq!(c.query_tx(&a).unwrap().status, TxStatus::Evicted);
        assert!(c.inject_attack(Attack::DropTx { tx_id: a }, 0.0).is_err());
        let b = c.submit_tx(d(2), &w, Fee(10)).unwrap();
        c.advance(100);
        let r = c.inject_attack(Attack::Rewrite { tx_id: b, payload_digest: d(3) }, 1.0).unwrap();
        assert!(r.depth >= 1);
        let tx = c.query_tx(&b).unwrap();
        assert_eq!(tx.payload_digest, d(3));
        assert!(!tx.id_matches_content());
        c.verify_integrity().unwrap();
    }

    #[test]
    fn fetch_window_is_half_open_and_canonical() {
        let (mut c, w) = chain(ChainProfile { chain_id: "x".into(), block_interval: 10, confirmation_latency: 10, ..ChainProfile::eos() });
        let ids: Vec<_> = (0..3).map(|i| c.submit_tx(d(i), &w, Fee(i + 1)).unwrap()).collect();
        c.advance(10);
        let block = c.stored_blocks().last().unwrap().clone();
        assert_eq!(block.tx_ids.len(), 3);
        let got = c.fetch_confirmed(block.timestamp, block.timestamp.plus(1));
        let mut want = ids.clone();
        want.sort();
        assert_eq!(got.iter().map(|t| t.tx_id).collect::<Vec<_>>(), want);
        assert!(c.fetch_confirmed(Timestamp(0), block.timestamp).is_empty());
        assert!(c.fetch_confirmed(block.timestamp, block.timestamp).is_empty());
    }

    #[test]
    fn export_import_round_trip() {
        let (mut c, w) = chain(small(8));
        c.submit_tx(d(1), &w, Fee(10)).unwrap();
        c.advance(90);
        c.submit_tx(d(2), &w, Fee(10)).unwrap();
        let json = c.export_json();
        let back = Chain::import_json(&json).unwrap();
        assert_eq!(back.export_json(), json);
        back.verify_integrity().unwrap();
    }
}
