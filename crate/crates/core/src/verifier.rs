//! Investigator workflow: check a stored event against the first-level
//! chains, then check the stored Merkle evidence against the anchored roots.
//!
//! Every check is read-only. Leaves are rebuilt from the chain's live tx
//! record rather than from the row's copy, so any divergence between the
//! store and the chains surfaces as a mismatch.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chainsim::{ChainHandle, TxStatus};
use crate::datacenter::{DataCenter, LedgerRow, StoreError};
use crate::merkle::{hash_leaf, verify_proof, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstLevelResult {
    /// The recorded tx exists on the chain and is confirmed.
    pub found: bool,
    /// The recorded tx exists and carries the digest recomputed from the
    /// stored event bytes.
    pub digest_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorResult {
    /// The live tx's leaf folds up the stored path to the stored root.
    pub path_valid: bool,
    /// The anchor tx on the second level is confirmed and carries the stored root.
    pub root_on_second_level: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Intact,
    Tampered,
    Incomplete,
}

impl Verdict {
    /// Process exit code for the CLI contract.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Intact => 0,
            Verdict::Tampered => 2,
            Verdict::Incomplete => 3,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Intact => "intact",
            Verdict::Tampered => "tampered",
            Verdict::Incomplete => "incomplete",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub event_id: String,
    /// Whether the stored digest equals the digest of the stored bytes.
    pub stored_digest_consistent: bool,
    pub first_level_results: BTreeMap<String, FirstLevelResult>,
    pub anchor_results: BTreeMap<String, AnchorResult>,
    pub verdict: Verdict,
    pub evidence: Vec<String>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Chains whose first-level and anchor checks all passed.
    pub fn passing_chains(&self) -> Vec<&str> {
        self.first_level_results
            .iter()
            .filter(|(c, r)| {
                r.found
                    && r.digest_match
                    && self.anchor_results.get(*c).is_some_and(|a| a.path_valid && a.root_on_second_level)
            })
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn render_table(&self) -> String {
        let yn = |b: bool| if b { "yes" } else { "NO" };
        let mut out = format!("event {}\n", self.event_id);
        out.push_str(&format!(
            "{:<10} {:>6} {:>12} {:>11} {:>14}\n",
            "chain", "found", "digest_match", "path_valid", "root_anchored"
        ));
        for (c, r) in &self.first_level_results {
            let (p, a) = match self.anchor_results.get(c) {
                Some(a) => (yn(a.path_valid), yn(a.root_on_second_level)),
                None => ("-", "-"),
            };
            out.push_str(&format!("{:<10} {:>6} {:>12} {:>11} {:>14}\n", c, yn(r.found), yn(r.digest_match), p, a));
        }
        out.push_str(&format!("verdict: {}\n", self.verdict));
        for e in &self.evidence {
            out.push_str(&format!("  - {e}\n"));
        }
        out
    }
}

fn handle<'a>(chains: &'a [ChainHandle], id: &str) -> Option<&'a ChainHandle> {
    chains.iter().find(|c| c.chain_id() == id)
}

/// Digest of the stored event bytes; `None` if the bytes are unreadable.
fn recomputed_digest(row: &LedgerRow, store: &DataCenter) -> Option<Digest> {
    store.event_bytes(&row.event_id).ok().and_then(|b| hash_leaf(&b).ok())
}

/// Compares the digest of the stored event with the digest in each recorded
/// first-level tx.
pub fn verify_first_level(
    row: &LedgerRow,
    store: &DataCenter,
    chains: &[ChainHandle],
) -> (BTreeMap<String, FirstLevelResult>, Vec<String>) {
    let digest = recomputed_digest(row, store);
    let mut results = BTreeMap::new();
    let mut evidence = Vec::new();
    for (chain_id, entry) in &row.first_level {
        let live = entry.tx_id.and_then(|id| handle(chains, chain_id).and_then(|h| h.query_tx(&id)));
        let result = match &live {
            None => {
                evidence.push(format!("{chain_id}: recorded tx not found on chain"));
                FirstLevelResult { found: false, digest_match: false }
            }
            Some(tx) => {
                let digest_match = Some(tx.payload_digest) == digest;
                if !digest_match {
                    evidence.push(format!(
                        "{chain_id}: tx {} carries digest {}, stored event hashes to {}",
                        tx.tx_id,
                        tx.payload_digest,
                        digest.map(|d| d.to_hex()).unwrap_or_else(|| "<unreadable>".into())
                    ));
                }
                if tx.status != TxStatus::Confirmed {
                    evidence.push(format!("{chain_id}: tx {} is {:?}, not confirmed", tx.tx_id, tx.status));
                }
                FirstLevelResult { found: tx.status == TxStatus::Confirmed, digest_match }
            }
        };
        results.insert(chain_id.clone(), result);
    }
    (results, evidence)
}

/// For each chain with a stored path: folds the live tx's leaf up the stored
/// path against the stored root, and compares the stored root with the
/// second-level anchor tx.
pub fn verify_anchor(
    row: &LedgerRow,
    chains: &[ChainHandle],
    second_level: &ChainHandle,
) -> (BTreeMap<String, AnchorResult>, Vec<String>) {
    let mut results = BTreeMap::new();
    let mut evidence = Vec::new();
    for (chain_id, proof) in &row.merkle_paths {
        let Some(root) = row.merkle_roots.get(chain_id) else {
            evidence.push(format!("{chain_id}: path stored without a root"));
            results.insert(chain_id.clone(), AnchorResult { path_valid: false, root_on_second_level: false });
            continue;
        };
        let live = row.first_level.get(chain_id).and_then(|e| e.tx_id).and_then(|id| {
            handle(chains, chain_id).and_then(|h| h.query_tx(&id))
        });
        let path_valid = match &live {
            Some(tx) => {
                let ok = verify_proof(&tx.leaf_digest(), proof, root);
                if !ok {
                    evidence.push(format!("{chain_id}: Merkle path does not lead from tx {} to stored root {root}", tx.tx_id));
                }
                ok
            }
            None => {
                evidence.push(format!("{chain_id}: cannot rebuild leaf, tx unavailable"));
                false
            }
        };
        let anchor = row.anchor_refs.get(chain_id).and_then(|id| second_level.query_tx(id));
        let root_on_second_level = match &anchor {
            None => {
                evidence.push(format!("{chain_id}: no anchor tx on {}", second_level.chain_id()));
                false
            }
            Some(tx) if tx.payload_digest != *root => {
                evidence.push(format!(
                    "{chain_id}: anchor tx {} on {} carries root {}, stored root is {root}",
                    tx.tx_id,
                    second_level.chain_id(),
                    tx.payload_digest
                ));
                false
            }
            Some(tx) if tx.status != TxStatus::Confirmed => {
                evidence.push(format!("{chain_id}: anchor tx {} not confirmed yet", tx.tx_id));
                false
            }
            Some(_) => true,
        };
        results.insert(chain_id.clone(), AnchorResult { path_valid, root_on_second_level });
    }
    (results, evidence)
}

/// Runs both checks on a row and derives the verdict:
///
/// - `tampered` if anything present disagrees: stored digest vs stored bytes,
///   a live tx's digest vs the stored bytes, a confirmed tx vs its stored
///   path and root, or a stored root vs an existing anchor tx;
/// - `intact` otherwise, if at least one chain passes every check;
/// - `incomplete` otherwise (unsynced day, pending anchor, missing txs).
pub fn verify_row(
    row: &LedgerRow,
    store: &DataCenter,
    chains: &[ChainHandle],
    second_level: &ChainHandle,
) -> VerificationReport {
    let mut evidence = Vec::new();
    let recomputed = recomputed_digest(row, store);
    let stored_digest_consistent = recomputed == Some(row.payload_digest);
    if !stored_digest_consistent {
        evidence.push(format!("stored digest {} does not match stored event bytes", row.payload_digest));
    }
    let (first, ev1) = verify_first_level(row, store, chains);
    let (anchors, ev2) = verify_anchor(row, chains, second_level);
    evidence.extend(ev1);
    evidence.extend(ev2);

    let mut tampered = !stored_digest_consistent;
    for (chain_id, entry) in &row.first_level {
        let live = entry.tx_id.and_then(|id| handle(chains, chain_id).and_then(|h| h.query_tx(&id)));
        let Some(tx) = live else { continue };
        if !first[chain_id].digest_match {
            tampered = true;
        }
        if tx.status == TxStatus::Confirmed && anchors.get(chain_id).is_some_and(|a| !a.path_valid) {
            tampered = true;
        }
    }
    for (chain_id, root) in &row.merkle_roots {
        let anchor = row.anchor_refs.get(chain_id).and_then(|id| second_level.query_tx(id));
        if anchor.is_some_and(|a| a.payload_digest != *root) {
            tampered = true;
        }
    }

    let mut report = VerificationReport {
        event_id: row.event_id.clone(),
        stored_digest_consistent,
        first_level_results: first,
        anchor_results: anchors,
        verdict: Verdict::Incomplete,
        evidence,
    };
    report.verdict = if tampered {
        Verdict::Tampered
    } else if !report.passing_chains().is_empty() {
        Verdict::Intact
    } else {
        if row.merkle_paths.is_empty() {
            report.evidence.push("event's day has not been synchronized".into());
        }
        Verdict::Incomplete
    };
    report
}

/// Looks up the event and verifies it. Never mutates store or chains.
pub fn full_verify(
    event_id: &str,
    store: &DataCenter,
    chains: &[ChainHandle],
    second_level: &ChainHandle,
) -> Result<VerificationReport, StoreError> {
    let row = store.get_row(event_id)?;
    Ok(verify_row(&row, store, chains, second_level))
}
