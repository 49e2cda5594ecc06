//! Deployment cost model.
//!
//! Compares three ways of committing event digests to public chains:
//!
//! * `multichain`: every event on two cheap first-level chains, plus one
//!   contract-rate anchor per first-level chain per day on the expensive chain;
//! * `eth_func_call`: every event as a function call on the expensive chain
//!   (plus a one-time contract deployment, reported but not totalled);
//! * `eth_new_contract`: every event as its own contract creation.
//!
//! The model is generic over [`Money`]; use [`crate::ExactUsd`] when totals must
//! match to the cent.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{format_usd_cents, to_cents, DecimalError, Money};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid unit cost `{field}`: {source}")]
    InvalidUnitCost { field: &'static str, source: DecimalError },
    #[error("negative unit cost `{0}`")]
    NegativeUnitCost(&'static str),
}

/// Per-transaction prices in USD.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCostTable<M> {
    /// Default EOS rate; reproduces the $232 EOS subtotal for the reference fleet.
    pub eos_per_tx: M,
    /// The listed EOS per-tx price ($0.00063). Kept for reference only.
    pub eos_per_tx_listed: M,
    pub stellar_per_tx: M,
    pub eth_new_contract: M,
    pub eth_func_call: M,
    /// One-time EOS stake, in EOS tokens (no USD rate is known). Never totalled.
    pub eos_stake_tokens: M,
}

/// File form of [`UnitCostTable`]: decimal strings so exact types lose nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCostFile {
    pub eos_per_tx: String,
    #[serde(default = "default_eos_listed")]
    pub eos_per_tx_listed: String,
    pub stellar_per_tx: String,
    pub eth_new_contract: String,
    pub eth_func_call: String,
    #[serde(default = "default_stake")]
    pub eos_stake_tokens: String,
}

fn default_eos_listed() -> String {
    "0.00063".into()
}

fn default_stake() -> String {
    "100".into()
}

impl Default for UnitCostFile {
    fn default() -> Self {
        UnitCostFile {
            eos_per_tx: "0.0000636".into(),
            eos_per_tx_listed: default_eos_listed(),
            stellar_per_tx: "0.000054".into(),
            eth_new_contract: "0.019".into(),
            eth_func_call: "0.0036".into(),
            eos_stake_tokens: default_stake(),
        }
    }
}

impl<M: Money> UnitCostTable<M> {
    /// The reference price list.
    pub fn reference() -> Self {
        Self::from_file(&UnitCostFile::default()).expect("reference literals parse")
    }

    pub fn from_file(f: &UnitCostFile) -> Result<Self, CostError> {
        let p = |field: &'static str, s: &str| {
            M::parse_decimal(s).map_err(|source| CostError::InvalidUnitCost { field, source })
        };
        let table = UnitCostTable {
            eos_per_tx: p("eos_per_tx", &f.eos_per_tx)?,
            eos_per_tx_listed: p("eos_per_tx_listed", &f.eos_per_tx_listed)?,
            stellar_per_tx: p("stellar_per_tx", &f.stellar_per_tx)?,
            eth_new_contract: p("eth_new_contract", &f.eth_new_contract)?,
            eth_func_call: p("eth_func_call", &f.eth_func_call)?,
            eos_stake_tokens: p("eos_stake_tokens", &f.eos_stake_tokens)?,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let zero = M::zero();
        for (name, v) in [
            ("eos_per_tx", &self.eos_per_tx),
            ("eos_per_tx_listed", &self.eos_per_tx_listed),
            ("stellar_per_tx", &self.stellar_per_tx),
            ("eth_new_contract", &self.eth_new_contract),
            ("eth_func_call", &self.eth_func_call),
            ("eos_stake_tokens", &self.eos_stake_tokens),
        ] {
            if *v < zero {
                return Err(CostError::NegativeUnitCost(name));
            }
        }
        Ok(())
    }

    /// Per-tx price of the first `n` first-level chains (EOS, then Stellar).
    fn first_level_rates(&self, n: u64) -> Vec<(&'static str, M)> {
        [("EOS", self.eos_per_tx.clone()), ("Stellar", self.stellar_per_tx.clone())]
            .into_iter()
            .take(n as usize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(try_from = "ScenarioFile")]
pub struct CostScenario {
    pub boats: u64,
    pub events_per_boat_per_day: u64,
    pub days: u64,
    pub first_level_chains: u64,
    pub anchors_per_day: u64,
}

#[derive(Deserialize)]
struct ScenarioFile {
    boats: u64,
    events_per_boat_per_day: u64,
    days: u64,
    #[serde(default = "two")]
    first_level_chains: u64,
    anchors_per_day: Option<u64>,
}

fn two() -> u64 {
    2
}

impl TryFrom<ScenarioFile> for CostScenario {
    type Error = CostError;
    fn try_from(f: ScenarioFile) -> Result<Self, Self::Error> {
        let s = CostScenario {
            boats: f.boats,
            events_per_boat_per_day: f.events_per_boat_per_day,
            days: f.days,
            first_level_chains: f.first_level_chains,
            anchors_per_day: f.anchors_per_day.unwrap_or(f.first_level_chains),
        };
        s.validate()?;
        Ok(s)
    }
}

impl<'de> Deserialize<'de> for CostScenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        ScenarioFile::deserialize(d).and_then(|f| CostScenario::try_from(f).map_err(serde::de::Error::custom))
    }
}

impl CostScenario {
    pub fn new(boats: u64, events_per_boat_per_day: u64, days: u64) -> Result<Self, CostError> {
        let s = CostScenario { boats, events_per_boat_per_day, days, first_level_chains: 2, anchors_per_day: 2 };
        s.validate()?;
        Ok(s)
    }

    /// 1000 boats, 10 significant events per boat per day, one year.
    pub fn reference() -> Self {
        Self::new(1000, 10, 365).expect("valid")
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |m: String| Err(CostError::InvalidScenario(m));
        for (name, v) in [
            ("boats", self.boats),
            ("events_per_boat_per_day", self.events_per_boat_per_day),
            ("days", self.days),
            ("first_level_chains", self.first_level_chains),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.first_level_chains > 2 {
            return bad("at most two first-level chains are priced".into());
        }
        if self.anchors_per_day != self.first_level_chains {
            return bad("anchors_per_day must equal first_level_chains".into());
        }
        Ok(())
    }

    pub fn total_tx(&self) -> u64 {
        self.boats * self.events_per_boat_per_day * self.days
    }

    pub fn total_anchors(&self) -> u64 {
        self.anchors_per_day * self.days
    }

    pub fn scaled_boats(&self, factor: u64) -> Self {
        CostScenario { boats: self.boats * factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Multichain,
    EthFuncCall,
    EthNewContract,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Multichain, Approach::EthFuncCall, Approach::EthNewContract];

    pub fn label(self) -> &'static str {
        match self {
            Approach::Multichain => "Multichain (EOS + Stellar + Ethereum)",
            Approach::EthFuncCall => "Ethereum only (func. call)",
            Approach::EthNewContract => "Ethereum only (new contract)",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineItem<M> {
    pub label: String,
    pub count: u64,
    pub unit_cost: M,
    pub subtotal: M,
    /// One-time or informational items are reported but not summed.
    pub in_total: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown<M> {
    pub approach: Approach,
    pub items: Vec<LineItem<M>>,
    pub total: M,
}

impl<M: Money> CostBreakdown<M> {
    pub fn item(&self, label: &str) -> Option<&LineItem<M>> {
        self.items.iter().find(|i| i.label == label)
    }

    /// Sum of the per-transaction items only.
    pub fn variable_cost(&self) -> M {
        self.items
            .iter()
            .filter(|i| i.in_total && i.label != "Ethereum anchors")
            .fold(M::zero(), |acc, i| acc + i.subtotal.clone())
    }
}

fn line<M: Money>(label: &str, count: u64, unit: &M, in_total: bool) -> LineItem<M> {
    LineItem {
        label: label.to_string(),
        count,
        unit_cost: unit.clone(),
        subtotal: M::from_count(count) * unit.clone(),
        in_total,
    }
}

pub fn scenario_cost<M: Money>(s: &CostScenario, u: &UnitCostTable<M>, approach: Approach) -> CostBreakdown<M> {
    let n = s.total_tx();
    let items = match approach {
        Approach::Multichain => {
            let mut items: Vec<LineItem<M>> =
                u.first_level_rates(s.first_level_chains).iter().map(|(name, rate)| line(name, n, rate, true)).collect();
            items.push(line("Ethereum anchors", s.total_anchors(), &u.eth_new_contract, true));
            items.push(line("EOS stake (tokens, one-time)", 1, &u.eos_stake_tokens, false));
            items
        }
        Approach::EthFuncCall => vec![
            line("Ethereum function calls", n, &u.eth_func_call, true),
            line("Contract deployment (one-time)", 1, &u.eth_new_contract, false),
        ],
        Approach::EthNewContract => vec![line("Ethereum contract creations", n, &u.eth_new_contract, true)],
    };
    let total = items.iter().filter(|i| i.in_total).fold(M::zero(), |acc, i| acc + i.subtotal.clone());
    CostBreakdown { approach, items, total }
}

/// Events per day above which `multichain` beats `eth_func_call`.
pub fn break_even_events_per_day<M: Money>(s: &CostScenario, u: &UnitCostTable<M>) -> f64 {
    let per_tx_first: f64 = u.first_level_rates(s.first_level_chains).iter().map(|(_, r)| r.to_f64()).sum();
    let saving_per_tx = u.eth_func_call.to_f64() - per_tx_first;
    s.anchors_per_day as f64 * u.eth_new_contract.to_f64() / saving_per_tx
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport<M> {
    pub scenario: CostScenario,
    pub rows: Vec<CostBreakdown<M>>,
    pub cheapest: Approach,
    /// `eth_func_call / multichain`.
    pub savings_vs_func_call: f64,
    /// `eth_new_contract / multichain`.
    pub savings_vs_new_contract: f64,
    pub notes: Vec<String>,
}

pub fn cost_report<M: Money>(s: &CostScenario, u: &UnitCostTable<M>) -> CostReport<M> {
    let rows: Vec<CostBreakdown<M>> = Approach::ALL.iter().map(|a| scenario_cost(s, u, *a)).collect();
    let cheapest = rows
        .iter()
        .min_by(|a, b| a.total.partial_cmp(&b.total).unwrap_or(std::cmp::Ordering::Equal))
        .map(|r| r.approach)
        .expect("three rows");
    let total = |a: Approach| rows.iter().find(|r| r.approach == a).expect("row").total.to_f64();
    let multi = total(Approach::Multichain);
    let listed_eos = M::from_count(s.total_tx()) * u.eos_per_tx_listed.clone();
    let notes = vec![
        format!(
            "EOS leg priced at ${}/tx. The listed EOS price of ${}/tx would make the EOS leg {} \
             instead; the default rate is the one consistent with a $232 EOS subtotal for 1000 boats x 10 events x 365 days.",
            fmt_rate(&u.eos_per_tx),
            fmt_rate(&u.eos_per_tx_listed),
            format_usd_cents(to_cents(&listed_eos)),
        ),
        "Ethereum anchors are priced at the contract-creation rate.".to_string(),
        format!(
            "EOS requires a one-time stake of {} EOS; it is not included in any total.",
            u.eos_stake_tokens.to_f64()
        ),
    ];
    CostReport {
        scenario: *s,
        savings_vs_func_call: total(Approach::EthFuncCall) / multi,
        savings_vs_new_contract: total(Approach::EthNewContract) / multi,
        rows,
        cheapest,
        notes,
    }
}

fn fmt_rate<M: Money>(m: &M) -> String {
    let s = format!("{:.10}", m.to_f64());
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl<M: Money> CostReport<M> {
    pub fn row(&self, a: Approach) -> &CostBreakdown<M> {
        self.rows.iter().find(|r| r.approach == a).expect("all approaches present")
    }

    /// Aligned text table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let s = &self.scenario;
        out.push_str(&format!(
            "Scenario: {} boats x {} events/day x {} days ({} first-level chains)\n\n",
            s.boats, s.events_per_boat_per_day, s.days, s.first_level_chains
        ));
        out.push_str(&format!("{:<40} {:>16}\n", "Approach", "Total cost"));
        out.push_str(&format!("{:-<40} {:->16}\n", "", ""));
        for r in &self.rows {
            let mark = if r.approach == self.cheapest { " *" } else { "" };
            out.push_str(&format!("{:<40} {:>16}{}\n", r.approach.label(), format_usd_cents(to_cents(&r.total)), mark));
        }
        out.push_str("\nBreakdown:\n");
        for r in &self.rows {
            out.push_str(&format!("  {}\n", r.approach.label()));
            for i in &r.items {
                let tag = if i.in_total { "" } else { " (not totalled)" };
                out.push_str(&format!(
                    "    {:<34} {:>12} x {:>12} = {:>14}{}\n",
                    i.label,
                    i.count,
                    fmt_rate(&i.unit_cost),
                    format_usd_cents(to_cents(&i.subtotal)),
                    tag
                ));
            }
        }
        out.push_str(&format!(
            "\nCheapest: {}. Savings: {:.1}x vs func. call, {:.1}x vs new contract.\n",
            self.cheapest.label(),
            self.savings_vs_func_call,
            self.savings_vs_new_contract
        ));
        for n in &self.notes {
            out.push_str(&format!("Note: {n}\n"));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "approach": r.approach,
                    "total_usd": format!("{:.2}", to_cents(&r.total) as f64 / 100.0),
                    "items": r.items.iter().map(|i| serde_json::json!({
                        "label": i.label,
                        "count": i.count,
                        "unit_cost_usd": fmt_rate(&i.unit_cost),
                        "subtotal_usd": format!("{:.2}", to_cents(&i.subtotal) as f64 / 100.0),
                        "in_total": i.in_total,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "scenario": self.scenario,
            "rows": rows,
            "cheapest": self.cheapest,
            "savings_vs_func_call": self.savings_vs_func_call,
            "savings_vs_new_contract": self.savings_vs_new_contract,
            "notes": self.notes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ExactUsd;
    use num_rational::Ratio;

    fn usd(s: &str) -> ExactUsd {
        ExactUsd::parse_decimal(s).unwrap()
    }

    #[test]
    fn ethereum_only_totals_are_exact() {
        let s = CostScenario::reference();
        let u = UnitCostTable::<ExactUsd>::reference();
        assert_eq!(scenario_cost(&s, &u, Approach::EthFuncCall).total, usd("13140"));
        assert_eq!(scenario_cost(&s, &u, Approach::EthNewContract).total, usd("69350"));
    }

    #[test]
    fn multichain_breakdown() {
        let s = CostScenario::reference();
        let u = UnitCostTable::<ExactUsd>::reference();
        let b = scenario_cost(&s, &u, Approach::Multichain);
        // 3,650,000 x 0.0000636, 3,650,000 x 0.000054, 730 x 0.019
        assert_eq!(b.item("EOS").unwrap().subtotal, usd("232.14"));
        assert_eq!(b.item("Stellar").unwrap().subtotal, usd("197.1"));
        assert_eq!(b.item("Ethereum anchors").unwrap().subtotal, usd("13.87"));
        assert_eq!(b.total, usd("443.11"));
        assert!(!b.item("EOS stake (tokens, one-time)").unwrap().in_total);
    }

    #[test]
    fn unit_scenario_equals_unit_costs() {
        let s = CostScenario { boats: 1, events_per_boat_per_day: 1, days: 1, first_level_chains: 2, anchors_per_day: 2 };
        let u = UnitCostTable::<ExactUsd>::reference();
        assert_eq!(scenario_cost(&s, &u, Approach::EthFuncCall).total, u.eth_func_call);
        assert_eq!(scenario_cost(&s, &u, Approach::EthNewContract).total, u.eth_new_contract);
        assert_eq!(
            scenario_cost(&s, &u, Approach::Multichain).total,
            u.eos_per_tx + u.stellar_per_tx + u.eth_new_contract * Ratio::from_integer(2)
        );
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(CostScenario::new(10, 0, 365).is_err());
        assert!(CostScenario::new(0, 10, 365).is_err());
        assert!(serde_json::from_str::<CostScenario>(r#"{"boats":1,"events_per_boat_per_day":0,"days":1}"#).is_err());
        assert!(serde_json::from_str::<CostScenario>(
            r#"{"boats":1,"events_per_boat_per_day":1,"days":1,"first_level_chains":2,"anchors_per_day":3}"#
        )
        .is_err());
    }

    #[test]
    fn report_flags_multichain_and_tenfold_savings() {
        let r = cost_report(&CostScenario::reference(), &UnitCostTable::<ExactUsd>::reference());
        assert_eq!(r.cheapest, Approach::Multichain);
        assert!(r.savings_vs_func_call >= 10.0);
        let text = r.render_table();
        assert!(text.contains("$443.11"));
        assert!(text.contains("$13,140.00"));
        assert!(text.contains("$69,350.00"));
        assert!(text.contains("$2,299.50"), "{text}");
    }

    #[test]
    fn float_and_exact_agree() {
        let s = CostScenario::reference();
        let exact = cost_report(&s, &UnitCostTable::<ExactUsd>::reference());
        let float = cost_report(&s, &UnitCostTable::<f64>::reference());
        for a in Approach::ALL {
            assert_eq!(to_cents(&exact.row(a).total), to_cents(&float.row(a).total));
        }
    }

    #[test]
    fn unit_cost_file_round_trip() {
        let f = UnitCostFile::default();
        let json = serde_json::to_string(&f).unwrap();
        let back: UnitCostFile = serde_json::from_str(&json).unwrap();
        assert_eq!(UnitCostTable::<ExactUsd>::from_file(&back).unwrap(), UnitCostTable::reference());
        let bad = UnitCostFile { eth_func_call: "-1".into(), ..UnitCostFile::default() };
        assert!(UnitCostTable::<ExactUsd>::from_file(&bad).is_err());
    }
}
