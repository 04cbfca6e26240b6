//! Privacy-budget arithmetic under sequential and parallel composition.
//!
//! A [`PrivacyLedger`] is append-only. Sequential entries add up; entries
//! that share a parallel group act on disjoint parts of the data, so only
//! the largest charge in the group counts toward the effective spend.
//!
//! Charges may be recorded either as an absolute epsilon or as an exact
//! rational share of the ledger total. When every entry is a share the
//! ledger can report its spend exactly, which the harness uses to audit
//! that a release consumed precisely its budget.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{DipsError, Result};

/// Relative slack allowed before a charge is considered to overrun the total.
pub const EXHAUSTION_RTOL: f64 = 1e-12;

/// Exact fraction of a ledger's total budget.
pub type Share = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Self(epsilon))
        } else {
            Err(DipsError::InvalidBudget(epsilon))
        }
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PrivacyBudget {
    type Error = DipsError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PrivacyBudget> for f64 {
    fn from(b: PrivacyBudget) -> f64 {
        b.0
    }
}

/// How a charge composes with the other charges on the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", content = "group", rename_all = "snake_case")]
pub enum Composition {
    Sequential,
    Parallel(String),
}

impl Composition {
    pub fn parallel(group: impl Into<String>) -> Self {
        Composition::Parallel(group.into())
    }
}

/// Neighbouring-dataset convention, which fixes the sensitivity of a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborRelation {
    /// Add or remove one record: a count moves by at most 1.
    #[default]
    Removal,
    /// Replace one record: one count goes down and another goes up.
    Replacement,
}

impl NeighborRelation {
    pub fn count_sensitivity(self) -> f64 {
        match self {
            NeighborRelation::Removal => 1.0,
            NeighborRelation::Replacement => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub label: String,
    pub epsilon: f64,
    pub composition: Composition,
    pub share: Option<Share>,
}

#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    total: PrivacyBudget,
    neighbor: NeighborRelation,
    entries: Vec<LedgerEntry>,
    tally: Tally,
}

/// Running aggregates so a charge costs O(log groups) rather than a rescan.
#[derive(Debug, Clone)]
struct Tally {
    seq: NeumaierSum,
    groups: BTreeMap<String, f64>,
    /// `None` once any entry was charged as an absolute epsilon.
    exact: Option<(Share, BTreeMap<String, Share>)>,
}

impl Default for Tally {
    fn default() -> Self {
        Self {
            seq: NeumaierSum::default(),
            groups: BTreeMap::new(),
            exact: Some((Share::from_integer(0), BTreeMap::new())),
        }
    }
}

impl Tally {
    fn effective(&self) -> f64 {
        let mut s = self.seq;
        for v in self.groups.values() {
            s.add(*v);
        }
        s.value()
    }

    fn exact(&self) -> Option<Share> {
        let (seq, groups) = self.exact.as_ref()?;
        Some(groups.values().fold(*seq, |acc, s| acc + *s))
    }

    fn add(&mut self, e: &LedgerEntry) {
        match &e.composition {
            Composition::Sequential => self.seq.add(e.epsilon),
            Composition::Parallel(g) => {
                let slot = self.groups.entry(g.clone()).or_insert(0.0);
                *slot = slot.max(e.epsilon);
            }
        }
        self.exact = match (self.exact.take(), e.share) {
            (Some((mut seq, mut groups)), Some(s)) => {
                match &e.composition {
                    Composition::Sequential => seq += s,
                    Composition::Parallel(g) => {
                        let slot = groups.entry(g.clone()).or_insert(Share::from_integer(0));
                        if s > *slot {
                            *slot = s;
                        }
                    }
                }
                Some((seq, groups))
            }
            _ => None,
        };
    }
}

impl PrivacyLedger {
    pub fn new(total: PrivacyBudget) -> Self {
        Self {
            total,
            neighbor: NeighborRelation::default(),
            entries: Vec::new(),
            tally: Tally::default(),
        }
    }

    pub fn with_neighbor(mut self, neighbor: NeighborRelation) -> Self {
        self.neighbor = neighbor;
        self
    }

    pub fn total(&self) -> PrivacyBudget {
        self.total
    }

    pub fn neighbor(&self) -> NeighborRelation {
        self.neighbor
    }

    pub fn count_sensitivity(&self) -> f64 {
        self.neighbor.count_sensitivity()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Charge an absolute epsilon.
    pub fn charge(
        &mut self,
        label: impl Into<String>,
        eps: f64,
        composition: Composition,
    ) -> Result<()> {
        PrivacyBudget::new(eps)?;
        self.push(LedgerEntry {
            label: label.into(),
            epsilon: eps,
            composition,
            share: None,
        })
    }

    /// Charge an exact fraction of the total budget.
    pub fn charge_share(
        &mut self,
        label: impl Into<String>,
        share: Share,
        composition: Composition,
    ) -> Result<()> {
        if *share.numer() == 0 {
            return Err(DipsError::InvalidBudget(0.0));
        }
        let eps = self.total.epsilon() * ratio_to_f64(share);
        self.push(LedgerEntry {
            label: label.into(),
            epsilon: eps,
            composition,
            share: Some(share),
        })
    }

    fn push(&mut self, entry: LedgerEntry) -> Result<()> {
        let mut next = self.tally.clone();
        next.add(&entry);
        let over = match next.exact() {
            Some(share) => share > Share::from_integer(1),
            None => next.effective() > self.total.epsilon() * (1.0 + EXHAUSTION_RTOL),
        };
        if over {
            return Err(DipsError::BudgetExhausted {
                requested: entry.epsilon,
                would_be: next.effective(),
                total: self.total.epsilon(),
            });
        }
        self.tally = next;
        self.entries.push(entry);
        Ok(())
    }

    /// Sequential entries summed plus, per parallel group, the largest entry.
    pub fn effective_spend(&self) -> f64 {
        self.tally.effective()
    }

    /// Exact spent fraction of the total, available when every entry was
    /// charged as a share.
    pub fn exact_share_spent(&self) -> Option<Share> {
        self.tally.exact()
    }

    pub fn remaining(&self) -> f64 {
        (self.total.epsilon() - self.effective_spend()).max(0.0)
    }

    /// True once the effective spend reaches the total (within tolerance).
    pub fn is_full(&self) -> bool {
        match self.exact_share_spent() {
            Some(s) if !self.entries.is_empty() => s == Share::from_integer(1),
            _ => self.effective_spend() >= self.total.epsilon() * (1.0 - EXHAUSTION_RTOL),
        }
    }

    pub fn audit(&self) -> LedgerAudit {
        LedgerAudit {
            total: self.total.epsilon(),
            entries: self
                .entries
                .iter()
                .map(|e| AuditEntry {
                    label: e.label.clone(),
                    eps: e.epsilon,
                    mode: match e.composition {
                        Composition::Sequential => "sequential".into(),
                        Composition::Parallel(_) => "parallel".into(),
                    },
                    group: match &e.composition {
                        Composition::Sequential => None,
                        Composition::Parallel(g) => Some(g.clone()),
                    },
                })
                .collect(),
            effective_spend: self.effective_spend(),
        }
    }
}

/// JSON audit record of a ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerAudit {
    pub total: f64,
    pub entries: Vec<AuditEntry>,
    pub effective_spend: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub label: String,
    pub eps: f64,
    pub mode: String,
    pub group: Option<String>,
}

/// A ledger that several workers may charge. Each charge is a single
/// check-and-append under the write lock.
#[derive(Debug, Clone)]
pub struct SharedLedger {
    inner: Arc<RwLock<PrivacyLedger>>,
}

impl SharedLedger {
    pub fn new(ledger: PrivacyLedger) -> Self {
        Self {
            inner: Arc::new(RwLock::new(ledger)),
        }
    }

    pub fn charge(
        &self,
        label: impl Into<String>,
        eps: f64,
        composition: Composition,
    ) -> Result<()> {
        self.inner
            .write()
            .expect("ledger lock poisoned")
            .charge(label, eps, composition)
    }

    pub fn charge_share(
        &self,
        label: impl Into<String>,
        share: Share,
        composition: Composition,
    ) -> Result<()> {
        self.inner
            .write()
            .expect("ledger lock poisoned")
            .charge_share(label, share, composition)
    }

    /// Charge only if the ledger still holds exactly `expected_entries`
    /// entries; returns `Ok(false)` when another writer got there first.
    pub fn compare_and_charge(
        &self,
        expected_entries: usize,
        label: impl Into<String>,
        eps: f64,
        composition: Composition,
    ) -> Result<bool> {
        let mut guard = self.inner.write().expect("ledger lock poisoned");
        if guard.entries.len() != expected_entries {
            return Ok(false);
        }
        guard.charge(label, eps, composition)?;
        Ok(true)
    }

    pub fn snapshot(&self) -> PrivacyLedger {
        self.inner.read().expect("ledger lock poisoned").clone()
    }
}

/// Split `eps` proportionally to `weights`. The final share takes the
/// residual so the shares add back to `eps`.
pub fn split_budget(eps: f64, weights: &[f64]) -> Result<Vec<f64>> {
    PrivacyBudget::new(eps)?;
    if weights.is_empty() {
        return Err(DipsError::ParameterDomain(
            "weights must be non-empty".into(),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(DipsError::ParameterDomain(
            "weights must be positive".into(),
        ));
    }
    let mut total = NeumaierSum::default();
    weights.iter().for_each(|w| total.add(*w));
    let total = total.value();

    let mut out = Vec::with_capacity(weights.len());
    let mut used = NeumaierSum::default();
    for w in &weights[..weights.len() - 1] {
        let s = eps * w / total;
        used.add(s);
        out.push(s);
    }
    let last = eps - used.value();
    if !(last > 0.0) {
        return Err(DipsError::ParameterDomain(
            "residual share is not positive".into(),
        ));
    }
    out.push(last);
    Ok(out)
}

/// Exact counterpart of [`split_budget`] for integer weights.
pub fn split_shares(whole: Share, weights: &[u64]) -> Result<Vec<Share>> {
    if weights.is_empty() || weights.contains(&0) {
        return Err(DipsError::ParameterDomain(
            "weights must be non-empty and positive".into(),
        ));
    }
    let total: u64 = weights.iter().sum();
    Ok(weights
        .iter()
        .map(|w| whole * Share::new(*w, total))
        .collect())
}

pub(crate) fn ratio_to_f64(r: Share) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(total: f64) -> PrivacyLedger {
        PrivacyLedger::new(PrivacyBudget::new(total).unwrap())
    }

    #[test]
    fn rejects_non_positive_budget() {
        assert!(PrivacyBudget::new(0.0).is_err());
        assert!(PrivacyBudget::new(-1.0).is_err());
        assert!(PrivacyBudget::new(f64::NAN).is_err());
    }

    #[test]
    fn five_sequential_fifths_fill_the_ledger() {
        let mut l = ledger(1.0);
        for i in 0..5 {
            l.charge(format!("set{i}"), 0.2, Composition::Sequential)
                .unwrap();
        }
        assert!((l.effective_spend() - 1.0).abs() < 1e-12);
        assert!(l.is_full());
    }

    #[test]
    fn parallel_group_counts_max_only() {
        let mut l = ledger(1.0);
        l.charge("a", 0.4, Composition::parallel("g")).unwrap();
        l.charge("b", 0.4, Composition::parallel("g")).unwrap();
        assert!((l.effective_spend() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn overrun_is_rejected_and_not_recorded() {
        let mut l = ledger(1.0);
        l.charge("a", 0.6, Composition::Sequential).unwrap();
        let err = l.charge("b", 0.5, Composition::Sequential).unwrap_err();
        assert!(matches!(err, DipsError::BudgetExhausted { .. }));
        assert_eq!(l.entries().len(), 1);
    }

    #[test]
    fn exact_shares_sum_to_one() {
        let mut l = ledger(std::f64::consts::E.powi(8));
        let per_set = split_shares(Share::from_integer(1), &[1; 5]).unwrap();
        for (j, s) in per_set.iter().enumerate() {
            for (g, part) in split_shares(*s, &[1; 6]).unwrap().into_iter().enumerate() {
                l.charge_share(format!("set{j}/stat{g}"), part, Composition::Sequential)
                    .unwrap();
            }
        }
        assert_eq!(l.exact_share_spent(), Some(Share::from_integer(1)));
        assert!(l.is_full());
        assert!(l
            .charge_share("extra", Share::new(1, 1000), Composition::Sequential)
            .is_err());
    }

    #[test]
    fn split_examples() {
        let s = split_budget(1.0, &[1.0; 5]).unwrap();
        assert!(s.iter().all(|x| (x - 0.2).abs() < 1e-15));
        let s = split_budget(0.2, &[0.5, 0.5]).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-16 && (s[1] - 0.1).abs() < 1e-16);
        assert_eq!(split_budget(0.7, &[1.0]).unwrap(), vec![0.7]);
        assert!(split_budget(1.0, &[]).is_err());
        assert!(split_budget(1.0, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn neighbor_relation_sets_count_sensitivity() {
        let l = ledger(1.0).with_neighbor(NeighborRelation::Replacement);
        assert_eq!(l.count_sensitivity(), 2.0);
        assert_eq!(ledger(1.0).count_sensitivity(), 1.0);
    }

    #[test]
    fn audit_json_shape() {
        let mut l = ledger(1.0);
        l.charge("n1", 0.25, Composition::Sequential).unwrap();
        l.charge("cell0", 0.25, Composition::parallel("cells"))
            .unwrap();
        let v = serde_json::to_value(l.audit()).unwrap();
        assert_eq!(v["total"], 1.0);
        assert_eq!(v["effective_spend"], 0.5);
        assert_eq!(v["entries"][1]["mode"], "parallel");
        assert_eq!(v["entries"][1]["group"], "cells");
        assert!(v["entries"][0]["group"].is_null());
    }

    #[test]
    fn shared_ledger_compare_and_charge() {
        let shared = SharedLedger::new(ledger(1.0));
        assert!(shared
            .compare_and_charge(0, "a", 0.5, Composition::Sequential)
            .unwrap());
        assert!(!shared
            .compare_and_charge(0, "b", 0.1, Composition::Sequential)
            .unwrap());
        std::thread::scope(|s| {
            for i in 0..8 {
                let sh = shared.clone();
                s.spawn(move || {
                    let _ = sh.charge(format!("w{i}"), 0.1, Composition::Sequential);
                });
            }
        });
        let snap = shared.snapshot();
        assert_eq!(snap.entries().len(), 6);
        assert!(snap.effective_spend() <= 1.0 + 1e-12);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Seq(f64),
        Par(u8, f64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0.001f64..0.5).prop_map(Op::Seq),
            (0u8..3, 0.001f64..0.5).prop_map(|(g, e)| Op::Par(g, e)),
        ]
    }

    proptest! {
        #[test]
        fn spend_never_exceeds_total_and_matches_brute_force(ops in prop::collection::vec(op(), 0..40)) {
            let mut l = ledger(2.0);
            for o in &ops {
                let _ = match o {
                    Op::Seq(e) => l.charge("s", *e, Composition::Sequential),
                    Op::Par(g, e) => l.charge("p", *e, Composition::parallel(format!("g{g}"))),
                };
                prop_assert!(l.effective_spend() <= 2.0 * (1.0 + EXHAUSTION_RTOL));
            }
            let mut brute = 0.0;
            let mut maxes = [0.0f64; 3];
            for e in l.entries() {
                match &e.composition {
                    Composition::Sequential => brute += e.epsilon,
                    Composition::Parallel(g) => {
                        let i: usize = g[1..].parse().unwrap();
                        maxes[i] = maxes[i].max(e.epsilon);
                    }
                }
            }
            brute += maxes.iter().sum::<f64>();
            prop_assert!((brute - l.effective_spend()).abs() < 1e-12);
        }

        #[test]
        fn split_sums_back(eps in 1e-6f64..1e3, weights in prop::collection::vec(0.01f64..10.0, 1..12)) {
            let s = split_budget(eps, &weights).unwrap();
            prop_assert!(s.iter().all(|x| *x > 0.0));
            let total: f64 = s.iter().sum();
            prop_assert!(((total - eps) / eps).abs() < 1e-12);
        }
    }
}
