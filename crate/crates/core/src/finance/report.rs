use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{AnnotatorId, RunState};
use crate::money::Money;

/// Spend per correctly labeled golden sample; infinite with no correct labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostPerCorrect {
    Finite(Money),
    Infinite,
}

impl CostPerCorrect {
    pub fn new(spent: Money, correct: u64) -> Self {
        if correct == 0 {
            CostPerCorrect::Infinite
        } else {
            CostPerCorrect::Finite(spent.mul_div(1, correct))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            CostPerCorrect::Finite(m) => m.as_dollars_f64(),
            CostPerCorrect::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for CostPerCorrect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostPerCorrect::Finite(m) => write!(f, "{m}"),
            CostPerCorrect::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for CostPerCorrect {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CostPerCorrect {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "inf" {
            return Ok(CostPerCorrect::Infinite);
        }
        s.parse().map(CostPerCorrect::Finite).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSpend {
    pub spent: Money,
    pub golden_correct: u64,
    pub golden_labeled: u64,
    pub cost_per_correct: CostPerCorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinanceReport {
    pub round: u32,
    pub round_cost: Money,
    pub cumulative_cost: Money,
    pub remaining: Money,
    pub budget: Money,
    pub annotators: BTreeMap<AnnotatorId, AnnotatorSpend>,
    pub summary: String,
}

/// Golden correctness counts per annotator over all records.
pub fn golden_tallies(state: &RunState) -> BTreeMap<AnnotatorId, (u64, u64)> {
    let mut out: BTreeMap<AnnotatorId, (u64, u64)> = BTreeMap::new();
    for r in &state.records {
        if let Some(gold) = state.sample(&r.sample_id).and_then(|s| s.gold) {
            let e = out.entry(r.annotator_id.clone()).or_default();
            e.1 += 1;
            if r.label == gold {
                e.0 += 1;
            }
        }
    }
    out
}

pub fn finance_round(state: &RunState, round: u32) -> FinanceReport {
    let ledger = &state.ledger;
    let tallies = golden_tallies(state);
    let mut ids: Vec<AnnotatorId> = state.task.annotators.iter().map(|a| a.id.clone()).collect();
    ids.extend(ledger.entries.iter().map(|e| e.annotator_id.clone()));
    ids.sort();
    ids.dedup();
    let annotators: BTreeMap<AnnotatorId, AnnotatorSpend> = ids
        .into_iter()
        .map(|id| {
            let spent = ledger.spent_by(&id);
            let (correct, labeled) = tallies.get(&id).copied().unwrap_or((0, 0));
            let spend = AnnotatorSpend {
                spent,
                golden_correct: correct,
                golden_labeled: labeled,
                cost_per_correct: CostPerCorrect::new(spent, correct),
            };
            (id, spend)
        })
        .collect();
    let round_cost = ledger.spent_in_round(round);
    let cumulative = ledger.cumulative_through(round);
    let remaining = ledger.remaining();
    let summary = format!(
        "Round {round}: spent ${round_cost} this round, ${cumulative} in total; ${remaining} of ${} left.",
        ledger.budget
    );
    FinanceReport { round, round_cost, cumulative_cost: cumulative, remaining, budget: ledger.budget, annotators, summary }
}
