use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatorId, Usage};
use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u32,
    pub annotator_id: AnnotatorId,
    pub amount: Money,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Append-only record of spending against a fixed budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub budget: Money,
    pub spent: Money,
    pub entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn new(budget: Money) -> Self {
        CostLedger { budget, spent: Money::ZERO, entries: Vec::new() }
    }

    pub fn remaining(&self) -> Money {
        self.budget - self.spent
    }

    /// Appends a charge. Refuses negative amounts and anything that would
    /// take spending past the budget; the ledger is untouched on error.
    pub fn record_cost(&mut self, round: u32, annotator_id: AnnotatorId, amount: Money, usage: Option<Usage>) -> Result<()> {
        if amount.is_negative() {
            return Err(Error::Internal(format!("negative charge {amount}")));
        }
        let total = self
            .spent
            .checked_add(amount)
            .ok_or_else(|| Error::Internal("ledger overflow".into()))?;
        if total > self.budget {
            return Err(Error::BudgetExceeded { requested: amount, remaining: self.remaining() });
        }
        self.spent = total;
        self.entries.push(LedgerEntry { round, annotator_id, amount, usage });
        Ok(())
    }

    pub fn spent_in_round(&self, round: u32) -> Money {
        self.entries.iter().filter(|e| e.round == round).map(|e| e.amount).sum()
    }

    pub fn spent_by(&self, annotator_id: &AnnotatorId) -> Money {
        self.entries.iter().filter(|e| &e.annotator_id == annotator_id).map(|e| e.amount).sum()
    }

    /// Spending up to and including `round`.
    pub fn cumulative_through(&self, round: u32) -> Money {
        self.entries.iter().filter(|e| e.round <= round).map(|e| e.amount).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remaining_after_charge() {
        let mut l = CostLedger::new(Money::from_cents(1000));
        l.record_cost(4, "human".into(), "2.69".parse().unwrap(), None).unwrap();
        assert_eq!(l.remaining().to_string(), "7.31");
    }

    #[test]
    fn zero_charge_is_recorded() {
        let mut l = CostLedger::new(Money::from_cents(1000));
        l.record_cost(1, "a".into(), Money::ZERO, None).unwrap();
        assert_eq!(l.entries.len(), 1);
        assert_eq!(l.spent, Money::ZERO);
    }

    #[test]
    fn overspend_is_rejected() {
        let mut l = CostLedger::new(Money::from_cents(100));
        let err = l.record_cost(1, "a".into(), "1.42".parse().unwrap(), None).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        assert!(l.entries.is_empty());
        assert!(l.record_cost(1, "a".into(), Money::from_micros(-1), None).is_err());
    }
}
