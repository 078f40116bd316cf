//! Cost ledger, message pool, quality and finance reports, annotator profiles.

pub mod ledger;
pub mod messages;
pub mod profile;
pub mod qa;
pub mod report;

pub use ledger::{CostLedger, LedgerEntry};
pub use messages::{Agent, Message, MessageKind, MessagePool};
pub use profile::{build_profile, AnnotatorProfile};
pub use qa::{qa_round, QaOutcome, QaReport};
pub use report::{finance_round, CostPerCorrect, FinanceReport};
