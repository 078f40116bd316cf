use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Qa,
    Finance,
    Scheduler,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    QaReport,
    FinanceReport,
    ScheduleDecision,
    Guideline,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: u32,
    pub seq: u64,
    pub author: Agent,
    pub kind: MessageKind,
    pub body: String,
    pub payload: serde_json::Value,
}

/// Append-only log shared by the agents, ordered by `(round, seq)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessagePool {
    messages: Vec<Message>,
}

impl MessagePool {
    pub fn post(&mut self, round: u32, author: Agent, kind: MessageKind, body: impl Into<String>, payload: serde_json::Value) -> u64 {
        let seq = self.messages.len() as u64;
        // rounds never go backwards in the log
        let round = round.max(self.messages.last().map_or(0, |m| m.round));
        self.messages.push(Message { round, seq, author, kind, body: body.into(), payload });
        seq
    }

    pub fn all(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Messages with `seq >= from`, for polling clients.
    pub fn since(&self, from: u64) -> &[Message] {
        let start = (from as usize).min(self.messages.len());
        &self.messages[start..]
    }

    pub fn for_round(&self, round: u32) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.round == round)
    }

    pub fn of_kind(&self, kind: MessageKind) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.kind == kind)
    }
}
