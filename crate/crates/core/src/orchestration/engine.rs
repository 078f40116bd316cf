use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde_json::json;

use crate::aggregation::{aggregate_bayesian, dawid_skene, majority_belief, AggregationKind, DsInit};
use crate::annotators::human::{batch_records, import_human_batch, BatchItem, BatchStatus, HumanBatch};
use crate::annotators::{
    build_annotator, Annotated, AnnotationContext, AnnotationOutcome, AnnotationRequest, Annotator, Connectors,
    Demonstration, PromptVariantId, TrainingExample,
};
use crate::error::{Error, Result};
use crate::finance::{finance_round, qa_round, Agent, MessageKind};
use crate::model::{AnnotatorKind, ClassIndex, ConfusionMatrix, LabelRecord, PosteriorBelief, RunState, SampleId, Usage};
use crate::money::Money;
use crate::persist::SnapshotStore;
use crate::transport::ChatTransport;

use super::planner::{plan_round_with, Roster};
use super::{check_termination, flag_final_verification, PendingRound, RoundPlan, RoundSummary, TerminationReason, VerificationSize};

/// Demonstrations placed in each prompt.
pub const DEMOS_PER_PROMPT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Completed(RoundSummary),
    AwaitingHuman { batch_id: String },
    Terminated(TerminationReason),
}

/// Demonstrations for a prompt: never golden samples, spread across labels
/// in pool order.
fn prompt_demos(state: &RunState) -> Vec<Demonstration> {
    let usable: Vec<&Demonstration> = state
        .demonstrations
        .iter()
        .filter(|d| d.sample_id.as_ref().is_none_or(|id| state.sample(id).is_none_or(|s| !s.is_golden())))
        .collect();
    let mut by_label: BTreeMap<usize, Vec<&Demonstration>> = BTreeMap::new();
    for d in usable {
        let idx = state.task.class_index(&d.label).unwrap_or(usize::MAX);
        by_label.entry(idx).or_default().push(d);
    }
    let mut out = Vec::new();
    let mut depth = 0;
    while out.len() < DEMOS_PER_PROMPT {
        let mut any = false;
        for list in by_label.values() {
            if let Some(d) = list.get(depth) {
                any = true;
                if out.len() < DEMOS_PER_PROMPT {
                    out.push((*d).clone());
                }
            }
        }
        if !any {
            break;
        }
        depth += 1;
    }
    out
}

/// The annotator-facing request for a set of targets. Only sample views
/// are copied in, so golden labels cannot reach an annotator.
pub fn build_request(state: &RunState, round: u32, targets: &[SampleId], variant: Option<PromptVariantId>) -> AnnotationRequest {
    let mut samples: Vec<_> = targets.iter().filter_map(|id| state.sample(id)).map(|s| s.view()).collect();
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    AnnotationRequest {
        round,
        samples,
        class_names: state.task.class_names.clone(),
        guideline: state.guideline.clone(),
        demonstrations: prompt_demos(state),
        prompt_variant: variant,
        budget_limit: state.remaining_budget(),
    }
}

/// Current aggregated labels of every labeled sample with features.
pub fn training_context(state: &RunState) -> AnnotationContext {
    let labeled: BTreeSet<&SampleId> = state.records.iter().map(|r| &r.sample_id).collect();
    let training = state
        .samples
        .iter()
        .filter(|s| labeled.contains(&s.id))
        .filter_map(|s| {
            Some(TrainingExample {
                sample_id: s.id.clone(),
                text: s.text.clone(),
                features: s.features.clone(),
                label: state.beliefs.get(&s.id)?.aggregated_label,
            })
        })
        .collect();
    AnnotationContext { training }
}

/// Drives one task's rounds. Holds the state, the instantiated roster and
/// an optional snapshot store written after every change.
pub struct Engine {
    state: RunState,
    roster: Roster,
    scheduler: Option<Arc<dyn ChatTransport>>,
    store: Option<SnapshotStore>,
}

impl Engine {
    pub fn new(state: RunState, connectors: &Connectors) -> Result<Self> {
        let mut roster = Roster::new();
        for config in &state.task.annotators {
            roster.insert(config.id.clone(), build_annotator(config, &state, connectors)?);
        }
        let scheduler = match (&state.task.scheduling.llm, &connectors.default_chat) {
            (_, Some(t)) => Some(t.clone()),
            (Some(cfg), None) => scheduler_transport(&cfg.endpoint, &cfg.token_env),
            (None, None) => None,
        };
        Ok(Engine { state, roster, scheduler, store: None })
    }

    /// Uses caller-supplied annotators instead of building them from the roster.
    pub fn with_annotators(state: RunState, annotators: Vec<Box<dyn Annotator>>) -> Self {
        let roster = annotators.into_iter().map(|a| (a.id().clone(), a)).collect();
        Engine { state, roster, scheduler: None, store: None }
    }

    pub fn with_store(mut self, store: SnapshotStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_scheduler(mut self, transport: Arc<dyn ChatTransport>) -> Self {
        self.scheduler = Some(transport);
        self
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn into_state(self) -> RunState {
        self.state
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    fn persist(&self) -> Result<()> {
        if let Some(store) = &self.store {
            store.save(&self.state)?;
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<RoundPlan> {
        plan_round_with(&self.state, &self.state.task.scheduling, &self.roster, self.scheduler.as_deref())
    }

    fn terminate(&mut self, reason: TerminationReason) -> Result<StepOutcome> {
        if self.state.termination.is_none() {
            self.state.termination = Some(reason);
            self.state.messages.post(
                self.state.round,
                Agent::Scheduler,
                MessageKind::System,
                format!("Run finished after round {}: {reason}.", self.state.round),
                json!({"termination": reason}),
            );
            self.persist()?;
        }
        Ok(StepOutcome::Terminated(reason))
    }

    /// Advances by one round, or reports why it cannot.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if let Some(reason) = self.state.termination {
            return Ok(StepOutcome::Terminated(reason));
        }
        if let Some(p) = &self.state.pending {
            let batch_id = p.batch_id.clone();
            return match self.poll_pending()? {
                Some(summary) => Ok(StepOutcome::Completed(summary)),
                None => Ok(StepOutcome::AwaitingHuman { batch_id }),
            };
        }
        if let Some(reason) = check_termination(&self.state) {
            return self.terminate(reason);
        }
        match self.plan() {
            Ok(plan) => self.run_round(plan),
            Err(Error::NoAffordableAnnotator { .. }) => self.terminate(TerminationReason::BudgetExhausted),
            Err(e) => Err(e),
        }
    }

    /// Steps until termination, a human wait, or `max_rounds` completed rounds.
    pub fn run(&mut self, max_rounds: Option<u32>) -> Result<Vec<StepOutcome>> {
        let mut out = Vec::new();
        let mut done = 0;
        while max_rounds.is_none_or(|m| done < m) {
            let o = self.step()?;
            let stop = !matches!(o, StepOutcome::Completed(_));
            out.push(o);
            if stop {
                break;
            }
            done += 1;
        }
        Ok(out)
    }

    /// Executes a plan: dispatch, cost, aggregate, report.
    pub fn run_round(&mut self, plan: RoundPlan) -> Result<StepOutcome> {
        if let Some(reason) = self.state.termination {
            return Err(Error::Terminated(reason.to_string()));
        }
        if let Some(p) = &self.state.pending {
            return Err(Error::AwaitingHuman(p.batch_id.clone()));
        }
        if plan.round != self.state.round + 1 {
            return Err(Error::Internal(format!("plan for round {} but next round is {}", plan.round, self.state.round + 1)));
        }
        for id in &plan.targets {
            if self.state.sample(id).is_none() {
                return Err(Error::UnknownSample(id.clone()));
            }
        }
        let targets: Vec<SampleId> = plan.targets.iter().filter(|id| !self.state.beliefs[*id].converged).cloned().collect();
        if targets.is_empty() {
            self.state.round = plan.round;
            self.persist()?;
            return Ok(StepOutcome::Completed(self.summary(&plan, 0, 0, 0)));
        }
        let annotator = self.roster.get_mut(&plan.annotator_id).ok_or_else(|| Error::UnknownAnnotator(plan.annotator_id.clone()))?;
        let request = build_request(&self.state, plan.round, &targets, plan.prompt_variant);
        let projected = annotator.projected_cost(&request);
        let remaining = self.state.remaining_budget();
        if projected > remaining {
            return Err(Error::BudgetExceeded { requested: projected, remaining });
        }
        let ctx = if annotator.kind() == AnnotatorKind::SlmProxy { training_context(&self.state) } else { AnnotationContext::default() };
        let plan = RoundPlan { targets, ..plan };
        match annotator.annotate(&request, &ctx)? {
            AnnotationOutcome::Done(annotated) => self.commit(plan, annotated),
            AnnotationOutcome::Pending(mut batch) => {
                self.post_plan(&plan);
                if batch.status == BatchStatus::Open {
                    batch.status = BatchStatus::Dispatched;
                }
                let batch_id = batch.batch_id.clone();
                self.state.human_sent.extend(plan.targets.iter().cloned());
                self.state.human_batches.retain(|b| b.batch_id != batch_id);
                self.state.human_batches.push(batch);
                self.state.messages.post(
                    plan.round,
                    Agent::Scheduler,
                    MessageKind::System,
                    format!("Human batch {batch_id} with {} samples is waiting for labels.", plan.targets.len()),
                    json!({"batch_id": batch_id}),
                );
                self.state.pending = Some(PendingRound { plan, batch_id: batch_id.clone() });
                self.persist()?;
                Ok(StepOutcome::AwaitingHuman { batch_id })
            }
        }
    }

    fn post_plan(&mut self, plan: &RoundPlan) {
        let payload = serde_json::to_value(plan).unwrap_or(serde_json::Value::Null);
        self.state.messages.post(plan.round, Agent::Scheduler, MessageKind::ScheduleDecision, plan.rationale.clone(), payload);
    }

    /// Polls an externally dispatched batch and completes the round when
    /// its labels are in. `Ok(None)` while still waiting.
    pub fn poll_pending(&mut self) -> Result<Option<RoundSummary>> {
        let Some(pending) = self.state.pending.clone() else {
            return Ok(None);
        };
        let batch = self
            .state
            .human_batches
            .iter()
            .find(|b| b.batch_id == pending.batch_id)
            .cloned()
            .ok_or_else(|| Error::Internal(format!("pending batch {} missing", pending.batch_id)))?;
        let annotator = self
            .roster
            .get_mut(&pending.plan.annotator_id)
            .ok_or_else(|| Error::UnknownAnnotator(pending.plan.annotator_id.clone()))?;
        let Some(labels) = annotator.poll(&batch, &self.state.task.class_names)? else {
            return Ok(None);
        };
        let mut done = batch;
        done.complete(labels.into_iter().collect())?;
        self.finish_batch(done).map(Some)
    }

    /// Imports a completed batch file: either the pending round's batch or
    /// a verification batch.
    pub fn import_human_batch(&mut self, content: &str) -> Result<StepOutcome> {
        let done = import_human_batch(content, &self.state.human_batches, &self.state.task.class_names)?;
        if done.verification {
            let id = done.batch_id.clone();
            let n = done.labels.len();
            if let Some(b) = self.state.human_batches.iter_mut().find(|b| b.batch_id == id) {
                *b = done;
            }
            self.state.messages.post(
                self.state.round,
                Agent::System,
                MessageKind::System,
                format!("Verification batch {id} returned {n} reviewed labels."),
                json!({"batch_id": id}),
            );
            self.persist()?;
            return Ok(StepOutcome::Terminated(self.state.termination.unwrap_or(TerminationReason::MaxRounds)));
        }
        match &self.state.pending {
            Some(p) if p.batch_id == done.batch_id => {}
            _ => {
                return Err(Error::HumanBatch { batch: done.batch_id, reason: "batch is not awaiting labels".into() });
            }
        }
        self.finish_batch(done).map(StepOutcome::Completed)
    }

    fn finish_batch(&mut self, done: HumanBatch) -> Result<RoundSummary> {
        let pending = self.state.pending.take().expect("checked by callers");
        let pricing = self
            .roster
            .get(&pending.plan.annotator_id)
            .map(|a| a.pricing())
            .ok_or_else(|| Error::UnknownAnnotator(pending.plan.annotator_id.clone()))?;
        let records = batch_records(&done, &pricing)?;
        if let Some(b) = self.state.human_batches.iter_mut().find(|b| b.batch_id == done.batch_id) {
            *b = done;
        }
        let n = records.len() as u64;
        let annotated = Annotated { records, failures: vec![], usage: Some(Usage::Samples(n)), overhead: Money::ZERO, demonstrations: None };
        match self.commit_inner(pending.plan, annotated, false)? {
            StepOutcome::Completed(s) => Ok(s),
            other => Err(Error::Internal(format!("unexpected outcome {other:?}"))),
        }
    }

    fn commit(&mut self, plan: RoundPlan, annotated: Annotated) -> Result<StepOutcome> {
        self.commit_inner(plan, annotated, true)
    }

    fn commit_inner(&mut self, plan: RoundPlan, annotated: Annotated, post_plan: bool) -> Result<StepOutcome> {
        let round = plan.round;
        let classes = self.state.num_classes();
        if post_plan {
            self.post_plan(&plan);
        }
        if plan.kind == AnnotatorKind::Human {
            self.state.human_sent.extend(plan.targets.iter().cloned());
        }

        // keep one in-range record per targeted, unconverged sample
        let target_set: BTreeSet<&SampleId> = plan.targets.iter().collect();
        let mut seen = BTreeSet::new();
        let mut failures = annotated.failures.clone();
        let mut accepted: Vec<LabelRecord> = Vec::new();
        for mut r in annotated.records {
            let ok = target_set.contains(&r.sample_id)
                && !self.state.beliefs[&r.sample_id].converged
                && r.label < classes
                && !r.cost.is_negative()
                && seen.insert(r.sample_id.clone());
            if !ok {
                failures.push((r.sample_id.clone(), "record rejected".into()));
                continue;
            }
            r.round = round;
            r.annotator_id = plan.annotator_id.clone();
            accepted.push(r);
        }

        // charge overhead first, then records in sample order while they fit
        let remaining = self.state.remaining_budget();
        let overhead = if annotated.overhead > remaining {
            log::warn!("{}: overhead {} exceeds remaining budget {remaining}; capped", plan.annotator_id, annotated.overhead);
            remaining
        } else {
            annotated.overhead
        };
        let mut charge = overhead;
        let mut kept = Vec::with_capacity(accepted.len());
        for r in accepted {
            match charge.checked_add(r.cost) {
                Some(next) if next <= remaining => {
                    charge = next;
                    kept.push(r);
                }
                _ => failures.push((r.sample_id.clone(), "budget exhausted before this label could be paid".into())),
            }
        }
        self.state.ledger.record_cost(round, plan.annotator_id.clone(), charge, annotated.usage)?;
        for r in &mut kept {
            r.timestamp = self.state.next_seq;
            self.state.next_seq += 1;
        }
        let labeled = kept.len();
        let touched: BTreeSet<SampleId> = kept.iter().map(|r| r.sample_id.clone()).collect();
        self.state.records.extend(kept);

        if let Some(demos) = annotated.demonstrations {
            let clean: Vec<Demonstration> = demos
                .into_iter()
                .filter(|d| d.sample_id.as_ref().is_none_or(|id| self.state.sample(id).is_some_and(|s| !s.is_golden())))
                .collect();
            if !clean.is_empty() {
                self.state.demonstrations = clean;
            }
        }

        let before: BTreeMap<SampleId, ClassIndex> =
            self.state.beliefs.iter().map(|(k, b)| (k.clone(), b.aggregated_label)).collect();
        self.reaggregate(&touched)?;
        for (id, b) in &self.state.beliefs {
            if b.converged && !self.state.converged_at.contains_key(id) {
                self.state.converged_at.insert(id.clone(), round);
            }
        }

        let qa = qa_round(&self.state, round, &before)?;
        if let Some(m) = qa.matrices {
            self.state.matrices = m;
        }
        let qa_payload = serde_json::to_value(&qa.report)?;
        self.state.messages.post(round, Agent::Qa, MessageKind::QaReport, qa.report.summary.clone(), qa_payload);
        if let Some(g) = qa.guideline {
            if g != self.state.guideline {
                self.state.guideline = g.clone();
                if !g.is_empty() {
                    self.state.messages.post(round, Agent::Qa, MessageKind::Guideline, g, json!({"round": round}));
                }
            }
        }
        let fin = finance_round(&self.state, round);
        let fin_payload = serde_json::to_value(&fin)?;
        self.state.messages.post(round, Agent::Finance, MessageKind::FinanceReport, fin.summary.clone(), fin_payload);
        if !failures.is_empty() {
            self.state.messages.post(
                round,
                Agent::System,
                MessageKind::System,
                format!("{} of {} samples were not labeled by {}.", failures.len(), plan.targets.len(), plan.annotator_id),
                json!({"failures": failures.iter().map(|(id, why)| json!({"sample_id": id, "reason": why})).collect::<Vec<_>>()}),
            );
        }

        self.state.round = round;
        let mut summary = self.summary(&plan, plan.targets.len(), labeled, failures.len());
        summary.golden_accuracy = qa.report.golden_accuracy;
        summary.evaluation_accuracy = qa.report.evaluation_accuracy;
        self.state.history.push(summary.clone());
        if let Some(reason) = check_termination(&self.state) {
            self.state.termination = Some(reason);
            self.state.messages.post(
                round,
                Agent::Scheduler,
                MessageKind::System,
                format!("Run finished after round {round}: {reason}."),
                json!({"termination": reason}),
            );
        }
        self.persist()?;
        Ok(StepOutcome::Completed(summary))
    }

    fn summary(&self, plan: &RoundPlan, targets: usize, labeled: usize, failures: usize) -> RoundSummary {
        let converged = self.state.converged_count();
        RoundSummary {
            round: plan.round,
            annotator_id: Some(plan.annotator_id.clone()),
            kind: Some(plan.kind),
            targets,
            labeled,
            failures,
            round_cost: self.state.ledger.spent_in_round(plan.round),
            cumulative_cost: self.state.ledger.spent,
            remaining: self.state.remaining_budget(),
            converged,
            unconverged: self.state.samples.len() - converged,
            golden_accuracy: None,
            evaluation_accuracy: None,
        }
    }

    /// Recomputes beliefs of touched samples (all labeled samples for
    /// Dawid-Skene). Converged beliefs stay latched.
    fn reaggregate(&mut self, touched: &BTreeSet<SampleId>) -> Result<()> {
        let st = &mut self.state;
        let threshold = st.task.confidence_threshold;
        let classes = st.num_classes();
        match st.task.aggregation.kind {
            AggregationKind::Bayesian => {
                let mut ids: BTreeSet<_> = st.task.annotators.iter().map(|a| a.id.clone()).collect();
                ids.extend(st.records.iter().map(|r| r.annotator_id.clone()));
                let matrices: BTreeMap<_, ConfusionMatrix> = ids.into_iter().map(|id| (id.clone(), st.matrix_for(&id))).collect();
                let mut by_sample: BTreeMap<&SampleId, Vec<&LabelRecord>> = BTreeMap::new();
                for r in st.records.iter().filter(|r| touched.contains(&r.sample_id)) {
                    by_sample.entry(&r.sample_id).or_default().push(r);
                }
                let mut updates = Vec::new();
                for (id, recs) in by_sample {
                    if st.beliefs[id].converged {
                        continue;
                    }
                    updates.push(aggregate_bayesian(id, recs, &matrices, &st.class_prior, threshold)?);
                }
                for b in updates {
                    st.beliefs.insert(b.sample_id.clone(), b);
                }
            }
            AggregationKind::Majority => {
                let mut by_sample: BTreeMap<&SampleId, Vec<ClassIndex>> = BTreeMap::new();
                for r in st.records.iter().filter(|r| touched.contains(&r.sample_id)) {
                    by_sample.entry(&r.sample_id).or_default().push(r.label);
                }
                let mut updates = Vec::new();
                for (id, labels) in by_sample {
                    if !st.beliefs[id].converged {
                        updates.push(majority_belief(id.clone(), &labels, classes, &st.class_prior, threshold)?);
                    }
                }
                for b in updates {
                    st.beliefs.insert(b.sample_id.clone(), b);
                }
            }
            AggregationKind::DawidSkene => {
                if st.records.is_empty() {
                    return Ok(());
                }
                let init = DsInit { matrices: st.matrices.clone(), prior: Some(st.class_prior.clone()) };
                let out = dawid_skene(&st.records, classes, Some(&init), &st.task.aggregation)?;
                for (id, probs) in out.beliefs {
                    if !st.beliefs[&id].converged {
                        st.beliefs.insert(id.clone(), PosteriorBelief::from_probs(id, probs, threshold));
                    }
                }
            }
        }
        Ok(())
    }

    /// Flags the lowest-confidence samples for review and opens a
    /// verification batch for them. Only after the run has terminated.
    pub fn flag_final_verification(&mut self, size: VerificationSize) -> Result<HumanBatch> {
        if self.state.termination.is_none() {
            return Err(Error::InvalidTask("final verification needs a terminated run".into()));
        }
        let ids = flag_final_verification(&self.state, size);
        let annotator = self
            .state
            .task
            .annotators
            .iter()
            .find(|a| a.kind() == AnnotatorKind::Human)
            .map(|a| a.id.clone())
            .unwrap_or_else(|| "verification".into());
        let n = self.state.human_batches.iter().filter(|b| b.verification).count();
        let items = ids
            .iter()
            .map(|id| BatchItem { sample_id: id.clone(), text: self.state.sample(id).and_then(|s| s.text.clone()).unwrap_or_default() })
            .collect();
        let mut batch = HumanBatch::new(format!("verification-{}", n + 1), self.state.round, annotator, items);
        batch.verification = true;
        self.state.verification_flags.extend(ids.iter().cloned());
        self.state.human_batches.push(batch.clone());
        self.state.messages.post(
            self.state.round,
            Agent::Scheduler,
            MessageKind::System,
            format!("Flagged {} lowest-confidence samples for final human verification.", ids.len()),
            json!({"batch_id": batch.batch_id, "samples": ids}),
        );
        self.persist()?;
        Ok(batch)
    }

    pub fn export_human_batch(&self, batch_id: &str) -> Result<String> {
        let batch = self
            .state
            .human_batches
            .iter()
            .find(|b| b.batch_id == batch_id)
            .ok_or_else(|| Error::HumanBatch { batch: batch_id.into(), reason: "unknown batch id".into() })?;
        crate::annotators::export_human_batch(batch, &self.state.task.class_names)
    }
}

#[cfg(feature = "http")]
fn scheduler_transport(endpoint: &str, token_env: &str) -> Option<Arc<dyn ChatTransport>> {
    crate::transport::HttpChatTransport::new(endpoint, token_env).ok().map(|t| Arc::new(t) as Arc<dyn ChatTransport>)
}

#[cfg(not(feature = "http"))]
fn scheduler_transport(_endpoint: &str, _token_env: &str) -> Option<Arc<dyn ChatTransport>> {
    None
}
