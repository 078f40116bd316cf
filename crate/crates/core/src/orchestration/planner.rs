//! Round planning: who annotates next and which samples they receive.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::annotators::{Annotator, PromptVariantId};
use crate::error::{Error, Result};
use crate::finance::{build_profile, CostPerCorrect};
use crate::model::{AnnotatorId, AnnotatorKind, RunState, SampleId};
use crate::money::Money;
use crate::selection::{coreset_select, uncertainty_pool_excluding, Candidate};
use crate::slm::select::ceil_fraction;
use crate::transport::{ChatRequest, ChatTransport, ToolSpec};

use super::engine::build_request;

/// Added to cost-per-correct so free annotators get a finite score.
pub const SCORE_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    RuleBased,
    LlmBacked,
}

/// Chat endpoint consulted by the LLM-backed policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerLlm {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

fn default_token_env() -> String {
    "CROWDLABEL_LLM_TOKEN".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulingPolicy {
    pub kind: PolicyKind,
    /// Humans are scheduled on every round divisible by this.
    pub human_period: u32,
    pub stagnation_window: u32,
    /// Stagnation: converged-count gain over the window below this share of N.
    pub stagnation_epsilon: f64,
    /// Cycle LLM annotators through the prompt variants round by round.
    pub rotate_prompt_variants: bool,
    pub llm: Option<SchedulerLlm>,
}

impl Default for SchedulingPolicy {
    fn default() -> Self {
        SchedulingPolicy {
            kind: PolicyKind::RuleBased,
            human_period: 5,
            stagnation_window: 2,
            stagnation_epsilon: 0.01,
            rotate_prompt_variants: true,
            llm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: u32,
    pub annotator_id: AnnotatorId,
    pub kind: AnnotatorKind,
    pub targets: Vec<SampleId>,
    pub rationale: String,
    pub projected_cost: Money,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_variant: Option<PromptVariantId>,
}

pub type Roster = BTreeMap<AnnotatorId, Box<dyn Annotator>>;

/// Converged counts after rounds 0..=last, with 0 for round 0.
fn converged_series(state: &RunState) -> Vec<usize> {
    std::iter::once(0).chain(state.history.iter().map(|h| h.converged)).collect()
}

pub fn is_stagnating(state: &RunState, policy: &SchedulingPolicy) -> bool {
    let series = converged_series(state);
    let window = policy.stagnation_window as usize;
    if window == 0 || series.len() <= window {
        return false;
    }
    let last = series.len() - 1;
    let gain = series[last].saturating_sub(series[last - window]);
    (gain as f64) < policy.stagnation_epsilon * state.samples.len() as f64
}

pub fn previous_annotator(state: &RunState) -> Option<&AnnotatorId> {
    state.history.iter().rev().find_map(|h| h.annotator_id.as_ref())
}

/// Prompt variant for an LLM annotator: rotates with each use when enabled.
pub fn prompt_variant_for(state: &RunState, policy: &SchedulingPolicy, id: &AnnotatorId, kind: AnnotatorKind) -> Option<PromptVariantId> {
    if kind != AnnotatorKind::Llm || !policy.rotate_prompt_variants {
        return None;
    }
    let uses = state.history.iter().filter(|h| h.annotator_id.as_ref() == Some(id)).count();
    Some(PromptVariantId::ALL[uses % PromptVariantId::ALL.len()])
}

/// Whether an SLM proxy has anything to learn from yet.
fn slm_ready(state: &RunState) -> bool {
    let labeled: BTreeSet<&SampleId> = state.records.iter().map(|r| &r.sample_id).collect();
    state.samples.iter().any(|s| s.features.is_some() && labeled.contains(&s.id))
}

/// Human targets: lowest-confidence pool (skipping samples humans already
/// saw), narrowed by Core-Set over features when every candidate has them.
pub fn human_targets(state: &RunState) -> Result<Vec<SampleId>> {
    let pool = uncertainty_pool_excluding(state.beliefs.values(), state.task.candidate_pool_fraction, &state.human_sent)?;
    let count = ceil_fraction(state.task.human_batch_fraction, state.samples.len()).min(pool.len());
    if count == 0 {
        return Ok(Vec::new());
    }
    let candidates: Option<Vec<Candidate>> = pool
        .iter()
        .map(|id| {
            let s = state.sample(id)?;
            Some(Candidate { sample_id: id.clone(), embedding: s.features.clone()?, confidence: state.beliefs[id].confidence })
        })
        .collect();
    let mut picked = match candidates {
        Some(c) => {
            let labeled: Vec<Vec<f64>> =
                state.human_sent.iter().filter_map(|id| state.sample(id)?.features.clone()).collect();
            coreset_select(&c, &labeled, count)?
        }
        None => pool.into_iter().take(count).collect(),
    };
    picked.sort();
    Ok(picked)
}

/// Cost-effectiveness score: golden accuracy over (cost per correct + δ).
/// Annotators without golden history use their matrix diagonal and the
/// projected per-sample cost.
pub fn annotator_score(state: &RunState, annotator: &dyn Annotator, projected_per_sample: f64) -> f64 {
    let profile = build_profile(annotator.id(), state);
    let diag = profile.matrix.diagonal();
    let prior_acc = diag.iter().sum::<f64>() / diag.len() as f64;
    let accuracy = profile.golden_accuracy.unwrap_or(prior_acc);
    let cpc = if profile.golden_labeled > 0 && profile.historical_cost > Money::ZERO {
        profile.cost_per_correct.as_f64()
    } else if profile.golden_labeled > 0 && profile.cost_per_correct == CostPerCorrect::Infinite {
        f64::INFINITY
    } else {
        projected_per_sample / accuracy.max(1e-9)
    };
    accuracy / (cpc + SCORE_DELTA)
}

fn make_plan(
    state: &RunState,
    policy: &SchedulingPolicy,
    annotator: &dyn Annotator,
    targets: Vec<SampleId>,
    shrink_to_fit: bool,
) -> Option<RoundPlan> {
    let round = state.round + 1;
    let id = annotator.id().clone();
    let kind = annotator.kind();
    let variant = prompt_variant_for(state, policy, &id, kind);
    let remaining = state.remaining_budget();
    let mut targets = targets;
    loop {
        if targets.is_empty() {
            return None;
        }
        let projected = annotator.projected_cost(&build_request(state, round, &targets, variant));
        if projected <= remaining {
            return Some(RoundPlan {
                round,
                annotator_id: id,
                kind,
                targets,
                rationale: String::new(),
                projected_cost: projected,
                prompt_variant: variant,
            });
        }
        if !shrink_to_fit {
            return None;
        }
        targets.pop();
    }
}

/// Rule-based planning. See [`SchedulingPolicy`] for the knobs.
pub fn plan_round(state: &RunState, policy: &SchedulingPolicy, roster: &Roster) -> Result<RoundPlan> {
    plan_round_with(state, policy, roster, None)
}

/// Plans the next round; with an LLM-backed policy and a transport the
/// model proposes the annotator and any invalid answer falls back to the
/// rule-based choice.
pub fn plan_round_with(
    state: &RunState,
    policy: &SchedulingPolicy,
    roster: &Roster,
    scheduler: Option<&dyn ChatTransport>,
) -> Result<RoundPlan> {
    let rule = rule_based(state, policy, roster)?;
    if policy.kind != PolicyKind::LlmBacked {
        return Ok(rule);
    }
    let Some(transport) = scheduler else {
        let mut p = rule;
        p.rationale.push_str(" (no scheduler endpoint; rule-based fallback)");
        return Ok(p);
    };
    match llm_choice(state, policy, roster, transport) {
        Ok(Some(plan)) => Ok(plan),
        Ok(None) => {
            let mut p = rule;
            p.rationale.push_str(" (model choice rejected; rule-based fallback)");
            Ok(p)
        }
        Err(e) => {
            log::warn!("scheduler model failed: {e}");
            let mut p = rule;
            p.rationale.push_str(" (scheduler unavailable; rule-based fallback)");
            Ok(p)
        }
    }
}

fn rule_based(state: &RunState, policy: &SchedulingPolicy, roster: &Roster) -> Result<RoundPlan> {
    let round = state.round + 1;
    let unconverged = state.unconverged();
    if unconverged.is_empty() {
        return Err(Error::Empty("unconverged samples"));
    }
    let remaining = state.remaining_budget();
    if remaining <= Money::ZERO {
        return Err(Error::NoAffordableAnnotator { remaining });
    }
    let previous = previous_annotator(state).cloned();
    let periodic = policy.human_period > 0 && round.is_multiple_of(policy.human_period);
    let stagnating = is_stagnating(state, policy);
    let humans: Vec<&dyn Annotator> =
        roster.values().filter(|a| a.kind() == AnnotatorKind::Human).map(|a| a.as_ref()).collect();

    let try_humans = |why: &str| -> Result<Option<RoundPlan>> {
        let targets = human_targets(state)?;
        for h in humans.iter().filter(|h| Some(h.id()) != previous.as_ref()) {
            if let Some(mut p) = make_plan(state, policy, *h, targets.clone(), true) {
                p.rationale = format!(
                    "Round {round}: {why}; sending {} low-confidence, diverse samples to human annotator {}.",
                    p.targets.len(),
                    h.id()
                );
                return Ok(Some(p));
            }
        }
        Ok(None)
    };

    if periodic || stagnating {
        let why = if periodic { format!("human round (every {} rounds)", policy.human_period) } else { "progress has stalled".to_string() };
        if let Some(p) = try_humans(&why)? {
            return Ok(p);
        }
    }

    let ready = slm_ready(state);
    let n = unconverged.len().max(1) as f64;
    let mut machines: Vec<(f64, usize, &dyn Annotator)> = roster
        .values()
        .enumerate()
        .filter(|(_, a)| a.kind().is_machine())
        .filter(|(_, a)| a.kind() != AnnotatorKind::SlmProxy || ready)
        .map(|(i, a)| {
            let variant = prompt_variant_for(state, policy, a.id(), a.kind());
            let per_sample = a.projected_cost(&build_request(state, round, &unconverged, variant)).as_dollars_f64() / n;
            (annotator_score(state, a.as_ref(), per_sample), i, a.as_ref())
        })
        .collect();
    // best score first; the previous annotator only as a last resort
    machines.sort_by(|a, b| {
        let pa = Some(a.2.id()) == previous.as_ref();
        let pb = Some(b.2.id()) == previous.as_ref();
        pa.cmp(&pb).then(b.0.total_cmp(&a.0)).then(a.1.cmp(&b.1))
    });
    for (score, _, a) in &machines {
        if let Some(mut p) = make_plan(state, policy, *a, unconverged.clone(), false) {
            let repeat = Some(a.id()) == previous.as_ref();
            p.rationale = format!(
                "Round {round}: {} has the best accuracy-per-cost score ({score:.3}){}; assigning all {} unconverged samples.",
                a.id(),
                if repeat { " and is the only affordable machine annotator" } else { "" },
                p.targets.len()
            );
            return Ok(p);
        }
    }
    if !(periodic || stagnating) {
        if let Some(p) = try_humans("no machine annotator is affordable")? {
            return Ok(p);
        }
    }
    Err(Error::NoAffordableAnnotator { remaining })
}

const SCHEDULER_SYSTEM: &str = "You coordinate a team of data annotators. Pick the annotator for the next round.";

fn llm_choice(
    state: &RunState,
    policy: &SchedulingPolicy,
    roster: &Roster,
    transport: &dyn ChatTransport,
) -> Result<Option<RoundPlan>> {
    let round = state.round + 1;
    let previous = previous_annotator(state).cloned();
    let mut lines = Vec::new();
    for a in roster.values() {
        let p = build_profile(a.id(), state);
        lines.push(format!(
            "- {} ({}): golden accuracy {}, cost per correct label ${}, spent ${}",
            a.id(),
            a.kind(),
            p.golden_accuracy.map_or("unknown".to_string(), |x| format!("{:.3}", x)),
            p.cost_per_correct,
            p.historical_cost
        ));
    }
    let last_qa = state
        .messages
        .of_kind(crate::finance::MessageKind::QaReport)
        .last()
        .map(|m| m.body.clone())
        .unwrap_or_default();
    let prompt = format!(
        "Round {round} of at most {}. Unconverged samples: {} of {}. Remaining budget: ${}.\n\
Previous annotator: {}. It must not be chosen again this round.\n\
Humans are expensive: use them about once every {} rounds or when progress stalls.\n\
Latest quality report: {last_qa}\n\nAnnotators:\n{}\n\nReply through the ScheduleDecision function.",
        state.task.max_rounds,
        state.unconverged().len(),
        state.samples.len(),
        state.remaining_budget(),
        previous.as_ref().map_or("none".to_string(), |p| p.to_string()),
        policy.human_period,
        lines.join("\n")
    );
    let ids: Vec<String> = roster.keys().map(|k| k.0.clone()).collect();
    let tool = ToolSpec {
        name: "ScheduleDecision".into(),
        description: "Choose the annotator for the next round.".into(),
        parameters: json!({
            "type": "object",
            "properties": {"annotator_id": {"type": "string", "enum": ids}, "rationale": {"type": "string"}},
            "required": ["annotator_id"],
        }),
    };
    let resp = transport.complete(&ChatRequest {
        model: policy.llm.as_ref().map(|l| l.model.clone()).unwrap_or_default(),
        system: SCHEDULER_SYSTEM.into(),
        user: prompt,
        tool: Some(tool),
    })?;
    let Some(args) = resp.tool_arguments.as_deref().and_then(|a| serde_json::from_str::<serde_json::Value>(a).ok()) else {
        return Ok(None);
    };
    let Some(choice) = args.get("annotator_id").and_then(|v| v.as_str()).map(AnnotatorId::new) else {
        return Ok(None);
    };
    if Some(&choice) == previous.as_ref() {
        return Ok(None);
    }
    let Some(annotator) = roster.get(&choice) else {
        return Ok(None);
    };
    if annotator.kind() == AnnotatorKind::SlmProxy && !slm_ready(state) {
        return Ok(None);
    }
    let targets = if annotator.kind() == AnnotatorKind::Human { human_targets(state)? } else { state.unconverged() };
    let shrink = annotator.kind() == AnnotatorKind::Human;
    Ok(make_plan(state, policy, annotator.as_ref(), targets, shrink).map(|mut p| {
        let why = args.get("rationale").and_then(|v| v.as_str()).unwrap_or("no reason given");
        p.rationale = format!("Round {round}: scheduler model chose {choice}: {why}");
        p
    }))
}
