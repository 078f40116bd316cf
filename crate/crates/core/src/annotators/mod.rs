//! The annotator abstraction and its connectors: remote LLM, SLM proxy,
//! simulated oracle and human (oracle, offline batch file, external platform).

pub mod human;
pub mod llm;
pub mod prompt;
pub mod simulated;
pub mod slm;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatorConfig, AnnotatorId, AnnotatorKind, AnnotatorSettings, ClassIndex, CostModel, HumanDispatch, LabelRecord, RunState, SampleId, SampleView, Usage};
use crate::money::Money;
use crate::transport::{ChatTransport, DispatchClient};

pub use human::{export_human_batch, import_human_batch, BatchStatus, HumanBatch};
pub use prompt::{render_prompt, PromptVariantId};

/// An in-context example shown to LLM annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<SampleId>,
    pub text: String,
    /// Class name.
    pub label: String,
}

/// Everything an annotator receives for one round. Built only from
/// [`SampleView`]s, so golden labels cannot leak through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub round: u32,
    pub samples: Vec<SampleView>,
    pub class_names: Vec<String>,
    pub guideline: String,
    pub demonstrations: Vec<Demonstration>,
    pub prompt_variant: Option<PromptVariantId>,
    /// Spending cap for this dispatch.
    pub budget_limit: Money,
}

/// A sample with its current aggregated label, for annotators that learn
/// from the pool (the SLM proxy).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub sample_id: SampleId,
    pub text: Option<String>,
    pub features: Option<Vec<f64>>,
    pub label: ClassIndex,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationContext {
    pub training: Vec<TrainingExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotated {
    /// One record per labeled sample in sample-id order; `timestamp` is
    /// assigned when the engine commits them.
    pub records: Vec<LabelRecord>,
    /// Samples that could not be labeled, with the reason.
    pub failures: Vec<(SampleId, String)>,
    pub usage: Option<Usage>,
    /// Cost not attributable to a single record (e.g. generating examples).
    pub overhead: Money,
    /// Replacement demonstration pool proposed by this annotator.
    pub demonstrations: Option<Vec<Demonstration>>,
}

impl Annotated {
    pub fn total_cost(&self) -> Money {
        self.records.iter().map(|r| r.cost).sum::<Money>() + self.overhead
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnnotationOutcome {
    Done(Annotated),
    /// Labels arrive later: via an imported batch file or polling.
    Pending(HumanBatch),
}

pub trait Annotator: Send {
    fn id(&self) -> &AnnotatorId;
    fn kind(&self) -> AnnotatorKind;
    fn pricing(&self) -> CostModel;
    fn projected_cost(&self, request: &AnnotationRequest) -> Money;
    fn annotate(&mut self, request: &AnnotationRequest, ctx: &AnnotationContext) -> Result<AnnotationOutcome>;

    /// External-dispatch annotators poll here; others have nothing pending.
    fn poll(&mut self, batch: &HumanBatch, class_names: &[String]) -> Result<Option<Vec<(SampleId, ClassIndex)>>> {
        let _ = (batch, class_names);
        Ok(None)
    }
}

/// Refuses a dispatch whose projected cost exceeds the request's cap.
pub fn budget_precheck(annotator: &dyn Annotator, request: &AnnotationRequest) -> Result<()> {
    let projected = annotator.projected_cost(request);
    if projected > request.budget_limit {
        return Err(Error::BudgetExceeded { requested: projected, remaining: request.budget_limit });
    }
    Ok(())
}

/// Approximate token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Prices per-record usage and builds the record.
pub(crate) fn priced_record(
    pricing: &CostModel,
    annotator_id: &AnnotatorId,
    round: u32,
    sample_id: SampleId,
    label: ClassIndex,
    usage: &Usage,
) -> Result<LabelRecord> {
    Ok(LabelRecord {
        sample_id,
        annotator_id: annotator_id.clone(),
        round,
        label,
        cost: pricing.cost(usage)?,
        timestamp: 0,
    })
}

/// External connections an annotator roster may need.
#[derive(Clone, Default)]
pub struct Connectors {
    /// Chat transport per annotator id; falls back to `default_chat`.
    pub chat: BTreeMap<AnnotatorId, Arc<dyn ChatTransport>>,
    pub default_chat: Option<Arc<dyn ChatTransport>>,
    pub dispatch: BTreeMap<AnnotatorId, Arc<dyn DispatchClient>>,
    pub default_dispatch: Option<Arc<dyn DispatchClient>>,
}

impl Connectors {
    fn chat_for(&self, config: &AnnotatorConfig, endpoint: &str, token_env: &str) -> Result<Arc<dyn ChatTransport>> {
        if let Some(t) = self.chat.get(&config.id).or(self.default_chat.as_ref()) {
            return Ok(t.clone());
        }
        http_chat(endpoint, token_env)
    }

    fn dispatch_for(&self, config: &AnnotatorConfig, endpoint: &str) -> Result<Arc<dyn DispatchClient>> {
        if let Some(t) = self.dispatch.get(&config.id).or(self.default_dispatch.as_ref()) {
            return Ok(t.clone());
        }
        http_dispatch(endpoint)
    }
}

#[cfg(feature = "http")]
fn http_chat(endpoint: &str, token_env: &str) -> Result<Arc<dyn ChatTransport>> {
    Ok(Arc::new(crate::transport::HttpChatTransport::new(endpoint, token_env)?))
}

#[cfg(not(feature = "http"))]
fn http_chat(endpoint: &str, _token_env: &str) -> Result<Arc<dyn ChatTransport>> {
    Err(Error::Config(format!("no chat transport for {endpoint}: built without the http feature")))
}

#[cfg(feature = "http")]
fn http_dispatch(endpoint: &str) -> Result<Arc<dyn DispatchClient>> {
    Ok(Arc::new(crate::transport::HttpDispatchClient::new(endpoint)?))
}

#[cfg(not(feature = "http"))]
fn http_dispatch(endpoint: &str) -> Result<Arc<dyn DispatchClient>> {
    Err(Error::Config(format!("no dispatch client for {endpoint}: built without the http feature")))
}

/// Instantiates the connector for one roster entry. Simulated and oracle
/// annotators receive the dataset's reference labels here, never through
/// requests.
pub fn build_annotator(config: &AnnotatorConfig, state: &RunState, connectors: &Connectors) -> Result<Box<dyn Annotator>> {
    let classes = state.num_classes();
    let truth = || -> BTreeMap<SampleId, ClassIndex> {
        state.samples.iter().filter_map(|s| s.reference_label().map(|l| (s.id.clone(), l))).collect()
    };
    Ok(match &config.settings {
        AnnotatorSettings::Simulated(sim) => Box::new(simulated::SimulatedAnnotator::new(
            config.id.clone(),
            config.pricing,
            sim.planted_matrix(classes)?,
            sim.seed ^ state.task.seed,
            truth(),
        )),
        AnnotatorSettings::SlmProxy(slm) => {
            Box::new(slm::SlmAnnotator::new(config.id.clone(), config.pricing, slm.training.clone(), slm.metering, classes))
        }
        AnnotatorSettings::Llm(llm) => {
            let transport = connectors.chat_for(config, &llm.endpoint, &llm.token_env)?;
            Box::new(llm::LlmAnnotator::new(config.id.clone(), config.pricing, llm.clone(), transport))
        }
        AnnotatorSettings::Human(h) => match &h.dispatch {
            HumanDispatch::Oracle => Box::new(human::OracleHuman::new(config.id.clone(), config.pricing, truth())),
            HumanDispatch::Offline => Box::new(human::OfflineHuman::new(config.id.clone(), config.pricing)),
            HumanDispatch::External { endpoint } => {
                let client = connectors.dispatch_for(config, endpoint)?;
                Box::new(human::ExternalHuman::new(config.id.clone(), config.pricing, client))
            }
        },
    })
}
