//! SLM-proxy annotator: trains the linear model on the current aggregated
//! labels, labels the requested samples and proposes a demonstration pool.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AnnotatorId, AnnotatorKind, CostModel, SampleId, Usage};
use crate::money::Money;
use crate::slm::{curate_demonstrations, embed, train, TrainingConfig};

use super::{budget_precheck, Annotated, AnnotationContext, AnnotationOutcome, AnnotationRequest, Annotator, Demonstration};

/// How compute time is metered for billing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimeMetering {
    /// Measured wall-clock time of training plus inference.
    #[default]
    WallClock,
    /// Fixed seconds per training sample per epoch; reproducible.
    Nominal { seconds_per_sample_epoch: f64 },
}

pub struct SlmAnnotator {
    id: AnnotatorId,
    pricing: CostModel,
    config: TrainingConfig,
    metering: TimeMetering,
    classes: usize,
}

impl SlmAnnotator {
    pub fn new(id: AnnotatorId, pricing: CostModel, config: TrainingConfig, metering: TimeMetering, classes: usize) -> Self {
        SlmAnnotator { id, pricing, config, metering, classes }
    }
}

impl Annotator for SlmAnnotator {
    fn id(&self) -> &AnnotatorId {
        &self.id
    }

    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::SlmProxy
    }

    fn pricing(&self) -> CostModel {
        self.pricing
    }

    /// Time-billed work has no reliable projection; a nominal meter gives an
    /// upper bound, wall-clock metering projects zero.
    fn projected_cost(&self, request: &AnnotationRequest) -> Money {
        match self.metering {
            TimeMetering::WallClock => Money::ZERO,
            TimeMetering::Nominal { seconds_per_sample_epoch } => {
                let secs = seconds_per_sample_epoch * (request.samples.len() * self.config.epochs.clamp(1, 50)) as f64;
                self.pricing.cost(&Usage::Seconds(secs)).unwrap_or(Money::ZERO)
            }
        }
    }

    fn annotate(&mut self, request: &AnnotationRequest, ctx: &AnnotationContext) -> Result<AnnotationOutcome> {
        budget_precheck(self, request)?;
        let started = Instant::now();
        let training: Vec<_> = ctx.training.iter().filter(|t| t.features.is_some()).collect();
        let mut samples: Vec<_> = request.samples.iter().collect();
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        if training.is_empty() {
            let failures = samples.iter().map(|s| (s.sample_id.clone(), "no labeled training data".to_string())).collect();
            return Ok(AnnotationOutcome::Done(Annotated {
                records: vec![],
                failures,
                usage: Some(Usage::Seconds(0.0)),
                overhead: Money::ZERO,
                demonstrations: None,
            }));
        }
        let features: Vec<&[f64]> = training.iter().map(|t| t.features.as_deref().expect("filtered")).collect();
        let labels: Vec<usize> = training.iter().map(|t| t.label).collect();
        let outcome = train(&features, &labels, self.classes, &self.config)?;

        let mut labeled = Vec::new();
        let mut failures = Vec::new();
        for s in &samples {
            match &s.features {
                Some(f) => labeled.push((s.sample_id.clone(), outcome.model.predict(&embed(f)))),
                None => failures.push((s.sample_id.clone(), format!("{}", crate::error::Error::MissingFeatures(s.sample_id.clone())))),
            }
        }

        let ids: Vec<SampleId> = training.iter().map(|t| t.sample_id.clone()).collect();
        let texts: BTreeMap<&SampleId, &str> =
            training.iter().filter_map(|t| t.text.as_deref().map(|x| (&t.sample_id, x))).collect();
        let demos: Vec<Demonstration> = curate_demonstrations(&ids, &features, &outcome, &self.config)?
            .into_iter()
            .filter_map(|id| {
                let text = texts.get(&id)?.to_string();
                let i = ids.iter().position(|x| *x == id)?;
                let label = request.class_names.get(outcome.model.predict(features[i]))?.clone();
                Some(Demonstration { sample_id: Some(id), text, label })
            })
            .collect();

        let seconds = match self.metering {
            TimeMetering::WallClock => started.elapsed().as_secs_f64(),
            TimeMetering::Nominal { seconds_per_sample_epoch } => {
                seconds_per_sample_epoch * (training.len() * outcome.epochs_run + labeled.len()) as f64
            }
        };
        let usage = Usage::Seconds(seconds);
        let total = self.pricing.cost(&usage)?;
        let (records, overhead) = if labeled.is_empty() {
            (vec![], total)
        } else {
            let shares = total.split(labeled.len());
            let recs = labeled
                .into_iter()
                .zip(shares)
                .map(|((sample_id, label), cost)| crate::model::LabelRecord {
                    sample_id,
                    annotator_id: self.id.clone(),
                    round: request.round,
                    label,
                    cost,
                    timestamp: 0,
                })
                .collect();
            (recs, Money::ZERO)
        };
        Ok(AnnotationOutcome::Done(Annotated {
            records,
            failures,
            usage: Some(usage),
            overhead,
            demonstrations: (!demos.is_empty()).then_some(demos),
        }))
    }
}
