use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{AnnotatorId, AnnotatorKind, ClassIndex, CostModel, SampleId, Usage};
use crate::money::Money;

use super::{budget_precheck, estimate_tokens, priced_record, Annotated, AnnotationContext, AnnotationOutcome, AnnotationRequest, Annotator};

/// 64-bit FNV-1a, used to derive stable per-sample seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Draws labels from a planted confusion matrix given each sample's true
/// class. The draw for (sample, round) depends only on the seed, so batch
/// composition never changes a label.
pub struct SimulatedAnnotator {
    id: AnnotatorId,
    pricing: CostModel,
    matrix: Vec<Vec<f64>>,
    seed: u64,
    truth: BTreeMap<SampleId, ClassIndex>,
}

impl SimulatedAnnotator {
    pub fn new(
        id: AnnotatorId,
        pricing: CostModel,
        matrix: Vec<Vec<f64>>,
        seed: u64,
        truth: BTreeMap<SampleId, ClassIndex>,
    ) -> Self {
        SimulatedAnnotator { id, pricing, matrix, seed, truth }
    }

    pub fn draw(&self, sample: &SampleId, round: u32, true_class: ClassIndex) -> ClassIndex {
        let key = fnv1a(sample.as_str().as_bytes()) ^ fnv1a(self.id.as_str().as_bytes()).rotate_left(17);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let u: f64 = rng.random();
        let row = &self.matrix[true_class];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // rounding left u above the cumulative sum: last class with mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(true_class)
    }

    fn usage_for(&self, text: Option<&str>) -> Usage {
        match self.pricing {
            CostModel::PerSample { .. } => Usage::Samples(1),
            CostModel::PerToken { .. } => Usage::Tokens { input: estimate_tokens(text.unwrap_or("")), output: 1 },
            CostModel::PerTime { .. } => Usage::Seconds(0.0),
        }
    }
}

impl Annotator for SimulatedAnnotator {
    fn id(&self) -> &AnnotatorId {
        &self.id
    }

    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Simulated
    }

    fn pricing(&self) -> CostModel {
        self.pricing
    }

    fn projected_cost(&self, request: &AnnotationRequest) -> Money {
        request
            .samples
            .iter()
            .map(|s| self.pricing.cost(&self.usage_for(s.text.as_deref())).unwrap_or(Money::ZERO))
            .sum()
    }

    fn annotate(&mut self, request: &AnnotationRequest, _ctx: &AnnotationContext) -> Result<AnnotationOutcome> {
        budget_precheck(self, request)?;
        let mut samples: Vec<_> = request.samples.iter().collect();
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut records = Vec::new();
        let mut failures = Vec::new();
        let mut usage: Option<Usage> = None;
        for s in samples {
            let Some(&truth) = self.truth.get(&s.sample_id) else {
                failures.push((s.sample_id.clone(), "no reference label to simulate from".to_string()));
                continue;
            };
            let label = self.draw(&s.sample_id, request.round, truth);
            let u = self.usage_for(s.text.as_deref());
            usage = Some(usage.map_or(u, |acc| acc.combine(u)));
            records.push(priced_record(&self.pricing, &self.id, request.round, s.sample_id.clone(), label, &u)?);
        }
        Ok(AnnotationOutcome::Done(Annotated { records, failures, usage, overhead: Money::ZERO, demonstrations: None }))
    }
}
