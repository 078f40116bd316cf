//! Chat-completion annotator. Each sample is rendered with the configured
//! prompt variant, answered through a function-call field, and parsed back
//! into a class index.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{AnnotatorId, AnnotatorKind, ClassIndex, CostModel, LlmSettings, SampleId, SampleView, Usage};
use crate::money::Money;
use crate::transport::{ChatRequest, ChatResponse, ChatTransport, ToolSpec};

use super::prompt::{option_letter, render_prompt, PromptVariantId};
use super::{
    budget_precheck, estimate_tokens, priced_record, Annotated, AnnotationContext, AnnotationOutcome, AnnotationRequest,
    Annotator, Demonstration,
};

pub const TOOL_NAME: &str = "ClassificationTask";
const SYSTEM: &str = "You label data for a classification project. Follow the guidelines, pick from the allowed labels only, and answer through the provided function.";
/// Output tokens assumed per call when projecting cost.
const PROJECTED_OUTPUT_TOKENS: u64 = 16;
/// Size of the example pool requested before the first round.
pub const DEMO_POOL_SIZE: usize = 100;

pub struct LlmAnnotator {
    id: AnnotatorId,
    pricing: CostModel,
    settings: LlmSettings,
    transport: Arc<dyn ChatTransport>,
}

/// Function schema the model must answer through.
pub fn tool_spec(variant: PromptVariantId, class_names: &[String]) -> ToolSpec {
    let parameters = match variant {
        PromptVariantId::TrueFalse => json!({
            "type": "object",
            "properties": {
                "answer": {"type": "string", "enum": ["yes", "no"]},
                "confidence": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "required": ["answer", "confidence"],
        }),
        PromptVariantId::MultipleChoice => {
            let letters: Vec<String> = (0..class_names.len()).map(|i| option_letter(i).to_string()).collect();
            json!({
                "type": "object",
                "properties": {"label": {"type": "string", "enum": letters}},
                "required": ["label"],
            })
        }
        _ => json!({
            "type": "object",
            "properties": {"label": {"type": "string", "enum": class_names}},
            "required": ["label"],
        }),
    };
    ToolSpec { name: TOOL_NAME.into(), description: "Report the label for the item.".into(), parameters }
}

fn class_regex(class_names: &[String]) -> Regex {
    let mut names: Vec<(usize, &String)> = class_names.iter().enumerate().collect();
    names.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let alt = names.iter().map(|(_, n)| regex::escape(n)).collect::<Vec<_>>().join("|");
    Regex::new(&format!(r"(?i)(?:^|[^\w])({alt})(?:$|[^\w])")).expect("escaped alternation is valid")
}

fn match_class(text: &str, class_names: &[String]) -> Option<ClassIndex> {
    let t = text.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.');
    if let Some(i) = class_names.iter().position(|c| c.eq_ignore_ascii_case(t)) {
        return Some(i);
    }
    let m = class_regex(class_names).captures(text)?.get(1)?.as_str().to_lowercase();
    class_names.iter().position(|c| c.to_lowercase() == m)
}

fn match_letter(text: &str, classes: usize) -> Option<ClassIndex> {
    let re = Regex::new(r"(?:^|[^\w])([A-Za-z])(?:\)|\.|:|$|\s)").expect("static regex");
    let t = text.trim();
    let letter = if t.len() == 1 { t.chars().next() } else { re.captures(t).and_then(|c| c[1].chars().next()) }?;
    let idx = (letter.to_ascii_uppercase() as u8).checked_sub(b'A')? as usize;
    (idx < classes).then_some(idx)
}

fn arguments(response: &ChatResponse) -> Option<Value> {
    serde_json::from_str(response.tool_arguments.as_deref()?).ok()
}

/// Extracts a class from a single-answer response: the function-call field
/// first, then a scan of the free text.
pub fn parse_label(response: &ChatResponse, variant: PromptVariantId, class_names: &[String]) -> Option<ClassIndex> {
    let from_field = arguments(response).and_then(|v| v.get("label").and_then(Value::as_str).map(str::to_string));
    let candidates = from_field.iter().chain(response.content.iter());
    for text in candidates {
        let hit = if variant == PromptVariantId::MultipleChoice {
            match_letter(text, class_names.len()).or_else(|| match_class(text, class_names))
        } else {
            match_class(text, class_names)
        };
        if hit.is_some() {
            return hit;
        }
    }
    None
}

/// Confidence that the answer to a yes/no question is "yes".
pub fn parse_yes_confidence(response: &ChatResponse) -> Option<f64> {
    let yes_conf = |answer: &str, conf: Option<f64>| -> Option<f64> {
        let conf = conf.unwrap_or(1.0).clamp(0.0, 1.0);
        match answer.trim().to_lowercase().as_str() {
            "yes" | "true" => Some(conf),
            "no" | "false" => Some(1.0 - conf),
            _ => None,
        }
    };
    if let Some(v) = arguments(response) {
        if let Some(a) = v.get("answer").and_then(Value::as_str) {
            if let Some(c) = yes_conf(a, v.get("confidence").and_then(Value::as_f64)) {
                return Some(c);
            }
        }
    }
    let text = response.content.as_deref()?;
    let ans = Regex::new(r"(?i)\b(yes|no|true|false)\b").expect("static regex").captures(text)?;
    let conf = Regex::new(r"\b(0(?:\.\d+)?|1(?:\.0+)?)\b")
        .expect("static regex")
        .captures(text)
        .and_then(|c| c[1].parse::<f64>().ok());
    yes_conf(&ans[1], conf)
}

/// Highest yes-confidence wins; ties go to the lowest class index.
pub fn pick_true_false(yes: &[f64]) -> ClassIndex {
    crate::model::argmax(yes)
}

enum SampleResult {
    Labeled(ClassIndex, Usage),
    Failed(String, Usage),
}

impl LlmAnnotator {
    pub fn new(id: AnnotatorId, pricing: CostModel, settings: LlmSettings, transport: Arc<dyn ChatTransport>) -> Self {
        LlmAnnotator { id, pricing, settings, transport }
    }

    fn variant(&self, request: &AnnotationRequest) -> PromptVariantId {
        request.prompt_variant.unwrap_or(self.settings.prompt_variant)
    }

    fn usage_of(request: &ChatRequest, response: Option<&ChatResponse>) -> Usage {
        if let Some(u) = response.and_then(|r| r.usage) {
            return Usage::Tokens { input: u.prompt_tokens, output: u.completion_tokens };
        }
        let input = estimate_tokens(&request.system) + estimate_tokens(&request.user);
        let output = response
            .map(|r| estimate_tokens(r.tool_arguments.as_deref().unwrap_or("")) + estimate_tokens(r.content.as_deref().unwrap_or("")))
            .unwrap_or(0);
        Usage::Tokens { input, output }
    }

    /// Sends one prompt, retrying on transport errors and on answers the
    /// parser rejects. Returns the parsed value and the usage of every attempt.
    fn ask<T>(&self, prompt: String, tool: &ToolSpec, parse: impl Fn(&ChatResponse) -> Option<T>) -> (Result<T>, Usage) {
        let req = ChatRequest { model: self.settings.model.clone(), system: SYSTEM.into(), user: prompt, tool: Some(tool.clone()) };
        let mut usage = Usage::Tokens { input: 0, output: 0 };
        let mut last = Error::Parse("no attempt made".into());
        for _ in 0..=self.settings.max_retries {
            match self.transport.complete(&req) {
                Ok(resp) => {
                    usage = usage.combine(Self::usage_of(&req, Some(&resp)));
                    if let Some(v) = parse(&resp) {
                        return (Ok(v), usage);
                    }
                    last = Error::Parse(format!(
                        "could not read a label from {:?}",
                        resp.tool_arguments.as_deref().or(resp.content.as_deref()).unwrap_or("")
                    ));
                }
                Err(e) if e.is_retryable() => last = e,
                Err(e) => return (Err(e), usage),
            }
        }
        (Err(last), usage)
    }

    fn label_one(&self, request: &AnnotationRequest, sample: &SampleView) -> (Result<ClassIndex>, Usage) {
        let variant = self.variant(request);
        let prompts = match render_prompt(variant, request, sample) {
            Ok(p) => p,
            Err(e) => return (Err(e), Usage::Tokens { input: 0, output: 0 }),
        };
        let tool = tool_spec(variant, &request.class_names);
        if variant == PromptVariantId::TrueFalse {
            let mut usage = Usage::Tokens { input: 0, output: 0 };
            let mut yes = Vec::with_capacity(prompts.len());
            for p in prompts {
                let (res, u) = self.ask(p, &tool, parse_yes_confidence);
                usage = usage.combine(u);
                match res {
                    Ok(c) => yes.push(c),
                    Err(e) => return (Err(e), usage),
                }
            }
            return (Ok(pick_true_false(&yes)), usage);
        }
        let prompt = prompts.into_iter().next().expect("one prompt per single-answer variant");
        self.ask(prompt, &tool, |r| parse_label(r, variant, &request.class_names))
    }

    /// Asks the model for an initial pool of labeled examples.
    pub fn generate_demonstrations(&self, request: &AnnotationRequest, count: usize) -> (Result<Vec<Demonstration>>, Usage) {
        let classes = request.class_names.iter().map(|c| format!("\"{c}\"")).collect::<Vec<_>>().join(", ");
        let mut prompt = String::new();
        if !request.guideline.trim().is_empty() {
            prompt.push_str(&format!("Guidelines:\n{}\n\n", request.guideline.trim_end()));
        }
        prompt.push_str(&format!(
            "Write {count} short, realistic example items for this labeling project, spread evenly over the labels {classes}. \
Return them through the GenerateExamples function."
        ));
        let tool = ToolSpec {
            name: "GenerateExamples".into(),
            description: "Return labeled example items.".into(),
            parameters: json!({
                "type": "object",
                "properties": {"examples": {"type": "array", "items": {
                    "type": "object",
                    "properties": {"text": {"type": "string"}, "label": {"type": "string", "enum": request.class_names}},
                    "required": ["text", "label"],
                }}},
                "required": ["examples"],
            }),
        };
        let names = request.class_names.clone();
        self.ask(prompt, &tool, move |r| {
            let v = arguments(r)?;
            let demos: Vec<Demonstration> = v
                .get("examples")?
                .as_array()?
                .iter()
                .filter_map(|e| {
                    let text = e.get("text")?.as_str()?.trim().to_string();
                    let label = e.get("label")?.as_str()?;
                    let idx = names.iter().position(|c| c == label)?;
                    (!text.is_empty()).then(|| Demonstration { sample_id: None, text, label: names[idx].clone() })
                })
                .take(count)
                .collect();
            (!demos.is_empty()).then_some(demos)
        })
    }
}

impl Annotator for LlmAnnotator {
    fn id(&self) -> &AnnotatorId {
        &self.id
    }

    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Llm
    }

    fn pricing(&self) -> CostModel {
        self.pricing
    }

    fn projected_cost(&self, request: &AnnotationRequest) -> Money {
        let variant = self.variant(request);
        request
            .samples
            .iter()
            .filter_map(|s| render_prompt(variant, request, s).ok())
            .flatten()
            .map(|p| {
                let usage = Usage::Tokens {
                    input: estimate_tokens(SYSTEM) + estimate_tokens(&p),
                    output: PROJECTED_OUTPUT_TOKENS,
                };
                self.pricing.cost(&usage).unwrap_or(Money::ZERO)
            })
            .sum()
    }

    fn annotate(&mut self, request: &AnnotationRequest, _ctx: &AnnotationContext) -> Result<AnnotationOutcome> {
        budget_precheck(self, request)?;
        let mut samples: Vec<&SampleView> = request.samples.iter().collect();
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

        let mut overhead = Money::ZERO;
        let mut usage_total = Usage::Tokens { input: 0, output: 0 };
        let mut demonstrations = None;
        if request.demonstrations.is_empty() && !samples.is_empty() {
            let (res, u) = self.generate_demonstrations(request, DEMO_POOL_SIZE);
            overhead += self.pricing.cost(&u)?;
            usage_total = usage_total.combine(u);
            match res {
                Ok(d) => demonstrations = Some(d),
                Err(e) => log::warn!("{}: example generation failed: {e}", self.id),
            }
        }

        // Fan out over samples with a bounded number of worker threads;
        // results land in slots indexed by sorted position.
        let slots: Vec<Mutex<Option<SampleResult>>> = samples.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.settings.parallelism.max(1).min(samples.len().max(1));
        let this = &*self;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= samples.len() {
                        break;
                    }
                    let (res, usage) = this.label_one(request, samples[i]);
                    let out = match res {
                        Ok(label) => SampleResult::Labeled(label, usage),
                        Err(e) => SampleResult::Failed(e.to_string(), usage),
                    };
                    *slots[i].lock().expect("slot lock") = Some(out);
                });
            }
        });

        let mut records = Vec::new();
        let mut failures: Vec<(SampleId, String)> = Vec::new();
        let mut transport_failures = 0;
        for (sample, slot) in samples.iter().zip(slots) {
            match slot.into_inner().expect("slot lock").expect("every slot filled") {
                SampleResult::Labeled(label, usage) => {
                    usage_total = usage_total.combine(usage);
                    records.push(priced_record(&self.pricing, &self.id, request.round, sample.sample_id.clone(), label, &usage)?);
                }
                SampleResult::Failed(reason, usage) => {
                    usage_total = usage_total.combine(usage);
                    overhead += self.pricing.cost(&usage)?;
                    if reason.starts_with("transport failure") {
                        transport_failures += 1;
                    }
                    failures.push((sample.sample_id.clone(), reason));
                }
            }
        }
        if !samples.is_empty() && transport_failures == samples.len() {
            return Err(Error::Transport(format!("{}: every request failed: {}", self.id, failures[0].1)));
        }
        Ok(AnnotationOutcome::Done(Annotated { records, failures, usage: Some(usage_total), overhead, demonstrations }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::TokenUsage;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn content(s: &str) -> ChatResponse {
        ChatResponse { content: Some(s.into()), tool_arguments: None, usage: None }
    }

    fn args(s: &str) -> ChatResponse {
        ChatResponse { content: None, tool_arguments: Some(s.into()), usage: None }
    }

    #[test]
    fn tool_field_wins() {
        let c = names(&["informative", "not informative"]);
        assert_eq!(parse_label(&args(r#"{"label":"not informative"}"#), PromptVariantId::Direct, &c), Some(1));
    }

    #[test]
    fn fallback_prefers_longest_name() {
        let c = names(&["informative", "not informative"]);
        assert_eq!(parse_label(&content("The label is: not informative."), PromptVariantId::Direct, &c), Some(1));
        assert_eq!(parse_label(&content("Informative"), PromptVariantId::Direct, &c), Some(0));
        assert_eq!(parse_label(&content("no idea"), PromptVariantId::Direct, &c), None);
    }

    #[test]
    fn letters_for_multiple_choice() {
        let c = names(&["x", "y", "z"]);
        assert_eq!(parse_label(&args(r#"{"label":"C"}"#), PromptVariantId::MultipleChoice, &c), Some(2));
        assert_eq!(parse_label(&content("Answer: B)"), PromptVariantId::MultipleChoice, &c), Some(1));
        assert_eq!(parse_label(&args(r#"{"label":"Q"}"#), PromptVariantId::MultipleChoice, &c), None);
    }

    #[test]
    fn yes_no_confidence() {
        assert_eq!(parse_yes_confidence(&args(r#"{"answer":"yes","confidence":0.8}"#)), Some(0.8));
        assert!((parse_yes_confidence(&args(r#"{"answer":"no","confidence":0.8}"#)).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(parse_yes_confidence(&content("Yes, confidence 0.7")), Some(0.7));
        assert_eq!(pick_true_false(&[0.4, 0.9, 0.9]), 1);
    }

    #[test]
    fn provider_usage_is_preferred() {
        let req = ChatRequest { model: String::new(), system: "abcd".into(), user: "abcdefgh".into(), tool: None };
        let resp = ChatResponse { content: None, tool_arguments: None, usage: Some(TokenUsage { prompt_tokens: 7, completion_tokens: 2 }) };
        assert_eq!(LlmAnnotator::usage_of(&req, Some(&resp)), Usage::Tokens { input: 7, output: 2 });
        assert_eq!(LlmAnnotator::usage_of(&req, Some(&content("abcde"))), Usage::Tokens { input: 3, output: 2 });
    }
}
