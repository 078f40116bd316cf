//! Prompt-variant templates for LLM annotators.
//!
//! Templates use the placeholders `{GUIDELINE}`, `{DEMOS}`, `{CLASSES}`,
//! `{QUERY}` and, for yes/no questions, `{CANDIDATE}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SampleView;

use super::AnnotationRequest;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariantId {
    #[default]
    Direct,
    SequenceSwap,
    ConfirmationBias,
    TrueFalse,
    MultipleChoice,
}

impl PromptVariantId {
    pub const ALL: [PromptVariantId; 5] = [
        PromptVariantId::Direct,
        PromptVariantId::SequenceSwap,
        PromptVariantId::ConfirmationBias,
        PromptVariantId::TrueFalse,
        PromptVariantId::MultipleChoice,
    ];
}

impl fmt::Display for PromptVariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariantId::Direct => "direct",
            PromptVariantId::SequenceSwap => "sequence_swap",
            PromptVariantId::ConfirmationBias => "confirmation_bias",
            PromptVariantId::TrueFalse => "true_false",
            PromptVariantId::MultipleChoice => "multiple_choice",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptVariant {
    pub id: PromptVariantId,
    pub template: &'static str,
}

const CALL: &str = "Call the ClassificationTask function with your answer.";

pub const REGISTRY: [PromptVariant; 5] = [
    PromptVariant {
        id: PromptVariantId::Direct,
        template: "{GUIDELINE}{DEMOS}Assign exactly one label to the item below.\nLabels: {CLASSES}\n\nItem: {QUERY}\n\n",
    },
    PromptVariant {
        id: PromptVariantId::SequenceSwap,
        template: "{GUIDELINE}{DEMOS}Item: {QUERY}\n\nAssign exactly one label to the item above.\nLabels: {CLASSES}\n\n",
    },
    PromptVariant {
        id: PromptVariantId::ConfirmationBias,
        template: "{GUIDELINE}{DEMOS}Item: {QUERY}\n\nA colleague already labeled this item and is confident the answer is obvious. \
Verify it yourself and report the label you believe is correct.\nLabels: {CLASSES}\n\n",
    },
    PromptVariant {
        id: PromptVariantId::TrueFalse,
        template: "{GUIDELINE}{DEMOS}Item: {QUERY}\n\nQuestion: does this item belong to the label \"{CANDIDATE}\"? \
Answer yes or no, with a confidence between 0 and 1.\n\n",
    },
    PromptVariant {
        id: PromptVariantId::MultipleChoice,
        template: "{GUIDELINE}{DEMOS}Item: {QUERY}\n\nWhich option describes the item?\n{CLASSES}\nAnswer with the option letter.\n\n",
    },
];

pub fn variant(id: PromptVariantId) -> &'static PromptVariant {
    REGISTRY.iter().find(|v| v.id == id).expect("every variant is registered")
}

pub fn option_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

fn render_demos(request: &AnnotationRequest) -> String {
    if request.demonstrations.is_empty() {
        return String::new();
    }
    let mut out = String::from("Examples:\n");
    for d in &request.demonstrations {
        out.push_str(&format!("- {} => {}\n", d.text, d.label));
    }
    out.push('\n');
    out
}

fn render_guideline(request: &AnnotationRequest) -> String {
    if request.guideline.trim().is_empty() {
        String::new()
    } else {
        format!("Guidelines:\n{}\n\n", request.guideline.trim_end())
    }
}

/// The query text shown to the model.
pub fn query_text(sample: &SampleView) -> Result<String> {
    match (&sample.text, &sample.features) {
        (Some(t), _) => Ok(t.clone()),
        (None, _) => Err(Error::InvalidTask(format!("missing QUERY: sample {} has no text", sample.sample_id))),
    }
}

/// Renders the prompt(s) for one sample. Every variant yields one prompt
/// except `true_false`, which yields one yes/no question per class.
pub fn render_prompt(id: PromptVariantId, request: &AnnotationRequest, sample: &SampleView) -> Result<Vec<String>> {
    if request.class_names.is_empty() {
        return Err(Error::InvalidTask("missing CLASSES".into()));
    }
    let template = variant(id).template;
    let query = query_text(sample)?;
    let base = template
        .replace("{GUIDELINE}", &render_guideline(request))
        .replace("{DEMOS}", &render_demos(request))
        .replace("{QUERY}", &query);
    let quoted = |names: &mut dyn Iterator<Item = &String>| names.map(|c| format!("\"{c}\"")).collect::<Vec<_>>().join(", ");
    let prompts = match id {
        PromptVariantId::Direct | PromptVariantId::ConfirmationBias => {
            vec![base.replace("{CLASSES}", &quoted(&mut request.class_names.iter()))]
        }
        PromptVariantId::SequenceSwap => vec![base.replace("{CLASSES}", &quoted(&mut request.class_names.iter().rev()))],
        PromptVariantId::MultipleChoice => {
            let options = request
                .class_names
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{}) {c}", option_letter(i)))
                .collect::<Vec<_>>()
                .join("\n");
            vec![base.replace("{CLASSES}", &options)]
        }
        PromptVariantId::TrueFalse => request.class_names.iter().map(|c| base.replace("{CANDIDATE}", c)).collect(),
    };
    Ok(prompts.into_iter().map(|p| format!("{p}{CALL}")).collect())
}
