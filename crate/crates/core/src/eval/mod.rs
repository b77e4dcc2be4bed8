//! Metrics, zero-shot evaluation, ablation grids and latent export.

pub mod ablation;
pub mod latents;
pub mod metrics;

pub use ablation::{
    default_grid, run_ablation, AblationConfig, AblationData, AblationPlan, AblationRow,
    AblationTable, Aggregate, MeanSd,
};
pub use latents::{export_latents, write_latents, LatentRecord};
pub use metrics::{extract_spans, intent_accuracy, slot_f1, EvalResult, Span, SpanCounts};

use crate::alignment::space::EmbeddingSpace;
use crate::corpus::Corpus;
use crate::error::Result;
use crate::model::checkpoint::TrainedModel;
use crate::training::swap::zero_shot_swap;

/// Swaps `space` under `model` and scores it on `corpus`.
pub fn evaluate(
    model: &TrainedModel,
    space: &EmbeddingSpace,
    corpus: &Corpus,
) -> Result<EvalResult> {
    let out = zero_shot_swap(model, space)?.predict(corpus)?;
    let gold_slots: Vec<Vec<String>> = corpus
        .utterances()
        .iter()
        .map(|u| u.slots().to_vec())
        .collect();
    let gold_intents: Vec<&str> = corpus.utterances().iter().map(|u| u.intent()).collect();
    let spans = slot_f1(&out.slots, &gold_slots)?;
    let acc = intent_accuracy(&out.intents, &gold_intents)?;
    Ok(EvalResult::new(
        acc,
        spans,
        out.oov_tokens,
        out.tokens,
        corpus.len(),
    ))
}
