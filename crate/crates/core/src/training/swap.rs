//! Running a trained model on text from another embedding space.

use crate::alignment::space::EmbeddingSpace;
use crate::corpus::{encode, Corpus, Utterance};
use crate::error::{Error, Result};
use crate::model::checkpoint::TrainedModel;
use crate::model::network::{infer_traces, predict, ForwardTrace};
use crate::tensor::matrix::Matrix;

/// A trained model paired with the space its inputs are looked up in.
/// Parameters are never touched; only the lookup table changes.
#[derive(Clone, Copy, Debug)]
pub struct Inference<'a> {
    model: &'a TrainedModel,
    space: &'a EmbeddingSpace,
}

/// Label strings predicted for a corpus, with lookup statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Labelled {
    pub slots: Vec<Vec<String>>,
    pub intents: Vec<String>,
    pub oov_tokens: usize,
    pub tokens: usize,
}

/// Pairs `model` with `space`, which must have the training dimension.
pub fn zero_shot_swap<'a>(
    model: &'a TrainedModel,
    space: &'a EmbeddingSpace,
) -> Result<Inference<'a>> {
    if space.dim() != model.config.embedding_dim {
        return Err(Error::Data(format!(
            "model expects {}-dimensional embeddings, the {} space has {}",
            model.config.embedding_dim,
            space.language(),
            space.dim()
        )));
    }
    Ok(Inference { model, space })
}

impl<'a> Inference<'a> {
    pub fn model(&self) -> &'a TrainedModel {
        self.model
    }

    pub fn space(&self) -> &'a EmbeddingSpace {
        self.space
    }

    /// Delexicalizes (if the model was trained that way) and looks up
    /// every utterance. Also returns the OOV token count.
    pub fn encode(&self, corpus: &Corpus) -> Result<(Vec<Utterance>, Vec<Matrix>, usize)> {
        if corpus.language() != self.space.language() {
            return Err(Error::Data(format!(
                "corpus is `{}` but the embedding space is `{}`",
                corpus.language(),
                self.space.language()
            )));
        }
        let utts: Vec<Utterance> = match &self.model.delex {
            Some(rules) => corpus.delexicalized(rules).utterances().to_vec(),
            None => corpus.utterances().to_vec(),
        };
        let mut oov = 0;
        let inputs = utts
            .iter()
            .map(|u| {
                let (m, o) = encode(u, self.space);
                oov += o;
                m
            })
            .collect();
        Ok((utts, inputs, oov))
    }

    pub fn predict(&self, corpus: &Corpus) -> Result<Labelled> {
        let (utts, inputs, oov_tokens) = self.encode(corpus)?;
        let refs: Vec<&Matrix> = inputs.iter().collect();
        let preds = predict(&self.model.params, &self.model.config, &refs)?;
        let cat = &self.model.catalog;
        Ok(Labelled {
            slots: preds
                .iter()
                .map(|p| {
                    p.slots
                        .iter()
                        .map(|&s| cat.slot_label(s).to_string())
                        .collect()
                })
                .collect(),
            intents: preds
                .iter()
                .map(|p| cat.intent_label(p.intent).to_string())
                .collect(),
            oov_tokens,
            tokens: utts.iter().map(Utterance::len).sum(),
        })
    }

    /// Inference traces with the (possibly delexicalized) utterances.
    pub fn traces(&self, corpus: &Corpus) -> Result<Vec<(Utterance, ForwardTrace)>> {
        let (utts, inputs, _) = self.encode(corpus)?;
        let refs: Vec<&Matrix> = inputs.iter().collect();
        let traces = infer_traces(&self.model.params, &self.model.config, &refs)?;
        Ok(utts.into_iter().zip(traces).collect())
    }
}
