//! Line-delimited JSON dump of inference-mode latent means and log-variances.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::alignment::space::EmbeddingSpace;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::checkpoint::TrainedModel;
use crate::model::config::HeadKind;
use crate::training::swap::zero_shot_swap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentRecord {
    /// Slot latent of one token.
    Token {
        utterance: usize,
        position: usize,
        word: String,
        mu: Vec<f64>,
        logvar: Vec<f64>,
    },
    /// Intent latent of one utterance.
    Sentence {
        utterance: usize,
        intent: String,
        mu: Vec<f64>,
        logvar: Vec<f64>,
    },
}

/// Per utterance: one token record per token, then one sentence record.
/// Only the latent-variable head has latents to export.
pub fn export_latents(
    model: &TrainedModel,
    corpus: &Corpus,
    space: &EmbeddingSpace,
) -> Result<Vec<LatentRecord>> {
    if model.config.head != HeadKind::Lvm {
        return Err(Error::Data(format!(
            "latent export needs an lvm model, this one has a {} head",
            model.config.head
        )));
    }
    let traces = zero_shot_swap(model, space)?.traces(corpus)?;
    let mut out = Vec::new();
    for (i, ((_, tr), u)) in traces.into_iter().zip(corpus.utterances()).enumerate() {
        let (Some((mu, lv, _)), Some((imu, ilv, _))) = (tr.slot_latent, tr.intent_latent) else {
            return Err(Error::Data(format!("utterance {i}: no latent in trace")));
        };
        for (t, word) in u.tokens().iter().enumerate() {
            out.push(LatentRecord::Token {
                utterance: i,
                position: t,
                word: word.clone(),
                mu: mu.row(t).to_vec(),
                logvar: lv.row(t).to_vec(),
            });
        }
        out.push(LatentRecord::Sentence {
            utterance: i,
            intent: u.intent().to_string(),
            mu: imu,
            logvar: ilv,
        });
    }
    Ok(out)
}

pub fn write_latents(records: &[LatentRecord], w: &mut impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
