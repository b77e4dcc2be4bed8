//! Intent accuracy and span-level BIO F1 (conlleval conventions).

use serde::{Deserialize, Serialize};

use crate::corpus::utterance::split_bio;
use crate::error::{Error, Result};

/// A labelled span covering tokens `start..end`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Maximal `B-X I-X …` runs. An `I-X` that does not continue a span of
/// type `X` opens a new one, the same repair applied when loading corpora.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (t, l) in labels.iter().enumerate() {
        let parsed = split_bio(l.as_ref());
        let continues = matches!(
            (&open, parsed),
            (Some(s), Some(('I', ty))) if s.label == ty
        );
        if continues {
            if let Some(s) = open.as_mut() {
                s.end = t + 1;
            }
            continue;
        }
        if let Some(s) = open.take() {
            spans.push(s);
        }
        if let Some((_, ty)) = parsed {
            open = Some(Span {
                label: ty.to_string(),
                start: t,
                end: t + 1,
            });
        }
    }
    spans.extend(open);
    spans
}

pub fn intent_accuracy<S: AsRef<str>, G: AsRef<str>>(pred: &[S], gold: &[G]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted intents for {} gold intents",
            pred.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Data("intent accuracy of an empty corpus".into()));
    }
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_ref() == g.as_ref())
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold)
    }

    /// `2PR / (P + R)`, with `0/0 = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Span counts for one utterance.
pub fn span_counts<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> SpanCounts {
    let g = extract_spans(gold);
    let p = extract_spans(pred);
    let matched = p.iter().filter(|s| g.contains(s)).count();
    SpanCounts {
        gold: g.len(),
        predicted: p.len(),
        matched,
    }
}

/// Micro-averaged span counts over a corpus.
pub fn slot_f1<P: AsRef<str>, G: AsRef<str>>(
    pred: &[Vec<P>],
    gold: &[Vec<G>],
) -> Result<SpanCounts> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted sequences for {} gold sequences",
            pred.len(),
            gold.len()
        )));
    }
    let mut total = SpanCounts::default();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Data(format!(
                "utterance {i}: {} predicted labels for {} tokens",
                p.len(),
                g.len()
            )));
        }
        let c = span_counts(p, g);
        total.gold += c.gold;
        total.predicted += c.predicted;
        total.matched += c.matched;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub intent_accuracy: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub spans: SpanCounts,
    /// Share of tokens missing from the embedding space.
    pub oov_rate: f64,
    pub oov_tokens: usize,
    pub tokens: usize,
    pub utterances: usize,
}

impl EvalResult {
    pub fn new(
        intent_accuracy: f64,
        spans: SpanCounts,
        oov_tokens: usize,
        tokens: usize,
        utterances: usize,
    ) -> Self {
        Self {
            intent_accuracy,
            slot_precision: spans.precision(),
            slot_recall: spans.recall(),
            slot_f1: spans.f1(),
            spans,
            oov_rate: ratio(oov_tokens, tokens),
            oov_tokens,
            tokens,
            utterances,
        }
    }
}
