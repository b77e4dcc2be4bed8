//! Utterance corpora: CoNLL-style I/O, labels, delexicalization, embedding
//! lookup and the synthetic bilingual generator.

pub mod delex;
pub mod synthetic;
pub mod utterance;

use std::path::Path;

pub use delex::{delexicalize, DelexRules, DURATION_TOKEN, NUMBER_TOKEN, TIME_TOKEN};
pub use synthetic::{
    generate_synthetic, write_bundle, BundleConfig, SyntheticBundle, SyntheticSpec,
};
pub use utterance::{
    load_corpus, repair_bio, save_corpus, split_bio, LabelCatalog, LoadStats, Utterance,
};

use crate::alignment::space::EmbeddingSpace;
use crate::error::Result;
use crate::tensor::matrix::Matrix;

/// Utterances tagged with the language they are written in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    language: String,
    utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(language: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Self {
            language: language.into(),
            utterances,
        }
    }

    /// Loads a corpus file; see [`load_corpus`] for the catalog semantics.
    pub fn load(
        path: impl AsRef<Path>,
        language: &str,
        catalog: Option<&LabelCatalog>,
    ) -> Result<(Self, LabelCatalog, LoadStats)> {
        let (u, cat, stats) = load_corpus(path, catalog)?;
        Ok((Self::new(language, u), cat, stats))
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn delexicalized(&self, rules: &DelexRules) -> Self {
        Self {
            language: self.language.clone(),
            utterances: self
                .utterances
                .iter()
                .map(|u| delexicalize(u, rules))
                .collect(),
        }
    }
}

/// Looks every token up in `space`; unknown tokens become zero rows.
/// Returns the `T x dim` matrix and the number of unknown tokens.
pub fn encode(u: &Utterance, space: &EmbeddingSpace) -> (Matrix, usize) {
    let mut m = Matrix::zeros(u.len(), space.dim());
    let mut oov = 0;
    for (t, tok) in u.tokens().iter().enumerate() {
        match space.vector(tok) {
            Some(v) => m.row_mut(t).copy_from_slice(v),
            None => oov += 1,
        }
    }
    (m, oov)
}
