//! Minibatch training with Adam, clipping and early stopping on validation
//! slot F1, plus the zero-shot embedding swap.

pub mod optim;
pub mod swap;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use swap::{zero_shot_swap, Inference, Labelled};

use crate::alignment::space::EmbeddingSpace;
use crate::corpus::{encode, Corpus, DelexRules, LabelCatalog};
use crate::error::{Error, Result};
use crate::eval::metrics::{intent_accuracy, slot_f1};
use crate::model::checkpoint::TrainedModel;
use crate::model::config::{HeadKind, ModelConfig};
use crate::model::network::{forward, loss, Mode};
use crate::model::params::ModelParams;
use crate::tensor::matrix::Matrix;
use crate::tensor::random::{seeded, Rng, Stream};
use crate::tensor::tape::Tape;

/// Layer sizes and head; input and label sizes come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub hidden: usize,
    pub latent: usize,
    pub head: HeadKind,
    pub noise_variance: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        let d = ModelConfig::new(1, 1, 1);
        Self {
            hidden: d.hidden,
            latent: d.latent,
            head: d.head,
            noise_variance: d.noise_variance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: Architecture,
    pub optimizer: AdamConfig,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Gaussian noise on training embeddings.
    pub noise: bool,
    pub delexicalize: bool,
    pub delex_rules: DelexRules,
    /// Whether the evaluation space is aligned by refinement. Training
    /// itself only records it.
    pub refine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: Architecture::default(),
            optimizer: AdamConfig::default(),
            clip_norm: 5.0,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            shuffle: true,
            noise: false,
            delexicalize: false,
            delex_rules: DelexRules::default(),
            refine: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = self.optimizer.problems();
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("model.hidden", self.model.hidden),
            ("model.latent", self.model.latent),
        ] {
            if v == 0 {
                errs.push(format!("{name}: must be at least 1"));
            }
        }
        if !(self.clip_norm > 0.0) {
            errs.push(format!("clip_norm: must be > 0, got {}", self.clip_norm));
        }
        let nv = self.model.noise_variance;
        if !(nv.is_finite() && nv >= 0.0) {
            errs.push(format!(
                "model.noise_variance: must be finite and >= 0, got {nv}"
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn model_config(&self, embedding_dim: usize, catalog: &LabelCatalog) -> ModelConfig {
        ModelConfig {
            embedding_dim,
            hidden: self.model.hidden,
            latent: self.model.latent,
            num_slots: catalog.num_slots(),
            num_intents: catalog.num_intents(),
            head: self.model.head,
            noise_variance: self.model.noise_variance,
            noise: self.noise,
        }
    }
}

/// One training utterance after lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Position in the training corpus, used in diagnostics.
    pub id: usize,
    pub embeddings: Matrix,
    pub slots: Vec<usize>,
    pub intent: usize,
}

/// Looks up a corpus and maps its labels through `catalog`; also returns
/// the OOV token count.
pub fn encode_examples(
    corpus: &Corpus,
    space: &EmbeddingSpace,
    catalog: &LabelCatalog,
) -> Result<(Vec<Example>, usize)> {
    let mut oov = 0;
    let mut out = Vec::with_capacity(corpus.len());
    for (id, u) in corpus.utterances().iter().enumerate() {
        let (embeddings, o) = encode(u, space);
        oov += o;
        out.push(Example {
            id,
            embeddings,
            slots: u
                .slots()
                .iter()
                .map(|s| catalog.slot_id(s))
                .collect::<Result<_>>()?,
            intent: catalog.intent_id(u.intent())?,
        });
    }
    Ok((out, oov))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimizer update on the mean loss of `batch`.
pub fn step(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    batch: &[&Example],
    adam: &mut Adam,
    clip_norm: f64,
    noise: &mut Rng,
    sampling: &mut Rng,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut total = None;
    for ex in batch {
        let g = forward(
            &mut tape,
            &bound,
            cfg,
            &ex.embeddings,
            Mode::Train {
                noise: &mut *noise,
                sampling: &mut *sampling,
            },
        )?;
        let l = loss(&mut tape, &g, &ex.slots, ex.intent)?;
        let v = tape.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {v} on training utterance {}",
                ex.id
            )));
        }
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let mean = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
    let value = tape.value(mean).item();
    let grads = tape.backward(mean)?;
    let mut g: Vec<Matrix> = bound
        .values()
        .into_iter()
        .zip(params.values())
        .map(|(&id, p)| grads.get_or_zeros(id, p.shape()))
        .collect();
    if let Some(i) = g.iter().position(|m| !m.is_finite()) {
        let name = params.entries()[i].0;
        let ids: Vec<String> = batch.iter().map(|e| e.id.to_string()).collect();
        return Err(Error::NonFinite(format!(
            "gradient of `{name}` on batch of utterances {}",
            ids.join(",")
        )));
    }
    let grad_norm = clip_global_norm(&mut g, clip_norm);
    adam.update(params, &g)?;
    Ok(StepStats {
        loss: value,
        grad_norm,
    })
}

/// Validation scores used for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub slot_f1: f64,
    pub intent_accuracy: f64,
}

/// Scores `model` on `corpus` looked up in `space`.
pub fn validate(
    model: &TrainedModel,
    space: &EmbeddingSpace,
    corpus: &Corpus,
) -> Result<Validation> {
    let out = zero_shot_swap(model, space)?.predict(corpus)?;
    let gold_slots: Vec<Vec<String>> = corpus
        .utterances()
        .iter()
        .map(|u| u.slots().to_vec())
        .collect();
    let gold_int: Vec<&str> = corpus.utterances().iter().map(|u| u.intent()).collect();
    Ok(Validation {
        slot_f1: slot_f1(&out.slots, &gold_slots)?.f1(),
        intent_accuracy: intent_accuracy(&out.intents, &gold_int)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub mean_grad_norm: f64,
    pub valid_slot_f1: f64,
    pub valid_intent_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub language: String,
    pub parameters: usize,
    pub train_utterances: usize,
    pub train_tokens: usize,
    pub train_oov_tokens: usize,
    pub embedding_checksum: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_slot_f1: f64,
    pub stop: StopCause,
}

impl TrainReport {
    /// One `{"record":"epoch",…}` line per epoch, then one summary line.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Tagged<'a, T: Serialize> {
            record: &'a str,
            #[serde(flatten)]
            body: T,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a TrainConfig,
            model: &'a ModelConfig,
            language: &'a str,
            parameters: usize,
            train_utterances: usize,
            train_tokens: usize,
            train_oov_tokens: usize,
            embedding_checksum: u64,
            epochs_run: usize,
            best_epoch: usize,
            best_valid_slot_f1: f64,
            stop: StopCause,
        }
        fn line(s: &mut String, v: &impl Serialize) {
            s.push_str(&serde_json::to_string(v).expect("report values serialize"));
            s.push('\n');
        }
        let mut s = String::new();
        for e in &self.epochs {
            line(
                &mut s,
                &Tagged {
                    record: "epoch",
                    body: e,
                },
            );
        }
        line(
            &mut s,
            &Tagged {
                record: "summary",
                body: Summary {
                    config: &self.config,
                    model: &self.model,
                    language: &self.language,
                    parameters: self.parameters,
                    train_utterances: self.train_utterances,
                    train_tokens: self.train_tokens,
                    train_oov_tokens: self.train_oov_tokens,
                    embedding_checksum: self.embedding_checksum,
                    epochs_run: self.epochs.len(),
                    best_epoch: self.best_epoch,
                    best_valid_slot_f1: self.best_valid_slot_f1,
                    stop: self.stop,
                },
            },
        );
        s
    }
}

/// Trains on `train`, selecting the epoch with the best slot F1 on `valid`.
pub fn train(
    cfg: &TrainConfig,
    train: &Corpus,
    valid: &Corpus,
    space: &EmbeddingSpace,
) -> Result<(TrainedModel, TrainReport)> {
    if valid.language() != space.language() {
        return Err(Error::Data(format!(
            "validation corpus is `{}` but the embedding space is `{}`",
            valid.language(),
            space.language()
        )));
    }
    if valid.is_empty() {
        return Err(Error::Data("validation corpus is empty".into()));
    }
    train_with_validator(cfg, train, space, |m| validate(m, space, valid))
}

/// [`train`] with a caller-supplied validation score per epoch.
pub fn train_with_validator(
    cfg: &TrainConfig,
    train: &Corpus,
    space: &EmbeddingSpace,
    mut validator: impl FnMut(&TrainedModel) -> Result<Validation>,
) -> Result<(TrainedModel, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    if train.language() != space.language() {
        return Err(Error::Data(format!(
            "training corpus is `{}` but the embedding space is `{}`",
            train.language(),
            space.language()
        )));
    }
    let checksum = space.checksum();
    let delex = cfg.delexicalize.then(|| cfg.delex_rules.clone());
    let corpus = match &delex {
        Some(rules) => train.delexicalized(rules),
        None => train.clone(),
    };
    let catalog = LabelCatalog::from_corpus(corpus.utterances());
    let model_cfg = cfg.model_config(space.dim(), &catalog);
    let (examples, train_oov) = encode_examples(&corpus, space, &catalog)?;
    let params = ModelParams::init(&model_cfg, &mut seeded(cfg.seed, Stream::Init))?;
    let mut model = TrainedModel {
        config: model_cfg,
        params,
        catalog,
        language: space.language().to_string(),
        delex,
    };
    let mut adam = Adam::new(cfg.optimizer.clone(), &model.params);
    let mut shuffle_rng = seeded(cfg.seed, Stream::Shuffle);
    let mut noise_rng = seeded(cfg.seed, Stream::Noise);
    let mut sampling_rng = seeded(cfg.seed, Stream::Sampling);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut stop = StopCause::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let s = step(
                &mut model.params,
                &model.config,
                &batch,
                &mut adam,
                cfg.clip_norm,
                &mut noise_rng,
                &mut sampling_rng,
            )?;
            loss_sum += s.loss * batch.len() as f64;
            norm_sum += s.grad_norm;
            batches += 1;
        }
        let v = validator(&model)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            mean_grad_norm: norm_sum / batches as f64,
            valid_slot_f1: v.slot_f1,
            valid_intent_accuracy: v.intent_accuracy,
        };
        info!(
            "epoch {epoch}: loss {:.5} valid slot F1 {:.4} intent acc {:.4}",
            rec.train_loss, rec.valid_slot_f1, rec.valid_intent_accuracy
        );
        epochs.push(rec);
        if best.as_ref().is_none_or(|b| v.slot_f1 > b.1) {
            best = Some((epoch, v.slot_f1, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop = StopCause::Patience;
                break;
            }
        }
    }
    if space.checksum() != checksum {
        return Err(Error::Data(
            "embedding space changed during training".into(),
        ));
    }
    let (best_epoch, best_f1, best_params) = best.expect("at least one epoch");
    model.params = best_params;
    let report = TrainReport {
        config: cfg.clone(),
        model: model.config.clone(),
        language: model.language.clone(),
        parameters: model.params.count(),
        train_utterances: examples.len(),
        train_tokens: examples.iter().map(|e| e.slots.len()).sum(),
        train_oov_tokens: train_oov,
        embedding_checksum: checksum,
        epochs,
        best_epoch,
        best_valid_slot_f1: best_f1,
        stop,
    };
    Ok((model, report))
}
