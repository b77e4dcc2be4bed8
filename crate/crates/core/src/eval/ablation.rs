//! Train-then-zero-shot-evaluate over a grid of configurations and seeds.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::dictionary::{build_seed_dictionary, load_lexicon, SeedDictionary};
use crate::alignment::procrustes::{map_space, refine, RefineConfig, RefineReport};
use crate::alignment::space::{load_embeddings, preprocess, EmbeddingSpace};
use crate::corpus::synthetic::{load_seed_words, BundleConfig, SyntheticBundle};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::eval::metrics::EvalResult;
use crate::model::config::HeadKind;
use crate::training::{train, TrainConfig};

/// One row of the grid: which training and alignment options are on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub name: String,
    #[serde(default)]
    pub noise: bool,
    #[serde(default)]
    pub refine: bool,
    #[serde(default)]
    pub delexicalize: bool,
    #[serde(default = "lvm")]
    pub head: HeadKind,
}

fn lvm() -> HeadKind {
    HeadKind::Lvm
}

impl AblationConfig {
    pub fn new(name: &str, noise: bool, refine: bool, delexicalize: bool, head: HeadKind) -> Self {
        Self {
            name: name.to_string(),
            noise,
            refine,
            delexicalize,
            head,
        }
    }
}

/// vanilla, +N, +R, +N&R, +N&R&delex, all with the latent-variable head.
pub fn default_grid() -> Vec<AblationConfig> {
    use HeadKind::Lvm;
    vec![
        AblationConfig::new("vanilla", false, false, false, Lvm),
        AblationConfig::new("noise", true, false, false, Lvm),
        AblationConfig::new("refine", false, true, false, Lvm),
        AblationConfig::new("noise+refine", true, true, false, Lvm),
        AblationConfig::new("noise+refine+delex", true, true, true, Lvm),
    ]
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    #[serde(default = "default_grid")]
    pub grid: Vec<AblationConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Shared settings; each cell overrides seed, noise, refine,
    /// delexicalization and head.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub alignment: RefineConfig,
    /// Length-normalize and center both spaces first.
    #[serde(default = "yes")]
    pub preprocess: bool,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            seeds: default_seeds(),
            train: TrainConfig::default(),
            alignment: RefineConfig::default(),
            preprocess: true,
        }
    }
}

impl AblationPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = match self.train.validate() {
            Err(Error::Config(e)) => e.into_iter().map(|m| format!("train.{m}")).collect(),
            Err(e) => return Err(e),
            Ok(()) => Vec::new(),
        };
        if self.grid.is_empty() {
            errs.push("grid: must list at least one configuration".into());
        }
        if self.seeds.is_empty() {
            errs.push("seeds: must list at least one seed".into());
        }
        let mut names = HashSet::new();
        for c in &self.grid {
            if !names.insert(&c.name) {
                errs.push(format!("grid: duplicate configuration name `{}`", c.name));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                errs.push(format!("seeds: duplicate seed {s}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// The training configuration of one grid cell.
    pub fn cell_config(&self, c: &AblationConfig, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed;
        t.noise = c.noise;
        t.refine = c.refine;
        t.delexicalize = c.delexicalize;
        t.model.head = c.head;
        t
    }
}

/// Everything one ablation run reads. Only `target_test` is in the
/// target language, and it is read only when scoring.
#[derive(Clone, Debug)]
pub struct AblationData {
    pub source_train: Corpus,
    pub source_valid: Corpus,
    pub target_test: Corpus,
    pub source_space: EmbeddingSpace,
    pub target_space: EmbeddingSpace,
    /// `(source word, target word)` seed pairs.
    pub seeds: SeedDictionary,
}

impl AblationData {
    pub fn from_synthetic(b: &SyntheticBundle) -> Result<Self> {
        let (seeds, _) = build_seed_dictionary(&b.spec.seed_words, &b.lexicon)?;
        Ok(Self {
            source_train: b.source_train.clone(),
            source_valid: b.source_valid.clone(),
            target_test: b.target_test.clone(),
            source_space: b.source_space.clone(),
            target_space: b.target_space.clone(),
            seeds,
        })
    }

    pub fn load(b: &BundleConfig) -> Result<Self> {
        let (source_train, ..) = Corpus::load(&b.train, &b.source_language, None)?;
        let (source_valid, ..) = Corpus::load(&b.valid, &b.source_language, None)?;
        let (target_test, ..) = Corpus::load(&b.target_test, &b.target_language, None)?;
        let (source_space, _) = load_embeddings(&b.source_space, &b.source_language, None)?;
        let (target_space, _) = load_embeddings(&b.target_space, &b.target_language, None)?;
        let lexicon = load_lexicon(&b.lexicon)?;
        let words = load_seed_words(&b.seed_words)?;
        let (seeds, _) = build_seed_dictionary(&words, &lexicon)?;
        Ok(Self {
            source_train,
            source_valid,
            target_test,
            source_space,
            target_space,
            seeds,
        })
    }
}

/// Source space plus the target space with and without refinement, all
/// ready for lookup.
#[derive(Clone, Debug)]
pub struct PreparedSpaces {
    pub source: EmbeddingSpace,
    pub target: EmbeddingSpace,
    pub target_refined: Option<(EmbeddingSpace, RefineReport)>,
}

/// Preprocesses (optionally) and, when asked, refines a map from the target
/// space onto the source space, which the model is trained in.
pub fn prepare_spaces(
    data: &AblationData,
    preprocess_spaces: bool,
    alignment: Option<&RefineConfig>,
) -> Result<PreparedSpaces> {
    let (source, target) = if preprocess_spaces {
        (
            preprocess(&data.source_space)?.0,
            preprocess(&data.target_space)?.0,
        )
    } else {
        (data.source_space.clone(), data.target_space.clone())
    };
    let target_refined = match alignment {
        None => None,
        Some(cfg) => {
            let (w, report) = refine(&target, &source, &data.seeds.inverted(), cfg)?;
            Some((map_space(&target, &w)?, report))
        }
    };
    Ok(PreparedSpaces {
        source,
        target,
        target_refined,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub result: EvalResult,
}

/// Mean and sample standard deviation (0 for a single run).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config: String,
    pub runs: usize,
    pub intent_acc: MeanSd,
    pub slot_p: MeanSd,
    pub slot_r: MeanSd,
    pub slot_f1: MeanSd,
    pub oov_rate: MeanSd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefineReport>,
}

const TSV_HEADER: &str = "config\tseed\tintent_acc\tslot_p\tslot_r\tslot_f1\toov_rate";

impl AblationTable {
    pub fn aggregate(&self, config: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.config == config)
    }

    /// One line per (config, seed), then one `mean±sd` line per config
    /// with seed column `aggregate`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(TSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let e = &r.result;
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.config,
                r.seed,
                e.intent_accuracy,
                e.slot_precision,
                e.slot_recall,
                e.slot_f1,
                e.oov_rate
            );
        }
        for a in &self.aggregates {
            let f = |m: MeanSd| format!("{:.6}±{:.6}", m.mean, m.sd);
            let _ = writeln!(
                s,
                "{}\taggregate\t{}\t{}\t{}\t{}\t{}",
                a.config,
                f(a.intent_acc),
                f(a.slot_p),
                f(a.slot_r),
                f(a.slot_f1),
                f(a.oov_rate)
            );
        }
        s
    }
}

/// Runs every (config, seed) cell, in parallel, and returns rows in grid
/// order then seed order.
pub fn run_ablation(plan: &AblationPlan, data: &AblationData) -> Result<AblationTable> {
    plan.validate()?;
    if data.source_train.language() != data.source_space.language()
        || data.target_test.language() != data.target_space.language()
    {
        return Err(Error::Data(
            "corpus and embedding space languages disagree".into(),
        ));
    }
    let needs_refine = plan.grid.iter().any(|c| c.refine);
    let spaces = prepare_spaces(
        data,
        plan.preprocess,
        needs_refine.then_some(&plan.alignment),
    )?;

    let cells: Vec<(&AblationConfig, u64)> = plan
        .grid
        .iter()
        .flat_map(|c| plan.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let rows: Vec<AblationRow> = cells
        .par_iter()
        .map(|&(c, seed)| {
            let cfg = plan.cell_config(c, seed);
            let (model, report) =
                train(&cfg, &data.source_train, &data.source_valid, &spaces.source)?;
            let target = match (&spaces.target_refined, c.refine) {
                (Some((t, _)), true) => t,
                _ => &spaces.target,
            };
            let result = evaluate(&model, target, &data.target_test)?;
            log::info!(
                "{} seed {seed}: slot F1 {:.4} intent acc {:.4}",
                c.name,
                result.slot_f1,
                result.intent_accuracy
            );
            Ok(AblationRow {
                config: c.name.clone(),
                seed,
                best_epoch: report.best_epoch,
                epochs_run: report.epochs.len(),
                result,
            })
        })
        .collect::<Result<_>>()?;

    let aggregates = plan
        .grid
        .iter()
        .map(|c| {
            let mine: Vec<&EvalResult> = rows
                .iter()
                .filter(|r| r.config == c.name)
                .map(|r| &r.result)
                .collect();
            let stat = |f: fn(&EvalResult) -> f64| {
                MeanSd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                config: c.name.clone(),
                runs: mine.len(),
                intent_acc: stat(|r| r.intent_accuracy),
                slot_p: stat(|r| r.slot_precision),
                slot_r: stat(|r| r.slot_recall),
                slot_f1: stat(|r| r.slot_f1),
                oov_rate: stat(|r| r.oov_rate),
            }
        })
        .collect();
    Ok(AblationTable {
        rows,
        aggregates,
        refinement: spaces.target_refined.map(|(_, r)| r),
    })
}
