use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use xlnlu::alignment::{
    build_seed_dictionary, load_embeddings, load_lexicon, map_space, preprocess, refine,
    write_embeddings, EmbeddingSpace, RefineConfig,
};
use xlnlu::corpus::synthetic::{load_seed_words, write_matrix, BundleConfig};
use xlnlu::corpus::{generate_synthetic, write_bundle, Corpus, SyntheticSpec};
use xlnlu::eval::{
    evaluate, export_latents, run_ablation, write_latents, AblationData, AblationPlan,
};
use xlnlu::model::TrainedModel;
use xlnlu::training::{train, TrainConfig};
use xlnlu::Error;

use crate::manifest::RunManifest;
use crate::{Cli, Command, Common};

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(vec![msg.into()]).into()
}

fn out_dir(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| config_error("--out: an output directory is required"))
}

fn read_config(c: &Common) -> Result<Option<String>> {
    match &c.config {
        None => Ok(None),
        Some(p) => fs::read_to_string(p).map(Some).map_err(|e| {
            Error::Io {
                path: p.clone(),
                source: e,
            }
            .into()
        }),
    }
}

/// Attaches the config file's name to a parse or validation error.
fn in_config<T>(c: &Common, r: xlnlu::Result<T>) -> Result<T> {
    r.map_err(|e| match (e, &c.config) {
        (Error::Config(msgs), Some(p)) => Error::Config(
            msgs.into_iter()
                .map(|m| format!("{}: {m}", p.display()))
                .collect(),
        )
        .into(),
        (e, _) => e.into(),
    })
}

fn with_config(m: RunManifest, c: &Common) -> Result<RunManifest> {
    match &c.config {
        Some(p) => m.input(p),
        None => Ok(m),
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Gen => gen(c),
        Command::Refine { bundle } => cmd_refine(c, bundle),
        Command::Train {
            bundle,
            space,
            head,
            noise,
            delexicalize,
            refine,
        } => {
            let mut cfg = match read_config(c)? {
                Some(text) => in_config(c, TrainConfig::from_toml(&text))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(h) = head {
                cfg.model.head = *h;
            }
            cfg.noise |= noise;
            cfg.delexicalize |= delexicalize;
            cfg.refine |= refine;
            cmd_train(c, bundle, space.as_deref(), &cfg)
        }
        Command::Eval {
            model,
            bundle,
            corpus,
            space,
            language,
        } => cmd_eval(
            c,
            model,
            bundle.as_deref(),
            corpus.as_deref(),
            space.as_deref(),
            language.as_deref(),
        ),
        Command::Ablate { bundle } => cmd_ablate(c, bundle),
        Command::ExportLatents {
            model,
            bundle,
            corpus,
            space,
        } => cmd_export(
            c,
            model,
            bundle.as_deref(),
            corpus.as_deref(),
            space.as_deref(),
        ),
    }
}

const BUNDLE_OUTPUTS: [&str; 11] = [
    "source_train.conll",
    "source_valid.conll",
    "source_test.conll",
    "target_test.conll",
    "source.vec",
    "target.vec",
    "gold_mapping.json",
    "lexicon.tsv",
    "seed_words.txt",
    "synthetic.toml",
    "bundle.toml",
];

fn gen(c: &Common) -> Result<()> {
    let mut spec = match read_config(c)? {
        Some(text) => in_config(c, SyntheticSpec::from_toml(&text))?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    in_config(c, spec.validate())?;
    let out = out_dir(c)?;
    with_config(RunManifest::new("gen", Some(spec.seed), &spec)?, c)?
        .outputs(&BUNDLE_OUTPUTS)
        .write(out)?;
    let bundle = generate_synthetic(&spec)?;
    let written = write_bundle(&bundle, out)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

/// Which space is moved onto the other. The model is trained in the source
/// space, so the default maps the target onto it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    TargetToSource,
    SourceToTarget,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSettings {
    pub direction: Direction,
    pub preprocess: bool,
    /// Skip seed words with no lexicon entry instead of failing.
    pub allow_missing_seeds: bool,
    pub alignment: RefineConfig,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            direction: Direction::TargetToSource,
            preprocess: true,
            allow_missing_seeds: false,
            alignment: RefineConfig::default(),
        }
    }
}

fn cmd_refine(c: &Common, bundle_path: &Path) -> Result<()> {
    let settings: RefineSettings = match read_config(c)? {
        Some(text) => in_config(
            c,
            toml::from_str(&text).map_err(|e| Error::Config(vec![e.to_string()])),
        )?,
        None => RefineSettings::default(),
    };
    let out = out_dir(c)?;
    let b = BundleConfig::load(bundle_path)?;
    let manifest = with_config(RunManifest::new("refine", None, &settings)?, c)?
        .input(bundle_path)?
        .input(&b.source_space)?
        .input(&b.target_space)?
        .input(&b.lexicon)?
        .input(&b.seed_words)?
        .outputs(&[
            "source.vec",
            "target.vec",
            "mapping.json",
            "refine_report.json",
        ]);
    manifest.write(out)?;

    let (source, _) = load_embeddings(&b.source_space, &b.source_language, None)?;
    let (target, _) = load_embeddings(&b.target_space, &b.target_language, None)?;
    let (source, target) = if settings.preprocess {
        (preprocess(&source)?.0, preprocess(&target)?.0)
    } else {
        (source, target)
    };
    let words = load_seed_words(&b.seed_words)?;
    let lexicon = load_lexicon(&b.lexicon)?;
    let (dict, report) = build_seed_dictionary(&words, &lexicon)?;
    if !report.missing.is_empty() && !settings.allow_missing_seeds {
        return Err(Error::Data(format!(
            "seed words with no lexicon entry: {}",
            report.missing.join(", ")
        ))
        .into());
    }
    let (moved, fixed, dict) = match settings.direction {
        Direction::TargetToSource => (&target, &source, dict.inverted()),
        Direction::SourceToTarget => (&source, &target, dict),
    };
    let (w, rep) = refine(moved, fixed, &dict, &settings.alignment)?;
    println!(
        "seed distance before mapping: {:.6}",
        rep.initial_seed_distance
    );
    for it in &rep.iterations {
        println!(
            "iteration {}: seed distance {:.6}, dictionary {}",
            it.iteration, it.seed_distance, it.dictionary_size
        );
    }
    println!("stopped: {:?}", rep.stop);
    let mapped = map_space(moved, &w)?;
    let (src_out, tgt_out): (&EmbeddingSpace, &EmbeddingSpace) = match settings.direction {
        Direction::TargetToSource => (&source, &mapped),
        Direction::SourceToTarget => (&mapped, &target),
    };
    write_embeddings(src_out, out.join("source.vec"))?;
    write_embeddings(tgt_out, out.join("target.vec"))?;
    write_matrix(w.matrix(), out.join("mapping.json"))?;
    write_text(
        out,
        "refine_report.json",
        &(serde_json::to_string_pretty(&rep)? + "\n"),
    )?;
    Ok(())
}

fn cmd_train(
    c: &Common,
    bundle_path: &Path,
    space: Option<&Path>,
    cfg: &TrainConfig,
) -> Result<()> {
    in_config(c, cfg.validate())?;
    let out = out_dir(c)?;
    let b = BundleConfig::load(bundle_path)?;
    let space_path = space
        .map(Path::to_path_buf)
        .unwrap_or_else(|| b.source_space.clone());
    with_config(RunManifest::new("train", Some(cfg.seed), cfg)?, c)?
        .input(bundle_path)?
        .input(&b.train)?
        .input(&b.valid)?
        .input(&space_path)?
        .outputs(&["model.ckpt", "train_report.jsonl"])
        .write(out)?;

    let (tr, ..) = Corpus::load(&b.train, &b.source_language, None)?;
    let (va, ..) = Corpus::load(&b.valid, &b.source_language, None)?;
    let (sp, _) = load_embeddings(&space_path, &b.source_language, None)?;
    let (model, report) = train(cfg, &tr, &va, &sp)?;
    model.save(out.join("model.ckpt"))?;
    write_text(out, "train_report.jsonl", &report.to_jsonl())?;
    println!(
        "{} head, best epoch {} of {}: valid slot F1 {:.4}, intent acc {:.4}",
        model.config.head,
        report.best_epoch,
        report.epochs.len(),
        report.best_valid_slot_f1,
        report.epochs[report.best_epoch - 1].valid_intent_accuracy
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalInputs<'a> {
    model: &'a Path,
    corpus: &'a Path,
    space: &'a Path,
    language: &'a str,
}

fn cmd_eval(
    c: &Common,
    model_path: &Path,
    bundle: Option<&Path>,
    corpus: Option<&Path>,
    space: Option<&Path>,
    language: Option<&str>,
) -> Result<()> {
    let out = out_dir(c)?;
    let b = bundle.map(BundleConfig::load).transpose()?;
    let missing = |what: &str| config_error(format!("--{what}: required without --bundle"));
    let corpus_path = corpus
        .map(Path::to_path_buf)
        .or_else(|| b.as_ref().map(|b| b.target_test.clone()))
        .ok_or_else(|| missing("corpus"))?;
    let space_path = space
        .map(Path::to_path_buf)
        .or_else(|| b.as_ref().map(|b| b.target_space.clone()))
        .ok_or_else(|| missing("space"))?;
    let language = language
        .map(str::to_string)
        .or_else(|| b.as_ref().map(|b| b.target_language.clone()))
        .ok_or_else(|| missing("language"))?;
    let inputs = EvalInputs {
        model: model_path,
        corpus: &corpus_path,
        space: &space_path,
        language: &language,
    };
    RunManifest::new("eval", None, &inputs)?
        .input(model_path)?
        .input(&corpus_path)?
        .input(&space_path)?
        .outputs(&["eval.json", "eval.tsv"])
        .write(out)?;

    let model = TrainedModel::load(model_path)?;
    let (corpus, ..) = Corpus::load(&corpus_path, &language, None)?;
    let (sp, _) = load_embeddings(&space_path, &language, None)?;
    let r = evaluate(&model, &sp, &corpus)?;
    let tsv = format!(
        "intent_acc\tslot_p\tslot_r\tslot_f1\toov_rate\tutterances\n{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
        r.intent_accuracy, r.slot_precision, r.slot_recall, r.slot_f1, r.oov_rate, r.utterances
    );
    write_text(
        out,
        "eval.json",
        &(serde_json::to_string_pretty(&r)? + "\n"),
    )?;
    write_text(out, "eval.tsv", &tsv)?;
    print!("{tsv}");
    Ok(())
}

fn cmd_ablate(c: &Common, bundle_path: &Path) -> Result<()> {
    let mut plan = match read_config(c)? {
        Some(text) => in_config(c, AblationPlan::from_toml(&text))?,
        None => AblationPlan::default(),
    };
    if let Some(s) = c.seed {
        plan.seeds = vec![s];
    }
    in_config(c, plan.validate())?;
    let out = out_dir(c)?;
    let b = BundleConfig::load(bundle_path)?;
    let mut m = with_config(RunManifest::new("ablate", c.seed, &plan)?, c)?.input(bundle_path)?;
    for p in [
        &b.train,
        &b.valid,
        &b.target_test,
        &b.source_space,
        &b.target_space,
        &b.lexicon,
        &b.seed_words,
    ] {
        m = m.input(p)?;
    }
    m.outputs(&["ablation.tsv", "ablation.json"]).write(out)?;

    let data = AblationData::load(&b)?;
    let table = run_ablation(&plan, &data)?;
    let tsv = table.to_tsv();
    write_text(out, "ablation.tsv", &tsv)?;
    write_text(
        out,
        "ablation.json",
        &(serde_json::to_string_pretty(&table)? + "\n"),
    )?;
    print!("{tsv}");
    Ok(())
}

fn cmd_export(
    c: &Common,
    model_path: &Path,
    bundle: Option<&Path>,
    corpus: Option<&Path>,
    space: Option<&Path>,
) -> Result<()> {
    let out = out_dir(c)?;
    let b = bundle.map(BundleConfig::load).transpose()?;
    let missing = |what: &str| config_error(format!("--{what}: required without --bundle"));
    let corpus_path = corpus
        .map(Path::to_path_buf)
        .or_else(|| b.as_ref().map(|b| b.source_test.clone()))
        .ok_or_else(|| missing("corpus"))?;
    let space_path = space
        .map(Path::to_path_buf)
        .or_else(|| b.as_ref().map(|b| b.source_space.clone()))
        .ok_or_else(|| missing("space"))?;
    let model = TrainedModel::load(model_path)?;
    let inputs = EvalInputs {
        model: model_path,
        corpus: &corpus_path,
        space: &space_path,
        language: &model.language,
    };
    RunManifest::new("export-latents", None, &inputs)?
        .input(model_path)?
        .input(&corpus_path)?
        .input(&space_path)?
        .outputs(&["latents.jsonl"])
        .write(out)?;

    // latents are exported in the training language only
    let (corpus, ..) = Corpus::load(&corpus_path, &model.language, None)?;
    let (sp, _) = load_embeddings(&space_path, &model.language, None)?;
    let records = export_latents(&model, &corpus, &sp)?;
    let path = out.join("latents.jsonl");
    let mut f = std::io::BufWriter::new(
        fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    write_latents(&records, &mut f).with_context(|| format!("writing {}", path.display()))?;
    println!("{} records written to {}", records.len(), path.display());
    Ok(())
}
