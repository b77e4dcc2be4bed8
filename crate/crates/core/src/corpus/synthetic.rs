//! Synthetic bilingual bundles with a planted alignment.
//!
//! The target language is a letter-substitution cipher of the source
//! language. Its embedding rows are the source rows rotated by a planted
//! orthogonal map `G` plus isotropic Gaussian noise, so every quantity the
//! pipeline estimates has a known answer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::alignment::dictionary::{Lexicon, DOMAIN_SEED_WORDS};
use crate::alignment::procrustes::MappingMatrix;
use crate::alignment::space::{write_embeddings, EmbeddingSpace};
use crate::corpus::delex::{DelexRules, DURATION_TOKEN, NUMBER_TOKEN, TIME_TOKEN};
use crate::corpus::utterance::{save_corpus, Utterance, OUTSIDE};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::tensor::matrix::Matrix;
use crate::tensor::random::{seeded, standard_normal, Rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    pub name: String,
    /// Space-separated tokens; `{slot}` draws a value from `slots[slot]`.
    pub templates: Vec<String>,
}

/// Generator settings. Every field has a default, so a config file only
/// lists what it changes; giving `intents` or `slots` replaces that part of
/// the built-in grammar wholesale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub dim: usize,
    pub source_language: String,
    pub target_language: String,
    /// Standard deviation of the Gaussian perturbation added to target rows.
    pub noise: f64,
    /// Standard deviation (radians) of each planted Givens rotation angle.
    pub misalignment: f64,
    /// Number of Givens rotations composing the planted map; defaults to
    /// `dim * (dim - 1) / 2`.
    pub rotations: Option<usize>,
    /// Share of a slot-value vector taken from its slot's cluster centre.
    pub cluster_weight: f64,
    /// Random filler words appended to the source vocabulary (and, ciphered,
    /// to the target vocabulary).
    pub source_distractors: usize,
    /// Extra filler words only the target vocabulary has.
    pub target_distractors: usize,
    pub train: usize,
    pub valid: usize,
    /// Size of the source test split; the target test split is its cipher.
    pub test: usize,
    pub seed_words: Vec<String>,
    pub intents: Vec<IntentSpec>,
    pub slots: BTreeMap<String, Vec<String>>,
}

fn strings(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn default_intents() -> Vec<IntentSpec> {
    let intent = |name: &str, templates: &[&str]| IntentSpec {
        name: name.into(),
        templates: strings(templates),
    };
    vec![
        intent(
            "weather/find",
            &[
                "what is the weather {datetime}",
                "what is the weather forecast for {location} {datetime}",
                "will it {weather/attribute} {datetime} in {location}",
                "is it going to be {weather/attribute} {datetime}",
                "what is the temperature in {location}",
                "show me the weather in {location} {datetime}",
                "how {weather/attribute} will it be in {location}",
            ],
        ),
        intent(
            "alarm/set_alarm",
            &[
                "set an alarm for {datetime}",
                "wake me up {datetime}",
                "set alarm {datetime}",
                "create an alarm for {datetime} please",
                "i need an alarm {datetime}",
            ],
        ),
        intent(
            "alarm/cancel_alarm",
            &[
                "cancel my alarm for {datetime}",
                "cancel the alarm",
                "turn off my alarm {datetime}",
                "please cancel alarm {datetime}",
            ],
        ),
        intent(
            "alarm/snooze_alarm",
            &[
                "snooze for {duration}",
                "snooze the alarm for {duration}",
                "give me {duration} more",
                "snooze my alarm {duration}",
            ],
        ),
        intent(
            "reminder/set_reminder",
            &[
                "remind me to {reminder/todo} {datetime}",
                "do not let me forget to {reminder/todo}",
                "set a reminder to {reminder/todo} {datetime}",
                "remind me {datetime} to {reminder/todo}",
                "i must not forget to {reminder/todo} {datetime}",
            ],
        ),
    ]
}

fn default_slots() -> BTreeMap<String, Vec<String>> {
    let mut m = BTreeMap::new();
    m.insert(
        "datetime".to_string(),
        strings(&[
            "tomorrow",
            "today",
            "tonight",
            "at 7 am",
            "at 9:30 pm",
            "at 6 pm",
            "tomorrow morning",
            "this evening",
            "on monday",
            "tomorrow at 8 am",
            "at 10:15",
            "next week",
        ]),
    );
    m.insert(
        "location".to_string(),
        strings(&[
            "new york",
            "boston",
            "paris",
            "san francisco",
            "london",
            "the city",
            "chicago",
            "madrid",
        ]),
    );
    m.insert(
        "weather/attribute".to_string(),
        strings(&["rain", "hot", "cold", "snow", "sunny", "windy", "warm"]),
    );
    m.insert(
        "reminder/todo".to_string(),
        strings(&[
            "call mom",
            "buy milk",
            "pay the bills",
            "take my medicine",
            "water the plants",
            "walk the dog",
            "send the report",
        ]),
    );
    m.insert(
        "duration".to_string(),
        strings(&[
            "30min",
            "10 minutes",
            "5mins",
            "1hr",
            "15 minutes",
            "20min",
            "2 hours",
        ]),
    );
    m
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 10,
            source_language: "en".into(),
            target_language: "xx".into(),
            noise: 0.0,
            misalignment: 0.3,
            rotations: None,
            cluster_weight: 0.6,
            source_distractors: 100,
            target_distractors: 20,
            train: 300,
            valid: 60,
            test: 100,
            seed_words: strings(&DOMAIN_SEED_WORDS),
            intents: default_intents(),
            slots: default_slots(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Word(String),
    Slot(String),
}

fn parse_template(t: &str) -> std::result::Result<Vec<Piece>, String> {
    t.split_whitespace()
        .map(|tok| {
            if let Some(name) = tok.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                Ok(Piece::Slot(name.to_string()))
            } else if tok.contains(['{', '}']) {
                Err(format!("malformed placeholder `{tok}`"))
            } else {
                Ok(Piece::Word(tok.to_string()))
            }
        })
        .collect()
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.dim < 2 {
            errs.push(format!("dim: must be at least 2, got {}", self.dim));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            errs.push(format!(
                "noise: must be finite and >= 0, got {}",
                self.noise
            ));
        }
        if !(self.misalignment.is_finite() && self.misalignment >= 0.0) {
            errs.push(format!(
                "misalignment: must be finite and >= 0, got {}",
                self.misalignment
            ));
        }
        if !(0.0..=1.0).contains(&self.cluster_weight) {
            errs.push(format!(
                "cluster_weight: must be in [0, 1], got {}",
                self.cluster_weight
            ));
        }
        for (name, n) in [
            ("train", self.train),
            ("valid", self.valid),
            ("test", self.test),
        ] {
            if n == 0 {
                errs.push(format!("{name}: must be at least 1"));
            }
        }
        for (name, lang) in [
            ("source_language", &self.source_language),
            ("target_language", &self.target_language),
        ] {
            if lang.trim().is_empty() {
                errs.push(format!("{name}: must not be empty"));
            }
        }
        if self.source_language == self.target_language {
            errs.push("target_language: must differ from source_language".into());
        }
        if self.intents.is_empty() {
            errs.push("intents: at least one intent is required".into());
        }
        let mut names = HashSet::new();
        for it in &self.intents {
            if it.name.trim().is_empty() || it.name.contains(char::is_whitespace) {
                errs.push(format!(
                    "intents.name: `{}` must be non-empty without whitespace",
                    it.name
                ));
            }
            if !names.insert(&it.name) {
                errs.push(format!("intents.name: duplicate intent `{}`", it.name));
            }
            if it.templates.is_empty() {
                errs.push(format!(
                    "intents.templates: intent `{}` has no templates",
                    it.name
                ));
            }
            for t in &it.templates {
                match parse_template(t) {
                    Err(e) => errs.push(format!("intents.templates: `{t}`: {e}")),
                    Ok(p) if p.is_empty() => errs.push(format!(
                        "intents.templates: intent `{}` has an empty template",
                        it.name
                    )),
                    Ok(p) => {
                        for piece in p {
                            if let Piece::Slot(s) = piece {
                                if !self.slots.contains_key(&s) {
                                    errs.push(format!(
                                        "intents.templates: `{t}` uses undefined slot `{s}`"
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        for (name, values) in &self.slots {
            if name.is_empty() || name.contains(char::is_whitespace) || name == OUTSIDE {
                errs.push(format!("slots: invalid slot name `{name}`"));
            }
            if values.is_empty() {
                errs.push(format!("slots.{name}: needs at least one value"));
            }
            if values.iter().any(|v| v.split_whitespace().next().is_none()) {
                errs.push(format!("slots.{name}: empty value"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn rotation_count(&self) -> usize {
        self.rotations.unwrap_or(self.dim * (self.dim - 1) / 2)
    }
}

/// Everything [`generate_synthetic`] produces.
#[derive(Clone, Debug)]
pub struct SyntheticBundle {
    pub spec: SyntheticSpec,
    pub source_train: Corpus,
    pub source_valid: Corpus,
    pub source_test: Corpus,
    /// Token-wise cipher of `source_test`.
    pub target_test: Corpus,
    pub source_space: EmbeddingSpace,
    pub target_space: EmbeddingSpace,
    /// Planted map from source to target rows; its inverse aligns target to source.
    pub gold_mapping: MappingMatrix,
    /// `(source word, target word)` for every shared vocabulary entry.
    pub lexicon: Lexicon,
}

fn is_placeholder(tok: &str) -> bool {
    tok.starts_with('<') && tok.ends_with('>')
}

/// Letter substitution that leaves numbers, times, durations and
/// placeholder tokens untouched.
#[derive(Clone, Debug)]
struct Cipher {
    letters: [char; 26],
    keep: DelexRules,
}

impl Cipher {
    fn draw(rng: &mut Rng) -> Self {
        let mut letters: Vec<char> = ('a'..='z').collect();
        letters.shuffle(rng);
        Self {
            letters: letters.try_into().expect("26 letters"),
            keep: DelexRules::default(),
        }
    }

    fn apply(&self, word: &str) -> String {
        if is_placeholder(word) || self.keep.classify(word).is_some() {
            return word.to_string();
        }
        word.chars()
            .map(|c| match c {
                'a'..='z' => self.letters[(c as u8 - b'a') as usize],
                'A'..='Z' => self.letters[(c as u8 - b'A') as usize].to_ascii_uppercase(),
                _ => c,
            })
            .collect()
    }
}

fn random_word(rng: &mut Rng) -> String {
    let len = rng.random_range(4..=8);
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

fn distractors(n: usize, taken: &HashSet<String>, rng: &mut Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    let mut seen = taken.clone();
    while out.len() < n {
        let w = random_word(rng);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Product of `count` Givens rotations with angles drawn from `N(0, std²)`.
pub fn planted_rotation(dim: usize, count: usize, std: f64, rng: &mut Rng) -> Matrix {
    let mut g = Matrix::identity(dim);
    for _ in 0..count {
        let i = rng.random_range(0..dim);
        let mut j = rng.random_range(0..dim - 1);
        if j >= i {
            j += 1;
        }
        let theta = std * standard_normal(rng);
        let (s, c) = theta.sin_cos();
        // right-multiply by the rotation in the (i, j) plane
        for r in 0..dim {
            let (a, b) = (g.get(r, i), g.get(r, j));
            g.set(r, i, c * a - s * b);
            g.set(r, j, s * a + c * b);
        }
    }
    g
}

struct Grammar {
    intents: Vec<(String, Vec<Vec<Piece>>)>,
    slots: BTreeMap<String, Vec<Vec<String>>>,
}

impl Grammar {
    fn new(spec: &SyntheticSpec) -> Self {
        let intents = spec
            .intents
            .iter()
            .map(|it| {
                let ts = it
                    .templates
                    .iter()
                    .map(|t| parse_template(t).expect("validated"))
                    .collect();
                (it.name.clone(), ts)
            })
            .collect();
        let slots = spec
            .slots
            .iter()
            .map(|(k, vs)| {
                let vs = vs
                    .iter()
                    .map(|v| v.split_whitespace().map(String::from).collect())
                    .collect();
                (k.clone(), vs)
            })
            .collect();
        Self { intents, slots }
    }

    /// Words in first-appearance order with the slot cluster each belongs to.
    fn vocabulary(&self, extra: &[String]) -> (Vec<String>, Vec<Option<usize>>) {
        let mut words = Vec::new();
        let mut cluster = Vec::new();
        let mut seen = HashMap::new();
        let mut add = |w: &str, c: Option<usize>| {
            if !seen.contains_key(w) {
                seen.insert(w.to_string(), words.len());
                words.push(w.to_string());
                cluster.push(c);
            }
        };
        for (k, (_, values)) in self.slots.iter().enumerate() {
            for v in values {
                for w in v {
                    add(w, Some(k));
                }
            }
        }
        for (_, templates) in &self.intents {
            for t in templates {
                for p in t {
                    if let Piece::Word(w) = p {
                        add(w, None);
                    }
                }
            }
        }
        for w in extra {
            add(w, None);
        }
        (words, cluster)
    }

    fn sample(&self, rng: &mut Rng) -> Utterance {
        let (intent, templates) = &self.intents[rng.random_range(0..self.intents.len())];
        let template = &templates[rng.random_range(0..templates.len())];
        let mut tokens = Vec::new();
        let mut slots = Vec::new();
        for p in template {
            match p {
                Piece::Word(w) => {
                    tokens.push(w.clone());
                    slots.push(OUTSIDE.to_string());
                }
                Piece::Slot(name) => {
                    let values = &self.slots[name];
                    let value = &values[rng.random_range(0..values.len())];
                    for (i, w) in value.iter().enumerate() {
                        tokens.push(w.clone());
                        slots.push(format!("{}-{name}", if i == 0 { 'B' } else { 'I' }));
                    }
                }
            }
        }
        Utterance::new(tokens, slots, intent.clone())
            .expect("validated grammar emits aligned labels")
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let grammar = Grammar::new(spec);
    let mut text_rng = seeded(spec.seed, Stream::Synthetic);
    let mut vec_rng = seeded(spec.seed, Stream::Vectors);
    let mut noise_rng = seeded(spec.seed, Stream::Perturbation);

    let mut extra = spec.seed_words.clone();
    extra.extend([NUMBER_TOKEN, TIME_TOKEN, DURATION_TOKEN].map(String::from));
    let (mut words, mut clusters) = grammar.vocabulary(&extra);
    let taken: HashSet<String> = words.iter().cloned().collect();
    for w in distractors(spec.source_distractors, &taken, &mut text_rng) {
        words.push(w);
        clusters.push(None);
    }

    // redraw until the substitution is injective on this vocabulary
    let mut cipher = Cipher::draw(&mut text_rng);
    let mut cipher_words: Vec<String>;
    let mut attempts = 0;
    loop {
        cipher_words = words.iter().map(|w| cipher.apply(w)).collect();
        let unique: HashSet<&String> = cipher_words.iter().collect();
        if unique.len() == words.len() {
            break;
        }
        attempts += 1;
        if attempts == 100 {
            return Err(Error::Data(
                "could not draw an injective cipher for this vocabulary".into(),
            ));
        }
        cipher = Cipher::draw(&mut text_rng);
    }
    let taken: HashSet<String> = cipher_words.iter().cloned().collect();
    let target_extra = distractors(spec.target_distractors, &taken, &mut text_rng);

    let mut draw =
        |n: usize| -> Vec<Utterance> { (0..n).map(|_| grammar.sample(&mut text_rng)).collect() };
    let train = draw(spec.train);
    let valid = draw(spec.valid);
    let test = draw(spec.test);
    let cipher_test: Vec<Utterance> = test
        .iter()
        .map(|u| u.with_tokens(u.tokens().iter().map(|t| cipher.apply(t)).collect()))
        .collect();

    let d = spec.dim;
    let unit = 1.0 / (d as f64).sqrt();
    let centers = crate::tensor::random::normal_matrix(grammar.slots.len(), d, unit, &mut vec_rng);
    let cw = spec.cluster_weight;
    let mut a = crate::tensor::random::normal_matrix(words.len(), d, unit, &mut vec_rng);
    for (r, c) in clusters.iter().enumerate() {
        if let Some(k) = c {
            for (x, &m) in a.row_mut(r).iter_mut().zip(centers.row(*k)) {
                *x = cw * m + (1.0 - cw) * *x;
            }
        }
    }
    let g = planted_rotation(d, spec.rotation_count(), spec.misalignment, &mut vec_rng);
    let target_filler =
        crate::tensor::random::normal_matrix(target_extra.len(), d, unit, &mut vec_rng);

    let mut b = a.matmul(&g)?;
    if spec.noise > 0.0 {
        let n = crate::tensor::random::normal_matrix(b.rows(), d, spec.noise, &mut noise_rng);
        b = b.add(&n)?;
    }
    let mut b_data = b.into_vec();
    b_data.extend_from_slice(target_filler.data());
    let b = Matrix::from_vec(words.len() + target_extra.len(), d, b_data)?;

    let mut target_words = cipher_words.clone();
    target_words.extend(target_extra);
    let source_space = EmbeddingSpace::new(spec.source_language.clone(), words.clone(), a)?;
    let target_space = EmbeddingSpace::new(spec.target_language.clone(), target_words, b)?;
    let lexicon = Lexicon::new(words.into_iter().zip(cipher_words).collect());

    let src = |u: Vec<Utterance>| Corpus::new(spec.source_language.clone(), u);
    Ok(SyntheticBundle {
        spec: spec.clone(),
        source_train: src(train),
        source_valid: src(valid),
        source_test: src(test),
        target_test: Corpus::new(spec.target_language.clone(), cipher_test),
        source_space,
        target_space,
        gold_mapping: MappingMatrix::new(g)?,
        lexicon,
    })
}

/// On-disk description of a data bundle. Paths are relative to the
/// directory holding the bundle file unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    pub source_language: String,
    pub target_language: String,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub source_test: PathBuf,
    pub target_test: PathBuf,
    pub source_space: PathBuf,
    pub target_space: PathBuf,
    pub lexicon: PathBuf,
    pub seed_words: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_mapping: Option<PathBuf>,
}

pub const BUNDLE_FILE: &str = "bundle.toml";

impl BundleConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.train,
            &mut self.valid,
            &mut self.source_test,
            &mut self.target_test,
            &mut self.source_space,
            &mut self.target_space,
            &mut self.lexicon,
            &mut self.seed_words,
        ] {
            fix(p);
        }
        if let Some(p) = self.gold_mapping.as_mut() {
            fix(p);
        }
    }
}

pub fn load_seed_words(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Square matrix as JSON (`{"rows", "cols", "data"}`), shortest round-trip floats.
pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(m).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Matrix = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Matrix::from_vec(m.rows(), m.cols(), m.into_vec())
}

/// Writes the bundle under `dir` and returns the written paths in a fixed order.
pub fn write_bundle(bundle: &SyntheticBundle, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = BundleConfig {
        source_language: bundle.spec.source_language.clone(),
        target_language: bundle.spec.target_language.clone(),
        train: "source_train.conll".into(),
        valid: "source_valid.conll".into(),
        source_test: "source_test.conll".into(),
        target_test: "target_test.conll".into(),
        source_space: "source.vec".into(),
        target_space: "target.vec".into(),
        lexicon: "lexicon.tsv".into(),
        seed_words: "seed_words.txt".into(),
        gold_mapping: Some("gold_mapping.json".into()),
    };
    let mut written = Vec::new();
    let mut out = |name: &Path| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    save_corpus(bundle.source_train.utterances(), out(&cfg.train))?;
    save_corpus(bundle.source_valid.utterances(), out(&cfg.valid))?;
    save_corpus(bundle.source_test.utterances(), out(&cfg.source_test))?;
    save_corpus(bundle.target_test.utterances(), out(&cfg.target_test))?;
    write_embeddings(&bundle.source_space, out(&cfg.source_space))?;
    write_embeddings(&bundle.target_space, out(&cfg.target_space))?;
    write_matrix(
        bundle.gold_mapping.matrix(),
        out(cfg.gold_mapping.as_deref().expect("set above")),
    )?;

    let p = out(&cfg.lexicon);
    let lex: String = bundle
        .lexicon
        .entries()
        .iter()
        .map(|(s, t)| format!("{s}\t{t}\n"))
        .collect();
    fs::write(&p, lex).map_err(|e| Error::io(&p, e))?;
    let p = out(&cfg.seed_words);
    let seeds: String = bundle
        .spec
        .seed_words
        .iter()
        .map(|w| format!("{w}\n"))
        .collect();
    fs::write(&p, seeds).map_err(|e| Error::io(&p, e))?;

    let p = out(Path::new("synthetic.toml"));
    let spec = toml::to_string(&bundle.spec).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&p, spec).map_err(|e| Error::io(&p, e))?;
    let p = out(Path::new(BUNDLE_FILE));
    let text = toml::to_string(&cfg).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::procrustes::{map_space, orthogonality_error};
    use crate::corpus::utterance::LabelCatalog;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train: 40,
            valid: 10,
            test: 10,
            source_distractors: 20,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_bundle_inverts_exactly() {
        let b = generate_synthetic(&small()).unwrap();
        let back = map_space(&b.target_space, &b.gold_mapping.inverse()).unwrap();
        for (i, w) in b.source_space.words().iter().enumerate() {
            let t = &b.lexicon.translations(w)[0];
            let row = back.vector(t).unwrap();
            for (x, y) in row.iter().zip(b.source_space.vectors().row(i)) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
        assert!(orthogonality_error(b.gold_mapping.matrix()) <= 1e-12);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.source_train, b.source_train);
        assert_eq!(a.target_test, b.target_test);
        assert_eq!(a.target_space, b.target_space);
        let other = generate_synthetic(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.source_train, other.source_train);
    }

    #[test]
    fn cipher_preserves_labels() {
        let b = generate_synthetic(&small()).unwrap();
        for (s, t) in b
            .source_test
            .utterances()
            .iter()
            .zip(b.target_test.utterances())
        {
            assert_eq!(s.slots(), t.slots());
            assert_eq!(s.intent(), t.intent());
            assert_ne!(s.tokens(), t.tokens());
        }
        let cs = LabelCatalog::from_corpus(b.source_test.utterances());
        let ct = LabelCatalog::from_corpus(b.target_test.utterances());
        assert_eq!(cs, ct);
    }

    #[test]
    fn noise_only_changes_target_vectors() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&SyntheticSpec {
            noise: 0.05,
            ..small()
        })
        .unwrap();
        assert_eq!(a.source_train, b.source_train);
        assert_eq!(a.target_test, b.target_test);
        assert_eq!(a.source_space, b.source_space);
        assert_eq!(a.gold_mapping, b.gold_mapping);
        assert_ne!(a.target_space, b.target_space);
    }

    #[test]
    fn vocabularies_cover_corpora_and_seeds() {
        let b = generate_synthetic(&small()).unwrap();
        assert!(b.target_space.len() >= b.source_space.len());
        for u in b.source_train.utterances() {
            assert!(u
                .tokens()
                .iter()
                .all(|t| b.source_space.index_of(t).is_some()));
        }
        for u in b.target_test.utterances() {
            assert!(u
                .tokens()
                .iter()
                .all(|t| b.target_space.index_of(t).is_some()));
        }
        for w in DOMAIN_SEED_WORDS {
            assert!(b.source_space.index_of(w).is_some(), "{w}");
            assert_eq!(b.lexicon.translations(w).len(), 1);
        }
        // numbers and time words survive the cipher
        assert_eq!(b.lexicon.translations("7"), ["7"]);
        assert_eq!(b.lexicon.translations("am"), ["am"]);
        assert_eq!(b.lexicon.translations("30min"), ["30min"]);
    }

    #[test]
    fn invalid_specs_list_every_field() {
        let spec = SyntheticSpec {
            dim: 1,
            noise: -1.0,
            intents: vec![IntentSpec {
                name: "x".into(),
                templates: vec!["   ".into(), "go {nowhere}".into()],
            }],
            ..Default::default()
        };
        let Err(Error::Config(errs)) = spec.validate() else {
            panic!("expected config error")
        };
        let text = errs.join("\n");
        for needle in ["dim", "noise", "empty template", "nowhere"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
        let err = SyntheticSpec::from_toml("dimension = 3").unwrap_err();
        assert!(err.to_string().contains("dimension"));
    }

    #[test]
    fn toml_round_trip() {
        let spec = small();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(SyntheticSpec::from_toml(&text).unwrap(), spec);
        let partial = SyntheticSpec::from_toml("seed = 3\nnoise = 0.05\n").unwrap();
        assert_eq!(partial.intents, default_intents());
        assert_eq!(partial.noise, 0.05);
    }

    #[test]
    fn givens_product_is_orthogonal() {
        let g = planted_rotation(6, 40, 0.5, &mut seeded(1, Stream::Vectors));
        assert!(orthogonality_error(&g) <= 1e-12);
        assert_eq!(
            planted_rotation(4, 10, 0.0, &mut seeded(1, Stream::Vectors)),
            Matrix::identity(4)
        );
    }
}
