use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;

use crate::alignment::space::EmbeddingSpace;
use crate::error::{Error, Result};

/// English words used to anchor refinement for the weather, alarm and
/// reminder domains.
pub const DOMAIN_SEED_WORDS: [&str; 11] = [
    "weather",
    "forecast",
    "temperature",
    "rain",
    "hot",
    "cold",
    "remind",
    "forget",
    "alarm",
    "cancel",
    "tomorrow",
];

/// Sparse binary alignment between the rows of two spaces. A pair `(a, b)`
/// means `D[a][b] = 1`, with `a` on the mapped side and `b` on the fixed side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SeedDictionary {
    pairs: Vec<(String, String)>,
}

impl SeedDictionary {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("seed dictionary must not be empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(p) {
                return Err(Error::Data(format!(
                    "duplicate seed pair ({}, {})",
                    p.0, p.1
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Swaps the two sides of every pair.
    pub fn inverted(&self) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|(a, b)| (b.clone(), a.clone()))
                .collect(),
        }
    }

    /// Row indices of every pair; fails on the first word missing from its space.
    pub fn resolve(&self, x: &EmbeddingSpace, z: &EmbeddingSpace) -> Result<Vec<(usize, usize)>> {
        self.pairs
            .iter()
            .map(|(a, b)| Ok((x.require(a)?, z.require(b)?)))
            .collect()
    }
}

/// Bilingual word list, one `source<TAB>target` pair per line.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    entries: Vec<(String, String)>,
}

impl Lexicon {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn translations(&self, word: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(s, _)| s == word)
            .map(|(_, t)| t.as_str())
            .collect()
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        // MUSE dictionaries use a tab, some copies a single space
        let (s, t) = line
            .split_once('\t')
            .or_else(|| line.split_once(' '))
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `source<TAB>target`".into(),
            })?;
        entries.push((s.trim().to_string(), t.trim().to_string()));
    }
    Ok(Lexicon { entries })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DictionaryReport {
    pub requested: usize,
    pub found: usize,
    /// Requested words with no lexicon entry; excluded from the dictionary.
    pub missing: Vec<String>,
    /// Words with several translations: `(word, kept, ignored...)`.
    pub ambiguous: Vec<(String, String, Vec<String>)>,
}

impl DictionaryReport {
    pub fn coverage(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.found as f64 / self.requested as f64
        }
    }
}

/// Pairs each requested source word with its first lexicon translation.
pub fn build_seed_dictionary(
    source_words: &[String],
    lexicon: &Lexicon,
) -> Result<(SeedDictionary, DictionaryReport)> {
    if source_words.is_empty() {
        return Err(Error::Data("no seed words requested".into()));
    }
    let mut first: HashMap<&str, Vec<&str>> = HashMap::new();
    for (s, t) in &lexicon.entries {
        first.entry(s.as_str()).or_default().push(t.as_str());
    }
    let mut report = DictionaryReport {
        requested: source_words.len(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for w in source_words {
        if !seen.insert(w.as_str()) {
            continue;
        }
        match first.get(w.as_str()) {
            None => report.missing.push(w.clone()),
            Some(ts) => {
                let kept = ts[0].to_string();
                if ts.len() > 1 {
                    let ignored: Vec<String> = ts[1..].iter().map(|t| t.to_string()).collect();
                    log::info!("seed `{w}` has {} translations; keeping `{kept}`", ts.len());
                    report.ambiguous.push((w.clone(), kept.clone(), ignored));
                }
                pairs.push((w.clone(), kept));
            }
        }
    }
    report.found = pairs.len();
    for m in &report.missing {
        log::warn!("seed word `{m}` not in lexicon; skipped");
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "none of the {} seed words has a lexicon entry",
            source_words.len()
        )));
    }
    Ok((SeedDictionary::new(pairs)?, report))
}
