use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";
const INTENT_PREFIX: &str = "#intent=";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    tokens: Vec<String>,
    slots: Vec<String>,
    intent: String,
}

impl Utterance {
    pub fn new(tokens: Vec<String>, slots: Vec<String>, intent: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("utterance must have at least one token".into()));
        }
        if tokens.len() != slots.len() {
            return Err(Error::Data(format!(
                "utterance has {} tokens but {} slot labels",
                tokens.len(),
                slots.len()
            )));
        }
        Ok(Self {
            tokens,
            slots,
            intent: intent.into(),
        })
    }

    /// Convenience constructor for string literals.
    pub fn from_strs(tokens: &[&str], slots: &[&str], intent: &str) -> Result<Self> {
        Self::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            slots.iter().map(|s| s.to_string()).collect(),
            intent,
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub(crate) fn with_tokens(&self, tokens: Vec<String>) -> Self {
        debug_assert_eq!(tokens.len(), self.tokens.len());
        Self {
            tokens,
            slots: self.slots.clone(),
            intent: self.intent.clone(),
        }
    }
}

/// Splits `B-x` / `I-x` into prefix and type; `O` and unprefixed labels give `None`.
pub fn split_bio(label: &str) -> Option<(char, &str)> {
    let (p, ty) = label.split_once('-')?;
    match p {
        "B" => Some(('B', ty)),
        "I" => Some(('I', ty)),
        _ => None,
    }
}

/// Rewrites every `I-X` not preceded by `B-X` or `I-X` as `B-X`.
/// Returns the number of labels changed.
pub fn repair_bio(slots: &mut [String]) -> usize {
    let mut fixed = 0;
    let mut prev: Option<String> = None;
    for s in slots.iter_mut() {
        if let Some(('I', ty)) = split_bio(s) {
            let continues = prev
                .as_deref()
                .and_then(split_bio)
                .is_some_and(|(_, p)| p == ty);
            if !continues {
                *s = format!("B-{ty}");
                fixed += 1;
            }
        }
        prev = Some(s.clone());
    }
    fixed
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CatalogPolicy {
    /// Unseen labels are appended.
    Extend,
    /// Unseen labels are errors.
    Strict,
}

/// Ordered slot and intent label sets; `O` is always slot index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCatalog {
    slots: Vec<String>,
    intents: Vec<String>,
    #[serde(skip)]
    slot_index: HashMap<String, usize>,
    #[serde(skip)]
    intent_index: HashMap<String, usize>,
}

impl Default for LabelCatalog {
    fn default() -> Self {
        Self::new()
    }
}

impl LabelCatalog {
    pub fn new() -> Self {
        let mut c = Self {
            slots: Vec::new(),
            intents: Vec::new(),
            slot_index: HashMap::new(),
            intent_index: HashMap::new(),
        };
        c.add_slot(OUTSIDE);
        c
    }

    pub fn from_labels(slots: Vec<String>, intents: Vec<String>) -> Result<Self> {
        if slots.first().map(String::as_str) != Some(OUTSIDE) {
            return Err(Error::Data("slot labels must start with `O`".into()));
        }
        let mut c = Self {
            slots: Vec::new(),
            intents: Vec::new(),
            slot_index: HashMap::new(),
            intent_index: HashMap::new(),
        };
        for s in slots {
            if c.slot_index.contains_key(&s) {
                return Err(Error::Data(format!("duplicate slot label `{s}`")));
            }
            c.add_slot(&s);
        }
        for i in intents {
            if c.intent_index.contains_key(&i) {
                return Err(Error::Data(format!("duplicate intent label `{i}`")));
            }
            c.add_intent(&i);
        }
        Ok(c)
    }

    /// Builds the catalog from a corpus in first-appearance order.
    pub fn from_corpus(utts: &[Utterance]) -> Self {
        let mut c = Self::new();
        for u in utts {
            c.absorb(u, CatalogPolicy::Extend)
                .expect("extend never fails");
        }
        c
    }

    fn add_slot(&mut self, s: &str) -> usize {
        let i = self.slots.len();
        self.slots.push(s.to_string());
        self.slot_index.insert(s.to_string(), i);
        i
    }

    fn add_intent(&mut self, s: &str) -> usize {
        let i = self.intents.len();
        self.intents.push(s.to_string());
        self.intent_index.insert(s.to_string(), i);
        i
    }

    pub fn absorb(&mut self, u: &Utterance, policy: CatalogPolicy) -> Result<()> {
        for s in u.slots() {
            if !self.slot_index.contains_key(s) {
                match policy {
                    CatalogPolicy::Extend => {
                        self.add_slot(s);
                    }
                    CatalogPolicy::Strict => return Err(Error::UnknownLabel { label: s.clone() }),
                }
            }
        }
        if !self.intent_index.contains_key(u.intent()) {
            match policy {
                CatalogPolicy::Extend => {
                    self.add_intent(u.intent());
                }
                CatalogPolicy::Strict => {
                    return Err(Error::UnknownLabel {
                        label: u.intent().to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn slot_labels(&self) -> &[String] {
        &self.slots
    }

    pub fn intent_labels(&self) -> &[String] {
        &self.intents
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn num_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn slot_id(&self, label: &str) -> Result<usize> {
        self.slot_index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel {
                label: label.into(),
            })
    }

    pub fn intent_id(&self, label: &str) -> Result<usize> {
        self.intent_index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel {
                label: label.into(),
            })
    }

    pub fn slot_label(&self, id: usize) -> &str {
        &self.slots[id]
    }

    pub fn intent_label(&self, id: usize) -> &str {
        &self.intents[id]
    }

    /// Rebuilds the lookup tables after deserialization.
    pub fn reindexed(self) -> Result<Self> {
        Self::from_labels(self.slots, self.intents)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub utterances: usize,
    pub repaired_labels: usize,
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    catalog: Option<&LabelCatalog>,
) -> Result<(Vec<Utterance>, LabelCatalog, LoadStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path, catalog)
}

/// `catalog = Some(c)` validates against `c` strictly; `None` builds a fresh one.
pub fn read_corpus(
    reader: impl BufRead,
    origin: &Path,
    catalog: Option<&LabelCatalog>,
) -> Result<(Vec<Utterance>, LabelCatalog, LoadStats)> {
    let (mut cat, policy) = match catalog {
        Some(c) => (c.clone(), CatalogPolicy::Strict),
        None => (LabelCatalog::new(), CatalogPolicy::Extend),
    };
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut utts = Vec::new();
    let mut stats = LoadStats::default();
    let mut tokens = Vec::new();
    let mut slots = Vec::new();
    let mut intent: Option<String> = None;
    let mut start = 0;

    let mut flush = |tokens: &mut Vec<String>,
                     slots: &mut Vec<String>,
                     intent: &mut Option<String>,
                     start: usize,
                     line: usize|
     -> Result<()> {
        if tokens.is_empty() && intent.is_none() {
            return Ok(());
        }
        let Some(it) = intent.take() else {
            return Err(parse_err(
                line,
                format!("utterance starting at line {start} has no `#intent=` line"),
            ));
        };
        if tokens.is_empty() {
            return Err(parse_err(line, "utterance has no tokens".into()));
        }
        let mut s = std::mem::take(slots);
        let fixed = repair_bio(&mut s);
        if fixed > 0 {
            log::warn!(
                "{}:{start}: repaired {fixed} I- label(s) without a head",
                origin.display()
            );
            stats.repaired_labels += fixed;
        }
        let u = Utterance::new(std::mem::take(tokens), s, it)?;
        cat.absorb(&u, policy)
            .map_err(|e| parse_err(start, e.to_string()))?;
        utts.push(u);
        Ok(())
    };

    let mut last_line = 0;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut slots, &mut intent, start, n)?;
            continue;
        }
        if tokens.is_empty() && intent.is_none() {
            start = n;
        }
        if let Some(label) = line.strip_prefix(INTENT_PREFIX) {
            if intent.is_some() {
                return Err(parse_err(
                    n,
                    "second `#intent=` line in one utterance".into(),
                ));
            }
            let label = label.trim();
            if label.is_empty() {
                return Err(parse_err(n, "empty intent label".into()));
            }
            intent = Some(label.to_string());
            continue;
        }
        if intent.is_some() {
            return Err(parse_err(
                n,
                "token line after `#intent=`; missing blank separator".into(),
            ));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(
                n,
                format!("expected `token<TAB>slot`, found {} field(s)", fields.len()),
            ));
        }
        tokens.push(fields[0].to_string());
        slots.push(fields[1].to_string());
    }
    flush(&mut tokens, &mut slots, &mut intent, start, last_line + 1)?;
    drop(flush);
    stats.utterances = utts.len();
    Ok((utts, cat, stats))
}

pub fn save_corpus(utts: &[Utterance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(utts, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus(utts: &[Utterance], w: &mut impl Write) -> std::io::Result<()> {
    for (i, u) in utts.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for (t, s) in u.tokens().iter().zip(u.slots()) {
            writeln!(w, "{t}\t{s}")?;
        }
        writeln!(w, "{INTENT_PREFIX}{}", u.intent())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const FIXTURE: &str = "what\tO\nis\tO\nthe\tO\nweather\tO\nin\tO\nnew\tB-location\nyork\tI-location\n#intent=weather/find\n\nwake\tO\nme\tO\nat\tO\n7\tB-datetime\nam\tI-datetime\n#intent=alarm/set_alarm\n";

    fn read(s: &str) -> Result<(Vec<Utterance>, LabelCatalog, LoadStats)> {
        read_corpus(Cursor::new(s), Path::new("mem"), None)
    }

    #[test]
    fn two_utterance_fixture() {
        let (u, cat, stats) = read(FIXTURE).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].slots()[5], "B-location");
        assert_eq!(u[1].intent(), "alarm/set_alarm");
        assert_eq!(
            cat.slot_labels(),
            ["O", "B-location", "I-location", "B-datetime", "I-datetime"]
        );
        assert_eq!(cat.intent_labels(), ["weather/find", "alarm/set_alarm"]);
        assert_eq!(stats.repaired_labels, 0);
    }

    #[test]
    fn extra_blank_lines_do_not_matter() {
        let padded = format!("\n\n{}\n\n\n", FIXTURE.replace("\n\n", "\n\n\n"));
        assert_eq!(read(&padded).unwrap().0, read(FIXTURE).unwrap().0);
        let no_trailing = FIXTURE.trim_end();
        assert_eq!(read(no_trailing).unwrap().0, read(FIXTURE).unwrap().0);
    }

    #[test]
    fn orphan_inside_label_becomes_begin() {
        let (u, _, stats) = read("it\tO\nrains\tI-weather\n#intent=w\n").unwrap();
        assert_eq!(u[0].slots(), ["O", "B-weather"]);
        assert_eq!(stats.repaired_labels, 1);
        let mut s: Vec<String> = ["B-a", "I-b", "I-b", "O", "I-a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(repair_bio(&mut s), 2);
        assert_eq!(s, ["B-a", "B-b", "I-b", "O", "B-a"]);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = read("a\tO\nb O\n#intent=x\n").unwrap_err();
        assert!(err.to_string().starts_with("mem:2:"), "{err}");
        let err = read("a\tO\n\n").unwrap_err();
        assert!(err.to_string().contains("no `#intent=`"), "{err}");
        let err = read("a\tO\n#intent=x\nb\tO\n").unwrap_err();
        assert!(err.to_string().starts_with("mem:3:"), "{err}");
    }

    #[test]
    fn strict_catalog_rejects_unknown_labels() {
        let (_, cat, _) = read(FIXTURE).unwrap();
        let ok = read_corpus(Cursor::new(FIXTURE), Path::new("mem"), Some(&cat));
        assert!(ok.is_ok());
        let err = read_corpus(
            Cursor::new("x\tB-food\n#intent=weather/find\n"),
            Path::new("mem"),
            Some(&cat),
        )
        .unwrap_err();
        assert!(err.to_string().contains("B-food"));
        let err = read_corpus(
            Cursor::new("x\tO\n#intent=music\n"),
            Path::new("mem"),
            Some(&cat),
        )
        .unwrap_err();
        assert!(err.to_string().contains("music"));
    }

    #[test]
    fn save_then_load_round_trips() {
        let (u, cat, _) = read(FIXTURE).unwrap();
        let mut buf = Vec::new();
        write_corpus(&u, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), FIXTURE);
        let (back, cat2, _) = read_corpus(Cursor::new(buf), Path::new("mem"), None).unwrap();
        assert_eq!(back, u);
        assert_eq!(cat2, cat);
    }

    #[test]
    fn catalog_serde_keeps_indices() {
        let (_, cat, _) = read(FIXTURE).unwrap();
        let json = serde_json::to_string(&cat).unwrap();
        let back: LabelCatalog = serde_json::from_str::<LabelCatalog>(&json)
            .unwrap()
            .reindexed()
            .unwrap();
        assert_eq!(back, cat);
        assert_eq!(back.slot_id("I-datetime").unwrap(), 4);
        assert!(LabelCatalog::from_labels(vec!["B-x".into()], vec![]).is_err());
    }

    #[test]
    fn utterance_invariants() {
        assert!(Utterance::from_strs(&[], &[], "x").is_err());
        assert!(Utterance::from_strs(&["a"], &["O", "O"], "x").is_err());
    }
}
