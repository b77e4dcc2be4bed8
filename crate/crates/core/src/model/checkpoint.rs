//! Trained-model container and its text checkpoint format.
//!
//! ```text
//! xlnlu-checkpoint 1
//! config {"embedding_dim":…}
//! catalog {"slots":[…],"intents":[…]}
//! language en
//! delex null
//! tensors 13
//! tensor fwd.wx 10 64
//! <rows*cols floats, one row per line>
//! …
//! ```
//! Floats are written in Rust's shortest round-trip form, so loading
//! reproduces every bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::delex::DelexRules;
use crate::corpus::utterance::LabelCatalog;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{shapes, ModelParams};
use crate::tensor::matrix::Matrix;

const MAGIC: &str = "xlnlu-checkpoint 1";

/// Parameters plus everything needed to run them on new text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub catalog: LabelCatalog,
    /// Language of the embedding space the model was trained in.
    pub language: String,
    /// Rules applied to every utterance before lookup, if training used them.
    pub delex: Option<DelexRules>,
}

impl TrainedModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        s.push_str(&format!("config {}\n", json(&self.config)));
        s.push_str(&format!("catalog {}\n", json(&self.catalog)));
        s.push_str(&format!("language {}\n", self.language));
        s.push_str(&format!("delex {}\n", json(&self.delex)));
        let entries = self.params.entries();
        s.push_str(&format!("tensors {}\n", entries.len()));
        for (name, m) in entries {
            s.push_str(&format!("tensor {name} {} {}\n", m.rows(), m.cols()));
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
            origin,
        };
        let (n, magic) = r.next("header")?;
        if magic != MAGIC {
            return Err(r.err(n, format!("not a checkpoint (expected `{MAGIC}`)")));
        }
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let (n, c) = r.field("config")?;
        let config: ModelConfig = serde_json::from_str(&c).map_err(|e| err(n, e.to_string()))?;
        config.validate()?;
        let (n, c) = r.field("catalog")?;
        let catalog: LabelCatalog = serde_json::from_str::<LabelCatalog>(&c)
            .map_err(|e| err(n, e.to_string()))?
            .reindexed()?;
        let (_, language) = r.field("language")?;
        let (n, d) = r.field("delex")?;
        let delex: Option<DelexRules> =
            serde_json::from_str(&d).map_err(|e| err(n, e.to_string()))?;
        let (n, count) = r.field("tensors")?;
        let expected = shapes(&config);
        let layout = expected.entries();
        if count.trim().parse::<usize>().ok() != Some(layout.len()) {
            return Err(err(
                n,
                format!("expected {} tensors, header says {count}", layout.len()),
            ));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (name, &(rows, cols)) in layout {
            let (n, head) = r.field("tensor")?;
            let parts: Vec<&str> = head.split(' ').collect();
            if parts != [name, &rows.to_string(), &cols.to_string()] {
                return Err(err(
                    n,
                    format!("expected tensor `{name} {rows} {cols}`, found `{head}`"),
                ));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, l) = r.next("tensor row")?;
                let row: std::result::Result<Vec<f64>, _> =
                    l.split(' ').map(str::parse::<f64>).collect();
                let row = row.map_err(|e| err(n, format!("bad float in `{name}`: {e}")))?;
                if row.len() != cols {
                    return Err(err(
                        n,
                        format!("`{name}` row has {} values, expected {cols}", row.len()),
                    ));
                }
                data.extend(row);
            }
            values.push(Matrix::from_vec(rows, cols, data)?);
        }
        let mut it = values.into_iter();
        let params = expected.map(|_, _| it.next().expect("one per tensor"));
        params.check(&config)?;
        if config.num_slots != catalog.num_slots() || config.num_intents != catalog.num_intents() {
            return Err(Error::Data(
                "checkpoint catalog does not match its config".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            catalog,
            language,
            delex,
        })
    }
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.origin.to_path_buf(),
            line,
            message,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l)),
            None => Err(self.err(0, format!("unexpected end of file, expected {what}"))),
        }
    }

    /// A `key value` line; returns the value.
    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (n, l) = self.next(key)?;
        match l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok((n, rest.to_string())),
            None => Err(self.err(n, format!("expected `{key} …`"))),
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("header types always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::HeadKind;
    use crate::tensor::random::{normal_matrix, seeded, Stream};

    fn model(head: HeadKind) -> TrainedModel {
        let catalog = LabelCatalog::from_labels(
            vec!["O".into(), "B-x".into(), "I-x".into()],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let config = ModelConfig {
            hidden: 3,
            latent: 2,
            head,
            noise: true,
            ..ModelConfig::new(4, 3, 2)
        };
        let mut rng = seeded(1, Stream::Init);
        let mut params = ModelParams::init(&config, &mut rng).unwrap();
        // awkward magnitudes to exercise the float format
        for m in params.values_mut() {
            let n = normal_matrix(m.rows(), m.cols(), 1.0, &mut rng);
            *m = n.map(|x| x * 1e-7 + x.powi(3) * 1e5);
        }
        TrainedModel {
            config,
            params,
            catalog,
            language: "en".into(),
            delex: Some(DelexRules::default()),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for head in [HeadKind::Lvm, HeadKind::Mlp, HeadKind::Crf] {
            let m = model(head);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.ckpt");
            m.save(&p).unwrap();
            let back = TrainedModel::load(&p).unwrap();
            for (a, b) in m.params.values().iter().zip(back.params.values()) {
                let bits = |x: &Matrix| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(back, m);
            assert_eq!(back.to_text(), m.to_text());
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let text = model(HeadKind::Lvm).to_text();
        let bad_magic = text.replacen("xlnlu-checkpoint 1", "nope", 1);
        assert!(TrainedModel::from_text(&bad_magic, Path::new("m")).is_err());
        let truncated: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(TrainedModel::from_text(&truncated, Path::new("m")).is_err());
        let renamed = text.replacen("tensor fwd.wh", "tensor fwd.xx", 1);
        let e = TrainedModel::from_text(&renamed, Path::new("m")).unwrap_err();
        assert!(e.to_string().contains("fwd.wh"), "{e}");
    }
}
