use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::matrix::{norm, Matrix};

/// Vocabulary plus one dense vector per word, for a single language.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    language: String,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
}

impl EmbeddingSpace {
    pub fn new(language: impl Into<String>, words: Vec<String>, vectors: Matrix) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::Data(format!(
                "{} words but {} vectors",
                words.len(),
                vectors.rows()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!(
                    "duplicate word `{w}` in embedding space"
                )));
            }
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("embedding vectors".into()));
        }
        Ok(Self {
            language: language.into(),
            words,
            index,
            vectors,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vectors.row(i))
    }

    pub(crate) fn require(&self, word: &str) -> Result<usize> {
        self.index_of(word).ok_or_else(|| Error::UnknownWord {
            word: word.to_string(),
            language: self.language.clone(),
        })
    }

    /// FNV-1a over the bit patterns of every vector entry.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in self.vectors.data() {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn with_vectors(&self, vectors: Matrix) -> Result<Self> {
        Self::new(self.language.clone(), self.words.clone(), vectors)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    /// Words seen again after their first occurrence (later copies dropped).
    pub duplicates: Vec<String>,
    pub header: Option<(usize, usize)>,
}

/// Reads the fastText `.vec` text format: an optional `<count> <dim>` header,
/// then `word v1 ... vdim` per line.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    language: &str,
    max_vocab: Option<usize>,
) -> Result<(EmbeddingSpace, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), path, language, max_vocab)
}

pub fn read_embeddings(
    reader: impl BufRead,
    origin: &Path,
    language: &str,
    max_vocab: Option<usize>,
) -> Result<(EmbeddingSpace, LoadReport)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut report = LoadReport::default();
    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashMap::new();
    let mut dim: Option<usize> = None;
    let limit = max_vocab.unwrap_or(usize::MAX);

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line has a field");
        let rest: Vec<&str> = fields.collect();

        if lineno == 1 && rest.len() == 1 {
            if let (Ok(count), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                report.header = Some((count, d));
                dim = Some(d);
                continue;
            }
        }
        let d = *dim.get_or_insert(rest.len());
        if rest.len() != d {
            return Err(parse_err(
                lineno,
                format!("expected {d} values after the word, found {}", rest.len()),
            ));
        }
        if words.len() >= limit {
            break;
        }
        if seen.contains_key(word) {
            log::warn!(
                "{}:{lineno}: duplicate word `{word}` ignored",
                origin.display()
            );
            report.duplicates.push(word.to_string());
            continue;
        }
        for v in &rest {
            let x: f64 = v
                .parse()
                .map_err(|_| parse_err(lineno, format!("`{v}` is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value `{v}`")));
            }
            data.push(x);
        }
        seen.insert(word.to_string(), words.len());
        words.push(word.to_string());
    }
    let d = match dim {
        Some(d) if !words.is_empty() => d,
        _ => return Err(parse_err(0, "no embedding rows found".into())),
    };
    let vectors = Matrix::from_vec(words.len(), d, data)?;
    Ok((EmbeddingSpace::new(language, words, vectors)?, report))
}

/// Writes `.vec` text with a header; values carry 17 significant digits so a
/// re-parse is bit-exact.
pub fn write_embeddings(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings_to(space, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings_to(space: &EmbeddingSpace, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{} {}", space.len(), space.dim())?;
    for (i, word) in space.words.iter().enumerate() {
        write!(w, "{word}")?;
        for x in space.vectors.row(i) {
            write!(w, " {x:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct PreprocessReport {
    /// Words whose vectors vanished (zero input or zero after centering);
    /// they are kept as zero rows.
    pub zero_rows: Vec<String>,
    /// Center/normalize rounds performed after the initial normalization.
    pub rounds: usize,
}

const ZERO_NORM: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-12;
const MAX_ROUNDS: usize = 100;

/// Length-normalize, mean-center, length-normalize. Renormalizing after
/// centering shifts the column means again, so center/normalize repeats until
/// every column mean is below `1e-12` (or 100 rounds). Zero rows are excluded
/// from both steps.
pub fn preprocess(space: &EmbeddingSpace) -> Result<(EmbeddingSpace, PreprocessReport)> {
    if space.is_empty() {
        return Err(Error::Data(
            "cannot preprocess an empty embedding space".into(),
        ));
    }
    let mut v = space.vectors.clone();
    let n = v.rows();
    let d = v.cols();
    let mut live = vec![true; n];
    normalize_rows(&mut v, &mut live);

    let mut rounds = 0;
    loop {
        let count = live.iter().filter(|&&l| l).count();
        if count == 0 {
            break;
        }
        let mut mean = vec![0.0; d];
        for r in (0..n).filter(|&r| live[r]) {
            for (m, x) in mean.iter_mut().zip(v.row(r)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        // means are measured over all rows, zero rows included
        let spread = mean.iter().fold(0.0_f64, |a, m| a.max(m.abs())) * count as f64 / n as f64;
        if rounds > 0 && spread <= MEAN_TOL {
            break;
        }
        if rounds == MAX_ROUNDS {
            log::warn!("preprocess: column means still {spread:e} after {MAX_ROUNDS} rounds");
            break;
        }
        for r in (0..n).filter(|&r| live[r]) {
            for (x, m) in v.row_mut(r).iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        normalize_rows(&mut v, &mut live);
        rounds += 1;
    }

    let zero_rows: Vec<String> = (0..n)
        .filter(|&r| !live[r])
        .map(|r| space.words[r].clone())
        .collect();
    for w in &zero_rows {
        log::warn!("preprocess: `{w}` has a zero vector and cannot be normalized");
    }
    Ok((
        space.with_vectors(v)?,
        PreprocessReport { zero_rows, rounds },
    ))
}

fn normalize_rows(v: &mut Matrix, live: &mut [bool]) {
    for (r, alive) in live.iter_mut().enumerate() {
        if !*alive {
            continue;
        }
        let row = v.row_mut(r);
        let n = norm(row);
        if n <= ZERO_NORM {
            row.iter_mut().for_each(|x| *x = 0.0);
            *alive = false;
        } else {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str, max: Option<usize>) -> Result<(EmbeddingSpace, LoadReport)> {
        read_embeddings(Cursor::new(text), Path::new("fixture.vec"), "en", max)
    }

    #[test]
    fn parses_plain_rows() {
        let (s, _) = parse("a 1 2 3 4\nb 5 6 7 8\nc -1 -2 -3 -4.5\n", None).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.vector("c").unwrap(), &[-1.0, -2.0, -3.0, -4.5]);
        assert_eq!(s.words(), &["a", "b", "c"]);
    }

    #[test]
    fn duplicate_keeps_first() {
        let (s, r) = parse("a 1 2\nb 3 4\na 5 6\n", None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.vector("a").unwrap(), &[1.0, 2.0]);
        assert_eq!(r.duplicates, vec!["a".to_string()]);
    }

    #[test]
    fn header_and_truncation() {
        let mut text = String::from("2000 300\n");
        for i in 0..150 {
            text.push_str(&format!("w{i}"));
            for j in 0..300 {
                text.push_str(&format!(" {}", (i * j) as f64 * 0.001));
            }
            text.push('\n');
        }
        let (s, r) = parse(&text, Some(100)).unwrap();
        assert_eq!(s.vectors().shape(), (100, 300));
        assert_eq!(r.header, Some((2000, 300)));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse("a 1 2\nb 3\n", None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let err = parse("3 2\na 1 2\nb 3 4 5\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(parse("", None).is_err());
        assert!(parse("5 3\n", None).is_err());
    }

    #[test]
    fn export_round_trip_is_bit_exact() {
        let v =
            Matrix::from_rows(&[[0.1 + 0.2, -1.0 / 3.0], [1e-300, std::f64::consts::PI]]).unwrap();
        let s = EmbeddingSpace::new("en", vec!["x".into(), "y".into()], v).unwrap();
        let mut buf = Vec::new();
        write_embeddings_to(&s, &mut buf).unwrap();
        let (back, _) = parse(std::str::from_utf8(&buf).unwrap(), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn preprocess_two_rows() {
        let v = Matrix::from_rows(&[[3.0, 4.0], [0.0, 2.0]]).unwrap();
        let s = EmbeddingSpace::new("en", vec!["a".into(), "b".into()], v).unwrap();
        let (p, rep) = preprocess(&s).unwrap();
        // unit rows (0.6, 0.8), (0, 1); mean (0.3, 0.9); centered (0.3, -0.1), (-0.3, 0.1)
        let n = (0.1_f64).sqrt();
        let expect = [[0.3 / n, -0.1 / n], [-0.3 / n, 0.1 / n]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((p.vectors().get(r, c) - expect[r][c]).abs() < 1e-12);
            }
        }
        assert_eq!(rep.rounds, 1);
        assert!(rep.zero_rows.is_empty());
    }

    #[test]
    fn preprocess_single_row_is_flagged() {
        let s = EmbeddingSpace::new(
            "en",
            vec!["a".into()],
            Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
        )
        .unwrap();
        let (p, rep) = preprocess(&s).unwrap();
        assert_eq!(p.vectors().max_abs(), 0.0);
        assert_eq!(rep.zero_rows, vec!["a".to_string()]);
    }

    #[test]
    fn preprocess_invariants_and_idempotence() {
        use crate::tensor::random::{normal_matrix, seeded, Stream};
        let mut rng = seeded(12, Stream::Synthetic);
        let mut v = normal_matrix(40, 6, 1.0, &mut rng);
        // shift so centering actually matters
        for r in 0..40 {
            v.row_mut(r)[0] += 2.0;
        }
        let words = (0..40).map(|i| format!("w{i}")).collect();
        let s = EmbeddingSpace::new("en", words, v).unwrap();
        let (p, _) = preprocess(&s).unwrap();
        for r in 0..40 {
            assert!((norm(p.vectors().row(r)) - 1.0).abs() <= 1e-9);
        }
        for c in 0..6 {
            let m: f64 = p.vectors().column(c).iter().sum::<f64>() / 40.0;
            assert!(m.abs() <= 1e-9, "column {c} mean {m}");
        }
        let (pp, _) = preprocess(&p).unwrap();
        assert!(pp.vectors().sub(p.vectors()).unwrap().max_abs() <= 1e-9);
        assert_eq!(pp.words(), p.words());
    }

    #[test]
    fn rejects_duplicate_words() {
        let v = Matrix::zeros(2, 2);
        assert!(EmbeddingSpace::new("en", vec!["a".into(), "a".into()], v).is_err());
    }
}
