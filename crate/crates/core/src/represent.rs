//! Bag-of-words and character n-gram representations with TF-IDF weighting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Corpus, RawDocument};

#[derive(Debug, Error)]
pub enum RepresentError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("n-gram length {0} outside 2..=5")]
    InvalidNgram(usize),
    #[error("text has {len} characters, fewer than n = {n}")]
    TextTooShort { len: usize, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tokenizer config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("lemma map line {0}: expected `surface<TAB>lemma`")]
    BadLemmaLine(usize),
}

/// Term multiset in first-appearance order.
pub type TermCounts = IndexMap<String, usize>;

const DEFAULT_STOP_WORDS: &str = include_str!("stop_words_en.txt");

#[derive(Debug, Clone, Default)]
pub struct TokenizerConfig {
    pub stop_words: HashSet<String>,
    pub lemmas: HashMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct TokenizerConfigFile {
    stop_words: Option<PathBuf>,
    lemma_map: Option<PathBuf>,
}

impl TokenizerConfig {
    /// Built-in English stop-word list, no lemma map.
    pub fn english() -> Self {
        Self {
            stop_words: DEFAULT_STOP_WORDS
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect(),
            lemmas: HashMap::new(),
        }
    }

    pub fn with_stop_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            stop_words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
            lemmas: HashMap::new(),
        }
    }

    /// Reads a JSON config `{"stop_words": path?, "lemma_map": path?}`.
    /// Relative paths resolve against the config file's directory; a missing
    /// `stop_words` entry keeps the built-in list.
    pub fn from_file(path: &Path) -> Result<Self, RepresentError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| RepresentError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let file: TokenizerConfigFile = serde_json::from_str(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = match file.stop_words {
            Some(p) => Self::with_stop_words(
                read(&base.join(p))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty()),
            ),
            None => Self::english(),
        };
        if let Some(p) = file.lemma_map {
            config.lemmas = parse_lemma_map(&read(&base.join(p))?)?;
        }
        Ok(config)
    }
}

/// Parses `surface<TAB>lemma` lines; blank lines and `#` comments are skipped.
pub fn parse_lemma_map(text: &str) -> Result<HashMap<String, String>, RepresentError> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (surface, lemma) = line
            .split_once('\t')
            .ok_or(RepresentError::BadLemmaLine(i + 1))?;
        map.insert(surface.trim().to_lowercase(), lemma.trim().to_lowercase());
    }
    Ok(map)
}

/// Lowercased alphabetic tokens of title + body with stop-words removed and
/// the lemma map applied.
pub fn tokenize_bag_of_words(doc: &RawDocument, config: &TokenizerConfig) -> TermCounts {
    tokenize_text(&doc.text(), config)
}

pub fn tokenize_text(text: &str, config: &TokenizerConfig) -> TermCounts {
    let mut counts = TermCounts::new();
    for token in text.split(|c: char| !c.is_alphabetic()).filter(|t| !t.is_empty()) {
        let token = token.to_lowercase();
        if config.stop_words.contains(&token) {
            continue;
        }
        let term = config.lemmas.get(&token).cloned().unwrap_or(token);
        *counts.entry(term).or_insert(0) += 1;
    }
    counts
}

/// Lowercases and collapses whitespace runs to a single space, trimming both
/// ends. Punctuation is kept.
pub fn normalize_for_ngrams(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Sliding character windows of length `n` over the normalized text.
pub fn char_ngrams(text: &str, n: usize) -> Result<TermCounts, RepresentError> {
    if !(2..=5).contains(&n) {
        return Err(RepresentError::InvalidNgram(n));
    }
    let chars: Vec<char> = normalize_for_ngrams(text).chars().collect();
    if chars.len() < n {
        return Err(RepresentError::TextTooShort { len: chars.len(), n });
    }
    let mut counts = TermCounts::new();
    for window in chars.windows(n) {
        *counts.entry(window.iter().collect()).or_insert(0) += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    Bag,
    Ngram { n: usize },
}

impl Representation {
    pub fn label(&self) -> String {
        match self {
            Representation::Bag => "bag".into(),
            Representation::Ngram { n } => format!("ngram{n}"),
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = String;

    /// `bag` or `ngram:N` (also `ngramN`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "bag" || s == "bag-of-words" {
            return Ok(Representation::Bag);
        }
        let n = s
            .strip_prefix("ngram")
            .map(|r| r.trim_start_matches([':', '-', '=']))
            .and_then(|r| r.parse::<usize>().ok())
            .ok_or_else(|| format!("unknown representation `{s}` (expected bag or ngram:N)"))?;
        if !(2..=5).contains(&n) {
            return Err(format!("n-gram length {n} outside 2..=5"));
        }
        Ok(Representation::Ngram { n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    doc_frequency: Vec<usize>,
}

impl Vocabulary {
    pub fn from_parts(terms: Vec<String>, doc_frequency: Vec<usize>) -> Self {
        assert_eq!(terms.len(), doc_frequency.len());
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            terms,
            index,
            doc_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, idx: usize) -> &str {
        &self.terms[idx]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Number of documents containing the term.
    pub fn doc_frequency(&self, idx: usize) -> usize {
        self.doc_frequency[idx]
    }
}

/// Sparse weights of one document, sorted by term index; zeros are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentVector {
    pub doc_id: u32,
    pub entries: Vec<(usize, f64)>,
}

impl DocumentVector {
    pub fn get(&self, term: usize) -> f64 {
        self.entries
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn densify(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(t, w) in &self.entries {
            out[t] = w;
        }
        out
    }
}

/// Terms × documents; one sparse column per document in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDocumentMatrix {
    pub vocabulary: Vocabulary,
    pub columns: Vec<DocumentVector>,
    /// Documents shorter than the n-gram length (empty columns).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub too_short: Vec<u32>,
}

impl TermDocumentMatrix {
    pub fn n_docs(&self) -> usize {
        self.columns.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn column(&self, doc_id: u32) -> Option<&DocumentVector> {
        self.columns.iter().find(|c| c.doc_id == doc_id)
    }

    /// Dense `n_terms × n_docs` copy, row-major by term.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.n_docs()]; self.n_terms()];
        for (j, col) in self.columns.iter().enumerate() {
            for &(t, w) in &col.entries {
                rows[t][j] = w;
            }
        }
        rows
    }

    /// Rebuilds a matrix from explicit counts. Used by tests and fixtures.
    pub fn from_dense(terms: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let n_docs = rows.first().map_or(0, Vec::len);
        let doc_frequency = rows
            .iter()
            .map(|r| r.iter().filter(|&&v| v != 0.0).count())
            .collect();
        let columns = (0..n_docs)
            .map(|j| DocumentVector {
                doc_id: j as u32 + 1,
                entries: rows
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r[j] != 0.0)
                    .map(|(t, r)| (t, r[j]))
                    .collect(),
            })
            .collect();
        Self {
            vocabulary: Vocabulary::from_parts(terms, doc_frequency),
            columns,
            too_short: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut m: Self = serde_json::from_str(text)?;
        m.vocabulary = Vocabulary::from_parts(
            std::mem::take(&mut m.vocabulary.terms),
            std::mem::take(&mut m.vocabulary.doc_frequency),
        );
        Ok(m)
    }
}

/// Builds the raw term-frequency matrix. Per-document counting runs in
/// parallel; the vocabulary merge is sequential so that term order is the
/// first appearance in corpus order.
pub fn build_matrix(
    corpus: &Corpus,
    mode: Representation,
    config: &TokenizerConfig,
) -> Result<TermDocumentMatrix, RepresentError> {
    if corpus.is_empty() {
        return Err(RepresentError::EmptyCorpus);
    }
    let per_doc: Vec<(u32, Option<TermCounts>)> = corpus
        .documents
        .par_iter()
        .map(|doc| {
            let counts = match mode {
                Representation::Bag => Ok(tokenize_bag_of_words(doc, config)),
                Representation::Ngram { n } => char_ngrams(&doc.text(), n),
            };
            match counts {
                Ok(c) => Ok((doc.doc_id, Some(c))),
                Err(RepresentError::TextTooShort { .. }) => Ok((doc.doc_id, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut terms: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut doc_frequency: Vec<usize> = Vec::new();
    let mut columns = Vec::with_capacity(per_doc.len());
    let mut too_short = Vec::new();
    for (doc_id, counts) in per_doc {
        let Some(counts) = counts else {
            too_short.push(doc_id);
            columns.push(DocumentVector {
                doc_id,
                entries: Vec::new(),
            });
            continue;
        };
        let mut entries = Vec::with_capacity(counts.len());
        for (term, count) in counts {
            let idx = *index.entry(term).or_insert_with_key(|t| {
                terms.push(t.clone());
                doc_frequency.push(0);
                terms.len() - 1
            });
            doc_frequency[idx] += 1;
            entries.push((idx, count as f64));
        }
        entries.sort_unstable_by_key(|&(t, _)| t);
        columns.push(DocumentVector { doc_id, entries });
    }
    Ok(TermDocumentMatrix {
        vocabulary: Vocabulary {
            terms,
            index,
            doc_frequency,
        },
        columns,
        too_short,
    })
}

/// Replaces every entry by `TF · ln(N / n_i)`. Terms present in every
/// document weigh zero and are dropped from the sparse columns.
pub fn apply_tfidf(matrix: &TermDocumentMatrix) -> TermDocumentMatrix {
    let n = matrix.n_docs() as f64;
    let idf: Vec<f64> = (0..matrix.n_terms())
        .map(|t| match matrix.vocabulary.doc_frequency(t) {
            0 => 0.0,
            df => (n / df as f64).ln(),
        })
        .collect();
    let columns = matrix
        .columns
        .iter()
        .map(|col| DocumentVector {
            doc_id: col.doc_id,
            entries: col
                .entries
                .iter()
                .map(|&(t, tf)| (t, tf * idf[t]))
                .filter(|&(_, w)| w > 0.0)
                .collect(),
        })
        .collect();
    TermDocumentMatrix {
        vocabulary: matrix.vocabulary.clone(),
        columns,
        too_short: matrix.too_short.clone(),
    }
}

/// Term counts for a single document, as a sorted map for display.
pub fn named_weights(matrix: &TermDocumentMatrix, doc_id: u32) -> Option<BTreeMap<String, f64>> {
    let col = matrix.column(doc_id)?;
    Some(
        col.entries
            .iter()
            .map(|&(t, w)| (matrix.vocabulary.term(t).to_owned(), w))
            .collect(),
    )
}
