//! Corpus ingestion: Reuters-21578 SGML files, plain-text directories and the
//! internal corpus JSON format.
//!
//! Every loader produces a [`Corpus`] whose documents carry contiguous ids
//! `1..=n` in deterministic order (file order, then in-file order).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no REUTERS element found")]
    MalformedSgml,
    #[error("undecodable byte 0x{byte:02x} at offset {offset}")]
    EncodingError { offset: usize, byte: u8 },
    #[error("labels file has no entry for `{0}`")]
    MissingLabel(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("requested {requested} documents but corpus holds {available}")]
    OutOfRange { requested: usize, available: usize },
    #[error("malformed labels line {line}: {reason}")]
    BadLabelsLine { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One document as read from a source corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    #[serde(rename = "id")]
    pub doc_id: u32,
    pub title: String,
    pub body: String,
    pub labels: BTreeSet<String>,
}

impl RawDocument {
    /// Title and body joined by a newline; the text every representation sees.
    pub fn text(&self) -> String {
        match (self.title.is_empty(), self.body.is_empty()) {
            (true, _) => self.body.clone(),
            (false, true) => self.title.clone(),
            (false, false) => format!("{}\n{}", self.title, self.body),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub documents: Vec<RawDocument>,
    pub label_universe: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct CorpusJson {
    name: String,
    documents: Vec<RawDocument>,
}

impl Corpus {
    /// Builds a corpus, renumbering ids to `1..=n` and recomputing the label
    /// universe.
    pub fn new(name: impl Into<String>, mut documents: Vec<RawDocument>) -> Self {
        for (i, doc) in documents.iter_mut().enumerate() {
            doc.doc_id = i as u32 + 1;
        }
        let label_universe = documents
            .iter()
            .flat_map(|d| d.labels.iter().cloned())
            .collect();
        Self {
            name: name.into(),
            documents,
            label_universe,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: u32) -> Option<&RawDocument> {
        let idx = (doc_id as usize).checked_sub(1)?;
        self.documents.get(idx)
    }

    pub fn to_json(&self) -> String {
        let repr = CorpusJson {
            name: self.name.clone(),
            documents: self.documents.clone(),
        };
        serde_json::to_string_pretty(&repr).expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let repr: CorpusJson = serde_json::from_str(text)?;
        if repr.documents.is_empty() {
            return Err(IngestError::EmptyCorpus);
        }
        Ok(Self::new(repr.name, repr.documents))
    }
}

/// Decodes raw bytes: valid UTF-8 passes through, anything else is read as
/// Latin-1. NUL bytes are rejected.
pub fn decode_bytes(bytes: &[u8]) -> Result<String, IngestError> {
    if let Some(offset) = bytes.iter().position(|&b| b == 0) {
        return Err(IngestError::EncodingError { offset, byte: 0 });
    }
    match std::str::from_utf8(bytes) {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => Ok(bytes.iter().map(|&b| b as char).collect()),
    }
}

/// Replaces SGML character entities. Unknown named entities are kept verbatim.
pub fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let decoded = tail.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let name = &tail[1..semi];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                _ if name.starts_with("#x") || name.starts_with("#X") => {
                    u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
                }
                _ if name.starts_with('#') => name[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, used)) => {
                out.push(c);
                rest = &tail[used..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn clean_text(raw: &str) -> String {
    decode_entities(raw)
        .chars()
        .filter(|c| !c.is_control() || matches!(c, '\n' | '\t' | '\r'))
        .collect::<String>()
        .trim()
        .to_owned()
}

#[derive(Debug, PartialEq)]
enum Token<'a> {
    Open(&'a str),
    Close(&'a str),
    Text(&'a str),
}

/// Minimal SGML tokenizer. A `<` not followed by a tag name is plain text.
fn tokenize_sgml(src: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let bytes = src.as_bytes();
    let mut pos = 0;
    let mut text_start = 0;
    while let Some(off) = src[pos..].find('<') {
        let lt = pos + off;
        let closing = bytes.get(lt + 1) == Some(&b'/');
        let name_start = lt + 1 + closing as usize;
        let name_len = bytes[name_start..]
            .iter()
            .take_while(|b| b.is_ascii_alphanumeric())
            .count();
        let gt = src[name_start..].find('>').map(|g| name_start + g);
        match gt {
            Some(gt) if name_len > 0 && bytes[name_start].is_ascii_alphabetic() => {
                if text_start < lt {
                    tokens.push(Token::Text(&src[text_start..lt]));
                }
                let name = &src[name_start..name_start + name_len];
                tokens.push(if closing {
                    Token::Close(name)
                } else {
                    Token::Open(name)
                });
                pos = gt + 1;
                text_start = pos;
            }
            _ => pos = lt + 1,
        }
    }
    if text_start < src.len() {
        tokens.push(Token::Text(&src[text_start..]));
    }
    tokens
}

#[derive(Default)]
struct PartialDoc {
    title: Option<String>,
    body: Option<String>,
    topics: BTreeSet<String>,
}

impl PartialDoc {
    fn finish(self, doc_id: u32) -> RawDocument {
        RawDocument {
            doc_id,
            title: self.title.as_deref().map(clean_text).unwrap_or_default(),
            body: self.body.as_deref().map(clean_text).unwrap_or_default(),
            labels: self.topics,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Capture {
    None,
    Title,
    Body,
    Topic,
}

/// Parses one Reuters-21578 `.sgm` file into documents in file order.
///
/// Only `TOPICS` categories become labels. Unknown tags are skipped and a
/// final `REUTERS` element without its closing tag is still emitted.
pub fn parse_reuters_sgml(bytes: &[u8]) -> Result<Vec<RawDocument>, IngestError> {
    let text = decode_bytes(bytes)?;
    let mut docs = Vec::new();
    let mut current: Option<PartialDoc> = None;
    let mut in_topics = false;
    let mut capture = Capture::None;
    let mut buf = String::new();

    for token in tokenize_sgml(&text) {
        match token {
            Token::Open(name) => match name.to_ascii_uppercase().as_str() {
                "REUTERS" => {
                    if let Some(doc) = current.take() {
                        docs.push(doc.finish(docs.len() as u32 + 1));
                    }
                    current = Some(PartialDoc::default());
                    in_topics = false;
                    capture = Capture::None;
                }
                _ if current.is_none() => {}
                "TOPICS" => in_topics = true,
                "TITLE" if capture == Capture::None => {
                    capture = Capture::Title;
                    buf.clear();
                }
                "BODY" if capture == Capture::None => {
                    capture = Capture::Body;
                    buf.clear();
                }
                "D" if in_topics && capture == Capture::None => {
                    capture = Capture::Topic;
                    buf.clear();
                }
                _ => {}
            },
            Token::Close(name) => {
                let Some(doc) = current.as_mut() else { continue };
                match (name.to_ascii_uppercase().as_str(), capture) {
                    ("REUTERS", _) => {
                        let doc = current.take().expect("checked above");
                        docs.push(doc.finish(docs.len() as u32 + 1));
                        capture = Capture::None;
                    }
                    ("TOPICS", _) => in_topics = false,
                    ("TITLE", Capture::Title) => {
                        doc.title = Some(std::mem::take(&mut buf));
                        capture = Capture::None;
                    }
                    ("BODY", Capture::Body) => {
                        doc.body = Some(std::mem::take(&mut buf));
                        capture = Capture::None;
                    }
                    ("D", Capture::Topic) => {
                        let topic = clean_text(&buf);
                        if !topic.is_empty() {
                            doc.topics.insert(topic);
                        }
                        buf.clear();
                        capture = Capture::None;
                    }
                    _ => {}
                }
            }
            Token::Text(t) => {
                if capture != Capture::None {
                    buf.push_str(t);
                }
            }
        }
    }
    if let Some(mut doc) = current.take() {
        // unterminated final document: keep whatever was being captured
        match capture {
            Capture::Title => doc.title = Some(buf),
            Capture::Body => doc.body = Some(buf),
            _ => {}
        }
        docs.push(doc.finish(docs.len() as u32 + 1));
    }
    if docs.is_empty() {
        return Err(IngestError::MalformedSgml);
    }
    Ok(docs)
}

/// Loads every `.sgm` file of a directory (lexicographic order) or a single
/// `.sgm` file. Files are parsed in parallel and merged in file order.
pub fn load_reuters(path: &Path) -> Result<Corpus, IngestError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("sgm")))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    let parsed: Vec<Vec<RawDocument>> = files
        .par_iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(io_err(f))?;
            parse_reuters_sgml(&bytes)
        })
        .collect::<Result<_, _>>()?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "reuters".into());
    Ok(Corpus::new(name, parsed.into_iter().flatten().collect()))
}

/// Reads a labels file: one `filename<TAB>label1,label2` entry per line.
pub fn read_labels_file(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, labels) = line.split_once('\t').ok_or_else(|| IngestError::BadLabelsLine {
            line: lineno + 1,
            reason: "expected `filename<TAB>labels`".into(),
        })?;
        let labels = labels
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        out.insert(name.trim().to_owned(), labels);
    }
    Ok(out)
}

/// Loads a directory of `.txt` files, one document per file, ordered by
/// file name. The title is the file stem.
pub fn load_plaintext_corpus(dir: &Path, labels: Option<&Path>) -> Result<Corpus, IngestError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    let label_map = labels.map(read_labels_file).transpose()?;

    let mut docs = Vec::with_capacity(files.len());
    for file in &files {
        let file_name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let labels = match &label_map {
            Some(map) => map
                .get(&file_name)
                .cloned()
                .ok_or_else(|| IngestError::MissingLabel(file_name.clone()))?,
            None => BTreeSet::new(),
        };
        let bytes = fs::read(file).map_err(io_err(file))?;
        docs.push(RawDocument {
            doc_id: 0,
            title: file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            body: decode_bytes(&bytes)?,
            labels,
        });
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    Ok(Corpus::new(name, docs))
}

pub fn load_corpus_json(path: &Path) -> Result<Corpus, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Corpus::from_json(&text)
}

/// The first `n` documents in corpus order, renumbered `1..=n`.
pub fn select_first_n(corpus: &Corpus, n: usize) -> Result<Corpus, IngestError> {
    if n == 0 || n > corpus.len() {
        return Err(IngestError::OutOfRange {
            requested: n,
            available: corpus.len(),
        });
    }
    Ok(Corpus::new(
        corpus.name.clone(),
        corpus.documents[..n].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"<!DOCTYPE lewis SYSTEM "lewis.dtd">
<REUTERS TOPICS="YES" LEWISSPLIT="TRAIN" CGISPLIT="TRAINING-SET" OLDID="5544" NEWID="1">
<DATE>26-FEB-1987 15:01:01.79</DATE>
<TOPICS><D>cocoa</D></TOPICS>
<PLACES><D>el-salvador</D><D>usa</D></PLACES>
<PEOPLE></PEOPLE>
<TEXT>&#2;
<TITLE>BAHIA COCOA REVIEW</TITLE>
<DATELINE>    SALVADOR, Feb 26 - </DATELINE><BODY>Showers continued throughout the week in
the Bahia cocoa zone &amp; alleviated the drought.
 Reuter
&#3;</BODY></TEXT>
</REUTERS>
<REUTERS TOPICS="YES" NEWID="2">
<TOPICS><D>grain</D><D>wheat</D></TOPICS>
<TEXT>
<TITLE>&lt;AMERICAN GRAIN&gt; SHIPMENTS</TITLE>
<BODY>Wheat shipments rose 5 pct &lt;AGRI> said.</BODY></TEXT>
</REUTERS>
<REUTERS TOPICS="NO" NEWID="3">
<TOPICS></TOPICS>
<TEXT TYPE="BRIEF">
<TITLE>BRIEF ITEM</TITLE>
</TEXT>
</REUTERS>
"#;

    #[test]
    fn parses_hand_fixture_field_by_field() {
        let docs = parse_reuters_sgml(FIXTURE.as_bytes()).unwrap();
        assert_eq!(docs.len(), 3);

        assert_eq!(docs[0].doc_id, 1);
        assert_eq!(docs[0].title, "BAHIA COCOA REVIEW");
        assert_eq!(
            docs[0].body,
            "Showers continued throughout the week in\nthe Bahia cocoa zone & alleviated the drought.\n Reuter"
        );
        assert_eq!(docs[0].labels, BTreeSet::from(["cocoa".to_string()]));

        assert_eq!(docs[1].title, "<AMERICAN GRAIN> SHIPMENTS");
        assert_eq!(docs[1].body, "Wheat shipments rose 5 pct <AGRI> said.");
        assert_eq!(
            docs[1].labels,
            BTreeSet::from(["grain".to_string(), "wheat".to_string()])
        );

        assert_eq!(docs[2].title, "BRIEF ITEM");
        assert_eq!(docs[2].body, "");
        assert!(docs[2].labels.is_empty());
    }

    #[test]
    fn tolerates_truncated_final_document() {
        let truncated = &FIXTURE[..FIXTURE.find("Wheat shipments").unwrap() + 14];
        let docs = parse_reuters_sgml(truncated.as_bytes()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].body, "Wheat shipment");
        assert_eq!(docs[1].title, "<AMERICAN GRAIN> SHIPMENTS");
    }

    #[test]
    fn empty_input_is_malformed() {
        assert!(matches!(parse_reuters_sgml(b""), Err(IngestError::MalformedSgml)));
        assert!(matches!(
            parse_reuters_sgml(b"<LEWIS>nothing</LEWIS>"),
            Err(IngestError::MalformedSgml)
        ));
    }

    #[test]
    fn nul_byte_is_an_encoding_error() {
        let err = parse_reuters_sgml(b"<REUTERS>\0</REUTERS>").unwrap_err();
        assert!(matches!(err, IngestError::EncodingError { offset: 9, byte: 0 }));
    }

    #[test]
    fn latin1_bytes_decode() {
        let docs = parse_reuters_sgml(b"<REUTERS><TEXT><TITLE>caf\xe9</TITLE></TEXT></REUTERS>").unwrap();
        assert_eq!(docs[0].title, "café");
    }

    #[test]
    fn thousand_element_file_yields_thousand_documents() {
        let mut sgml = String::new();
        for i in 0..1000 {
            sgml.push_str(&format!(
                "<REUTERS NEWID=\"{i}\"><TOPICS><D>t{}</D></TOPICS><TEXT><TITLE>doc {i}</TITLE><BODY>body {i}</BODY></TEXT></REUTERS>\n",
                i % 7
            ));
        }
        let docs = parse_reuters_sgml(sgml.as_bytes()).unwrap();
        assert_eq!(docs.len(), 1000);
        assert!(docs.iter().enumerate().all(|(i, d)| d.doc_id as usize == i + 1));
    }

    #[test]
    fn parsing_is_deterministic() {
        let a = parse_reuters_sgml(FIXTURE.as_bytes()).unwrap();
        let b = parse_reuters_sgml(FIXTURE.as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entities() {
        assert_eq!(decode_entities("a &amp; b &lt;c&gt; &#65;&#x42; &bogus; &"), "a & b <c> AB &bogus; &");
    }

    fn write_dir(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in files {
            fs::write(dir.path().join(name), body).unwrap();
        }
        dir
    }

    #[test]
    fn plaintext_directory_without_labels() {
        let dir = write_dir(&[("b.txt", "two"), ("a.txt", "one"), ("d.txt", "four"), ("c.txt", "three"), ("x.md", "skip")]);
        let corpus = load_plaintext_corpus(dir.path(), None).unwrap();
        assert_eq!(corpus.len(), 4);
        let ids: Vec<u32> = corpus.documents.iter().map(|d| d.doc_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
        assert_eq!(corpus.documents[0].body, "one");
        assert_eq!(corpus.documents[3].title, "d");
        assert!(corpus.label_universe.is_empty());
    }

    #[test]
    fn plaintext_missing_label() {
        let dir = write_dir(&[("a.txt", "1"), ("b.txt", "2"), ("c.txt", "3"), ("d.txt", "4")]);
        let labels = dir.path().join("labels.tsv");
        fs::write(&labels, "a.txt\tx\nb.txt\ty\nc.txt\tx,y\n").unwrap();
        let err = load_plaintext_corpus(dir.path(), Some(&labels)).unwrap_err();
        assert!(matches!(err, IngestError::MissingLabel(ref f) if f == "d.txt"));
    }

    #[test]
    fn plaintext_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_plaintext_corpus(dir.path(), None),
            Err(IngestError::EmptyCorpus)
        ));
    }

    #[test]
    fn synthetic_labeled_fixture_has_three_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = String::new();
        for g in 0..3 {
            for i in 0..4 {
                let name = format!("g{g}_{i}.txt");
                fs::write(dir.path().join(&name), format!("group {g} item {i}")).unwrap();
                labels.push_str(&format!("{name}\tclass{g}\n"));
            }
        }
        let lp = dir.path().join("labels.tsv");
        fs::write(&lp, labels).unwrap();
        let corpus = load_plaintext_corpus(dir.path(), Some(&lp)).unwrap();
        assert_eq!(corpus.len(), 12);
        assert_eq!(corpus.label_universe.len(), 3);
    }

    #[test]
    fn select_first_n_cases() {
        let docs = (0..4)
            .map(|i| RawDocument {
                doc_id: 0,
                title: format!("t{i}"),
                body: String::new(),
                labels: BTreeSet::new(),
            })
            .collect();
        let corpus = Corpus::new("c", docs);
        assert_eq!(select_first_n(&corpus, 4).unwrap(), corpus);
        let two = select_first_n(&corpus, 2).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.documents[1].title, "t1");
        assert!(matches!(select_first_n(&corpus, 5), Err(IngestError::OutOfRange { .. })));
        assert!(matches!(select_first_n(&corpus, 0), Err(IngestError::OutOfRange { .. })));
    }

    #[test]
    fn json_round_trip() {
        let corpus = Corpus::new("fixture", parse_reuters_sgml(FIXTURE.as_bytes()).unwrap());
        let back = Corpus::from_json(&corpus.to_json()).unwrap();
        assert_eq!(back, corpus);
        let v: serde_json::Value = serde_json::from_str(&corpus.to_json()).unwrap();
        assert_eq!(v["documents"][0]["id"], 1);
        assert_eq!(v["documents"][1]["labels"][1], "wheat");
    }
}
