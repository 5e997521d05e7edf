//! Plain-text ingestion, contraction expansion and paragraph/sentence
//! segmentation.
//!
//! Spans are half-open byte ranges into [`Document::normalized_text`] and
//! always fall on `char` boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{fold, word_spans, Span};

const BUNDLED_CONTRACTIONS: &str = include_str!("../data/contractions.csv");

/// Words that end with a period without ending the sentence.
const PROTECTED_ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "fig", "approx",
    "dept", "inc", "ltd", "co", "mt", "cf", "al", "viz",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetLabel {
    Training,
    Testing,
    Questions,
}

impl SetLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SetLabel::Training => "training",
            SetLabel::Testing => "testing",
            SetLabel::Questions => "questions",
        }
    }
}

impl fmt::Display for SetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(SetLabel::Training),
            "testing" => Ok(SetLabel::Testing),
            "questions" => Ok(SetLabel::Questions),
            other => Err(Error::Config(format!("unknown set label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub set_label: SetLabel,
    pub source_path: String,
    pub raw_text: String,
    pub normalized_text: String,
    pub paragraphs: Vec<Span>,
    pub sentences: Vec<Span>,
}

impl Document {
    /// Builds a document from text already in memory.
    pub fn from_text(
        id: impl Into<String>,
        set_label: SetLabel,
        raw_text: impl Into<String>,
        table: &ContractionTable,
    ) -> Self {
        let raw_text = raw_text.into();
        let normalized_text = normalize_text(&raw_text, table);
        let (paragraphs, sentences) = segment(&normalized_text);
        Document {
            id: id.into(),
            set_label,
            source_path: String::new(),
            raw_text,
            normalized_text,
            paragraphs,
            sentences,
        }
    }

    pub fn sentence_text(&self, index: usize) -> &str {
        &self.normalized_text[self.sentences[index].clone()]
    }

    /// Index of the paragraph holding sentence `index`.
    pub fn paragraph_of(&self, index: usize) -> usize {
        let span = &self.sentences[index];
        self.paragraphs
            .iter()
            .position(|p| p.start <= span.start && span.end <= p.end)
            .expect("sentence outside every paragraph")
    }

    /// Number of words in the normalised text.
    pub fn token_count(&self) -> usize {
        word_spans(&self.normalized_text).len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub set_label: SetLabel,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(set_label: SetLabel, mut documents: Vec<Document>) -> Result<Self> {
        documents.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in documents.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id.clone()));
            }
        }
        if let Some(doc) = documents.iter().find(|d| d.set_label != set_label) {
            return Err(Error::Validation(format!(
                "document `{}` is labelled {} in a {} corpus",
                doc.id, doc.set_label, set_label
            )));
        }
        Ok(Corpus {
            set_label,
            documents,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Document::token_count).sum()
    }
}

/// Contraction → longhand replacements, looked up case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionTable {
    entries: BTreeMap<String, String>,
}

impl ContractionTable {
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_CONTRACTIONS.as_bytes()).expect("bundled contraction table is valid")
    }

    pub fn empty() -> Self {
        ContractionTable {
            entries: BTreeMap::new(),
        }
    }

    /// Reads a two-column CSV with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::parse(
                    "contraction table",
                    format!("expected 2 columns, found {}", record.len()),
                ));
            }
            pairs.push((record[0].to_string(), record[1].to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            let key = fold(k.as_ref());
            if key.is_empty() {
                return Err(Error::Validation("empty contraction key".into()));
            }
            if entries.insert(key.clone(), v.into()).is_some() {
                return Err(Error::Validation(format!("duplicate contraction `{key}`")));
            }
        }
        let table = ContractionTable { entries };
        table.check_closed()?;
        Ok(table)
    }

    fn check_closed(&self) -> Result<()> {
        for (key, longhand) in &self.entries {
            for span in word_spans(longhand) {
                let word = fold(&longhand[span]);
                if self.entries.contains_key(&word) {
                    return Err(Error::Validation(format!(
                        "replacement for `{key}` contains contraction `{word}`"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, word: &str) -> Option<&str> {
        self.entries.get(&fold(word)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn match_case(surface: &str, longhand: &str) -> String {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    let all_upper = letters.len() > 1 && letters.iter().all(|c| c.is_uppercase());
    if all_upper {
        return longhand.to_uppercase();
    }
    match (surface.chars().next(), longhand.chars().next()) {
        (Some(s), Some(l)) if s.is_uppercase() => {
            let mut out: String = l.to_uppercase().collect();
            out.push_str(&longhand[l.len_utf8()..]);
            out
        }
        _ => longhand.to_string(),
    }
}

/// Expands every contraction listed in `table`, keeping the surface case
/// pattern; all other bytes are copied unchanged.
pub fn normalize_text(raw: &str, table: &ContractionTable) -> String {
    if table.is_empty() {
        return raw.to_string();
    }
    let mut out = String::with_capacity(raw.len() + raw.len() / 16);
    let mut cursor = 0;
    for span in word_spans(raw) {
        let word = &raw[span.clone()];
        if let Some(longhand) = table.lookup(word) {
            out.push_str(&raw[cursor..span.start]);
            out.push_str(&match_case(word, longhand));
            cursor = span.end;
        }
    }
    out.push_str(&raw[cursor..]);
    out
}

/// Splits text into paragraph and sentence spans.
///
/// Paragraphs are separated by blank lines. A sentence ends at `.`, `?` or
/// `!` (plus trailing closing quotes/brackets) when followed by whitespace and
/// then an uppercase letter, a digit or an opening quote, unless the period
/// closes a protected abbreviation such as "Dr.".
pub fn segment(text: &str) -> (Vec<Span>, Vec<Span>) {
    let paragraphs = paragraph_spans(text);
    let mut sentences = Vec::new();
    for p in &paragraphs {
        sentences.extend(sentence_spans(text, p.clone()));
    }
    (paragraphs, sentences)
}

fn paragraph_spans(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut block: Option<Span> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed_start = line.len() - line.trim_start().len();
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                out.push(b);
            }
            continue;
        }
        let content_start = start + trimmed_start;
        let content_end = start + line.trim_end().len();
        block = Some(match block {
            Some(b) => b.start..content_end,
            None => content_start..content_end,
        });
    }
    if let Some(b) = block {
        out.push(b);
    }
    out
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201C}' | '\u{2018}')
}

fn protected_before(text: &str, dot: usize, floor: usize) -> bool {
    let head = &text[floor..dot];
    let word_start = head
        .char_indices()
        .rev()
        .find(|&(_, c)| !(c.is_alphabetic() || c == '.'))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let word = head[word_start..].to_lowercase();
    !word.is_empty() && PROTECTED_ABBREVIATIONS.contains(&word.as_str())
}

fn sentence_spans(text: &str, paragraph: Span) -> Vec<Span> {
    let body = &text[paragraph.clone()];
    let base = paragraph.start;
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '?' | '!') {
            i += 1;
            continue;
        }
        let only_period = c == '.';
        let mut j = i + 1;
        let mut single = true;
        while j < chars.len() && matches!(chars[j].1, '.' | '?' | '!') {
            single = false;
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map_or(body.len(), |&(p, _)| p);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > j
            && k < chars.len()
            && {
                let next = chars[k].1;
                next.is_uppercase() || next.is_ascii_digit() || is_opener(next)
            }
            && !(only_period && single && protected_before(body, pos, start));
        if boundary {
            out.push(base + start..base + end);
            start = chars[k].0;
            i = k;
        } else {
            i = j.max(i + 1);
        }
    }
    if start < body.len() {
        let tail = body[start..].trim_end();
        if !tail.is_empty() {
            out.push(base + start..base + start + tail.len());
        }
    }
    out
}

/// Reads one document per file; ids are file stems and the corpus is ordered
/// by id.
pub fn ingest_documents<P: AsRef<Path>>(
    paths: &[P],
    set_label: SetLabel,
    table: &ContractionTable,
) -> Result<Corpus> {
    if paths.is_empty() {
        warn!("no input files for the {set_label} set");
    }
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        let mut text = String::from_utf8(bytes).map_err(|_| Error::Encoding {
            path: path.to_path_buf(),
        })?;
        if text.starts_with('\u{FEFF}') {
            text.drain(..'\u{FEFF}'.len_utf8());
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Validation(format!("{} has no file stem", path.display())))?;
        let mut doc = Document::from_text(id, set_label, text, table);
        doc.source_path = path.to_string_lossy().into_owned();
        docs.push(doc);
    }
    Corpus::new(set_label, docs)
}

/// Lists `*.txt` files directly under `dir`, sorted by name.
pub fn text_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts<'a>(text: &'a str, spans: &[Span]) -> Vec<&'a str> {
        spans.iter().map(|s| &text[s.clone()]).collect()
    }

    #[test]
    fn bundled_table_expands_cant() {
        let t = ContractionTable::bundled();
        assert_eq!(normalize_text("I can't say", &t), "I cannot say");
        assert_eq!(normalize_text("", &t), "");
        assert_eq!(normalize_text("no contractions here", &t), "no contractions here");
    }

    #[test]
    fn case_pattern_is_kept() {
        let t = ContractionTable::bundled();
        assert_eq!(normalize_text("Don't. DON'T. I'm", &t), "Do not. DO NOT. I am");
        assert_eq!(normalize_text("it\u{2019}s fine", &t), "it is fine");
    }

    #[test]
    fn table_must_be_closed() {
        let err = ContractionTable::from_pairs([("can't", "can't not")]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = ContractionTable::from_pairs([("a'b", "x"), ("A'B", "y")]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn csv_header_is_required_shape() {
        let t = ContractionTable::from_csv("contraction,longhand\nwon't,will not\n".as_bytes()).unwrap();
        assert_eq!(t.lookup("Won't"), Some("will not"));
        assert!(ContractionTable::from_csv("a,b\nx,y,z\n".as_bytes()).is_err());
    }

    #[test]
    fn segment_minimal() {
        let text = "Yes. No.";
        let (p, s) = segment(text);
        assert_eq!(p.len(), 1);
        assert_eq!(texts(text, &s), vec!["Yes.", "No."]);
    }

    #[test]
    fn segment_protects_abbreviations() {
        let text = "Refer to Dr. Rao today.";
        let (_, s) = segment(text);
        assert_eq!(texts(text, &s), vec!["Refer to Dr. Rao today."]);
    }

    #[test]
    fn segment_empty() {
        assert_eq!(segment(""), (vec![], vec![]));
        assert_eq!(segment("  \n\n \n"), (vec![], vec![]));
    }

    #[test]
    fn segment_paragraphs_and_quotes() {
        let text = "First one? \"Quoted\" second!\n\n  Second paragraph without stop\n";
        let (p, s) = segment(text);
        assert_eq!(
            texts(text, &p),
            vec!["First one? \"Quoted\" second!", "Second paragraph without stop"]
        );
        assert_eq!(
            texts(text, &s),
            vec!["First one?", "\"Quoted\" second!", "Second paragraph without stop"]
        );
    }

    #[test]
    fn lowercase_after_period_does_not_split() {
        let text = "It was approx. five days. e.g. this stays.";
        let (_, s) = segment(text);
        assert_eq!(texts(text, &s), vec!["It was approx. five days. e.g. this stays."]);
    }

    #[test]
    fn ingest_orders_by_id_and_strips_bom() {
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("b.txt");
        let a = dir.path().join("a.txt");
        std::fs::write(&b, "\u{FEFF}Hello there.").unwrap();
        std::fs::write(&a, "Alpha.").unwrap();
        let c = ingest_documents(&[&b, &a], SetLabel::Training, &ContractionTable::bundled()).unwrap();
        let ids: Vec<_> = c.documents.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        let doc_b = c.get("b").unwrap();
        let on_disk = std::fs::read(&b).unwrap();
        assert_eq!(doc_b.raw_text.as_bytes(), &on_disk[3..]);
        assert_eq!(doc_b.raw_text.len(), on_disk.len() - 3);
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.txt");
        let err = ingest_documents(&[&missing], SetLabel::Testing, &ContractionTable::empty()).unwrap_err();
        match err {
            Error::Ingest { path, .. } => assert_eq!(path, missing),
            other => panic!("unexpected {other:?}"),
        }
        let sub = dir.path().join("sub");
        std::fs::create_dir(&sub).unwrap();
        let one = dir.path().join("x.txt");
        let two = sub.join("x.txt");
        std::fs::write(&one, "a").unwrap();
        std::fs::write(&two, "b").unwrap();
        let err = ingest_documents(&[&one, &two], SetLabel::Testing, &ContractionTable::empty()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "x"));
    }

    #[test]
    fn ingest_empty_list() {
        let paths: [&Path; 0] = [];
        let c = ingest_documents(&paths, SetLabel::Questions, &ContractionTable::empty()).unwrap();
        assert!(c.is_empty());
    }
}
