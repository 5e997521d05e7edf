//! The analyst-editable lemmatisation dictionary, the draft vocabulary that
//! seeds it, longest-match lemmatisation and stopword removal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::text::{fold, word_spans, Span};

/// Longest multiword key, in tokens.
pub const MAX_KEY_TOKENS: usize = 4;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");
const IRREGULAR_FORMS: &str = include_str!("../data/irregular_forms.csv");

/// Suffixes tried, in order, when grouping draft tokens.
const DRAFT_SUFFIXES: &[&str] = &["'s", "ies", "es", "s", "ed", "ing", "ly"];
const MIN_STEM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Auto,
    Manual,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Auto => "auto",
            Provenance::Manual => "manual",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Provenance::Auto),
            "manual" => Ok(Provenance::Manual),
            other => Err(Error::parse("provenance", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaEntry {
    pub key: String,
    pub lemma: String,
    pub pos_hint: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub timestamp: String,
    pub key: String,
    pub old_lemma: Option<String>,
    pub new_lemma: String,
    pub provenance: Provenance,
}

/// Checks that `key` is a lowercase sequence of 1..=4 words separated by
/// single spaces.
pub fn validate_key(key: &str) -> Result<()> {
    let words = word_spans(key);
    let rebuilt: Vec<&str> = words.iter().map(|s| &key[s.clone()]).collect();
    if words.is_empty() || words.len() > MAX_KEY_TOKENS || rebuilt.join(" ") != key {
        return Err(Error::Validation(format!(
            "dictionary key `{key}` must be 1..={MAX_KEY_TOKENS} words separated by single spaces"
        )));
    }
    if fold(key) != key {
        return Err(Error::Validation(format!("dictionary key `{key}` must be lowercase")));
    }
    Ok(())
}

pub fn validate_lemma(lemma: &str) -> Result<()> {
    if lemma.trim().is_empty() || lemma.trim() != lemma || lemma.to_lowercase() != lemma {
        return Err(Error::Validation(format!(
            "lemma `{lemma}` must be non-empty, trimmed and lowercase"
        )));
    }
    if lemma.contains([',', '\n', '\r', '\t', '"']) {
        return Err(Error::Validation(format!("lemma `{lemma}` contains a separator")));
    }
    Ok(())
}

/// Current UTC time, RFC 3339 to the second.
pub fn now_stamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Surface key → lemma, with a version that moves on every mutation and an
/// append-only edit log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaDictionary {
    entries: BTreeMap<String, LemmaEntry>,
    version: u64,
    edit_log: Vec<EditRecord>,
    max_key_tokens: usize,
}

impl Default for LemmaDictionary {
    fn default() -> Self {
        Self::new()
    }
}

impl LemmaDictionary {
    pub fn new() -> Self {
        LemmaDictionary {
            entries: BTreeMap::new(),
            version: 1,
            edit_log: Vec::new(),
            max_key_tokens: 1,
        }
    }

    /// Bulk construction; not logged.
    pub fn from_entries(entries: impl IntoIterator<Item = LemmaEntry>) -> Result<Self> {
        let mut dict = Self::new();
        for e in entries {
            validate_key(&e.key)?;
            validate_lemma(&e.lemma)?;
            dict.note_key(&e.key);
            if dict.entries.insert(e.key.clone(), e.clone()).is_some() {
                return Err(Error::Validation(format!("duplicate dictionary key `{}`", e.key)));
            }
        }
        Ok(dict)
    }

    fn note_key(&mut self, key: &str) {
        let n = key.split(' ').count();
        self.max_key_tokens = self.max_key_tokens.max(n);
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn edit_log(&self) -> &[EditRecord] {
        &self.edit_log
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&LemmaEntry> {
        self.entries.get(key)
    }

    pub fn lemma_of(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.lemma.as_str())
    }

    /// Entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = &LemmaEntry> {
        self.entries.values()
    }

    /// Keys whose lemma is `lemma`, in key order.
    pub fn keys_for(&self, lemma: &str) -> Vec<&str> {
        self.entries
            .values()
            .filter(|e| e.lemma == lemma)
            .map(|e| e.key.as_str())
            .collect()
    }

    /// Sets `key → lemma`. Returns `false` (and leaves the version alone) when
    /// the key already maps to that lemma.
    pub fn set(&mut self, key: &str, lemma: &str, provenance: Provenance) -> Result<bool> {
        self.set_at(key, lemma, provenance, &now_stamp())
    }

    pub fn set_at(
        &mut self,
        key: &str,
        lemma: &str,
        provenance: Provenance,
        timestamp: &str,
    ) -> Result<bool> {
        validate_key(key)?;
        validate_lemma(lemma)?;
        let old = self.entries.get(key).map(|e| e.lemma.clone());
        if old.as_deref() == Some(lemma) {
            return Ok(false);
        }
        let pos_hint = self.entries.get(key).and_then(|e| e.pos_hint.clone());
        self.note_key(key);
        self.entries.insert(
            key.to_string(),
            LemmaEntry {
                key: key.to_string(),
                lemma: lemma.to_string(),
                pos_hint,
                provenance,
            },
        );
        self.version += 1;
        self.edit_log.push(EditRecord {
            timestamp: timestamp.to_string(),
            key: key.to_string(),
            old_lemma: old,
            new_lemma: lemma.to_string(),
            provenance,
        });
        Ok(true)
    }

    /// Byte-deterministic CSV: `key,lemma,pos_hint,provenance`, sorted by key.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["key", "lemma", "pos_hint", "provenance"])?;
        for e in self.entries.values() {
            w.write_record([
                e.key.as_str(),
                e.lemma.as_str(),
                e.pos_hint.as_deref().unwrap_or(""),
                e.provenance.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "key", "old_lemma", "new_lemma", "provenance"])?;
        for r in &self.edit_log {
            w.write_record([
                r.timestamp.as_str(),
                r.key.as_str(),
                r.old_lemma.as_deref().unwrap_or(""),
                r.new_lemma.as_str(),
                r.provenance.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn log_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_log_csv(&mut buf).expect("writing to memory");
        buf
    }

    /// Loads entries and, when given, the edit log; the version is one past
    /// the number of logged edits.
    pub fn read_csv<R: Read, L: Read>(dict: R, log: Option<L>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(dict);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::parse("dictionary", format!("expected 4 columns, got {}", rec.len())));
            }
            entries.push(LemmaEntry {
                key: rec[0].to_string(),
                lemma: rec[1].to_string(),
                pos_hint: Some(rec[2].to_string()).filter(|s| !s.is_empty()),
                provenance: rec[3].parse()?,
            });
        }
        let mut dict = Self::from_entries(entries)?;
        if let Some(log) = log {
            let mut rdr = csv::Reader::from_reader(log);
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() != 5 {
                    return Err(Error::parse("dictionary log", format!("expected 5 columns, got {}", rec.len())));
                }
                dict.edit_log.push(EditRecord {
                    timestamp: rec[0].to_string(),
                    key: rec[1].to_string(),
                    old_lemma: Some(rec[2].to_string()).filter(|s| !s.is_empty()),
                    new_lemma: rec[3].to_string(),
                    provenance: rec[4].parse()?,
                });
            }
            dict.version = 1 + dict.edit_log.len() as u64;
        }
        Ok(dict)
    }
}

/// Output of [`extract_vocabulary`]: the draft dictionary plus the groups of
/// keys that share a lemma and should be looked at by the analyst.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftVocabulary {
    pub dictionary: LemmaDictionary,
    pub review_groups: Vec<Vec<String>>,
}

fn irregular_forms() -> HashMap<&'static str, &'static str> {
    IRREGULAR_FORMS
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .collect()
}

fn base_candidates(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    for suffix in DRAFT_SUFFIXES {
        let Some(stem) = token.strip_suffix(suffix) else {
            continue;
        };
        if stem.chars().count() < MIN_STEM {
            continue;
        }
        if *suffix == "ies" {
            out.push(format!("{stem}y"));
        }
        out.push(stem.to_string());
        out.push(format!("{stem}e"));
        let mut chars = stem.chars().rev();
        if let (Some(a), Some(b)) = (chars.next(), chars.next()) {
            if a == b && !"aeiou".contains(a) {
                out.push(stem[..stem.len() - a.len_utf8()].to_string());
            }
        }
    }
    out
}

struct Groups {
    parent: Vec<usize>,
}

impl Groups {
    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = i;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Builds a draft dictionary with one auto entry per distinct lowercase word.
///
/// Words are grouped when one reduces to another by stripping a common
/// inflectional suffix or through the bundled irregular-form table; each
/// group is labelled with its shortest member. The grouping is a review aid
/// only.
pub fn extract_vocabulary(corpora: &[&Corpus]) -> DraftVocabulary {
    let mut tokens = BTreeSet::new();
    for corpus in corpora {
        for doc in &corpus.documents {
            for span in word_spans(&doc.normalized_text) {
                tokens.insert(fold(&doc.normalized_text[span]));
            }
        }
    }
    if tokens.is_empty() {
        warn!("vocabulary extraction found no words");
    }
    let tokens: Vec<String> = tokens.into_iter().collect();
    let index: HashMap<&str, usize> = tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let irregular = irregular_forms();
    let mut groups = Groups {
        parent: (0..tokens.len()).collect(),
    };
    let mut is_base = vec![false; tokens.len()];
    for (i, token) in tokens.iter().enumerate() {
        let irregular_base = irregular.get(token.as_str()).map(|b| b.to_string());
        let base = irregular_base
            .into_iter()
            .chain(base_candidates(token))
            .find_map(|c| index.get(c.as_str()).copied().filter(|&j| j != i));
        if let Some(j) = base {
            is_base[j] = true;
            groups.union(i, j);
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..tokens.len() {
        let root = groups.find(i);
        members.entry(root).or_default().push(i);
    }
    let mut lemma_of = vec![String::new(); tokens.len()];
    let mut review_groups = Vec::new();
    for group in members.values() {
        let has_base = group.iter().any(|&i| is_base[i]);
        let label = group
            .iter()
            .filter(|&&i| is_base[i] || !has_base)
            .map(|&i| &tokens[i])
            .min_by(|a, b| a.chars().count().cmp(&b.chars().count()).then(a.cmp(b)))
            .expect("non-empty group")
            .clone();
        for &i in group {
            lemma_of[i] = label.clone();
        }
        if group.len() > 1 {
            review_groups.push(group.iter().map(|&i| tokens[i].clone()).collect());
        }
    }
    review_groups.sort();
    let entries = tokens.iter().zip(lemma_of).map(|(t, lemma)| LemmaEntry {
        key: t.clone(),
        lemma,
        pos_hint: None,
        provenance: Provenance::Auto,
    });
    let dictionary = LemmaDictionary::from_entries(entries).expect("draft keys are single folded words");
    DraftVocabulary {
        dictionary,
        review_groups,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamItem {
    pub lemma: String,
    pub document: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl StreamItem {
    pub fn span(&self) -> Span {
        self.start..self.end
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnigramStream {
    pub items: Vec<StreamItem>,
}

impl UnigramStream {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn extend(&mut self, other: UnigramStream) {
        self.items.extend(other.items);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for item in &self.items {
            w.serialize(item)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let items = rdr.deserialize().collect::<std::result::Result<Vec<StreamItem>, _>>()?;
        Ok(UnigramStream { items })
    }
}

/// Greedy longest-match lemmatisation, left to right within each sentence.
/// Words without a dictionary key pass through as their own lemma.
pub fn apply_lemmatization(document: &Document, dict: &LemmaDictionary) -> UnigramStream {
    let text = &document.normalized_text;
    let mut items = Vec::new();
    for (si, sentence) in document.sentences.iter().enumerate() {
        let spans: Vec<Span> = word_spans(&text[sentence.clone()])
            .into_iter()
            .map(|s| s.start + sentence.start..s.end + sentence.start)
            .collect();
        let folded: Vec<String> = spans.iter().map(|s| fold(&text[s.clone()])).collect();
        let mut i = 0;
        while i < spans.len() {
            let longest = dict.max_key_tokens.min(spans.len() - i);
            let mut matched = None;
            for n in (1..=longest).rev() {
                let key = folded[i..i + n].join(" ");
                if let Some(lemma) = dict.lemma_of(&key) {
                    matched = Some((n, lemma.to_string()));
                    break;
                }
            }
            let (n, lemma) = matched.unwrap_or_else(|| (1, folded[i].clone()));
            items.push(StreamItem {
                lemma,
                document: document.id.clone(),
                sentence: si,
                start: spans[i].start,
                end: spans[i + n - 1].end,
            });
            i += n;
        }
    }
    UnigramStream { items }
}

pub fn lemmatize_corpus(corpus: &Corpus, dict: &LemmaDictionary) -> UnigramStream {
    let mut stream = UnigramStream::default();
    for doc in &corpus.documents {
        stream.extend(apply_lemmatization(doc, dict));
    }
    stream
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    pub name: String,
    pub words: BTreeSet<String>,
}

impl StopwordList {
    pub fn new(name: impl Into<String>, words: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Validation("stopword list needs a name".into()));
        }
        let words = words
            .into_iter()
            .map(|w| fold(w.as_ref().trim()))
            .filter(|w| !w.is_empty())
            .collect();
        Ok(StopwordList { name, words })
    }

    pub fn bundled() -> Self {
        Self::from_reader("english", BUNDLED_STOPWORDS.as_bytes()).expect("bundled stopwords")
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn from_reader<R: BufRead>(name: impl Into<String>, reader: R) -> Result<Self> {
        let mut words = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            words.push(t.to_string());
        }
        Self::new(name, words)
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.words.contains(lemma)
    }
}

/// Drops items whose lemma is in any list. Returns the filtered stream and
/// the number of removed items.
pub fn remove_stopwords(stream: &UnigramStream, lists: &[StopwordList]) -> (UnigramStream, usize) {
    let items: Vec<StreamItem> = stream
        .items
        .iter()
        .filter(|item| !lists.iter().any(|l| l.contains(&item.lemma)))
        .cloned()
        .collect();
    let removed = stream.items.len() - items.len();
    (UnigramStream { items }, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContractionTable, SetLabel};

    fn doc(text: &str) -> Document {
        Document::from_text("d", SetLabel::Training, text, &ContractionTable::bundled())
    }

    fn corpus(text: &str) -> Corpus {
        Corpus::new(SetLabel::Training, vec![doc(text)]).unwrap()
    }

    fn entry(key: &str, lemma: &str) -> LemmaEntry {
        LemmaEntry {
            key: key.into(),
            lemma: lemma.into(),
            pos_hint: None,
            provenance: Provenance::Manual,
        }
    }

    fn lemmas(stream: &UnigramStream) -> Vec<&str> {
        stream.items.iter().map(|i| i.lemma.as_str()).collect()
    }

    #[test]
    fn draft_groups_inflections_under_base_form() {
        let draft = extract_vocabulary(&[&corpus("He comes, came, is coming. Come.")]);
        for key in ["come", "comes", "came", "coming"] {
            assert_eq!(draft.dictionary.lemma_of(key), Some("come"), "{key}");
        }
        assert!(draft
            .review_groups
            .contains(&vec!["came".into(), "come".into(), "comes".into(), "coming".into()]));
    }

    #[test]
    fn draft_singleton_is_identity() {
        let draft = extract_vocabulary(&[&corpus("xyzzy")]);
        assert_eq!(draft.dictionary.get("xyzzy"), Some(&LemmaEntry {
            key: "xyzzy".into(),
            lemma: "xyzzy".into(),
            pos_hint: None,
            provenance: Provenance::Auto,
        }));
        assert!(draft.review_groups.is_empty());
    }

    #[test]
    fn manual_edit_separates_patiently_from_patient() {
        let mut dict = extract_vocabulary(&[&corpus("The patient waited patiently.")]).dictionary;
        assert_eq!(dict.lemma_of("patiently"), Some("patient"));
        let v = dict.version();
        assert!(dict.set("patiently", "patience", Provenance::Manual).unwrap());
        assert_eq!(dict.version(), v + 1);
        assert_eq!(dict.lemma_of("patiently"), Some("patience"));
        assert_eq!(dict.lemma_of("patient"), Some("patient"));
        assert_eq!(dict.edit_log().len(), 1);
        assert_eq!(dict.edit_log()[0].old_lemma.as_deref(), Some("patient"));

        assert!(!dict.set("patiently", "patience", Provenance::Manual).unwrap());
        assert_eq!(dict.version(), v + 1);
    }

    #[test]
    fn empty_corpus_gives_empty_draft() {
        let empty = Corpus::new(SetLabel::Training, vec![]).unwrap();
        assert!(extract_vocabulary(&[&empty]).dictionary.is_empty());
    }

    #[test]
    fn longest_match_prefers_multiword_keys() {
        let dict = LemmaDictionary::from_entries([
            entry("swine flu", "swine flu"),
            entry("swine", "pig"),
            entry("cases", "case"),
            entry("case", "case"),
        ])
        .unwrap();
        let d = doc("swine flu cases");
        let s = apply_lemmatization(&d, &dict);
        assert_eq!(lemmas(&s), vec!["swine flu", "case"]);
        assert_eq!(&d.normalized_text[s.items[0].span()], "swine flu");
    }

    #[test]
    fn empty_dictionary_is_identity() {
        let s = apply_lemmatization(&doc("Fever and Cough."), &LemmaDictionary::new());
        assert_eq!(lemmas(&s), vec!["fever", "and", "cough"]);
    }

    #[test]
    fn table_style_entries() {
        let dict = LemmaDictionary::from_entries([
            entry("patiently", "patience"),
            entry("waiting", "wait"),
        ])
        .unwrap();
        assert_eq!(lemmas(&apply_lemmatization(&doc("patiently waiting"), &dict)), vec!["patience", "wait"]);
    }

    #[test]
    fn multiword_match_does_not_cross_sentences() {
        let dict = LemmaDictionary::from_entries([entry("swine flu", "swine flu")]).unwrap();
        let s = apply_lemmatization(&doc("It was swine. Flu came later."), &dict);
        assert!(!lemmas(&s).contains(&"swine flu"));
    }

    #[test]
    fn stopword_removal() {
        let mk = |ls: &[&str]| UnigramStream {
            items: ls
                .iter()
                .enumerate()
                .map(|(i, l)| StreamItem {
                    lemma: l.to_string(),
                    document: "d".into(),
                    sentence: 0,
                    start: i,
                    end: i + 1,
                })
                .collect(),
        };
        let stream = mk(&["the", "antibiotic", "the"]);
        let the = StopwordList::new("a", ["the"]).unwrap();
        let (out, removed) = remove_stopwords(&stream, &[the.clone()]);
        assert_eq!(lemmas(&out), vec!["antibiotic"]);
        assert_eq!(removed, 2);

        let (out, removed) = remove_stopwords(&stream, &[]);
        assert_eq!(out, stream);
        assert_eq!(removed, 0);

        let both = StopwordList::new("b", ["the", "antibiotic"]).unwrap();
        let (out, removed) = remove_stopwords(&stream, &[the, both]);
        assert!(out.is_empty());
        assert_eq!(removed, 3);
    }

    #[test]
    fn key_and_lemma_validation() {
        assert!(validate_key("swine flu").is_ok());
        assert!(validate_key("side-effect").is_ok());
        assert!(validate_key("Swine").is_err());
        assert!(validate_key("a  b").is_err());
        assert!(validate_key("a b c d e").is_err());
        assert!(validate_key("").is_err());
        assert!(validate_lemma("").is_err());
        assert!(validate_lemma("Patience").is_err());
    }

    #[test]
    fn dictionary_csv_round_trip_keeps_version() {
        let mut dict = LemmaDictionary::from_entries([entry("b", "b"), entry("a", "a")]).unwrap();
        dict.set_at("a", "x", Provenance::Manual, "2026-01-01T00:00:00Z").unwrap();
        let bytes = dict.to_csv_bytes();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "key,lemma,pos_hint,provenance\na,x,,manual\nb,b,,manual\n"
        );
        let back = LemmaDictionary::read_csv(&bytes[..], Some(&dict.log_csv_bytes()[..])).unwrap();
        assert_eq!(back, dict);
        assert_eq!(back.version(), 2);
    }
}
