//! Correlation-driven code discovery and whole-sentence auto-coding.
//!
//! Categories come from the important unigrams of the interview questions.
//! A transcript unigram becomes a transitional code when its per-document
//! count row correlates with some category row at or above the active
//! threshold; the dictionary keys that lemmatise to it are the codes, and
//! every sentence containing a code is annotated in full.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lexicon::LemmaDictionary;
use crate::matrix::{filter_percentile, ImportantUnigramSet, PercentileMode, TermDocumentMatrix};
use crate::stats;
use crate::text::{fold, word_spans, Span};

/// Slack on threshold comparisons so that a threshold reached by repeated
/// subtraction (1.0 - 2 * 0.05) still admits |r| = 0.9.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub lemma: String,
    pub source_set: String,
    pub transitional_codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub category: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionalCode {
    pub lemma: String,
    pub correlations: Vec<Correlation>,
    pub best_abs_r: f64,
}

impl TransitionalCode {
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.correlations.iter().map(|c| c.category.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Code {
    pub surface: String,
    pub parent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMatch {
    pub code: Code,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    Auto,
    Accepted,
    Rejected,
    Reassigned,
}

impl SegmentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentStatus::Auto => "auto",
            SegmentStatus::Accepted => "accepted",
            SegmentStatus::Rejected => "rejected",
            SegmentStatus::Reassigned => "reassigned",
        }
    }

    /// Whether the analyst kept the segment.
    pub fn is_validated(self) -> bool {
        matches!(self, SegmentStatus::Accepted | SegmentStatus::Reassigned)
    }
}

impl fmt::Display for SegmentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SegmentStatus::Auto),
            "accepted" => Ok(SegmentStatus::Accepted),
            "rejected" => Ok(SegmentStatus::Rejected),
            "reassigned" => Ok(SegmentStatus::Reassigned),
            other => Err(Error::parse("segment status", other)),
        }
    }
}

/// Hits of the content-analysis word lists in one sentence. The
/// `*_capitalized` fields count how many yes/no hits were the capitalised
/// form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityCounts {
    pub yes: u32,
    pub no: u32,
    pub negation: u32,
    pub amplifier: u32,
    pub deamplifier: u32,
    pub positive: u32,
    pub negative: u32,
    pub yes_capitalized: u32,
    pub no_capitalized: u32,
}

impl PolarityCounts {
    pub fn is_zero(&self) -> bool {
        *self == PolarityCounts::default()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        Some(match name {
            "yes" => self.yes,
            "no" => self.no,
            "negation" => self.negation,
            "amplifier" => self.amplifier,
            "deamplifier" => self.deamplifier,
            "positive" => self.positive,
            "negative" => self.negative,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub document: String,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedSegment {
    pub document: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub matches: Vec<CodeMatch>,
    pub categories: Vec<String>,
    pub status: SegmentStatus,
    pub polarity: PolarityCounts,
}

impl CodedSegment {
    pub fn key(&self) -> SegmentKey {
        SegmentKey {
            document: self.document.clone(),
            sentence: self.sentence,
        }
    }

    pub fn span(&self) -> Span {
        self.start..self.end
    }
}

/// Codes plus the categories each parent transitional code belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub codes: Vec<Code>,
    pub categories_of: BTreeMap<String, Vec<String>>,
}

impl Codebook {
    pub fn build(tcs: &[TransitionalCode], dict: &LemmaDictionary) -> Self {
        let mut codes = Vec::new();
        let mut categories_of = BTreeMap::new();
        for tc in tcs {
            codes.extend(enumerate_codes(tc, dict));
            let mut cats: Vec<String> = tc.categories().map(str::to_string).collect();
            cats.sort();
            cats.dedup();
            categories_of.insert(tc.lemma.clone(), cats);
        }
        codes.sort();
        codes.dedup();
        Codebook { codes, categories_of }
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// CSV `surface,parent,categories` with `;`-joined categories.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["surface", "parent", "categories"]).expect("memory");
        for c in &self.codes {
            let cats = self.categories_of.get(&c.parent).map(|v| v.join(";")).unwrap_or_default();
            w.write_record([c.surface.as_str(), c.parent.as_str(), cats.as_str()]).expect("memory");
        }
        w.into_inner().expect("memory")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut book = Codebook::default();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::parse("codebook", "expected 3 columns"));
            }
            book.codes.push(Code {
                surface: rec[0].to_string(),
                parent: rec[1].to_string(),
            });
            book.categories_of.insert(rec[1].to_string(), split_list(&rec[2]));
        }
        Ok(book)
    }
}

fn split_list(field: &str) -> Vec<String> {
    field.split(';').filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Categories are the important unigrams of a question matrix, in lemma
/// order.
pub fn derive_categories(
    question_tdm: &TermDocumentMatrix,
    low: f64,
    high: f64,
    mode: PercentileMode,
) -> Result<Vec<Category>> {
    if question_tdm.is_empty() {
        warn!("no categories derived from `{}`: matrix is empty", question_tdm.label);
        return Ok(Vec::new());
    }
    let selected = filter_percentile(question_tdm, low, high, mode)?;
    if selected.unigrams.is_empty() {
        warn!("no categories derived from `{}`", question_tdm.label);
    }
    Ok(selected
        .unigrams
        .into_iter()
        .map(|lemma| Category {
            lemma,
            source_set: question_tdm.label.clone(),
            transitional_codes: Vec::new(),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeDiscovery {
    pub codes: Vec<TransitionalCode>,
    /// Categories with no row in the transcript matrix.
    pub absent_categories: Vec<String>,
    /// (unigram, category) pairs skipped because a row has zero variance.
    pub skipped_pairs: Vec<(String, String)>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
    }
    Ok(())
}

/// Finds the important, non-category transcript unigrams whose count row
/// reaches `|r| >= threshold` against at least one category row.
pub fn find_transitional_codes(
    transcript_tdm: &TermDocumentMatrix,
    important: &ImportantUnigramSet,
    categories: &[Category],
    threshold: f64,
) -> Result<CodeDiscovery> {
    check_unit("correlation threshold", threshold)?;
    let mut out = CodeDiscovery::default();
    let mut category_rows = Vec::new();
    for c in categories {
        match transcript_tdm.row(&c.lemma) {
            Some(row) => category_rows.push((c.lemma.as_str(), as_f64(row))),
            None => {
                info!("category `{}` does not occur in `{}`", c.lemma, transcript_tdm.label);
                out.absent_categories.push(c.lemma.clone());
            }
        }
    }
    let category_set: BTreeSet<&str> = categories.iter().map(|c| c.lemma.as_str()).collect();
    for (lemma, row) in transcript_tdm.unigrams.iter().zip(&transcript_tdm.counts) {
        if category_set.contains(lemma.as_str()) || !important.contains(lemma) {
            continue;
        }
        let x = as_f64(row);
        let mut correlations = Vec::new();
        for (cat, y) in &category_rows {
            match stats::pearson(&x, y) {
                Ok(r) if r.abs() + THRESHOLD_SLACK >= threshold => correlations.push(Correlation {
                    category: cat.to_string(),
                    r,
                }),
                Ok(_) => {}
                Err(_) => {
                    log::debug!("skipping ({lemma}, {cat}): zero variance");
                    out.skipped_pairs.push((lemma.clone(), cat.to_string()));
                }
            }
        }
        if !correlations.is_empty() {
            let best_abs_r = correlations.iter().map(|c| c.r.abs()).fold(0.0, f64::max);
            out.codes.push(TransitionalCode {
                lemma: lemma.clone(),
                correlations,
                best_abs_r,
            });
        }
    }
    Ok(out)
}

fn as_f64(row: &[u32]) -> Vec<f64> {
    row.iter().map(|&c| f64::from(c)).collect()
}

/// Fills each category's transitional-code list.
pub fn attach_codes(categories: &mut [Category], tcs: &[TransitionalCode]) {
    for cat in categories.iter_mut() {
        cat.transitional_codes = tcs
            .iter()
            .filter(|tc| tc.categories().any(|c| c == cat.lemma))
            .map(|tc| tc.lemma.clone())
            .collect();
    }
}

/// Every dictionary key that lemmatises to the transitional code.
pub fn enumerate_codes(tc: &TransitionalCode, dict: &LemmaDictionary) -> Vec<Code> {
    let keys = dict.keys_for(&tc.lemma);
    if keys.is_empty() {
        warn!("transitional code `{}` has no dictionary keys", tc.lemma);
    }
    keys.into_iter()
        .map(|k| Code {
            surface: k.to_string(),
            parent: tc.lemma.clone(),
        })
        .collect()
}

/// Annotates every sentence that contains at least one code (whole-word,
/// case-insensitive). Several matches in one sentence share one segment.
pub fn annotate_sentences(corpus: &Corpus, book: &Codebook) -> Vec<CodedSegment> {
    let mut by_first: HashMap<&str, Vec<(&Code, Vec<&str>)>> = HashMap::new();
    for code in &book.codes {
        let words: Vec<&str> = code.surface.split(' ').collect();
        by_first.entry(words[0]).or_default().push((code, words));
    }
    let mut out = Vec::new();
    for doc in &corpus.documents {
        let text = &doc.normalized_text;
        for (si, sentence) in doc.sentences.iter().enumerate() {
            let spans: Vec<Span> = word_spans(&text[sentence.clone()])
                .into_iter()
                .map(|s| s.start + sentence.start..s.end + sentence.start)
                .collect();
            let folded: Vec<String> = spans.iter().map(|s| fold(&text[s.clone()])).collect();
            let mut matches = Vec::new();
            for i in 0..folded.len() {
                let Some(candidates) = by_first.get(folded[i].as_str()) else {
                    continue;
                };
                for (code, words) in candidates {
                    let n = words.len();
                    if i + n <= folded.len() && folded[i..i + n].iter().zip(words).all(|(a, b)| a == b) {
                        matches.push(CodeMatch {
                            code: (*code).clone(),
                            start: spans[i].start,
                            end: spans[i + n - 1].end,
                        });
                    }
                }
            }
            if matches.is_empty() {
                continue;
            }
            let categories: BTreeSet<&String> = matches
                .iter()
                .filter_map(|m| book.categories_of.get(&m.code.parent))
                .flatten()
                .collect();
            out.push(CodedSegment {
                document: doc.id.clone(),
                sentence: si,
                start: sentence.start,
                end: sentence.end,
                matches,
                categories: categories.into_iter().cloned().collect(),
                status: SegmentStatus::Auto,
                polarity: PolarityCounts::default(),
            });
        }
    }
    out
}

/// Fraction of corpus words that lie inside coded sentences.
pub fn coverage(corpus: &Corpus, segments: &[CodedSegment]) -> f64 {
    let total = corpus.token_count();
    if total == 0 {
        return 0.0;
    }
    let covered: usize = segments
        .iter()
        .map(|s| {
            let doc = corpus.get(&s.document).expect("segment of a corpus document");
            word_spans(&doc.normalized_text[s.span()]).len()
        })
        .sum();
    covered as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub start: f64,
    pub step: f64,
    pub target: f64,
    pub floor: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            start: 1.0,
            step: 0.05,
            target: 0.5,
            floor: 0.5,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        check_unit("search start", self.start)?;
        check_unit("search target", self.target)?;
        check_unit("search floor", self.floor)?;
        if !(self.step > 0.0) {
            return Err(Error::Config(format!("search step must be positive, got {}", self.step)));
        }
        if self.floor > self.start {
            return Err(Error::Config("search floor lies above its start".into()));
        }
        Ok(())
    }

    /// start, start - step, ... down to and including the floor.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let t = self.start - f64::from(k) * self.step;
            if t < self.floor - THRESHOLD_SLACK {
                break;
            }
            // keep 0.9 printing as 0.9, not 0.8999999999999999
            out.push((t * 1e9).round() / 1e9);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub threshold: f64,
    pub transitional_codes: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub steps: Vec<SearchStep>,
    pub final_threshold: f64,
    pub reached_target: bool,
}

impl SearchTrace {
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "transitional_codes", "coverage", "final"]).expect("memory");
        for s in &self.steps {
            let last = if s.threshold == self.final_threshold { "yes" } else { "" };
            w.write_record([
                format!("{}", s.threshold),
                s.transitional_codes.to_string(),
                format!("{:.6}", s.coverage),
                last.to_string(),
            ])
            .expect("memory");
        }
        w.into_inner().expect("memory")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub segments: Vec<CodedSegment>,
    pub trace: SearchTrace,
    pub discovery: CodeDiscovery,
    pub codebook: Codebook,
    pub warnings: Vec<String>,
}

/// Lowers the correlation threshold step by step, re-coding at each level,
/// and stops at the first threshold whose coverage reaches the target.
/// Reaching the floor first is reported as a warning, not an error.
pub fn iterative_code_search(
    corpus: &Corpus,
    transcript_tdm: &TermDocumentMatrix,
    important: &ImportantUnigramSet,
    categories: &[Category],
    dict: &LemmaDictionary,
    params: SearchParams,
) -> Result<SearchOutcome> {
    params.validate()?;
    let mut steps = Vec::new();
    let mut last = None;
    for t in params.thresholds() {
        let discovery = find_transitional_codes(transcript_tdm, important, categories, t)?;
        let codebook = Codebook::build(&discovery.codes, dict);
        let segments = annotate_sentences(corpus, &codebook);
        let cov = coverage(corpus, &segments);
        steps.push(SearchStep {
            threshold: t,
            transitional_codes: discovery.codes.len(),
            coverage: cov,
        });
        let done = cov >= params.target;
        last = Some((t, discovery, codebook, segments));
        if done {
            break;
        }
    }
    let (final_threshold, discovery, codebook, segments) = last.expect("at least one threshold");
    let reached_target = steps.last().is_some_and(|s| s.coverage >= params.target);
    let mut warnings = Vec::new();
    if !reached_target {
        let msg = format!(
            "coverage target {} not reached before floor {} (final coverage {:.4})",
            params.target,
            params.floor,
            steps.last().map_or(0.0, |s| s.coverage)
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(SearchOutcome {
        segments,
        trace: SearchTrace {
            steps,
            final_threshold,
            reached_target,
        },
        discovery,
        codebook,
        warnings,
    })
}

/// Content-analysis word lists. `yes`/`no` are matched case-sensitively
/// against their listed forms; the other lists are matched on lowercase words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordLists {
    pub yes: BTreeSet<String>,
    pub no: BTreeSet<String>,
    pub negation: BTreeSet<String>,
    pub amplifier: BTreeSet<String>,
    pub deamplifier: BTreeSet<String>,
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

pub const WORD_LIST_NAMES: [&str; 7] = ["yes", "no", "negation", "amplifier", "deamplifier", "positive", "negative"];

fn bundled_list(name: &str) -> &'static str {
    match name {
        "yes" => include_str!("../data/wordlists/yes.txt"),
        "no" => include_str!("../data/wordlists/no.txt"),
        "negation" => include_str!("../data/wordlists/negation.txt"),
        "amplifier" => include_str!("../data/wordlists/amplifier.txt"),
        "deamplifier" => include_str!("../data/wordlists/deamplifier.txt"),
        "positive" => include_str!("../data/wordlists/positive.txt"),
        "negative" => include_str!("../data/wordlists/negative.txt"),
        _ => unreachable!("unknown list {name}"),
    }
}

fn parse_list(text: &str, fold_case: bool) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| if fold_case { fold(l) } else { l.to_string() })
        .collect()
}

impl WordLists {
    pub fn bundled() -> Self {
        Self::from_texts(|name| Ok(bundled_list(name).to_string())).expect("bundled lists")
    }

    /// Reads `<name>.txt` for every list name; a missing file is a
    /// configuration error.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::from_texts(|name| {
            let path = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("word list {}: {e}", path.display())))
        })
    }

    fn from_texts(mut read: impl FnMut(&str) -> Result<String>) -> Result<Self> {
        let mut lists = HashMap::new();
        for name in WORD_LIST_NAMES {
            let fold_case = !matches!(name, "yes" | "no");
            lists.insert(name, parse_list(&read(name)?, fold_case));
        }
        let mut take = |n: &str| lists.remove(n).expect("every name loaded");
        Ok(WordLists {
            yes: take("yes"),
            no: take("no"),
            negation: take("negation"),
            amplifier: take("amplifier"),
            deamplifier: take("deamplifier"),
            positive: take("positive"),
            negative: take("negative"),
        })
    }
}

/// List hits in one piece of text.
pub fn count_polarity(text: &str, lists: &WordLists) -> PolarityCounts {
    let mut p = PolarityCounts::default();
    for span in word_spans(text) {
        let surface = &text[span];
        let capital = surface.chars().next().is_some_and(char::is_uppercase);
        if lists.yes.contains(surface) {
            p.yes += 1;
            p.yes_capitalized += u32::from(capital);
        }
        if lists.no.contains(surface) {
            p.no += 1;
            p.no_capitalized += u32::from(capital);
        }
        let w = fold(surface);
        p.negation += u32::from(lists.negation.contains(&w));
        p.amplifier += u32::from(lists.amplifier.contains(&w));
        p.deamplifier += u32::from(lists.deamplifier.contains(&w));
        p.positive += u32::from(lists.positive.contains(&w));
        p.negative += u32::from(lists.negative.contains(&w));
    }
    p
}

/// Polarity-only segments for every sentence with at least one list hit.
pub fn annotate_content_words(corpus: &Corpus, lists: &WordLists) -> Vec<CodedSegment> {
    let mut out = Vec::new();
    for doc in &corpus.documents {
        for (si, span) in doc.sentences.iter().enumerate() {
            let polarity = count_polarity(&doc.normalized_text[span.clone()], lists);
            if polarity.is_zero() {
                continue;
            }
            out.push(CodedSegment {
                document: doc.id.clone(),
                sentence: si,
                start: span.start,
                end: span.end,
                matches: Vec::new(),
                categories: Vec::new(),
                status: SegmentStatus::Auto,
                polarity,
            });
        }
    }
    out
}

/// Copies polarity summaries onto the code segments of the same sentence.
pub fn attach_polarity(segments: &mut [CodedSegment], polarity: &[CodedSegment]) {
    let index: HashMap<SegmentKey, PolarityCounts> = polarity.iter().map(|p| (p.key(), p.polarity)).collect();
    for seg in segments {
        if let Some(p) = index.get(&seg.key()) {
            seg.polarity = *p;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCounts {
    pub inclusion: u32,
    pub proximity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationStats {
    pub proximity_window: usize,
    /// Keyed by ordered (a, b) category pair; zero pairs are omitted.
    pub pairs: BTreeMap<(String, String), RelationCounts>,
}

impl RelationStats {
    pub fn get(&self, a: &str, b: &str) -> RelationCounts {
        self.pairs.get(&(a.to_string(), b.to_string())).copied().unwrap_or_default()
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category_a", "category_b", "inclusion", "proximity", "window"]).expect("memory");
        for ((a, b), c) in &self.pairs {
            w.write_record([
                a.clone(),
                b.clone(),
                c.inclusion.to_string(),
                c.proximity.to_string(),
                self.proximity_window.to_string(),
            ])
            .expect("memory");
        }
        w.into_inner().expect("memory")
    }
}

/// Inclusion and proximity counts between category segments.
///
/// `inclusion(a, b)` counts a-segments whose span lies inside some b-segment
/// of the same document. `proximity(a, b)` counts (a, b) segment pairs of the
/// same document at most `window` sentences apart that are not inclusion
/// pairs. Only pairs of distinct categories are reported; `categories`
/// restricts the categories considered (empty means all).
pub fn relation_stats(segments: &[CodedSegment], categories: &[String], window: usize) -> RelationStats {
    let allowed: BTreeSet<&str> = categories.iter().map(String::as_str).collect();
    let items: Vec<(&CodedSegment, &str)> = segments
        .iter()
        .flat_map(|s| s.categories.iter().map(move |c| (s, c.as_str())))
        .filter(|(_, c)| allowed.is_empty() || allowed.contains(c))
        .collect();
    let mut by_doc: BTreeMap<&str, Vec<(&CodedSegment, &str)>> = BTreeMap::new();
    for it in items {
        by_doc.entry(it.0.document.as_str()).or_default().push(it);
    }
    let mut pairs: BTreeMap<(String, String), RelationCounts> = BTreeMap::new();
    for group in by_doc.values() {
        let cats: BTreeSet<&str> = group.iter().map(|(_, c)| *c).collect();
        for &a in &cats {
            for &b in &cats {
                if a == b {
                    continue;
                }
                let a_items = group.iter().filter(|(_, c)| *c == a);
                let b_items: Vec<&CodedSegment> = group.iter().filter(|(_, c)| *c == b).map(|(s, _)| *s).collect();
                let mut counts = RelationCounts::default();
                for (x, _) in a_items {
                    if b_items.iter().any(|y| y.start <= x.start && x.end <= y.end) {
                        counts.inclusion += 1;
                    }
                    for y in &b_items {
                        let contained = y.start <= x.start && x.end <= y.end;
                        if !contained && x.sentence.abs_diff(y.sentence) <= window {
                            counts.proximity += 1;
                        }
                    }
                }
                if counts != RelationCounts::default() {
                    let e = pairs.entry((a.to_string(), b.to_string())).or_default();
                    e.inclusion += counts.inclusion;
                    e.proximity += counts.proximity;
                }
            }
        }
    }
    RelationStats {
        proximity_window: window,
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub category: String,
    pub tc_count: usize,
    pub flagged: bool,
}

/// Flags categories whose transitional-code count exceeds `ratio` times the
/// second-largest count. Advisory only.
pub fn flag_outlier_categories(categories: &[Category], ratio: f64) -> Vec<OutlierFlag> {
    let mut counts: Vec<usize> = categories.iter().map(|c| c.transitional_codes.len()).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let second = counts.get(1).copied();
    categories
        .iter()
        .map(|c| {
            let n = c.transitional_codes.len();
            OutlierFlag {
                category: c.lemma.clone(),
                tc_count: n,
                flagged: second.is_some_and(|s| n as f64 > ratio * s as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub retrieved: usize,
    pub validated: usize,
    /// `None` when there are no validated segments.
    pub fraction: Option<f64>,
}

/// Share of validated segments overlapped (by at least one byte, same
/// document) by some auto-coded segment.
pub fn concordance(auto: &[CodedSegment], validated: &[CodedSegment]) -> Concordance {
    let mut by_doc: HashMap<&str, Vec<Span>> = HashMap::new();
    for s in auto {
        by_doc.entry(s.document.as_str()).or_default().push(s.span());
    }
    let retrieved = validated
        .iter()
        .filter(|v| {
            by_doc
                .get(v.document.as_str())
                .is_some_and(|spans| spans.iter().any(|a| a.start < v.end && v.start < a.end))
        })
        .count();
    Concordance {
        retrieved,
        validated: validated.len(),
        fraction: if validated.is_empty() {
            None
        } else {
            Some(retrieved as f64 / validated.len() as f64)
        },
    }
}

const SEGMENT_HEADER: [&str; 17] = [
    "document",
    "sentence",
    "start",
    "end",
    "codes",
    "categories",
    "status",
    "yes",
    "no",
    "negation",
    "amplifier",
    "deamplifier",
    "positive",
    "negative",
    "yes_capitalized",
    "no_capitalized",
    "code_spans",
];

/// Segment CSV. `codes` holds `surface|parent` items and `code_spans` the
/// matching `start-end` byte ranges, both `;`-joined.
pub fn write_segments<W: Write>(segments: &[CodedSegment], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SEGMENT_HEADER)?;
    for s in segments {
        let codes: Vec<String> = s.matches.iter().map(|m| format!("{}|{}", m.code.surface, m.code.parent)).collect();
        let spans: Vec<String> = s.matches.iter().map(|m| format!("{}-{}", m.start, m.end)).collect();
        let p = &s.polarity;
        w.write_record([
            s.document.clone(),
            s.sentence.to_string(),
            s.start.to_string(),
            s.end.to_string(),
            codes.join(";"),
            s.categories.join(";"),
            s.status.to_string(),
            p.yes.to_string(),
            p.no.to_string(),
            p.negation.to_string(),
            p.amplifier.to_string(),
            p.deamplifier.to_string(),
            p.positive.to_string(),
            p.negative.to_string(),
            p.yes_capitalized.to_string(),
            p.no_capitalized.to_string(),
            spans.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn segments_csv_bytes(segments: &[CodedSegment]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_segments(segments, &mut buf).expect("writing to memory");
    buf
}

pub fn read_segments<R: Read>(reader: R) -> Result<Vec<CodedSegment>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::parse("segments", format!("bad number `{s}`"))) };
    let cnt = |s: &str| -> Result<u32> { s.parse().map_err(|_| Error::parse("segments", format!("bad count `{s}`"))) };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != SEGMENT_HEADER.len() {
            return Err(Error::parse("segments", "wrong column count"));
        }
        let codes = split_list(&rec[4]);
        let spans = split_list(&rec[16]);
        if codes.len() != spans.len() {
            return Err(Error::parse("segments", "codes and spans differ in length"));
        }
        let matches = codes
            .iter()
            .zip(&spans)
            .map(|(c, s)| {
                let (surface, parent) = c.split_once('|').ok_or_else(|| Error::parse("segments", "bad code"))?;
                let (a, b) = s.split_once('-').ok_or_else(|| Error::parse("segments", "bad span"))?;
                Ok(CodeMatch {
                    code: Code {
                        surface: surface.into(),
                        parent: parent.into(),
                    },
                    start: num(a)?,
                    end: num(b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(CodedSegment {
            document: rec[0].to_string(),
            sentence: num(&rec[1])?,
            start: num(&rec[2])?,
            end: num(&rec[3])?,
            matches,
            categories: split_list(&rec[5]),
            status: rec[6].parse()?,
            polarity: PolarityCounts {
                yes: cnt(&rec[7])?,
                no: cnt(&rec[8])?,
                negation: cnt(&rec[9])?,
                amplifier: cnt(&rec[10])?,
                deamplifier: cnt(&rec[11])?,
                positive: cnt(&rec[12])?,
                negative: cnt(&rec[13])?,
                yes_capitalized: cnt(&rec[14])?,
                no_capitalized: cnt(&rec[15])?,
            },
        });
    }
    Ok(out)
}
