//! Term-document matrices, the percentile importance filter, binarisation
//! and frequency reports.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lexicon::{lemmatize_corpus, remove_stopwords, LemmaDictionary, StopwordList, UnigramStream};
use crate::stats;

/// Unigram × document counts. Rows are sorted by lemma, columns by document
/// id, and every row has at least one non-zero count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermDocumentMatrix {
    pub label: String,
    pub unigrams: Vec<String>,
    pub documents: Vec<String>,
    pub counts: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMode {
    /// Percentiles of per-unigram total occurrences (nearest rank).
    #[default]
    Totals,
    /// Percentage of documents containing the unigram.
    DocFrequency,
}

impl FromStr for PercentileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "totals" => Ok(PercentileMode::Totals),
            "doc_frequency" => Ok(PercentileMode::DocFrequency),
            other => Err(Error::Config(format!("unknown percentile mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportantUnigramSet {
    pub label: String,
    pub unigrams: Vec<String>,
    pub low_cut: f64,
    pub high_cut: f64,
    pub mode: PercentileMode,
}

impl ImportantUnigramSet {
    pub fn contains(&self, lemma: &str) -> bool {
        self.unigrams.binary_search_by(|u| u.as_str().cmp(lemma)).is_ok()
    }

    /// Line-oriented form: a header comment followed by one unigram per line.
    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            PercentileMode::Totals => "totals",
            PercentileMode::DocFrequency => "doc_frequency",
        };
        let mut out = format!(
            "# label={} low={} high={} mode={}\n",
            self.label, self.low_cut, self.high_cut, mode
        );
        for u in &self.unigrams {
            out.push_str(u);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::parse("unigram set", "missing header"))?;
        let fields: HashMap<&str, &str> = header.split(' ').filter_map(|kv| kv.split_once('=')).collect();
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse("unigram set", format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::parse("unigram set", format!("bad `{k}`")))
        };
        Ok(ImportantUnigramSet {
            label: get("label")?.to_string(),
            low_cut: num("low")?,
            high_cut: num("high")?,
            mode: get("mode")?.parse()?,
            unigrams: lines.filter(|l| !l.is_empty()).map(str::to_string).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMatrix {
    pub label: String,
    pub unigrams: Vec<String>,
    pub documents: Vec<String>,
    pub presence: Vec<Vec<bool>>,
}

impl BinaryMatrix {
    /// Documents where row `i` is present.
    pub fn present_in(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.presence[row].iter().enumerate().filter(|(_, &p)| p).map(|(j, _)| j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub lemma: String,
    pub total: u64,
    pub per_document: Vec<u32>,
}

impl TermDocumentMatrix {
    /// Counts a lemma stream over the given columns. Stream items whose
    /// document is not a column are ignored.
    pub fn from_stream(label: impl Into<String>, documents: Vec<String>, stream: &UnigramStream) -> Self {
        let mut documents = documents;
        documents.sort();
        documents.dedup();
        let col: HashMap<&str, usize> = documents.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let mut rows: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for item in &stream.items {
            let Some(&j) = col.get(item.document.as_str()) else {
                continue;
            };
            rows.entry(item.lemma.as_str()).or_insert_with(|| vec![0; documents.len()])[j] += 1;
        }
        let (unigrams, counts) = rows.into_iter().map(|(k, v)| (k.to_string(), v)).unzip();
        TermDocumentMatrix {
            label: label.into(),
            unigrams,
            documents,
            counts,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.unigrams.is_empty()
    }

    pub fn row_index(&self, lemma: &str) -> Option<usize> {
        self.unigrams.binary_search_by(|u| u.as_str().cmp(lemma)).ok()
    }

    pub fn row(&self, lemma: &str) -> Option<&[u32]> {
        self.row_index(lemma).map(|i| self.counts[i].as_slice())
    }

    pub fn total(&self, row: usize) -> u64 {
        self.counts[row].iter().map(|&c| u64::from(c)).sum()
    }

    pub fn grand_total(&self) -> u64 {
        (0..self.unigrams.len()).map(|i| self.total(i)).sum()
    }

    /// CSV with a `lemma` column followed by one column per document id.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["lemma".to_string()];
        header.extend(self.documents.iter().cloned());
        w.write_record(&header)?;
        for (u, row) in self.unigrams.iter().zip(&self.counts) {
            let mut rec = vec![u.clone()];
            rec.extend(row.iter().map(u32::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_csv<R: Read>(label: impl Into<String>, reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("lemma") {
            return Err(Error::parse("matrix", "first column must be `lemma`"));
        }
        let documents: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut unigrams = Vec::new();
        let mut counts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            unigrams.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| c.parse::<u32>().map_err(|_| Error::parse("matrix", format!("bad count `{c}`"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != documents.len() {
                return Err(Error::parse("matrix", "ragged row"));
            }
            counts.push(row);
        }
        Ok(TermDocumentMatrix {
            label: label.into(),
            unigrams,
            documents,
            counts,
        })
    }
}

/// Lemmatises, strips stopwords and counts. An all-stopword corpus yields a
/// matrix with no rows (and a warning).
pub fn build_tdm(
    label: impl Into<String>,
    corpus: &Corpus,
    dict: &LemmaDictionary,
    stop: &[StopwordList],
) -> Result<TermDocumentMatrix> {
    if corpus.is_empty() {
        return Err(Error::NoDocuments);
    }
    let stream = lemmatize_corpus(corpus, dict);
    let (filtered, _) = remove_stopwords(&stream, stop);
    let ids = corpus.documents.iter().map(|d| d.id.clone()).collect();
    let tdm = TermDocumentMatrix::from_stream(label, ids, &filtered);
    if tdm.is_empty() {
        warn!("matrix `{}` has no rows after stopword removal", tdm.label);
    }
    Ok(tdm)
}

fn check_cuts(low: f64, high: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low >= high {
        return Err(Error::Config(format!(
            "percentile cuts must satisfy 0 <= low < high <= 100 (got {low}, {high})"
        )));
    }
    Ok(())
}

/// Keeps unigrams whose occurrence is neither strictly below the low cut nor
/// strictly above the high cut.
///
/// In `Totals` mode the high cut is the nearest-rank `high`-th percentile of
/// the row totals and the low cut is its mirror image taken from the top
/// (the nearest-rank `100 - low`-th percentile of the negated totals), so
/// that `1/99` trims both tails of `1..=100` alike.
pub fn filter_percentile(
    tdm: &TermDocumentMatrix,
    low: f64,
    high: f64,
    mode: PercentileMode,
) -> Result<ImportantUnigramSet> {
    check_cuts(low, high)?;
    if tdm.is_empty() {
        return Err(Error::Empty("filter_percentile: matrix has no rows"));
    }
    let keep: Vec<bool> = match mode {
        PercentileMode::Totals => {
            let totals: Vec<f64> = (0..tdm.unigrams.len()).map(|i| tdm.total(i) as f64).collect();
            let negated: Vec<f64> = totals.iter().map(|t| -t).collect();
            let high_cut = stats::percentile(&totals, high)?;
            let low_cut = -stats::percentile(&negated, 100.0 - low)?;
            totals.iter().map(|&t| t >= low_cut && t <= high_cut).collect()
        }
        PercentileMode::DocFrequency => {
            let n = tdm.documents.len().max(1) as f64;
            tdm.counts
                .iter()
                .map(|row| {
                    let pct = 100.0 * row.iter().filter(|&&c| c > 0).count() as f64 / n;
                    pct >= low && pct <= high
                })
                .collect()
        }
    };
    Ok(ImportantUnigramSet {
        label: tdm.label.clone(),
        unigrams: tdm
            .unigrams
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(u, _)| u.clone())
            .collect(),
        low_cut: low,
        high_cut: high,
        mode,
    })
}

/// Presence/absence over the selected rows.
pub fn binarize(tdm: &TermDocumentMatrix, selection: &[String]) -> Result<BinaryMatrix> {
    let mut unigrams = Vec::with_capacity(selection.len());
    let mut presence = Vec::with_capacity(selection.len());
    for lemma in selection {
        let row = tdm
            .row(lemma)
            .ok_or_else(|| Error::Validation(format!("`{lemma}` is not a row of `{}`", tdm.label)))?;
        unigrams.push(lemma.clone());
        presence.push(row.iter().map(|&c| c > 0).collect());
    }
    Ok(BinaryMatrix {
        label: tdm.label.clone(),
        unigrams,
        documents: tdm.documents.clone(),
        presence,
    })
}

/// Rows by descending total, ties broken lexicographically.
pub fn report_frequencies(tdm: &TermDocumentMatrix) -> Vec<FrequencyRow> {
    let mut rows: Vec<FrequencyRow> = tdm
        .unigrams
        .iter()
        .zip(&tdm.counts)
        .map(|(u, c)| FrequencyRow {
            lemma: u.clone(),
            total: c.iter().map(|&x| u64::from(x)).sum(),
            per_document: c.clone(),
        })
        .collect();
    rows.sort_by(|a, b| b.total.cmp(&a.total).then_with(|| a.lemma.cmp(&b.lemma)));
    rows
}

pub fn frequencies_csv(tdm: &TermDocumentMatrix) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["lemma".to_string(), "total".to_string()];
    header.extend(tdm.documents.iter().cloned());
    w.write_record(&header).expect("memory");
    for row in report_frequencies(tdm) {
        let mut rec = vec![row.lemma, row.total.to_string()];
        rec.extend(row.per_document.iter().map(u32::to_string));
        w.write_record(&rec).expect("memory");
    }
    w.into_inner().expect("memory")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContractionTable, Document, SetLabel};

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        let t = ContractionTable::bundled();
        Corpus::new(
            SetLabel::Training,
            docs.iter().map(|(id, text)| Document::from_text(*id, SetLabel::Training, *text, &t)).collect(),
        )
        .unwrap()
    }

    fn synthetic(totals: &[u32]) -> TermDocumentMatrix {
        TermDocumentMatrix {
            label: "t".into(),
            unigrams: (0..totals.len()).map(|i| format!("u{i:03}")).collect(),
            documents: vec!["d".into()],
            counts: totals.iter().map(|&t| vec![t]).collect(),
        }
    }

    #[test]
    fn hand_counted_matrix() {
        let c = corpus(&[("d1", "flu flu"), ("d2", "flu cough")]);
        let m = build_tdm("x", &c, &LemmaDictionary::new(), &[]).unwrap();
        assert_eq!(m.unigrams, vec!["cough", "flu"]);
        assert_eq!(m.counts, vec![vec![0, 1], vec![2, 1]]);
        assert_eq!(m.grand_total(), 4);
    }

    #[test]
    fn degenerate_matrices() {
        let c = corpus(&[("d1", "the the")]);
        let stop = StopwordList::new("s", ["the"]).unwrap();
        assert!(build_tdm("x", &c, &LemmaDictionary::new(), &[stop]).unwrap().is_empty());
        let one = build_tdm("x", &corpus(&[("d", "flu")]), &LemmaDictionary::new(), &[]).unwrap();
        assert_eq!(one.counts, vec![vec![1]]);
        let none = Corpus::new(SetLabel::Training, vec![]).unwrap();
        assert!(matches!(build_tdm("x", &none, &LemmaDictionary::new(), &[]), Err(Error::NoDocuments)));
    }

    #[test]
    fn percentile_trims_both_tails() {
        let totals: Vec<u32> = (1..=100).collect();
        let m = synthetic(&totals);
        let set = filter_percentile(&m, 1.0, 99.0, PercentileMode::Totals).unwrap();
        assert_eq!(set.unigrams.len(), 98);
        assert!(!set.contains("u000"));
        assert!(!set.contains("u099"));
        let all = filter_percentile(&m, 0.0, 100.0, PercentileMode::Totals).unwrap();
        assert_eq!(all.unigrams, m.unigrams);
    }

    #[test]
    fn percentile_edge_cases() {
        let flat = synthetic(&[5; 40]);
        assert_eq!(filter_percentile(&flat, 1.0, 99.0, PercentileMode::Totals).unwrap().unigrams.len(), 40);
        let single = synthetic(&[3]);
        assert_eq!(filter_percentile(&single, 1.0, 99.0, PercentileMode::Totals).unwrap().unigrams.len(), 1);
        assert!(matches!(
            filter_percentile(&single, 50.0, 50.0, PercentileMode::Totals),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn doc_frequency_mode() {
        let m = TermDocumentMatrix {
            label: "t".into(),
            unigrams: vec!["a".into(), "b".into(), "c".into()],
            documents: (0..4).map(|i| i.to_string()).collect(),
            counts: vec![vec![1, 1, 1, 1], vec![1, 0, 0, 0], vec![2, 2, 0, 0]],
        };
        let set = filter_percentile(&m, 30.0, 90.0, PercentileMode::DocFrequency).unwrap();
        assert_eq!(set.unigrams, vec!["c"]);
    }

    #[test]
    fn binarize_rows() {
        let m = TermDocumentMatrix {
            label: "t".into(),
            unigrams: vec!["a".into(), "b".into()],
            documents: vec!["x".into(), "y".into(), "z".into()],
            counts: vec![vec![2, 0, 1], vec![0, 3, 0]],
        };
        let b = binarize(&m, &["a".to_string()]).unwrap();
        assert_eq!(b.presence, vec![vec![true, false, true]]);
        assert!(binarize(&m, &["q".to_string()]).is_err());
    }

    #[test]
    fn frequencies_sorted_with_ties() {
        let m = TermDocumentMatrix {
            label: "t".into(),
            unigrams: vec!["b".into(), "cough".into(), "flu".into()],
            documents: vec!["d".into()],
            counts: vec![vec![1], vec![1], vec![3]],
        };
        let r: Vec<(String, u64)> = report_frequencies(&m).into_iter().map(|r| (r.lemma, r.total)).collect();
        assert_eq!(r, vec![("flu".into(), 3), ("b".into(), 1), ("cough".into(), 1)]);
        assert_eq!(
            String::from_utf8(frequencies_csv(&m)).unwrap(),
            "lemma,total,d\nflu,3,3\nb,1,1\ncough,1,1\n"
        );
    }

    #[test]
    fn csv_round_trip() {
        let c = corpus(&[("d1", "flu flu"), ("d2", "flu cough")]);
        let m = build_tdm("x", &c, &LemmaDictionary::new(), &[]).unwrap();
        let back = TermDocumentMatrix::read_csv("x", &m.to_csv_bytes()[..]).unwrap();
        assert_eq!(back, m);
        let set = filter_percentile(&m, 0.0, 100.0, PercentileMode::Totals).unwrap();
        assert_eq!(ImportantUnigramSet::from_text(&set.to_text()).unwrap(), set);
    }
}
