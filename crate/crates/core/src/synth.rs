//! Seeded synthetic interview corpus with a known correlation structure.
//!
//! Every transcript document repeats a few planted sentence kinds. Per
//! document `i` (0-based) the counts are:
//!
//! | kind | words                         | count in doc i                  |
//! |------|-------------------------------|---------------------------------|
//! | A    | code word + first category    | `i + 1`                         |
//! | V    | code word + second category   | `[5,4,3,2,1,1,2,3,4,5][i]`      |
//! | B    | one word                      | `[1,2,3,4,6,5,7,8,9,10][i]`     |
//! | C    | one word                      | `[3,2,1,4,5,6,8,7,9,10][i]`     |
//! | D    | one word                      | `[1,2,3,7,5,6,4,8,9,10][i]`     |
//! | fill | stopwords only                | 6                               |
//!
//! With the project stopword list the B, C and D words correlate with the
//! first category at about 0.988, 0.939 and 0.891, so the default search
//! stops at threshold 0.90 with coverage 195/310.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::store::write_atomic;

pub const DOCUMENTS: usize = 10;
pub const A_COUNTS: [usize; DOCUMENTS] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const V_COUNTS: [usize; DOCUMENTS] = [5, 4, 3, 2, 1, 1, 2, 3, 4, 5];
pub const B_COUNTS: [usize; DOCUMENTS] = [1, 2, 3, 4, 6, 5, 7, 8, 9, 10];
pub const C_COUNTS: [usize; DOCUMENTS] = [3, 2, 1, 4, 5, 6, 8, 7, 9, 10];
pub const D_COUNTS: [usize; DOCUMENTS] = [1, 2, 3, 7, 5, 6, 4, 8, 9, 10];
pub const FILLERS_PER_DOC: usize = 6;
pub const WORDS_PER_SENTENCE: usize = 5;

pub const PROJECT_STOPWORDS: &str = "well\nso\nwe\njust\nthen\nwhat\nabout\nand\nyes\nno\nnot\nokay\n";

#[derive(Debug, Clone, Copy)]
pub struct PairLayout {
    pub pair: &'static str,
    pub id_prefix: &'static str,
    pub category_a: &'static [&'static str],
    pub category_v: &'static [&'static str],
    pub code_a: &'static [&'static str],
    pub code_v: &'static str,
    pub b: &'static str,
    pub c: &'static str,
    pub d: &'static str,
}

pub const LAYOUTS: [PairLayout; 2] = [
    PairLayout {
        pair: "training",
        id_prefix: "tr",
        category_a: &["antibiotic", "antibiotics"],
        category_v: &["fever", "fevers"],
        code_a: &["prescribe", "prescribed", "prescribing"],
        code_v: "temperature",
        b: "antiviral",
        c: "pharmacy",
        d: "nurse",
    },
    PairLayout {
        pair: "testing",
        id_prefix: "te",
        category_a: &["antiviral", "antivirals"],
        category_v: &["cough", "coughs"],
        code_a: &["antibiotic", "antibiotics"],
        code_v: "sputum",
        b: "tamiflu",
        c: "dose",
        d: "school",
    },
];

const OPENERS: [&str; 5] = ["Well", "So", "Yes", "No", "And"];
const FILLERS: [&str; 5] = [
    "Well so we just then.",
    "No we just not then.",
    "Yes and so we then.",
    "Okay so what about then.",
    "So what about it then.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    A,
    V,
    B,
    C,
    D,
    Filler,
}

/// A generated sentence and its byte range in the document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSentence {
    pub document: String,
    pub kind: Kind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub files: Vec<PathBuf>,
    pub sentences: Vec<(String, PlantedSentence)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub seed: u64,
    /// Also write `validated_segments.csv` listing every planted topical
    /// sentence.
    pub validated: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 7,
            validated: false,
        }
    }
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn transcript<R: Rng>(rng: &mut R, layout: &PairLayout, i: usize) -> Vec<(Kind, String)> {
    let mut sentences = Vec::new();
    for _ in 0..A_COUNTS[i] {
        let s = format!("{} we {} {} so.", pick(rng, &OPENERS), pick(rng, layout.code_a), pick(rng, layout.category_a));
        sentences.push((Kind::A, s));
    }
    for _ in 0..V_COUNTS[i] {
        let s = format!("{} we {} {} so.", pick(rng, &OPENERS), layout.code_v, pick(rng, layout.category_v));
        sentences.push((Kind::V, s));
    }
    for (kind, word, counts) in [(Kind::B, layout.b, B_COUNTS), (Kind::C, layout.c, C_COUNTS), (Kind::D, layout.d, D_COUNTS)] {
        for _ in 0..counts[i] {
            sentences.push((kind, format!("{} so we {word} then.", pick(rng, &OPENERS))));
        }
    }
    for _ in 0..FILLERS_PER_DOC {
        sentences.push((Kind::Filler, pick(rng, &FILLERS).to_string()));
    }
    sentences.shuffle(rng);
    sentences
}

fn layout_text<R: Rng>(rng: &mut R, document: &str, sentences: Vec<(Kind, String)>) -> (String, Vec<PlantedSentence>) {
    let mut text = String::new();
    let mut planted = Vec::new();
    let mut in_paragraph = 0;
    let mut paragraph_len = rng.gen_range(3..=8);
    for (kind, s) in sentences {
        if in_paragraph == paragraph_len {
            text.push_str("\n\n");
            in_paragraph = 0;
            paragraph_len = rng.gen_range(3..=8);
        } else if in_paragraph > 0 {
            text.push(' ');
        }
        planted.push(PlantedSentence {
            document: document.to_string(),
            kind,
            start: text.len(),
            end: text.len() + s.len(),
        });
        text.push_str(&s);
        in_paragraph += 1;
    }
    text.push('\n');
    (text, planted)
}

/// Writes both pairs of the synthetic corpus plus the project stopword list
/// under `<root>/input`.
pub fn write_inputs(root: &Path, opts: SynthOptions) -> Result<SynthOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let input = root.join("input");
    let mut out = SynthOutput::default();
    for layout in &LAYOUTS {
        let tdir = input.join(format!("{}_transcripts", layout.pair));
        let qdir = input.join(format!("{}_questions", layout.pair));
        fs::create_dir_all(&tdir)?;
        fs::create_dir_all(&qdir)?;
        for i in 0..DOCUMENTS {
            let id = format!("{}{:02}", layout.id_prefix, i + 1);
            let sentences = transcript(&mut rng, layout, i);
            let (text, planted) = layout_text(&mut rng, &id, sentences);
            let path = tdir.join(format!("{id}.txt"));
            write_atomic(&path, text.as_bytes())?;
            out.files.push(path);
            out.sentences.extend(planted.into_iter().map(|p| (layout.pair.to_string(), p)));
        }
        let questions = [
            format!(
                "What about {}? And what about {} then?\n",
                layout.category_a[1], layout.category_v[0]
            ),
            format!(
                "So what about {} and {}?\n\nWhat about {} then?\n",
                layout.category_a[0], layout.category_v[1], layout.category_a[0]
            ),
        ];
        for (j, q) in questions.iter().enumerate() {
            let path = qdir.join(format!("q{}.txt", j + 1));
            write_atomic(&path, q.as_bytes())?;
            out.files.push(path);
        }
    }
    let stop = input.join("stopwords").join("project.txt");
    fs::create_dir_all(stop.parent().expect("has parent"))?;
    write_atomic(&stop, PROJECT_STOPWORDS.as_bytes())?;
    out.files.push(stop);
    if opts.validated {
        let path = input.join("validated_segments.csv");
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["set", "document", "start", "end"])?;
        for (pair, s) in out.sentences.iter().filter(|(_, s)| s.kind != Kind::Filler) {
            wtr.write_record([pair.as_str(), &s.document, &s.start.to_string(), &s.end.to_string()])?;
        }
        let bytes = wtr.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        write_atomic(&path, &bytes)?;
        out.files.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    fn f(v: &[usize]) -> Vec<f64> {
        v.iter().map(|&x| x as f64).collect()
    }

    #[test]
    fn planted_correlations() {
        let a = f(&A_COUNTS);
        let r = |v: &[usize]| pearson(&f(v), &a).unwrap();
        assert!((r(&B_COUNTS) - (1.0 - 12.0 / 990.0)).abs() < 1e-12);
        assert!((r(&C_COUNTS) - (1.0 - 60.0 / 990.0)).abs() < 1e-12);
        assert!((r(&D_COUNTS) - (1.0 - 108.0 / 990.0)).abs() < 1e-12);
        assert!(pearson(&f(&V_COUNTS), &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let o1 = write_inputs(d1.path(), SynthOptions { seed: 3, validated: true }).unwrap();
        let o2 = write_inputs(d2.path(), SynthOptions { seed: 3, validated: true }).unwrap();
        assert_eq!(o1.sentences, o2.sentences);
        for (p1, p2) in o1.files.iter().zip(&o2.files) {
            assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
        }
        let text = fs::read_to_string(d1.path().join("input/training_transcripts/tr03.txt")).unwrap();
        for (_, s) in o1.sentences.iter().filter(|(_, s)| s.document == "tr03") {
            let sentence = &text[s.start..s.end];
            assert!(sentence.ends_with('.'));
            assert_eq!(sentence.split_whitespace().count(), WORDS_PER_SENTENCE);
        }
    }
}
