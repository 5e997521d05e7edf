//! Stage orchestration over a project directory.
//!
//! Inputs live under `input/`:
//!
//! ```text
//! input/training_transcripts/*.txt   input/training_questions/*.txt
//! input/testing_transcripts/*.txt    input/testing_questions/*.txt
//! input/stopwords/*.txt              extra stopword lists (one word per line)
//! input/wordlists/<name>.txt         replaces the bundled content-word lists
//! input/contractions.csv             replaces the bundled contraction table
//! input/validated_segments.csv       manually validated segments (optional)
//! ```
//!
//! Each stage reads fresh upstream artifacts, writes its own through the
//! project manifest, and is skipped when its outputs are already fresh.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coding::{
    annotate_content_words, attach_codes, attach_polarity, concordance, derive_categories, flag_outlier_categories,
    iterative_code_search, read_segments, relation_stats, segments_csv_bytes, Category, CodeDiscovery, CodedSegment,
    OutlierFlag, SearchParams, SearchTrace, SegmentStatus, WordLists,
};
use crate::corpus::{ingest_documents, text_files, ContractionTable, Corpus, SetLabel};
use crate::error::{Error, Result};
use crate::graph::{
    cooccurrence_graph, degree_distribution_fit, ego_subgraph, girvan_newman, module_significance, DegreeFit,
    Dendrogram, ExportGraph, ModuleReport, Partition, UnigramGraph, VertexRole, Verdict,
};
use crate::lexicon::{
    extract_vocabulary, lemmatize_corpus, remove_stopwords, LemmaDictionary, Provenance, StopwordList, StreamItem,
    UnigramStream,
};
use crate::matrix::{binarize, filter_percentile, frequencies_csv, BinaryMatrix, ImportantUnigramSet, PercentileMode, TermDocumentMatrix};
use crate::review::{self, ReviewAction};
use crate::store::{hash_dir, sha256_hex, write_atomic, Freshness, Project};

pub const CONFIG_FILE: &str = "qda.toml";
pub const REPORT_DIR: &str = "report";
pub const REVIEW_LOG: &str = "review_log.jsonl";
pub const DICTIONARY: &str = "dictionary.csv";
pub const DICTIONARY_LOG: &str = "dictionary_log.csv";
const CONFIG_ARTIFACT: &str = "config.toml";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Document,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub low_pct: f64,
    pub high_pct: f64,
    pub percentile_mode: PercentileMode,
    pub corr_start: f64,
    pub corr_step: f64,
    pub coverage_target: f64,
    pub corr_floor: f64,
    pub proximity_window: usize,
    pub outlier_ratio: f64,
    pub cooccurrence_granularity: Granularity,
    pub min_cluster_size: usize,
    pub alpha: f64,
    pub ego_focus: String,
    pub ego_extras: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            config_version: 1,
            low_pct: 1.0,
            high_pct: 99.0,
            percentile_mode: PercentileMode::Totals,
            corr_start: 1.0,
            corr_step: 0.05,
            coverage_target: 0.5,
            corr_floor: 0.5,
            proximity_window: 1,
            outlier_ratio: 2.0,
            cooccurrence_granularity: Granularity::Document,
            min_cluster_size: 2,
            alpha: 0.05,
            ego_focus: "antibiotic".into(),
            ego_extras: vec!["antiviral".into()],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.low_pct) || !(0.0..=100.0).contains(&self.high_pct) || self.low_pct >= self.high_pct {
            return Err(Error::Config(format!(
                "need 0 <= low_pct < high_pct <= 100, got {} and {}",
                self.low_pct, self.high_pct
            )));
        }
        self.search_params().validate()?;
        if self.min_cluster_size < 2 {
            return Err(Error::Config("min_cluster_size must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.outlier_ratio > 0.0) {
            return Err(Error::Config("outlier_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            start: self.corr_start,
            step: self.corr_step,
            target: self.coverage_target,
            floor: self.corr_floor,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Parses a config file and applies `key=value` overrides. Values are
    /// read as TOML and fall back to plain strings.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{CONFIG_FILE}: {e}")))?;
        for (k, v) in overrides {
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.clone()));
            table.insert(k.clone(), value);
        }
        let cfg: PipelineConfig = table.try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(root: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = match fs::read_to_string(root.join(CONFIG_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        Self::parse(&text, overrides)
    }
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetSpec {
    pub name: &'static str,
    pub label: SetLabel,
    pub pair: &'static str,
}

pub const SETS: [SetSpec; 4] = [
    SetSpec {
        name: "training_questions",
        label: SetLabel::Questions,
        pair: "training",
    },
    SetSpec {
        name: "training_transcripts",
        label: SetLabel::Training,
        pair: "training",
    },
    SetSpec {
        name: "testing_questions",
        label: SetLabel::Questions,
        pair: "testing",
    },
    SetSpec {
        name: "testing_transcripts",
        label: SetLabel::Testing,
        pair: "testing",
    },
];

pub const PAIRS: [&str; 2] = ["training", "testing"];
pub const GRAPH_KINDS: [&str; 2] = ["full", "segments"];

pub fn transcripts_of(pair: &str) -> String {
    format!("{pair}_transcripts")
}

pub fn questions_of(pair: &str) -> String {
    format!("{pair}_questions")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Vocab,
    Lemmatise,
    Tdm,
    Filter,
    Categories,
    Search,
    Annotate,
    Relations,
    Graph,
    Cluster,
    Significance,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Ingest,
        Stage::Vocab,
        Stage::Lemmatise,
        Stage::Tdm,
        Stage::Filter,
        Stage::Categories,
        Stage::Search,
        Stage::Annotate,
        Stage::Relations,
        Stage::Graph,
        Stage::Cluster,
        Stage::Significance,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Vocab => "vocab",
            Stage::Lemmatise => "lemmatise",
            Stage::Tdm => "tdm",
            Stage::Filter => "filter",
            Stage::Categories => "categories",
            Stage::Search => "search",
            Stage::Annotate => "annotate",
            Stage::Relations => "relations",
            Stage::Graph => "graph",
            Stage::Cluster => "cluster",
            Stage::Significance => "significance",
            Stage::Report => "report",
        }
    }

    /// Stage whose run writes the named artifact.
    pub fn producing(artifact: &str) -> Option<Stage> {
        const PREFIXES: [(&str, Stage); 22] = [
            ("corpus_", Stage::Ingest),
            ("draft_dictionary", Stage::Vocab),
            ("review_groups", Stage::Vocab),
            ("dictionary", Stage::Vocab),
            ("stream_", Stage::Lemmatise),
            ("tdm_", Stage::Tdm),
            ("frequencies_", Stage::Tdm),
            ("important_", Stage::Filter),
            ("categories_", Stage::Categories),
            ("segments_auto_", Stage::Search),
            ("search_trace_", Stage::Search),
            ("codebook_", Stage::Search),
            ("codes_", Stage::Search),
            ("segments_", Stage::Annotate),
            ("polarity_", Stage::Annotate),
            ("review_state_", Stage::Annotate),
            ("relations_", Stage::Relations),
            ("graph_", Stage::Graph),
            ("partition_", Stage::Cluster),
            ("modules_", Stage::Significance),
            ("report_", Stage::Report),
            ("review_log", Stage::Annotate),
        ];
        PREFIXES.iter().find(|(p, _)| artifact.starts_with(p)).map(|(_, s)| *s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.as_str() == s || (s == "lemmatize" && *st == Stage::Lemmatise))
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Fresh,
    Stale,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub state: StageState,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    /// `ran` or `fresh` (skipped).
    pub result: String,
    pub artifacts: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<StageOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeReport {
    pub categories: Vec<Category>,
    pub discovery: CodeDiscovery,
    pub outliers: Vec<OutlierFlag>,
    pub trace: SearchTrace,
    pub warnings: Vec<String>,
}

impl CodeReport {
    pub fn roles(&self) -> HashMap<String, VertexRole> {
        let mut roles: HashMap<String, VertexRole> = self
            .discovery
            .codes
            .iter()
            .map(|tc| (tc.lemma.clone(), VertexRole::TransitionalCode))
            .collect();
        for c in &self.categories {
            roles.insert(c.lemma.clone(), VertexRole::Category);
        }
        roles
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub partition: Partition,
    pub dendrogram: Dendrogram,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub modules: Vec<ModuleReport>,
    pub degree_fit: Option<DegreeFit>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewState {
    pub applied: usize,
    pub orphans: Vec<ReviewAction>,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serialisable");
    out.push(b'\n');
    out
}

/// Loads the working dictionary and its edit log.
pub fn load_dictionary(project: &Project, allow_stale: bool) -> Result<LemmaDictionary> {
    let dict = project.load_artifact(DICTIONARY, allow_stale)?;
    let log = match project.entry(DICTIONARY_LOG) {
        Some(_) => Some(project.load_artifact(DICTIONARY_LOG, true)?),
        None => None,
    };
    LemmaDictionary::read_csv(&dict[..], log.as_deref())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEdit {
    pub key: String,
    pub lemma: String,
    pub changed: bool,
    pub version: u64,
}

/// Manual dictionary edit. `base_version`, when given, must equal the
/// current version.
pub fn edit_dictionary(project: &mut Project, key: &str, lemma: &str, base_version: Option<u64>) -> Result<DictionaryEdit> {
    let mut dict = load_dictionary(project, true)?;
    if let Some(base) = base_version {
        if base != dict.version() {
            return Err(Error::Conflict(format!(
                "dictionary is at version {}, edit was based on {base}",
                dict.version()
            )));
        }
    }
    let changed = dict.set(key, lemma, Provenance::Manual)?;
    if changed {
        project.update_artifact(DICTIONARY_LOG, &dict.log_csv_bytes(), Some(dict.version()))?;
        project.update_artifact(DICTIONARY, &dict.to_csv_bytes(), Some(dict.version()))?;
        info!("dictionary: {key} -> {lemma} (version {})", dict.version());
    }
    Ok(DictionaryEdit {
        key: key.to_string(),
        lemma: lemma.to_string(),
        changed,
        version: dict.version(),
    })
}

pub fn load_review_log(project: &Project) -> Result<Vec<ReviewAction>> {
    match project.entry(REVIEW_LOG) {
        Some(_) => review::parse_log(&project.load_text(REVIEW_LOG, true)?),
        None => Ok(Vec::new()),
    }
}

/// Applies one review action to the stored segments and appends it to the
/// log. `base_version`, when given, must equal the current log length.
pub fn apply_review(project: &mut Project, action: ReviewAction, base_version: Option<usize>) -> Result<CodedSegment> {
    action.validate()?;
    let log = load_review_log(project)?;
    if let Some(base) = base_version {
        if base != log.len() {
            return Err(Error::Conflict(format!(
                "review log is at version {}, action was based on {base}",
                log.len()
            )));
        }
    }
    let name = format!("segments_{}.csv", action.segment.pair);
    if project.entry(&name).is_none() {
        return Err(Error::NotFound(format!("segment `{}`", action.segment)));
    }
    let mut segments = read_segments(&project.load_artifact(&name, true)?[..])?;
    let seg = segments
        .iter_mut()
        .find(|s| action.segment.matches(s))
        .ok_or_else(|| Error::NotFound(format!("segment `{}`", action.segment)))?;
    action.apply(seg);
    let updated = seg.clone();
    let mut text = project.entry(REVIEW_LOG).map_or(Ok(String::new()), |_| project.load_text(REVIEW_LOG, true))?;
    text.push_str(&review::log_line(&action));
    project.save_artifact(REVIEW_LOG, text.as_bytes(), "review", &[], None)?;
    project.update_artifact(&name, &segments_csv_bytes(&segments), None)?;
    Ok(updated)
}

pub struct Pipeline {
    pub project: Project,
    pub config: PipelineConfig,
}

struct StageIo {
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Pipeline {
    pub fn open(root: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let project = Project::open(root)?;
        let config = PipelineConfig::load(root, overrides)?;
        Ok(Pipeline { project, config })
    }

    /// Creates the project skeleton and a default config file.
    pub fn init(root: &Path) -> Result<Self> {
        let project = Project::init(root)?;
        for set in SETS {
            fs::create_dir_all(project.input_path().join(set.name))?;
        }
        fs::create_dir_all(project.input_path().join("stopwords"))?;
        let cfg = root.join(CONFIG_FILE);
        if !cfg.exists() {
            let text = format!("# qda pipeline configuration\n{}", PipelineConfig::default().to_toml());
            write_atomic(&cfg, text.as_bytes())?;
        }
        Self::open(root, &[])
    }

    fn set_dir(&self, set: &str) -> std::path::PathBuf {
        self.project.input_path().join(set)
    }

    /// Sets with at least one input document.
    pub fn active_sets(&self) -> Vec<SetSpec> {
        SETS.iter()
            .copied()
            .filter(|s| text_files(&self.set_dir(s.name)).is_ok_and(|f| !f.is_empty()))
            .collect()
    }

    /// Pairs whose transcripts and questions are both present.
    pub fn active_pairs(&self) -> Vec<&'static str> {
        let sets: BTreeSet<&str> = self.active_sets().iter().map(|s| s.name).collect();
        PAIRS
            .iter()
            .copied()
            .filter(|p| sets.contains(transcripts_of(p).as_str()) && sets.contains(questions_of(p).as_str()))
            .collect()
    }

    /// Records input digests and the effective configuration in the
    /// manifest so that changed inputs make dependants stale.
    pub fn sync_sources(&mut self) -> Result<()> {
        let input = self.project.input_path();
        for set in SETS {
            let h = hash_dir(&input.join(set.name))?;
            self.project.record_source(&format!("src_{}", set.name), &format!("input/{}", set.name), &h)?;
        }
        let h = hash_dir(&input.join("stopwords"))?;
        self.project.record_source("src_stopwords", "input/stopwords", &h)?;
        let h = hash_dir(&input.join("wordlists"))?;
        self.project.record_source("src_wordlists", "input/wordlists", &h)?;
        for (name, file) in [("src_contractions", "contractions.csv"), ("src_validated", "validated_segments.csv")] {
            let bytes = match fs::read(input.join(file)) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            self.project.record_source(name, &format!("input/{file}"), &sha256_hex(&bytes))?;
        }
        let cfg = self.config.to_toml();
        if self.project.hash(CONFIG_ARTIFACT) != Some(sha256_hex(cfg.as_bytes()).as_str()) {
            self.project.save_artifact(CONFIG_ARTIFACT, cfg.as_bytes(), "config", &[], None)?;
        }
        Ok(())
    }

    fn io(&self, stage: Stage) -> StageIo {
        let sets: Vec<&str> = self.active_sets().iter().map(|s| s.name).collect();
        let pairs = self.active_pairs();
        let per_set = |f: &dyn Fn(&str) -> Vec<String>| -> Vec<String> { sets.iter().flat_map(|s| f(s)).collect() };
        let per_pair = |f: &dyn Fn(&str) -> Vec<String>| -> Vec<String> { pairs.iter().flat_map(|p| f(p)).collect() };
        let cfg = CONFIG_ARTIFACT.to_string();
        let (mut inputs, outputs) = match stage {
            Stage::Ingest => (
                [per_set(&|s| vec![format!("src_{s}")]), vec!["src_contractions".into()]].concat(),
                per_set(&|s| vec![format!("corpus_{s}.json")]),
            ),
            Stage::Vocab => (
                per_set(&|s| vec![format!("corpus_{s}.json")]),
                vec![
                    "draft_dictionary.csv".into(),
                    "review_groups.txt".into(),
                    DICTIONARY.into(),
                    DICTIONARY_LOG.into(),
                ],
            ),
            Stage::Lemmatise => (
                [
                    per_set(&|s| vec![format!("corpus_{s}.json")]),
                    vec![DICTIONARY.into(), "src_stopwords".into()],
                ]
                .concat(),
                per_set(&|s| vec![format!("stream_{s}.csv")]),
            ),
            Stage::Tdm => (
                per_set(&|s| vec![format!("corpus_{s}.json"), format!("stream_{s}.csv")]),
                per_set(&|s| vec![format!("tdm_{s}.csv"), format!("frequencies_{s}.csv")]),
            ),
            Stage::Filter => (
                [per_set(&|s| vec![format!("tdm_{s}.csv")]), vec![cfg.clone()]].concat(),
                per_set(&|s| vec![format!("important_{s}.txt")]),
            ),
            Stage::Categories => (
                [per_pair(&|p| vec![format!("tdm_{}.csv", questions_of(p))]), vec![cfg.clone()]].concat(),
                per_pair(&|p| vec![format!("categories_{p}.json")]),
            ),
            Stage::Search => (
                [
                    per_pair(&|p| {
                        let t = transcripts_of(p);
                        vec![
                            format!("corpus_{t}.json"),
                            format!("tdm_{t}.csv"),
                            format!("important_{t}.txt"),
                            format!("categories_{p}.json"),
                        ]
                    }),
                    vec![DICTIONARY.into(), cfg.clone()],
                ]
                .concat(),
                per_pair(&|p| {
                    vec![
                        format!("segments_auto_{p}.csv"),
                        format!("search_trace_{p}.csv"),
                        format!("codebook_{p}.csv"),
                        format!("codes_{p}.json"),
                    ]
                }),
            ),
            Stage::Annotate => (
                [
                    per_pair(&|p| vec![format!("segments_auto_{p}.csv"), format!("corpus_{}.json", transcripts_of(p))]),
                    vec!["src_wordlists".into()],
                ]
                .concat(),
                per_pair(&|p| {
                    vec![
                        format!("segments_{p}.csv"),
                        format!("polarity_{p}.csv"),
                        format!("review_state_{p}.json"),
                    ]
                }),
            ),
            Stage::Relations => (
                [
                    per_pair(&|p| vec![format!("segments_{p}.csv"), format!("codes_{p}.json")]),
                    vec![cfg.clone()],
                ]
                .concat(),
                per_pair(&|p| vec![format!("relations_{p}.csv")]),
            ),
            Stage::Graph => (
                [
                    per_pair(&|p| {
                        let t = transcripts_of(p);
                        vec![
                            format!("stream_{t}.csv"),
                            format!("tdm_{t}.csv"),
                            format!("important_{t}.txt"),
                            format!("codes_{p}.json"),
                            format!("segments_{p}.csv"),
                        ]
                    }),
                    vec![cfg.clone()],
                ]
                .concat(),
                per_pair(&|p| GRAPH_KINDS.iter().map(|k| format!("graph_{k}_{p}.graphml")).collect()),
            ),
            Stage::Cluster => (
                [
                    per_pair(&|p| GRAPH_KINDS.iter().map(|k| format!("graph_{k}_{p}.graphml")).collect()),
                    vec![cfg.clone()],
                ]
                .concat(),
                per_pair(&|p| GRAPH_KINDS.iter().map(|k| format!("partition_{k}_{p}.json")).collect()),
            ),
            Stage::Significance => (
                [
                    per_pair(&|p| {
                        GRAPH_KINDS
                            .iter()
                            .flat_map(|k| [format!("graph_{k}_{p}.graphml"), format!("partition_{k}_{p}.json")])
                            .collect()
                    }),
                    vec![cfg.clone()],
                ]
                .concat(),
                per_pair(&|p| GRAPH_KINDS.iter().map(|k| format!("modules_{k}_{p}.json")).collect()),
            ),
            Stage::Report => (
                [
                    per_set(&|s| vec![format!("corpus_{s}.json"), format!("tdm_{s}.csv"), format!("frequencies_{s}.csv"), format!("important_{s}.txt")]),
                    per_pair(&|p| {
                        let mut v = vec![
                            format!("search_trace_{p}.csv"),
                            format!("codes_{p}.json"),
                            format!("segments_auto_{p}.csv"),
                            format!("segments_{p}.csv"),
                            format!("review_state_{p}.json"),
                            format!("relations_{p}.csv"),
                        ];
                        for k in GRAPH_KINDS {
                            v.push(format!("graph_{k}_{p}.graphml"));
                            v.push(format!("partition_{k}_{p}.json"));
                            v.push(format!("modules_{k}_{p}.json"));
                        }
                        v
                    }),
                    vec![DICTIONARY.into(), "src_validated".into(), cfg.clone()],
                ]
                .concat(),
                [
                    vec!["report_summary.json".to_string()],
                    per_pair(&|p| {
                        let mut v = vec![format!("report_ego_{p}.graphml"), format!("report_ego_{p}.dot")];
                        v.extend(GRAPH_KINDS.iter().map(|k| format!("report_graph_{k}_{p}.graphml")));
                        v.extend(GRAPH_KINDS.iter().map(|k| format!("report_graph_{k}_{p}.dot")));
                        v
                    }),
                ]
                .concat(),
            ),
        };
        inputs.sort();
        inputs.dedup();
        StageIo { inputs, outputs }
    }

    pub fn stage_state(&self, stage: Stage) -> StageState {
        let io = self.io(stage);
        let wanted: BTreeSet<&String> = io.inputs.iter().collect();
        let mut state = StageState::Fresh;
        for out in &io.outputs {
            match self.project.freshness(out) {
                Freshness::Missing => return StageState::Missing,
                Freshness::Stale => state = StageState::Stale,
                Freshness::Fresh => {
                    let recorded: BTreeSet<&String> = self.project.entry(out).expect("present").inputs.keys().collect();
                    if recorded != wanted {
                        state = StageState::Stale;
                    }
                }
            }
        }
        state
    }

    pub fn status(&self) -> Vec<StageStatus> {
        Stage::ALL
            .iter()
            .map(|&stage| StageStatus {
                stage,
                state: self.stage_state(stage),
                outputs: self.io(stage).outputs,
            })
            .collect()
    }

    /// Stages that must run (again) before `stage` can, in pipeline order.
    fn missing_upstream(&self, stage: Stage) -> Vec<Stage> {
        let mut need = BTreeSet::new();
        let mut todo = vec![stage];
        while let Some(s) = todo.pop() {
            for input in self.io(s).inputs {
                if self.project.freshness(&input) == Freshness::Fresh {
                    continue;
                }
                if let Some(p) = Stage::producing(&input) {
                    if p != stage && need.insert(p) {
                        todo.push(p);
                    }
                }
            }
        }
        need.into_iter().collect()
    }

    /// Runs one stage. Upstream artifacts must be fresh; fresh outputs are
    /// kept unless `force`.
    pub fn run_stage(&mut self, stage: Stage, force: bool) -> Result<StageOutcome> {
        self.sync_sources()?;
        if stage == Stage::Ingest && self.active_sets().is_empty() {
            return Err(Error::NoDocuments);
        }
        let upstream = self.missing_upstream(stage);
        if !upstream.is_empty() {
            return Err(Error::Dependency {
                stage: stage.to_string(),
                rerun: upstream.iter().map(|s| s.to_string()).collect(),
            });
        }
        let io = self.io(stage);
        if !force && self.stage_state(stage) == StageState::Fresh {
            return Ok(StageOutcome {
                stage,
                result: "fresh".into(),
                artifacts: self.hashes(&io.outputs),
                warnings: Vec::new(),
            });
        }
        info!("running stage {stage}");
        let inputs: Vec<&str> = io.inputs.iter().map(String::as_str).collect();
        let mut ctx = StageCtx {
            inputs,
            warnings: Vec::new(),
        };
        match stage {
            Stage::Ingest => self.ingest(&mut ctx)?,
            Stage::Vocab => self.vocab(&mut ctx)?,
            Stage::Lemmatise => self.lemmatise(&mut ctx)?,
            Stage::Tdm => self.tdm(&mut ctx)?,
            Stage::Filter => self.filter(&mut ctx)?,
            Stage::Categories => self.categories(&mut ctx)?,
            Stage::Search => self.search(&mut ctx)?,
            Stage::Annotate => self.annotate(&mut ctx)?,
            Stage::Relations => self.relations(&mut ctx)?,
            Stage::Graph => self.graph(&mut ctx)?,
            Stage::Cluster => self.cluster(&mut ctx)?,
            Stage::Significance => self.significance(&mut ctx)?,
            Stage::Report => self.report(&mut ctx)?,
        }
        Ok(StageOutcome {
            stage,
            result: "ran".into(),
            artifacts: self.hashes(&io.outputs),
            warnings: ctx.warnings,
        })
    }

    /// Runs every stage in order, stopping at the first error.
    pub fn run_all(&mut self, force: bool) -> Result<RunSummary> {
        let mut summary = RunSummary::default();
        for stage in Stage::ALL {
            summary.stages.push(self.run_stage(stage, force)?);
        }
        Ok(summary)
    }

    fn hashes(&self, names: &[String]) -> BTreeMap<String, String> {
        names
            .iter()
            .filter_map(|n| self.project.hash(n).map(|h| (n.clone(), h.to_string())))
            .collect()
    }

    fn save(&mut self, ctx: &StageCtx, stage: Stage, name: &str, bytes: &[u8], dict_version: Option<u64>) -> Result<()> {
        self.project.save_artifact(name, bytes, stage.as_str(), &ctx.inputs, dict_version)?;
        Ok(())
    }

    pub fn load_corpus(&self, set: &str) -> Result<Corpus> {
        Ok(serde_json::from_slice(&self.project.load_artifact(&format!("corpus_{set}.json"), false)?)?)
    }

    pub fn load_stream(&self, set: &str) -> Result<UnigramStream> {
        UnigramStream::read_csv(&self.project.load_artifact(&format!("stream_{set}.csv"), false)?[..])
    }

    pub fn load_tdm(&self, set: &str) -> Result<TermDocumentMatrix> {
        TermDocumentMatrix::read_csv(set, &self.project.load_artifact(&format!("tdm_{set}.csv"), false)?[..])
    }

    pub fn load_important(&self, set: &str) -> Result<ImportantUnigramSet> {
        ImportantUnigramSet::from_text(&self.project.load_text(&format!("important_{set}.txt"), false)?)
    }

    pub fn load_codes(&self, pair: &str) -> Result<CodeReport> {
        Ok(serde_json::from_slice(&self.project.load_artifact(&format!("codes_{pair}.json"), false)?)?)
    }

    pub fn load_segments(&self, pair: &str) -> Result<Vec<CodedSegment>> {
        read_segments(&self.project.load_artifact(&format!("segments_{pair}.csv"), false)?[..])
    }

    pub fn load_graph(&self, kind: &str, pair: &str) -> Result<UnigramGraph> {
        let text = self.project.load_text(&format!("graph_{kind}_{pair}.graphml"), false)?;
        ExportGraph::from_graphml(&text)?.to_unigram_graph()
    }

    pub fn load_cluster(&self, kind: &str, pair: &str) -> Result<ClusterResult> {
        Ok(serde_json::from_slice(&self.project.load_artifact(&format!("partition_{kind}_{pair}.json"), false)?)?)
    }

    fn contractions(&self) -> Result<ContractionTable> {
        let path = self.project.input_path().join("contractions.csv");
        if path.exists() {
            ContractionTable::from_csv(fs::File::open(path)?)
        } else {
            Ok(ContractionTable::bundled())
        }
    }

    fn stopword_lists(&self) -> Result<Vec<StopwordList>> {
        let mut lists = vec![StopwordList::bundled()];
        for path in text_files(&self.project.input_path().join("stopwords"))? {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            lists.push(StopwordList::from_reader(name, std::io::BufReader::new(fs::File::open(&path)?))?);
        }
        Ok(lists)
    }

    fn word_lists(&self) -> Result<WordLists> {
        let dir = self.project.input_path().join("wordlists");
        if dir.is_dir() && fs::read_dir(&dir)?.next().is_some() {
            WordLists::load_dir(&dir)
        } else {
            Ok(WordLists::bundled())
        }
    }

    fn ingest(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let table = self.contractions()?;
        for set in self.active_sets() {
            let files = text_files(&self.set_dir(set.name))?;
            let mut corpus = ingest_documents(&files, set.label, &table)?;
            // keep artifacts independent of where the project lives
            for doc in &mut corpus.documents {
                let file = Path::new(&doc.source_path).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
                doc.source_path = format!("input/{}/{file}", set.name);
                if doc.normalized_text.trim().is_empty() {
                    ctx.warnings.push(format!("{}: document `{}` is empty", set.name, doc.id));
                }
            }
            self.save(ctx, Stage::Ingest, &format!("corpus_{}.json", set.name), &to_json(&corpus), None)?;
        }
        Ok(())
    }

    fn vocab(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let corpora: Vec<Corpus> = self
            .active_sets()
            .iter()
            .map(|s| self.load_corpus(s.name))
            .collect::<Result<_>>()?;
        let refs: Vec<&Corpus> = corpora.iter().collect();
        let draft = extract_vocabulary(&refs);
        let groups: String = draft.review_groups.iter().map(|g| format!("{}\n", g.join(" "))).collect();
        let dict = if self.project.entry(DICTIONARY).is_some() {
            let mut dict = load_dictionary(&self.project, true)?;
            let mut added = 0;
            for e in draft.dictionary.entries() {
                if dict.get(&e.key).is_none() {
                    dict.set(&e.key, &e.lemma, Provenance::Auto)?;
                    added += 1;
                }
            }
            if added > 0 {
                ctx.warnings.push(format!("{added} new keys merged into the working dictionary"));
            }
            dict
        } else {
            draft.dictionary.clone()
        };
        let v = Some(dict.version());
        self.save(ctx, Stage::Vocab, "draft_dictionary.csv", &draft.dictionary.to_csv_bytes(), Some(1))?;
        self.save(ctx, Stage::Vocab, "review_groups.txt", groups.as_bytes(), None)?;
        self.save(ctx, Stage::Vocab, DICTIONARY_LOG, &dict.log_csv_bytes(), v)?;
        self.save(ctx, Stage::Vocab, DICTIONARY, &dict.to_csv_bytes(), v)?;
        Ok(())
    }

    fn lemmatise(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let dict = load_dictionary(&self.project, false)?;
        let stop = self.stopword_lists()?;
        for set in self.active_sets() {
            let corpus = self.load_corpus(set.name)?;
            let (stream, removed) = remove_stopwords(&lemmatize_corpus(&corpus, &dict), &stop);
            info!("{}: {} unigrams kept, {removed} stopwords removed", set.name, stream.len());
            let mut bytes = Vec::new();
            stream.write_csv(&mut bytes)?;
            self.save(ctx, Stage::Lemmatise, &format!("stream_{}.csv", set.name), &bytes, Some(dict.version()))?;
        }
        Ok(())
    }

    fn tdm(&mut self, ctx: &mut StageCtx) -> Result<()> {
        for set in self.active_sets() {
            let corpus = self.load_corpus(set.name)?;
            let stream = self.load_stream(set.name)?;
            let ids = corpus.documents.iter().map(|d| d.id.clone()).collect();
            let tdm = TermDocumentMatrix::from_stream(set.name, ids, &stream);
            if tdm.is_empty() {
                ctx.warnings.push(format!("{}: matrix has no rows", set.name));
            }
            self.save(ctx, Stage::Tdm, &format!("tdm_{}.csv", set.name), &tdm.to_csv_bytes(), None)?;
            self.save(ctx, Stage::Tdm, &format!("frequencies_{}.csv", set.name), &frequencies_csv(&tdm), None)?;
        }
        Ok(())
    }

    fn filter(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let c = self.config.clone();
        for set in self.active_sets() {
            let tdm = self.load_tdm(set.name)?;
            let selected = if tdm.is_empty() {
                ctx.warnings.push(format!("{}: nothing to filter", set.name));
                ImportantUnigramSet {
                    label: set.name.to_string(),
                    unigrams: Vec::new(),
                    low_cut: c.low_pct,
                    high_cut: c.high_pct,
                    mode: c.percentile_mode,
                }
            } else {
                filter_percentile(&tdm, c.low_pct, c.high_pct, c.percentile_mode)?
            };
            let name = format!("important_{}.txt", set.name);
            self.save(ctx, Stage::Filter, &name, selected.to_text().as_bytes(), None)?;
        }
        Ok(())
    }

    fn categories(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let c = self.config.clone();
        for pair in self.active_pairs() {
            let tdm = self.load_tdm(&questions_of(pair))?;
            let cats = derive_categories(&tdm, c.low_pct, c.high_pct, c.percentile_mode)?;
            if cats.is_empty() {
                ctx.warnings.push(format!("{pair}: no categories derived"));
            }
            self.save(ctx, Stage::Categories, &format!("categories_{pair}.json"), &to_json(&cats), None)?;
        }
        Ok(())
    }

    fn search(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let dict = load_dictionary(&self.project, false)?;
        let params = self.config.search_params();
        for pair in self.active_pairs() {
            let t = transcripts_of(pair);
            let corpus = self.load_corpus(&t)?;
            let tdm = self.load_tdm(&t)?;
            let important = self.load_important(&t)?;
            let mut categories: Vec<Category> =
                serde_json::from_slice(&self.project.load_artifact(&format!("categories_{pair}.json"), false)?)?;
            let outcome = iterative_code_search(&corpus, &tdm, &important, &categories, &dict, params)?;
            attach_codes(&mut categories, &outcome.discovery.codes);
            let outliers = flag_outlier_categories(&categories, self.config.outlier_ratio);
            for o in outliers.iter().filter(|o| o.flagged) {
                ctx.warnings.push(format!("{pair}: category `{}` has {} transitional codes", o.category, o.tc_count));
            }
            ctx.warnings.extend(outcome.warnings.iter().map(|w| format!("{pair}: {w}")));
            let report = CodeReport {
                categories,
                discovery: outcome.discovery,
                outliers,
                trace: outcome.trace.clone(),
                warnings: outcome.warnings,
            };
            self.save(ctx, Stage::Search, &format!("segments_auto_{pair}.csv"), &segments_csv_bytes(&outcome.segments), None)?;
            self.save(ctx, Stage::Search, &format!("search_trace_{pair}.csv"), &outcome.trace.to_csv_bytes(), None)?;
            self.save(ctx, Stage::Search, &format!("codebook_{pair}.csv"), &outcome.codebook.to_csv_bytes(), None)?;
            self.save(ctx, Stage::Search, &format!("codes_{pair}.json"), &to_json(&report), None)?;
        }
        Ok(())
    }

    fn annotate(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let lists = self.word_lists()?;
        let log = load_review_log(&self.project)?;
        for pair in self.active_pairs() {
            let corpus = self.load_corpus(&transcripts_of(pair))?;
            let mut segments = read_segments(&self.project.load_artifact(&format!("segments_auto_{pair}.csv"), false)?[..])?;
            let content = annotate_content_words(&corpus, &lists);
            attach_polarity(&mut segments, &content);
            let orphans = review::replay(pair, &mut segments, &log);
            let applied = log.iter().filter(|a| a.segment.pair == pair).count() - orphans.len();
            if !orphans.is_empty() {
                ctx.warnings.push(format!("{pair}: {} review actions no longer match a segment", orphans.len()));
            }
            let state = ReviewState { applied, orphans };
            self.save(ctx, Stage::Annotate, &format!("segments_{pair}.csv"), &segments_csv_bytes(&segments), None)?;
            self.save(ctx, Stage::Annotate, &format!("polarity_{pair}.csv"), &segments_csv_bytes(&content), None)?;
            self.save(ctx, Stage::Annotate, &format!("review_state_{pair}.json"), &to_json(&state), None)?;
        }
        Ok(())
    }

    fn relations(&mut self, ctx: &mut StageCtx) -> Result<()> {
        for pair in self.active_pairs() {
            let segments = effective(self.load_segments(pair)?);
            let codes = self.load_codes(pair)?;
            let cats: Vec<String> = codes.categories.iter().map(|c| c.lemma.clone()).collect();
            let stats = relation_stats(&segments, &cats, self.config.proximity_window);
            self.save(ctx, Stage::Relations, &format!("relations_{pair}.csv"), &stats.to_csv_bytes(), None)?;
        }
        Ok(())
    }

    fn graph(&mut self, ctx: &mut StageCtx) -> Result<()> {
        for pair in self.active_pairs() {
            let t = transcripts_of(pair);
            let stream = self.load_stream(&t)?;
            let tdm = self.load_tdm(&t)?;
            let important = self.load_important(&t)?;
            let codes = self.load_codes(pair)?;
            let segments = effective(self.load_segments(pair)?);
            let roles = codes.roles();

            let full = match self.config.cooccurrence_granularity {
                Granularity::Document => binarize(&tdm, &important.unigrams)?,
                Granularity::Sentence => {
                    let mut columns: BTreeMap<(String, usize), BTreeSet<&str>> = BTreeMap::new();
                    for it in &stream.items {
                        columns.entry((it.document.clone(), it.sentence)).or_default().insert(&it.lemma);
                    }
                    presence_matrix(&t, columns, &important.unigrams)
                }
            };
            let mut by_sentence: HashMap<(&str, usize), BTreeSet<&str>> = HashMap::new();
            for it in &stream.items {
                by_sentence.entry((&it.document, it.sentence)).or_default().insert(&it.lemma);
            }
            let columns: BTreeMap<(String, usize), BTreeSet<&str>> = segments
                .iter()
                .map(|s| {
                    let lemmas = by_sentence.get(&(s.document.as_str(), s.sentence)).cloned().unwrap_or_default();
                    ((s.document.clone(), s.sentence), lemmas)
                })
                .collect();
            let seg = presence_matrix(&t, columns, &important.unigrams);
            for (kind, m) in [("full", full), ("segments", seg)] {
                let g = if m.unigrams.is_empty() {
                    ctx.warnings.push(format!("{pair}: {kind} graph has no vertices"));
                    UnigramGraph::default()
                } else {
                    cooccurrence_graph(&m, &roles)?
                };
                let text = ExportGraph::from_graph(&g, None).to_graphml();
                self.save(ctx, Stage::Graph, &format!("graph_{kind}_{pair}.graphml"), text.as_bytes(), None)?;
            }
        }
        Ok(())
    }

    fn cluster(&mut self, ctx: &mut StageCtx) -> Result<()> {
        for pair in self.active_pairs() {
            for kind in GRAPH_KINDS {
                let g = self.load_graph(kind, pair)?;
                let result = if g.vertices.is_empty() {
                    ClusterResult::default()
                } else {
                    let (partition, dendrogram) = girvan_newman(&g, self.config.min_cluster_size)?;
                    if g.edges.is_empty() {
                        ctx.warnings.push(format!("{pair}: {kind} graph has no edges"));
                    }
                    ClusterResult { partition, dendrogram }
                };
                self.save(ctx, Stage::Cluster, &format!("partition_{kind}_{pair}.json"), &to_json(&result), None)?;
            }
        }
        Ok(())
    }

    fn significance(&mut self, ctx: &mut StageCtx) -> Result<()> {
        for pair in self.active_pairs() {
            for kind in GRAPH_KINDS {
                let g = self.load_graph(kind, pair)?;
                let cluster = self.load_cluster(kind, pair)?;
                let result = SignificanceResult {
                    modules: module_significance(&g, &cluster.partition, self.config.alpha)?,
                    degree_fit: degree_distribution_fit(&g),
                };
                let anti = result.modules.iter().filter(|m| m.verdict == Verdict::AntiModule).count();
                if anti > 0 {
                    ctx.warnings.push(format!("{pair}: {kind} graph has {anti} anti-modules"));
                }
                self.save(ctx, Stage::Significance, &format!("modules_{kind}_{pair}.json"), &to_json(&result), None)?;
            }
        }
        Ok(())
    }

    fn validated_segments(&self, pair: &str, reviewed: &[CodedSegment]) -> Result<Vec<CodedSegment>> {
        let mut out: Vec<CodedSegment> = reviewed.iter().filter(|s| s.status.is_validated()).cloned().collect();
        let path = self.project.input_path().join("validated_segments.csv");
        if path.exists() {
            let mut rdr = csv::Reader::from_path(&path)?;
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() != 4 {
                    return Err(Error::parse("validated segments", "expected set,document,start,end"));
                }
                if &rec[0] != pair {
                    continue;
                }
                let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse("validated segments", format!("bad offset `{s}`")));
                out.push(CodedSegment {
                    document: rec[1].to_string(),
                    sentence: usize::MAX,
                    start: num(&rec[2])?,
                    end: num(&rec[3])?,
                    matches: Vec::new(),
                    categories: Vec::new(),
                    status: SegmentStatus::Accepted,
                    polarity: Default::default(),
                });
            }
        }
        Ok(out)
    }

    fn report(&mut self, ctx: &mut StageCtx) -> Result<()> {
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut sets = serde_json::Map::new();
        for set in self.active_sets() {
            let corpus = self.load_corpus(set.name)?;
            let tdm = self.load_tdm(set.name)?;
            let important = self.load_important(set.name)?;
            sets.insert(
                set.name.to_string(),
                json!({
                    "documents": corpus.documents.len(),
                    "tokens": corpus.token_count(),
                    "unigrams": tdm.unigrams.len(),
                    "occurrences": tdm.grand_total(),
                    "important_unigrams": important.unigrams.len(),
                }),
            );
            let name = format!("frequencies_{}.csv", set.name);
            files.push((name.clone(), self.project.load_artifact(&name, false)?));
        }
        let mut pairs = serde_json::Map::new();
        for pair in self.active_pairs() {
            let codes = self.load_codes(pair)?;
            let reviewed = self.load_segments(pair)?;
            let auto = read_segments(&self.project.load_artifact(&format!("segments_auto_{pair}.csv"), false)?[..])?;
            let validated = self.validated_segments(pair, &reviewed)?;
            let conc = concordance(&auto, &validated);
            let concordance_json = match conc.fraction {
                Some(f) => json!({"status": "computed", "retrieved": conc.retrieved, "validated": conc.validated, "fraction": f}),
                None => json!({"status": "not_applicable", "reason": "no validated segments"}),
            };
            let mut status_counts = BTreeMap::new();
            for s in &reviewed {
                *status_counts.entry(s.status.as_str()).or_insert(0usize) += 1;
            }
            let state: ReviewState =
                serde_json::from_slice(&self.project.load_artifact(&format!("review_state_{pair}.json"), false)?)?;

            let mut graphs = serde_json::Map::new();
            for kind in GRAPH_KINDS {
                let g = self.load_graph(kind, pair)?;
                let cluster = self.load_cluster(kind, pair)?;
                let sig: SignificanceResult =
                    serde_json::from_slice(&self.project.load_artifact(&format!("modules_{kind}_{pair}.json"), false)?)?;
                let export = ExportGraph::from_graph(&g, Some(&cluster.partition));
                let graphml = export.to_graphml();
                let dot = export.to_dot();
                self.save(ctx, Stage::Report, &format!("report_graph_{kind}_{pair}.graphml"), graphml.as_bytes(), None)?;
                self.save(ctx, Stage::Report, &format!("report_graph_{kind}_{pair}.dot"), dot.as_bytes(), None)?;
                files.push((format!("graph_{kind}_{pair}.graphml"), graphml.into_bytes()));
                files.push((format!("graph_{kind}_{pair}.dot"), dot.into_bytes()));
                files.push((format!("modules_{kind}_{pair}.json"), to_json(&sig)));
                graphs.insert(
                    kind.to_string(),
                    json!({
                        "vertices": g.vertex_count(),
                        "edges": g.edge_count(),
                        "modules": cluster.partition.modules.len(),
                        "eliminated": cluster.partition.eliminated.len(),
                        "modularity": cluster.partition.modularity,
                        "anti_modules": sig.modules.iter().filter(|m| m.verdict == Verdict::AntiModule).count(),
                        "degree_fit_r_squared": sig.degree_fit.as_ref().map(|f| f.r_squared),
                    }),
                );
            }

            let seg_graph = self.load_graph("segments", pair)?;
            let seg_cluster = self.load_cluster("segments", pair)?;
            let focus = &self.config.ego_focus;
            let (ego_graphml, ego_dot, ego_json) = match ego_subgraph(&seg_graph, focus, &self.config.ego_extras, &seg_cluster.partition) {
                Ok(view) => {
                    let e = ExportGraph::from_view(&view);
                    let summary = json!({
                        "status": "computed",
                        "focus": view.focus,
                        "extras": view.extras,
                        "nodes": view.nodes.len(),
                        "edges": view.edges.len(),
                    });
                    (e.to_graphml(), e.to_dot(), summary)
                }
                Err(Error::NotFound(msg)) => {
                    ctx.warnings.push(format!("{pair}: {msg}"));
                    let e = ExportGraph::default();
                    (e.to_graphml(), e.to_dot(), json!({"status": "not_applicable", "reason": msg}))
                }
                Err(e) => return Err(e),
            };
            self.save(ctx, Stage::Report, &format!("report_ego_{pair}.graphml"), ego_graphml.as_bytes(), None)?;
            self.save(ctx, Stage::Report, &format!("report_ego_{pair}.dot"), ego_dot.as_bytes(), None)?;
            files.push((format!("ego_{pair}.graphml"), ego_graphml.into_bytes()));
            files.push((format!("ego_{pair}.dot"), ego_dot.into_bytes()));
            for name in [format!("search_trace_{pair}.csv"), format!("relations_{pair}.csv"), format!("segments_{pair}.csv")] {
                files.push((name.clone(), self.project.load_artifact(&name, false)?));
            }

            let last = codes.trace.steps.last();
            pairs.insert(
                pair.to_string(),
                json!({
                    "categories": codes.categories.iter().map(|c| json!({"lemma": c.lemma, "transitional_codes": c.transitional_codes})).collect::<Vec<_>>(),
                    "transitional_codes": codes.discovery.codes.len(),
                    "final_threshold": codes.trace.final_threshold,
                    "coverage": last.map(|s| s.coverage),
                    "reached_target": codes.trace.reached_target,
                    "outlier_categories": codes.outliers.iter().filter(|o| o.flagged).map(|o| o.category.clone()).collect::<Vec<_>>(),
                    "segments": {"total": reviewed.len(), "by_status": status_counts},
                    "review": {"applied": state.applied, "orphans": state.orphans.len()},
                    "concordance": concordance_json,
                    "graphs": graphs,
                    "ego": ego_json,
                }),
            );
        }
        let dict = load_dictionary(&self.project, false)?;
        let summary = json!({
            "dictionary_version": dict.version(),
            "config": serde_json::to_value(&self.config)?,
            "sets": sets,
            "pairs": pairs,
        });
        let bytes = to_json(&summary);
        self.save(ctx, Stage::Report, "report_summary.json", &bytes, Some(dict.version()))?;
        files.push(("summary.json".into(), bytes));

        let dir = self.project.root().join(REPORT_DIR);
        fs::create_dir_all(&dir)?;
        for (name, bytes) in files {
            write_atomic(&dir.join(name), &bytes)?;
        }
        Ok(())
    }
}

struct StageCtx<'a> {
    inputs: Vec<&'a str>,
    warnings: Vec<String>,
}

/// Segments the analyst has not rejected.
pub fn effective(segments: Vec<CodedSegment>) -> Vec<CodedSegment> {
    segments.into_iter().filter(|s| s.status != SegmentStatus::Rejected).collect()
}

fn presence_matrix(label: &str, columns: BTreeMap<(String, usize), BTreeSet<&str>>, vocabulary: &[String]) -> BinaryMatrix {
    let mut unigrams = Vec::new();
    let mut presence = Vec::new();
    for u in vocabulary {
        let row: Vec<bool> = columns.values().map(|set| set.contains(u.as_str())).collect();
        if row.iter().any(|&p| p) {
            unigrams.push(u.clone());
            presence.push(row);
        }
    }
    BinaryMatrix {
        label: label.to_string(),
        unigrams,
        documents: columns.keys().map(|(d, s)| format!("{d}#{s}")).collect(),
        presence,
    }
}

/// Stream items of one sentence.
pub fn sentence_items<'a>(stream: &'a UnigramStream, document: &str, sentence: usize) -> Vec<&'a StreamItem> {
    stream.items.iter().filter(|i| i.document == document && i.sentence == sentence).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_toml(), &[]).unwrap(), c);
        assert_eq!(PipelineConfig::parse("", &[]).unwrap(), c);
    }

    #[test]
    fn overrides_are_typed() {
        let o = vec![
            parse_override("corr_floor=0.4").unwrap(),
            parse_override("ego_focus=fever").unwrap(),
            parse_override("cooccurrence_granularity=sentence").unwrap(),
        ];
        let c = PipelineConfig::parse("", &o).unwrap();
        assert_eq!(c.corr_floor, 0.4);
        assert_eq!(c.ego_focus, "fever");
        assert_eq!(c.cooccurrence_granularity, Granularity::Sentence);
        assert!(PipelineConfig::parse("", &[("corr_step".into(), "0".into())]).is_err());
        assert!(PipelineConfig::parse("", &[("nonsense".into(), "1".into())]).is_err());
        assert!(PipelineConfig::parse("low_pct = 50\nhigh_pct = 10\n", &[]).is_err());
    }

    #[test]
    fn stage_names_and_producers() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
        assert_eq!(Stage::producing("tdm_training_transcripts.csv"), Some(Stage::Tdm));
        assert_eq!(Stage::producing("segments_auto_training.csv"), Some(Stage::Search));
        assert_eq!(Stage::producing("segments_training.csv"), Some(Stage::Annotate));
        assert_eq!(Stage::producing("dictionary_log.csv"), Some(Stage::Vocab));
        assert_eq!(Stage::producing("src_stopwords"), None);
    }
}
