//! JSON-over-HTTP facade for the review UI.
//!
//! | method | path                      | purpose                               |
//! |--------|---------------------------|---------------------------------------|
//! | GET    | `/segments`               | filtered, paged segments with context |
//! | POST   | `/segments/{id}/action`   | accept / reject / reassign            |
//! | GET    | `/dictionary/{key}`       | one dictionary entry                  |
//! | PUT    | `/dictionary/{key}`       | set a lemma                           |
//! | POST   | `/recompute/{stage}`      | run a stage (or `all`)                |
//! | GET    | `/graphs/{name}`          | `full_<pair>`, `segments_<pair>`, `ego_<pair>` |
//! | GET    | `/frequencies/{set}`      | frequency table of a set              |
//!
//! Errors come back as `{"error": {"code": ..., "message": ...}}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use log::{info, warn};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::coding::{read_segments, CodedSegment, SegmentStatus, WORD_LIST_NAMES};
use crate::error::{Error, Result};
use crate::graph::ExportGraph;
use crate::matrix::report_frequencies;
use crate::pipeline::{
    apply_review, edit_dictionary, load_dictionary, load_review_log, CodeReport, Pipeline, Stage, GRAPH_KINDS, PAIRS,
};
use crate::review::{ActionKind, ReviewAction, SegmentId};
use crate::store::{Freshness, Project};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const CONTEXT_PARAGRAPHS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Json(Value),
    Text { content_type: &'static str, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Body,
}

impl Response {
    fn ok(v: Value) -> Self {
        Response {
            status: 200,
            body: Body::Json(v),
        }
    }

    fn text(content_type: &'static str, text: String) -> Self {
        Response {
            status: 200,
            body: Body::Text { content_type, text },
        }
    }

    fn error(e: &Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => 400,
            Error::NotFound(_) => 404,
            Error::Conflict(_) | Error::Locked(_) | Error::Stale(_) | Error::Dependency { .. } | Error::DuplicateId(_) => 409,
            Error::Empty(_) | Error::NoDocuments | Error::UndefinedVariance(_) | Error::DegenerateTable(_) => 422,
            Error::Ingest { .. } | Error::Encoding { .. } => 422,
            _ => 500,
        };
        let mut err = json!({"code": e.code(), "message": e.to_string()});
        if let Error::Dependency { rerun, .. } = e {
            err["rerun"] = json!(rerun);
        }
        Response {
            status,
            body: Body::Json(json!({ "error": err })),
        }
    }

    pub fn json(&self) -> Option<&Value> {
        match &self.body {
            Body::Json(v) => Some(v),
            Body::Text { .. } => None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionRequest {
    action: String,
    #[serde(default)]
    categories: Vec<String>,
    #[serde(default)]
    note: Option<String>,
    #[serde(default)]
    base_version: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryRequest {
    lemma: String,
    #[serde(default)]
    base_version: Option<u64>,
}

/// Request router. Reads open the project afresh; writes are serialised by
/// an internal mutex and the project lock.
pub struct Service {
    root: PathBuf,
    overrides: Vec<(String, String)>,
    writer: Mutex<()>,
}

impl Service {
    pub fn new(root: &Path, overrides: Vec<(String, String)>) -> Result<Self> {
        Project::open(root)?;
        Ok(Service {
            root: root.to_path_buf(),
            overrides,
            writer: Mutex::new(()),
        })
    }

    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> Response {
        match self.route(method, url, body) {
            Ok(r) => r,
            Err(e) => {
                warn!("{method} {url}: {e}");
                Response::error(&e)
            }
        }
    }

    fn route(&self, method: &str, url: &str, body: &[u8]) -> Result<Response> {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let query: BTreeMap<String, String> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        let parts: Vec<String> = path
            .trim_matches('/')
            .split('/')
            .map(|p| percent_encoding::percent_decode_str(p).decode_utf8_lossy().into_owned())
            .collect();
        let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
        match (method, parts.as_slice()) {
            ("GET", ["segments"]) => self.list_segments(&query),
            ("POST", ["segments", id, "action"]) => self.segment_action(id, body),
            ("GET", ["dictionary", key]) => self.get_dictionary(key),
            ("PUT", ["dictionary", key]) => self.put_dictionary(key, body),
            ("POST", ["recompute", stage]) => self.recompute(stage, &query),
            ("GET", ["graphs", name]) => self.graph(name, &query),
            ("GET", ["frequencies", set]) => self.frequencies(set),
            (_, ["segments"] | ["segments", _, "action"] | ["dictionary", _] | ["recompute", _] | ["graphs", _] | ["frequencies", _]) => {
                Ok(Response {
                    status: 405,
                    body: Body::Json(json!({"error": {"code": "method_not_allowed", "message": format!("{method} not allowed on {path}")}})),
                })
            }
            _ => Err(Error::NotFound(format!("route {path}"))),
        }
    }

    fn project(&self) -> Result<Project> {
        Project::open(&self.root)
    }

    fn list_segments(&self, q: &BTreeMap<String, String>) -> Result<Response> {
        let project = self.project()?;
        let pairs: Vec<&str> = match q.get("set").or_else(|| q.get("pair")) {
            Some(p) => vec![PAIRS
                .iter()
                .copied()
                .find(|x| x == p)
                .ok_or_else(|| Error::Validation(format!("unknown set `{p}`")))?],
            None => PAIRS.iter().copied().filter(|p| project.entry(&format!("segments_{p}.csv")).is_some()).collect(),
        };
        let status = q.get("status").map(|s| s.parse::<SegmentStatus>()).transpose()?;
        if let Some(p) = q.get("polarity") {
            if !WORD_LIST_NAMES.contains(&p.as_str()) {
                return Err(Error::Validation(format!("unknown polarity list `{p}`")));
            }
        }
        let page: usize = parse_num(q, "page", 1)?;
        let page_size: usize = parse_num(q, "page_size", DEFAULT_PAGE_SIZE)?;
        if page == 0 || page_size == 0 {
            return Err(Error::Validation("page and page_size start at 1".into()));
        }

        let mut rows: Vec<(&str, CodedSegment)> = Vec::new();
        let mut pipelines = BTreeMap::new();
        for pair in &pairs {
            let name = format!("segments_{pair}.csv");
            match project.freshness(&name) {
                Freshness::Fresh => {}
                Freshness::Missing => return Err(Error::NotFound(format!("{name}: run annotate first"))),
                Freshness::Stale => {
                    return Ok(Response {
                        status: 409,
                        body: Body::Json(json!({"error": {
                            "code": "stale",
                            "message": format!("{name} is stale; recompute annotate"),
                            "stale": project.stale_artifacts(),
                        }})),
                    })
                }
            }
            let segs = read_segments(&project.load_artifact(&name, false)?[..])?;
            let codes: Option<CodeReport> = project
                .load_artifact(&format!("codes_{pair}.json"), true)
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok());
            pipelines.insert(*pair, codes);
            for s in segs {
                let keep = status.is_none_or(|st| s.status == st)
                    && q.get("category").is_none_or(|c| s.categories.contains(c))
                    && q.get("document").is_none_or(|d| &s.document == d)
                    && q.get("polarity").is_none_or(|p| s.polarity.get(p).unwrap_or(0) > 0);
                if keep {
                    rows.push((pair, s));
                }
            }
        }
        rows.sort_by(|a, b| {
            let pa = PAIRS.iter().position(|p| p == &a.0);
            let pb = PAIRS.iter().position(|p| p == &b.0);
            pa.cmp(&pb).then_with(|| a.1.key().cmp(&b.1.key()))
        });
        let total = rows.len();
        let pages = total.div_ceil(page_size);
        let mut corpora = BTreeMap::new();
        let mut items = Vec::new();
        for (pair, seg) in rows.into_iter().skip((page - 1) * page_size).take(page_size) {
            if !corpora.contains_key(pair) {
                let corpus: crate::corpus::Corpus =
                    serde_json::from_slice(&project.load_artifact(&format!("corpus_{pair}_transcripts.json"), true)?)?;
                corpora.insert(pair, corpus);
            }
            let doc = corpora[pair].get(&seg.document);
            let context: Vec<Value> = doc
                .map(|d| {
                    let p = d.paragraph_of(seg.sentence);
                    let lo = p.saturating_sub(CONTEXT_PARAGRAPHS);
                    let hi = (p + CONTEXT_PARAGRAPHS).min(d.paragraphs.len() - 1);
                    (lo..=hi)
                        .map(|i| {
                            let span = d.paragraphs[i].clone();
                            json!({"paragraph": i, "offset": i as i64 - p as i64, "start": span.start, "end": span.end, "text": &d.normalized_text[span]})
                        })
                        .collect()
                })
                .unwrap_or_default();
            let text = doc.map(|d| d.normalized_text[seg.span()].to_string());
            let flagged: Vec<String> = pipelines[pair]
                .as_ref()
                .map(|c| {
                    c.outliers
                        .iter()
                        .filter(|o| o.flagged && seg.categories.contains(&o.category))
                        .map(|o| o.category.clone())
                        .collect()
                })
                .unwrap_or_default();
            items.push(json!({
                "id": SegmentId::of(pair, &seg).to_string(),
                "set": pair,
                "text": text,
                "segment": seg,
                "context": context,
                "outlier_categories": flagged,
            }));
        }
        Ok(Response::ok(json!({
            "version": load_review_log(&project)?.len(),
            "page": page,
            "page_size": page_size,
            "total": total,
            "pages": pages,
            "items": items,
        })))
    }

    fn segment_action(&self, id: &str, body: &[u8]) -> Result<Response> {
        let segment: SegmentId = id.parse()?;
        let req: ActionRequest = parse_body(body)?;
        let action = ReviewAction {
            segment,
            action: req.action.parse::<ActionKind>()?,
            categories: req.categories,
            note: req.note,
            timestamp: crate::lexicon::now_stamp(),
        };
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut project = self.project()?;
        let _lock = project.lock()?;
        let updated = apply_review(&mut project, action, req.base_version)?;
        info!("review: {id} -> {}", updated.status.as_str());
        Ok(Response::ok(json!({
            "id": id,
            "segment": updated,
            "version": load_review_log(&project)?.len(),
            "stale": project.stale_artifacts(),
        })))
    }

    fn get_dictionary(&self, key: &str) -> Result<Response> {
        let project = self.project()?;
        let dict = load_dictionary(&project, true)?;
        let e = dict.get(key).ok_or_else(|| Error::NotFound(format!("dictionary key `{key}`")))?;
        Ok(Response::ok(json!({
            "key": e.key,
            "lemma": e.lemma,
            "provenance": e.provenance.as_str(),
            "version": dict.version(),
        })))
    }

    fn put_dictionary(&self, key: &str, body: &[u8]) -> Result<Response> {
        let req: DictionaryRequest = parse_body(body)?;
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut project = self.project()?;
        let _lock = project.lock()?;
        let edit = edit_dictionary(&mut project, key, &req.lemma, req.base_version)?;
        Ok(Response::ok(json!({
            "key": edit.key,
            "lemma": edit.lemma,
            "changed": edit.changed,
            "version": edit.version,
            "stale": project.stale_artifacts(),
        })))
    }

    fn recompute(&self, stage: &str, q: &BTreeMap<String, String>) -> Result<Response> {
        let force = q.get("force").is_some_and(|v| v == "true" || v == "1");
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut pipeline = Pipeline::open(&self.root, &self.overrides)?;
        let _lock = pipeline.project.lock()?;
        let summary = if stage == "all" {
            pipeline.run_all(force)?
        } else {
            crate::pipeline::RunSummary {
                stages: vec![pipeline.run_stage(stage.parse::<Stage>()?, force)?],
            }
        };
        Ok(Response::ok(serde_json::to_value(&summary)?))
    }

    fn graph(&self, name: &str, q: &BTreeMap<String, String>) -> Result<Response> {
        let project = self.project()?;
        let (kind, pair) = name
            .split_once('_')
            .filter(|(k, p)| (GRAPH_KINDS.contains(k) || *k == "ego") && PAIRS.contains(p))
            .ok_or_else(|| Error::NotFound(format!("graph `{name}`")))?;
        let export = if kind == "ego" {
            ExportGraph::from_graphml(&project.load_text(&format!("report_ego_{pair}.graphml"), false)?)?
        } else {
            ExportGraph::from_graphml(&project.load_text(&format!("report_graph_{kind}_{pair}.graphml"), false)?)?
        };
        match q.get("format").map(String::as_str).unwrap_or("json") {
            "json" => Ok(Response::ok(export_json(&export))),
            "graphml" => Ok(Response::text("application/xml", export.to_graphml())),
            "dot" => Ok(Response::text("text/vnd.graphviz", export.to_dot())),
            "csv" => Ok(Response::text("text/csv", export.to_csv())),
            other => Err(Error::Validation(format!("unknown graph format `{other}`"))),
        }
    }

    fn frequencies(&self, set: &str) -> Result<Response> {
        let project = self.project()?;
        let name = format!("tdm_{set}.csv");
        if project.entry(&name).is_none() {
            return Err(Error::NotFound(format!("frequencies for set `{set}`")));
        }
        let tdm = crate::matrix::TermDocumentMatrix::read_csv(set, &project.load_artifact(&name, false)?[..])?;
        let grand = tdm.grand_total().max(1) as f64;
        let rows: Vec<Value> = report_frequencies(&tdm)
            .into_iter()
            .map(|r| json!({"lemma": r.lemma, "total": r.total, "relative": r.total as f64 / grand, "per_document": r.per_document}))
            .collect();
        Ok(Response::ok(json!({"set": set, "documents": tdm.documents, "rows": rows})))
    }
}

fn parse_num(q: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize> {
    q.get(key)
        .map(|v| v.parse().map_err(|_| Error::Validation(format!("{key} must be a positive integer"))))
        .unwrap_or(Ok(default))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::Validation(format!("request body: {e}")))
}

fn attr_value(v: &str) -> Value {
    v.parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or_else(|| Value::String(v.to_string()), Value::Number)
}

fn export_json(g: &ExportGraph) -> Value {
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|(id, a)| {
            let mut o = serde_json::Map::new();
            o.insert("id".into(), json!(id));
            for (k, v) in a {
                let value = if k == "module" { json!(v) } else { attr_value(v) };
                o.insert(k.clone(), value);
            }
            Value::Object(o)
        })
        .collect();
    let edges: Vec<Value> = g
        .edges
        .iter()
        .map(|(s, t, a)| {
            let mut o = serde_json::Map::new();
            o.insert("source".into(), json!(s));
            o.insert("target".into(), json!(t));
            for (k, v) in a {
                o.insert(k.clone(), attr_value(v));
            }
            Value::Object(o)
        })
        .collect();
    json!({"nodes": nodes, "edges": edges})
}

/// Running HTTP server; stops when dropped or on [`ServerHandle::stop`].
pub struct ServerHandle {
    server: Arc<tiny_http::Server>,
    thread: Option<thread::JoinHandle<()>>,
    pub addr: std::net::SocketAddr,
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn respond(service: &Service, mut req: tiny_http::Request) {
    let mut body = Vec::new();
    let resp = match req.as_reader().read_to_end(&mut body) {
        Ok(_) => service.handle(req.method().as_str(), req.url(), &body),
        Err(e) => Response::error(&Error::Storage(e)),
    };
    let (content_type, text) = match resp.body {
        Body::Json(v) => ("application/json", serde_json::to_string_pretty(&v).expect("json")),
        Body::Text { content_type, text } => (content_type, text),
    };
    let header = tiny_http::Header::from_bytes("Content-Type", content_type).expect("static header");
    let out = tiny_http::Response::from_string(text).with_status_code(resp.status).with_header(header);
    if let Err(e) = req.respond(out) {
        warn!("response failed: {e}");
    }
}

/// Binds `addr` (e.g. `127.0.0.1:8765`, port 0 for any) and serves on a
/// worker thread per request.
pub fn serve(service: Service, addr: &str) -> Result<ServerHandle> {
    let server = tiny_http::Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config(format!("{addr} is not an IP address")))?;
    info!("review service listening on http://{bound}");
    let server = Arc::new(server);
    let service = Arc::new(service);
    let srv = Arc::clone(&server);
    let thread = thread::spawn(move || {
        for req in srv.incoming_requests() {
            let service = Arc::clone(&service);
            thread::spawn(move || respond(&service, req));
        }
    });
    Ok(ServerHandle {
        server,
        thread: Some(thread),
        addr: bound,
    })
}
