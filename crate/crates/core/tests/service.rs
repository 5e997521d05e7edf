mod common;

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use qda_core::service::{serve, Body, Service};

use common::ran_project;

fn get(s: &Service, url: &str) -> (u16, Value) {
    let r = s.handle("GET", url, b"");
    (r.status, r.json().cloned().unwrap_or(Value::Null))
}

fn send(s: &Service, method: &str, url: &str, body: Value) -> (u16, Value) {
    let r = s.handle(method, url, body.to_string().as_bytes());
    (r.status, r.json().cloned().unwrap_or(Value::Null))
}

#[test]
fn pages_cover_every_segment_once() {
    let dir = tempfile::tempdir().unwrap();
    let (p, _) = ran_project(dir.path());
    let n = p.load_segments("training").unwrap().len();
    let s = Service::new(dir.path(), vec![]).unwrap();
    let (status, first) = get(&s, "/segments?set=training");
    assert_eq!(status, 200);
    assert_eq!(first["total"], n);
    assert_eq!(first["page_size"], 50);
    assert_eq!(first["pages"], n.div_ceil(50));
    let mut ids = Vec::new();
    for page in 1..=n.div_ceil(50) {
        let (_, body) = get(&s, &format!("/segments?set=training&page={page}"));
        let (_, again) = get(&s, &format!("/segments?set=training&page={page}"));
        assert_eq!(body, again);
        ids.extend(body["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap().to_string()));
    }
    assert_eq!(ids.len(), n);
    assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), n);
    let (_, past) = get(&s, &format!("/segments?set=training&page={}", n.div_ceil(50) + 1));
    assert!(past["items"].as_array().unwrap().is_empty());
    let (_, all) = get(&s, "/segments?page_size=1000");
    assert_eq!(all["total"], n + p.load_segments("testing").unwrap().len());
}

#[test]
fn items_carry_context_and_follow_document_order() {
    let dir = tempfile::tempdir().unwrap();
    ran_project(dir.path());
    let s = Service::new(dir.path(), vec![]).unwrap();
    let (_, body) = get(&s, "/segments?set=testing&page_size=500");
    let items = body["items"].as_array().unwrap();
    let keys: Vec<(String, u64)> = items
        .iter()
        .map(|i| (i["segment"]["document"].as_str().unwrap().to_string(), i["segment"]["sentence"].as_u64().unwrap()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for item in items {
        let ctx = item["context"].as_array().unwrap();
        assert!(!ctx.is_empty() && ctx.len() <= 5);
        let offsets: Vec<i64> = ctx.iter().map(|c| c["offset"].as_i64().unwrap()).collect();
        assert!(offsets.contains(&0));
        assert!(offsets.iter().all(|o| o.abs() <= 2));
        let own = ctx.iter().find(|c| c["offset"] == 0).unwrap();
        assert!(own["text"].as_str().unwrap().contains(item["text"].as_str().unwrap()));
    }
}

#[test]
fn filters() {
    let dir = tempfile::tempdir().unwrap();
    let (p, _) = ran_project(dir.path());
    let s = Service::new(dir.path(), vec![]).unwrap();
    let segs = p.load_segments("training").unwrap();
    let (_, fever) = get(&s, "/segments?set=training&category=fever&page_size=500");
    let expect = segs.iter().filter(|x| x.categories.contains(&"fever".to_string())).count();
    assert_eq!(fever["total"], expect);
    assert!(expect > 0);
    let (_, doc) = get(&s, "/segments?set=training&document=tr04&page_size=500");
    assert_eq!(doc["total"], segs.iter().filter(|x| x.document == "tr04").count());
    let (_, neg) = get(&s, "/segments?set=training&polarity=no&page_size=500");
    assert_eq!(neg["total"], segs.iter().filter(|x| x.polarity.no > 0).count());
    assert_eq!(get(&s, "/segments?polarity=grumpy").0, 400);
    assert_eq!(get(&s, "/segments?status=maybe").0, 400);
    assert_eq!(get(&s, "/segments?set=nope").0, 400);
    assert_eq!(get(&s, "/segments?page=0").0, 400);

    let (_, auto) = get(&s, "/segments?set=training&status=auto&page_size=500");
    assert_eq!(auto["total"], segs.len());
    let id = auto["items"][0]["id"].as_str().unwrap().to_string();
    let (st, r) = send(&s, "POST", &format!("/segments/{id}/action"), json!({"action": "accept"}));
    assert_eq!(st, 200, "{r}");
    assert_eq!(r["segment"]["status"], "accepted");
    assert_eq!(r["version"], 1);
    let (_, auto) = get(&s, "/segments?set=training&status=auto&page_size=500");
    assert_eq!(auto["total"], segs.len() - 1);
    let (_, acc) = get(&s, "/segments?set=training&status=accepted");
    assert_eq!(acc["items"][0]["id"], id.as_str());
}

#[test]
fn actions_validate_and_conflict() {
    let dir = tempfile::tempdir().unwrap();
    ran_project(dir.path());
    let s = Service::new(dir.path(), vec![]).unwrap();
    let (_, body) = get(&s, "/segments?set=training");
    let id = body["items"][0]["id"].as_str().unwrap().to_string();
    let url = format!("/segments/{id}/action");

    let (st, r) = send(&s, "POST", &url, json!({"action": "reassign", "categories": []}));
    assert_eq!(st, 400);
    assert_eq!(r["error"]["code"], "validation");
    let (st, _) = send(&s, "POST", &url, json!({"action": "shrug"}));
    assert_eq!(st, 400);
    let (st, r) = send(&s, "POST", "/segments/training:nobody:3/action", json!({"action": "accept"}));
    assert_eq!(st, 404);
    assert_eq!(r["error"]["code"], "not_found");

    let (st, r) = send(&s, "POST", &url, json!({"action": "reassign", "categories": ["fever"], "note": "about fever", "base_version": 0}));
    assert_eq!(st, 200);
    assert_eq!(r["segment"]["categories"], json!(["fever"]));
    assert!(r["stale"].as_array().unwrap().iter().any(|a| a == "relations_training.csv"));
    let (st, r) = send(&s, "POST", &url, json!({"action": "reject", "base_version": 0}));
    assert_eq!(st, 409);
    assert_eq!(r["error"]["code"], "conflict");

    // segments stay readable; downstream views are stale until recompute
    assert_eq!(get(&s, "/segments").0, 200);
    assert_eq!(get(&s, "/graphs/segments_training").0, 409);
    let (st, r) = send(&s, "POST", "/recompute/all", json!({}));
    assert_eq!(st, 200, "{r}");
    assert_eq!(get(&s, "/graphs/segments_training").0, 200);
}

#[test]
fn dictionary_round_trip_and_two_writers() {
    let dir = tempfile::tempdir().unwrap();
    ran_project(dir.path());
    let s = Arc::new(Service::new(dir.path(), vec![]).unwrap());
    let (st, e) = get(&s, "/dictionary/nurse");
    assert_eq!(st, 200);
    assert_eq!(e["lemma"], "nurse");
    let v = e["version"].as_u64().unwrap();
    assert_eq!(get(&s, "/dictionary/unheard").0, 404);

    let (st, r) = send(&s, "PUT", "/dictionary/nurse", json!({"lemma": "nurse", "base_version": v}));
    assert_eq!(st, 200);
    assert_eq!(r["changed"], false);
    assert_eq!(r["version"], v);
    assert_eq!(send(&s, "PUT", "/dictionary/nurse", json!({"lemma": "Not A Lemma!"})).0, 400);

    let handles: Vec<_> = ["nursing", "nurses"]
        .into_iter()
        .map(|lemma| {
            let s = Arc::clone(&s);
            thread::spawn(move || send(&s, "PUT", "/dictionary/nurse", json!({"lemma": lemma, "base_version": v})))
        })
        .collect();
    let mut statuses: Vec<u16> = handles.into_iter().map(|h| h.join().unwrap().0).collect();
    statuses.sort();
    assert_eq!(statuses, vec![200, 409]);
    let (_, e) = get(&s, "/dictionary/nurse");
    assert_eq!(e["version"], v + 1);
    assert_eq!(e["provenance"], "manual");

    // annotations are stale after a dictionary edit only once recompute starts
    let (st, r) = send(&s, "POST", "/recompute/tdm", json!({}));
    assert_eq!(st, 409);
    assert_eq!(r["error"]["code"], "dependency");
    assert_eq!(r["error"]["rerun"], json!(["lemmatise"]));
    assert_eq!(send(&s, "POST", "/recompute/all", json!({})).0, 200);
}

#[test]
fn stale_annotations_are_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let (mut p, _) = ran_project(dir.path());
    let f = dir.path().join("input/training_transcripts/tr01.txt");
    std::fs::write(&f, std::fs::read_to_string(&f).unwrap() + "\nWell we temperature fever so.\n").unwrap();
    p.sync_sources().unwrap();
    let s = Service::new(dir.path(), vec![]).unwrap();
    let (st, r) = get(&s, "/segments?set=training");
    assert_eq!(st, 409);
    assert_eq!(r["error"]["code"], "stale");
    assert!(r["error"]["stale"].as_array().unwrap().iter().any(|a| a == "segments_training.csv"));
}

#[test]
fn graphs_and_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let (p, _) = ran_project(dir.path());
    let s = Service::new(dir.path(), vec![]).unwrap();
    let (st, g) = get(&s, "/graphs/full_training");
    assert_eq!(st, 200);
    let graph = p.load_graph("full", "training").unwrap();
    assert_eq!(g["nodes"].as_array().unwrap().len(), graph.vertex_count());
    assert_eq!(g["edges"].as_array().unwrap().len(), graph.edge_count());
    let rel: f64 = g["nodes"].as_array().unwrap().iter().map(|n| n["relative_degree"].as_f64().unwrap()).sum();
    assert!((rel - 1.0).abs() < 1e-9);
    let (st, ego) = get(&s, "/graphs/ego_training");
    assert_eq!(st, 200);
    assert!(ego["nodes"].as_array().unwrap().iter().any(|n| n["id"] == "antibiotic"));
    let r = s.handle("GET", "/graphs/segments_testing?format=dot", b"");
    assert!(matches!(&r.body, Body::Text { text, .. } if text.starts_with("graph")));
    let r = s.handle("GET", "/graphs/segments_testing?format=graphml", b"");
    assert!(matches!(&r.body, Body::Text { text, .. } if text.contains("<graphml")));
    assert_eq!(get(&s, "/graphs/segments_testing?format=png").0, 400);
    assert_eq!(get(&s, "/graphs/nothing").0, 404);

    let (st, f) = get(&s, "/frequencies/training_transcripts");
    assert_eq!(st, 200);
    let rows = f["rows"].as_array().unwrap();
    let tdm = p.load_tdm("training_transcripts").unwrap();
    assert_eq!(rows.len(), tdm.unigrams.len());
    let totals: Vec<u64> = rows.iter().map(|r| r["total"].as_u64().unwrap()).collect();
    assert!(totals.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(totals.iter().sum::<u64>(), tdm.grand_total());
    assert_eq!(get(&s, "/frequencies/elsewhere").0, 404);
    assert_eq!(s.handle("DELETE", "/frequencies/training_transcripts", b"").status, 405);
    assert_eq!(get(&s, "/nowhere").0, 404);
}

#[test]
fn reads_do_not_touch_the_project() {
    let dir = tempfile::tempdir().unwrap();
    ran_project(dir.path());
    let manifest = std::fs::read(dir.path().join("manifest.tsv")).unwrap();
    let s = Service::new(dir.path(), vec![]).unwrap();
    for url in ["/segments", "/dictionary/nurse", "/graphs/full_testing", "/frequencies/testing_questions", "/segments?status=accepted"] {
        assert_eq!(get(&s, url).0, 200, "{url}");
    }
    assert_eq!(std::fs::read(dir.path().join("manifest.tsv")).unwrap(), manifest);
}

#[test]
fn http_round_trip_on_loopback() {
    let dir = tempfile::tempdir().unwrap();
    ran_project(dir.path());
    let handle = serve(Service::new(dir.path(), vec![]).unwrap(), "127.0.0.1:0").unwrap();
    assert!(handle.addr.ip().is_loopback());
    let request = |req: String| {
        let mut stream = TcpStream::connect(handle.addr).unwrap();
        stream.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        stream.read_to_string(&mut out).unwrap();
        out
    };
    let out = request("GET /dictionary/fever HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n".into());
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    assert!(out.contains("application/json"));
    let body = r#"{"action":"reject"}"#;
    let out = request(format!(
        "POST /segments/training:zz:0/action HTTP/1.1\r\nHost: x\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ));
    assert!(out.starts_with("HTTP/1.1 404"), "{out}");
    assert!(out.contains("\"not_found\""));
    handle.stop();
}
