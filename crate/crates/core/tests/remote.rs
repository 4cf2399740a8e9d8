//! HTTP clients against a minimal in-process JSON server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use curate::model::{Document, Source};
use curate::pairs::{HttpTokenizer, TokenCounter};
use curate::quality::{self, ClassifierKind, QualityConfig};
use curate::semantic::{self, Embedder, HttpEmbedder, ReferenceQuery, ReferenceQuerySet, SemanticConfig};
use curate::Error;

type Handler = Arc<dyn Fn(&Value) -> (u16, Value) + Send + Sync>;

/// Serves each request with `handler` and returns the endpoint URL.
fn serve(handler: impl Fn(&Value) -> (u16, Value) + Send + Sync + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handler: Handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let handler = handler.clone();
            thread::spawn(move || respond(stream, &handler));
        }
    });
    format!("http://{addr}/api")
}

fn respond(stream: TcpStream, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, reply) = handler(&request);
    let reply = reply.to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
}

fn doc(id: u64, text: &str) -> Document {
    Document::new(id, Source::PileRelevant, text)
}

#[test]
fn classifier_labels_drive_filtering() {
    let url = serve(|req| {
        let text = req["text"].as_str().unwrap_or_default();
        let label = if text.contains("junk") { "low" } else if text.contains("meh") { "medium" } else { "high" };
        (200, json!({"label": label, "score": 0.5}))
    });
    let cfg = QualityConfig { classifier: ClassifierKind::Http, endpoint: Some(url) };
    let clf = cfg.build().unwrap();
    let docs = vec![doc(1, "solid text"), doc(2, "junk text"), doc(3, "meh text")];
    let mut kept = Vec::new();
    let m = quality::filter_quality(docs.into_iter().map(Ok), clf.as_ref(), &cfg, |d| {
        kept.push(d.id);
        Ok(())
    })
    .unwrap();
    assert_eq!(kept, vec![1, 3]);
    assert_eq!(m.drop_reasons[quality::DROP_LOW_QUALITY], 1);
}

#[test]
fn classifier_server_error_names_document() {
    let url = serve(|req| {
        if req["text"].as_str().unwrap_or_default().contains("boom") {
            (500, json!({"error": "down"}))
        } else {
            (200, json!({"label": "high", "score": 1.0}))
        }
    });
    let cfg = QualityConfig { classifier: ClassifierKind::Http, endpoint: Some(url) };
    let clf = cfg.build().unwrap();
    let docs = vec![doc(1, "fine"), doc(7, "boom")];
    let err = quality::filter_quality(docs.into_iter().map(Ok), clf.as_ref(), &cfg, |_| Ok(())).unwrap_err();
    match err {
        Error::Stage { doc_id, .. } => assert_eq!(doc_id, 7),
        other => panic!("unexpected error {other:?}"),
    }
}

fn topic_vectors(req: &Value) -> (u16, Value) {
    let vectors: Vec<Vec<f64>> = req["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            let t = t.as_str().unwrap();
            if t.contains("solar") {
                vec![3.0, 0.0]
            } else if t.contains("mixed") {
                vec![0.6, 0.8]
            } else {
                vec![0.0, 1.0]
            }
        })
        .collect();
    assert_eq!(req["model"], "mock-model");
    (200, json!({ "vectors": vectors }))
}

#[test]
fn embedder_vectors_are_normalized_and_scored() {
    let url = serve(topic_vectors);
    let emb = HttpEmbedder::new(url, "mock-model", 2);
    let out = emb.embed_batch(&["solar panels", "mixed"]).unwrap();
    assert!(out.iter().all(|v| v.is_normalized()));
    assert!((out[0].values()[0] - 1.0).abs() < 1e-12);

    let refs = ReferenceQuerySet::embed(vec![ReferenceQuery::new("solar", "solar")], &emb).unwrap();
    let cfg = SemanticConfig { threshold: 0.5, ..SemanticConfig::default() };
    let docs = vec![doc(1, "solar farm"), doc(2, "cooking"), doc(3, "mixed bag")];
    let mut kept = Vec::new();
    let mut scores = Vec::new();
    semantic::filter_semantic(
        docs.into_iter().map(Ok),
        &refs,
        &emb,
        &cfg,
        |d| {
            kept.push(d.id);
            Ok(())
        },
        |s| {
            scores.push(s.max_similarity);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(kept, vec![1, 3]);
    assert!((scores[2] - 0.6).abs() < 1e-12);
}

#[test]
fn embedder_rejects_wrong_dimension() {
    let url = serve(topic_vectors);
    let emb = HttpEmbedder::new(url, "mock-model", 3);
    assert!(matches!(emb.embed_batch(&["solar"]), Err(Error::Remote(_))));
}

#[test]
fn embedder_rejects_short_batch() {
    let url = serve(|_| (200, json!({"vectors": [[1.0, 0.0]]})));
    let emb = HttpEmbedder::new(url, "m", 2);
    assert!(matches!(emb.embed_batch(&["a", "b"]), Err(Error::Remote(_))));
}

#[test]
fn tokenizer_counts_remotely() {
    let url = serve(|req| {
        let n = req["text"].as_str().unwrap().chars().count();
        (200, json!({"count": n.div_ceil(4)}))
    });
    let tc = HttpTokenizer::new(url);
    assert_eq!(tc.count("abcdefgh").unwrap(), 2);
    assert_eq!(tc.count("abcdefghi").unwrap(), 3);
    assert_eq!(tc.count("").unwrap(), 0);
}

#[test]
fn malformed_response_is_remote_error() {
    let url = serve(|_| (200, json!({"unexpected": true})));
    let tc = HttpTokenizer::new(url);
    assert!(matches!(tc.count("x"), Err(Error::Remote(_))));
}
