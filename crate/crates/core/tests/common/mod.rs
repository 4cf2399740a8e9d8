//! Synthetic corpora shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use curate::model::{self, Document, Source};

pub const ENERGY: &[&str] = &[
    "energy", "power", "grid", "solar", "wind", "turbine", "battery", "storage", "hydrogen",
    "fuel", "cell", "nuclear", "reactor", "fusion", "carbon", "emissions", "efficiency",
    "thermal", "heat", "voltage", "transmission", "demand", "supply", "market", "policy",
    "electricity", "photovoltaic", "capacity", "load", "generation", "renewable", "geothermal",
];

pub const OFF_TOPIC: &[&str] = &[
    "recipe", "garden", "novel", "painting", "football", "holiday", "poetry", "museum",
    "cheese", "violin", "castle", "puppy", "sweater", "theatre", "bakery", "chess",
];

const FILLER: &[&str] = &[
    "the", "of", "and", "in", "for", "with", "under", "across", "between", "during", "from",
];

const EQUATIONS: &[&str] = &[
    "$E = m c^2$",
    "$P = V I$",
    "$$\\eta = \\frac{P_{out}}{P_{in}}$$",
    "\\begin{equation} Q = m c \\Delta T \\end{equation}",
    "$\\sigma T^4$",
];

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn sentence(rng: &mut impl Rng, vocab: &[&str]) -> String {
    let len = rng.gen_range(8..18);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.gen_bool(0.3) {
                *FILLER.choose(rng).unwrap()
            } else {
                *vocab.choose(rng).unwrap()
            }
        })
        .collect();
    format!("{} {}.", capitalize(words[0]), words[1..].join(" "))
}

pub fn paragraph(rng: &mut impl Rng, vocab: &[&str], equations: bool) -> String {
    let n = rng.gen_range(3..7);
    let mut sentences: Vec<String> = (0..n).map(|_| sentence(rng, vocab)).collect();
    if equations && rng.gen_bool(0.5) {
        let eq = EQUATIONS.choose(rng).unwrap();
        let at = rng.gen_range(0..sentences.len());
        sentences[at] = format!("{} Here {eq} holds.", sentences[at]);
    }
    sentences.join(" ")
}

pub fn text(rng: &mut impl Rng, vocab: &[&str], paragraphs: usize, equations: bool) -> String {
    (0..paragraphs)
        .map(|_| paragraph(rng, vocab, equations))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Adds the debris the cleaning stage is meant to strip.
fn add_debris(rng: &mut impl Rng, text: &mut String) {
    match rng.gen_range(0..4) {
        0 => text.push_str(" See [12] for details."),
        1 => text.push_str(" Data at https://example.org/grid/data.csv today."),
        2 => text.push_str(" Published as doi:10.1000/xyz123 in print."),
        _ => {}
    }
}

/// A corpus with planted exact copies, near copies, short junk, table
/// dumps and off-topic documents. Deterministic in `seed`.
pub fn corpus(n: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<Document> = Vec::with_capacity(n);
    for id in 1..=n as u64 {
        let source = match rng.gen_range(0..10) {
            0..=4 => Source::ScientificPapers,
            5..=7 => Source::PileRelevant,
            _ => Source::PileGeneral,
        };
        let roll = rng.gen_range(0..100);
        let text = if roll < 6 && !docs.is_empty() {
            docs.choose(&mut rng).unwrap().text.clone()
        } else if roll < 12 && !docs.is_empty() {
            let base = docs.choose(&mut rng).unwrap().text.clone();
            let mut words: Vec<&str> = base.split(' ').collect();
            let at = rng.gen_range(0..words.len());
            words[at] = "altered";
            words.join(" ")
        } else if roll < 16 {
            "Short note.".to_string()
        } else if roll < 19 {
            // A table dump: no letters, no sentences, many `#` marks.
            (0..120)
                .map(|_| format!("#{}", rng.gen_range(10..9999)))
                .collect::<Vec<_>>()
                .join(" ")
        } else if roll < 26 {
            let paragraphs = rng.gen_range(4..9);
            text(&mut rng, OFF_TOPIC, paragraphs, false)
        } else {
            let papers = source == Source::ScientificPapers;
            let paragraphs = rng.gen_range(4..10);
            let mut t = text(&mut rng, ENERGY, paragraphs, papers);
            add_debris(&mut rng, &mut t);
            t
        };
        docs.push(Document::new(id, source, text));
    }
    docs
}

pub fn write_corpus(path: &Path, docs: &[Document]) {
    model::write_documents(docs, path).unwrap();
}

/// Config for all seven stages, with paths relative to the config file.
pub fn full_config(seed: u64, workers: Option<usize>) -> serde_json::Value {
    let mut cfg = json!({
        "seed": seed,
        "input": "in.jsonl",
        "output_dir": "out",
        "stages": [
            {"stage": "clean"},
            {"stage": "filter-quality"},
            {"stage": "dedup-exact"},
            {"stage": "dedup-fuzzy"},
            {"stage": "filter-semantic", "threshold": 0.1},
            {"stage": "make-pairs", "chunk_budget": 60, "max_paragraph": 200, "side_target": 200},
            {"stage": "mix", "weights": {"scientific_papers": 0.829, "pile_relevant": 0.157, "pile_general": 0.014}}
        ]
    });
    if let Some(w) = workers {
        cfg["workers"] = json!(w);
    }
    cfg
}

/// Writes `cfg.json` and `in.jsonl` into `dir` and returns the config path.
pub fn stage_run(dir: &Path, docs: &[Document], cfg: &serde_json::Value) -> PathBuf {
    write_corpus(&dir.join("in.jsonl"), docs);
    let path = dir.join("cfg.json");
    fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

/// Every file under `dir` keyed by relative name. Manifests lose their
/// `wall_time_ms` field so runs can be compared byte for byte.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&path).unwrap();
        if name.ends_with(".manifest.json") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_ms");
            bytes = serde_json::to_vec(&v).unwrap();
        }
        out.insert(name, bytes);
    }
    out
}
