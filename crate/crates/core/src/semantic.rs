//! Topic-relevance filtering by embedding similarity.
//!
//! Every document is embedded and scored against every reference query;
//! its score is the maximum cosine similarity over queries. Documents with
//! a score of at least the threshold are kept.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{self, DOMAIN_EMBED};
use crate::model::{Document, JsonLines, ManifestBuilder, RunManifest};
use crate::remote::{JsonClient, DEFAULT_TIMEOUT};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_BATCH: usize = 64;
pub const DROP_OFF_TOPIC: &str = "below_similarity_threshold";

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values; the normalized flag is set when the L2 norm is
    /// within 1e-6 of one.
    pub fn new(values: Vec<f64>) -> Self {
        let normalized = (l2(&values) - 1.0).abs() <= UNIT_TOLERANCE;
        EmbeddingVector { values, normalized }
    }

    /// Unit-length copy of `values`, or an unnormalized zero vector when
    /// there is nothing to normalize.
    pub fn unit(values: Vec<f64>) -> Self {
        let norm = l2(&values);
        if norm == 0.0 || !norm.is_finite() {
            return EmbeddingVector {
                values,
                normalized: false,
            };
        }
        let values: Vec<f64> = values.into_iter().map(|v| v / norm).collect();
        EmbeddingVector::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity; reduces to the dot product when both inputs are unit vectors.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::param(format!(
            "embedding dimensions differ ({} vs {})",
            a.dimension(),
            b.dimension()
        )));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    if a.normalized && b.normalized {
        return Ok(dot.clamp(-1.0, 1.0));
    }
    let (na, nb) = (l2(&a.values), l2(&b.values));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder: Sync {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;
    fn dimension(&self) -> usize;
    fn name(&self) -> &str;
}

/// Hashed bag-of-words embedder. Each lowercased alphanumeric token adds
/// ±1 to one coordinate chosen by a seeded hash; the sum is L2-normalized.
#[derive(Debug, Clone)]
pub struct TestEmbedder {
    dimension: usize,
    coord_key: u64,
    sign_key: u64,
    name: String,
}

impl TestEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < 8 {
            return Err(Error::param("test embedder dimension must be at least 8"));
        }
        Ok(TestEmbedder {
            dimension,
            coord_key: hash::family_key(seed, DOMAIN_EMBED, 0),
            sign_key: hash::family_key(seed, DOMAIN_EMBED, 1),
            name: format!("hashed-bow-{dimension}"),
        })
    }

    /// Coordinate and sign a token contributes to.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = hash::hash_str(token);
        let coord = (hash::keyed(h, self.coord_key) % self.dimension as u64) as usize;
        let sign = if hash::keyed(h, self.sign_key) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        (coord, sign)
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dimension];
        for token in tokens(text) {
            let (coord, sign) = self.slot(&token);
            values[coord] += sign;
        }
        EmbeddingVector::unit(values)
    }
}

/// Lowercased maximal alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for TestEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn name(&self) -> &str {
        &self.name
    }
}

pub fn test_embedder(dimension: usize, seed: u64) -> Result<TestEmbedder> {
    TestEmbedder::new(dimension, seed)
}

/// Client for an external embedding service.
///
/// Request: `{"model": "...", "texts": [...]}`. Response: `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    model: String,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dimension: usize) -> Self {
        HttpEmbedder {
            client: JsonClient::new(endpoint, DEFAULT_TIMEOUT),
            model: model.into(),
            dimension,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl Embedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let resp: EmbedResponse = self.client.post(&EmbedRequest {
            model: &self.model,
            texts,
        })?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Remote(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(Error::Remote(format!(
                        "expected dimension {}, got {}",
                        self.dimension,
                        v.len()
                    )));
                }
                Ok(EmbeddingVector::unit(v))
            })
            .collect()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn name(&self) -> &str {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceQuery {
    pub topic: String,
    pub query: String,
}

impl ReferenceQuery {
    pub fn new(topic: &str, query: &str) -> Self {
        ReferenceQuery {
            topic: topic.to_string(),
            query: query.to_string(),
        }
    }
}

/// Default energy-domain topics, one query per topic.
pub fn default_queries() -> Vec<ReferenceQuery> {
    [
        ("Energy Systems and Infrastructure", "power grids, smart grids, microgrids, sector coupling"),
        ("Renewable Energy Sources", "solar, wind, hydropower, geothermal, biomass, ocean energy"),
        ("Fossil Fuels", "coal, oil, petroleum, natural gas, exploration, extraction, refining"),
        ("Nuclear Energy", "fission reactors, small modular reactors, nuclear fusion, waste management"),
        ("Hydrogen Economy", "hydrogen production, storage, transport, fuel cells, industrial and transport applications"),
        ("Energy Policy and Economics", "climate policy, carbon pricing, subsidies, energy market structures"),
        ("Industrial Energy Systems", "combined heat and power, decarbonization, process electrification"),
        ("Carbon Management", "carbon capture, direct air capture, CCUS"),
        ("Emerging Technologies", "AI in energy, blockchain, advanced materials, next-generation photovoltaics"),
        ("Energy Science and Engineering", "thermodynamics, heat engines, gas turbines, energy physics, chemical systems"),
        ("Energy Efficiency and Conservation", "building efficiency, behavioral change, efficient systems"),
        ("Environmental Impacts", "emissions, ecosystem effects, sustainability assessments"),
        ("Energy Production and Consumption", "conversion processes, consumption patterns, efficiency metrics"),
        ("Energy Storage Systems", "batteries, thermal storage, mechanical storage, hydrogen storage"),
        ("Grid Integration of Renewables", "balancing, smart inverters, interconnection, grid stability"),
        ("Energy in Biological Systems", "bioenergy, biomass utilization"),
    ]
    .into_iter()
    .map(|(topic, query)| ReferenceQuery::new(topic, &format!("{topic}: {query}")))
    .collect()
}

/// Reads `{"topic": ..., "query": ...}` lines.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<ReferenceQuery>> {
    JsonLines::open(path)?
        .map(|line| {
            let line = line?;
            serde_json::from_str(&line.text).map_err(|e| Error::Parse {
                line: line.number,
                offset: line.offset,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Queries with their embeddings, computed once and shared read-only.
#[derive(Debug, Clone)]
pub struct ReferenceQuerySet {
    queries: Vec<ReferenceQuery>,
    embeddings: Vec<EmbeddingVector>,
}

impl ReferenceQuerySet {
    pub fn embed(queries: Vec<ReferenceQuery>, emb: &dyn Embedder) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Config("reference query set is empty".into()));
        }
        let texts: Vec<&str> = queries.iter().map(|q| q.query.as_str()).collect();
        let embeddings = emb.embed_batch(&texts)?;
        if embeddings.len() != queries.len() {
            return Err(Error::Remote("embedder returned wrong vector count".into()));
        }
        for e in &embeddings {
            if l2(e.values()) == 0.0 {
                return Err(Error::DegenerateEmbedding);
            }
        }
        Ok(ReferenceQuerySet {
            queries,
            embeddings,
        })
    }

    pub fn queries(&self) -> &[ReferenceQuery] {
        &self.queries
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    /// Maximum similarity over queries and the topic achieving it. Ties go
    /// to the lexicographically smallest (topic, query) so the answer does
    /// not depend on query order.
    pub fn best_match(&self, doc: &EmbeddingVector) -> Result<(f64, &ReferenceQuery)> {
        let mut best: Option<(f64, &ReferenceQuery)> = None;
        for (q, e) in self.queries.iter().zip(&self.embeddings) {
            let sim = cosine(doc, e)?;
            best = match best {
                Some((b, bq)) if b > sim || (b == sim && (&bq.topic, &bq.query) <= (&q.topic, &q.query)) => {
                    Some((b, bq))
                }
                _ => Some((sim, q)),
            };
        }
        Ok(best.expect("query set is nonempty"))
    }
}

/// Per-document score line of the semantic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    pub id: u64,
    pub max_similarity: f64,
    pub topic: String,
    pub retained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Test,
    Http,
}

impl FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(EmbedderKind::Test),
            "http" => Ok(EmbedderKind::Http),
            other => Err(Error::param(format!("unknown embedder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticConfig {
    pub threshold: f64,
    pub embedder: EmbedderKind,
    pub dimension: usize,
    /// Seed of the test embedder's token hashing.
    pub embedder_seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// JSONL of `{topic, query}`; the built-in topic list when absent.
    pub queries: Option<PathBuf>,
    pub batch: usize,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig {
            threshold: DEFAULT_THRESHOLD,
            embedder: EmbedderKind::Test,
            dimension: DEFAULT_DIMENSION,
            embedder_seed: 0,
            endpoint: None,
            model: None,
            queries: None,
            batch: DEFAULT_BATCH,
        }
    }
}

impl SemanticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::param(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.batch == 0 {
            return Err(Error::param("batch must be at least 1"));
        }
        Ok(())
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        match self.embedder {
            EmbedderKind::Test => Ok(Box::new(TestEmbedder::new(
                self.dimension,
                self.embedder_seed,
            )?)),
            EmbedderKind::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    Error::Config("the http embedder needs an endpoint".into())
                })?;
                let model = self.model.clone().unwrap_or_default();
                Ok(Box::new(HttpEmbedder::new(endpoint, model, self.dimension)))
            }
        }
    }

    pub fn load_queries(&self) -> Result<Vec<ReferenceQuery>> {
        match &self.queries {
            Some(path) => read_queries(path),
            None => Ok(default_queries()),
        }
    }
}

/// Scores documents batch by batch (batches embedded in parallel) and emits
/// retained documents in input order. `report` receives one score per
/// input document.
pub fn filter_semantic<I, F, R>(
    docs: I,
    refs: &ReferenceQuerySet,
    emb: &dyn Embedder,
    cfg: &SemanticConfig,
    mut sink: F,
    mut report: R,
) -> Result<RunManifest>
where
    I: IntoIterator<Item = Result<Document>>,
    F: FnMut(Document) -> Result<()>,
    R: FnMut(SemanticScore) -> Result<()>,
{
    cfg.validate()?;
    let mut manifest = ManifestBuilder::new("filter-semantic", 0, cfg);
    let mut docs = docs.into_iter();
    // Several embedder batches are scored concurrently per round.
    let round = cfg.batch * rayon::current_num_threads().max(1);
    loop {
        let chunk: Vec<Document> = docs.by_ref().take(round).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        let scored: Vec<Vec<(f64, String)>> = chunk
            .par_chunks(cfg.batch)
            .map(|batch| {
                let texts: Vec<&str> = batch.iter().map(|d| d.text.as_str()).collect();
                let vectors = emb
                    .embed_batch(&texts)
                    .map_err(|e| Error::stage("filter-semantic", batch[0].id, e))?;
                if vectors.len() != batch.len() {
                    return Err(Error::stage(
                        "filter-semantic",
                        batch[0].id,
                        "embedder returned wrong vector count",
                    ));
                }
                batch
                    .iter()
                    .zip(&vectors)
                    .map(|(d, v)| {
                        let (sim, q) = refs
                            .best_match(v)
                            .map_err(|e| Error::stage("filter-semantic", d.id, e))?;
                        Ok((sim, q.topic.clone()))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        for (doc, (sim, topic)) in chunk.into_iter().zip(scored.into_iter().flatten()) {
            manifest.input();
            let retained = sim >= cfg.threshold;
            report(SemanticScore {
                id: doc.id,
                max_similarity: sim,
                topic,
                retained,
            })?;
            if retained {
                manifest.keep();
                sink(doc)?;
            } else {
                manifest.drop(DROP_OFF_TOPIC);
            }
        }
    }
    manifest.detail("embedder", emb.name());
    manifest.detail("queries", refs.queries().len());
    Ok(manifest.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec())
    }

    #[test]
    fn cosine_examples() {
        let a = EmbeddingVector::unit(vec![3.0, 4.0, 0.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[0.6, 0.8]), &v(&[1.0, 0.0])).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn unit_vectors_are_flagged() {
        let e = EmbeddingVector::unit(vec![1.0, 2.0, 2.0]);
        assert!(e.is_normalized());
        assert!((l2(e.values()) - 1.0).abs() <= 1e-6);
        assert!(!e.scaled(3.0).is_normalized());
    }

    #[test]
    fn test_embedder_is_deterministic() {
        let emb = test_embedder(64, 3).unwrap();
        assert_eq!(emb.embed("Solar power"), emb.embed("solar  POWER"));
        assert!(test_embedder(4, 0).is_err());
    }

    #[test]
    fn empty_text_is_degenerate_on_use() {
        let emb = test_embedder(64, 0).unwrap();
        let e = emb.embed("");
        let q = emb.embed("solar");
        assert!(matches!(cosine(&e, &q), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn default_queries_cover_each_topic_once() {
        let q = default_queries();
        assert_eq!(q.len(), 16);
        let mut topics: Vec<_> = q.iter().map(|q| q.topic.clone()).collect();
        topics.dedup();
        assert_eq!(topics.len(), 16);
    }

    #[test]
    fn self_match_retained_and_orthogonal_dropped() {
        let emb = test_embedder(256, 0).unwrap();
        let queries = vec![ReferenceQuery::new("solar", "solar power")];
        let refs = ReferenceQuerySet::embed(queries, &emb).unwrap();
        // Find a token whose coordinate is unused by the query.
        let used: Vec<usize> = ["solar", "power"].iter().map(|t| emb.slot(t).0).collect();
        let orthogonal = (0..)
            .map(|i| format!("tok{i}"))
            .find(|t| !used.contains(&emb.slot(t).0))
            .unwrap();
        let docs = vec![
            Ok(Document::new(1, Source::PileGeneral, "solar power")),
            Ok(Document::new(2, Source::PileGeneral, orthogonal)),
        ];
        let mut kept = Vec::new();
        let mut scores = Vec::new();
        filter_semantic(
            docs,
            &refs,
            &emb,
            &SemanticConfig::default(),
            |d| {
                kept.push(d.id);
                Ok(())
            },
            |s| {
                scores.push(s);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(kept, vec![1]);
        assert!((scores[0].max_similarity - 1.0).abs() < 1e-12);
        assert_eq!(scores[1].max_similarity, 0.0);
        assert_eq!(scores[0].topic, "solar");
    }

    #[test]
    fn empty_query_set_rejected() {
        let emb = test_embedder(16, 0).unwrap();
        assert!(ReferenceQuerySet::embed(vec![], &emb).is_err());
    }
}
