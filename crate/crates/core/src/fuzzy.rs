//! Near-duplicate removal: MinHash signatures, LSH banding into candidate
//! buckets, anchor-based bucket refinement, a sparse duplicate graph and
//! one representative (the smallest id) per connected component.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{self, DOMAIN_ANCHOR, DOMAIN_BAND};
use crate::model::{Document, ManifestBuilder, RunManifest};
use crate::sketch::{self, LshParams, MinHashSignature, MinHasher, ShingleSet, ShingleUnit};
use crate::union_find::UnionFind;

pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_ANCHOR_FRACTION: f64 = 0.10;
pub const DROP_NEAR_DUPLICATE: &str = "near_duplicate";

/// Recorded in manifests so runs state how signatures were produced.
pub const HASH_FAMILY: &str = "xxh3-64 shingle hash, splitmix64 keyed mix per function";

/// Bucket key: one band of one signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BandKey {
    pub band_index: u32,
    pub band_digest: u64,
}

/// Digest of the `rows` signature values in band `band_index`.
pub fn band_digest(band_index: usize, values: &[u64]) -> u64 {
    values.iter().fold(
        hash::family_key(0, DOMAIN_BAND, band_index as u64),
        |acc, &v| hash::keyed(v, acc),
    )
}

pub type Buckets = BTreeMap<BandKey, Vec<u64>>;

/// Places every document in exactly `bands` buckets, one per band. Member
/// lists are in ascending id order.
pub fn build_buckets(sigs: &BTreeMap<u64, MinHashSignature>, params: LshParams) -> Result<Buckets> {
    let mut buckets: Buckets = BTreeMap::new();
    let Some(first) = sigs.values().next() else {
        return Ok(buckets);
    };
    params.check_signature_len(first.len())?;
    for (&id, sig) in sigs {
        if sig.len() != first.len() || sig.seed != first.seed {
            return Err(Error::param(format!(
                "signature of document {id} differs in length or seed from the rest"
            )));
        }
        for (band, rows) in sig.values.chunks_exact(params.rows).enumerate() {
            let key = BandKey {
                band_index: band as u32,
                band_digest: band_digest(band, rows),
            };
            buckets.entry(key).or_default().push(id);
        }
    }
    Ok(buckets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicateEdge {
    pub anchor_id: u64,
    pub dup_id: u64,
    pub similarity: f64,
}

impl DuplicateEdge {
    fn pair(&self) -> (u64, u64) {
        (
            self.anchor_id.min(self.dup_id),
            self.anchor_id.max(self.dup_id),
        )
    }
}

/// Number of anchors drawn from a bucket of `size` members.
pub fn anchor_count(size: usize, anchor_fraction: f64) -> usize {
    ((anchor_fraction * size as f64).ceil() as usize).clamp(1, size)
}

fn bucket_seed(seed: u64, key: &BandKey) -> u64 {
    hash::keyed(
        key.band_digest,
        hash::family_key(seed, DOMAIN_ANCHOR, key.band_index as u64),
    )
}

/// Positions (into the bucket's member list) of the anchors for `key`.
pub fn draw_anchors(key: &BandKey, size: usize, anchor_fraction: f64, seed: u64) -> Vec<usize> {
    let count = anchor_count(size, anchor_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(bucket_seed(seed, key));
    let mut picked = rand::seq::index::sample(&mut rng, size, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Refines candidate buckets into confirmed duplicate edges using a
/// caller-supplied similarity. In each bucket with at least two members,
/// `ceil(anchor_fraction · |B|)` anchors are drawn with a per-bucket seed
/// and compared against every other member; pairs at or above `tau` become
/// edges. Edges are merged across buckets by unordered id pair, keeping
/// the first occurrence in bucket order.
pub fn refine_buckets_with<F>(
    buckets: &Buckets,
    tau: f64,
    anchor_fraction: f64,
    seed: u64,
    similarity: F,
) -> Result<Vec<DuplicateEdge>>
where
    F: Fn(u64, u64) -> Result<f64> + Sync,
{
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::param(format!("tau {tau} outside (0, 1]")));
    }
    if !(anchor_fraction > 0.0 && anchor_fraction <= 1.0) {
        return Err(Error::param(format!(
            "anchor fraction {anchor_fraction} outside (0, 1]"
        )));
    }
    let candidates: Vec<(&BandKey, &Vec<u64>)> =
        buckets.iter().filter(|(_, ids)| ids.len() >= 2).collect();

    let per_bucket: Vec<Vec<DuplicateEdge>> = candidates
        .par_iter()
        .map(|(key, members)| {
            let mut edges = Vec::new();
            for a in draw_anchors(key, members.len(), anchor_fraction, seed) {
                let anchor = members[a];
                for (j, &other) in members.iter().enumerate() {
                    if j == a {
                        continue;
                    }
                    let sim = similarity(anchor, other)?;
                    if sim >= tau {
                        edges.push(DuplicateEdge {
                            anchor_id: anchor,
                            dup_id: other,
                            similarity: sim,
                        });
                    }
                }
            }
            Ok(edges)
        })
        .collect::<Result<_>>()?;

    let mut merged: BTreeMap<(u64, u64), DuplicateEdge> = BTreeMap::new();
    for edge in per_bucket.into_iter().flatten() {
        merged.entry(edge.pair()).or_insert(edge);
    }
    Ok(merged.into_values().collect())
}

/// Refinement with MinHash-estimated similarity.
pub fn refine_buckets(
    buckets: &Buckets,
    sigs: &BTreeMap<u64, MinHashSignature>,
    tau: f64,
    anchor_fraction: f64,
    seed: u64,
) -> Result<Vec<DuplicateEdge>> {
    refine_buckets_with(buckets, tau, anchor_fraction, seed, |a, b| {
        sketch::estimate_jaccard(&sigs[&a], &sigs[&b])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGraph {
    pub nodes: Vec<u64>,
    pub edges: Vec<DuplicateEdge>,
    /// Connected components, each ascending, ordered by smallest member.
    pub components: Vec<Vec<u64>>,
}

impl DuplicateGraph {
    /// Smallest id of each component.
    pub fn representatives(&self) -> Vec<u64> {
        self.components.iter().map(|c| c[0]).collect()
    }
}

pub fn build_graph(edges: Vec<DuplicateEdge>, all_ids: &[u64]) -> Result<DuplicateGraph> {
    let mut nodes = all_ids.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let index: HashMap<u64, usize> = nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut uf = UnionFind::new(nodes.len());
    for e in &edges {
        let (Some(&a), Some(&b)) = (index.get(&e.anchor_id), index.get(&e.dup_id)) else {
            return Err(Error::param(format!(
                "edge ({}, {}) references an unknown document",
                e.anchor_id, e.dup_id
            )));
        };
        uf.union(a, b);
    }
    let components = uf
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| nodes[i]).collect())
        .collect();
    let mut edges = edges;
    edges.sort_by_key(|e| e.pair());
    Ok(DuplicateGraph {
        nodes,
        edges,
        components,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuzzyConfig {
    pub k: usize,
    pub unit: ShingleUnit,
    pub bands: usize,
    pub rows: usize,
    pub tau: f64,
    pub anchor_fraction: f64,
    pub seed: u64,
    /// Refine with exact shingle Jaccard instead of the signature estimate.
    pub exact_refine: bool,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        FuzzyConfig {
            k: sketch::DEFAULT_SHINGLE_K,
            unit: ShingleUnit::Word,
            bands: sketch::DEFAULT_BANDS,
            rows: sketch::DEFAULT_ROWS,
            tau: DEFAULT_TAU,
            anchor_fraction: DEFAULT_ANCHOR_FRACTION,
            seed: 0,
            exact_refine: false,
        }
    }
}

impl FuzzyConfig {
    pub fn lsh(&self) -> Result<LshParams> {
        LshParams::new(self.bands, self.rows)
    }

    pub fn num_hashes(&self) -> usize {
        self.bands * self.rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        self.lsh()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::param(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.anchor_fraction > 0.0 && self.anchor_fraction <= 1.0) {
            return Err(Error::param(format!(
                "anchor fraction {} outside (0, 1]",
                self.anchor_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct FuzzyOutcome {
    /// One representative per component, ascending by id.
    pub retained: Vec<Document>,
    pub graph: DuplicateGraph,
    pub manifest: RunManifest,
}

/// One line of the component report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub representative: u64,
    pub members: Vec<u64>,
    pub edges: Vec<DuplicateEdge>,
}

/// Components with more than one member, with the edges inside each.
pub fn component_reports(graph: &DuplicateGraph) -> Vec<ComponentReport> {
    let mut comp_of: HashMap<u64, usize> = HashMap::new();
    let mut reports: Vec<ComponentReport> = Vec::new();
    for comp in graph.components.iter().filter(|c| c.len() > 1) {
        for &id in comp {
            comp_of.insert(id, reports.len());
        }
        reports.push(ComponentReport {
            representative: comp[0],
            members: comp.clone(),
            edges: Vec::new(),
        });
    }
    for e in &graph.edges {
        reports[comp_of[&e.anchor_id]].edges.push(*e);
    }
    reports
}

/// Full near-duplicate pass over an in-memory corpus.
pub fn dedup_fuzzy(docs: Vec<Document>, cfg: &FuzzyConfig) -> Result<FuzzyOutcome> {
    cfg.validate()?;
    let params = cfg.lsh()?;
    let mut manifest = ManifestBuilder::new("dedup-fuzzy", cfg.seed, cfg);
    let hasher = MinHasher::new(cfg.num_hashes(), cfg.seed)?;

    let sketched: Vec<(u64, ShingleSet, MinHashSignature)> = docs
        .par_iter()
        .map(|doc| {
            let set = sketch::shingle(&doc.text, cfg.k, cfg.unit)
                .map_err(|e| Error::stage("dedup-fuzzy", doc.id, e))?;
            let sig = hasher
                .sign(&set)
                .map_err(|e| Error::stage("dedup-fuzzy", doc.id, e))?;
            Ok((doc.id, set, sig))
        })
        .collect::<Result<_>>()?;

    let mut sigs = BTreeMap::new();
    let mut sets = BTreeMap::new();
    for (id, set, sig) in sketched {
        if sigs.insert(id, sig).is_some() {
            return Err(Error::param(format!("duplicate document id {id}")));
        }
        if cfg.exact_refine {
            sets.insert(id, set);
        }
    }

    let buckets = build_buckets(&sigs, params)?;
    let edges = if cfg.exact_refine {
        refine_buckets_with(&buckets, cfg.tau, cfg.anchor_fraction, cfg.seed, |a, b| {
            sketch::jaccard(&sets[&a], &sets[&b])
        })?
    } else {
        refine_buckets(&buckets, &sigs, cfg.tau, cfg.anchor_fraction, cfg.seed)?
    };

    let ids: Vec<u64> = sigs.keys().copied().collect();
    let graph = build_graph(edges, &ids)?;
    let keep: std::collections::HashSet<u64> = graph.representatives().into_iter().collect();

    let mut docs = docs;
    docs.sort_by_key(|d| d.id);
    let mut retained = Vec::with_capacity(keep.len());
    for doc in docs {
        manifest.input();
        if keep.contains(&doc.id) {
            manifest.keep();
            retained.push(doc);
        } else {
            manifest.drop(DROP_NEAR_DUPLICATE);
        }
    }

    manifest.detail("num_hashes", cfg.num_hashes());
    manifest.detail("hash_family", HASH_FAMILY);
    manifest.detail("buckets", buckets.len());
    manifest.detail(
        "candidate_buckets",
        buckets.values().filter(|m| m.len() >= 2).count(),
    );
    manifest.detail("edges", graph.edges.len());
    manifest.detail(
        "duplicate_components",
        graph.components.iter().filter(|c| c.len() > 1).count(),
    );

    Ok(FuzzyOutcome {
        retained,
        graph,
        manifest: manifest.finish(),
    })
}
