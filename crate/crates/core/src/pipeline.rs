//! File-level stage runners, the configured multi-stage pipeline and the
//! corpus statistics reporter.
//!
//! Every stage reads one JSONL file and writes one JSONL file plus a
//! `<output>.manifest.json` sidecar. A pipeline run numbers its outputs
//! `NN-<stage>.jsonl` inside the output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clean::{self, CleanConfig};
use crate::error::{Error, Result};
use crate::exact;
use crate::fuzzy::{self, FuzzyConfig};
use crate::hash;
use crate::mix::{self, MixEntry, MixSpec, MixTotal};
use crate::model::{self, JsonLines, JsonlWriter, RunManifest, Source};
use crate::pairs::{self, PairConfig, TokenCounter, TrainingPair};
use crate::quality::{self, QualityConfig};
use crate::semantic::{self, ReferenceQuerySet, SemanticConfig};

/// Stages in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Clean,
    FilterQuality,
    DedupExact,
    DedupFuzzy,
    FilterSemantic,
    MakePairs,
    Mix,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Clean,
        Stage::FilterQuality,
        Stage::DedupExact,
        Stage::DedupFuzzy,
        Stage::FilterSemantic,
        Stage::MakePairs,
        Stage::Mix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Clean => "clean",
            Stage::FilterQuality => "filter-quality",
            Stage::DedupExact => "dedup-exact",
            Stage::DedupFuzzy => "dedup-fuzzy",
            Stage::FilterSemantic => "filter-semantic",
            Stage::MakePairs => "make-pairs",
            Stage::Mix => "mix",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

fn write_docs_with<F>(output: &Path, run: F) -> Result<RunManifest>
where
    F: FnOnce(&mut dyn FnMut(model::Document) -> Result<()>) -> Result<RunManifest>,
{
    let mut writer = JsonlWriter::create(output)?;
    let manifest = run(&mut |doc| writer.write(&doc))?;
    writer.finish()?;
    manifest.write_sidecar(output)?;
    Ok(manifest)
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    for r in records {
        writer.write(r)?;
    }
    writer.finish()?;
    Ok(())
}

/// `dir/name.jsonl` → `dir/name.<suffix>.jsonl`.
pub fn sibling_path(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}.jsonl"))
}

pub fn run_clean(input: &Path, output: &Path, cfg: &CleanConfig) -> Result<RunManifest> {
    let docs = model::read_documents(input)?;
    write_docs_with(output, |sink| clean::clean_stage(docs, cfg, sink))
}

pub fn run_quality(input: &Path, output: &Path, cfg: &QualityConfig) -> Result<RunManifest> {
    let clf = cfg.build()?;
    let docs = model::read_documents(input)?;
    write_docs_with(output, |sink| quality::filter_quality(docs, clf.as_ref(), cfg, sink))
}

/// Writes the deduplicated corpus and, if given, a report with one
/// `{dropped, retained, digest}` line per removed document.
pub fn run_exact(input: &Path, output: &Path, report: Option<&Path>) -> Result<RunManifest> {
    let docs = model::load_documents(input)?;
    let out = exact::dedup_exact(docs)?;
    model::write_documents(&out.retained, output)?;
    if let Some(report) = report {
        write_records(report, &out.duplicates)?;
    }
    out.manifest.write_sidecar(output)?;
    Ok(out.manifest)
}

/// Writes the retained representatives and, if given, the component report.
pub fn run_fuzzy(input: &Path, output: &Path, cfg: &FuzzyConfig, report: Option<&Path>) -> Result<RunManifest> {
    let docs = model::load_documents(input)?;
    let out = fuzzy::dedup_fuzzy(docs, cfg)?;
    model::write_documents(&out.retained, output)?;
    if let Some(report) = report {
        write_records(report, &fuzzy::component_reports(&out.graph))?;
    }
    out.manifest.write_sidecar(output)?;
    Ok(out.manifest)
}

/// Writes retained documents and, if given, one score line per input document.
pub fn run_semantic(input: &Path, output: &Path, cfg: &SemanticConfig, report: Option<&Path>) -> Result<RunManifest> {
    cfg.validate()?;
    let emb = cfg.build_embedder()?;
    let refs = ReferenceQuerySet::embed(cfg.load_queries()?, emb.as_ref())?;
    let docs = model::read_documents(input)?;
    let mut scores = match report {
        Some(path) => Some(JsonlWriter::create(path)?),
        None => None,
    };
    let manifest = write_docs_with(output, |sink| {
        semantic::filter_semantic(docs, &refs, emb.as_ref(), cfg, sink, |s| match &mut scores {
            Some(w) => w.write(&s),
            None => Ok(()),
        })
    })?;
    if let Some(w) = scores {
        w.finish()?;
    }
    Ok(manifest)
}

/// Writes all pairs to `output` and each source's pairs to
/// `<output stem>.<source>.jsonl`. Returns the manifest and the
/// per-source file paths.
pub fn run_pairs(input: &Path, output: &Path, cfg: &PairConfig) -> Result<(RunManifest, BTreeMap<String, PathBuf>)> {
    let tc = cfg.build_tokenizer()?;
    let docs = model::load_documents(input)?;
    let out = pairs::make_pairs(docs, tc.as_ref(), cfg)?;
    write_records(output, &out.pairs)?;
    let mut by_source: BTreeMap<String, Vec<&TrainingPair>> = BTreeMap::new();
    for p in &out.pairs {
        by_source.entry(p.source.to_string()).or_default().push(p);
    }
    let mut files = BTreeMap::new();
    for (label, pairs) in by_source {
        let path = sibling_path(output, &label);
        write_records(&path, &pairs)?;
        files.insert(label, path);
    }
    let mut manifest = out.manifest;
    manifest.details.insert(
        "source_files".into(),
        serde_json::to_value(files.keys().collect::<Vec<_>>()).expect("labels serialize"),
    );
    manifest.write_sidecar(output)?;
    Ok((manifest, files))
}

pub fn run_mix(spec: &MixSpec, output: &Path) -> Result<RunManifest> {
    let manifest = mix::mix(spec, output)?;
    manifest.write_sidecar(output)?;
    Ok(manifest)
}

/// Mix parameters inside a pipeline; the per-source files come from the
/// preceding `make-pairs` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixStageConfig {
    pub weights: BTreeMap<String, f64>,
    #[serde(default = "exhaust")]
    pub total: MixTotal,
}

fn exhaust() -> MixTotal {
    MixTotal::Exhaust
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactStageConfig {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum StageConfig {
    Clean(CleanConfig),
    FilterQuality(QualityConfig),
    DedupExact(ExactStageConfig),
    DedupFuzzy(FuzzyConfig),
    FilterSemantic(SemanticConfig),
    MakePairs(PairConfig),
    Mix(MixStageConfig),
}

impl StageConfig {
    pub fn stage(&self) -> Stage {
        match self {
            StageConfig::Clean(_) => Stage::Clean,
            StageConfig::FilterQuality(_) => Stage::FilterQuality,
            StageConfig::DedupExact(_) => Stage::DedupExact,
            StageConfig::DedupFuzzy(_) => Stage::DedupFuzzy,
            StageConfig::FilterSemantic(_) => Stage::FilterSemantic,
            StageConfig::MakePairs(_) => Stage::MakePairs,
            StageConfig::Mix(_) => Stage::Mix,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            StageConfig::Clean(_) | StageConfig::DedupExact(_) => Ok(()),
            StageConfig::FilterQuality(c) => c.build().map(drop),
            StageConfig::DedupFuzzy(c) => c.validate(),
            StageConfig::FilterSemantic(c) => {
                c.validate()?;
                c.build_embedder().map(drop)
            }
            StageConfig::MakePairs(c) => {
                c.validate()?;
                c.build_tokenizer().map(drop)
            }
            StageConfig::Mix(c) => {
                mix::validate_weights(c.weights.iter().map(|(k, &w)| (k.as_str(), w)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Worker threads; the machine's parallelism when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    pub stages: Vec<StageConfig>,
}

impl PipelineConfig {
    /// Parses a config file. Relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.input = base.join(&cfg.input);
        cfg.output_dir = base.join(&cfg.output_dir);
        if let Some(q) = cfg.stages.iter_mut().find_map(|s| match s {
            StageConfig::FilterSemantic(c) => c.queries.as_mut(),
            _ => None,
        }) {
            *q = base.join(&*q);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("no stages configured".into()));
        }
        for w in self.stages.windows(2) {
            if w[0].stage() >= w[1].stage() {
                return Err(Error::Config(format!(
                    "stage {} cannot follow {}",
                    w[1].stage(),
                    w[0].stage()
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let has_pairs = self.stages.iter().any(|s| s.stage() == Stage::MakePairs);
        if self.stages.iter().any(|s| s.stage() == Stage::Mix) && !has_pairs {
            return Err(Error::Config("mix needs a make-pairs stage before it".into()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        hash::derive_seed(self.seed, stage.name())
    }

    pub fn output_path(&self, position: usize, stage: Stage) -> PathBuf {
        self.output_dir
            .join(format!("{:02}-{}.jsonl", position + 1, stage.name()))
    }
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILED_FILE: &str = "FAILED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub output: String,
    pub docs_in: u64,
    pub docs_out: u64,
    pub docs_dropped: u64,
}

/// Run-level totals. Contains no timings so reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stages: Vec<StageSummary>,
    pub drops_by_reason: BTreeMap<String, u64>,
}

/// Runs the configured stages in order, optionally starting at `from`
/// (earlier stages' outputs must already exist). Stage failures leave
/// completed outputs in place and write a `FAILED` marker naming the stage.
pub fn run_pipeline(cfg: &PipelineConfig, from: Option<Stage>) -> Result<Vec<RunManifest>> {
    cfg.validate()?;
    if let Some(from) = from {
        if !cfg.stages.iter().any(|s| s.stage() == from) {
            return Err(Error::Config(format!("stage {from} is not configured")));
        }
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let failed = cfg.output_dir.join(FAILED_FILE);
    if failed.exists() {
        std::fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    pool.install(|| {
        let mut manifests = Vec::new();
        let mut input = cfg.input.clone();
        let mut pair_files: BTreeMap<String, PathBuf> = BTreeMap::new();
        for (position, stage_cfg) in cfg.stages.iter().enumerate() {
            let stage = stage_cfg.stage();
            let output = cfg.output_path(position, stage);
            let skip = from.is_some_and(|f| stage < f);
            let result = if skip {
                load_previous(&output, stage, &mut pair_files)
            } else {
                run_stage(cfg, stage_cfg, &input, &output, &pair_files).map(|(m, files)| {
                    if let Some(files) = files {
                        pair_files = files;
                    }
                    m
                })
            };
            match result {
                Ok(m) => manifests.push(m),
                Err(e) => {
                    if !skip {
                        remove_partial(&cfg.output_dir, position, stage)?;
                    }
                    let marker = format!("{stage}\n{e}\n");
                    std::fs::write(&failed, marker).map_err(|io| Error::io(&failed, io))?;
                    return Err(Error::Pipeline {
                        stage: stage.name().to_string(),
                        source: Box::new(e),
                    });
                }
            }
            input = output;
        }
        write_summary(cfg, &manifests)?;
        Ok(manifests)
    })
}

/// Deletes whatever a failed stage managed to write so a later `--from`
/// cannot mistake it for a finished output.
fn remove_partial(dir: &Path, position: usize, stage: Stage) -> Result<()> {
    let prefix = format!("{:02}-{}.", position + 1, stage.name());
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.file_name().is_some_and(|n| n.to_string_lossy().starts_with(&prefix)) {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn load_previous(output: &Path, stage: Stage, pair_files: &mut BTreeMap<String, PathBuf>) -> Result<RunManifest> {
    let manifest = RunManifest::read(RunManifest::sidecar_path(output))?;
    if stage == Stage::MakePairs {
        let labels: Vec<String> = manifest
            .details
            .get("source_files")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        *pair_files = labels
            .into_iter()
            .map(|l| {
                let p = sibling_path(output, &l);
                (l, p)
            })
            .collect();
    }
    Ok(manifest)
}

type StageResult = (RunManifest, Option<BTreeMap<String, PathBuf>>);

fn run_stage(
    cfg: &PipelineConfig,
    stage_cfg: &StageConfig,
    input: &Path,
    output: &Path,
    pair_files: &BTreeMap<String, PathBuf>,
) -> Result<StageResult> {
    let seed = cfg.stage_seed(stage_cfg.stage());
    let report = |name: &str| sibling_path(output, name);
    let mut files = None;
    let mut manifest = match stage_cfg {
        StageConfig::Clean(c) => run_clean(input, output, c)?,
        StageConfig::FilterQuality(c) => run_quality(input, output, c)?,
        StageConfig::DedupExact(_) => run_exact(input, output, Some(&report("report")))?,
        StageConfig::DedupFuzzy(c) => {
            let c = FuzzyConfig { seed, ..c.clone() };
            run_fuzzy(input, output, &c, Some(&report("report")))?
        }
        StageConfig::FilterSemantic(c) => run_semantic(input, output, c, Some(&report("report")))?,
        StageConfig::MakePairs(c) => {
            let (m, f) = run_pairs(input, output, c)?;
            files = Some(f);
            m
        }
        StageConfig::Mix(c) => {
            let mut entries = Vec::new();
            for (label, &weight) in &c.weights {
                let path = match pair_files.get(label) {
                    Some(p) => p.clone(),
                    None => {
                        // A source with no pairs still takes part and exhausts at once.
                        let p = sibling_path(output, &format!("empty-{label}"));
                        std::fs::write(&p, b"").map_err(|e| Error::io(&p, e))?;
                        p
                    }
                };
                entries.push(MixEntry {
                    source: label.clone(),
                    weight,
                    path,
                });
            }
            let spec = MixSpec {
                seed,
                total: c.total,
                entries,
            };
            // Record the stage config rather than the resolved spec so the
            // manifest does not depend on where the output directory lives.
            let mut m = run_mix(&spec, output)?;
            m.params = serde_json::to_value(c).expect("mix config serializes");
            m.config_digest = model::config_digest(c);
            m.write_sidecar(output)?;
            m
        }
    };
    if manifest.seed != seed {
        manifest.seed = seed;
        manifest.write_sidecar(output)?;
    }
    Ok((manifest, files))
}

fn write_summary(cfg: &PipelineConfig, manifests: &[RunManifest]) -> Result<()> {
    let mut drops_by_reason = BTreeMap::new();
    let mut stages = Vec::new();
    for (position, m) in manifests.iter().enumerate() {
        for (reason, n) in &m.drop_reasons {
            *drops_by_reason.entry(reason.clone()).or_insert(0) += n;
        }
        let stage: Stage = m.stage.parse()?;
        stages.push(StageSummary {
            stage: m.stage.clone(),
            output: cfg
                .output_path(position, stage)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            docs_in: m.docs_in,
            docs_out: m.docs_out,
            docs_dropped: m.docs_dropped,
        });
    }
    let summary = RunSummary {
        seed: cfg.seed,
        stages,
        drops_by_reason,
    };
    let path = cfg.output_dir.join(SUMMARY_FILE);
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

#[derive(Deserialize)]
struct DocFields {
    source: Source,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Empty,
    Documents,
    Pairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub kind: RecordKind,
    pub records: u64,
    pub total_tokens: u64,
    pub per_source: BTreeMap<String, u64>,
    pub mean_tokens: f64,
    pub median_tokens: f64,
    pub pairs_per_strategy: BTreeMap<String, u64>,
}

fn median(values: &mut [u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid] as f64
    } else {
        (values[mid - 1] + values[mid]) as f64 / 2.0
    }
}

/// Counts documents or pairs in a JSONL file. Token totals use `tc` on
/// document text, or on input plus output for pairs.
pub fn stats(path: impl AsRef<Path>, tc: &dyn TokenCounter) -> Result<CorpusStats> {
    let mut kind = RecordKind::Empty;
    let mut per_source = BTreeMap::new();
    let mut pairs_per_strategy = BTreeMap::new();
    let mut tokens = Vec::new();
    for line in JsonLines::open(path)? {
        let line = line?;
        let value: serde_json::Value = serde_json::from_str(&line.text).map_err(|e| Error::Parse {
            line: line.number,
            offset: line.offset,
            message: e.to_string(),
        })?;
        let this = if value.get("input").is_some() && value.get("output").is_some() {
            RecordKind::Pairs
        } else if value.get("text").is_some() {
            RecordKind::Documents
        } else {
            return Err(Error::Format(format!(
                "line {}: neither a document nor a pair",
                line.number
            )));
        };
        if kind != RecordKind::Empty && kind != this {
            return Err(Error::Format(format!(
                "line {}: documents and pairs mixed in one file",
                line.number
            )));
        }
        kind = this;
        let bad = |e: serde_json::Error| Error::Parse {
            line: line.number,
            offset: line.offset,
            message: e.to_string(),
        };
        let (source, n) = match this {
            RecordKind::Pairs => {
                let p: TrainingPair = serde_json::from_value(value).map_err(bad)?;
                let label = serde_json::to_value(p.strategy).expect("strategy serializes");
                *pairs_per_strategy
                    .entry(label.as_str().unwrap_or_default().to_string())
                    .or_insert(0) += 1;
                (p.source, tc.count(&p.input)? + tc.count(&p.output)?)
            }
            _ => {
                let d: DocFields = serde_json::from_value(value).map_err(bad)?;
                let n = tc.count(&d.text)?;
                (d.source, n)
            }
        };
        *per_source.entry(source.to_string()).or_insert(0) += 1;
        tokens.push(n as u64);
    }
    let records = tokens.len() as u64;
    let total_tokens: u64 = tokens.iter().sum();
    Ok(CorpusStats {
        kind,
        records,
        total_tokens,
        per_source,
        mean_tokens: if records == 0 {
            0.0
        } else {
            total_tokens as f64 / records as f64
        },
        median_tokens: median(&mut tokens),
        pairs_per_strategy,
    })
}
