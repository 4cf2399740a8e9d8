//! Weighted, seeded interleaving of per-source pair files.
//!
//! Each output record comes from source `i` with probability proportional
//! to its weight among the sources that still have records. Records within
//! a source are consumed in file order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{JsonLines, ManifestBuilder, RunManifest};
use crate::pairs::TrainingPair;

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// How many records to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixTotal {
    Count(u64),
    /// Until every source is exhausted.
    Exhaust,
}

impl Serialize for MixTotal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MixTotal::Count(n) => s.serialize_u64(*n),
            MixTotal::Exhaust => s.serialize_str("exhaust"),
        }
    }
}

impl<'de> Deserialize<'de> for MixTotal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(MixTotal::Count(n)),
            Raw::Word(w) if w == "exhaust" => Ok(MixTotal::Exhaust),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "total must be a count or \"exhaust\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub source: String,
    pub weight: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub seed: u64,
    pub total: MixTotal,
    pub entries: Vec<MixEntry>,
}

/// Checks weights lie in (0, 1], sum to one and labels are unique.
pub fn validate_weights<'a>(weights: impl IntoIterator<Item = (&'a str, f64)>) -> Result<()> {
    let mut labels = BTreeSet::new();
    let mut sum = 0.0;
    for (label, w) in weights {
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::Config(format!("weight {w} of {label} outside (0, 1]")));
        }
        if !labels.insert(label) {
            return Err(Error::Config(format!("source {label} listed twice")));
        }
        sum += w;
    }
    if labels.is_empty() {
        return Err(Error::Config("mix has no sources".into()));
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::Config(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

impl MixSpec {
    /// Parses a spec file. Relative entry paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut spec: MixSpec = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for entry in &mut spec.entries {
            entry.path = base.join(&entry.path);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_weights(self.entries.iter().map(|e| (e.source.as_str(), e.weight)))
    }
}

/// An in-memory or streaming source of records for [`mix_sources`].
pub struct MixInput<I> {
    pub label: String,
    pub weight: f64,
    pub records: I,
}

/// When a source ran dry, counted in emitted records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhaustion {
    pub source: String,
    pub after_emitted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MixReport {
    pub emitted: u64,
    pub per_source: BTreeMap<String, u64>,
    pub exhausted: Vec<Exhaustion>,
}

/// Core draw loop. `sink` receives each record with its source label.
pub fn mix_sources<T, I, F>(inputs: Vec<MixInput<I>>, seed: u64, total: MixTotal, mut sink: F) -> Result<MixReport>
where
    I: Iterator<Item = Result<T>>,
    F: FnMut(&str, T) -> Result<()>,
{
    validate_weights(inputs.iter().map(|i| (i.label.as_str(), i.weight)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MixReport {
        per_source: inputs.iter().map(|i| (i.label.clone(), 0)).collect(),
        ..MixReport::default()
    };
    let mut active = inputs;
    let limit = match total {
        MixTotal::Count(n) => n,
        MixTotal::Exhaust => u64::MAX,
    };
    while report.emitted < limit && !active.is_empty() {
        // Sampling against the remaining mass renormalizes implicitly.
        let mass: f64 = active.iter().map(|i| i.weight).sum();
        let mut u = rng.gen::<f64>() * mass;
        let mut pick = active.len() - 1;
        for (k, input) in active.iter().enumerate() {
            if u < input.weight {
                pick = k;
                break;
            }
            u -= input.weight;
        }
        match active[pick].records.next() {
            Some(record) => {
                let record = record?;
                let label = &active[pick].label;
                *report.per_source.get_mut(label).expect("label registered") += 1;
                report.emitted += 1;
                sink(label, record)?;
            }
            None => {
                let gone = active.remove(pick);
                report.exhausted.push(Exhaustion {
                    source: gone.label,
                    after_emitted: report.emitted,
                });
            }
        }
    }
    if report.emitted == 0 && limit > 0 {
        return Err(Error::Config("every mix source is empty".into()));
    }
    Ok(report)
}

/// Mixes the `MixSpec` entries' pair files into `output`. Records are validated as
/// pairs and copied through byte for byte.
pub fn mix(spec: &MixSpec, output: impl AsRef<Path>) -> Result<RunManifest> {
    spec.validate()?;
    let mut manifest = ManifestBuilder::new("mix", spec.seed, spec);
    let mut inputs = Vec::with_capacity(spec.entries.len());
    for entry in &spec.entries {
        let lines = JsonLines::open(&entry.path)
            .map_err(|e| Error::Config(format!("cannot read mix source {}: {e}", entry.source)))?;
        let records = lines.map(|line| {
            let line = line?;
            serde_json::from_str::<TrainingPair>(&line.text).map_err(|e| Error::Parse {
                line: line.number,
                offset: line.offset,
                message: e.to_string(),
            })?;
            Ok(RawJson(line.text))
        });
        inputs.push(MixInput {
            label: entry.source.clone(),
            weight: entry.weight,
            records,
        });
    }
    let output = output.as_ref();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(output).map_err(|e| Error::io(output, e))?,
    );
    let report = mix_sources(inputs, spec.seed, spec.total, |_, RawJson(text)| {
        use std::io::Write;
        writeln!(out, "{text}").map_err(|e| Error::io(output, e))
    })?;
    std::io::Write::flush(&mut out).map_err(|e| Error::io(output, e))?;

    for _ in 0..report.emitted {
        manifest.input();
        manifest.keep();
    }
    manifest.detail("realized", &report.per_source);
    manifest.detail("exhausted", &report.exhausted);
    let shares: BTreeMap<&String, f64> = report
        .per_source
        .iter()
        .map(|(k, &v)| (k, if report.emitted == 0 { 0.0 } else { v as f64 / report.emitted as f64 }))
        .collect();
    manifest.detail("realized_share", shares);
    Ok(manifest.finish())
}

struct RawJson(String);
