//! Record types, streaming JSONL I/O and run manifests shared by every stage.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hash;

/// Corpus a document (or pair) came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    ScientificPapers,
    PileRelevant,
    PileGeneral,
    Other(String),
}

impl Source {
    pub fn as_str(&self) -> &str {
        match self {
            Source::ScientificPapers => "scientific_papers",
            Source::PileRelevant => "pile_relevant",
            Source::PileGeneral => "pile_general",
            Source::Other(name) => name,
        }
    }

    /// Parses a label. Known labels always map to their variant, so
    /// `Other` never holds one of them.
    pub fn parse(label: &str) -> Self {
        match label {
            "scientific_papers" => Source::ScientificPapers,
            "pile_relevant" => Source::PileRelevant,
            "pile_general" => Source::PileGeneral,
            other => Source::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        Ok(Source::parse(&label))
    }
}

/// One corpus record. Serialized with keys in the order id, source, text, meta.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Document {
    pub id: u64,
    pub source: Source,
    pub text: String,
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: u64, source: Source, text: impl Into<String>) -> Self {
        Document {
            id,
            source,
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: Option<u64>,
    text: Option<String>,
    source: Option<Source>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

/// Non-empty lines of a JSONL file with their 1-based line number and the
/// byte offset at which each line starts.
pub struct JsonLines<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    offset: u64,
    buf: String,
}

impl JsonLines<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::new(file), path))
    }
}

impl<R: BufRead> JsonLines<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        JsonLines {
            reader,
            path: path.into(),
            line_no: 0,
            offset: 0,
            buf: String::new(),
        }
    }
}

pub struct Line {
    pub number: usize,
    pub offset: u64,
    pub text: String,
}

impl<R: BufRead> Iterator for JsonLines<R> {
    type Item = Result<Line>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            let start = self.offset;
            let n = match self.reader.read_line(&mut self.buf) {
                Ok(n) => n,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if n == 0 {
                return None;
            }
            self.line_no += 1;
            self.offset += n as u64;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            return Some(Ok(Line {
                number: self.line_no,
                offset: start,
                text: text.to_string(),
            }));
        }
    }
}

/// Lazy document stream over a JSONL file. Rejects malformed lines,
/// missing required fields and repeated ids.
pub struct DocumentReader<R> {
    lines: JsonLines<R>,
    seen: HashMap<u64, usize>,
    failed: bool,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn new(lines: JsonLines<R>) -> Self {
        DocumentReader {
            lines,
            seen: HashMap::new(),
            failed: false,
        }
    }

    fn parse(&mut self, line: Line) -> Result<Document> {
        let raw: RawDocument = serde_json::from_str(&line.text).map_err(|e| Error::Parse {
            line: line.number,
            offset: line.offset,
            message: e.to_string(),
        })?;
        let missing = |field| Error::MissingField {
            line: line.number,
            field,
        };
        let id = raw.id.ok_or_else(|| missing("id"))?;
        let text = raw.text.ok_or_else(|| missing("text"))?;
        let source = raw.source.ok_or_else(|| missing("source"))?;
        if let Some(&first_line) = self.seen.get(&id) {
            return Err(Error::DuplicateId {
                id,
                first_line,
                line: line.number,
            });
        }
        self.seen.insert(id, line.number);
        Ok(Document {
            id,
            source,
            text,
            meta: raw.meta.unwrap_or_default(),
        })
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = match self.lines.next()? {
            Ok(line) => self.parse(line),
            Err(e) => Err(e),
        };
        self.failed = item.is_err();
        Some(item)
    }
}

/// Opens `path` as a lazy stream of documents in file order.
pub fn read_documents(path: impl AsRef<Path>) -> Result<DocumentReader<BufReader<File>>> {
    Ok(DocumentReader::new(JsonLines::open(path)?))
}

/// Reads every document of a file into memory.
pub fn load_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    read_documents(path)?.collect()
}

/// Converts a raw JSONL corpus into documents with sequential ids starting
/// at `start_id`, in file order. Each line needs `text`; `source` falls back
/// to `default_source`. An id already present is kept in `meta` as
/// `original_id` and replaced.
pub fn ingest(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    default_source: Option<&Source>,
    start_id: u64,
) -> Result<RunManifest> {
    let mut manifest = ManifestBuilder::new("ingest", 0, &serde_json::json!({ "start_id": start_id }));
    let mut writer = JsonlWriter::create(output)?;
    let mut next_id = start_id;
    for line in JsonLines::open(input)? {
        let line = line?;
        let raw: RawDocument = serde_json::from_str(&line.text).map_err(|e| Error::Parse {
            line: line.number,
            offset: line.offset,
            message: e.to_string(),
        })?;
        let missing = |field| Error::MissingField {
            line: line.number,
            field,
        };
        let text = raw.text.ok_or_else(|| missing("text"))?;
        let source = raw
            .source
            .or_else(|| default_source.cloned())
            .ok_or_else(|| missing("source"))?;
        let mut meta = raw.meta.unwrap_or_default();
        if let Some(id) = raw.id {
            meta.insert("original_id".into(), id.to_string());
        }
        manifest.input();
        writer.write(&Document {
            id: next_id,
            source,
            text,
            meta,
        })?;
        manifest.keep();
        next_id = next_id
            .checked_add(1)
            .ok_or_else(|| Error::param("document ids overflow u64"))?;
    }
    writer.finish()?;
    Ok(manifest.finish())
}

/// Buffered JSONL writer for any serializable record.
pub struct JsonlWriter {
    out: BufWriter<File>,
    path: PathBuf,
    count: u64,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            count: 0,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| Error::io(&self.path, std::io::Error::other(e)))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<u64> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.count)
    }
}

/// Writes documents one per line. Accepts anything that borrows as a
/// document so callers can stream owned, shared or wrapped records.
pub fn write_documents<I, D>(docs: I, path: impl AsRef<Path>) -> Result<RunManifest>
where
    I: IntoIterator<Item = D>,
    D: std::borrow::Borrow<Document>,
{
    let mut manifest = ManifestBuilder::new("write", 0, &serde_json::Value::Null);
    let mut writer = JsonlWriter::create(path)?;
    for doc in docs {
        manifest.input();
        writer.write(doc.borrow())?;
        manifest.keep();
    }
    writer.finish()?;
    Ok(manifest.finish())
}

/// Per-stage accounting record, written next to each output as
/// `<output>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub docs_in: u64,
    pub docs_out: u64,
    pub docs_dropped: u64,
    pub drop_reasons: BTreeMap<String, u64>,
    pub seed: u64,
    pub config_digest: String,
    pub wall_time_ms: u64,
    /// Effective stage parameters, including defaults.
    pub params: serde_json::Value,
    /// Stage-specific extras (realized mix counts, component totals, ...).
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn sidecar_path(output: impl AsRef<Path>) -> PathBuf {
        let mut name = output.as_ref().as_os_str().to_os_string();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn write_sidecar(&self, output: impl AsRef<Path>) -> Result<PathBuf> {
        let path = Self::sidecar_path(output);
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Copy with the timing field cleared, for byte-level comparisons.
    pub fn without_timing(&self) -> Self {
        RunManifest {
            wall_time_ms: 0,
            ..self.clone()
        }
    }
}

/// Hex digest of a configuration's canonical JSON form.
pub fn config_digest<T: Serialize + ?Sized>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    format!("{:032x}", hash::content_digest(&bytes))
}

/// Accumulates counts while a stage runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new<T: Serialize + ?Sized>(stage: &str, seed: u64, config: &T) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                stage: stage.to_string(),
                docs_in: 0,
                docs_out: 0,
                docs_dropped: 0,
                drop_reasons: BTreeMap::new(),
                seed,
                config_digest: config_digest(config),
                wall_time_ms: 0,
                params: serde_json::to_value(config).expect("config serializes"),
                details: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self) {
        self.manifest.docs_in += 1;
    }

    pub fn keep(&mut self) {
        self.manifest.docs_out += 1;
    }

    pub fn drop(&mut self, reason: &str) {
        self.manifest.docs_dropped += 1;
        *self
            .manifest
            .drop_reasons
            .entry(reason.to_string())
            .or_insert(0) += 1;
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.manifest.details.insert(
            key.to_string(),
            serde_json::to_value(value).expect("detail serializes"),
        );
    }

    pub fn finish(mut self) -> RunManifest {
        self.manifest.wall_time_ms = self.started.elapsed().as_millis() as u64;
        debug_assert_eq!(
            self.manifest.docs_in,
            self.manifest.docs_out + self.manifest.docs_dropped
        );
        self.manifest
    }
}
