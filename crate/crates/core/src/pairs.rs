//! Chunking and sliding-window construction of input/output training pairs.
//!
//! Two strategies share one overlap rule: the next window's input begins at
//! the previous window's final input chunk.
//!
//! * `pile_chunks`: sentence-packed chunks of about 600 tokens; pair `i`
//!   maps chunks `2i..2i+3` to `2i+3..2i+6`.
//! * `paper_paragraphs`: paragraph chunks packed into roughly 2000-token
//!   sides under a 4096-token pair budget.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, ManifestBuilder, RunManifest, Source};
use crate::remote::{JsonClient, DEFAULT_TIMEOUT};

pub const DEFAULT_CHUNK_BUDGET: usize = 600;
pub const DEFAULT_MAX_PARAGRAPH: usize = 2000;
pub const DEFAULT_PAIR_BUDGET: usize = 4096;
pub const DEFAULT_SIDE_TARGET: usize = 2000;
pub const DROP_NO_PAIRS: &str = "no_pairs";

const PILE_SIDE: usize = 3;
const PILE_STRIDE: usize = 2;

pub trait TokenCounter: Sync {
    fn count(&self, text: &str) -> Result<usize>;
    fn name(&self) -> &str;
}

/// Counts maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> Result<usize> {
        Ok(text.split_whitespace().count())
    }

    fn name(&self) -> &str {
        "whitespace"
    }
}

pub fn whitespace_counter() -> WhitespaceCounter {
    WhitespaceCounter
}

/// Client for an external tokenizer service.
///
/// Request: `{"text": "..."}`. Response: `{"count": 123}`.
#[derive(Debug, Clone)]
pub struct HttpTokenizer {
    client: JsonClient,
}

impl HttpTokenizer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTokenizer {
            client: JsonClient::new(endpoint, DEFAULT_TIMEOUT),
        }
    }
}

#[derive(Serialize)]
struct CountRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct CountResponse {
    count: usize,
}

impl TokenCounter for HttpTokenizer {
    fn count(&self, text: &str) -> Result<usize> {
        if text.is_empty() {
            return Ok(0);
        }
        let resp: CountResponse = self.client.post(&CountRequest { text })?;
        Ok(resp.count)
    }

    fn name(&self) -> &str {
        self.client.endpoint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Prose,
    EquationBearing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    pub tokens: usize,
    pub kind: ChunkKind,
    /// A single sentence or equation block larger than the budget.
    pub oversize: bool,
}

const MATH_ENVIRONMENTS: &[&str] = &[
    "equation", "equation*", "align", "align*", "gather", "gather*", "multline",
    "multline*", "eqnarray", "eqnarray*", "displaymath", "math", "flalign",
    "flalign*", "alignat", "alignat*",
];

fn is_escaped(bytes: &[u8], i: usize) -> bool {
    bytes[..i].iter().rev().take_while(|&&b| b == b'\\').count() % 2 == 1
}

fn find_unescaped(text: &str, from: usize, pat: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut start = from;
    while let Some(p) = text[start..].find(pat) {
        let at = start + p;
        if !is_escaped(bytes, at) {
            return Some(at);
        }
        start = at + 1;
    }
    None
}

/// Byte ranges of equation blocks: `$$…$$`, `$…$` and math environments.
/// An opening delimiter without a matching close is not an equation.
pub fn equation_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if text[i..].starts_with("\\begin{") => {
                let name_start = i + "\\begin{".len();
                let found = text[name_start..].find('}').and_then(|close| {
                    let name = &text[name_start..name_start + close];
                    if !MATH_ENVIRONMENTS.contains(&name) {
                        return None;
                    }
                    let end_tag = format!("\\end{{{name}}}");
                    text[name_start..]
                        .find(&end_tag)
                        .map(|p| name_start + p + end_tag.len())
                });
                match found {
                    Some(end) => {
                        spans.push((i, end));
                        i = end;
                    }
                    None => i += 1,
                }
            }
            b'\\' => i += 2,
            b'$' if bytes.get(i + 1) == Some(&b'$') => {
                match find_unescaped(text, i + 2, "$$") {
                    Some(close) => {
                        spans.push((i, close + 2));
                        i = close + 2;
                    }
                    None => i += 2,
                }
            }
            b'$' => match find_unescaped(text, i + 1, "$") {
                Some(close) => {
                    spans.push((i, close + 1));
                    i = close + 1;
                }
                None => i += 1,
            },
            _ => i += 1,
        }
    }
    spans
}

/// Membership test over sorted, disjoint spans for nondecreasing positions.
struct SpanCursor<'a> {
    spans: &'a [(usize, usize)],
    next: usize,
}

impl<'a> SpanCursor<'a> {
    fn new(spans: &'a [(usize, usize)]) -> Self {
        SpanCursor { spans, next: 0 }
    }

    fn contains(&mut self, pos: usize) -> bool {
        while self.next < self.spans.len() && self.spans[self.next].1 <= pos {
            self.next += 1;
        }
        self.spans
            .get(self.next)
            .is_some_and(|&(s, e)| s <= pos && pos < e)
    }
}

/// Splits at blank lines that are not inside an equation block.
pub fn split_paragraphs(text: &str) -> Vec<&str> {
    let spans = equation_spans(text);
    let mut cursor = SpanCursor::new(&spans);
    let mut out = Vec::new();
    let mut start = 0;
    let mut pos = 0;
    while let Some(p) = text[pos..].find('\n') {
        let nl = pos + p;
        let rest = &text[nl + 1..];
        let ws = rest.len() - rest.trim_start_matches([' ', '\t', '\r']).len();
        if rest[ws..].starts_with('\n') && !cursor.contains(nl) {
            let end = nl + 1 + ws + 1;
            out.push(&text[start..nl]);
            start = end;
            pos = end;
        } else {
            pos = nl + 1;
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect()
}

/// Splits at `.`, `?` or `!` followed by whitespace and an uppercase
/// letter, and at blank lines, never inside an equation block.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let spans = equation_spans(text);
    let mut cursor = SpanCursor::new(&spans);
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if cursor.contains(i) {
            continue;
        }
        let boundary = match c {
            '.' | '?' | '!' => {
                let rest = &text[i + 1..];
                let trimmed = rest.trim_start();
                trimmed.len() < rest.len()
                    && trimmed.chars().next().is_some_and(char::is_uppercase)
            }
            '\n' => {
                let rest = &text[i + 1..];
                rest.trim_start_matches([' ', '\t', '\r']).starts_with('\n')
            }
            _ => false,
        };
        if boundary {
            out.push(&text[start..i + c.len_utf8()]);
            start = i + c.len_utf8();
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn kind_of(text: &str) -> ChunkKind {
    if equation_spans(text).is_empty() {
        ChunkKind::Prose
    } else {
        ChunkKind::EquationBearing
    }
}

/// Greedy packing of units into chunks whose joined text fits `budget`.
fn pack(units: &[&str], tc: &dyn TokenCounter, budget: usize, out: &mut Vec<Chunk>) -> Result<()> {
    let mut current = String::new();
    let mut current_tokens = 0;
    let flush = |text: &mut String, tokens: usize, out: &mut Vec<Chunk>| {
        if !text.is_empty() {
            let text = std::mem::take(text);
            out.push(Chunk {
                index: out.len(),
                kind: kind_of(&text),
                oversize: tokens > budget,
                tokens,
                text,
            });
        }
    };
    for unit in units {
        if current.is_empty() {
            current.push_str(unit);
            current_tokens = tc.count(&current)?;
            continue;
        }
        let candidate = format!("{current} {unit}");
        let tokens = tc.count(&candidate)?;
        if tokens <= budget && current_tokens <= budget {
            current = candidate;
            current_tokens = tokens;
        } else {
            flush(&mut current, current_tokens, out);
            current.push_str(unit);
            current_tokens = tc.count(&current)?;
        }
    }
    flush(&mut current, current_tokens, out);
    Ok(())
}

/// Sentence-aware chunks of at most `budget` tokens each.
pub fn chunk_sentences(text: &str, tc: &dyn TokenCounter, budget: usize) -> Result<Vec<Chunk>> {
    if budget == 0 {
        return Err(Error::param("chunk budget must be at least 1"));
    }
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut out = Vec::new();
    pack(&split_sentences(text), tc, budget, &mut out)?;
    Ok(out)
}

/// One chunk per paragraph; paragraphs longer than `max_paragraph` tokens
/// are re-split sentence-aware.
pub fn chunk_paragraphs(text: &str, tc: &dyn TokenCounter, max_paragraph: usize) -> Result<Vec<Chunk>> {
    if max_paragraph == 0 {
        return Err(Error::param("paragraph limit must be at least 1"));
    }
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut out = Vec::new();
    for para in split_paragraphs(text) {
        let tokens = tc.count(para)?;
        if tokens <= max_paragraph {
            out.push(Chunk {
                index: out.len(),
                text: para.to_string(),
                tokens,
                kind: kind_of(para),
                oversize: false,
            });
        } else {
            pack(&split_sentences(para), tc, max_paragraph, &mut out)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    PileChunks,
    PaperParagraphs,
}

/// One supervision record. Keys serialize in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPair {
    pub doc_id: u64,
    pub pair_index: usize,
    pub source: Source,
    pub strategy: PairStrategy,
    pub input_chunks: Vec<usize>,
    pub output_chunks: Vec<usize>,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub input: String,
    pub output: String,
}

fn join(chunks: &[Chunk], range: &[usize], sep: &str) -> String {
    range
        .iter()
        .map(|&i| chunks[i].text.as_str())
        .collect::<Vec<_>>()
        .join(sep)
}

/// Windows of six consecutive chunks starting at every second chunk.
/// Incomplete trailing windows are dropped.
pub fn pair_pile(doc: &Document, chunks: &[Chunk], tc: &dyn TokenCounter) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    let mut s = 0;
    while s + 2 * PILE_SIDE <= chunks.len() {
        let input_chunks: Vec<usize> = (s..s + PILE_SIDE).collect();
        let output_chunks: Vec<usize> = (s + PILE_SIDE..s + 2 * PILE_SIDE).collect();
        let input = join(chunks, &input_chunks, " ");
        let output = join(chunks, &output_chunks, " ");
        pairs.push(TrainingPair {
            doc_id: doc.id,
            pair_index: pairs.len(),
            source: doc.source.clone(),
            strategy: PairStrategy::PileChunks,
            tokens_in: tc.count(&input)?,
            tokens_out: tc.count(&output)?,
            input_chunks,
            output_chunks,
            input,
            output,
        });
        s += PILE_STRIDE;
    }
    Ok(pairs)
}

/// Paragraph windows. Starting at chunk `s`, the input grows while it is
/// under `side_target` and still leaves room for at least one output
/// chunk; the output then grows while under `side_target` and within
/// `pair_budget`. The next window starts at the last input chunk (or one
/// past `s` when the input was a single chunk). Pairing stops once a pair
/// reaches the final chunk.
pub fn pair_paper(
    doc: &Document,
    chunks: &[Chunk],
    tc: &dyn TokenCounter,
    pair_budget: usize,
    side_target: usize,
) -> Result<Vec<TrainingPair>> {
    let tok: Vec<usize> = chunks.iter().map(|c| c.tokens).collect();
    let n = chunks.len();
    let mut pairs = Vec::new();
    let mut s = 0;
    while s + 1 < n {
        if tok[s] + tok[s + 1] > pair_budget {
            s += 1;
            continue;
        }
        let mut input_chunks = vec![s];
        let mut tin = tok[s];
        let mut c = s + 1;
        while tin < side_target && c + 1 < n && tin + tok[c] + tok[c + 1] <= pair_budget {
            input_chunks.push(c);
            tin += tok[c];
            c += 1;
        }
        let mut output_chunks = Vec::new();
        let mut tout = 0;
        while c < n && tout < side_target && tin + tout + tok[c] <= pair_budget {
            output_chunks.push(c);
            tout += tok[c];
            c += 1;
        }
        let reached_end = output_chunks.last() == Some(&(n - 1));
        let input = join(chunks, &input_chunks, "\n\n");
        let output = join(chunks, &output_chunks, "\n\n");
        let (tokens_in, tokens_out) = (tc.count(&input)?, tc.count(&output)?);
        if !output_chunks.is_empty() && tokens_in + tokens_out <= pair_budget {
            let last_in = *input_chunks.last().expect("input is nonempty");
            pairs.push(TrainingPair {
                doc_id: doc.id,
                pair_index: pairs.len(),
                source: doc.source.clone(),
                strategy: PairStrategy::PaperParagraphs,
                input_chunks,
                output_chunks,
                tokens_in,
                tokens_out,
                input,
                output,
            });
            if reached_end {
                break;
            }
            s = if last_in == s { s + 1 } else { last_in };
        } else {
            s += 1;
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Pile,
    Paper,
    /// `paper` for scientific papers, `pile` for everything else.
    #[default]
    Auto,
}

impl StrategyChoice {
    pub fn resolve(self, source: &Source) -> PairStrategy {
        match self {
            StrategyChoice::Pile => PairStrategy::PileChunks,
            StrategyChoice::Paper => PairStrategy::PaperParagraphs,
            StrategyChoice::Auto if *source == Source::ScientificPapers => {
                PairStrategy::PaperParagraphs
            }
            StrategyChoice::Auto => PairStrategy::PileChunks,
        }
    }
}

impl FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pile" => Ok(StrategyChoice::Pile),
            "paper" => Ok(StrategyChoice::Paper),
            "auto" => Ok(StrategyChoice::Auto),
            other => Err(Error::param(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    #[default]
    Whitespace,
    Http,
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizerKind::Whitespace),
            "http" => Ok(TokenizerKind::Http),
            other => Err(Error::param(format!("unknown tokenizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub strategy: StrategyChoice,
    pub chunk_budget: usize,
    pub max_paragraph: usize,
    pub pair_budget: usize,
    pub side_target: usize,
    pub tokenizer: TokenizerKind,
    pub tokenizer_endpoint: Option<String>,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            strategy: StrategyChoice::Auto,
            chunk_budget: DEFAULT_CHUNK_BUDGET,
            max_paragraph: DEFAULT_MAX_PARAGRAPH,
            pair_budget: DEFAULT_PAIR_BUDGET,
            side_target: DEFAULT_SIDE_TARGET,
            tokenizer: TokenizerKind::Whitespace,
            tokenizer_endpoint: None,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("chunk_budget", self.chunk_budget),
            ("max_paragraph", self.max_paragraph),
            ("pair_budget", self.pair_budget),
            ("side_target", self.side_target),
        ] {
            if v == 0 {
                return Err(Error::param(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn build_tokenizer(&self) -> Result<Box<dyn TokenCounter>> {
        match self.tokenizer {
            TokenizerKind::Whitespace => Ok(Box::new(WhitespaceCounter)),
            TokenizerKind::Http => {
                let endpoint = self.tokenizer_endpoint.clone().ok_or_else(|| {
                    Error::Config("the http tokenizer needs an endpoint".into())
                })?;
                Ok(Box::new(HttpTokenizer::new(endpoint)))
            }
        }
    }
}

/// Chunks and pairs one document with the strategy chosen for its source.
pub fn pairs_for_document(doc: &Document, tc: &dyn TokenCounter, cfg: &PairConfig) -> Result<Vec<TrainingPair>> {
    match cfg.strategy.resolve(&doc.source) {
        PairStrategy::PileChunks => {
            let chunks = chunk_sentences(&doc.text, tc, cfg.chunk_budget)?;
            pair_pile(doc, &chunks, tc)
        }
        PairStrategy::PaperParagraphs => {
            let chunks = chunk_paragraphs(&doc.text, tc, cfg.max_paragraph)?;
            pair_paper(doc, &chunks, tc, cfg.pair_budget, cfg.side_target)
        }
    }
}

#[derive(Debug)]
pub struct PairOutcome {
    /// Sorted by (doc_id, pair_index).
    pub pairs: Vec<TrainingPair>,
    pub manifest: RunManifest,
}

/// Pairs every document in parallel. Documents that yield no pair are
/// counted as dropped.
pub fn make_pairs(docs: Vec<Document>, tc: &dyn TokenCounter, cfg: &PairConfig) -> Result<PairOutcome> {
    cfg.validate()?;
    let mut manifest = ManifestBuilder::new("make-pairs", 0, cfg);
    let mut per_doc: Vec<(u64, Vec<TrainingPair>)> = docs
        .par_iter()
        .map(|doc| {
            pairs_for_document(doc, tc, cfg)
                .map(|p| (doc.id, p))
                .map_err(|e| Error::stage("make-pairs", doc.id, e))
        })
        .collect::<Result<_>>()?;
    per_doc.sort_by_key(|(id, _)| *id);

    let mut pairs = Vec::new();
    let mut by_strategy = std::collections::BTreeMap::<String, usize>::new();
    for (_, doc_pairs) in per_doc {
        manifest.input();
        if doc_pairs.is_empty() {
            manifest.drop(DROP_NO_PAIRS);
            continue;
        }
        manifest.keep();
        for p in &doc_pairs {
            let label = serde_json::to_value(p.strategy).expect("strategy serializes");
            *by_strategy
                .entry(label.as_str().unwrap_or_default().to_string())
                .or_default() += 1;
        }
        pairs.extend(doc_pairs);
    }
    manifest.detail("tokenizer", tc.name());
    manifest.detail("pairs", pairs.len());
    manifest.detail("pairs_by_strategy", by_strategy);
    Ok(PairOutcome {
        pairs,
        manifest: manifest.finish(),
    })
}
