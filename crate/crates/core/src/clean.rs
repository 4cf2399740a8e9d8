//! Rule-based cleaning of extracted scientific text.
//!
//! Rules run in a fixed order: NFC normalization, OCR hyphenation repair,
//! URL and DOI stripping, numeric citation removal, whitespace
//! normalization, LaTeX delimiter repair, and a final NFC pass. Every rule
//! is applied to a fixpoint so the whole transformation is idempotent.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::Result;
use crate::model::{Document, ManifestBuilder, RunManifest};

pub const DEFAULT_MIN_CHARS: usize = 200;

pub const DROP_EMPTY: &str = "empty_after_clean";
pub const DROP_TOO_SHORT: &str = "too_short";

static HYPHENATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(\p{Alphabetic})-[ \t]*\n[ \t]*(\p{Alphabetic})").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"https?://\S+").unwrap());
static DOI: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:doi:\s*)?10\.\d{4,9}/\S+").unwrap());
static CITATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\d+(?:,\s*\d+)*\]").unwrap());
static PARAGRAPH_BREAK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t]*\n\s*").unwrap());
static ENVIRONMENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\(begin|end)\{([^{}\s]+)\}").unwrap());

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rules_fired: BTreeMap<String, u64>,
    /// Net characters removed: `len(input) - len(output) + chars_inserted`.
    pub chars_removed: u64,
    pub chars_inserted: u64,
    pub latex_fixes: u64,
}

impl CleaningReport {
    fn fired(&mut self, rule: &str, count: u64) {
        if count > 0 {
            *self.rules_fired.entry(rule.to_string()).or_insert(0) += count;
        }
    }
}

fn replace_to_fixpoint(text: String, re: &Regex, replacement: &str) -> (String, u64) {
    let mut text = text;
    let mut fired = 0;
    loop {
        let n = re.find_iter(&text).count() as u64;
        if n == 0 {
            return (text, fired);
        }
        fired += n;
        text = re.replace_all(&text, replacement).into_owned();
    }
}

/// Collapses whitespace runs to single spaces inside paragraphs and keeps
/// exactly one blank line between paragraphs.
fn normalize_whitespace(text: &str) -> (String, u64) {
    let mut collapsed = 0;
    let paragraphs: Vec<String> = PARAGRAPH_BREAK
        .split(text)
        .filter_map(|para| {
            let mut out = String::with_capacity(para.len());
            for word in para.split_whitespace() {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(word);
            }
            if out.is_empty() {
                None
            } else {
                Some(out)
            }
        })
        .collect();
    let joined = paragraphs.join("\n\n");
    if joined != text {
        // Count runs that were not already canonical.
        collapsed = text
            .split(|c: char| !c.is_whitespace())
            .filter(|run| !run.is_empty() && *run != " " && *run != "\n\n")
            .count()
            .max(1) as u64;
    }
    (joined, collapsed)
}

/// Byte offsets of `$` characters not escaped by an odd run of backslashes.
pub fn unescaped_dollars(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'$' {
            continue;
        }
        let backslashes = bytes[..i].iter().rev().take_while(|&&c| c == b'\\').count();
        if backslashes % 2 == 0 {
            out.push(i);
        }
    }
    out
}

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];

/// Where to close an unterminated inline-math span that opens at `open`:
/// after the run of formula-like tokens that follows the delimiter, or at
/// the end of the paragraph when no such run exists.
fn closing_position(para: &str, open: usize) -> usize {
    let rest = &para[open + 1..];
    let mut end: Option<usize> = None;
    let mut pos = 0;
    for token in rest.split_whitespace() {
        let start = pos + rest[pos..].find(token).expect("token comes from rest");
        pos = start + token.len();
        let core = token.trim_end_matches(TRAILING_PUNCT);
        if core.is_empty() {
            break;
        }
        let wordlike = core.chars().count() >= 2 && core.chars().all(char::is_alphabetic);
        if wordlike {
            break;
        }
        end = Some(start + core.len());
        if core.len() != token.len() {
            break;
        }
    }
    match end {
        Some(e) => open + 1 + e,
        None => para.len(),
    }
}

/// Where to open a span whose only delimiter closes it (nothing follows the
/// `$`): before the run of formula-like tokens preceding it, or at
/// paragraph start.
fn opening_position(para: &str, close: usize) -> usize {
    let before = &para[..close];
    let mut start: Option<usize> = None;
    let mut pos = before.len();
    for token in before.split_whitespace().rev() {
        let at = before[..pos].rfind(token).expect("token comes from before");
        pos = at;
        let core = token.trim_end_matches(TRAILING_PUNCT);
        let wordlike = core.chars().count() >= 2 && core.chars().all(char::is_alphabetic);
        if core.is_empty() || wordlike || core.len() != token.len() {
            break;
        }
        start = Some(at);
    }
    start.unwrap_or(0)
}

fn repair_paragraph(para: &str) -> (String, u64) {
    let mut text = para.to_string();
    let mut fixes = 0;

    let dollars = unescaped_dollars(&text);
    if dollars.len() % 2 == 1 {
        let last = *dollars.last().expect("odd count is nonzero");
        let at = if text[last + 1..].trim().is_empty() {
            opening_position(&text, last)
        } else {
            closing_position(&text, last)
        };
        text.insert(at, '$');
        fixes += 1;
    }

    // Per-environment balance: orphan \end{X} gets a \begin{X} at paragraph
    // start, unclosed \begin{X} gets an \end{X} at paragraph end.
    let mut depth: BTreeMap<String, usize> = BTreeMap::new();
    let mut orphans: Vec<String> = Vec::new();
    let mut open_order: Vec<String> = Vec::new();
    for cap in ENVIRONMENT.captures_iter(&text) {
        let name = cap[2].to_string();
        let d = depth.entry(name.clone()).or_insert(0);
        if &cap[1] == "begin" {
            *d += 1;
            open_order.push(name);
        } else if *d > 0 {
            *d -= 1;
            if let Some(i) = open_order.iter().rposition(|n| *n == name) {
                open_order.remove(i);
            }
        } else {
            orphans.push(name);
        }
    }
    if !orphans.is_empty() {
        let prefix: String = orphans
            .iter()
            .rev()
            .map(|name| format!("\\begin{{{name}}}"))
            .collect();
        text.insert_str(0, &prefix);
        fixes += orphans.len() as u64;
    }
    for name in open_order.iter().rev() {
        text.push_str(&format!("\\end{{{name}}}"));
        fixes += 1;
    }
    (text, fixes)
}

/// Balances inline-math delimiters and LaTeX environments paragraph by
/// paragraph. Only inserts; never removes author text.
pub fn repair_latex(text: &str) -> (String, u64) {
    let mut out = String::with_capacity(text.len() + 16);
    let mut fixes = 0;
    let mut last = 0;
    for sep in PARAGRAPH_BREAK.find_iter(text) {
        let (para, n) = repair_paragraph(&text[last..sep.start()]);
        out.push_str(&para);
        out.push_str(sep.as_str());
        fixes += n;
        last = sep.end();
    }
    let (para, n) = repair_paragraph(&text[last..]);
    out.push_str(&para);
    fixes += n;
    (out, fixes)
}

/// Cleans one piece of text and reports which rules fired.
pub fn clean_text(input: &str) -> (String, CleaningReport) {
    let mut report = CleaningReport::default();
    let in_len = input.chars().count() as u64;

    let text: String = input.nfc().collect();
    if text != input {
        report.fired("unicode_nfc", 1);
    }
    let nfc_growth = (text.chars().count() as u64).saturating_sub(in_len);
    let text = text.replace("\r\n", "\n").replace('\r', "\n");

    let (text, n) = replace_to_fixpoint(text, &HYPHENATION, "$1$2");
    report.fired("hyphenation", n);
    let (text, n) = replace_to_fixpoint(text, &URL, "");
    report.fired("url", n);
    let (text, n) = replace_to_fixpoint(text, &DOI, "");
    report.fired("doi", n);
    let (text, n) = replace_to_fixpoint(text, &CITATION, "");
    report.fired("citation", n);

    let (text, n) = normalize_whitespace(&text);
    report.fired("whitespace", n);

    let before_repair = text.chars().count() as u64;
    let (text, fixes) = repair_latex(&text);
    report.fired("latex", fixes);
    report.latex_fixes = fixes;
    let inserted = text.chars().count() as u64 - before_repair;

    let text: String = text.nfc().collect();

    let out_len = text.chars().count() as u64;
    report.chars_inserted = inserted + nfc_growth;
    report.chars_removed = (in_len + report.chars_inserted).saturating_sub(out_len);
    (text, report)
}

pub fn clean_document(doc: &Document) -> (Document, CleaningReport) {
    let (text, report) = clean_text(&doc.text);
    (
        Document {
            text,
            ..doc.clone()
        },
        report,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanConfig {
    #[serde(default = "default_min_chars")]
    pub min_chars: usize,
}

fn default_min_chars() -> usize {
    DEFAULT_MIN_CHARS
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            min_chars: DEFAULT_MIN_CHARS,
        }
    }
}

/// Cleaning stage: cleans each document and drops those that end up
/// empty or shorter than `min_chars` characters.
pub fn clean_stage<I, F>(docs: I, cfg: &CleanConfig, mut sink: F) -> Result<RunManifest>
where
    I: IntoIterator<Item = Result<Document>>,
    F: FnMut(Document) -> Result<()>,
{
    let mut manifest = ManifestBuilder::new("clean", 0, cfg);
    let mut totals = CleaningReport::default();
    for doc in docs {
        let doc = doc?;
        manifest.input();
        let (cleaned, report) = clean_document(&doc);
        for (rule, n) in &report.rules_fired {
            totals.fired(rule, *n);
        }
        totals.chars_removed += report.chars_removed;
        totals.chars_inserted += report.chars_inserted;
        totals.latex_fixes += report.latex_fixes;

        let len = cleaned.text.chars().count();
        if len == 0 {
            manifest.drop(DROP_EMPTY);
        } else if len < cfg.min_chars {
            manifest.drop(DROP_TOO_SHORT);
        } else {
            manifest.keep();
            sink(cleaned)?;
        }
    }
    manifest.detail("cleaning", &totals);
    Ok(manifest.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn citation_markers_removed() {
        assert_eq!(clean_text("see [12] for details").0, "see for details");
        assert_eq!(clean_text("as shown [3,4] and [5, 6].").0, "as shown and .");
    }

    #[test]
    fn hyphenation_rejoined() {
        assert_eq!(clean_text("thermo-\ndynamics").0, "thermodynamics");
        assert_eq!(clean_text("a-\nb-\nc").0, "abc");
        // Digits on either side are not OCR hyphenation.
        assert_eq!(clean_text("2-\n3").0, "2- 3");
    }

    #[test]
    fn inline_math_closed_after_formula() {
        let (text, report) = clean_text("energy balance $E = mc^2 holds");
        assert_eq!(text, "energy balance $E = mc^2$ holds");
        assert_eq!(report.latex_fixes, 1);
        assert_eq!(unescaped_dollars(&text).len() % 2, 0);
    }

    #[test]
    fn urls_and_dois_removed() {
        let (text, report) =
            clean_text("Published at https://example.org/x?y=1 doi:10.1115/1.4046155 today");
        assert_eq!(text, "Published at today");
        assert_eq!(report.rules_fired["url"], 1);
        assert_eq!(report.rules_fired["doi"], 1);
        assert_eq!(clean_text("ref 10.1016/j.energy.2020.1 end").0, "ref end");
    }

    #[test]
    fn paragraph_breaks_preserved_as_one_blank_line() {
        assert_eq!(
            clean_text("  first   line\nsame para\n\n\n\n second  ").0,
            "first line same para\n\nsecond"
        );
    }

    #[test]
    fn nfc_applied() {
        let (text, report) = clean_text("cafe\u{301}");
        assert_eq!(text, "caf\u{e9}");
        assert!(report.rules_fired.contains_key("unicode_nfc"));
        // NFC keeps compatibility characters such as superscripts.
        assert_eq!(clean_text("x\u{b2}").0, "x\u{b2}");
    }

    #[test]
    fn repair_latex_examples() {
        assert_eq!(repair_latex("$x+1$"), ("$x+1$".to_string(), 0));
        assert_eq!(repair_latex("$x+1"), ("$x+1$".to_string(), 1));
        assert_eq!(
            repair_latex("\\begin{equation} a=b"),
            ("\\begin{equation} a=b\\end{equation}".to_string(), 1)
        );
    }

    #[test]
    fn repair_latex_is_per_paragraph() {
        let (text, fixes) = repair_latex("$a\n\nb$");
        assert_eq!(fixes, 2);
        assert_eq!(text, "$a$\n\n$b$");
    }

    #[test]
    fn escaped_dollars_ignored() {
        assert_eq!(repair_latex("costs \\$5 today"), ("costs \\$5 today".into(), 0));
        assert_eq!(unescaped_dollars("\\\\$x$").len(), 2);
    }

    #[test]
    fn orphan_end_gets_begin() {
        let (text, fixes) = repair_latex("a=b \\end{align}");
        assert_eq!(text, "\\begin{align}a=b \\end{align}");
        assert_eq!(fixes, 1);
    }

    #[test]
    fn math_closed_before_trailing_punctuation() {
        assert_eq!(repair_latex("where $a = b. Then").0, "where $a = b$. Then");
    }

    #[test]
    fn report_accounts_for_characters() {
        let input = "see [12] for $x details";
        let (out, report) = clean_text(input);
        let in_len = input.chars().count() as u64;
        let out_len = out.chars().count() as u64;
        assert_eq!(report.chars_removed, in_len - out_len + report.chars_inserted);
    }

    #[test]
    fn stage_drops_short_and_empty() {
        let long = "word ".repeat(60);
        let docs = vec![
            Ok(Document::new(1, crate::model::Source::PileGeneral, "  [1] ")),
            Ok(Document::new(2, crate::model::Source::PileGeneral, "short text")),
            Ok(Document::new(3, crate::model::Source::PileGeneral, long)),
        ];
        let mut kept = Vec::new();
        let manifest = clean_stage(docs, &CleanConfig::default(), |d| {
            kept.push(d.id);
            Ok(())
        })
        .unwrap();
        assert_eq!(kept, vec![3]);
        assert_eq!(manifest.drop_reasons[DROP_EMPTY], 1);
        assert_eq!(manifest.drop_reasons[DROP_TOO_SHORT], 1);
        assert_eq!(manifest.docs_in, 3);
    }
}
