//! Quality retention: documents labeled high or medium are kept, low are
//! dropped. The label comes from a pluggable [`QualityClassifier`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, ManifestBuilder, RunManifest};
use crate::remote::{JsonClient, DEFAULT_TIMEOUT};

pub const DROP_LOW_QUALITY: &str = "low_quality";
pub const DEFAULT_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    High,
    Medium,
    Low,
}

impl Quality {
    pub fn retained(self) -> bool {
        matches!(self, Quality::High | Quality::Medium)
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quality::High => "high",
            Quality::Medium => "medium",
            Quality::Low => "low",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityLabel {
    pub label: Quality,
    pub score: f64,
}

pub trait QualityClassifier: Sync {
    fn classify(&self, text: &str) -> Result<QualityLabel>;
    fn name(&self) -> &str;
    fn is_deterministic(&self) -> bool;
}

/// Surface statistics the heuristic classifier scores on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextFeatures {
    /// Non-control characters (newline and tab count as printable) over all characters.
    pub printable_ratio: f64,
    /// Alphabetic characters over non-whitespace characters.
    pub alphabetic_ratio: f64,
    /// Whitespace-separated words per sentence; sentences end at `.`, `!` or `?`.
    pub mean_sentence_words: f64,
    /// `#` characters, ellipses (`...` or `…`) per word.
    pub symbol_word_ratio: f64,
}

impl TextFeatures {
    pub fn of(text: &str) -> Option<Self> {
        let total = text.chars().count();
        let words = text.split_whitespace().count();
        if total == 0 || words == 0 {
            return None;
        }
        let printable = text
            .chars()
            .filter(|c| !c.is_control() || matches!(c, '\n' | '\t' | '\r'))
            .count();
        let non_ws = text.chars().filter(|c| !c.is_whitespace()).count();
        let alpha = text.chars().filter(|c| c.is_alphabetic()).count();
        let sentences = text
            .split(['.', '!', '?'])
            .filter(|s| s.split_whitespace().next().is_some())
            .count()
            .max(1);
        let symbols = text.chars().filter(|&c| c == '#' || c == '…').count()
            + text.matches("...").count();
        Some(TextFeatures {
            printable_ratio: printable as f64 / total as f64,
            alphabetic_ratio: alpha as f64 / non_ws as f64,
            mean_sentence_words: words as f64 / sentences as f64,
            symbol_word_ratio: symbols as f64 / words as f64,
        })
    }

    /// Mean of four components in [0, 1].
    pub fn score(&self) -> f64 {
        let printable = self.printable_ratio;
        let alphabetic = (self.alphabetic_ratio / 0.75).min(1.0);
        let sentences = if (3.0..=80.0).contains(&self.mean_sentence_words) {
            1.0
        } else {
            0.0
        };
        let symbols = if self.symbol_word_ratio <= 0.1 { 1.0 } else { 0.0 };
        (printable + alphabetic + sentences + symbols) / 4.0
    }
}

pub fn label_for_score(score: f64) -> Quality {
    if score >= 0.66 {
        Quality::High
    } else if score >= 0.33 {
        Quality::Medium
    } else {
        Quality::Low
    }
}

/// Deterministic baseline standing in for a trained quality model.
#[derive(Debug, Clone, Default)]
pub struct HeuristicClassifier;

impl QualityClassifier for HeuristicClassifier {
    fn classify(&self, text: &str) -> Result<QualityLabel> {
        let score = TextFeatures::of(text).map_or(0.0, |f| f.score());
        Ok(QualityLabel {
            label: label_for_score(score),
            score,
        })
    }

    fn name(&self) -> &str {
        "heuristic"
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

pub fn heuristic_classifier() -> HeuristicClassifier {
    HeuristicClassifier
}

/// Client for an external classifier service.
///
/// Request: `{"text": "..."}`. Response: `{"label": "high|medium|low", "score": 0.93}`.
#[derive(Debug, Clone)]
pub struct HttpClassifier {
    client: JsonClient,
}

impl HttpClassifier {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpClassifier {
            client: JsonClient::new(endpoint, DEFAULT_TIMEOUT),
        }
    }
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
}

impl QualityClassifier for HttpClassifier {
    fn classify(&self, text: &str) -> Result<QualityLabel> {
        self.client.post(&ClassifyRequest { text })
    }

    fn name(&self) -> &str {
        self.client.endpoint()
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Heuristic,
    Http,
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(ClassifierKind::Heuristic),
            "http" => Ok(ClassifierKind::Http),
            other => Err(Error::param(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub classifier: ClassifierKind,
    pub endpoint: Option<String>,
}

impl QualityConfig {
    pub fn build(&self) -> Result<Box<dyn QualityClassifier>> {
        match self.classifier {
            ClassifierKind::Heuristic => Ok(Box::new(HeuristicClassifier)),
            ClassifierKind::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    Error::Config("the http classifier needs an endpoint".into())
                })?;
                Ok(Box::new(HttpClassifier::new(endpoint)))
            }
        }
    }
}

/// Streams documents through the classifier in batches, classifying each
/// batch in parallel and emitting survivors in input order. Any classifier
/// failure aborts the stage with the offending document id.
pub fn filter_quality<I, F>(
    docs: I,
    clf: &dyn QualityClassifier,
    params: &QualityConfig,
    mut sink: F,
) -> Result<RunManifest>
where
    I: IntoIterator<Item = Result<Document>>,
    F: FnMut(Document) -> Result<()>,
{
    let mut manifest = ManifestBuilder::new("filter-quality", 0, params);
    let mut counts = [0u64; 3];
    let mut docs = docs.into_iter();
    loop {
        let batch: Vec<Document> = docs
            .by_ref()
            .take(DEFAULT_BATCH)
            .collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        let labels: Vec<QualityLabel> = batch
            .par_iter()
            .map(|d| {
                clf.classify(&d.text)
                    .map_err(|e| Error::stage("filter-quality", d.id, e))
            })
            .collect::<Result<_>>()?;
        for (doc, label) in batch.into_iter().zip(labels) {
            manifest.input();
            counts[label.label as usize] += 1;
            if label.label.retained() {
                manifest.keep();
                sink(doc)?;
            } else {
                manifest.drop(DROP_LOW_QUALITY);
            }
        }
    }
    manifest.detail("classifier", clf.name());
    manifest.detail(
        "labels",
        serde_json::json!({"high": counts[0], "medium": counts[1], "low": counts[2]}),
    );
    Ok(manifest.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;
    use std::collections::HashMap;

    struct Fixed(HashMap<String, Quality>);

    impl QualityClassifier for Fixed {
        fn classify(&self, text: &str) -> Result<QualityLabel> {
            match self.0.get(text) {
                Some(&label) => Ok(QualityLabel { label, score: 1.0 }),
                None => Err(Error::Remote("unknown text".into())),
            }
        }
        fn name(&self) -> &str {
            "fixed"
        }
        fn is_deterministic(&self) -> bool {
            true
        }
    }

    fn run(clf: &dyn QualityClassifier, texts: &[&str]) -> Result<(Vec<u64>, RunManifest)> {
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Ok(Document::new(i as u64 + 1, Source::PileGeneral, *t)));
        let mut kept = Vec::new();
        let m = filter_quality(docs, clf, &QualityConfig::default(), |d| {
            kept.push(d.id);
            Ok(())
        })?;
        Ok((kept, m))
    }

    fn fixed() -> Fixed {
        Fixed(HashMap::from([
            ("h".to_string(), Quality::High),
            ("m".to_string(), Quality::Medium),
            ("l".to_string(), Quality::Low),
        ]))
    }

    #[test]
    fn keeps_high_and_medium_in_order() {
        let (kept, m) = run(&fixed(), &["h", "l", "m"]).unwrap();
        assert_eq!(kept, vec![1, 3]);
        assert_eq!(m.drop_reasons[DROP_LOW_QUALITY], 1);
    }

    #[test]
    fn all_high_is_identity_and_empty_is_empty() {
        assert_eq!(run(&fixed(), &["h", "h"]).unwrap().0, vec![1, 2]);
        let (kept, m) = run(&fixed(), &[]).unwrap();
        assert!(kept.is_empty());
        assert_eq!(m.docs_in, 0);
    }

    #[test]
    fn classifier_failure_names_document() {
        match run(&fixed(), &["h", "???"]).unwrap_err() {
            Error::Stage { doc_id, stage, .. } => {
                assert_eq!(doc_id, 2);
                assert_eq!(stage, "filter-quality");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn heuristic_degenerate_inputs_are_low() {
        let clf = heuristic_classifier();
        let empty = clf.classify("").unwrap();
        assert_eq!(empty.label, Quality::Low);
        assert_eq!(empty.score, 0.0);
        assert_eq!(clf.classify(&"#".repeat(1000)).unwrap().label, Quality::Low);
    }

    #[test]
    fn heuristic_features_by_hand() {
        // 12 words, 2 sentences, 63 letters out of 65 non-space chars, no symbols.
        let text = "Solar panels convert sunlight into power. Wind farms feed the regional grid.";
        let f = TextFeatures::of(text).unwrap();
        assert_eq!(f.printable_ratio, 1.0);
        assert_eq!(f.mean_sentence_words, 6.0);
        assert_eq!(f.symbol_word_ratio, 0.0);
        let letters = 63.0;
        let non_ws = 65.0;
        assert!((f.alphabetic_ratio - letters / non_ws).abs() < 1e-12);
        // score = (1 + min(1, 0.969/0.75) + 1 + 1) / 4 = 1
        assert_eq!(f.score(), 1.0);
        assert_eq!(heuristic_classifier().classify(text).unwrap().label, Quality::High);
    }

    #[test]
    fn score_thresholds() {
        assert_eq!(label_for_score(0.66), Quality::High);
        assert_eq!(label_for_score(0.659), Quality::Medium);
        assert_eq!(label_for_score(0.33), Quality::Medium);
        assert_eq!(label_for_score(0.329), Quality::Low);
    }

    #[test]
    fn http_config_requires_endpoint() {
        let cfg = QualityConfig {
            classifier: ClassifierKind::Http,
            endpoint: None,
        };
        assert!(cfg.build().is_err());
    }
}
