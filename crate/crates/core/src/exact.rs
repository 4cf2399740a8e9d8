//! Byte-exact duplicate removal by 128-bit content digest.
//!
//! Digests cover the raw UTF-8 bytes of the text only. Documents sharing a
//! digest are compared in full before one is dropped, so a hash collision
//! can never remove a distinct document.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hash;
use crate::model::{Document, ManifestBuilder, RunManifest};

pub const DROP_EXACT_DUPLICATE: &str = "exact_duplicate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentDigest {
    pub digest: u128,
    pub doc_id: u64,
}

impl ContentDigest {
    pub fn of(doc: &Document) -> Self {
        ContentDigest {
            digest: hash::content_digest(doc.text.as_bytes()),
            doc_id: doc.id,
        }
    }

    pub fn hex(&self) -> String {
        format!("{:032x}", self.digest)
    }
}

/// One dropped document and the retained document it duplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDuplicate {
    pub dropped: u64,
    pub retained: u64,
    pub digest: String,
}

#[derive(Debug)]
pub struct ExactOutcome {
    pub retained: Vec<Document>,
    pub duplicates: Vec<ExactDuplicate>,
    pub manifest: RunManifest,
}

/// Keeps, for each distinct text, the occurrence with the smallest id.
/// Output is sorted by id, so the result does not depend on input order.
pub fn dedup_exact(docs: Vec<Document>) -> Result<ExactOutcome> {
    dedup_exact_by(docs, |text| hash::content_digest(text.as_bytes()))
}

fn dedup_exact_by<H>(docs: Vec<Document>, digest_of: H) -> Result<ExactOutcome>
where
    H: Fn(&str) -> u128 + Sync,
{
    let mut manifest = ManifestBuilder::new("dedup-exact", 0, &serde_json::json!({}));

    let mut docs = docs;
    docs.sort_by_key(|d| d.id);
    let mut digests: Vec<(ContentDigest, usize)> = docs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let cd = ContentDigest {
                digest: digest_of(&d.text),
                doc_id: d.id,
            };
            (cd, i)
        })
        .collect();
    digests.sort_by_key(|(d, _)| (d.digest, d.doc_id));

    let mut keep = vec![true; docs.len()];
    let mut duplicates = Vec::new();
    let mut run_start = 0;
    while run_start < digests.len() {
        let digest = digests[run_start].0.digest;
        let run_end = digests[run_start..]
            .iter()
            .position(|(d, _)| d.digest != digest)
            .map_or(digests.len(), |p| run_start + p);
        // Within a run (ascending id) each text keeps its first occurrence.
        let mut representatives: Vec<usize> = Vec::new();
        for &(cd, idx) in &digests[run_start..run_end] {
            match representatives
                .iter()
                .find(|&&r| docs[r].text == docs[idx].text)
            {
                Some(&r) => {
                    keep[idx] = false;
                    duplicates.push(ExactDuplicate {
                        dropped: cd.doc_id,
                        retained: docs[r].id,
                        digest: cd.hex(),
                    });
                }
                None => representatives.push(idx),
            }
        }
        run_start = run_end;
    }

    let mut retained = Vec::with_capacity(docs.len());
    for (doc, keep) in docs.into_iter().zip(keep) {
        manifest.input();
        if keep {
            manifest.keep();
            retained.push(doc);
        } else {
            manifest.drop(DROP_EXACT_DUPLICATE);
        }
    }
    duplicates.sort_by_key(|d| d.dropped);
    Ok(ExactOutcome {
        retained,
        duplicates,
        manifest: manifest.finish(),
    })
}
