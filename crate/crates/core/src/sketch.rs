//! Shingling, exact Jaccard similarity, MinHash signatures and the LSH
//! banding collision curve.
//!
//! Random permutations of the shingle universe are simulated by a family
//! of keyed 64-bit mixes: member `i` under base seed `s` maps a shingle hash
//! `x` to `keyed(x, family_key(s, i))`. A signature value is the minimum of
//! that map over the set, so it lives in the hash codomain rather than in
//! row-index space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{self, DOMAIN_MINHASH};

pub const DEFAULT_SHINGLE_K: usize = 5;
pub const DEFAULT_NUM_HASHES: usize = 260;
pub const DEFAULT_BANDS: usize = 20;
pub const DEFAULT_ROWS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShingleUnit {
    #[default]
    Word,
    Char,
}

impl fmt::Display for ShingleUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShingleUnit::Word => "word",
            ShingleUnit::Char => "char",
        })
    }
}

impl FromStr for ShingleUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(ShingleUnit::Word),
            "char" => Ok(ShingleUnit::Char),
            other => Err(Error::param(format!("unknown shingle unit {other:?}"))),
        }
    }
}

/// Set of shingle hashes, stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    hashes: Vec<u64>,
    k: usize,
    unit: ShingleUnit,
}

impl ShingleSet {
    /// Builds a set directly from shingle hashes.
    pub fn from_hashes(hashes: impl IntoIterator<Item = u64>, k: usize, unit: ShingleUnit) -> Self {
        let mut hashes: Vec<u64> = hashes.into_iter().collect();
        hashes.sort_unstable();
        hashes.dedup();
        ShingleSet { hashes, k, unit }
    }

    pub fn hashes(&self) -> &[u64] {
        &self.hashes
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn unit(&self) -> ShingleUnit {
        self.unit
    }

    /// Size of the intersection with `other`.
    pub fn intersection_len(&self, other: &ShingleSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.hashes, &other.hashes);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Shingles `text` into contiguous k-grams. Word shingles are taken over
/// lowercased whitespace tokens joined by single spaces; char shingles over
/// the raw characters. Texts shorter than `k` units form a single shingle.
pub fn shingle(text: &str, k: usize, unit: ShingleUnit) -> Result<ShingleSet> {
    if k == 0 {
        return Err(Error::param("shingle size k must be at least 1"));
    }
    let hashes: Vec<u64> = match unit {
        ShingleUnit::Word => {
            let lowered = text.to_lowercase();
            let tokens: Vec<&str> = lowered.split_whitespace().collect();
            if tokens.is_empty() {
                return Err(Error::EmptyDocument);
            }
            if tokens.len() < k {
                vec![hash::hash_str(&tokens.join(" "))]
            } else {
                tokens
                    .windows(k)
                    .map(|w| hash::hash_str(&w.join(" ")))
                    .collect()
            }
        }
        ShingleUnit::Char => {
            let chars: Vec<char> = text.chars().collect();
            if chars.is_empty() {
                return Err(Error::EmptyDocument);
            }
            if chars.len() < k {
                vec![hash::hash_str(text)]
            } else {
                let mut buf = String::new();
                chars
                    .windows(k)
                    .map(|w| {
                        buf.clear();
                        buf.extend(w);
                        hash::hash_str(&buf)
                    })
                    .collect()
            }
        }
    };
    Ok(ShingleSet::from_hashes(hashes, k, unit))
}

/// Exact Jaccard similarity `|A ∩ B| / |A ∪ B|`. Two empty sets are
/// treated as identical.
pub fn jaccard(a: &ShingleSet, b: &ShingleSet) -> Result<f64> {
    if a.k != b.k || a.unit != b.unit {
        return Err(Error::param(format!(
            "cannot compare shingle sets with k={}/{} and k={}/{}",
            a.k, a.unit, b.k, b.unit
        )));
    }
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub seed: u64,
}

impl MinHashSignature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A fixed family of `n` keyed hash functions under one base seed.
#[derive(Debug, Clone)]
pub struct MinHasher {
    keys: Vec<u64>,
    seed: u64,
}

impl MinHasher {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("signature length n must be at least 1"));
        }
        let keys = (0..n as u64)
            .map(|i| hash::family_key(seed, DOMAIN_MINHASH, i))
            .collect();
        Ok(MinHasher { keys, seed })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sign(&self, set: &ShingleSet) -> Result<MinHashSignature> {
        if set.is_empty() {
            return Err(Error::EmptyDocument);
        }
        let mut values = vec![u64::MAX; self.keys.len()];
        for &x in set.hashes() {
            for (slot, &key) in values.iter_mut().zip(&self.keys) {
                let h = hash::keyed(x, key);
                if h < *slot {
                    *slot = h;
                }
            }
        }
        Ok(MinHashSignature {
            values,
            seed: self.seed,
        })
    }
}

pub fn minhash(set: &ShingleSet, n: usize, seed: u64) -> Result<MinHashSignature> {
    MinHasher::new(n, seed)?.sign(set)
}

/// Fraction of signature positions on which `a` and `b` agree.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.len() != b.len() || a.seed != b.seed {
        return Err(Error::param(format!(
            "signatures differ in length or seed ({}/{} vs {}/{})",
            a.len(),
            a.seed,
            b.len(),
            b.seed
        )));
    }
    if a.is_empty() {
        return Err(Error::param("empty signature"));
    }
    let matches = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    Ok(matches as f64 / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    pub bands: usize,
    pub rows: usize,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams {
            bands: DEFAULT_BANDS,
            rows: DEFAULT_ROWS,
        }
    }
}

impl LshParams {
    pub fn new(bands: usize, rows: usize) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(Error::param("bands and rows must be at least 1"));
        }
        Ok(LshParams { bands, rows })
    }

    /// Signature length `n = b · r`.
    pub fn signature_len(&self) -> usize {
        self.bands * self.rows
    }

    pub fn check_signature_len(&self, n: usize) -> Result<()> {
        if self.signature_len() != n {
            return Err(Error::param(format!(
                "bands ({}) x rows ({}) must equal signature length {n}",
                self.bands, self.rows
            )));
        }
        Ok(())
    }
}

/// Probability that a pair with Jaccard similarity `s` shares at least one
/// band: `1 - (1 - s^r)^b`.
pub fn lsh_collision_probability(s: f64, params: LshParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::param(format!("similarity {s} outside [0, 1]")));
    }
    if params.bands == 0 || params.rows == 0 {
        return Err(Error::param("bands and rows must be at least 1"));
    }
    let band_match = s.powi(params.rows as i32);
    Ok(1.0 - (1.0 - band_match).powi(params.bands as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash_str;

    fn set_of(words: &[&str]) -> ShingleSet {
        ShingleSet::from_hashes(words.iter().map(|w| hash_str(w)), 1, ShingleUnit::Word)
    }

    #[test]
    fn word_shingles() {
        let s = shingle("a b c", 2, ShingleUnit::Word).unwrap();
        let expected = ShingleSet::from_hashes(
            [hash_str("a b"), hash_str("b c")],
            2,
            ShingleUnit::Word,
        );
        assert_eq!(s, expected);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn word_shingles_lowercase_and_collapse_whitespace() {
        let a = shingle("The  Quick\nfox", 2, ShingleUnit::Word).unwrap();
        let b = shingle("the quick fox", 2, ShingleUnit::Word).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_text_is_single_shingle() {
        let s = shingle("a", 3, ShingleUnit::Word).unwrap();
        assert_eq!(s.hashes(), &[hash_str("a")]);
    }

    #[test]
    fn char_shingles() {
        let s = shingle("abcd", 2, ShingleUnit::Char).unwrap();
        let expected = ShingleSet::from_hashes(
            [hash_str("ab"), hash_str("bc"), hash_str("cd")],
            2,
            ShingleUnit::Char,
        );
        assert_eq!(s, expected);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(
            shingle("   ", 5, ShingleUnit::Word),
            Err(Error::EmptyDocument)
        ));
        assert!(matches!(
            shingle("", 5, ShingleUnit::Char),
            Err(Error::EmptyDocument)
        ));
        assert!(matches!(shingle("a", 0, ShingleUnit::Word), Err(Error::Param(_))));
    }

    #[test]
    fn jaccard_examples() {
        let abc = set_of(&["a", "b", "c"]);
        let bcd = set_of(&["b", "c", "d"]);
        let xyz = set_of(&["x", "y", "z"]);
        assert_eq!(jaccard(&abc, &abc).unwrap(), 1.0);
        assert_eq!(jaccard(&abc, &xyz).unwrap(), 0.0);
        assert_eq!(jaccard(&abc, &bcd).unwrap(), 0.5);
    }

    #[test]
    fn jaccard_rejects_mismatched_params() {
        let a = shingle("a b c", 2, ShingleUnit::Word).unwrap();
        let b = shingle("a b c", 3, ShingleUnit::Word).unwrap();
        let c = shingle("a b c", 2, ShingleUnit::Char).unwrap();
        assert!(jaccard(&a, &b).is_err());
        assert!(jaccard(&a, &c).is_err());
    }

    #[test]
    fn minhash_is_deterministic() {
        let s = shingle("one two three four five six seven", 3, ShingleUnit::Word).unwrap();
        assert_eq!(minhash(&s, 260, 1).unwrap(), minhash(&s, 260, 1).unwrap());
        assert_ne!(minhash(&s, 260, 1).unwrap(), minhash(&s, 260, 2).unwrap());
        assert_eq!(minhash(&s, 260, 1).unwrap().len(), 260);
    }

    #[test]
    fn minhash_rejects_zero_length() {
        let s = set_of(&["a"]);
        assert!(matches!(minhash(&s, 0, 1), Err(Error::Param(_))));
    }

    #[test]
    fn disjoint_sets_never_agree() {
        let a = ShingleSet::from_hashes(0..200, 1, ShingleUnit::Word);
        let b = ShingleSet::from_hashes(1000..1200, 1, ShingleUnit::Word);
        let est = estimate_jaccard(&minhash(&a, 260, 9).unwrap(), &minhash(&b, 260, 9).unwrap());
        assert_eq!(est.unwrap(), 0.0);
    }

    #[test]
    fn estimate_edge_cases() {
        let a = MinHashSignature {
            values: vec![1, 2, 3],
            seed: 0,
        };
        let b = MinHashSignature {
            values: vec![4, 5, 6],
            seed: 0,
        };
        assert_eq!(estimate_jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(estimate_jaccard(&a, &b).unwrap(), 0.0);
        let c = MinHashSignature {
            values: vec![1, 2, 3],
            seed: 1,
        };
        assert!(estimate_jaccard(&a, &c).is_err());
        let d = MinHashSignature {
            values: vec![1, 2],
            seed: 0,
        };
        assert!(estimate_jaccard(&a, &d).is_err());
    }

    #[test]
    fn collision_probability_endpoints() {
        let p = LshParams::default();
        assert_eq!(lsh_collision_probability(1.0, p).unwrap(), 1.0);
        assert_eq!(lsh_collision_probability(0.0, p).unwrap(), 0.0);
        assert!(lsh_collision_probability(1.1, p).is_err());
        assert!(lsh_collision_probability(-0.1, p).is_err());
        assert!(lsh_collision_probability(f64::NAN, p).is_err());
    }

    #[test]
    fn collision_probability_at_default_threshold() {
        // 1 - (1 - 0.8^13)^20, evaluated independently.
        let band = 0.8f64.ln() * 13.0;
        let expected = 1.0 - (20.0 * (1.0 - band.exp()).ln()).exp();
        let got = lsh_collision_probability(0.8, LshParams::default()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.677254).abs() < 1e-6);
    }

    #[test]
    fn params_enforce_signature_length() {
        let p = LshParams::default();
        assert_eq!(p.signature_len(), 260);
        assert!(p.check_signature_len(260).is_ok());
        assert!(p.check_signature_len(256).is_err());
        assert!(LshParams::new(0, 13).is_err());
    }
}
