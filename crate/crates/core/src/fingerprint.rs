//! Shingling, MD5 exact keys, MinHash signatures and LSH banding.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::text::normalize_key;

/// 128-bit MD5 digest of a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactKey(pub [u8; 16]);

impl fmt::Display for ExactKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// MD5 of the UTF-8 bytes of `text`, taken as given.
pub fn exact_key(text: &str) -> ExactKey {
    ExactKey(Md5::digest(text.as_bytes()).into())
}

/// MD5 of the normalized (NFC, trimmed) text: the dedup identity of a document.
pub fn document_key(text: &str) -> ExactKey {
    exact_key(&normalize_key(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShingleUnit {
    /// Counting tokens: whitespace-delimited runs, each CJK character alone.
    Word,
    Char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShingleScheme {
    pub unit: ShingleUnit,
    pub n: usize,
}

impl ShingleScheme {
    pub fn words(n: usize) -> Self {
        ShingleScheme {
            unit: ShingleUnit::Word,
            n,
        }
    }

    pub fn chars(n: usize) -> Self {
        ShingleScheme {
            unit: ShingleUnit::Char,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub scheme: ShingleScheme,
    hashes: BTreeSet<u64>,
}

impl ShingleSet {
    pub fn from_hashes(scheme: ShingleScheme, hashes: impl IntoIterator<Item = u64>) -> Self {
        ShingleSet {
            scheme,
            hashes: hashes.into_iter().collect(),
        }
    }

    pub fn hashes(&self) -> &BTreeSet<u64> {
        &self.hashes
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Exact |A ∩ B| / |A ∪ B|; two empty sets count as identical.
    pub fn jaccard(&self, other: &ShingleSet) -> f64 {
        let inter = self.hashes.intersection(&other.hashes).count();
        let union = self.hashes.len() + other.hashes.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

pub fn shingle_hash(window: &str) -> u64 {
    xxh3_64(window.as_bytes())
}

/// Hashes every window of `scheme.n` consecutive units. Text shorter than a
/// window yields the singleton hash of the whole text; empty text yields
/// the empty set.
pub fn shingle(text: &str, scheme: ShingleScheme) -> Result<ShingleSet> {
    if scheme.n == 0 {
        return Err(Error::InvalidConfig(
            "shingle size must be at least 1".into(),
        ));
    }
    let n = scheme.n;
    let mut hashes = BTreeSet::new();
    match scheme.unit {
        ShingleUnit::Word => {
            let words: Vec<&str> = crate::text::tokens(text).collect();
            if words.is_empty() {
            } else if words.len() < n {
                hashes.insert(shingle_hash(&words.join(" ")));
            } else {
                let mut buf = String::new();
                for w in words.windows(n) {
                    buf.clear();
                    for (i, t) in w.iter().enumerate() {
                        if i > 0 {
                            buf.push(' ');
                        }
                        buf.push_str(t);
                    }
                    hashes.insert(shingle_hash(&buf));
                }
            }
        }
        ShingleUnit::Char => {
            let bounds: Vec<usize> = text
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(text.len()))
                .collect();
            let chars = bounds.len() - 1;
            if chars == 0 {
            } else if chars < n {
                hashes.insert(shingle_hash(text));
            } else {
                for i in 0..=chars - n {
                    hashes.insert(shingle_hash(&text[bounds[i]..bounds[i + n]]));
                }
            }
        }
    }
    Ok(ShingleSet { scheme, hashes })
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub seed: u64,
    pub scheme: ShingleScheme,
}

const SIGNATURE_MAGIC: &[u8; 4] = b"MHS1";

impl MinHashSignature {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty_sentinel(&self) -> bool {
        self.values.iter().all(|&v| v == u64::MAX)
    }

    /// Little-endian encoding: magic, k (u32), seed (u64), unit (u8),
    /// n (u32), then k u64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + 8 * self.values.len());
        out.extend_from_slice(SIGNATURE_MAGIC);
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(match self.scheme.unit {
            ShingleUnit::Word => 0,
            ShingleUnit::Char => 1,
        });
        out.extend_from_slice(&(self.scheme.n as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidConfig(format!("malformed signature: {m}"));
        if bytes.len() < 21 || &bytes[..4] != SIGNATURE_MAGIC {
            return Err(bad("missing header"));
        }
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let unit = match bytes[16] {
            0 => ShingleUnit::Word,
            1 => ShingleUnit::Char,
            _ => return Err(bad("unknown shingle unit")),
        };
        let n = u32::from_le_bytes(bytes[17..21].try_into().unwrap()) as usize;
        let body = &bytes[21..];
        if body.len() != 8 * k {
            return Err(bad("length does not match k"));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(MinHashSignature {
            values,
            seed,
            scheme: ShingleScheme { unit, n },
        })
    }
}

/// k seeded multiply-shift permutations `x -> a*x + b (mod 2^64)`, `a` odd.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    params: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(k: usize, seed: u64) -> Self {
        let mut state = seed;
        let params = (0..k)
            .map(|_| (splitmix64(&mut state) | 1, splitmix64(&mut state)))
            .collect();
        MinHasher { seed, params }
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }

    pub fn signature(&self, set: &ShingleSet) -> MinHashSignature {
        let mut values = vec![u64::MAX; self.params.len()];
        for &x in set.hashes() {
            for (v, &(a, b)) in values.iter_mut().zip(&self.params) {
                let h = a.wrapping_mul(x).wrapping_add(b);
                if h < *v {
                    *v = h;
                }
            }
        }
        MinHashSignature {
            values,
            seed: self.seed,
            scheme: set.scheme,
        }
    }
}

pub fn minhash_signature(set: &ShingleSet, k: usize, seed: u64) -> Result<MinHashSignature> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "signature length k must be at least 1".into(),
        ));
    }
    Ok(MinHasher::new(k, seed).signature(set))
}

/// Fraction of equal components.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.k() != b.k() || a.seed != b.seed {
        return Err(Error::IncompatibleSignature(format!(
            "k={} seed={} vs k={} seed={}",
            a.k(),
            a.seed,
            b.k(),
            b.seed
        )));
    }
    if a.k() == 0 {
        return Ok(1.0);
    }
    let equal = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    Ok(equal as f64 / a.k() as f64)
}

pub fn band_key(band: usize, rows: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(4 + 8 * rows.len());
    buf.extend_from_slice(&(band as u32).to_le_bytes());
    for v in rows {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    xxh3_64(&buf)
}

pub fn lsh_band_keys(sig: &MinHashSignature, bands: usize, rows: usize) -> Result<Vec<u64>> {
    if bands == 0 || rows == 0 || bands * rows != sig.k() {
        return Err(Error::InvalidConfig(format!(
            "bands ({bands}) x rows ({rows}) must equal signature length {}",
            sig.k()
        )));
    }
    Ok(sig
        .values
        .chunks_exact(rows)
        .enumerate()
        .map(|(i, chunk)| band_key(i, chunk))
        .collect())
}

/// Band-keyed posting lists. Items are indices chosen by the caller and are
/// appended in insertion order.
#[derive(Debug, Clone)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    buckets: HashMap<(u32, u64), Vec<usize>>,
}

impl LshIndex {
    pub fn new(bands: usize, rows: usize) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(Error::InvalidConfig(
                "bands and rows must be positive".into(),
            ));
        }
        Ok(LshIndex {
            bands,
            rows,
            buckets: HashMap::new(),
        })
    }

    pub fn insert(&mut self, item: usize, sig: &MinHashSignature) -> Result<()> {
        for (band, key) in lsh_band_keys(sig, self.bands, self.rows)?
            .into_iter()
            .enumerate()
        {
            self.buckets
                .entry((band as u32, key))
                .or_default()
                .push(item);
        }
        Ok(())
    }

    /// Items sharing a bucket with `sig`, sorted and deduplicated.
    pub fn query(&self, sig: &MinHashSignature) -> Result<Vec<usize>> {
        let mut out = BTreeSet::new();
        for (band, key) in lsh_band_keys(sig, self.bands, self.rows)?
            .into_iter()
            .enumerate()
        {
            if let Some(list) = self.buckets.get(&(band as u32, key)) {
                out.extend(list.iter().copied());
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Number of buckets containing `item`.
    pub fn memberships(&self, item: usize) -> usize {
        self.buckets.values().filter(|l| l.contains(&item)).count()
    }

    /// All unordered pairs that share at least one bucket, ascending.
    pub fn candidate_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut pairs = BTreeSet::new();
        for list in self.buckets.values() {
            for (i, &a) in list.iter().enumerate() {
                for &b in &list[i + 1..] {
                    if a != b {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintConfig {
    pub scheme: ShingleScheme,
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
}

impl FingerprintConfig {
    /// Word 5-grams, k = 128, 16 bands of 8 rows.
    pub fn document() -> Self {
        FingerprintConfig {
            scheme: ShingleScheme::words(5),
            num_perm: 128,
            bands: 16,
            rows: 8,
            seed: 0x5EED,
        }
    }

    /// Character 5-grams, k = 64, 16 bands of 4 rows.
    pub fn sentence() -> Self {
        FingerprintConfig {
            scheme: ShingleScheme::chars(5),
            num_perm: 64,
            bands: 16,
            rows: 4,
            seed: 0x5EED,
        }
    }

    /// Word 7-grams for whole-repository samples.
    pub fn repository() -> Self {
        FingerprintConfig {
            scheme: ShingleScheme::words(7),
            ..FingerprintConfig::document()
        }
    }

    /// Same hashing with one row per band: every pair sharing any component
    /// becomes a candidate, so clustering sees all pairs with nonzero
    /// estimated similarity.
    pub fn exhaustive(self) -> Self {
        FingerprintConfig {
            bands: self.num_perm,
            rows: 1,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme.n == 0 {
            return Err(Error::InvalidConfig(
                "shingle size must be at least 1".into(),
            ));
        }
        if self.num_perm == 0 || self.bands * self.rows != self.num_perm {
            return Err(Error::InvalidConfig(format!(
                "bands ({}) x rows ({}) must equal num_perm ({})",
                self.bands, self.rows, self.num_perm
            )));
        }
        Ok(())
    }

    pub fn hasher(&self) -> MinHasher {
        MinHasher::new(self.num_perm, self.seed)
    }
}
