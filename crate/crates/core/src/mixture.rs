//! Mixture planning: per-bucket token inventory, sampling rates against
//! target weights, and a deterministic shard-level training manifest.
//!
//! A bucket is a domain name, or the `mix_tag` meta value for documents
//! carrying one (used by the math preset).

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactHeader};
use crate::corpus::{Corpus, DomainTag};
use crate::error::{Error, Result};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: BTreeMap<String, f64>,
    pub budget_tokens: u64,
}

impl MixtureSpec {
    pub fn new(weights: BTreeMap<String, f64>, budget_tokens: u64) -> Result<Self> {
        let spec = MixtureSpec {
            weights,
            budget_tokens,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_tokens == 0 {
            return Err(Error::InvalidConfig(
                "mixture budget must be positive".into(),
            ));
        }
        if let Some((k, w)) = self
            .weights
            .iter()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidConfig(format!("weight for {k:?} is {w}")));
        }
        let sum: f64 = self.weights.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Web/ZH 13.5%, Web/EN 31.5%, KID/ZH 10%, KID/EN 15%, Code 25%, Other 5%.
    pub fn default_weights() -> BTreeMap<String, f64> {
        [
            (DomainTag::WebZh, 0.135),
            (DomainTag::WebEn, 0.315),
            (DomainTag::KidZh, 0.10),
            (DomainTag::KidEn, 0.15),
            (DomainTag::Code, 0.25),
            (DomainTag::Other, 0.05),
        ]
        .into_iter()
        .map(|(d, w)| (d.as_str().to_string(), w))
        .collect()
    }

    pub fn default_with_budget(budget_tokens: u64) -> Result<Self> {
        MixtureSpec::new(Self::default_weights(), budget_tokens)
    }

    /// Default weights scaled by 0.9 with a `math` bucket at 10%.
    pub fn math_preset(budget_tokens: u64) -> Result<Self> {
        let mut weights: BTreeMap<String, f64> = Self::default_weights()
            .into_iter()
            .map(|(k, w)| (k, w * 0.9))
            .collect();
        weights.insert(MATH_TAG.to_string(), 0.10);
        MixtureSpec::new(weights, budget_tokens)
    }

    pub fn preset(name: &str, budget_tokens: u64) -> Result<Self> {
        match name {
            "default" => Self::default_with_budget(budget_tokens),
            "math10" => Self::math_preset(budget_tokens),
            other => Err(Error::InvalidConfig(format!(
                "unknown mixture preset {other:?}"
            ))),
        }
    }

    pub fn weight(&self, bucket: &str) -> f64 {
        self.weights.get(bucket).copied().unwrap_or(0.0)
    }

    /// Combined share of the knowledge-intensive buckets.
    pub fn kid_share(&self) -> f64 {
        self.weight(DomainTag::KidZh.as_str()) + self.weight(DomainTag::KidEn.as_str())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: MixtureSpec = artifact::read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }
}

pub const MATH_TAG: &str = "math";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub id: String,
    #[serde(rename = "domain")]
    pub bucket: String,
    pub tokens: u64,
}

/// Available shards per bucket, each bucket's list sorted by shard id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainInventory {
    buckets: BTreeMap<String, Vec<ShardInfo>>,
}

#[derive(Serialize, Deserialize)]
struct InventoryFile {
    shards: Vec<ShardInfo>,
}

impl DomainInventory {
    pub fn from_shards(shards: impl IntoIterator<Item = ShardInfo>) -> Result<Self> {
        let mut buckets: BTreeMap<String, Vec<ShardInfo>> = BTreeMap::new();
        for s in shards {
            buckets.entry(s.bucket.clone()).or_default().push(s);
        }
        let mut seen = std::collections::HashSet::new();
        for list in buckets.values_mut() {
            list.sort_by(|a, b| a.id.cmp(&b.id));
            for s in list.iter() {
                if !seen.insert(s.id.clone()) {
                    return Err(Error::InvalidConfig(format!(
                        "shard {:?} listed twice in inventory",
                        s.id
                    )));
                }
            }
        }
        Ok(DomainInventory { buckets })
    }

    /// One entry per non-empty shard; every document in a shard must share
    /// its bucket.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let mut shards = Vec::new();
        for shard in corpus.shards() {
            let Some(first) = shard.docs.first() else {
                continue;
            };
            let bucket = first.mix_key();
            if let Some(d) = shard.docs.iter().find(|d| d.mix_key() != bucket) {
                return Err(Error::InvalidConfig(format!(
                    "shard {:?} mixes buckets {bucket:?} and {:?}",
                    shard.id,
                    d.mix_key()
                )));
            }
            shards.push(ShardInfo {
                id: shard.id.clone(),
                bucket,
                tokens: shard.tokens(),
            });
        }
        Self::from_shards(shards)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: InventoryFile = artifact::read_json(path)?;
        Self::from_shards(file.shards)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_json(
            path,
            &InventoryFile {
                shards: self.shards().cloned().collect(),
            },
        )
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&str, &[ShardInfo])> {
        self.buckets.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn shards(&self) -> impl Iterator<Item = &ShardInfo> {
        self.buckets.values().flatten()
    }

    pub fn available(&self, bucket: &str) -> u64 {
        self.buckets
            .get(bucket)
            .map_or(0, |v| v.iter().map(|s| s.tokens).sum())
    }

    pub fn total(&self) -> u64 {
        self.shards().map(|s| s.tokens).sum()
    }

    pub fn max_shard_tokens(&self) -> u64 {
        self.shards().map(|s| s.tokens).max().unwrap_or(0)
    }
}

/// Epochs over each bucket: `weight * budget / available`. Buckets with
/// zero weight get rate 0.
pub fn compute_sampling_rates(
    inventory: &DomainInventory,
    spec: &MixtureSpec,
) -> Result<BTreeMap<String, f64>> {
    spec.validate()?;
    let mut rates = BTreeMap::new();
    for (bucket, &w) in &spec.weights {
        if w == 0.0 {
            rates.insert(bucket.clone(), 0.0);
            continue;
        }
        let avail = inventory.available(bucket);
        if avail == 0 {
            return Err(Error::UnsatisfiableMixture {
                domain: bucket.clone(),
            });
        }
        rates.insert(bucket.clone(), w * spec.budget_tokens as f64 / avail as f64);
    }
    for (bucket, _) in inventory.buckets() {
        rates.entry(bucket.to_string()).or_insert(0.0);
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shard: String,
    pub domain: String,
    pub pass: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    #[serde(rename = "_header", default, skip_serializing_if = "Option::is_none")]
    pub header: Option<ArtifactHeader>,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    pub realized: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MixtureSpec>,
}

impl TrainingManifest {
    pub fn realized_total(&self) -> u64 {
        self.realized.values().sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        artifact::read_json(path)
    }
}

fn bucket_seed(seed: u64, bucket: &str) -> u64 {
    xxhash_rust::xxh3::xxh3_64_with_seed(bucket.as_bytes(), seed)
}

/// Shuffled shard order for a bucket's fractional pass.
fn tail_order<'a>(shards: &'a [ShardInfo], seed: u64, bucket: &str) -> Vec<&'a ShardInfo> {
    let mut order: Vec<&ShardInfo> = shards.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(bucket_seed(seed, bucket)));
    order
}

/// Shortest prefix whose token sum is closest to `target`.
fn best_prefix(order: &[&ShardInfo], target: f64) -> usize {
    let mut best = (0usize, target.abs());
    let mut sum = 0u64;
    for (i, s) in order.iter().enumerate() {
        sum += s.tokens;
        let err = (sum as f64 - target).abs();
        if err < best.1 {
            best = (i + 1, err);
        }
    }
    best.0
}

struct Plan {
    /// (full passes, tail length) per bucket.
    picks: BTreeMap<String, (u32, usize)>,
    realized: BTreeMap<String, u64>,
}

fn plan(
    inventory: &DomainInventory,
    rates: &BTreeMap<String, f64>,
    tails: &BTreeMap<&str, Vec<&ShardInfo>>,
    scale: f64,
) -> Plan {
    let mut picks = BTreeMap::new();
    let mut realized = BTreeMap::new();
    for (bucket, shards) in inventory.buckets() {
        let rate = rates.get(bucket).copied().unwrap_or(0.0) * scale;
        if rate <= 0.0 {
            continue;
        }
        let avail: u64 = shards.iter().map(|s| s.tokens).sum();
        let full = rate.floor();
        let order = &tails[bucket];
        let take = best_prefix(order, (rate - full) * avail as f64);
        let tokens = full as u64 * avail + order[..take].iter().map(|s| s.tokens).sum::<u64>();
        picks.insert(bucket.to_string(), (full as u32, take));
        realized.insert(bucket.to_string(), tokens);
    }
    Plan { picks, realized }
}

fn max_deviation(realized: &BTreeMap<String, u64>, implied: &BTreeMap<String, f64>) -> f64 {
    let total: u64 = realized.values().sum();
    let implied_total: f64 = implied.values().sum();
    if total == 0 || implied_total == 0.0 {
        return if total == 0 && implied_total == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    implied
        .iter()
        .map(|(k, t)| {
            let share = realized.get(k).copied().unwrap_or(0) as f64 / total as f64;
            (share - t / implied_total).abs()
        })
        .fold(0.0, f64::max)
}

const MAX_RETARGET_ROUNDS: usize = 32;

/// Per bucket: `floor(rate)` full passes over its shards (sorted by id),
/// plus a fractional pass taking the prefix of a seeded shuffle whose token
/// sum best matches the remainder. Since rounding in one bucket shifts the
/// realized total and with it every share, the fractional targets are
/// re-aimed at `rate * realized / planned` until the plan stops improving.
/// Entries are interleaved round-robin across buckets.
pub fn build_manifest(
    inventory: &DomainInventory,
    rates: &BTreeMap<String, f64>,
    seed: u64,
) -> TrainingManifest {
    let tails: BTreeMap<&str, Vec<&ShardInfo>> = inventory
        .buckets()
        .map(|(b, s)| (b, tail_order(s, seed, b)))
        .collect();
    let implied: BTreeMap<String, f64> = inventory
        .buckets()
        .map(|(b, s)| {
            (
                b.to_string(),
                rates.get(b).copied().unwrap_or(0.0).max(0.0)
                    * s.iter().map(|x| x.tokens).sum::<u64>() as f64,
            )
        })
        .filter(|(_, t)| *t > 0.0)
        .collect();
    let planned: f64 = implied.values().sum();

    let mut scale = 1.0;
    let mut best = plan(inventory, rates, &tails, scale);
    let mut best_dev = max_deviation(&best.realized, &implied);
    for _ in 0..MAX_RETARGET_ROUNDS {
        let total: u64 = best.realized.values().sum();
        if best_dev == 0.0 || total == 0 || planned == 0.0 {
            break;
        }
        let next = total as f64 / planned;
        if next == scale {
            break;
        }
        scale = next;
        let candidate = plan(inventory, rates, &tails, scale);
        let dev = max_deviation(&candidate.realized, &implied);
        if dev < best_dev {
            best = candidate;
            best_dev = dev;
        } else {
            break;
        }
    }

    let mut queues: Vec<(String, std::collections::VecDeque<ManifestEntry>)> = Vec::new();
    for (bucket, shards) in inventory.buckets() {
        let Some(&(full, take)) = best.picks.get(bucket) else {
            continue;
        };
        let mut q = std::collections::VecDeque::new();
        for pass in 0..full {
            for s in shards {
                q.push_back(ManifestEntry {
                    shard: s.id.clone(),
                    domain: bucket.to_string(),
                    pass,
                });
            }
        }
        let mut tail: Vec<&ShardInfo> = tails[bucket][..take].to_vec();
        tail.sort_by(|a, b| a.id.cmp(&b.id));
        for s in tail {
            q.push_back(ManifestEntry {
                shard: s.id.clone(),
                domain: bucket.to_string(),
                pass: full,
            });
        }
        if !q.is_empty() {
            queues.push((bucket.to_string(), q));
        }
    }
    let mut entries = Vec::new();
    while queues.iter().any(|(_, q)| !q.is_empty()) {
        for (_, q) in queues.iter_mut() {
            if let Some(e) = q.pop_front() {
                entries.push(e);
            }
        }
    }
    let realized = best.realized.into_iter().filter(|(_, t)| *t > 0).collect();
    TrainingManifest {
        header: None,
        seed,
        entries,
        realized,
        spec: None,
    }
}

/// Rates, manifest and spec in one step.
pub fn plan_mixture(
    inventory: &DomainInventory,
    spec: &MixtureSpec,
    seed: u64,
) -> Result<TrainingManifest> {
    let rates = compute_sampling_rates(inventory, spec)?;
    let mut m = build_manifest(inventory, &rates, seed);
    m.spec = Some(spec.clone());
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDeviation {
    pub domain: String,
    pub weight: f64,
    pub share: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub pass: bool,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub domains: Vec<BucketDeviation>,
}

impl MixtureReport {
    pub fn deviation(&self, domain: &str) -> Option<f64> {
        self.domains
            .iter()
            .find(|d| d.domain == domain)
            .map(|d| d.deviation)
    }
}

/// Realized share per bucket against its weight; fails when any
/// `|share - weight| > tolerance`.
pub fn validate_mixture(
    manifest: &TrainingManifest,
    spec: &MixtureSpec,
    tolerance: f64,
) -> MixtureReport {
    let total = manifest.realized_total();
    let mut names: Vec<&String> = spec
        .weights
        .keys()
        .chain(manifest.realized.keys())
        .collect();
    names.sort();
    names.dedup();
    let domains: Vec<BucketDeviation> = names
        .into_iter()
        .map(|name| {
            let tokens = manifest.realized.get(name).copied().unwrap_or(0);
            let share = if total == 0 {
                0.0
            } else {
                tokens as f64 / total as f64
            };
            let weight = spec.weight(name);
            let deviation = (share - weight).abs();
            BucketDeviation {
                domain: name.clone(),
                weight,
                share,
                deviation,
                pass: deviation <= tolerance,
            }
        })
        .collect();
    let max_deviation = domains.iter().map(|d| d.deviation).fold(0.0, f64::max);
    MixtureReport {
        pass: domains.iter().all(|d| d.pass),
        tolerance,
        max_deviation,
        domains,
    }
}
