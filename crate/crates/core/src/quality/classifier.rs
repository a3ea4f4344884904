//! Hashed word unigram+bigram logistic-regression classifier trained with
//! seeded SGD, plus hard-sample mining for iterative refinement.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::artifact;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::text::tokens;

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec(pub Vec<(u32, f64)>);

impl SparseVec {
    fn from_map(map: BTreeMap<u32, f64>) -> Self {
        SparseVec(map.into_iter().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l2_normalized(&self) -> SparseVec {
        let norm = self.0.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        SparseVec(self.0.iter().map(|&(i, v)| (i, v / norm)).collect())
    }
}

const UNIGRAM_SEED: u64 = 0x01;
const BIGRAM_SEED: u64 = 0x02;

/// Counts of hashed lowercase unigrams and adjacent-token bigrams modulo
/// `dim`. `dim` must be a power of two.
pub fn featurize(text: &str, dim: usize) -> SparseVec {
    debug_assert!(dim.is_power_of_two());
    let mask = (dim - 1) as u64;
    let toks: Vec<String> = tokens(text).map(str::to_lowercase).collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for t in &toks {
        *counts
            .entry((xxh3_64_with_seed(t.as_bytes(), UNIGRAM_SEED) & mask) as u32)
            .or_default() += 1.0;
    }
    let mut buf = String::new();
    for w in toks.windows(2) {
        buf.clear();
        buf.push_str(&w[0]);
        buf.push(' ');
        buf.push_str(&w[1]);
        *counts
            .entry((xxh3_64_with_seed(buf.as_bytes(), BIGRAM_SEED) & mask) as u32)
            .or_default() += 1.0;
    }
    SparseVec::from_map(counts)
}

/// Model input: L2-normalized feature counts, so document length does not
/// scale the logit.
pub fn model_input(text: &str, dim: usize) -> SparseVec {
    featurize(text, dim).l2_normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 1 << 20,
            epochs: 5,
            learning_rate: 0.1,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dim.is_power_of_two() || self.dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "feature dimension {} is not a power of two",
                self.dim
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Seed label record: `{"text", "label"}` with 1 = harmful, 0 = clean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: u8,
}

impl LabeledText {
    pub fn new(text: impl Into<String>, label: u8) -> Self {
        LabeledText {
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    pub config: TrainConfig,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"CQM1";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    dim: usize,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
}

impl QualityModel {
    pub fn zeros(config: TrainConfig) -> Self {
        QualityModel {
            weights: vec![0.0; config.dim],
            bias: 0.0,
            config,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &SparseVec) -> f64 {
        self.bias
            + x.0
                .iter()
                .map(|&(i, v)| self.weights[i as usize] * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &SparseVec) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Probability that `text` is harmful.
    pub fn score_text(&self, text: &str) -> f64 {
        self.predict(&model_input(text, self.dim()))
    }

    /// Binary layout: magic, u32 header length, JSON header, bias, then
    /// `dim` weights, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&ModelHeader {
            version: artifact::FORMAT_VERSION,
            dim: self.dim(),
            seed: self.config.seed,
            epochs: self.config.epochs,
            learning_rate: self.config.learning_rate,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * (self.dim() + 1));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.bias.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidConfig(format!("malformed model file: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body_start = 8 + hlen;
        let header: ModelHeader = bytes
            .get(8..body_start)
            .and_then(|h| serde_json::from_slice(h).ok())
            .ok_or_else(|| bad("bad header"))?;
        if header.version != artifact::FORMAT_VERSION {
            return Err(bad("unsupported version"));
        }
        let body = &bytes[body_start..];
        if body.len() != 8 * (header.dim + 1) {
            return Err(bad("weight count does not match dimension"));
        }
        let mut vals = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let bias = vals.next().unwrap();
        let weights: Vec<f64> = vals.collect();
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weight"));
        }
        Ok(QualityModel {
            config: TrainConfig {
                dim: header.dim,
                epochs: header.epochs,
                learning_rate: header.learning_rate,
                seed: header.seed,
            },
            weights,
            bias,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        QualityModel::from_bytes(&bytes)
    }
}

pub fn score(model: &QualityModel, doc: &Document) -> f64 {
    model.score_text(&doc.text)
}

/// Gradient of the mean logistic loss: sparse weight part plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: BTreeMap<u32, f64>,
    pub bias: f64,
}

/// Mean logistic loss over `(features, label)` pairs and its gradient.
pub fn logistic_loss_and_grad(
    model: &QualityModel,
    examples: &[(SparseVec, f64)],
) -> (f64, Gradient) {
    let mut loss = 0.0;
    let mut grad = Gradient {
        weights: BTreeMap::new(),
        bias: 0.0,
    };
    if examples.is_empty() {
        return (0.0, grad);
    }
    let n = examples.len() as f64;
    for (x, y) in examples {
        let z = model.logit(x);
        // log(1 + e^z) - y z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        let g = sigmoid(z) - y;
        for &(i, v) in &x.0 {
            *grad.weights.entry(i).or_default() += g * v / n;
        }
        grad.bias += g / n;
    }
    (loss / n, grad)
}

pub fn mean_loss(model: &QualityModel, examples: &[(SparseVec, f64)]) -> f64 {
    logistic_loss_and_grad(model, examples).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses
            .last()
            .copied()
            .unwrap_or(self.initial_loss)
    }
}

pub(crate) fn examples(seeds: &[LabeledText], dim: usize) -> Vec<(SparseVec, f64)> {
    seeds
        .iter()
        .map(|s| (model_input(&s.text, dim), f64::from(s.label)))
        .collect()
}

/// Fits the classifier by `epochs` passes of SGD over a seeded shuffle.
pub fn train_classifier(
    seeds: &[LabeledText],
    config: &TrainConfig,
) -> Result<(QualityModel, TrainReport)> {
    config.validate()?;
    if let Some(bad) = seeds.iter().find(|s| s.label > 1) {
        return Err(Error::Training(format!(
            "label {} is not 0 or 1",
            bad.label
        )));
    }
    let positives = seeds.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == seeds.len() {
        return Err(Error::Training(
            "seed set must contain both harmful and clean examples".into(),
        ));
    }
    let data = examples(seeds, config.dim);
    let mut model = QualityModel::zeros(*config);
    let initial_loss = mean_loss(&model, &data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let g = model.predict(x) - y;
            let step = config.learning_rate * g;
            for &(j, v) in &x.0 {
                model.weights[j as usize] -= step * v;
            }
            model.bias -= step;
        }
        epoch_losses.push(mean_loss(&model, &data));
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Up to `m` documents scoring within `[lo, hi]`, most uncertain first
/// (smallest |score - 0.5|), ties by id.
pub fn mine_hard_samples<'a>(
    model: &QualityModel,
    pool: &'a [Document],
    lo: f64,
    hi: f64,
    m: usize,
) -> Vec<&'a Document> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Vec::new();
    }
    let mut scored: Vec<(f64, &Document)> = pool
        .iter()
        .map(|d| (score(model, d), d))
        .filter(|(s, _)| (lo..=hi).contains(s))
        .collect();
    scored.sort_by(|a, b| {
        (a.0 - 0.5)
            .abs()
            .total_cmp(&(b.0 - 0.5).abs())
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().take(m).map(|(_, d)| d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub lo: f64,
    pub hi: f64,
    pub per_round: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            lo: 0.35,
            hi: 0.65,
            per_round: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineRound {
    pub round: usize,
    pub mined: usize,
    pub seed_count: usize,
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub model: QualityModel,
    pub seeds: Vec<LabeledText>,
    pub rounds: Vec<RefineRound>,
}

/// Mines uncertain pool documents, labels them with `labeler`, appends them
/// to the seed set and retrains, for up to `rounds` rounds. A round that
/// mines nothing ends refinement with the model unchanged. Each pool
/// document is mined at most once.
pub fn iterative_refine<F>(
    model: QualityModel,
    seeds: Vec<LabeledText>,
    pool: &[Document],
    mut labeler: F,
    rounds: usize,
    mining: &MiningConfig,
    config: &TrainConfig,
) -> Result<RefineOutput>
where
    F: FnMut(&Document) -> std::result::Result<u8, String>,
{
    if rounds == 0 {
        return Err(Error::InvalidConfig(
            "refinement needs at least one round".into(),
        ));
    }
    let mut model = model;
    let mut seeds = seeds;
    let mut remaining: Vec<Document> = pool.to_vec();
    let mut history = Vec::new();
    for round in 1..=rounds {
        let mined: Vec<Document> =
            mine_hard_samples(&model, &remaining, mining.lo, mining.hi, mining.per_round)
                .into_iter()
                .cloned()
                .collect();
        if mined.is_empty() {
            history.push(RefineRound {
                round,
                mined: 0,
                seed_count: seeds.len(),
            });
            break;
        }
        for d in &mined {
            let label = labeler(d).map_err(|message| Error::Labeler { round, message })?;
            if label > 1 {
                return Err(Error::Labeler {
                    round,
                    message: format!("label {label} for {:?} is not 0 or 1", d.id),
                });
            }
            seeds.push(LabeledText::new(d.text.clone(), label));
        }
        let taken: std::collections::HashSet<&str> = mined.iter().map(|d| d.id.as_str()).collect();
        remaining.retain(|d| !taken.contains(d.id.as_str()));
        model = train_classifier(&seeds, config)?.0;
        history.push(RefineRound {
            round,
            mined: mined.len(),
            seed_count: seeds.len(),
        });
    }
    Ok(RefineOutput {
        model,
        seeds,
        rounds: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DomainTag;

    fn cfg() -> TrainConfig {
        TrainConfig {
            dim: 1 << 12,
            ..Default::default()
        }
    }

    #[test]
    fn featurize_examples() {
        assert!(featurize("", 1 << 10).is_empty());
        let f = featurize("a b", 1 << 20);
        assert_eq!(f.0.len(), 3);
        assert!(f.0.iter().all(|&(_, v)| v == 1.0));
        let twice = featurize("a b a b", 1 << 20);
        // unigrams a, b twice each; bigrams "a b" twice and "b a" once
        let total: f64 = twice.0.iter().map(|(_, v)| v).sum();
        assert_eq!(total, 7.0);
    }

    #[test]
    fn zero_model_scores_half() {
        let m = QualityModel::zeros(cfg());
        assert_eq!(m.score_text("anything at all"), 0.5);
        assert_eq!(m.score_text(""), 0.5);
    }

    #[test]
    fn single_class_seeds_rejected() {
        let seeds = vec![LabeledText::new("x", 1), LabeledText::new("y", 1)];
        assert!(matches!(
            train_classifier(&seeds, &cfg()),
            Err(Error::Training(_))
        ));
        let seeds = vec![LabeledText::new("x", 1), LabeledText::new("y", 2)];
        assert!(train_classifier(&seeds, &cfg()).is_err());
    }

    #[test]
    fn model_bytes_round_trip() {
        let seeds = vec![
            LabeledText::new("buy pills now", 1),
            LabeledText::new("the weather is mild", 0),
        ];
        let (m, report) = train_classifier(&seeds, &cfg()).unwrap();
        assert!(report.final_loss() <= report.initial_loss);
        let back = QualityModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bytes = m.to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(QualityModel::from_bytes(&bytes).is_err());
    }

    #[test]
    fn mining_band_and_order() {
        let mut m = QualityModel::zeros(TrainConfig {
            dim: 1 << 10,
            ..Default::default()
        });
        let docs: Vec<Document> = ["a", "b", "c"]
            .iter()
            .map(|id| Document::new(*id, *id, DomainTag::WebEn))
            .collect();
        // set logits so scores are 0.45, 0.55, 0.95
        for (d, p) in docs.iter().zip([0.45f64, 0.55, 0.95]) {
            let x = model_input(&d.text, 1 << 10);
            assert_eq!(x.0.len(), 1);
            m.weights[x.0[0].0 as usize] = (p / (1.0 - p)).ln();
        }
        let got: Vec<&str> = mine_hard_samples(&m, &docs, 0.4, 0.6, 10)
            .iter()
            .map(|d| d.id.as_str())
            .collect();
        assert_eq!(got, ["a", "b"]);
        assert!(mine_hard_samples(&m, &docs, 0.96, 0.99, 10).is_empty());
        assert_eq!(mine_hard_samples(&m, &docs, 0.4, 0.6, 1).len(), 1);
    }

    #[test]
    fn refine_without_candidates_keeps_model() {
        let seeds = vec![
            LabeledText::new("buy pills now", 1),
            LabeledText::new("the weather is mild", 0),
        ];
        let (m, _) = train_classifier(&seeds, &cfg()).unwrap();
        let out = iterative_refine(
            m.clone(),
            seeds.clone(),
            &[],
            |_| Ok(0),
            1,
            &MiningConfig::default(),
            &cfg(),
        )
        .unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.seeds, seeds);
    }

    #[test]
    fn labeler_failure_names_round() {
        let seeds = vec![
            LabeledText::new("buy pills now", 1),
            LabeledText::new("the weather is mild", 0),
        ];
        let m = QualityModel::zeros(cfg());
        let pool = vec![Document::new(
            "p",
            "unseen words entirely",
            DomainTag::WebEn,
        )];
        let err = iterative_refine(
            m,
            seeds,
            &pool,
            |_| Err("offline".into()),
            2,
            &MiningConfig::default(),
            &cfg(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Labeler { round: 1, .. }));
    }
}
