//! Global document-level deduplication: an exact MD5 pass followed by
//! MinHash/LSH near-duplicate clustering with keep-longest resolution.
//!
//! All shards are pooled before any comparison, so a duplicate pair is
//! found no matter how the corpus is partitioned.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, StageStats};
use crate::error::{Error, Result};
use crate::fingerprint::{
    document_key, estimate_jaccard, shingle, FingerprintConfig, LshIndex, MinHashSignature,
};
use crate::text::char_len;
use crate::unionfind::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKind {
    Exact,
    Near,
}

/// Cluster report record: `{"survivor", "members", "kind"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub survivor: String,
    pub members: Vec<String>,
    pub kind: ClusterKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DocDedupConfig {
    pub fingerprint: FingerprintConfig,
    pub threshold: f64,
}

impl Default for DocDedupConfig {
    fn default() -> Self {
        DocDedupConfig {
            fingerprint: FingerprintConfig::document(),
            threshold: 0.8,
        }
    }
}

impl DocDedupConfig {
    pub fn validate(&self) -> Result<()> {
        self.fingerprint.validate()?;
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "similarity threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Keep-longest rule: maximal codepoint length, ties to the
/// lexicographically smallest id.
pub fn choose_survivor<'a>(
    members: impl IntoIterator<Item = &'a Document>,
) -> Option<&'a Document> {
    members.into_iter().min_by(|a, b| {
        char_len(&b.text)
            .cmp(&char_len(&a.text))
            .then_with(|| a.id.cmp(&b.id))
    })
}

/// Keeps the first occurrence of each normalized-text MD5 key.
pub fn dedup_exact(corpus: Corpus) -> (Corpus, Vec<DuplicateCluster>, StageStats) {
    let keys: Vec<_> = {
        let docs: Vec<&Document> = corpus.docs().collect();
        docs.par_iter().map(|d| document_key(&d.text)).collect()
    };
    let mut first: HashMap<_, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of = Vec::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        let g = *first.entry(*k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
        group_of.push(g);
    }
    let ids: Vec<&str> = corpus.docs().map(|d| d.id.as_str()).collect();
    let clusters: Vec<DuplicateCluster> = groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| DuplicateCluster {
            survivor: ids[g[0]].to_string(),
            members: g.iter().map(|&i| ids[i].to_string()).collect(),
            kind: ClusterKind::Exact,
        })
        .collect();
    let before = (corpus.len() as u64, corpus.total_tokens());
    let mut pos = 0;
    let out = corpus.filter_map_docs(|d| {
        let keep = groups[group_of[pos]][0] == pos;
        pos += 1;
        keep.then_some(d)
    });
    let stats = StageStats::new(
        "dedup-exact",
        before.0,
        out.len() as u64,
        before.1,
        out.total_tokens(),
    );
    (out, clusters, stats)
}

pub(crate) fn signatures(texts: &[&str], cfg: &FingerprintConfig) -> Result<Vec<MinHashSignature>> {
    cfg.validate()?;
    let hasher = cfg.hasher();
    texts
        .par_iter()
        .map(|t| Ok(hasher.signature(&shingle(t, cfg.scheme)?)))
        .collect()
}

/// Indices of items connected by LSH-candidate pairs whose estimated
/// Jaccard reaches `threshold`, as union-find components of size ≥ 2.
pub(crate) fn near_components(
    sigs: &[MinHashSignature],
    cfg: &FingerprintConfig,
    threshold: f64,
) -> Result<Vec<Vec<usize>>> {
    let mut index = LshIndex::new(cfg.bands, cfg.rows)?;
    for (i, s) in sigs.iter().enumerate() {
        index.insert(i, s)?;
    }
    let mut uf = UnionFind::new(sigs.len());
    for (a, b) in index.candidate_pairs() {
        if estimate_jaccard(&sigs[a], &sigs[b])? >= threshold {
            uf.union(a, b);
        }
    }
    Ok(uf.components(2))
}

/// Near-duplicate clusters over the whole corpus; members in corpus order,
/// survivor chosen by keep-longest.
pub fn cluster_near_duplicates(
    corpus: &Corpus,
    cfg: &FingerprintConfig,
    threshold: f64,
) -> Result<Vec<DuplicateCluster>> {
    DocDedupConfig {
        fingerprint: *cfg,
        threshold,
    }
    .validate()?;
    let docs: Vec<&Document> = corpus.docs().collect();
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let sigs = signatures(&texts, cfg)?;
    Ok(near_components(&sigs, cfg, threshold)?
        .into_iter()
        .map(|comp| {
            let members: Vec<&Document> = comp.iter().map(|&i| docs[i]).collect();
            DuplicateCluster {
                survivor: choose_survivor(members.iter().copied()).unwrap().id.clone(),
                members: members.iter().map(|d| d.id.clone()).collect(),
                kind: ClusterKind::Near,
            }
        })
        .collect())
}

/// Drops every cluster member except its longest-text document.
pub fn resolve_clusters(
    corpus: Corpus,
    clusters: &[DuplicateCluster],
) -> Result<(Corpus, StageStats)> {
    let by_id: HashMap<&str, &Document> = corpus.docs().map(|d| (d.id.as_str(), d)).collect();
    let mut drop: HashSet<String> = HashSet::new();
    for c in clusters {
        let mut members = Vec::with_capacity(c.members.len());
        for id in &c.members {
            members.push(
                *by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::DanglingId(id.clone()))?,
            );
        }
        let Some(survivor) = choose_survivor(members.iter().copied()) else {
            continue;
        };
        drop.extend(
            members
                .iter()
                .filter(|d| d.id != survivor.id)
                .map(|d| d.id.clone()),
        );
    }
    let before = (corpus.len() as u64, corpus.total_tokens());
    let out = corpus.filter_map_docs(|d| (!drop.contains(&d.id)).then_some(d));
    let stats = StageStats::new(
        "dedup-near",
        before.0,
        out.len() as u64,
        before.1,
        out.total_tokens(),
    );
    Ok((out, stats))
}

#[derive(Debug, Clone)]
pub struct DocDedupOutput {
    pub corpus: Corpus,
    pub clusters: Vec<DuplicateCluster>,
    pub stats: Vec<StageStats>,
}

/// Exact pass, then near-duplicate clustering and keep-longest resolution,
/// over all shards as one pool.
pub fn dedup_documents(corpus: Corpus, cfg: &DocDedupConfig) -> Result<DocDedupOutput> {
    cfg.validate()?;
    let (corpus, mut clusters, exact_stats) = dedup_exact(corpus);
    let near = cluster_near_duplicates(&corpus, &cfg.fingerprint, cfg.threshold)?;
    let (corpus, near_stats) = resolve_clusters(corpus, &near)?;
    clusters.extend(near);
    Ok(DocDedupOutput {
        corpus,
        clusters,
        stats: vec![exact_stats, near_stats],
    })
}
