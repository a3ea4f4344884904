//! Cross-document sentence deduplication.
//!
//! Sentences from every document are pooled, grouped by exact normalized
//! text and then joined with near-identical variants via character-shingle
//! MinHash. Clusters that appear in more than `K` distinct documents are
//! boilerplate and get cut out of every document that carries them.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, DomainTag, StageStats};
use crate::dedup::signatures;
use crate::error::{Error, Result};
use crate::fingerprint::{estimate_jaccard, FingerprintConfig, LshIndex};
use crate::text::{char_len, normalize_key};

/// One sentence of a document. `span` is a byte range into the document
/// text and `text` equals that slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc_id: String,
    pub index: usize,
    pub span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceCluster {
    pub canonical: String,
    /// Ordered by document position in the corpus, then sentence index.
    pub members: Vec<SentenceRef>,
    pub doc_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrunePolicy {
    /// Delete every occurrence of a frequent cluster.
    RemoveAll,
    /// Keep the first occurrence in corpus order, delete the rest.
    KeepFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentenceDedupConfig {
    pub fingerprint: FingerprintConfig,
    pub threshold: f64,
    /// Clusters found in more than this many distinct documents are pruned.
    pub max_doc_count: usize,
    pub min_sentence_chars: usize,
    pub min_doc_chars: usize,
    pub policy: PrunePolicy,
    pub skip_domains: Vec<DomainTag>,
}

impl Default for SentenceDedupConfig {
    fn default() -> Self {
        SentenceDedupConfig {
            fingerprint: FingerprintConfig::sentence(),
            threshold: 0.7,
            max_doc_count: 8,
            min_sentence_chars: 8,
            min_doc_chars: 64,
            policy: PrunePolicy::RemoveAll,
            skip_domains: vec![DomainTag::Code],
        }
    }
}

impl SentenceDedupConfig {
    pub fn validate(&self) -> Result<()> {
        self.fingerprint.validate()?;
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sentence threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.max_doc_count < 2 {
            return Err(Error::InvalidConfig(
                "max_doc_count must be at least 2".into(),
            ));
        }
        Ok(())
    }

    fn applies_to(&self, doc: &Document) -> bool {
        !self.skip_domains.contains(&doc.domain)
    }
}

fn is_cjk_terminator(c: char) -> bool {
    matches!(c, '。' | '！' | '？' | '；')
}

/// Splits on newlines, on CJK terminators, and on `.`, `!`, `?` followed by
/// whitespace or end of text. Segments are trimmed, empty ones dropped, and
/// segments shorter than `min_chars` codepoints are merged into the
/// preceding segment.
pub fn split_sentences(doc: &Document, min_chars: usize) -> Vec<SentenceRef> {
    let text = doc.text.as_str();
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let cut = match c {
            '\n' => Some((i, i + 1)),
            '.' | '!' | '?' => match iter.peek() {
                None => Some((i + 1, i + 1)),
                Some(&(_, n)) if n.is_whitespace() => Some((i + 1, i + 1)),
                _ => None,
            },
            c if is_cjk_terminator(c) => Some((i + c.len_utf8(), i + c.len_utf8())),
            _ => None,
        };
        if let Some((end, next)) = cut {
            raw.push((start, end));
            start = next;
        }
    }
    raw.push((start, text.len()));

    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (s, e) in raw {
        let seg = &text[s..e];
        let trimmed = seg.trim();
        if trimmed.is_empty() {
            continue;
        }
        let ts = s + (seg.len() - seg.trim_start().len());
        let te = ts + trimmed.len();
        match spans.last_mut() {
            Some(last) if char_len(trimmed) < min_chars => last.1 = te,
            _ => spans.push((ts, te)),
        }
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| SentenceRef {
            doc_id: doc.id.clone(),
            index,
            span: (s, e),
            text: text[s..e].to_string(),
        })
        .collect()
}

/// Pools all sentences and returns clusters present in at least two
/// distinct documents, by descending document count then canonical text.
///
/// Distinct texts are visited from most to least widespread; each
/// unassigned text opens a cluster and absorbs the unassigned LSH
/// candidates whose estimated similarity to it reaches the threshold, so
/// every member is within the threshold of the canonical text.
pub fn sentence_clusters(
    corpus: &Corpus,
    cfg: &SentenceDedupConfig,
) -> Result<Vec<SentenceCluster>> {
    cfg.validate()?;
    let mut refs: Vec<(usize, SentenceRef)> = Vec::new();
    for (pos, doc) in corpus.docs().enumerate() {
        if cfg.applies_to(doc) {
            refs.extend(
                split_sentences(doc, cfg.min_sentence_chars)
                    .into_iter()
                    .map(|r| (pos, r)),
            );
        }
    }

    let mut key_index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, (_, r)) in refs.iter().enumerate() {
        let key = normalize_key(&r.text);
        let g = *key_index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    let doc_count = |members: &[usize]| {
        members
            .iter()
            .map(|&i| refs[i].0)
            .collect::<BTreeSet<_>>()
            .len()
    };
    let group_docs: Vec<usize> = groups.iter().map(|(_, m)| doc_count(m)).collect();

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        group_docs[b]
            .cmp(&group_docs[a])
            .then(groups[b].1.len().cmp(&groups[a].1.len()))
            .then_with(|| groups[a].0.cmp(&groups[b].0))
    });

    let texts: Vec<&str> = groups.iter().map(|(k, _)| k.as_str()).collect();
    let sigs = signatures(&texts, &cfg.fingerprint)?;
    let mut index = LshIndex::new(cfg.fingerprint.bands, cfg.fingerprint.rows)?;
    for (i, s) in sigs.iter().enumerate() {
        index.insert(i, s)?;
    }

    let mut assigned = vec![false; groups.len()];
    let mut clusters = Vec::new();
    for &g in &order {
        if assigned[g] {
            continue;
        }
        assigned[g] = true;
        let mut member_groups = vec![g];
        for c in index.query(&sigs[g])? {
            if !assigned[c] && estimate_jaccard(&sigs[g], &sigs[c])? >= cfg.threshold {
                assigned[c] = true;
                member_groups.push(c);
            }
        }
        let mut members: Vec<usize> = member_groups
            .iter()
            .flat_map(|&m| groups[m].1.iter().copied())
            .collect();
        let docs = doc_count(&members);
        if docs < 2 {
            continue;
        }
        members.sort_by_key(|&i| (refs[i].0, refs[i].1.index));
        clusters.push(SentenceCluster {
            canonical: groups[g].0.clone(),
            members: members.into_iter().map(|i| refs[i].1.clone()).collect(),
            doc_count: docs,
        });
    }
    clusters.sort_by(|a, b| {
        b.doc_count
            .cmp(&a.doc_count)
            .then_with(|| a.canonical.cmp(&b.canonical))
    });
    Ok(clusters)
}

/// Cluster report record: `{"sentence", "doc_count", "removed"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceClusterReport {
    pub sentence: String,
    pub doc_count: usize,
    pub removed: bool,
}

/// Before/after text of a document that lost sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalCase {
    pub id: String,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone)]
pub struct PruneOutput {
    pub corpus: Corpus,
    pub stats: StageStats,
    pub report: Vec<SentenceClusterReport>,
    pub cases: Vec<RemovalCase>,
}

/// Joins surviving sentences. Neighbours that were adjacent keep their
/// original separator; across a removed gap the separator is a newline if
/// the gap held one, otherwise a single space.
fn rejoin(text: &str, survivors: &[&SentenceRef]) -> String {
    let mut out = String::new();
    for (k, s) in survivors.iter().enumerate() {
        if k > 0 {
            let prev = survivors[k - 1];
            let gap = &text[prev.span.1..s.span.0];
            if s.index == prev.index + 1 {
                out.push_str(gap);
            } else if gap.contains('\n') {
                out.push('\n');
            } else {
                out.push(' ');
            }
        }
        out.push_str(&s.text);
    }
    out
}

/// Removes clusters whose distinct-document count exceeds
/// `cfg.max_doc_count`. Documents that lose sentences are rewritten and
/// dropped if what remains is shorter than `cfg.min_doc_chars`; untouched
/// documents are passed through verbatim.
pub fn prune_sentences(
    corpus: Corpus,
    clusters: &[SentenceCluster],
    cfg: &SentenceDedupConfig,
) -> Result<PruneOutput> {
    cfg.validate()?;
    let mut remove: HashMap<&str, HashSet<usize>> = HashMap::new();
    let mut report = Vec::with_capacity(clusters.len());
    for c in clusters {
        let removed = c.doc_count > cfg.max_doc_count;
        report.push(SentenceClusterReport {
            sentence: c.canonical.clone(),
            doc_count: c.doc_count,
            removed,
        });
        if !removed {
            continue;
        }
        let skip = usize::from(cfg.policy == PrunePolicy::KeepFirst);
        for m in c.members.iter().skip(skip) {
            remove.entry(m.doc_id.as_str()).or_default().insert(m.index);
        }
    }

    let before_stats = (corpus.len() as u64, corpus.total_tokens());
    let mut cases = Vec::new();
    let out = corpus.clone().filter_map_docs(|mut doc| {
        let Some(drop) = remove.get(doc.id.as_str()) else {
            return Some(doc);
        };
        let sentences = split_sentences(&doc, cfg.min_sentence_chars);
        let survivors: Vec<&SentenceRef> = sentences
            .iter()
            .filter(|s| !drop.contains(&s.index))
            .collect();
        let new_text = rejoin(&doc.text, &survivors);
        cases.push(RemovalCase {
            id: doc.id.clone(),
            before: doc.text.clone(),
            after: new_text.clone(),
        });
        if char_len(&new_text) < cfg.min_doc_chars {
            return None;
        }
        doc.set_text(new_text);
        Some(doc)
    });
    let stats = StageStats::new(
        "dedup-sent",
        before_stats.0,
        out.len() as u64,
        before_stats.1,
        out.total_tokens(),
    );
    Ok(PruneOutput {
        corpus: out,
        stats,
        report,
        cases,
    })
}

#[derive(Debug, Clone)]
pub struct SentenceDedupOutput {
    pub corpus: Corpus,
    pub clusters: Vec<SentenceCluster>,
    pub stats: StageStats,
    pub report: Vec<SentenceClusterReport>,
    pub cases: Vec<RemovalCase>,
}

pub fn dedup_sentences(corpus: Corpus, cfg: &SentenceDedupConfig) -> Result<SentenceDedupOutput> {
    let clusters = sentence_clusters(&corpus, cfg)?;
    let pruned = prune_sentences(corpus, &clusters, cfg)?;
    Ok(SentenceDedupOutput {
        corpus: pruned.corpus,
        clusters,
        stats: pruned.stats,
        report: pruned.report,
        cases: pruned.cases,
    })
}
