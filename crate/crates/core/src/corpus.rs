//! Documents, shards and JSONL corpus persistence.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};
use crate::text::count_tokens;

/// Meta key that overrides the mixture bucket of a document.
pub const MIX_TAG_KEY: &str = "mix_tag";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    WebZh,
    WebEn,
    KidZh,
    KidEn,
    Code,
    Other,
}

impl DomainTag {
    pub const ALL: [DomainTag; 6] = [
        DomainTag::WebZh,
        DomainTag::WebEn,
        DomainTag::KidZh,
        DomainTag::KidEn,
        DomainTag::Code,
        DomainTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::WebZh => "web_zh",
            DomainTag::WebEn => "web_en",
            DomainTag::KidZh => "kid_zh",
            DomainTag::KidEn => "kid_en",
            DomainTag::Code => "code",
            DomainTag::Other => "other",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DomainTag::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown domain {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub domain: DomainTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default)]
    pub token_count: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, domain: DomainTag) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            token_count: count_tokens(&text),
            text,
            domain,
            language: None,
            source_url: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_source_url(mut self, url: impl Into<String>) -> Self {
        self.source_url = Some(url.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Replaces the text and recomputes the cached token count.
    pub fn set_text(&mut self, text: String) {
        self.token_count = count_tokens(&text);
        self.text = text;
    }

    /// Mixture bucket: the `mix_tag` meta value when present, otherwise the
    /// domain name.
    pub fn mix_key(&self) -> String {
        self.meta
            .get(MIX_TAG_KEY)
            .cloned()
            .unwrap_or_else(|| self.domain.as_str().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub id: String,
    pub docs: Vec<Document>,
}

impl Shard {
    pub fn new(id: impl Into<String>, docs: Vec<Document>) -> Self {
        Shard {
            id: id.into(),
            docs,
        }
    }

    pub fn tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.token_count).sum()
    }
}

/// An ordered list of shards whose document ids are globally unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    shards: Vec<Shard>,
}

impl Corpus {
    pub fn new(shards: Vec<Shard>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in shards.iter().flat_map(|s| &s.docs) {
            if d.id.is_empty() {
                return Err(Error::InvalidConfig("document with empty id".into()));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        Ok(Corpus { shards })
    }

    pub fn from_documents(shard_id: impl Into<String>, docs: Vec<Document>) -> Result<Self> {
        Corpus::new(vec![Shard::new(shard_id, docs)])
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Shard> {
        self.shards
    }

    pub fn docs(&self) -> impl Iterator<Item = &Document> + '_ {
        self.shards.iter().flat_map(|s| s.docs.iter())
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.shards.into_iter().flat_map(|s| s.docs).collect()
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(|s| s.docs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_tokens(&self) -> u64 {
        self.docs().map(|d| d.token_count).sum()
    }

    /// Keeps shard boundaries and applies `f` to each document in order;
    /// `None` drops the document.
    pub fn filter_map_docs(self, mut f: impl FnMut(Document) -> Option<Document>) -> Corpus {
        Corpus {
            shards: self
                .shards
                .into_iter()
                .map(|s| Shard {
                    id: s.id,
                    docs: s.docs.into_iter().filter_map(&mut f).collect(),
                })
                .collect(),
        }
    }

    /// Re-partitions documents into per-bucket shards of at most
    /// `shard_docs` documents named `<bucket>-<index>`, keeping global
    /// document order within each bucket. The result depends only on the
    /// document sequence, not on the incoming shard boundaries.
    pub fn canonical_shards(self, shard_docs: usize) -> Corpus {
        let shard_docs = shard_docs.max(1);
        let mut buckets: BTreeMap<String, Vec<Document>> = BTreeMap::new();
        for d in self.into_documents() {
            buckets.entry(d.mix_key()).or_default().push(d);
        }
        let mut shards = Vec::new();
        for (bucket, docs) in buckets {
            let mut it = docs.into_iter().peekable();
            let mut index = 0;
            while it.peek().is_some() {
                let chunk: Vec<Document> = it.by_ref().take(shard_docs).collect();
                shards.push(Shard::new(format!("{bucket}-{index:05}"), chunk));
                index += 1;
            }
        }
        Corpus { shards }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub docs_in: u64,
    pub docs_out: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub removal_fraction: f64,
}

impl StageStats {
    pub fn new(
        stage: impl Into<String>,
        docs_in: u64,
        docs_out: u64,
        tokens_in: u64,
        tokens_out: u64,
    ) -> Self {
        let removal_fraction = if tokens_in == 0 {
            0.0
        } else {
            tokens_in.saturating_sub(tokens_out) as f64 / tokens_in as f64
        };
        StageStats {
            stage: stage.into(),
            docs_in,
            docs_out,
            tokens_in,
            tokens_out,
            removal_fraction,
        }
    }

    pub fn between(stage: impl Into<String>, before: &Corpus, after: &Corpus) -> Self {
        StageStats::new(
            stage,
            before.len() as u64,
            after.len() as u64,
            before.total_tokens(),
            after.total_tokens(),
        )
    }

    /// tokens_out / tokens_in, with an empty input counting as full survival.
    pub fn survival_fraction(&self) -> f64 {
        if self.tokens_in == 0 {
            1.0
        } else {
            self.tokens_out as f64 / self.tokens_in as f64
        }
    }
}

#[derive(Deserialize)]
struct DocRecord {
    id: String,
    text: String,
    domain: DomainTag,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    source_url: Option<String>,
    #[serde(default)]
    token_count: Option<u64>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

fn read_shard_file(path: &Path, seen: &mut HashSet<String>) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && ArtifactHeader::parse_line(line).is_some()) {
            continue;
        }
        let rec: DocRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        let counted = count_tokens(&rec.text);
        if let Some(given) = rec.token_count {
            if given != counted {
                log::warn!(
                    "{}:{}: token_count {given} for {:?} disagrees with counted {counted}; using counted",
                    path.display(),
                    i + 1,
                    rec.id
                );
            }
        }
        docs.push(Document {
            id: rec.id,
            text: rec.text,
            domain: rec.domain,
            language: rec.language,
            source_url: rec.source_url,
            token_count: counted,
            meta: rec.meta,
        });
    }
    Ok(docs)
}

fn shard_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "jsonl") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn shard_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "shard".to_string())
}

/// Reads a corpus from a `.jsonl` file (one shard named by the file stem)
/// or a directory of `.jsonl` shard files taken in filename order.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let mut seen = HashSet::new();
    let files = if path.is_dir() {
        shard_files(path)?
    } else {
        vec![path.to_path_buf()]
    };
    let mut shards = Vec::with_capacity(files.len());
    for f in files {
        let docs = read_shard_file(&f, &mut seen)?;
        shards.push(Shard::new(shard_name(&f), docs));
    }
    Corpus::new(shards)
}

fn shard_bytes(docs: &[Document], header: Option<&ArtifactHeader>) -> Result<Vec<u8>> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.to_line());
        out.push('\n');
    }
    for d in docs {
        out.push_str(&serde_json::to_string(d).map_err(|e| Error::InvalidConfig(e.to_string()))?);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

/// Writes `corpus` to `path`. A path ending in `.jsonl` receives every
/// document in one file; any other path becomes a directory with one
/// `<shard>.jsonl` file per shard.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_corpus_with_header(corpus, path, None)
}

pub fn write_corpus_with_header(
    corpus: &Corpus,
    path: &Path,
    header: Option<&ArtifactHeader>,
) -> Result<()> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let docs: Vec<Document> = corpus.docs().cloned().collect();
        return artifact::write_atomic(path, &shard_bytes(&docs, header)?);
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    for stale in shard_files(path)? {
        std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    for shard in corpus.shards() {
        let file = path.join(format!("{}.jsonl", shard.id));
        artifact::write_atomic(&file, &shard_bytes(&shard.docs, header)?)?;
    }
    Ok(())
}
