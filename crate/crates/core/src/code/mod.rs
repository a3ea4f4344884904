//! Code-data organization: file pruning, repository-level samples built
//! from dependency-ordered files, repo-level dedup, star-weighted sampling
//! and the repository/document-level mix.

pub mod deps;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::corpus::{Corpus, Document, DomainTag, StageStats};
use crate::dedup::{dedup_documents, DocDedupConfig, DocDedupOutput};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintConfig;
use crate::text::{count_tokens, is_cjk};

pub use deps::{extract_dependencies, topo_order, GraphDump, RepoGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LangFamily {
    PythonLike,
    CLike,
    JsLike,
    Other,
}

impl LangFamily {
    pub fn from_path(path: &str) -> Self {
        match extension(path).as_deref() {
            Some("py" | "pyi" | "pyx") => LangFamily::PythonLike,
            Some(
                "c" | "h" | "cc" | "cpp" | "cxx" | "hpp" | "hh" | "hxx" | "cu" | "cuh" | "m" | "mm",
            ) => LangFamily::CLike,
            Some("js" | "jsx" | "ts" | "tsx" | "mjs" | "cjs" | "vue") => LangFamily::JsLike,
            _ => LangFamily::Other,
        }
    }
}

fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn extension(path: &str) -> Option<String> {
    let base = basename(path);
    base.rsplit_once('.')
        .filter(|(stem, _)| !stem.is_empty())
        .map(|(_, e)| e.to_ascii_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoFile {
    pub path: String,
    pub text: String,
    pub family: LangFamily,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    pub name: String,
    pub stars: u64,
    pub files: Vec<RepoFile>,
}

fn validate_path(path: &str) -> Result<()> {
    let ok = !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != ".." && seg != ".");
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidPath(path.to_string()))
    }
}

impl Repository {
    pub fn new(name: impl Into<String>, stars: u64, files: Vec<(String, String)>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(files.len());
        for (path, text) in files {
            validate_path(&path)?;
            if !seen.insert(path.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "repository {name:?} lists {path:?} twice"
                )));
            }
            out.push(RepoFile {
                family: LangFamily::from_path(&path),
                path,
                text,
            });
        }
        Ok(Repository {
            name,
            stars,
            files: out,
        })
    }

    pub fn tokens(&self) -> u64 {
        self.files.iter().map(|f| count_tokens(&f.text)).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileRecord {
    path: String,
    text: String,
}

/// Repository ingestion record: `{"name", "stars", "files": [{"path", "text"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RepoRecord {
    name: String,
    #[serde(default)]
    stars: u64,
    files: Vec<FileRecord>,
}

pub fn read_repos(path: &Path) -> Result<Vec<Repository>> {
    let records: Vec<RepoRecord> = artifact::read_jsonl(path)?;
    let mut names = HashSet::new();
    records
        .into_iter()
        .map(|r| {
            if !names.insert(r.name.clone()) {
                return Err(Error::DuplicateId(r.name));
            }
            Repository::new(
                r.name,
                r.stars,
                r.files.into_iter().map(|f| (f.path, f.text)).collect(),
            )
        })
        .collect()
}

pub fn write_repos(path: &Path, repos: &[Repository]) -> Result<()> {
    let records = repos.iter().map(|r| RepoRecord {
        name: r.name.clone(),
        stars: r.stars,
        files: r
            .files
            .iter()
            .map(|f| FileRecord {
                path: f.path.clone(),
                text: f.text.clone(),
            })
            .collect(),
    });
    artifact::write_jsonl(path, None, records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodeFilterConfig {
    pub pruned_extensions: Vec<String>,
    /// Basenames kept even when their extension is pruned.
    pub allowlist: Vec<String>,
    pub max_foreign_byte_fraction: f64,
    pub max_line_chars: usize,
    pub min_alpha_fraction: f64,
}

impl Default for CodeFilterConfig {
    fn default() -> Self {
        CodeFilterConfig {
            pruned_extensions: ["html", "htm", "xml", "json", "yaml", "yml"]
                .map(String::from)
                .to_vec(),
            allowlist: ["package.json", "tsconfig.json", "pom.xml"]
                .map(String::from)
                .to_vec(),
            max_foreign_byte_fraction: 0.3,
            max_line_chars: 1000,
            min_alpha_fraction: 0.25,
        }
    }
}

/// Share of bytes belonging to characters that are neither ASCII nor CJK.
fn foreign_byte_fraction(text: &str) -> f64 {
    if text.is_empty() {
        return 0.0;
    }
    let foreign: usize = text
        .chars()
        .filter(|c| !c.is_ascii() && !is_cjk(*c))
        .map(char::len_utf8)
        .sum();
    foreign as f64 / text.len() as f64
}

fn alpha_fraction(text: &str) -> f64 {
    let total = text.chars().count();
    if total == 0 {
        return 0.0;
    }
    text.chars().filter(|c| c.is_alphabetic()).count() as f64 / total as f64
}

impl CodeFilterConfig {
    pub fn keeps(&self, file: &RepoFile) -> bool {
        let pruned_type = extension(&file.path).is_some_and(|e| {
            self.pruned_extensions
                .iter()
                .any(|p| p.eq_ignore_ascii_case(&e))
        });
        if pruned_type && !self.allowlist.iter().any(|a| a == basename(&file.path)) {
            return false;
        }
        foreign_byte_fraction(&file.text) <= self.max_foreign_byte_fraction
            && file
                .text
                .lines()
                .all(|l| l.chars().count() <= self.max_line_chars)
            && alpha_fraction(&file.text) >= self.min_alpha_fraction
    }
}

/// Drops markup/data files and files failing the text heuristics; stats
/// count files.
pub fn filter_code_files(repo: Repository, cfg: &CodeFilterConfig) -> (Repository, StageStats) {
    let docs_in = repo.files.len() as u64;
    let tokens_in = repo.tokens();
    let files: Vec<RepoFile> = repo.files.into_iter().filter(|f| cfg.keeps(f)).collect();
    let out = Repository { files, ..repo };
    let stats = StageStats::new(
        "code-filter",
        docs_in,
        out.files.len() as u64,
        tokens_in,
        out.tokens(),
    );
    (out, stats)
}

pub const FILE_MARKER_OPEN: &str = "⟨FILE ";
pub const FILE_MARKER_CLOSE: &str = "⟩";

/// One document for the whole repository: `⟨FILE path⟩\n<text>\n` per file
/// in `order`.
pub fn concat_repo(repo: &Repository, order: &[String]) -> Result<Document> {
    if repo.files.is_empty() {
        return Err(Error::EmptyRepository(repo.name.clone()));
    }
    let paths: BTreeSet<&str> = repo.files.iter().map(|f| f.path.as_str()).collect();
    let ordered: BTreeSet<&str> = order.iter().map(String::as_str).collect();
    if order.len() != repo.files.len() || ordered != paths {
        return Err(Error::OrderMismatch {
            repo: repo.name.clone(),
            message: format!("{} paths given for {} files", order.len(), repo.files.len()),
        });
    }
    let mut text = String::new();
    for p in order {
        let file = repo.files.iter().find(|f| &f.path == p).unwrap();
        text.push_str(FILE_MARKER_OPEN);
        text.push_str(p);
        text.push_str(FILE_MARKER_CLOSE);
        text.push('\n');
        text.push_str(&file.text);
        text.push('\n');
    }
    Ok(
        Document::new(format!("repo:{}", repo.name), text, DomainTag::Code)
            .with_meta("repo", repo.name.clone())
            .with_meta("stars", repo.stars.to_string())
            .with_meta("files", repo.files.len().to_string()),
    )
}

/// Inverse of [`concat_repo`]: `(path, text)` pairs in document order.
/// Ambiguous if a file itself contains a line starting with the marker.
pub fn split_repo_document(text: &str) -> Option<Vec<(String, String)>> {
    let boundary = format!("\n{FILE_MARKER_OPEN}");
    let mut out = Vec::new();
    let mut rest = text.strip_prefix(FILE_MARKER_OPEN)?;
    loop {
        let (header, body) = rest.split_once('\n')?;
        let path = header.strip_suffix(FILE_MARKER_CLOSE)?;
        match body.find(&boundary) {
            Some(i) => {
                out.push((path.to_string(), body[..i].to_string()));
                rest = &body[i + boundary.len()..];
            }
            None => {
                out.push((path.to_string(), body.strip_suffix('\n')?.to_string()));
                return Some(out);
            }
        }
    }
}

/// Filter, order and concatenate one repository.
pub fn assemble_repo(
    repo: Repository,
    cfg: &CodeFilterConfig,
) -> Result<(Document, RepoGraph, StageStats)> {
    let (repo, stats) = filter_code_files(repo, cfg);
    let graph = extract_dependencies(&repo);
    let order = topo_order(&graph);
    let doc = concat_repo(&repo, &order)?;
    Ok((doc, graph, stats))
}

/// Repository-level near-duplicate removal with word 7-gram shingles and
/// keep-longest survivors.
pub fn dedup_repos(repo_docs: Vec<Document>, threshold: f64) -> Result<DocDedupOutput> {
    let corpus = Corpus::from_documents("repos", repo_docs)?;
    dedup_documents(
        corpus,
        &DocDedupConfig {
            fingerprint: FingerprintConfig::repository(),
            threshold,
        },
    )
}

pub fn star_weight(stars: u64) -> f64 {
    (2.0 + stars as f64).log2()
}

/// Weighted sampling without replacement, weight `log2(2 + stars)`, taking
/// draws until the next drawn repository would push the token total past
/// `budget`. Returns indices into `stars` in draw order.
pub fn star_weighted_sample(stars: &[u64], tokens: &[u64], budget: u64, seed: u64) -> Vec<usize> {
    assert_eq!(stars.len(), tokens.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..stars.len()).collect();
    let mut selected = Vec::new();
    let mut used = 0u64;
    while !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| star_weight(stars[i])).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (k, &i) in remaining.iter().enumerate() {
            u -= star_weight(stars[i]);
            if u < 0.0 {
                pick = k;
                break;
            }
        }
        let i = remaining.remove(pick);
        if used + tokens[i] > budget {
            break;
        }
        used += tokens[i];
        selected.push(i);
    }
    selected
}

fn doc_stars(doc: &Document) -> u64 {
    doc.meta
        .get("stars")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

/// Star-prioritized order over repository documents (stars from meta).
pub fn sample_repo_docs(docs: Vec<Document>, budget: u64, seed: u64) -> Vec<Document> {
    let stars: Vec<u64> = docs.iter().map(doc_stars).collect();
    let tokens: Vec<u64> = docs.iter().map(|d| d.token_count).collect();
    let picks = star_weighted_sample(&stars, &tokens, budget, seed);
    let mut slots: Vec<Option<Document>> = docs.into_iter().map(Some).collect();
    picks
        .into_iter()
        .map(|i| slots[i].take().unwrap())
        .collect()
}

#[derive(Debug, Clone)]
pub struct CodeMix {
    pub docs: Vec<Document>,
    pub repo_tokens: u64,
    pub file_tokens: u64,
    pub warnings: Vec<String>,
}

impl CodeMix {
    pub fn repo_share(&self) -> f64 {
        let total = self.repo_tokens + self.file_tokens;
        if total == 0 {
            0.0
        } else {
            self.repo_tokens as f64 / total as f64
        }
    }
}

fn fill(pool: Vec<Document>, target: u64) -> (Vec<Document>, u64) {
    let mut used = 0;
    let mut out = Vec::new();
    for d in pool {
        if used + d.token_count <= target {
            used += d.token_count;
            out.push(d);
        }
    }
    (out, used)
}

/// Takes about `repo_fraction` of the code budget from repository-level
/// documents and the rest from document-level ones, each side filled
/// greedily in input order. Without an explicit budget the largest budget
/// both pools can satisfy is used.
pub fn mix_code_levels(
    repo_docs: Vec<Document>,
    file_docs: Vec<Document>,
    repo_fraction: f64,
    budget: Option<u64>,
) -> Result<CodeMix> {
    if !(0.0..=1.0).contains(&repo_fraction) {
        return Err(Error::InvalidConfig(format!(
            "repo_fraction {repo_fraction} outside [0, 1]"
        )));
    }
    let repo_avail: u64 = repo_docs.iter().map(|d| d.token_count).sum();
    let file_avail: u64 = file_docs.iter().map(|d| d.token_count).sum();
    let (repo_target, file_target) = match budget {
        Some(b) => {
            let r = ((repo_fraction * b as f64).round() as u64).min(b);
            (r, b - r)
        }
        // Largest budget both pools can satisfy: the binding pool is used
        // whole and the other side is sized from it.
        None if repo_fraction >= 1.0 => (repo_avail, 0),
        None if repo_fraction <= 0.0 => (0, file_avail),
        None => {
            let ratio = repo_fraction / (1.0 - repo_fraction);
            if repo_avail as f64 <= file_avail as f64 * ratio {
                (
                    repo_avail,
                    ((repo_avail as f64 / ratio).round() as u64).min(file_avail),
                )
            } else {
                (
                    ((file_avail as f64 * ratio).round() as u64).min(repo_avail),
                    file_avail,
                )
            }
        }
    };
    let budget = repo_target + file_target;
    let mut warnings = Vec::new();
    for (side, avail, target) in [
        ("repository-level", repo_avail, repo_target),
        ("document-level", file_avail, file_target),
    ] {
        if avail < target {
            warnings.push(format!(
                "{side} pool has {avail} tokens for a target of {target}; using all of it"
            ));
        }
    }
    if budget == 0 {
        warnings.push("code budget is empty".to_string());
    }
    let (mut docs, repo_tokens) = fill(repo_docs, repo_target);
    let (files, file_tokens) = fill(file_docs, file_target);
    docs.extend(files);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CodeMix {
        docs,
        repo_tokens,
        file_tokens,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodeConfig {
    pub filter: CodeFilterConfig,
    pub dedup_threshold: f64,
    pub repo_fraction: f64,
    pub budget_tokens: Option<u64>,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            filter: CodeFilterConfig::default(),
            dedup_threshold: 0.8,
            repo_fraction: 0.62,
            budget_tokens: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodeBuildOutput {
    /// Non-code documents followed by the mixed code selection.
    pub corpus: Corpus,
    pub graphs: Vec<(String, RepoGraph)>,
    pub mix: CodeMix,
    pub stats: StageStats,
}

/// Assembles repositories into repository-level documents, deduplicates
/// and star-samples them, and mixes them with the corpus's code documents.
/// Non-code documents pass through.
pub fn build_code_corpus(
    corpus: Corpus,
    repos: Vec<Repository>,
    cfg: &CodeConfig,
    seed: u64,
) -> Result<CodeBuildOutput> {
    let before = (corpus.len() as u64, corpus.total_tokens());
    let mut repo_docs = Vec::new();
    let mut graphs = Vec::new();
    let mut warnings = Vec::new();
    for repo in repos {
        let name = repo.name.clone();
        match assemble_repo(repo, &cfg.filter) {
            Ok((doc, graph, _)) => {
                repo_docs.push(doc);
                graphs.push((name, graph));
            }
            Err(Error::EmptyRepository(n)) => {
                warnings.push(format!("repository {n:?} is empty after filtering"))
            }
            Err(e) => return Err(e),
        }
    }
    let repo_docs = dedup_repos(repo_docs, cfg.dedup_threshold)?
        .corpus
        .into_documents();
    let repo_budget = match cfg.budget_tokens {
        Some(b) => (cfg.repo_fraction * b as f64).round() as u64,
        None => u64::MAX,
    };
    let sampled = sample_repo_docs(repo_docs, repo_budget, seed);

    let (code, rest): (Vec<Document>, Vec<Document>) = corpus
        .into_documents()
        .into_iter()
        .partition(|d| d.domain == DomainTag::Code);
    let mut mix = mix_code_levels(sampled, code, cfg.repo_fraction, cfg.budget_tokens)?;
    warnings.append(&mut mix.warnings);
    mix.warnings = warnings;

    let mut docs = rest;
    docs.extend(mix.docs.iter().cloned());
    let out = Corpus::from_documents("all", docs)?;
    let stats = StageStats::new(
        "code-build",
        before.0,
        out.len() as u64,
        before.1,
        out.total_tokens(),
    );
    Ok(CodeBuildOutput {
        corpus: out,
        graphs,
        mix,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repo(files: &[(&str, &str)]) -> Repository {
        Repository::new(
            "r",
            3,
            files
                .iter()
                .map(|(p, t)| (p.to_string(), t.to_string()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn markup_files_pruned() {
        let r = repo(&[
            ("a.py", "import os\nprint('hello world')\n"),
            ("b.html", "<html><body>hi</body></html>"),
            ("package.json", "{\"name\": \"demo\"}"),
        ]);
        let (out, stats) = filter_code_files(r, &CodeFilterConfig::default());
        let kept: Vec<_> = out.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(kept, ["a.py", "package.json"]);
        assert_eq!((stats.docs_in, stats.docs_out), (3, 2));
    }

    #[test]
    fn long_lines_and_symbol_soup_pruned() {
        let r = repo(&[
            ("min.js", &"a".repeat(5000)),
            ("data.py", "0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12"),
            ("ok.py", "def f(x):\n    return x + 1\n"),
        ]);
        let (out, _) = filter_code_files(r, &CodeFilterConfig::default());
        let kept: Vec<_> = out.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(kept, ["ok.py"]);
    }

    #[test]
    fn bad_paths_rejected() {
        for p in ["", "/abs.py", "a/../b.py", "a//b.py", "./a.py"] {
            assert!(
                Repository::new("r", 0, vec![(p.to_string(), String::new())]).is_err(),
                "{p}"
            );
        }
        assert!(Repository::new(
            "r",
            0,
            vec![("a".into(), "".into()), ("a".into(), "".into())]
        )
        .is_err());
    }

    #[test]
    fn family_by_extension() {
        assert_eq!(LangFamily::from_path("x/y.PY"), LangFamily::PythonLike);
        assert_eq!(LangFamily::from_path("inc/u.hpp"), LangFamily::CLike);
        assert_eq!(LangFamily::from_path("web/app.tsx"), LangFamily::JsLike);
        assert_eq!(LangFamily::from_path("Makefile"), LangFamily::Other);
        assert_eq!(LangFamily::from_path(".py"), LangFamily::Other);
    }

    #[test]
    fn concat_and_split() {
        let r = repo(&[
            ("a.py", "import b\nb.f()"),
            ("b.py", "def f():\n    pass\n"),
        ]);
        let order = topo_order(&extract_dependencies(&r));
        assert_eq!(order, ["b.py", "a.py"]);
        let doc = concat_repo(&r, &order).unwrap();
        assert_eq!(doc.id, "repo:r");
        assert_eq!(doc.domain, DomainTag::Code);
        assert!(doc.text.find("⟨FILE b.py⟩").unwrap() < doc.text.find("⟨FILE a.py⟩").unwrap());
        let back = split_repo_document(&doc.text).unwrap();
        assert_eq!(
            back,
            vec![
                ("b.py".to_string(), "def f():\n    pass\n".to_string()),
                ("a.py".to_string(), "import b\nb.f()".to_string())
            ]
        );
    }

    #[test]
    fn concat_errors() {
        let empty = Repository::new("e", 0, vec![]).unwrap();
        assert!(matches!(
            concat_repo(&empty, &[]),
            Err(Error::EmptyRepository(_))
        ));
        let r = repo(&[("a.py", "")]);
        assert!(matches!(
            concat_repo(&r, &["b.py".to_string()]),
            Err(Error::OrderMismatch { .. })
        ));
        assert!(matches!(
            concat_repo(&r, &[]),
            Err(Error::OrderMismatch { .. })
        ));
    }

    #[test]
    fn sampling_budget_edges() {
        let stars = [5, 0, 100];
        let tokens = [10, 20, 30];
        let mut all = star_weighted_sample(&stars, &tokens, 60, 1);
        all.sort();
        assert_eq!(all, [0, 1, 2]);
        assert!(star_weighted_sample(&stars, &tokens, 0, 1).is_empty());
        assert_eq!(
            star_weighted_sample(&stars, &tokens, 45, 9),
            star_weighted_sample(&stars, &tokens, 45, 9)
        );
    }

    #[test]
    fn mix_degenerate_cases() {
        let repo_docs: Vec<Document> = (0..3)
            .map(|i| Document::new(format!("r{i}"), "w ".repeat(10), DomainTag::Code))
            .collect();
        let files: Vec<Document> = (0..3)
            .map(|i| Document::new(format!("f{i}"), "w ".repeat(10), DomainTag::Code))
            .collect();
        let all_repo = mix_code_levels(repo_docs.clone(), files, 1.0, None).unwrap();
        assert_eq!(all_repo.file_tokens, 0);
        assert_eq!(all_repo.repo_tokens, 30);

        let none = mix_code_levels(repo_docs, vec![], 0.0, None).unwrap();
        assert!(none.docs.is_empty());
        assert!(!none.warnings.is_empty());
        assert!(mix_code_levels(vec![], vec![], 1.5, None).is_err());
    }
}
