//! Stage sequencing with every stage's output materialized on disk.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! run.json                   run record (status, per-stage stats, output hashes)
//! 00-ingest/corpus/*.jsonl   documents sorted by id, re-sharded per bucket
//! 01-dedup-doc/...           corpus/, clusters.jsonl, stats.json
//! ...
//! ```
//!
//! Every artifact carries the config hash in its header. Outputs other than
//! the wall-clock fields of `run.json` are a pure function of the config,
//! the auxiliary inputs and the set of input documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{self, ArtifactHeader};
use crate::code::{self, CodeConfig};
use crate::corpus::{read_corpus, write_corpus_with_header, Corpus, DomainTag, StageStats};
use crate::dedup::{dedup_documents, DocDedupConfig};
use crate::error::{Error, Result};
use crate::mixture::{
    build_manifest, compute_sampling_rates, validate_mixture, DomainInventory, MixtureSpec,
};
use crate::quality::{
    filter_corpus, train_classifier, LabeledText, PiiPattern, QualityFilter, QualityModel,
    QualityThresholds, RuleConfig, TrainConfig,
};
use crate::report::aggregate_stats;
use crate::sentence::{dedup_sentences, SentenceDedupConfig};

/// Stage names in their required relative order.
pub const STAGE_ORDER: [&str; 7] = [
    "ingest",
    "dedup-doc",
    "dedup-sent",
    "quality-filter",
    "code-build",
    "mix",
    "report",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StageConfig {
    Ingest {},
    DedupDoc {
        #[serde(default)]
        config: DocDedupConfig,
    },
    DedupSent {
        #[serde(default)]
        config: SentenceDedupConfig,
    },
    QualityFilter {
        /// Labeled seed set to train on; ignored when `model` is given.
        #[serde(default)]
        seeds: Option<PathBuf>,
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default)]
        train: TrainConfig,
        #[serde(default)]
        rules: RuleConfig,
        #[serde(default = "PiiPattern::builtin")]
        pii: Vec<PiiPattern>,
        #[serde(default)]
        thresholds: QualityThresholds,
        #[serde(default = "default_exempt")]
        exempt_domains: Vec<DomainTag>,
    },
    CodeBuild {
        repos: PathBuf,
        #[serde(default)]
        config: CodeConfig,
    },
    Mix {
        /// Spec file; when absent `preset` is used.
        #[serde(default)]
        spec: Option<PathBuf>,
        #[serde(default = "default_preset")]
        preset: String,
        /// Budget for presets; defaults to the tokens entering the stage.
        #[serde(default)]
        budget_tokens: Option<u64>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    Report {},
}

fn default_exempt() -> Vec<DomainTag> {
    vec![DomainTag::Code]
}

fn default_preset() -> String {
    "default".to_string()
}

fn default_tolerance() -> f64 {
    0.01
}

impl StageConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StageConfig::Ingest {} => "ingest",
            StageConfig::DedupDoc { .. } => "dedup-doc",
            StageConfig::DedupSent { .. } => "dedup-sent",
            StageConfig::QualityFilter { .. } => "quality-filter",
            StageConfig::CodeBuild { .. } => "code-build",
            StageConfig::Mix { .. } => "mix",
            StageConfig::Report {} => "report",
        }
    }

    fn rank(&self) -> usize {
        STAGE_ORDER.iter().position(|s| *s == self.name()).unwrap()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            StageConfig::QualityFilter { seeds, model, .. } => {
                seeds.iter_mut().chain(model.iter_mut()).collect()
            }
            StageConfig::CodeBuild { repos, .. } => vec![repos],
            StageConfig::Mix { spec, .. } => spec.iter_mut().collect(),
            _ => Vec::new(),
        }
    }
}

fn default_shard_docs() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shard_docs")]
    pub shard_docs: usize,
    pub stages: Vec<StageConfig>,
}

impl PipelineConfig {
    /// Loads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = artifact::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output_dir);
        for s in &mut self.stages {
            for p in s.paths_mut() {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shard_docs == 0 {
            return Err(Error::InvalidConfig("shard_docs must be positive".into()));
        }
        for w in self.stages.windows(2) {
            if w[0].rank() >= w[1].rank() {
                return Err(Error::InvalidConfig(format!(
                    "stage {} cannot follow {} (order is {})",
                    w[1].name(),
                    w[0].name(),
                    STAGE_ORDER.join(" → ")
                )));
            }
        }
        Ok(())
    }

    /// Hash of everything that determines the outputs apart from the input
    /// documents: seed, shard size, stage configs, and the contents (not
    /// locations) of referenced auxiliary files.
    pub fn config_hash(&self) -> Result<String> {
        let mut stages = self.stages.clone();
        for s in &mut stages {
            for p in s.paths_mut() {
                *p = PathBuf::from(format!("sha256:{}", artifact::sha256_file(p)?));
            }
        }
        let value = serde_json::json!({
            "version": artifact::FORMAT_VERSION,
            "seed": self.seed,
            "shard_docs": self.shard_docs,
            "stages": stages,
        });
        Ok(artifact::sha256_hex(value.to_string().as_bytes()))
    }
}

/// `sha256(seed_le || name)` truncated to 64 bits.
pub fn stage_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub dir: String,
    pub seed: u64,
    pub stats: Vec<StageStats>,
    pub wall_ms: u64,
    /// Relative path → sha256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(default)]
    pub failed_stage: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
}

impl RunRecord {
    pub fn all_stats(&self) -> Vec<StageStats> {
        self.stages
            .iter()
            .flat_map(|s| s.stats.iter().cloned())
            .collect()
    }

    /// Output hashes keyed by `<stage dir>/<file>`, excluding timing.
    pub fn output_hashes(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| {
                s.outputs
                    .iter()
                    .map(move |(k, v)| (format!("{}/{k}", s.dir), v.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Compute everything but write nothing.
    pub dry_run: bool,
    /// Reuse stages whose recorded outputs are still intact. Refused when
    /// the previous run used a different config hash.
    pub resume: bool,
}

pub const RUN_RECORD: &str = "run.json";

#[derive(Serialize)]
struct StatsFile<'a> {
    #[serde(rename = "_header")]
    header: &'a ArtifactHeader,
    stats: &'a [StageStats],
}

#[derive(Deserialize)]
struct StatsFileIn {
    stats: Vec<StageStats>,
}

#[derive(Serialize)]
struct WithHeader<'a, T: Serialize> {
    #[serde(rename = "_header")]
    header: &'a ArtifactHeader,
    #[serde(flatten)]
    body: &'a T,
}

/// Collects a stage's files before they are written, so a dry run can skip
/// writing and the record can hash exactly what was produced.
struct StageWriter<'a> {
    dir: PathBuf,
    header: &'a ArtifactHeader,
    dry_run: bool,
    written: Vec<PathBuf>,
}

impl StageWriter<'_> {
    fn corpus(&mut self, corpus: &Corpus) -> Result<()> {
        if self.dry_run {
            return Ok(());
        }
        let dir = self.dir.join("corpus");
        write_corpus_with_header(corpus, &dir, Some(self.header))?;
        for s in corpus.shards() {
            self.written.push(dir.join(format!("{}.jsonl", s.id)));
        }
        Ok(())
    }

    fn jsonl<T: Serialize>(
        &mut self,
        name: &str,
        records: impl IntoIterator<Item = T>,
    ) -> Result<()> {
        if self.dry_run {
            return Ok(());
        }
        let p = self.dir.join(name);
        artifact::write_jsonl(&p, Some(self.header), records)?;
        self.written.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        if self.dry_run {
            return Ok(());
        }
        let p = self.dir.join(name);
        artifact::write_json(
            &p,
            &WithHeader {
                header: self.header,
                body,
            },
        )?;
        self.written.push(p);
        Ok(())
    }

    fn stats(&mut self, stats: &[StageStats]) -> Result<()> {
        if self.dry_run {
            return Ok(());
        }
        let p = self.dir.join("stats.json");
        artifact::write_json(
            &p,
            &StatsFile {
                header: self.header,
                stats,
            },
        )?;
        self.written.push(p);
        Ok(())
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.dry_run {
            return Ok(());
        }
        let p = self.dir.join(name);
        artifact::write_atomic(&p, bytes)?;
        self.written.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        self.bytes(name, text.as_bytes())
    }

    fn hashes(&self) -> Result<BTreeMap<String, String>> {
        self.written
            .iter()
            .map(|p| {
                let rel = p
                    .strip_prefix(&self.dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/");
                Ok((rel, artifact::sha256_file(p)?))
            })
            .collect()
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    corpus: Corpus,
    /// Corpus-changing stage stats so far, for the report.
    history: Vec<StageStats>,
}

fn with_stats(stats: StageStats, name: &str) -> StageStats {
    StageStats {
        stage: name.to_string(),
        ..stats
    }
}

fn run_stage(
    stage: &StageConfig,
    seed: u64,
    ctx: &mut Ctx,
    w: &mut StageWriter,
) -> Result<Vec<StageStats>> {
    let shard_docs = ctx.cfg.shard_docs;
    let corpus = std::mem::take(&mut ctx.corpus);
    let stats = match stage {
        StageConfig::Ingest {} => {
            let stats = StageStats::between("ingest", &corpus, &corpus);
            ctx.corpus = corpus;
            w.corpus(&ctx.corpus)?;
            vec![stats]
        }
        StageConfig::DedupDoc { config } => {
            let out = dedup_documents(corpus, config)?;
            ctx.corpus = out.corpus.canonical_shards(shard_docs);
            w.corpus(&ctx.corpus)?;
            w.jsonl("clusters.jsonl", &out.clusters)?;
            out.stats
        }
        StageConfig::DedupSent { config } => {
            let out = dedup_sentences(corpus, config)?;
            ctx.corpus = out.corpus.canonical_shards(shard_docs);
            w.corpus(&ctx.corpus)?;
            w.jsonl("clusters.jsonl", &out.report)?;
            w.jsonl("removed.jsonl", &out.cases)?;
            vec![out.stats]
        }
        StageConfig::QualityFilter {
            seeds,
            model,
            train,
            rules,
            pii,
            thresholds,
            exempt_domains,
        } => {
            let model = match (model, seeds) {
                (Some(p), _) => QualityModel::load(p)?,
                (None, Some(p)) => {
                    let seeds: Vec<LabeledText> = artifact::read_jsonl(p)?;
                    let cfg = TrainConfig { seed, ..*train };
                    let (m, report) = train_classifier(&seeds, &cfg)?;
                    log::info!(
                        "quality model trained: loss {:.4} -> {:.4}",
                        report.initial_loss,
                        report.final_loss()
                    );
                    w.bytes("model.bin", &m.to_bytes())?;
                    m
                }
                (None, None) => {
                    return Err(Error::InvalidConfig(
                        "quality-filter needs `seeds` or `model`".into(),
                    ))
                }
            };
            let filter = QualityFilter::new(rules, pii, *thresholds)?
                .with_exempt_domains(exempt_domains.clone());
            let out = filter_corpus(corpus, &model, &filter)?;
            ctx.corpus = out.corpus.canonical_shards(shard_docs);
            w.corpus(&ctx.corpus)?;
            w.jsonl("verdicts.jsonl", &out.verdicts)?;
            vec![out.stats]
        }
        StageConfig::CodeBuild { repos, config } => {
            let repos = code::read_repos(repos)?;
            let out = code::build_code_corpus(corpus, repos, config, seed)?;
            ctx.corpus = out.corpus.canonical_shards(shard_docs);
            w.corpus(&ctx.corpus)?;
            let graphs: BTreeMap<&str, code::GraphDump> = out
                .graphs
                .iter()
                .map(|(n, g)| (n.as_str(), g.dump()))
                .collect();
            w.json("graphs.json", &serde_json::json!({ "repos": graphs, "repo_share": out.mix.repo_share(), "warnings": out.mix.warnings }))?;
            vec![out.stats]
        }
        StageConfig::Mix {
            spec,
            preset,
            budget_tokens,
            tolerance,
        } => {
            ctx.corpus = corpus;
            let budget = budget_tokens.unwrap_or_else(|| ctx.corpus.total_tokens());
            let spec = match spec {
                Some(p) => MixtureSpec::load(p)?,
                None => MixtureSpec::preset(preset, budget.max(1))?,
            };
            let inventory = DomainInventory::from_corpus(&ctx.corpus)?;
            let rates = compute_sampling_rates(&inventory, &spec)?;
            let mut manifest = build_manifest(&inventory, &rates, seed);
            manifest.spec = Some(spec.clone());
            manifest.header = Some(w.header.clone());
            let validation = validate_mixture(&manifest, &spec, *tolerance);
            if !validation.pass {
                log::warn!(
                    "realized mixture deviates by {:.4} (tolerance {tolerance})",
                    validation.max_deviation
                );
            }
            if !w.dry_run {
                let p = w.dir.join("manifest.json");
                manifest.save(&p)?;
                w.written.push(p);
            }
            w.json(
                "inventory.json",
                &serde_json::json!({ "shards": inventory.shards().collect::<Vec<_>>() }),
            )?;
            w.json("rates.json", &rates)?;
            w.json("validation.json", &validation)?;
            Vec::new()
        }
        StageConfig::Report {} => {
            ctx.corpus = corpus;
            let report = aggregate_stats(&ctx.history)?;
            w.json("report.json", &report)?;
            w.text("report.txt", &report.to_table())?;
            Vec::new()
        }
    };
    let stats: Vec<StageStats> = match stage {
        StageConfig::DedupDoc { .. } => stats,
        _ => stats
            .into_iter()
            .map(|s| with_stats(s, stage.name()))
            .collect(),
    };
    w.stats(&stats)?;
    Ok(stats)
}

fn load_record(dir: &Path) -> Result<Option<RunRecord>> {
    let p = dir.join(RUN_RECORD);
    if p.exists() {
        Ok(Some(artifact::read_json(&p)?))
    } else {
        Ok(None)
    }
}

fn outputs_intact(dir: &Path, rec: &StageRecord) -> bool {
    !rec.outputs.is_empty()
        && rec
            .outputs
            .iter()
            .all(|(rel, h)| artifact::sha256_file(&dir.join(rel)).is_ok_and(|x| &x == h))
}

/// Documents sorted by id and re-sharded per bucket, so later stages see
/// the same sequence however the input was partitioned.
pub fn canonicalize(corpus: Corpus, shard_docs: usize) -> Result<Corpus> {
    let mut docs = corpus.into_documents();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus::from_documents("all", docs)?.canonical_shards(shard_docs))
}

pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    let header = ArtifactHeader::new(hash.clone());
    let previous = if opts.resume {
        load_record(&cfg.output_dir)?
    } else {
        None
    };
    if let Some(prev) = &previous {
        if prev.config_hash != hash {
            return Err(Error::ResumeMismatch(format!(
                "{} was produced with config {} but this config hashes to {hash}",
                cfg.output_dir.display(),
                prev.config_hash
            )));
        }
    }

    let mut record = RunRecord {
        config_hash: hash,
        status: RunStatus::Running,
        failed_stage: None,
        error: None,
        stages: Vec::new(),
    };
    let save = |record: &RunRecord| -> Result<()> {
        if opts.dry_run {
            Ok(())
        } else {
            artifact::write_json(&cfg.output_dir.join(RUN_RECORD), record)
        }
    };

    let input = match read_corpus(&cfg.input).and_then(|c| canonicalize(c, cfg.shard_docs)) {
        Ok(c) => c,
        Err(e) => {
            record.status = RunStatus::Failed;
            record.failed_stage = Some("ingest".into());
            record.error = Some(e.to_string());
            save(&record)?;
            return Err(Error::Stage {
                stage: "ingest".into(),
                source: Box::new(e),
            });
        }
    };
    let mut ctx = Ctx {
        cfg,
        corpus: input,
        history: Vec::new(),
    };
    let mut reusing = previous.is_some();

    for (i, stage) in cfg.stages.iter().enumerate() {
        let name = stage.name();
        let dir_name = format!("{i:02}-{name}");
        let dir = cfg.output_dir.join(&dir_name);
        let seed = stage_seed(cfg.seed, name);

        if reusing {
            let prior = previous
                .as_ref()
                .and_then(|p| p.stages.iter().find(|s| s.dir == dir_name));
            match prior {
                Some(rec) if outputs_intact(&dir, rec) => {
                    log::info!("stage {name}: reusing outputs in {}", dir.display());
                    let stats: StatsFileIn = artifact::read_json(&dir.join("stats.json"))?;
                    if dir.join("corpus").is_dir() {
                        ctx.corpus = read_corpus(&dir.join("corpus"))?;
                    }
                    ctx.history.extend(stats.stats.iter().cloned());
                    record.stages.push(StageRecord {
                        reused: true,
                        ..rec.clone()
                    });
                    continue;
                }
                _ => reusing = false,
            }
        }

        let start = Instant::now();
        let mut writer = StageWriter {
            dir: dir.clone(),
            header: &header,
            dry_run: opts.dry_run,
            written: Vec::new(),
        };
        let result = run_stage(stage, seed, &mut ctx, &mut writer)
            .and_then(|stats| Ok((stats, writer.hashes()?)));
        match result {
            Ok((stats, outputs)) => {
                for s in &stats {
                    log::info!(
                        "{}: {} -> {} docs, {} -> {} tokens",
                        s.stage,
                        s.docs_in,
                        s.docs_out,
                        s.tokens_in,
                        s.tokens_out
                    );
                }
                ctx.history.extend(stats.iter().cloned());
                record.stages.push(StageRecord {
                    name: name.to_string(),
                    dir: dir_name,
                    seed,
                    stats,
                    wall_ms: start.elapsed().as_millis() as u64,
                    outputs,
                    reused: false,
                });
                save(&record)?;
            }
            Err(e) => {
                record.status = RunStatus::Failed;
                record.failed_stage = Some(name.to_string());
                record.error = Some(e.to_string());
                save(&record)?;
                return Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                });
            }
        }
    }
    record.status = RunStatus::Ok;
    save(&record)?;
    Ok(record)
}
