use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use corpus_curate::artifact;
use corpus_curate::code::{self, CodeConfig};
use corpus_curate::dedup::{dedup_documents, DocDedupConfig};
use corpus_curate::fingerprint::{FingerprintConfig, ShingleScheme};
use corpus_curate::mixture::{
    build_manifest, compute_sampling_rates, validate_mixture, DomainInventory, MixtureSpec,
};
use corpus_curate::pipeline::{canonicalize, run_pipeline, PipelineConfig, RunOptions, RunRecord};
use corpus_curate::quality::{
    filter_corpus, iterative_refine, train_classifier, LabeledText, MiningConfig, PiiPattern,
    QualityFilter, QualityModel, QualityThresholds, RuleConfig, TrainConfig,
};
use corpus_curate::report::{aggregate_stats, extrapolate, fit_log_curve, MetricSeries};
use corpus_curate::sentence::{dedup_sentences, PrunePolicy, SentenceDedupConfig};
use corpus_curate::{read_corpus, write_corpus, Error, Result, StageStats};

#[derive(Parser)]
#[command(name = "curate", version, about = "Pretraining corpus curation")]
struct Cli {
    /// Print planned stats without writing any file.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSONL shards, sort by id and re-shard per bucket.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        shard_docs: usize,
    },
    /// Exact and near-duplicate document removal.
    DedupDoc(DedupDocArgs),
    /// Remove sentences repeated across many documents.
    DedupSent(DedupSentArgs),
    /// Train the harmful-content classifier from labeled seeds.
    TrainQuality(TrainArgs),
    /// Rule, classifier and language filtering plus PII redaction.
    Filter(FilterArgs),
    /// Assemble repository-level code samples and mix them with file-level code.
    CodeBuild(CodeArgs),
    /// Plan a training manifest from a mixture spec and a shard inventory.
    Mix(MixArgs),
    /// Aggregate stage statistics into a removal report.
    Report {
        /// Stats JSON files (a stats list, `{"stats": [...]}`, or a run record), in stage order.
        #[arg(required = true)]
        stats: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit y = a + b ln(x) to a CSV of (tokens, metric).
    Fit {
        #[arg(long)]
        csv: PathBuf,
        /// Fit only the first half of the points.
        #[arg(long)]
        first_half: bool,
        #[arg(long)]
        predict: Vec<f64>,
    },
    /// Run a configured pipeline end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Words,
    Chars,
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long)]
    shingle: Option<Unit>,
    #[arg(long)]
    ngram: Option<usize>,
    #[arg(long)]
    num_perm: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    fp_seed: Option<u64>,
}

impl FingerprintArgs {
    fn apply(&self, mut cfg: FingerprintConfig) -> FingerprintConfig {
        let n = self.ngram.unwrap_or(cfg.scheme.n);
        cfg.scheme = match self.shingle {
            Some(Unit::Words) => ShingleScheme::words(n),
            Some(Unit::Chars) => ShingleScheme::chars(n),
            None => ShingleScheme { n, ..cfg.scheme },
        };
        cfg.num_perm = self.num_perm.unwrap_or(cfg.num_perm);
        cfg.bands = self.bands.unwrap_or(cfg.bands);
        cfg.rows = self.rows.unwrap_or(cfg.rows);
        cfg.seed = self.fp_seed.unwrap_or(cfg.seed);
        cfg
    }
}

#[derive(Args)]
struct DedupDocArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[command(flatten)]
    fingerprint: FingerprintArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    RemoveAll,
    KeepFirst,
}

#[derive(Args)]
struct DedupSentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    /// Clusters in more than this many documents are removed.
    #[arg(long, default_value_t = 8)]
    max_doc_count: usize,
    #[arg(long, default_value_t = 8)]
    min_sentence_chars: usize,
    #[arg(long, default_value_t = 64)]
    min_doc_chars: usize,
    #[arg(long, value_enum, default_value_t = Policy::RemoveAll)]
    policy: Policy,
    /// Also write before/after text of every modified document.
    #[arg(long)]
    dump_removed: bool,
    #[command(flatten)]
    fingerprint: FingerprintArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1 << 20)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Unlabeled corpus to mine uncertain documents from.
    #[arg(long, requires = "labels")]
    pool: Option<PathBuf>,
    /// JSONL of `{"id", "label"}` answering mined documents.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 1000)]
    per_round: usize,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// JSON rule config; defaults apply to missing fields.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// JSON list of extra `{"label", "pattern"}` PII patterns.
    #[arg(long)]
    pii: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    p_drop: f64,
    #[arg(long, default_value_t = 0.5)]
    lang_min: f64,
}

#[derive(Args)]
struct CodeArgs {
    #[arg(long)]
    repos: PathBuf,
    /// Corpus whose code documents form the document-level pool.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.62)]
    repo_fraction: f64,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// `default` or `math10`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, conflicts_with = "corpus")]
    inventory: Option<PathBuf>,
    /// Count the inventory from a corpus directory instead.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Budget for presets; defaults to the inventory total.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
    /// Manifest path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".jsonl").unwrap_or(&name);
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn emit_stats(stats: &[StageStats], out: &Path, dry_run: bool) -> Result<()> {
    print_json(&stats);
    if !dry_run {
        artifact::write_json(
            &sidecar(out, "stats.json"),
            &serde_json::json!({ "stats": stats }),
        )?;
    }
    Ok(())
}

fn ingest(input: &Path, out: &Path, shard_docs: usize, dry_run: bool) -> Result<()> {
    let corpus = canonicalize(read_corpus(input)?, shard_docs)?;
    let stats = StageStats::between("ingest", &corpus, &corpus);
    if !dry_run {
        write_corpus(&corpus, out)?;
    }
    emit_stats(&[stats], out, dry_run)
}

fn dedup_doc(a: &DedupDocArgs, dry_run: bool) -> Result<()> {
    let cfg = DocDedupConfig {
        fingerprint: a.fingerprint.apply(FingerprintConfig::document()),
        threshold: a.threshold,
    };
    let out = dedup_documents(read_corpus(&a.input)?, &cfg)?;
    if !dry_run {
        write_corpus(&out.corpus, &a.out)?;
        artifact::write_jsonl(&sidecar(&a.out, "clusters.jsonl"), None, &out.clusters)?;
    }
    emit_stats(&out.stats, &a.out, dry_run)
}

fn dedup_sent(a: &DedupSentArgs, dry_run: bool) -> Result<()> {
    let cfg = SentenceDedupConfig {
        fingerprint: a.fingerprint.apply(FingerprintConfig::sentence()),
        threshold: a.threshold,
        max_doc_count: a.max_doc_count,
        min_sentence_chars: a.min_sentence_chars,
        min_doc_chars: a.min_doc_chars,
        policy: match a.policy {
            Policy::RemoveAll => PrunePolicy::RemoveAll,
            Policy::KeepFirst => PrunePolicy::KeepFirst,
        },
        ..SentenceDedupConfig::default()
    };
    let out = dedup_sentences(read_corpus(&a.input)?, &cfg)?;
    if !dry_run {
        write_corpus(&out.corpus, &a.out)?;
        artifact::write_jsonl(&sidecar(&a.out, "clusters.jsonl"), None, &out.report)?;
        if a.dump_removed {
            artifact::write_jsonl(&sidecar(&a.out, "removed.jsonl"), None, &out.cases)?;
        }
    }
    emit_stats(&[out.stats], &a.out, dry_run)
}

#[derive(Deserialize)]
struct LabelRecord {
    id: String,
    label: u8,
}

fn train_quality(a: &TrainArgs, dry_run: bool) -> Result<()> {
    let seeds: Vec<LabeledText> = artifact::read_jsonl(&a.seeds)?;
    let cfg = TrainConfig {
        dim: a.dim,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let (mut model, report) = train_classifier(&seeds, &cfg)?;
    let mut summary = serde_json::json!({
        "seeds": seeds.len(),
        "initial_loss": report.initial_loss,
        "epoch_losses": report.epoch_losses,
    });
    if let (Some(pool), Some(labels)) = (&a.pool, &a.labels) {
        let pool = read_corpus(pool)?.into_documents();
        let labels: BTreeMap<String, u8> = artifact::read_jsonl::<LabelRecord>(labels)?
            .into_iter()
            .map(|r| (r.id, r.label))
            .collect();
        let mining = MiningConfig {
            per_round: a.per_round,
            ..MiningConfig::default()
        };
        let out = iterative_refine(
            model,
            seeds,
            &pool,
            |d| {
                labels
                    .get(&d.id)
                    .copied()
                    .ok_or_else(|| format!("no label for {:?}", d.id))
            },
            a.rounds,
            &mining,
            &cfg,
        )?;
        summary["rounds"] = serde_json::json!(out
            .rounds
            .iter()
            .map(|r| serde_json::json!({"round": r.round, "mined": r.mined, "seeds": r.seed_count}))
            .collect::<Vec<_>>());
        model = out.model;
    }
    if !dry_run {
        model.save(&a.out)?;
    }
    print_json(&summary);
    Ok(())
}

fn filter(a: &FilterArgs, dry_run: bool) -> Result<()> {
    let rules: RuleConfig = match &a.rules {
        Some(p) => artifact::read_json(p)?,
        None => RuleConfig::default(),
    };
    let mut pii = PiiPattern::builtin();
    if let Some(p) = &a.pii {
        pii.extend(artifact::read_json::<Vec<PiiPattern>>(p)?);
    }
    let thresholds = QualityThresholds {
        p_drop: a.p_drop,
        lang_min: a.lang_min,
    };
    let filter = QualityFilter::new(&rules, &pii, thresholds)?;
    let model = QualityModel::load(&a.model)?;
    let out = filter_corpus(read_corpus(&a.input)?, &model, &filter)?;
    if !dry_run {
        write_corpus(&out.corpus, &a.out)?;
        artifact::write_jsonl(&sidecar(&a.out, "verdicts.jsonl"), None, &out.verdicts)?;
    }
    emit_stats(&[out.stats], &a.out, dry_run)
}

fn code_build(a: &CodeArgs, dry_run: bool) -> Result<()> {
    let repos = code::read_repos(&a.repos)?;
    let corpus = match &a.input {
        Some(p) => read_corpus(p)?,
        None => corpus_curate::Corpus::default(),
    };
    let cfg = CodeConfig {
        repo_fraction: a.repo_fraction,
        budget_tokens: a.budget,
        dedup_threshold: a.threshold,
        ..CodeConfig::default()
    };
    let out = code::build_code_corpus(corpus, repos, &cfg, a.seed)?;
    for w in &out.mix.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "repository-level share {:.4} ({} of {} code tokens)",
        out.mix.repo_share(),
        out.mix.repo_tokens,
        out.mix.repo_tokens + out.mix.file_tokens
    );
    if !dry_run {
        write_corpus(&out.corpus, &a.out)?;
    }
    emit_stats(&[out.stats], &a.out, dry_run)
}

fn mix(a: &MixArgs, dry_run: bool) -> Result<()> {
    let inventory = match (&a.inventory, &a.corpus) {
        (Some(p), _) => DomainInventory::load(p)?,
        (None, Some(p)) => DomainInventory::from_corpus(&read_corpus(p)?)?,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "mix needs --inventory or --corpus".into(),
            ))
        }
    };
    let spec = match &a.spec {
        Some(p) => MixtureSpec::load(p)?,
        None => MixtureSpec::preset(
            a.preset.as_deref().unwrap_or("default"),
            a.budget.unwrap_or(inventory.total()).max(1),
        )?,
    };
    let rates = compute_sampling_rates(&inventory, &spec)?;
    let mut manifest = build_manifest(&inventory, &rates, a.seed);
    manifest.spec = Some(spec.clone());
    let validation = validate_mixture(&manifest, &spec, a.tolerance);
    eprintln!(
        "{}",
        serde_json::to_string_pretty(
            &serde_json::json!({ "rates": rates, "validation": validation })
        )
        .unwrap()
    );
    match (&a.out, dry_run) {
        (Some(p), false) => manifest.save(p)?,
        _ => print_json(&manifest),
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StatsInput {
    List(Vec<StageStats>),
    Wrapped { stats: Vec<StageStats> },
    Run(RunRecord),
    One(StageStats),
}

fn report(paths: &[PathBuf], out: Option<&Path>, dry_run: bool) -> Result<()> {
    let mut stats = Vec::new();
    for p in paths {
        match artifact::read_json::<StatsInput>(p)? {
            StatsInput::List(s) | StatsInput::Wrapped { stats: s } => stats.extend(s),
            StatsInput::Run(r) => stats.extend(r.all_stats()),
            StatsInput::One(s) => stats.push(s),
        }
    }
    let report = aggregate_stats(&stats)?;
    print!("{}", report.to_table());
    if let (Some(p), false) = (out, dry_run) {
        artifact::write_json(p, &report)?;
    }
    Ok(())
}

fn fit(csv: &Path, first_half: bool, predict: &[f64]) -> Result<()> {
    let series = MetricSeries::read_csv(csv)?;
    let points = if first_half {
        series.split_at(series.len() / 2).0
    } else {
        series.points()
    };
    let f = fit_log_curve(points)?;
    let predictions = predict
        .iter()
        .map(|&x| Ok(serde_json::json!({ "x": x, "y": extrapolate(&f, x)? })))
        .collect::<Result<Vec<_>>>()?;
    print_json(
        &serde_json::json!({ "a": f.a, "b": f.b, "rss": f.rss, "points": points.len(), "predictions": predictions }),
    );
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let dry = cli.dry_run;
    match &cli.command {
        Command::Ingest {
            input,
            out,
            shard_docs,
        } => ingest(input, out, *shard_docs, dry),
        Command::DedupDoc(a) => dedup_doc(a, dry),
        Command::DedupSent(a) => dedup_sent(a, dry),
        Command::TrainQuality(a) => train_quality(a, dry),
        Command::Filter(a) => filter(a, dry),
        Command::CodeBuild(a) => code_build(a, dry),
        Command::Mix(a) => mix(a, dry),
        Command::Report { stats, out } => report(stats, out.as_deref(), dry),
        Command::Fit {
            csv,
            first_half,
            predict,
        } => fit(csv, *first_half, predict),
        Command::Run { config, resume } => {
            let cfg = PipelineConfig::load(config)?;
            let record = run_pipeline(
                &cfg,
                RunOptions {
                    dry_run: dry,
                    resume: *resume,
                },
            )?;
            print!("{}", aggregate_stats(&record.all_stats())?.to_table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
