//! Run every stage on the bundled fixture corpus and print the survival
//! table. Outputs land in a temporary directory; pass a path to keep them.
//!
//! `cargo run --example full_pipeline -- /tmp/curated`

use std::path::{Path, PathBuf};

use corpus_curate::pipeline::{run_pipeline, PipelineConfig, RunOptions};
use corpus_curate::report::aggregate_stats;

fn main() -> corpus_curate::Result<()> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden/pipeline.json");
    let mut cfg = PipelineConfig::load(&fixture)?;

    let tmp = tempfile::tempdir().expect("tempdir");
    cfg.output_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.path().to_path_buf());

    let record = run_pipeline(&cfg, RunOptions::default())?;
    println!("config {}", &record.config_hash[..12]);
    for s in &record.stages {
        println!(
            "{:16} {:3} files  seed {:016x}",
            s.name,
            s.outputs.len(),
            s.seed
        );
    }
    print!("{}", aggregate_stats(&record.all_stats())?.to_table());

    // a second run with resume reuses everything
    let again = run_pipeline(
        &cfg,
        RunOptions {
            resume: true,
            ..RunOptions::default()
        },
    )?;
    println!(
        "reused {}/{} stages",
        again.stages.iter().filter(|s| s.reused).count(),
        again.stages.len()
    );
    Ok(())
}
