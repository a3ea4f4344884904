//! Exact and near-duplicate removal over a small corpus.
//!
//! `cargo run --example dedup_documents`

use corpus_curate::dedup::{dedup_documents, DocDedupConfig};
use corpus_curate::{Corpus, Document, DomainTag};

fn main() -> corpus_curate::Result<()> {
    let article = "The river flooded the lower town after three days of rain, and the council \
                   opened the school gym as a shelter for families whose homes took on water.";
    let docs = vec![
        Document::new("a", article, DomainTag::WebEn),
        // same text, different whitespace: exact key matches after normalization
        Document::new("b", format!("  {article}\n"), DomainTag::WebEn),
        // near copy with a trailing sentence; longest member survives
        Document::new(
            "c",
            format!("{article} Volunteers handed out blankets overnight."),
            DomainTag::WebEn,
        ),
        Document::new(
            "d",
            "A recipe for plum jam needs sugar, lemon and patience.",
            DomainTag::WebEn,
        ),
    ];
    let corpus = Corpus::from_documents("demo", docs)?;

    let out = dedup_documents(corpus, &DocDedupConfig::default())?;
    for c in &out.clusters {
        println!(
            "{:?} cluster {:?} -> keep {}",
            c.kind, c.members, c.survivor
        );
    }
    for s in &out.stats {
        println!("{}: {} -> {} docs", s.stage, s.docs_in, s.docs_out);
    }
    let kept: Vec<_> = out.corpus.docs().map(|d| d.id.as_str()).collect();
    println!("survivors: {kept:?}");
    Ok(())
}
