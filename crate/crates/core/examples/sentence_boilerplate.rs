//! Strip sentences repeated across many documents (cookie banners, footers)
//! while leaving the body text in place.

use corpus_curate::sentence::{dedup_sentences, SentenceDedupConfig};
use corpus_curate::{Corpus, Document, DomainTag};

const FOOTER: &str = "Subscribe to our newsletter for weekly updates.";

fn main() -> corpus_curate::Result<()> {
    let bodies = [
        "Local bakery wins regional prize for its rye loaf.",
        "Storm knocks out power to two thousand homes overnight.",
        "School board approves new science curriculum for autumn.",
        "Harbour ferry schedule changes from the first of May.",
    ];
    let docs = bodies
        .iter()
        .enumerate()
        .map(|(i, b)| Document::new(format!("n{i}"), format!("{b} {FOOTER}"), DomainTag::WebEn))
        .collect();

    // a sentence seen in more than two documents goes
    let cfg = SentenceDedupConfig {
        max_doc_count: 2,
        min_doc_chars: 0,
        ..SentenceDedupConfig::default()
    };
    let out = dedup_sentences(Corpus::from_documents("news", docs)?, &cfg)?;

    for r in out.report.iter().filter(|r| r.removed) {
        println!("removed {:?} (in {} docs)", r.sentence, r.doc_count);
    }
    for d in out.corpus.docs() {
        println!("{}: {}", d.id, d.text);
    }
    Ok(())
}
