//! Train the hashed n-gram classifier on a handful of seeds, then run the
//! full filter (rules, classifier, language gate, PII redaction).

use corpus_curate::quality::{
    filter_corpus, train_classifier, Decision, LabeledText, PiiPattern, QualityFilter,
    QualityThresholds, RuleConfig, TrainConfig,
};
use corpus_curate::{Corpus, Document, DomainTag};

fn main() -> corpus_curate::Result<()> {
    let clean = [
        "The museum reopened its east wing with a collection of early maps.",
        "Researchers measured rainfall at forty stations across the valley.",
        "The orchestra rehearsed the second movement twice before lunch.",
        "A new footbridge links the park to the railway station.",
    ];
    let spam = [
        "CLICK NOW win free casino money bonus bonus bonus!!!",
        "cheap pills cheap pills buy now limited offer click here",
        "hot singles casino jackpot free spins click click win",
        "buy followers now cheap cheap cheap guaranteed money fast",
    ];
    let mut seeds: Vec<LabeledText> = clean.iter().map(|t| LabeledText::new(*t, 0)).collect();
    seeds.extend(spam.iter().map(|t| LabeledText::new(*t, 1)));

    let cfg = TrainConfig {
        dim: 1 << 14,
        epochs: 200,
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let (model, report) = train_classifier(&seeds, &cfg)?;
    println!(
        "loss {:.3} -> {:.3}",
        report.initial_loss,
        report.final_loss()
    );

    let docs = vec![
        Document::new(
            "ok",
            "The library extended its opening hours during the exam period for students.",
            DomainTag::WebEn,
        ),
        Document::new(
            "spam",
            "free casino bonus click now win money cheap pills buy now",
            DomainTag::WebEn,
        ),
        Document::new(
            "pii",
            "For bookings write to front.desk@example.org before Friday, the hall seats ninety.",
            DomainTag::WebEn,
        ),
    ];
    let filter = QualityFilter::new(
        &RuleConfig::default(),
        &PiiPattern::builtin(),
        QualityThresholds::default(),
    )?;
    let out = filter_corpus(Corpus::from_documents("probe", docs)?, &model, &filter)?;
    for v in &out.verdicts {
        println!(
            "{:5} p_harmful={:.2} hits={:?} -> {:?}",
            v.id, v.p_harmful, v.rule_hits, v.decision
        );
    }
    for d in out.corpus.docs() {
        if out
            .verdicts
            .iter()
            .any(|v| v.id == d.id && v.decision == Decision::Redacted)
        {
            println!("redacted: {}", d.text);
        }
    }
    Ok(())
}
