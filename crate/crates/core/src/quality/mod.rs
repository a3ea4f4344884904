//! PII and harmful-content filtering: heuristic rules, the hashed n-gram
//! classifier, language-score gating and PII redaction of survivors.

pub mod classifier;
pub mod lang;
pub mod pii;
pub mod rules;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, DomainTag, StageStats};
use crate::error::{Error, Result};

pub use classifier::{
    featurize, iterative_refine, logistic_loss_and_grad, mine_hard_samples, score,
    train_classifier, LabeledText, MiningConfig, QualityModel, TrainConfig, TrainReport,
};
pub use lang::{language_score, LanguageScores};
pub use pii::{redact_pii, PiiPattern, PiiRedactor};
pub use rules::{apply_rules, repeated_ngram_char_ratio, RuleConfig, Rules};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityThresholds {
    /// Drop when p_harmful reaches this value.
    pub p_drop: f64,
    /// Drop when the best language score is below this value.
    pub lang_min: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds {
            p_drop: 0.9,
            lang_min: 0.5,
        }
    }
}

impl QualityThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_drop", self.p_drop), ("lang_min", self.lang_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Drop,
    Redacted,
}

/// Verdict record: `{"id", "rule_hits", "p_harmful", "lang", "decision"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub id: String,
    pub rule_hits: Vec<String>,
    pub p_harmful: f64,
    pub lang: LanguageScores,
    pub decision: Decision,
    /// Domain exempt from rules, classifier and language gating; only
    /// redaction applies.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exempt: bool,
}

/// Everything `filter_corpus` needs besides the model.
#[derive(Debug, Clone)]
pub struct QualityFilter {
    pub rules: Rules,
    pub redactor: PiiRedactor,
    pub thresholds: QualityThresholds,
    pub exempt_domains: Vec<DomainTag>,
}

impl QualityFilter {
    pub fn new(
        rules: &RuleConfig,
        pii: &[PiiPattern],
        thresholds: QualityThresholds,
    ) -> Result<Self> {
        thresholds.validate()?;
        Ok(QualityFilter {
            rules: rules.compile()?,
            redactor: PiiRedactor::new(pii)?,
            thresholds,
            exempt_domains: vec![DomainTag::Code],
        })
    }

    pub fn with_exempt_domains(mut self, domains: Vec<DomainTag>) -> Self {
        self.exempt_domains = domains;
        self
    }

    /// The drop predicate: any fatal rule hit, p_harmful ≥ p_drop, or best
    /// language score < lang_min.
    pub fn should_drop(&self, hits: &[String], p_harmful: f64, lang: &LanguageScores) -> bool {
        hits.iter().any(|h| self.rules.is_fatal(h))
            || p_harmful >= self.thresholds.p_drop
            || lang.max() < self.thresholds.lang_min
    }

    /// Judges one document; survivors come back redacted.
    pub fn judge(
        &self,
        model: &QualityModel,
        doc: &Document,
    ) -> (QualityVerdict, Option<Document>) {
        let exempt = self.exempt_domains.contains(&doc.domain);
        let rule_hits = if exempt {
            Vec::new()
        } else {
            apply_rules(doc, &self.rules)
        };
        let p_harmful = score(model, doc);
        let lang = language_score(&doc.text);
        let mut verdict = QualityVerdict {
            id: doc.id.clone(),
            rule_hits,
            p_harmful,
            lang,
            decision: Decision::Drop,
            exempt,
        };
        if !exempt && self.should_drop(&verdict.rule_hits, p_harmful, &lang) {
            return (verdict, None);
        }
        let (redacted, count) = redact_pii(doc, &self.redactor);
        verdict.decision = if count > 0 {
            Decision::Redacted
        } else {
            Decision::Keep
        };
        (verdict, Some(redacted))
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub corpus: Corpus,
    pub verdicts: Vec<QualityVerdict>,
    pub stats: StageStats,
}

/// Applies [`QualityFilter::judge`] to every document independently.
pub fn filter_corpus(
    corpus: Corpus,
    model: &QualityModel,
    filter: &QualityFilter,
) -> Result<FilterOutput> {
    let judged: Vec<(QualityVerdict, Option<Document>)> = {
        let docs: Vec<&Document> = corpus.docs().collect();
        docs.par_iter().map(|d| filter.judge(model, d)).collect()
    };
    let before = (corpus.len() as u64, corpus.total_tokens());
    let mut verdicts = Vec::with_capacity(judged.len());
    let mut outcomes = Vec::with_capacity(judged.len());
    for (v, d) in judged {
        verdicts.push(v);
        outcomes.push(d);
    }
    let mut it = outcomes.into_iter();
    let out = corpus.filter_map_docs(|_| it.next().flatten());
    let stats = StageStats::new(
        "quality-filter",
        before.0,
        out.len() as u64,
        before.1,
        out.total_tokens(),
    );
    Ok(FilterOutput {
        corpus: out,
        verdicts,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filter() -> QualityFilter {
        QualityFilter::new(
            &RuleConfig::default(),
            &PiiPattern::builtin(),
            QualityThresholds::default(),
        )
        .unwrap()
    }

    const CLEAN: &str = "The library opens at nine and the reading room is quiet in the morning, \
                         which is when most of the students arrive to study.";

    #[test]
    fn clean_document_is_kept_and_redacted() {
        let model = QualityModel::zeros(TrainConfig {
            dim: 1 << 10,
            ..Default::default()
        });
        let doc = Document::new(
            "a",
            format!("{CLEAN} Contact desk@library.org for help."),
            DomainTag::WebEn,
        );
        let out = filter_corpus(
            Corpus::from_documents("s", vec![doc]).unwrap(),
            &model,
            &filter(),
        )
        .unwrap();
        assert_eq!(out.verdicts[0].decision, Decision::Redacted);
        assert!(out
            .corpus
            .docs()
            .next()
            .unwrap()
            .text
            .ends_with("Contact ⟨EMAIL⟩ for help."));
    }

    #[test]
    fn harmful_probability_drops() {
        let f = filter();
        assert!(f.should_drop(&[], 0.99, &LanguageScores { en: 0.9, zh: 0.0 }));
        assert!(!f.should_drop(&[], 0.5, &LanguageScores { en: 0.9, zh: 0.0 }));
        assert!(f.should_drop(&[], 0.5, &LanguageScores { en: 0.4, zh: 0.2 }));
        assert!(f.should_drop(
            &["word_count_min".into()],
            0.1,
            &LanguageScores { en: 0.9, zh: 0.0 }
        ));
    }

    #[test]
    fn advisory_rules_do_not_drop() {
        let rules = RuleConfig {
            advisory: vec!["word_count_min".into()],
            ..Default::default()
        };
        let f = QualityFilter::new(&rules, &[], QualityThresholds::default()).unwrap();
        assert!(!f.should_drop(
            &["word_count_min".into()],
            0.1,
            &LanguageScores { en: 0.9, zh: 0.0 }
        ));
    }

    #[test]
    fn exempt_domain_only_redacted() {
        let model = QualityModel::zeros(TrainConfig {
            dim: 1 << 10,
            ..Default::default()
        });
        let doc = Document::new("c", "x=1 # admin@corp.io", DomainTag::Code);
        let (v, out) = filter().judge(&model, &doc);
        assert!(v.exempt);
        assert_eq!(v.decision, Decision::Redacted);
        assert_eq!(out.unwrap().text, "x=1 # ⟨EMAIL⟩");
    }
}
