//! Pattern-based PII redaction.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiPattern {
    /// Class name; matches become `⟨LABEL⟩`.
    pub label: String,
    pub pattern: String,
}

impl PiiPattern {
    pub fn new(label: &str, pattern: &str) -> Self {
        PiiPattern {
            label: label.to_string(),
            pattern: pattern.to_string(),
        }
    }

    /// Email, 18-digit national id, IPv4 and international phone numbers,
    /// in match-priority order.
    pub fn builtin() -> Vec<PiiPattern> {
        vec![
            PiiPattern::new("EMAIL", r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"),
            PiiPattern::new("ID", r"\b[0-9]{17}[0-9Xx]\b"),
            PiiPattern::new(
                "IP",
                r"\b(?:(?:25[0-5]|2[0-4][0-9]|1[0-9]{2}|[1-9]?[0-9])\.){3}(?:25[0-5]|2[0-4][0-9]|1[0-9]{2}|[1-9]?[0-9])\b",
            ),
            PiiPattern::new("PHONE", r"\+[0-9]{1,3}(?:[ .-]?[0-9]{2,4}){2,5}"),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PiiRedactor {
    combined: Regex,
    labels: Vec<String>,
}

const MAX_PASSES: usize = 8;

impl PiiRedactor {
    pub fn new(patterns: &[PiiPattern]) -> Result<Self> {
        let mut alternation = Vec::with_capacity(patterns.len());
        for (i, p) in patterns.iter().enumerate() {
            Regex::new(&p.pattern)
                .map_err(|e| Error::InvalidConfig(format!("PII pattern {}: {e}", p.label)))?;
            alternation.push(format!("(?P<p{i}>{})", p.pattern));
        }
        let combined = if alternation.is_empty() {
            // never matches
            Regex::new(r"[^\s\S]").unwrap()
        } else {
            Regex::new(&alternation.join("|")).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        Ok(PiiRedactor {
            combined,
            labels: patterns.iter().map(|p| p.label.clone()).collect(),
        })
    }

    pub fn builtin() -> Self {
        PiiRedactor::new(&PiiPattern::builtin()).expect("built-in patterns compile")
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.combined.is_match(text)
    }

    fn pass(&self, text: &str) -> (String, usize) {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        let mut count = 0;
        for caps in self.combined.captures_iter(text) {
            let m = caps.get(0).unwrap();
            let label = (0..self.labels.len())
                .find(|i| caps.name(&format!("p{i}")).is_some())
                .map(|i| self.labels[i].as_str())
                .unwrap_or("PII");
            out.push_str(&text[last..m.start()]);
            out.push('⟨');
            out.push_str(label);
            out.push('⟩');
            last = m.end();
            count += 1;
        }
        out.push_str(&text[last..]);
        (out, count)
    }

    /// Replaces matches until the text rescans clean; returns the text and
    /// the number of replacements made.
    pub fn redact_text(&self, text: &str) -> (String, usize) {
        let (mut current, mut total) = self.pass(text);
        for _ in 1..MAX_PASSES {
            if total == 0 || !self.combined.is_match(&current) {
                break;
            }
            let (next, n) = self.pass(&current);
            current = next;
            total += n;
        }
        (current, total)
    }
}

/// Redacts `doc`; an unmatched document comes back unchanged.
pub fn redact_pii(doc: &Document, redactor: &PiiRedactor) -> (Document, usize) {
    let (text, count) = redactor.redact_text(&doc.text);
    let mut out = doc.clone();
    if count > 0 {
        out.set_text(text);
    }
    (out, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DomainTag;
    use proptest::prelude::*;

    fn redact(text: &str) -> (String, usize) {
        PiiRedactor::builtin().redact_text(text)
    }

    #[test]
    fn email() {
        let d = Document::new("a", "mail me at a@b.com", DomainTag::WebEn);
        let (out, n) = redact_pii(&d, &PiiRedactor::builtin());
        assert_eq!(out.text, "mail me at ⟨EMAIL⟩");
        assert_eq!(n, 1);
        assert_eq!(out.token_count, crate::count_tokens("mail me at ⟨EMAIL⟩"));
    }

    #[test]
    fn no_matches_is_identity() {
        let d = Document::new("a", "nothing personal here", DomainTag::WebEn);
        let (out, n) = redact_pii(&d, &PiiRedactor::builtin());
        assert_eq!(out, d);
        assert_eq!(n, 0);
    }

    #[test]
    fn each_builtin_class() {
        assert_eq!(redact("id 11010519491231002X ok").0, "id ⟨ID⟩ ok");
        assert_eq!(redact("host 192.168.0.1 down").0, "host ⟨IP⟩ down");
        assert_eq!(redact("call +86 138 0013 8000 now").0, "call ⟨PHONE⟩ now");
        assert_eq!(redact("call +1-212-555-0100.").0, "call ⟨PHONE⟩.");
        assert_eq!(redact("v 999.1.1.1 no").1, 0);
    }

    #[test]
    fn surrounding_bytes_untouched() {
        let text = "前缀 x@y.org, 后缀 and 10.0.0.1!";
        let (out, n) = redact(text);
        assert_eq!(out, "前缀 ⟨EMAIL⟩, 后缀 and ⟨IP⟩!");
        assert_eq!(n, 2);
    }

    #[test]
    fn bad_pattern_rejected() {
        assert!(PiiRedactor::new(&[PiiPattern::new("X", "(")]).is_err());
        let none = PiiRedactor::new(&[]).unwrap();
        assert_eq!(none.redact_text("a@b.com").1, 0);
    }

    proptest! {
        #[test]
        fn redaction_is_a_fixpoint(text in "[a-c0-9@.+ X-]{0,60}") {
            let r = PiiRedactor::builtin();
            let (once, _) = r.redact_text(&text);
            prop_assert!(!r.is_match(&once));
            let (twice, n) = r.redact_text(&once);
            prop_assert_eq!(n, 0);
            prop_assert_eq!(twice, once);
        }
    }
}
