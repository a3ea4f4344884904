//! Heuristic rule battery. Rule configs are compiled once; a bad regex is a
//! load-time error and scoring itself never fails.

use std::collections::{HashMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::text::{count_tokens, is_cjk};

pub const WORD_COUNT_MIN: &str = "word_count_min";
pub const WORD_COUNT_MAX: &str = "word_count_max";
pub const REPEAT_NGRAM: &str = "repeat_ngram";
pub const URL_BLACKLIST: &str = "url_blacklist";
pub const TEMPLATE: &str = "template";
pub const SPECIAL_CHARS: &str = "special_chars";

pub const RULE_NAMES: [&str; 6] = [
    WORD_COUNT_MIN,
    WORD_COUNT_MAX,
    REPEAT_NGRAM,
    URL_BLACKLIST,
    TEMPLATE,
    SPECIAL_CHARS,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub min_words: u64,
    pub max_words: u64,
    pub repeat_n: usize,
    pub repeat_threshold: f64,
    /// Hosts; a URL matches when its host equals an entry or is a subdomain of one.
    pub url_blacklist: Vec<String>,
    /// Site-template patterns; any match is a hit.
    pub templates: Vec<String>,
    pub special_char_threshold: f64,
    /// Rules reported in verdicts but not causing a drop.
    pub advisory: Vec<String>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            min_words: 10,
            max_words: 1_000_000,
            repeat_n: 10,
            repeat_threshold: 0.3,
            url_blacklist: Vec::new(),
            templates: Vec::new(),
            special_char_threshold: 0.3,
            advisory: Vec::new(),
        }
    }
}

impl RuleConfig {
    pub fn compile(&self) -> Result<Rules> {
        for (name, v) in [
            ("repeat_threshold", self.repeat_threshold),
            ("special_char_threshold", self.special_char_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.repeat_n < 2 {
            return Err(Error::InvalidConfig("repeat_n must be at least 2".into()));
        }
        if self.min_words > self.max_words {
            return Err(Error::InvalidConfig("min_words exceeds max_words".into()));
        }
        for a in &self.advisory {
            if !RULE_NAMES.contains(&a.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown rule {a:?} in advisory list"
                )));
            }
        }
        let templates = self
            .templates
            .iter()
            .map(|p| {
                Regex::new(p)
                    .map_err(|e| Error::InvalidConfig(format!("template pattern {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Rules {
            config: self.clone(),
            templates,
            blacklist: self
                .url_blacklist
                .iter()
                .map(|h| h.trim().to_ascii_lowercase())
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Rules {
    config: RuleConfig,
    templates: Vec<Regex>,
    blacklist: HashSet<String>,
}

impl Rules {
    pub fn config(&self) -> &RuleConfig {
        &self.config
    }

    pub fn is_fatal(&self, rule: &str) -> bool {
        !self.config.advisory.iter().any(|a| a == rule)
    }

    fn host_blacklisted(&self, url: &str) -> bool {
        let Some(host) = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
        else {
            return false;
        };
        let mut h = host.as_str();
        loop {
            if self.blacklist.contains(h) {
                return true;
            }
            match h.split_once('.') {
                Some((_, rest)) => h = rest,
                None => return false,
            }
        }
    }
}

/// Fraction of codepoints covered by an occurrence of some character
/// n-gram that appears more than once in the text.
pub fn repeated_ngram_char_ratio(text: &str, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidConfig(
            "n-gram size must be at least 2".into(),
        ));
    }
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < n {
        return Ok(0.0);
    }
    let mut counts: HashMap<&[char], usize> = HashMap::new();
    for w in chars.windows(n) {
        *counts.entry(w).or_default() += 1;
    }
    let mut covered = vec![false; chars.len()];
    for (i, w) in chars.windows(n).enumerate() {
        if counts[w] > 1 {
            covered[i..i + n].iter_mut().for_each(|c| *c = true);
        }
    }
    Ok(covered.iter().filter(|&&c| c).count() as f64 / chars.len() as f64)
}

/// Share of non-whitespace codepoints that are neither alphanumeric nor CJK.
pub fn special_char_ratio(text: &str) -> f64 {
    let (mut total, mut special) = (0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if !c.is_alphanumeric() && !is_cjk(c) {
            special += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        special as f64 / total as f64
    }
}

/// Names of the rules `doc` trips, in a fixed order.
pub fn apply_rules(doc: &Document, rules: &Rules) -> Vec<String> {
    let cfg = &rules.config;
    let mut hits = Vec::new();
    let words = count_tokens(&doc.text);
    if words < cfg.min_words {
        hits.push(WORD_COUNT_MIN);
    }
    if words > cfg.max_words {
        hits.push(WORD_COUNT_MAX);
    }
    let ratio = repeated_ngram_char_ratio(&doc.text, cfg.repeat_n).unwrap_or(0.0);
    if ratio > cfg.repeat_threshold {
        hits.push(REPEAT_NGRAM);
    }
    if doc
        .source_url
        .as_deref()
        .is_some_and(|u| rules.host_blacklisted(u))
    {
        hits.push(URL_BLACKLIST);
    }
    if rules.templates.iter().any(|r| r.is_match(&doc.text)) {
        hits.push(TEMPLATE);
    }
    if special_char_ratio(&doc.text) > cfg.special_char_threshold {
        hits.push(SPECIAL_CHARS);
    }
    hits.into_iter().map(String::from).collect()
}
