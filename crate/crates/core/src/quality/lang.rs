//! Built-in English/Chinese language scorer:
//! `0.7 * script share + 0.3 * stopword hit rate`.

use serde::{Deserialize, Serialize};

use crate::text::{is_cjk, tokens};

const EN_STOPWORDS: [&str; 50] = [
    "the", "of", "and", "to", "a", "in", "is", "it", "that", "for", "was", "on", "are", "as",
    "with", "be", "at", "by", "this", "have", "from", "or", "an", "they", "which", "you", "one",
    "had", "not", "but", "what", "all", "were", "when", "we", "there", "can", "their", "if",
    "will", "each", "about", "how", "up", "out", "them", "then", "she", "he", "has",
];

const ZH_STOPWORDS: [&str; 50] = [
    "的", "了", "是", "在", "和", "有", "我", "他", "她", "它", "这", "那", "不", "也", "就", "都",
    "而", "及", "与", "着", "或", "一", "个", "上", "中", "下", "为", "以", "于", "之", "其", "又",
    "很", "到", "说", "要", "会", "能", "对", "从", "被", "把", "让", "给", "等", "些", "们", "吗",
    "呢", "吧",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageScores {
    pub en: f64,
    pub zh: f64,
}

impl LanguageScores {
    pub fn max(&self) -> f64 {
        self.en.max(self.zh)
    }
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic() || (('\u{C0}'..='\u{24F}').contains(&c) && c.is_alphabetic())
}

/// Script share is taken over non-whitespace codepoints; stopword hit rate
/// over proxy tokens (words and single CJK codepoints). Empty text scores
/// zero for both languages.
pub fn language_score(text: &str) -> LanguageScores {
    let (mut visible, mut latin, mut cjk) = (0usize, 0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        visible += 1;
        if is_latin_letter(c) {
            latin += 1;
        } else if is_cjk(c) {
            cjk += 1;
        }
    }
    if visible == 0 {
        return LanguageScores::default();
    }
    let (mut total, mut en_hits, mut zh_hits) = (0usize, 0usize, 0usize);
    for t in tokens(text) {
        total += 1;
        if ZH_STOPWORDS.contains(&t) {
            zh_hits += 1;
            continue;
        }
        let word = t
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        if EN_STOPWORDS.contains(&word.as_str()) {
            en_hits += 1;
        }
    }
    let rate = |hits: usize| {
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    };
    LanguageScores {
        en: 0.7 * latin as f64 / visible as f64 + 0.3 * rate(en_hits),
        zh: 0.7 * cjk as f64 / visible as f64 + 0.3 * rate(zh_hits),
    }
}
