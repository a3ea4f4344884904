//! Text primitives shared by every stage: the token-count proxy, script
//! classification and the normalization used for identity keys.

use unicode_normalization::UnicodeNormalization;

/// True for codepoints counted one-per-token: Han ideographs, CJK
/// punctuation, kana, hangul and fullwidth forms.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F
        | 0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

/// Iterator over proxy tokens: every CJK codepoint is a token, and every
/// maximal run of non-CJK, non-whitespace characters is a token.
pub fn tokens(text: &str) -> Tokens<'_> {
    Tokens { text, pos: 0 }
}

pub struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Iterator for Tokens<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let mut start = None;
        for (i, c) in rest.char_indices() {
            match start {
                None if c.is_whitespace() => continue,
                None if is_cjk(c) => {
                    let end = i + c.len_utf8();
                    self.pos += end;
                    return Some(&rest[i..end]);
                }
                None => start = Some(i),
                Some(s) if c.is_whitespace() || is_cjk(c) => {
                    self.pos += i;
                    return Some(&rest[s..i]);
                }
                Some(_) => {}
            }
        }
        self.pos = self.text.len();
        start.map(|s| &rest[s..])
    }
}

/// Deterministic token count: whitespace-delimited non-CJK words plus CJK
/// codepoints.
pub fn count_tokens(text: &str) -> u64 {
    tokens(text).count() as u64
}

/// NFC-normalized, whitespace-trimmed form used for identity keys.
pub fn normalize_key(text: &str) -> String {
    text.trim().nfc().collect()
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}
