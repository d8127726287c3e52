//! Case-folded, word-bounded phrase matching over transcript text.

use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// NFC-normalizes, lowercases and collapses whitespace runs to one space.
pub fn fold(text: &str) -> Vec<char> {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let mut out = Vec::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Counts non-overlapping occurrences of `term` in `haystack`.
///
/// Matching is case-insensitive after NFC normalization; whitespace inside the
/// term matches any whitespace run. A term edge that is a word character must
/// sit on a word boundary, so `ow` does not match inside `owl` while `ow!`
/// still matches `ow!!`.
pub fn count_phrase(haystack: &str, term: &str) -> usize {
    let needle = fold(term);
    if needle.is_empty() {
        return 0;
    }
    let hay = fold(haystack);
    let check_left = is_word_char(needle[0]);
    let check_right = is_word_char(needle[needle.len() - 1]);
    let mut count = 0;
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        let matched = hay[i..i + needle.len()] == needle[..]
            && !(check_left && i > 0 && is_word_char(hay[i - 1]))
            && !(check_right && i + needle.len() < hay.len() && is_word_char(hay[i + needle.len()]));
        if matched {
            count += 1;
            i += needle.len();
        } else {
            i += 1;
        }
    }
    count
}

/// True when `term` occurs at least once in `haystack` under [`count_phrase`] rules.
pub fn mentions(haystack: &str, term: &str) -> bool {
    count_phrase(haystack, term) > 0
}

/// Lowercased word tokens of at least `min_len` characters.
pub fn content_words(text: &str, min_len: usize) -> Vec<String> {
    let folded: String = fold(text).into_iter().collect();
    folded
        .split(|c: char| !is_word_char(c))
        .filter(|w| w.chars().count() >= min_len)
        .map(String::from)
        .collect()
}
