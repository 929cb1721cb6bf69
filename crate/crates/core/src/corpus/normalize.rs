//! Body-text normalization and the word-validity predicate.

use std::sync::OnceLock;

use regex::Regex;

use crate::config::ValidityRule;

pub const USERNAME_TOKEN: &str = "@username";

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S+|\b[a-z0-9-]+\.(?:com|net|org|co|io|ly|me)(?:/\S*)?\b").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@[A-Za-z0-9_]+(?:\.[A-Za-z0-9_]+)*").unwrap())
}

pub fn contains_url(text: &str) -> bool {
    url_re().is_match(text)
}

/// Pictographic code points kept as standalone tokens.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F300..=0x1F5FF
        | 0x1F600..=0x1F64F
        | 0x1F680..=0x1F6FF
        | 0x1F900..=0x1F9FF
        | 0x1FA70..=0x1FAFF
        | 0x2600..=0x26FF
        | 0x2700..=0x27BF
        | 0x2B50 | 0x2B55 | 0x203C | 0x2049)
}

/// Variation selectors, joiners and skin-tone modifiers; dropped silently.
fn is_emoji_modifier(c: char) -> bool {
    matches!(c as u32, 0xFE0E | 0xFE0F | 0x200D | 0x1F3FB..=0x1F3FF)
}

const PUNCT: &[char] = &['.', ',', '!', '?'];

/// URLs removed, mentions replaced, lowercased, whitespace-split.
fn prepared_words(body: &str) -> Vec<String> {
    let no_urls = url_re().replace_all(body, " ");
    let no_mentions = mention_re().replace_all(&no_urls, " @USERNAME ");
    no_mentions.to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Tokenizes a post body.
///
/// URLs are removed and `@mentions` become [`USERNAME_TOKEN`]. Text is
/// lowercased. Runs of ASCII letters, digits and `_` form words, a
/// leading `#` keeps a hashtag together, `.,!?` and emoji become tokens of
/// their own, apostrophes are deleted and every other character splits.
pub fn normalize(body: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in prepared_words(body) {
        if word == USERNAME_TOKEN {
            tokens.push(word);
            continue;
        }
        let mut cur = String::new();
        let flush = |cur: &mut String, tokens: &mut Vec<String>| {
            if !cur.is_empty() && cur != "#" {
                tokens.push(std::mem::take(cur));
            }
            cur.clear();
        };
        for c in word.chars() {
            if c.is_ascii_alphanumeric() || c == '_' {
                cur.push(c);
            } else if c == '#' {
                flush(&mut cur, &mut tokens);
                cur.push('#');
            } else if c == '\'' || c == '\u{2019}' || is_emoji_modifier(c) {
            } else if PUNCT.contains(&c) {
                flush(&mut cur, &mut tokens);
                tokens.push(c.to_string());
            } else if is_emoji(c) {
                flush(&mut cur, &mut tokens);
                tokens.push(c.to_string());
            } else {
                flush(&mut cur, &mut tokens);
            }
        }
        flush(&mut cur, &mut tokens);
    }
    tokens
}

/// Canonical `#tag` form of a raw hashtag, or `None` if nothing survives.
pub fn normalize_hashtag(raw: &str) -> Option<String> {
    let tag: String = raw
        .trim()
        .trim_start_matches('#')
        .to_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    (!tag.is_empty()).then(|| format!("#{tag}"))
}

/// Words checked by the language filter: the prepared words with
/// surrounding punctuation trimmed, empty words dropped.
pub fn language_words(body: &str) -> Vec<String> {
    prepared_words(body)
        .into_iter()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation() && c != '#' && c != '@').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn is_valid_word(word: &str, rule: &ValidityRule) -> bool {
    if word == USERNAME_TOKEN {
        return true;
    }
    if word.chars().all(|c| is_emoji(c) || is_emoji_modifier(c)) {
        return true;
    }
    let ascii_word = |w: &str| {
        !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "_'-".contains(c))
    };
    if let Some(tag) = word.strip_prefix('#') {
        return ascii_word(tag);
    }
    match rule {
        ValidityRule::AsciiWords => ascii_word(word),
        ValidityRule::Lexicon(words) => {
            word.chars().all(|c| c.is_ascii_digit()) || words.iter().any(|w| w == word)
        }
    }
}
