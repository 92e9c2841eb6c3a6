//! Shared text primitives: normalization, tokenization, sentence splitting,
//! stopword lists, and token hashing.
//!
//! Every stage that touches raw text (stub backends, keyword profiles, topic
//! extraction) goes through these functions, so the whole pipeline agrees on
//! what a token and a sentence are.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::Arc;

/// Bundled English stopword list, used by the default pipeline configuration.
pub const BUILTIN_STOPWORDS: &str = include_str!("../assets/stopwords_en.txt");

/// A set of tokens excluded from keyword and embedding vocabularies.
#[derive(Debug, Clone, Default)]
pub struct StopwordList {
    words: BTreeSet<String>,
}

impl StopwordList {
    /// Empty list: no token is a stopword.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(BUILTIN_STOPWORDS)
    }

    /// Parse one token per line; `#` comments and blank lines are skipped.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_lowercase())
            .collect();
        Self { words }
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self {
            words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn into_shared(self) -> Arc<StopwordList> {
        Arc::new(self)
    }
}

/// Lowercase, delete punctuation, split on whitespace.
///
/// A token is a maximal run of alphanumeric characters once every
/// non-alphanumeric, non-whitespace character has been removed.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch.is_whitespace() {
            for lc in ch.to_lowercase() {
                cleaned.push(lc);
            }
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Tokenize and drop stopwords.
pub fn content_tokens(text: &str, stopwords: &StopwordList) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !stopwords.contains(t))
        .collect()
}

/// Token frequency table over one or more texts, stopwords removed.
pub fn token_counts<'a, I>(texts: I, stopwords: &StopwordList) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = BTreeMap::new();
    for text in texts {
        for tok in content_tokens(text, stopwords) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

/// Tokens ranked by descending count, ties broken lexicographically.
pub fn rank_tokens(counts: &BTreeMap<String, u64>) -> Vec<(String, u64)> {
    let mut ranked: Vec<(String, u64)> = counts.iter().map(|(t, c)| (t.clone(), *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Split into sentences on `.`, `!`, `?` followed by whitespace or end of
/// text. The terminator stays with its sentence; surrounding whitespace is
/// trimmed and empty fragments dropped.
pub fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let terminator = matches!(chars[i], '.' | '!' | '?');
        let at_boundary = terminator && chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if at_boundary {
            let sentence: String = chars[start..=i].iter().collect();
            let sentence = sentence.trim();
            if !sentence.is_empty() {
                out.push(sentence.to_owned());
            }
            start = i + 1;
        }
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim();
        if !tail.is_empty() {
            out.push(tail.to_owned());
        }
    }
    out
}

/// First sentence of a text, or the whole trimmed text when it has none.
pub fn first_sentence(text: &str) -> String {
    sentences(text).into_iter().next().unwrap_or_default()
}

/// FNV-1a 64-bit hash over the token's UTF-8 bytes.
pub fn fnv1a_64(token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for byte in token.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Normalized form used for exact-match answer judging: tokens rejoined with
/// single spaces.
pub fn normalize_for_match(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Jaccard similarity of the token sets of two texts.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("Food was GREAT!"), vec!["food", "was", "great"]);
        assert_eq!(tokenize("don't"), vec!["dont"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
    }

    #[test]
    fn sentences_split_on_terminator_before_whitespace_or_end() {
        assert_eq!(
            sentences("Food was great. Staff rude."),
            vec!["Food was great.", "Staff rude."]
        );
        // Terminator mid-token (no following whitespace) is not a boundary.
        assert_eq!(sentences("pi is 3.14 ok"), vec!["pi is 3.14 ok"]);
        assert_eq!(sentences("Wait..."), vec!["Wait..."]);
        assert_eq!(sentences("no terminator"), vec!["no terminator"]);
        assert_eq!(sentences(""), Vec::<String>::new());
    }

    #[test]
    fn rank_tokens_orders_by_count_then_lexicographic() {
        let counts = token_counts(["pizza pizza cold service"], &StopwordList::empty());
        let ranked = rank_tokens(&counts);
        assert_eq!(ranked[0], ("pizza".to_owned(), 2));
        assert_eq!(ranked[1], ("cold".to_owned(), 1));
        assert_eq!(ranked[2], ("service".to_owned(), 1));
    }

    #[test]
    fn stopword_list_filters_content_tokens() {
        let sw = StopwordList::english();
        assert!(sw.contains("the"));
        assert_eq!(
            content_tokens("the pizza was cold", &sw),
            vec!["pizza", "cold"]
        );
        assert!(content_tokens("the and of", &sw).is_empty());
    }

    #[test]
    fn jaccard_handles_edge_cases() {
        assert_eq!(token_jaccard("a b", "a b"), 1.0);
        assert_eq!(token_jaccard("a b", "c d"), 0.0);
        // {a,b} vs {a,b,c,d}: 2/4
        assert_eq!(token_jaccard("a b", "a b c d"), 0.5);
    }
}
