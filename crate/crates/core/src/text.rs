//! Tokenization and small text utilities shared by every stage.
//!
//! The tokenizer is deliberately plain: lowercase, split on whitespace, strip
//! leading and trailing punctuation from each piece, drop empties. Every
//! token-level computation in the crate (alignment spans, ROUGE, PII matching,
//! attack alignment) goes through [`tokenize`], so results are reproducible.

/// Characters stripped from token edges.
fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2026}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

fn normalize_piece(piece: &str) -> String {
    piece.to_lowercase().trim_matches(is_punct).to_string()
}

/// Splits `text` into normalized tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_piece)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Space-joined tokenizer output.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Finds the first occurrence of `needle` as a contiguous token run inside
/// `haystack`, returning the start index.
pub fn find_token_run(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// True when the tokens of `phrase` occur contiguously in the tokens of `text`.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    find_token_run(&tokenize(text), &tokenize(phrase)).is_some()
}

/// Cuts `text` after its first `max_tokens` tokens, preserving the original
/// characters of what is kept. Punctuation-only words do not count.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let mut counted = 0usize;
    let mut end = None;
    for (idx, word) in word_spans(text) {
        if !normalize_piece(word).is_empty() {
            counted += 1;
            if counted > max_tokens {
                end = Some(idx);
                break;
            }
        }
    }
    match end {
        Some(idx) => text[..idx].trim_end().to_string(),
        None => text.to_string(),
    }
}

fn word_spans(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest_start = 0usize;
    std::iter::from_fn(move || {
        let rest = &text[rest_start..];
        let skip = rest.len() - rest.trim_start().len();
        let start = rest_start + skip;
        if start >= text.len() {
            return None;
        }
        let tail = &text[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        rest_start = start + len;
        Some((start, &text[start..start + len]))
    })
}

/// Splits running text into sentences on terminal punctuation (`.`, `!`, `?`).
/// Trailing text without a terminator becomes the last sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for (_, word) in word_spans(text) {
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(word);
        let terminal = word
            .trim_end_matches(['"', '\'', ')', '\u{201D}', '\u{2019}'])
            .ends_with(['.', '!', '?']);
        if terminal {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "been", "but", "by", "do", "does",
    "for", "from", "had", "has", "have", "he", "her", "his", "i", "im", "in", "is", "it", "its",
    "me", "my", "myself", "of", "on", "or", "our", "she", "so", "that", "the", "their", "them",
    "they", "this", "to", "was", "we", "were", "with", "you", "your",
];

/// Function words ignored by the content-token checks of the mock backends.
pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens of `text` that are not stopwords, in order.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("I am an Ohio Mon."),
            vec!["i", "am", "an", "ohio", "mon"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("two  amazing   sons"),
            vec!["two", "amazing", "sons"]
        );
    }

    #[test]
    fn punctuation_only_words_vanish() {
        assert_eq!(tokenize("hello . i live"), vec!["hello", "i", "live"]);
        assert_eq!(tokenize("\"quoted,\" (word)"), vec!["quoted", "word"]);
    }

    #[test]
    fn stopwords_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn truncation_keeps_original_characters() {
        assert_eq!(truncate_tokens("One, two . three four", 2), "One, two .");
        assert_eq!(truncate_tokens("a b", 5), "a b");
        assert_eq!(tokenize(&truncate_tokens("a b c d e", 3)).len(), 3);
    }

    #[test]
    fn sentences() {
        assert_eq!(
            split_sentences("hello . i live in an apartment . it is low income ."),
            vec!["hello .", "i live in an apartment .", "it is low income ."]
        );
        assert_eq!(split_sentences("No end"), vec!["No end"]);
        assert_eq!(split_sentences("A b. C d? E"), vec!["A b.", "C d?", "E"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn token_runs() {
        let hay = tokenize("it is a low income residence");
        assert_eq!(find_token_run(&hay, &tokenize("low income")), Some(3));
        assert_eq!(find_token_run(&hay, &tokenize("income low")), None);
        assert!(contains_phrase("I drink Scotch.", "scotch"));
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "[a-zA-Z0-9 .,!?'\"<>\t-]{0,60}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn truncation_bounds(s in "[a-z .,]{0,80}", n in 1usize..10) {
            let cut = truncate_tokens(&s, n);
            let toks = tokenize(&cut);
            prop_assert!(toks.len() <= n);
            let full = tokenize(&s);
            prop_assert_eq!(&full[..toks.len()], &toks[..]);
        }
    }
}
