use unicode_normalization::UnicodeNormalization;

/// Dropped by overlap metrics only. Polarity words (yes, no, not) are kept.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "with", "and", "or", "is", "are", "was", "were", "be", "by",
    "as", "from", "that", "this", "it", "its", "there",
];

/// NFC, lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .nfc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes() {
        assert_eq!(normalize("  Chest X-Ray:\tRIGHT  lung. "), "chest x ray right lung");
        assert_eq!(normalize("Cafe\u{301}"), "caf\u{e9}");
        assert_eq!(normalize("?!"), "");
        assert!(tokens("").is_empty());
    }

    #[test]
    fn polarity_words_survive() {
        for w in ["yes", "no", "not"] {
            assert!(!is_stopword(w));
        }
    }
}
