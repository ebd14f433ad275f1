use std::fs;
use std::path::Path;

use crate::eval::normalize;

pub const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.txt");

/// Medical terms whose appearance in reasoning must be grounded in the
/// question or an observation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    terms: Vec<String>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }

    pub fn parse(text: &str) -> Self {
        let mut terms: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(normalize)
            .filter(|t| !t.is_empty())
            .collect();
        terms.sort();
        terms.dedup();
        Lexicon { terms }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Terms present in `text`, case-insensitive, on word boundaries.
    pub fn find<'a>(&'a self, text: &str) -> Vec<&'a str> {
        let padded = format!(" {} ", normalize(text));
        self.terms.iter().filter(|t| padded.contains(&format!(" {t} "))).map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_boundaries() {
        let lex = Lexicon::parse("mass\npleural thickening\n# comment\n");
        assert_eq!(lex.find("A MASS-like shadow"), ["mass"]);
        assert!(lex.find("massive").is_empty());
        assert_eq!(lex.find("left Pleural   thickening."), ["pleural thickening"]);
    }
}
