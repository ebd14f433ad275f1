use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::normalize::{is_stopword, normalize, tokens};

/// Synonym list shipped with the crate.
pub const DEFAULT_SYNONYMS: &str = include_str!("../../data/synonyms.txt");

/// Tokens that flip meaning; containment across them is not a match.
const NEGATIONS: &[&str] = &["no", "not", "without", "absent", "negative"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynonymError {
    #[error("line {line}: empty term")]
    EmptyTerm { line: usize },
    #[error("line {line}: `{term}` already belongs to another group")]
    Overlap { line: usize, term: String },
    #[error("{0}")]
    Io(String),
}

/// Groups of terms treated as one concept after normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    groups: Vec<Vec<String>>,
    /// Normalized term tokens to canonical single-token unit.
    terms: BTreeMap<Vec<String>, String>,
    longest: usize,
}

impl SynonymTable {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_SYNONYMS).expect("shipped synonym table is valid")
    }

    /// One group per line, `|`-separated; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self, SynonymError> {
        let mut table = SynonymTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let group: Vec<String> = line.split('|').map(normalize).collect();
            if group.iter().any(String::is_empty) {
                return Err(SynonymError::EmptyTerm { line: i + 1 });
            }
            let canonical = group[0].replace(' ', "_");
            for term in &group {
                let key: Vec<String> = term.split(' ').map(str::to_string).collect();
                match table.terms.get(&key) {
                    Some(c) if *c != canonical => {
                        return Err(SynonymError::Overlap { line: i + 1, term: term.clone() })
                    }
                    _ => {}
                }
                table.longest = table.longest.max(key.len());
                table.terms.insert(key, canonical.clone());
            }
            table.groups.push(group);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, SynonymError> {
        let text = fs::read_to_string(path).map_err(|e| SynonymError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    /// Normalized tokens with every synonym occurrence (greedy, leftmost,
    /// longest) replaced by its group's canonical unit.
    pub fn canonical_tokens(&self, text: &str) -> Vec<String> {
        let toks = tokens(text);
        let mut out = Vec::with_capacity(toks.len());
        let mut i = 0;
        while i < toks.len() {
            let max = self.longest.min(toks.len() - i);
            let hit = (1..=max).rev().find_map(|len| self.terms.get(&toks[i..i + len]).map(|c| (len, c)));
            match hit {
                Some((len, canonical)) => {
                    out.push(canonical.clone());
                    i += len;
                }
                None => {
                    out.push(toks[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("text is empty after normalization")]
    EmptyAfterNormalization,
}

fn content_set(toks: &[String]) -> BTreeSet<&str> {
    let set: BTreeSet<&str> = toks.iter().map(String::as_str).filter(|t| !is_stopword(t)).collect();
    if set.is_empty() {
        toks.iter().map(String::as_str).collect()
    } else {
        set
    }
}

fn negation_differs(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> bool {
    NEGATIONS.iter().any(|n| a.contains(n) != b.contains(n))
}

/// Soft match with the reason for a non-match.
pub fn soft_match_checked(
    prediction: &str,
    gold: &str,
    syn: &SynonymTable,
    threshold: f64,
) -> Result<bool, MatchError> {
    let a = syn.canonical_tokens(prediction);
    let b = syn.canonical_tokens(gold);
    if a.is_empty() || b.is_empty() {
        return Err(MatchError::EmptyAfterNormalization);
    }
    if a == b {
        return Ok(true);
    }
    let (sa, sb) = (content_set(&a), content_set(&b));
    if negation_differs(&sa, &sb) {
        return Ok(false);
    }
    if sa.is_subset(&sb) || sb.is_subset(&sa) {
        return Ok(true);
    }
    let shared = sa.intersection(&sb).count() as f64;
    Ok(shared / sa.len() as f64 >= threshold && shared / sb.len() as f64 >= threshold)
}

/// Equal after synonym canonicalization, token-set containment, or
/// bidirectional overlap at or above `threshold`.
pub fn soft_match(prediction: &str, gold: &str, syn: &SynonymTable, threshold: f64) -> bool {
    soft_match_checked(prediction, gold, syn, threshold).unwrap_or(false)
}

/// Exact, then containment, then token overlap against the longer side.
pub fn diagnosis_match(prediction: &str, gold: &str) -> bool {
    let (a, b) = (normalize(prediction), normalize(gold));
    if a.is_empty() || b.is_empty() {
        return false;
    }
    if a == b {
        return true;
    }
    let ta: Vec<String> = a.split(' ').map(str::to_string).collect();
    let tb: Vec<String> = b.split(' ').map(str::to_string).collect();
    let (sa, sb) = (content_set(&ta), content_set(&tb));
    // "no X" contains "X" but denies it.
    if negation_differs(&sa, &sb) {
        return false;
    }
    let (pa, pb) = (format!(" {a} "), format!(" {b} "));
    if pa.contains(&pb) || pb.contains(&pa) {
        return true;
    }
    let shared = sa.intersection(&sb).count() as f64;
    shared / sa.len().max(sb.len()) as f64 >= 0.8
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    let a = normalize(prediction);
    !a.is_empty() && a == normalize(gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    Exact,
    Soft,
    Diagnosis,
}

impl FromStr for MatcherKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(MatcherKind::Exact),
            "soft" => Ok(MatcherKind::Soft),
            "diagnosis" => Ok(MatcherKind::Diagnosis),
            other => Err(format!("unknown matcher `{other}` (exact, soft, diagnosis)")),
        }
    }
}

/// A matcher with its parameters, cheap to clone across workers.
#[derive(Debug, Clone)]
pub struct Matcher {
    pub kind: MatcherKind,
    pub synonyms: Arc<SynonymTable>,
    pub threshold: f64,
}

impl Matcher {
    pub fn new(kind: MatcherKind) -> Self {
        Matcher { kind, synonyms: Arc::new(SynonymTable::builtin()), threshold: 0.8 }
    }

    pub fn with_synonyms(mut self, synonyms: Arc<SynonymTable>) -> Self {
        self.synonyms = synonyms;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn matches(&self, prediction: &str, gold: &str) -> bool {
        match self.kind {
            MatcherKind::Exact => exact_match(prediction, gold),
            MatcherKind::Soft => soft_match(prediction, gold, &self.synonyms, self.threshold),
            MatcherKind::Diagnosis => diagnosis_match(prediction, gold),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syn() -> SynonymTable {
        SynonymTable::builtin()
    }

    #[test]
    fn soft_examples() {
        assert!(soft_match("PICC line", "peripherally inserted central catheter", &syn(), 0.8));
        assert!(soft_match("yes", "yes", &syn(), 0.8));
        assert!(!soft_match("left pleural effusion", "right pneumothorax", &syn(), 0.8));
        assert!(soft_match("small left pleural effusion", "left pleural effusion", &syn(), 0.8));
        assert!(!soft_match("no pneumothorax", "pneumothorax", &syn(), 0.8));
        assert!(!soft_match("yes", "no", &syn(), 0.8));
        assert_eq!(soft_match_checked("??", "yes", &syn(), 0.8), Err(MatchError::EmptyAfterNormalization));
    }

    #[test]
    fn diagnosis_examples() {
        assert!(diagnosis_match("Tuberculosis", "Pulmonary Tuberculosis"));
        assert!(diagnosis_match("Iron deficiency anemia", "Iron Deficiency Anemia"));
        assert!(!diagnosis_match("tension pneumothorax", "intrapulmonary teratoma"));
        assert!(!diagnosis_match("no pleural effusion", "pleural effusion"));
        assert!(!diagnosis_match("Pneumonia", "not pneumonia"));
        assert!(!diagnosis_match("ulcer", "ulcerative colitis"));
    }

    #[test]
    fn canonical_units_are_leftmost_longest() {
        let t = SynonymTable::parse("a b | x\nb c d | y").unwrap();
        assert_eq!(t.canonical_tokens("a b c d"), ["a_b", "c", "d"]);
        assert_eq!(t.canonical_tokens("z b c d"), ["z", "b_c_d"]);
    }

    #[test]
    fn overlapping_groups_rejected() {
        assert!(matches!(SynonymTable::parse("a | b\nB | c"), Err(SynonymError::Overlap { line: 2, .. })));
        assert!(matches!(SynonymTable::parse("a | ..."), Err(SynonymError::EmptyTerm { line: 1 })));
    }

    proptest! {
        #[test]
        fn soft_match_is_symmetric(a in "[a-e ]{1,12}", b in "[a-e ]{1,12}") {
            let s = syn();
            prop_assert_eq!(soft_match(&a, &b, &s, 0.8), soft_match(&b, &a, &s, 0.8));
            prop_assert_eq!(diagnosis_match(&a, &b), diagnosis_match(&b, &a));
        }
    }
}
