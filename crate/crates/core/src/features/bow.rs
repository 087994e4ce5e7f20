//! Bag-of-words over target path tokens.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Identifier of the tokenization rule recorded in checkpoints.
pub const TOKEN_RULE: &str = "lower-split-slash-colon-underscore-dot-dash";

/// Lowercase tokens split on `/ : _ . -`, empty tokens dropped.
pub fn tokenize_name(target: &str) -> Vec<String> {
    target
        .split(['/', ':', '_', '.', '-'])
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    rule: String,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Tokens are indexed in lexicographic order, so the result only depends
    /// on the set of tokens in the corpus.
    pub fn fit<'a, I>(names: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let tokens: BTreeSet<String> = names.into_iter().flat_map(tokenize_name).collect();
        Vocabulary {
            rule: TOKEN_RULE.to_string(),
            index: tokens.into_iter().enumerate().map(|(i, t)| (t, i)).collect(),
        }
    }

    pub fn from_tokens<I: IntoIterator<Item = (String, usize)>>(tokens: I) -> Self {
        Vocabulary {
            rule: TOKEN_RULE.to_string(),
            index: tokens.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn rule(&self) -> &str {
        &self.rule
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// Word counts over the vocabulary; out-of-vocabulary tokens are ignored.
pub fn bow_vector(target: &str, vocab: &Vocabulary) -> Vec<f64> {
    let mut counts = vec![0.0; vocab.len()];
    for token in tokenize_name(target) {
        if let Some(i) = vocab.index_of(&token) {
            counts[i] += 1.0;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_target_paths() {
        assert_eq!(
            tokenize_name("//app/componentA/feature1:unit_tests"),
            vec!["app", "componenta", "feature1", "unit", "tests"]
        );
        assert_eq!(tokenize_name("//a:b"), vec!["a", "b"]);
        assert_eq!(tokenize_name("//x//y::z"), vec!["x", "y", "z"]);
        assert_eq!(tokenize_name("//pkg.sub-dir:t"), vec!["pkg", "sub", "dir", "t"]);
    }

    #[test]
    fn counts_in_vocabulary_tokens() {
        let vocab = Vocabulary::from_tokens([("a".into(), 0), ("b".into(), 1), ("c".into(), 2)]);
        assert_eq!(bow_vector("a/a:b", &vocab), vec![2.0, 1.0, 0.0]);
        assert_eq!(bow_vector("//x:y", &vocab), vec![0.0, 0.0, 0.0]);
        assert!(bow_vector("//a:b", &Vocabulary::default()).is_empty());
    }

    #[test]
    fn fit_is_dense_and_order_independent() {
        let a = Vocabulary::fit(["//app/x:unit_tests", "//lib/y:unit_tests"]);
        let b = Vocabulary::fit(["//lib/y:unit_tests", "//app/x:unit_tests"]);
        assert_eq!(a, b);
        let mut idx: Vec<usize> = ["app", "lib", "tests", "unit", "x", "y"]
            .iter()
            .map(|t| a.index_of(t).unwrap())
            .collect();
        idx.sort_unstable();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        assert_eq!(a.len(), 6);
    }
}
