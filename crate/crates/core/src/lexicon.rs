//! Function/content classification of target tokens.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::corpus::{EOS_TOKEN, SYNTH_ARTICLE, SYNTH_SEPARATOR, SYNTH_TERMINATOR};
use crate::error::CorpusError;

/// The shipped English list, reconstructed from a standard function-word
/// inventory and extended with common punctuation.
pub const DEFAULT_FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    Function,
    Content,
}

impl TokenClass {
    pub fn label(self) -> char {
        match self {
            TokenClass::Function => 'F',
            TokenClass::Content => 'C',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenClass::Function => "function",
            TokenClass::Content => "content",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionWordList {
    words: BTreeSet<String>,
    source: String,
}

impl FunctionWordList {
    /// Parses one token per line; blank lines and lines starting with `#`
    /// are skipped. Entries are lowercased and the EOS marker is always added.
    pub fn parse(text: &str, source: impl Into<String>) -> Result<Self, CorpusError> {
        let source = source.into();
        let mut words = BTreeSet::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // Entries never contain whitespace; keep only the first field.
            if let Some(word) = line.split_whitespace().next() {
                words.insert(word.to_lowercase());
            }
        }
        if words.is_empty() {
            return Err(CorpusError::EmptyFunctionWords(source));
        }
        words.insert(EOS_TOKEN.to_string());
        Ok(Self { words, source })
    }

    pub fn english() -> Self {
        Self::parse(DEFAULT_FUNCTION_WORDS, "builtin:english").expect("shipped list is non-empty")
    }

    /// The target-prefix-predictable tokens of the synthetic copy-map task.
    pub fn synthetic() -> Self {
        let text = alloc::format!("{SYNTH_ARTICLE}\n{SYNTH_SEPARATOR}\n{SYNTH_TERMINATOR}\n");
        Self::parse(&text, "builtin:synthetic").expect("non-empty")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn classify(&self, token: &str) -> TokenClass {
        if token == EOS_TOKEN
            || self.words.contains(token)
            || self.words.contains(&token.to_lowercase())
        {
            TokenClass::Function
        } else {
            TokenClass::Content
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_is_injected() {
        let list = FunctionWordList::parse("the\nof\n", "t").unwrap();
        assert_eq!(list.len(), 3);
        assert!(list.contains(EOS_TOKEN));
    }

    #[test]
    fn duplicates_and_case_fold() {
        let list = FunctionWordList::parse("The\nthe\n# comment\n\nOF\n", "t").unwrap();
        assert_eq!(list.len(), 3);
        assert!(list.contains("the") && list.contains("of"));
    }

    #[test]
    fn empty_list_is_rejected() {
        assert!(matches!(
            FunctionWordList::parse("# nothing\n\n", "t"),
            Err(CorpusError::EmptyFunctionWords(_))
        ));
    }

    #[test]
    fn classify_examples() {
        let list = FunctionWordList::english();
        assert_eq!(list.classify("the"), TokenClass::Function);
        assert_eq!(list.classify("The"), TokenClass::Function);
        assert_eq!(list.classify(EOS_TOKEN), TokenClass::Function);
        assert_eq!(list.classify("world"), TokenClass::Content);
        assert_eq!(list.classify(","), TokenClass::Function);
        assert_eq!(list.classify("?"), TokenClass::Content);
    }

    #[test]
    fn synthetic_list() {
        let list = FunctionWordList::synthetic();
        assert_eq!(list.classify(SYNTH_SEPARATOR), TokenClass::Function);
        assert_eq!(list.classify(SYNTH_TERMINATOR), TokenClass::Function);
        assert_eq!(list.classify("y004"), TokenClass::Content);
    }
}
