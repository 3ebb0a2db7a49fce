//! Tokenization, vocabularies, line-aligned corpora and the synthetic
//! copy-map task used for desk-scale experiments.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::lexicon::TokenClass;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", EOS_TOKEN];
pub const EOS_TOKEN: &str = "<eos>";

const PUNCT: [char; 7] = ['.', ',', '!', '?', '"', ';', ':'];

/// Lowercases, splits on whitespace, and peels leading and trailing
/// punctuation off each chunk as separate tokens.
pub fn tokenize(line: &str) -> Vec<String> {
    let lowered = line.to_lowercase();
    let mut out = Vec::new();
    for chunk in lowered.split_whitespace() {
        let mut rest = chunk;
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next().filter(|c| PUNCT.contains(c)) {
            out.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        while let Some(c) = rest.chars().next_back().filter(|c| PUNCT.contains(c)) {
            trailing.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

impl SentencePair {
    pub fn side(&self, side: Side) -> &[String] {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    max_size: usize,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list, as stored in a
    /// checkpoint. The first four entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>, max_size: usize) -> Result<Self, CorpusError> {
        if max_size < RESERVED.len() + 1 {
            return Err(CorpusError::VocabTooSmall(max_size));
        }
        if tokens.len() > max_size
            || tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t != r)
        {
            return Err(CorpusError::Synth(String::from(
                "token list does not start with the reserved tokens or exceeds max size",
            )));
        }
        let index: BTreeMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(CorpusError::Synth(String::from(
                "duplicate token in vocabulary",
            )));
        }
        Ok(Self {
            tokens,
            index,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map(String::as_str)
            .unwrap_or(RESERVED[UNK])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

/// Ranks tokens on one side of the corpus by frequency (ties broken
/// lexicographically) and keeps as many as fit after the reserved ids.
pub fn build_vocab(
    pairs: &[SentencePair],
    side: Side,
    max_size: usize,
) -> Result<Vocab, CorpusError> {
    if max_size < RESERVED.len() + 1 {
        return Err(CorpusError::VocabTooSmall(max_size));
    }
    if pairs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for pair in pairs {
        for tok in pair.side(side) {
            if !RESERVED.contains(&tok.as_str()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - RESERVED.len())
            .map(|(t, _)| t.to_string()),
    );
    Vocab::from_tokens(tokens, max_size)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignStats {
    pub kept: usize,
    pub dropped_long: usize,
    pub dropped_empty: usize,
}

/// Pairs up two line-aligned texts, dropping pairs where either side is empty
/// after tokenization or longer than `max_len` tokens.
pub fn align_lines(
    source: &str,
    target: &str,
    max_len: usize,
) -> Result<(Vec<SentencePair>, AlignStats), CorpusError> {
    let src: Vec<&str> = source.lines().collect();
    let tgt: Vec<&str> = target.lines().collect();
    if src.len() != tgt.len() {
        return Err(CorpusError::Misaligned {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let mut stats = AlignStats::default();
    let mut pairs = Vec::with_capacity(src.len());
    for (s, t) in src.iter().zip(&tgt) {
        let (source, target) = (tokenize(s), tokenize(t));
        if source.is_empty() || target.is_empty() {
            stats.dropped_empty += 1;
        } else if source.len() > max_len || target.len() > max_len {
            stats.dropped_long += 1;
        } else {
            pairs.push(SentencePair { source, target });
        }
    }
    stats.kept = pairs.len();
    Ok((pairs, stats))
}

pub const SYNTH_ARTICLE: &str = "the";
pub const SYNTH_SEPARATOR: &str = "sep";
pub const SYNTH_TERMINATOR: &str = "▸";
/// Content symbols are numbered with three digits, so at most this many exist.
pub const SYNTH_MAX_VOCAB: usize = 1000;
pub const SYNTH_MIN_WORDS: u32 = 2;
pub const SYNTH_MAX_WORDS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub pairs: usize,
    pub content_vocab: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            pairs: 500,
            content_vocab: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub pairs: Vec<SentencePair>,
    /// One class per target token, aligned with `pairs[i].target`.
    pub labels: Vec<Vec<TokenClass>>,
    /// `lexical_map[w]` is the target symbol index for source symbol `w`.
    pub lexical_map: Vec<usize>,
}

pub fn synth_source_word(i: usize) -> String {
    format!("x{i:03}")
}

pub fn synth_target_word(i: usize) -> String {
    format!("y{i:03}")
}

impl SynthCorpus {
    /// Inverse of the lexical map, recovering a source word from its image.
    pub fn invert(&self, target_word: &str) -> Option<String> {
        let idx: usize = target_word.strip_prefix('y')?.parse().ok()?;
        let w = self.lexical_map.iter().position(|&m| m == idx)?;
        Some(synth_source_word(w))
    }

    pub fn map_word(&self, source_word: &str) -> Option<String> {
        let idx: usize = source_word.strip_prefix('x')?.parse().ok()?;
        self.lexical_map.get(idx).map(|&m| synth_target_word(m))
    }
}

/// Generates the copy-map task: source `w1 … wk ▸`, target
/// `the m(w1) sep m(w2) sep … m(wk) ▸` with `k ∈ [2, 8]` and `m` a seeded
/// bijection. Article, separator and terminator are predictable from the
/// target prefix; the mapped words depend on the source.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus, CorpusError> {
    if spec.pairs == 0 || spec.content_vocab == 0 {
        return Err(CorpusError::Synth(String::from(
            "pair and vocabulary counts must be positive",
        )));
    }
    if spec.content_vocab > SYNTH_MAX_VOCAB {
        return Err(CorpusError::Synth(format!(
            "content vocabulary {} exceeds the {} available symbols",
            spec.content_vocab, SYNTH_MAX_VOCAB
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lexical_map: Vec<usize> = (0..spec.content_vocab).collect();
    lexical_map.shuffle(&mut rng);

    let vocab = spec.content_vocab as u32;
    let mut pairs = Vec::with_capacity(spec.pairs);
    let mut labels = Vec::with_capacity(spec.pairs);
    for _ in 0..spec.pairs {
        let k = rng.gen_range(SYNTH_MIN_WORDS..=SYNTH_MAX_WORDS) as usize;
        let words: Vec<usize> = (0..k).map(|_| rng.gen_range(0..vocab) as usize).collect();

        let mut source: Vec<String> = words.iter().map(|&w| synth_source_word(w)).collect();
        source.push(SYNTH_TERMINATOR.to_string());

        let mut target = Vec::with_capacity(2 * k + 1);
        let mut classes = Vec::with_capacity(2 * k + 1);
        target.push(SYNTH_ARTICLE.to_string());
        classes.push(TokenClass::Function);
        for (j, &w) in words.iter().enumerate() {
            if j > 0 {
                target.push(SYNTH_SEPARATOR.to_string());
                classes.push(TokenClass::Function);
            }
            target.push(synth_target_word(lexical_map[w]));
            classes.push(TokenClass::Content);
        }
        target.push(SYNTH_TERMINATOR.to_string());
        classes.push(TokenClass::Function);

        pairs.push(SentencePair { source, target });
        labels.push(classes);
    }
    Ok(SynthCorpus {
        pairs,
        labels,
        lexical_map,
    })
}
