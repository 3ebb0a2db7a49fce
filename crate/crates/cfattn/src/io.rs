//! Reading corpora and word lists from disk.

use std::fs;
use std::path::Path;

use cfattn_core::corpus::{align_lines, tokenize, AlignStats, SentencePair};
use cfattn_core::lexicon::FunctionWordList;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Line-aligned parallel files. Pairs with a side longer than `max_len`
/// tokens are dropped and counted.
pub fn load_parallel(
    source: &Path,
    target: &Path,
    max_len: usize,
) -> Result<(Vec<SentencePair>, AlignStats)> {
    let (src, tgt) = (read_text(source)?, read_text(target)?);
    let (pairs, stats) = align_lines(&src, &tgt, max_len)?;
    if src.trim().is_empty() && tgt.trim().is_empty() {
        log::warn!("{} and {} are empty", source.display(), target.display());
    }
    if stats.dropped_long + stats.dropped_empty > 0 {
        log::info!(
            "kept {} pairs; dropped {} over {max_len} tokens and {} empty",
            stats.kept,
            stats.dropped_long,
            stats.dropped_empty
        );
    }
    Ok((pairs, stats))
}

/// One tokenized sentence per non-empty line.
pub fn load_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read_text(path)?;
    let out: Vec<Vec<String>> = text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect();
    if out.is_empty() {
        log::warn!("{} has no sentences", path.display());
    }
    Ok(out)
}

/// `builtin:english`, `builtin:synthetic`, or a path to a list file.
pub fn load_function_words(spec: &str) -> Result<FunctionWordList> {
    match spec {
        "builtin:english" => Ok(FunctionWordList::english()),
        "builtin:synthetic" => Ok(FunctionWordList::synthetic()),
        path => {
            let text = read_text(Path::new(path))?;
            Ok(FunctionWordList::parse(&text, path)?)
        }
    }
}
