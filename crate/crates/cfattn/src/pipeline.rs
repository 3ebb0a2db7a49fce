//! The steps shared by the subcommands: corpus preparation, training,
//! decoding and analysis.

use std::path::Path;

use cfattn_core::analysis::{
    analyze_trace, assemble_report, AnalysisOptions, Replayer, RunMetadata, TokenOutcome,
};
use cfattn_core::corpus::{build_vocab, synth_corpus, SentencePair, Side};
use cfattn_core::lexicon::FunctionWordList;
use cfattn_core::seq2seq::{
    greedy_translate, train, EncodedPair, Model, ModelDims, ModelParams, TrainReport,
    TranslationTrace,
};
use rayon::prelude::*;

use crate::checkpoint::TOOL_VERSION;
use crate::config::{CorpusSource, RunConfig};
use crate::error::{Error, Result};
use crate::io;

pub struct PreparedCorpus {
    pub train: Vec<SentencePair>,
    pub heldout: Vec<SentencePair>,
}

/// Loads or generates the configured corpus and splits off the trailing
/// held-out fraction.
pub fn prepare_corpus(config: &RunConfig) -> Result<PreparedCorpus> {
    let pairs = match &config.corpus {
        CorpusSource::Synth(spec) => synth_corpus(spec)?.pairs,
        CorpusSource::Files { source, target } => {
            io::load_parallel(Path::new(source), Path::new(target), config.max_len)?.0
        }
    };
    if pairs.is_empty() {
        return Err(Error::Usage(
            "the corpus has no usable sentence pairs".into(),
        ));
    }
    let held = ((pairs.len() as f64) * config.heldout).round() as usize;
    let held = held.min(pairs.len() - 1);
    let split = pairs.len() - held;
    Ok(PreparedCorpus {
        heldout: pairs[split..].to_vec(),
        train: pairs[..split].to_vec(),
    })
}

/// Function-word list named by the config, or the one matching its corpus.
pub fn lexicon_for(config: &RunConfig) -> Result<FunctionWordList> {
    match (&config.function_words, &config.corpus) {
        (Some(spec), _) => io::load_function_words(spec),
        (None, CorpusSource::Synth(_)) => Ok(FunctionWordList::synthetic()),
        (None, CorpusSource::Files { .. }) => Ok(FunctionWordList::english()),
    }
}

pub struct Trained {
    pub model: Model,
    pub report: TrainReport,
}

pub fn train_model(config: &RunConfig, corpus: &PreparedCorpus) -> Result<Trained> {
    config.validate()?;
    let source_vocab = build_vocab(&corpus.train, Side::Source, config.source_vocab)?;
    let target_vocab = build_vocab(&corpus.train, Side::Target, config.target_vocab)?;
    let max_source_len = corpus
        .train
        .iter()
        .chain(&corpus.heldout)
        .map(|p| p.source.len())
        .max()
        .unwrap_or(1)
        .max(config.max_len);
    let dims = ModelDims {
        source_vocab: source_vocab.len(),
        target_vocab: target_vocab.len(),
        embedding: config.embedding,
        hidden: config.hidden,
        layers: config.layers,
        max_source_len,
    };
    let encode = |pairs: &[SentencePair]| -> Vec<EncodedPair> {
        pairs
            .iter()
            .map(|p| EncodedPair::new(p, &source_vocab, &target_vocab))
            .collect()
    };
    let (train_set, heldout_set) = (encode(&corpus.train), encode(&corpus.heldout));
    let mut params = ModelParams::init(dims, config.seed)?;
    log::info!(
        "training on {} pairs ({} held out), {} parameters",
        train_set.len(),
        heldout_set.len(),
        params.store().total_values()
    );
    let report = train(
        &mut params,
        &train_set,
        &heldout_set,
        &config.train_config(),
    )?;
    let model = Model::new(params, source_vocab, target_vocab)?;
    Ok(Trained { model, report })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// Greedy decoding of every sentence, in input order.
pub fn translate_all(
    model: &Model,
    sentences: &[Vec<String>],
    jobs: usize,
) -> Result<Vec<TranslationTrace>> {
    let max = model.params.dims().max_source_len;
    for (i, s) in sentences.iter().enumerate() {
        if s.len() > max {
            return Err(Error::Usage(format!(
                "sentence {i} has {} tokens; the model accepts at most {max}",
                s.len()
            )));
        }
    }
    pool(jobs)?.install(|| {
        sentences
            .par_iter()
            .map(|s| greedy_translate(model, s, None).map_err(Error::from))
            .collect()
    })
}

pub struct AnalysisRun {
    pub outcomes: Vec<TokenOutcome>,
    pub report: cfattn_core::analysis::PreservationReport,
}

/// Per-sentence analysis spread over `jobs` threads, then a single ordered
/// reduction into the report.
pub fn analyze(
    model: &Model,
    traces: &[TranslationTrace],
    lexicon: &FunctionWordList,
    config: &RunConfig,
    checkpoint_hash: &str,
    jobs: usize,
) -> Result<AnalysisRun> {
    if traces.is_empty() {
        return Err(cfattn_core::AnalysisError::NoTraces.into());
    }
    let options = AnalysisOptions {
        methods: config.methods.clone(),
        keep_max_mode: config.keep_max_mode,
        seed: config.seed,
    };
    let replayer = Replayer::new(&model.params);
    let per_sentence: Vec<Vec<TokenOutcome>> = pool(jobs)?.install(|| {
        traces
            .par_iter()
            .enumerate()
            .map(|(i, t)| analyze_trace(&replayer, t, i, lexicon, &options))
            .collect::<Result<_, _>>()
    })?;
    let outcomes: Vec<TokenOutcome> = per_sentence.into_iter().flatten().collect();
    let run = RunMetadata {
        seed: config.seed,
        keep_max_mode: config.keep_max_mode,
        sentences: traces.len(),
        config_hash: config.hash(),
        checkpoint_hash: checkpoint_hash.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        lexicon: lexicon.source().to_string(),
    };
    let report = assemble_report(&outcomes, &options.methods, run);
    Ok(AnalysisRun { outcomes, report })
}
