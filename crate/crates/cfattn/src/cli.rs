//! Command-line surface.

use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use cfattn_core::analysis::{Outcome, Replayer};
use cfattn_core::corpus::{synth_corpus, tokenize, EOS_TOKEN};
use cfattn_core::intervention::{self, InterventionMethod};
use cfattn_core::seq2seq::greedy_translate;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, TOOL_VERSION};
use crate::config::{CorpusSource, RunConfig};
use crate::error::{exit, Error, Result};
use crate::heatmap::{self, Heatmap, HeatmapPanel};
use crate::io::{self as fileio, write_text};
use crate::pipeline;
use crate::report::{self, ReportDocument};

#[derive(Debug, Parser)]
#[command(
    name = "cfattn",
    version,
    about = "Counterfactual attention analysis for an attentional encoder-decoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus its loss curve.
    Train(TrainArgs),
    /// Translate sentences greedily with a checkpoint.
    Translate(TranslateArgs),
    /// Run every intervention on every output token and write the reports.
    Analyze(AnalyzeArgs),
    /// Draw original vs. intervened attention for one decoding step.
    Heatmap(HeatmapArgs),
    /// Write a synthetic parallel corpus.
    Synth(SynthArgs),
}

/// Settings shared by every subcommand that reads a configuration. Values are
/// applied after the config file, so flags win.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Synthetic corpus settings, e.g. `--synth pairs=500 seed=1`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub synth: Option<Vec<String>>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub embedding: Option<String>,
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub max_len: Option<String>,
    /// Comma-separated methods, or `all`.
    #[arg(long)]
    pub methods: Option<String>,
    /// `literal` or `normalized`.
    #[arg(long)]
    pub keep_max_mode: Option<String>,
    /// Word list path, `builtin:english` or `builtin:synthetic`.
    #[arg(long)]
    pub function_words: Option<String>,
    #[arg(long)]
    pub min_frequency: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

impl ConfigArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, &str)> {
        let flags: [(&'static str, &Option<String>); 16] = [
            ("seed", &self.seed),
            ("source", &self.source),
            ("target", &self.target),
            ("hidden", &self.hidden),
            ("embedding", &self.embedding),
            ("layers", &self.layers),
            ("steps", &self.steps),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("clip", &self.clip),
            ("patience", &self.patience),
            ("max_len", &self.max_len),
            ("methods", &self.methods),
            ("keep_max_mode", &self.keep_max_mode),
            ("function_words", &self.function_words),
            ("min_frequency", &self.min_frequency),
        ];
        let mut out: Vec<(&'static str, &str)> = flags
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect();
        if let Some(dir) = &self.out_dir {
            out.push(("out_dir", dir));
        }
        out
    }

    /// Layers file then flags over `base`.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut config = base;
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        if let Some(synth) = &self.synth {
            config.apply_pairs("synth.", synth)?;
        }
        for (k, v) in self.flag_pairs() {
            config.apply(k, v)?;
        }
        config.apply_pairs("", &self.set)?;
        Ok(config)
    }

    fn overrides_anything(&self) -> bool {
        self.config.is_some()
            || self.synth.is_some()
            || !self.set.is_empty()
            || !self.flag_pairs().is_empty()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    pub checkpoint: PathBuf,
    /// One sentence per line; standard input when omitted.
    pub input: Option<PathBuf>,
    /// Write the full decoding traces as JSON.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    /// Source sentences, one per line. Defaults to the held-out part of the
    /// checkpoint's corpus.
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Accept a configuration whose model settings differ from the checkpoint's.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    pub checkpoint: PathBuf,
    /// Source sentence to translate.
    #[arg(long)]
    pub sentence: String,
    /// Decoding step, counted from 0.
    #[arg(long)]
    pub step: usize,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve(RunConfig::default())?;
    config.validate()?;
    let corpus = pipeline::prepare_corpus(&config)?;
    let trained = pipeline::train_model(&config, &corpus)?;
    let out = Path::new(&config.out_dir);
    let ckpt_path = out.join("model.ckpt");
    let hash = checkpoint::save(&ckpt_path, &trained.model, &config)?;
    let config_hash = config.hash();
    write_text(
        &out.join("curve.tsv"),
        &report::curve_tsv(&trained.report, TOOL_VERSION, &config_hash),
    )?;
    let summary = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "config_hash": config_hash,
        "checkpoint_hash": hash,
        "steps_run": trained.report.steps_run,
        "best_step": trained.report.best_step,
        "stopped_early": trained.report.stopped_early,
        "heldout": trained.report.heldout,
    });
    write_text(
        &out.join("train_summary.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        ),
    )?;
    if let Some(h) = trained.report.heldout {
        log::info!(
            "held-out loss {:.4}, token accuracy {:.4}",
            h.loss,
            h.accuracy
        );
    }
    println!("{}", ckpt_path.display());
    Ok(())
}

fn read_input(input: Option<&Path>) -> Result<Vec<Vec<String>>> {
    match input {
        Some(path) => fileio::load_sentences(path),
        None => {
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Error::io("<stdin>", e))?;
            Ok(text
                .lines()
                .map(tokenize)
                .filter(|t| !t.is_empty())
                .collect())
        }
    }
}

pub fn cmd_translate(args: &TranslateArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let sentences = read_input(args.input.as_deref())?;
    let traces = pipeline::translate_all(&ckpt.model, &sentences, args.jobs)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for t in &traces {
        let words: Vec<&str> = t
            .output_tokens
            .iter()
            .map(String::as_str)
            .filter(|w| *w != EOS_TOKEN)
            .collect();
        writeln!(lock, "{}", words.join(" ")).map_err(|e| Error::io("<stdout>", e))?;
    }
    if let Some(path) = &args.traces {
        let json = serde_json::to_string(&traces).expect("traces serialize");
        write_text(path, &json)?;
    }
    Ok(())
}

/// The configuration an analysis runs under: the checkpoint's, with the
/// caller's overrides. Model settings may only change with `force`.
pub fn analysis_config(saved: &RunConfig, args: &ConfigArgs, force: bool) -> Result<RunConfig> {
    let mut base = saved.clone();
    base.out_dir = RunConfig::default().out_dir;
    let config = args.resolve(base)?;
    if args.overrides_anything() {
        let differing = config.model_differences(saved);
        if !differing.is_empty() {
            if !force {
                return Err(Error::config(
                    differing.join(", "),
                    "differs from the checkpoint's configuration; pass --force to accept",
                ));
            }
            log::warn!(
                "using settings that differ from the checkpoint: {}",
                differing.join(", ")
            );
        }
    }
    Ok(config)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let config = analysis_config(&ckpt.header.config, &args.config, args.force)?;
    let sentences: Vec<Vec<String>> = match &args.corpus {
        Some(path) => fileio::load_sentences(path)?,
        None => pipeline::prepare_corpus(&ckpt.header.config)?
            .heldout
            .into_iter()
            .map(|p| p.source)
            .collect(),
    };
    let lexicon = pipeline::lexicon_for(&config)?;
    let traces = pipeline::translate_all(&ckpt.model, &sentences, args.jobs)?;
    let run = pipeline::analyze(
        &ckpt.model,
        &traces,
        &lexicon,
        &config,
        &ckpt.hash,
        args.jobs,
    )?;
    let doc = ReportDocument::new(run.report, &config);

    let out = Path::new(&config.out_dir);
    write_text(&out.join("report.json"), &doc.to_json())?;
    let text = report::render_text(&doc);
    write_text(&out.join("report.txt"), &text)?;
    write_text(
        &out.join("outcomes.tsv"),
        &report::outcome_dump(&run.outcomes, &doc.report),
    )?;
    print!("{text}");
    Ok(())
}

pub fn cmd_heatmap(args: &HeatmapArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let method: InterventionMethod = args
        .method
        .parse()
        .map_err(|e| Error::config("method", format!("{e}")))?;
    if method == InterventionMethod::Aggregate {
        return Err(Error::config(
            "method",
            "Aggregate combines outcomes and has no single attention vector",
        ));
    }
    let tokens = tokenize(&args.sentence);
    if tokens.is_empty() {
        return Err(Error::Usage("the sentence is empty".into()));
    }
    let trace = greedy_translate(&ckpt.model, &tokens, None)?;
    let Some(step) = trace.steps.get(args.step) else {
        return Err(Error::Usage(format!(
            "step {} is beyond the translation's {} steps",
            args.step,
            trace.steps.len()
        )));
    };
    let config = &ckpt.header.config;
    let seed = intervention::derive_seed(config.seed, 0, args.step, method);
    let alt = intervention::apply(
        method,
        &step.attention,
        &step.scores,
        seed,
        config.keep_max_mode,
    );
    let (alt, note) = match alt {
        Ok(v) => {
            let cf =
                intervention::is_counterfactual(cfattn_core::tensor::argmax(&step.attention), &v);
            (v.into_weights(), if cf { "" } else { ", argmax unchanged" })
        }
        Err(e) => return Err(Error::Usage(format!("{method} at step {}: {e}", args.step))),
    };
    let outcome = Replayer::new(&ckpt.model.params).check_preserved(&trace, args.step, &alt)?;
    let target = trace.output_tokens[args.step].as_str();
    let caption = format!(
        "{target:?} {} under {method}{note}",
        if outcome == Outcome::Preserved {
            "preserved"
        } else {
            "not preserved"
        }
    );
    let right_title = format!("{method}");
    let map = Heatmap {
        source_tokens: &trace.source_tokens,
        target_token: target,
        step: args.step,
        left: HeatmapPanel {
            title: "original",
            weights: &step.attention,
        },
        right: HeatmapPanel {
            title: &right_title,
            weights: &alt,
        },
        caption,
        provenance: format!(
            "{TOOL_VERSION} config {} checkpoint {}",
            config.hash(),
            ckpt.hash
        ),
    };
    write_text(&args.out, &heatmap::render_svg(&map))?;
    print!("{}", heatmap::render_text(&map));
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = args.config.resolve(RunConfig::default())?;
    let CorpusSource::Synth(spec) = config.corpus else {
        return Err(Error::Usage(
            "synth needs a synthetic corpus spec, not source/target files".into(),
        ));
    };
    let corpus = synth_corpus(&spec)?;
    let out = Path::new(&config.out_dir);
    let join = |f: &dyn Fn(usize) -> String| {
        (0..corpus.pairs.len())
            .map(f)
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    };
    write_text(
        &out.join("synth.src"),
        &join(&|i| corpus.pairs[i].source.join(" ")),
    )?;
    write_text(
        &out.join("synth.tgt"),
        &join(&|i| corpus.pairs[i].target.join(" ")),
    )?;
    write_text(
        &out.join("synth.labels"),
        &join(&|i| {
            corpus.labels[i]
                .iter()
                .map(|c| c.label().to_string())
                .collect::<Vec<_>>()
                .join(" ")
        }),
    )?;
    println!("{} pairs in {}", corpus.pairs.len(), out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
        }
    };
    match run(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
