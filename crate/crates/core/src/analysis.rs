//! Per-token preservation under attention interventions and the statistics
//! reported over a corpus of traces.
//!
//! Each check replaces the attention of exactly one decoding step. The step's
//! decoder state `s_t` only depends on `c_{t-1}`, so the stored state is
//! reused as is, a new context is mixed from the stored encoder states, and
//! the output projection is re-applied. The trace is never modified, which
//! keeps every other step at its original values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::intervention::{self, InterventionError, InterventionMethod, KeepMaxMode};
use crate::lexicon::{FunctionWordList, TokenClass};
use crate::seq2seq::{context_from_weights, output_logits, ModelParams, TranslationTrace};
use crate::tensor::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Preserved,
    NotPreserved,
    NotCounterfactualizable,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Preserved => "preserved",
            Outcome::NotPreserved => "changed",
            Outcome::NotCounterfactualizable => "no-counterfactual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: InterventionMethod,
    pub outcome: Outcome,
    /// Whether the replacement vector's argmax differs from `m_t`; absent for
    /// `Aggregate` and when no vector could be built.
    pub counterfactual: Option<bool>,
    /// The replacement attention that was applied.
    pub attention: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenOutcome {
    pub sentence: usize,
    pub step: usize,
    pub token: String,
    pub token_id: usize,
    pub class: TokenClass,
    /// `m_t` of the original attention.
    pub original_argmax: usize,
    pub results: Vec<MethodOutcome>,
}

impl TokenOutcome {
    pub fn result(&self, method: InterventionMethod) -> Option<&MethodOutcome> {
        self.results.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub methods: Vec<InterventionMethod>,
    pub keep_max_mode: KeepMaxMode,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            methods: InterventionMethod::ALL.to_vec(),
            keep_max_mode: KeepMaxMode::default(),
            seed: 1,
        }
    }
}

/// Replays single decoding steps against fixed parameters.
pub struct Replayer<'a> {
    params: &'a ModelParams,
    fingerprint: u64,
}

impl<'a> Replayer<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            fingerprint: params.fingerprint(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    fn check_trace(&self, trace: &TranslationTrace) -> Result<(), AnalysisError> {
        if trace.fingerprint != self.fingerprint {
            return Err(AnalysisError::StaleTrace {
                trace: trace.fingerprint,
                model: self.fingerprint,
            });
        }
        Ok(())
    }

    /// Logits at step `t` with the attention replaced by `weights`.
    pub fn replay_logits(
        &self,
        trace: &TranslationTrace,
        t: usize,
        weights: &[f64],
    ) -> Result<Vec<f64>, AnalysisError> {
        self.check_trace(trace)?;
        let step = trace.steps.get(t).ok_or(AnalysisError::StepOutOfRange {
            step: t,
            len: trace.steps.len(),
        })?;
        if weights.len() != trace.source_len() {
            return Err(AnalysisError::AttentionLength {
                got: weights.len(),
                expected: trace.source_len(),
            });
        }
        let context = context_from_weights(self.params, weights, &trace.encoder_states)?;
        Ok(output_logits(self.params, &step.state, &context)?)
    }

    /// `Preserved` iff the step-`t` argmax under `weights` equals the token the
    /// trace emitted at `t`.
    pub fn check_preserved(
        &self,
        trace: &TranslationTrace,
        t: usize,
        weights: &[f64],
    ) -> Result<Outcome, AnalysisError> {
        let logits = self.replay_logits(trace, t, weights)?;
        Ok(if argmax(&logits) == trace.steps[t].token {
            Outcome::Preserved
        } else {
            Outcome::NotPreserved
        })
    }
}

fn token_label(trace: &TranslationTrace, t: usize) -> String {
    match trace.output_tokens.get(t) {
        Some(tok) => tok.clone(),
        None => format!("#{}", trace.steps[t].token),
    }
}

/// Runs every requested method at every step of one trace (the EOS step
/// included). Requesting `Aggregate` also runs its three components.
pub fn analyze_trace(
    replayer: &Replayer<'_>,
    trace: &TranslationTrace,
    sentence: usize,
    lexicon: &FunctionWordList,
    options: &AnalysisOptions,
) -> Result<Vec<TokenOutcome>, AnalysisError> {
    replayer.check_trace(trace)?;
    let methods = InterventionMethod::expand(&options.methods);
    let mut out = Vec::with_capacity(trace.steps.len());
    for (t, step) in trace.steps.iter().enumerate() {
        let original_argmax = argmax(&step.attention);
        let mut results: Vec<MethodOutcome> = Vec::with_capacity(methods.len());
        for &method in &methods {
            if method == InterventionMethod::Aggregate {
                continue;
            }
            let seed = intervention::derive_seed(options.seed, sentence, t, method);
            let built = intervention::build(
                method,
                &step.attention,
                &step.scores,
                seed,
                options.keep_max_mode,
            );
            let result = match built {
                Ok(b) => MethodOutcome {
                    method,
                    outcome: replayer.check_preserved(trace, t, b.vector.weights())?,
                    counterfactual: Some(b.counterfactual),
                    attention: Some(b.vector.into_weights()),
                },
                Err(InterventionError::NotCounterfactualizable { .. }) => MethodOutcome {
                    method,
                    outcome: Outcome::NotCounterfactualizable,
                    counterfactual: None,
                    attention: None,
                },
                Err(source) => {
                    return Err(AnalysisError::Intervention {
                        sentence,
                        step: t,
                        source,
                    })
                }
            };
            results.push(result);
        }
        if methods.contains(&InterventionMethod::Aggregate) {
            let parts: Vec<Outcome> = results
                .iter()
                .filter(|r| r.method.is_counterfactual_method())
                .map(|r| r.outcome)
                .collect();
            let outcome = if parts.contains(&Outcome::Preserved) {
                Outcome::Preserved
            } else if parts.iter().all(|&o| o == Outcome::NotCounterfactualizable) {
                Outcome::NotCounterfactualizable
            } else {
                Outcome::NotPreserved
            };
            results.push(MethodOutcome {
                method: InterventionMethod::Aggregate,
                outcome,
                counterfactual: None,
                attention: None,
            });
            results.sort_by_key(|r| InterventionMethod::ALL.iter().position(|m| *m == r.method));
        }
        let token = token_label(trace, t);
        out.push(TokenOutcome {
            sentence,
            step: t,
            class: lexicon.classify(&token),
            token,
            token_id: step.token,
            original_argmax,
            results,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub preserved: usize,
    pub not_preserved: usize,
    pub not_counterfactualizable: usize,
    pub total: usize,
    /// `preserved / total`; tokens without a counterfactual stay in the total.
    pub rate: f64,
}

impl ClassCounts {
    fn add(&mut self, outcome: Outcome) {
        self.total += 1;
        match outcome {
            Outcome::Preserved => self.preserved += 1,
            Outcome::NotPreserved => self.not_preserved += 1,
            Outcome::NotCounterfactualizable => self.not_counterfactualizable += 1,
        }
        self.rate = self.preserved as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: InterventionMethod,
    pub function: ClassCounts,
    pub content: ClassCounts,
    /// Tokens whose replacement vector moved the argmax.
    pub counterfactual_vectors: usize,
}

impl MethodRow {
    pub fn class(&self, class: TokenClass) -> &ClassCounts {
        match class {
            TokenClass::Function => &self.function,
            TokenClass::Content => &self.content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTally {
    pub token: String,
    pub class: TokenClass,
    pub preserved: usize,
    pub total: usize,
}

impl TokenTally {
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.preserved as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTallies {
    pub method: InterventionMethod,
    /// Sorted by token.
    pub tokens: Vec<TokenTally>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub keep_max_mode: KeepMaxMode,
    pub sentences: usize,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub tool_version: String,
    pub lexicon: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub total_tokens: usize,
    pub function_tokens: usize,
    pub content_tokens: usize,
    pub rows: Vec<MethodRow>,
    pub tallies: Vec<MethodTallies>,
    pub run: RunMetadata,
}

impl PreservationReport {
    pub fn row(&self, method: InterventionMethod) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn tallies(&self, method: InterventionMethod) -> Option<&[TokenTally]> {
        self.tallies
            .iter()
            .find(|t| t.method == method)
            .map(|t| t.tokens.as_slice())
    }

    pub fn class_share(&self, class: TokenClass) -> f64 {
        let n = match class {
            TokenClass::Function => self.function_tokens,
            TokenClass::Content => self.content_tokens,
        };
        if self.total_tokens == 0 {
            0.0
        } else {
            n as f64 / self.total_tokens as f64
        }
    }
}

/// Reduces per-token outcomes into class rates and per-token tallies. The
/// result does not depend on the order of `outcomes`.
pub fn assemble_report(
    outcomes: &[TokenOutcome],
    methods: &[InterventionMethod],
    run: RunMetadata,
) -> PreservationReport {
    let methods = InterventionMethod::expand(methods);
    let mut rows: Vec<MethodRow> = methods
        .iter()
        .map(|&method| MethodRow {
            method,
            function: ClassCounts::default(),
            content: ClassCounts::default(),
            counterfactual_vectors: 0,
        })
        .collect();
    let mut tallies: Vec<BTreeMap<(String, TokenClass), (usize, usize)>> =
        methods.iter().map(|_| BTreeMap::new()).collect();
    let (mut function_tokens, mut content_tokens) = (0, 0);

    for tok in outcomes {
        match tok.class {
            TokenClass::Function => function_tokens += 1,
            TokenClass::Content => content_tokens += 1,
        }
        for (i, &method) in methods.iter().enumerate() {
            let Some(r) = tok.result(method) else {
                continue;
            };
            let row = &mut rows[i];
            match tok.class {
                TokenClass::Function => row.function.add(r.outcome),
                TokenClass::Content => row.content.add(r.outcome),
            }
            if r.counterfactual == Some(true) {
                row.counterfactual_vectors += 1;
            }
            let entry = tallies[i]
                .entry((tok.token.clone(), tok.class))
                .or_default();
            entry.1 += 1;
            if r.outcome == Outcome::Preserved {
                entry.0 += 1;
            }
        }
    }

    let tallies = methods
        .iter()
        .zip(tallies)
        .map(|(&method, map)| MethodTallies {
            method,
            tokens: map
                .into_iter()
                .map(|((token, class), (preserved, total))| TokenTally {
                    token,
                    class,
                    preserved,
                    total,
                })
                .collect(),
        })
        .collect();

    PreservationReport {
        total_tokens: outcomes.len(),
        function_tokens,
        content_tokens,
        rows,
        tallies,
        run,
    }
}

pub struct Analysis {
    pub outcomes: Vec<TokenOutcome>,
    pub report: PreservationReport,
}

/// Sequential analysis of every trace; see [`analyze_trace`].
pub fn run_analysis(
    params: &ModelParams,
    traces: &[TranslationTrace],
    lexicon: &FunctionWordList,
    options: &AnalysisOptions,
) -> Result<Analysis, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::NoTraces);
    }
    let replayer = Replayer::new(params);
    let mut outcomes = Vec::new();
    for (i, trace) in traces.iter().enumerate() {
        outcomes.extend(analyze_trace(&replayer, trace, i, lexicon, options)?);
    }
    let run = RunMetadata {
        seed: options.seed,
        keep_max_mode: options.keep_max_mode,
        sentences: traces.len(),
        lexicon: String::from(lexicon.source()),
        ..RunMetadata::default()
    };
    let report = assemble_report(&outcomes, &options.methods, run);
    Ok(Analysis { outcomes, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SortOrder {
    ByCount,
    ByCoverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopToken {
    pub token: String,
    pub preserved: usize,
    pub total: usize,
    pub coverage: f64,
}

/// Footnote threshold: the coverage view keeps tokens seen more than this often.
pub const DEFAULT_MIN_FREQUENCY: usize = 20;

/// Per-token preservation table. `ByCount` sorts by preserved count;
/// `ByCoverage` sorts by preserved/total and keeps only tokens with
/// `total > min_frequency`. Ties go to the lexicographically smaller token.
pub fn top_tokens(
    tallies: &[TokenTally],
    class: Option<TokenClass>,
    order: SortOrder,
    min_frequency: usize,
    limit: Option<usize>,
) -> Vec<TopToken> {
    let mut rows: Vec<&TokenTally> = tallies
        .iter()
        .filter(|t| class.is_none_or(|c| t.class == c))
        .filter(|t| order == SortOrder::ByCount || t.total > min_frequency)
        .collect();
    rows.sort_by(|a, b| {
        let primary = match order {
            SortOrder::ByCount => b.preserved.cmp(&a.preserved),
            // Compare preserved/total exactly by cross-multiplying.
            SortOrder::ByCoverage => {
                let lhs = b.preserved as u128 * a.total as u128;
                let rhs = a.preserved as u128 * b.total as u128;
                lhs.cmp(&rhs)
            }
        };
        primary
            .then_with(|| a.token.cmp(&b.token))
            .then_with(|| a.class.cmp(&b.class))
    });
    rows.into_iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|t| TopToken {
            token: t.token.clone(),
            preserved: t.preserved,
            total: t.total,
            coverage: t.coverage(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualViolation {
    pub sentence: usize,
    pub step: usize,
    pub method: InterventionMethod,
}

/// Re-derives `argmax(α′) ≠ m_t` from the stored replacement vectors for
/// every token counted as preserved by a counterfactual method.
pub fn verify_counterfactuality(outcomes: &[TokenOutcome]) -> Vec<CounterfactualViolation> {
    let mut bad = Vec::new();
    for tok in outcomes {
        for r in &tok.results {
            if !r.method.is_counterfactual_method() || r.outcome != Outcome::Preserved {
                continue;
            }
            let moved = r
                .attention
                .as_deref()
                .is_some_and(|w| argmax(w) != tok.original_argmax);
            if !moved {
                bad.push(CounterfactualViolation {
                    sentence: tok.sentence,
                    step: tok.step,
                    method: r.method,
                });
            }
        }
    }
    bad
}

/// Checks that the aggregate outcome of every token is exactly the union of
/// its component outcomes. Returns the offending `(sentence, step)` pairs.
pub fn verify_aggregate_union(outcomes: &[TokenOutcome]) -> Vec<(usize, usize)> {
    outcomes
        .iter()
        .filter_map(|tok| {
            let agg = tok.result(InterventionMethod::Aggregate)?;
            let any = InterventionMethod::COUNTERFACTUAL.iter().any(|&m| {
                tok.result(m)
                    .is_some_and(|r| r.outcome == Outcome::Preserved)
            });
            ((agg.outcome == Outcome::Preserved) != any).then_some((tok.sentence, tok.step))
        })
        .collect()
}

/// Orders outcomes by sentence then step.
pub fn sort_outcomes(outcomes: &mut [TokenOutcome]) {
    outcomes.sort_by(|a, b| match a.sentence.cmp(&b.sentence) {
        Ordering::Equal => a.step.cmp(&b.step),
        o => o,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn tally(token: &str, preserved: usize, total: usize) -> TokenTally {
        TokenTally {
            token: token.to_string(),
            class: TokenClass::Content,
            preserved,
            total,
        }
    }

    #[test]
    fn coverage_matches_going_row() {
        let t = tally("going", 310, 444);
        assert_eq!(libm::round(t.coverage() * 100.0), 70.0);
    }

    #[test]
    fn coverage_threshold_is_strict() {
        let rows = vec![tally("a", 20, 20), tally("b", 15, 21), tally("c", 1, 1)];
        let view = top_tokens(&rows, None, SortOrder::ByCoverage, 20, None);
        assert_eq!(view.len(), 1);
        assert_eq!(view[0].token, "b");
        let by_count = top_tokens(&rows, None, SortOrder::ByCount, 20, None);
        assert_eq!(
            by_count
                .iter()
                .map(|r| r.token.as_str())
                .collect::<Vec<_>>(),
            vec!["a", "b", "c"]
        );
        let all = top_tokens(&[tally("x", 30, 30)], None, SortOrder::ByCoverage, 20, None);
        assert_eq!(all[0].coverage, 1.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        let rows = vec![tally("b", 5, 30), tally("a", 5, 30), tally("c", 10, 60)];
        let by_count = top_tokens(&rows, None, SortOrder::ByCount, 0, None);
        assert_eq!(by_count[0].token, "c");
        assert_eq!(by_count[1].token, "a");
        let by_cov = top_tokens(&rows, None, SortOrder::ByCoverage, 0, None);
        assert_eq!(
            by_cov.iter().map(|r| r.token.as_str()).collect::<Vec<_>>(),
            vec!["a", "b", "c"]
        );
    }

    fn outcome(class: TokenClass, results: &[(InterventionMethod, Outcome)]) -> TokenOutcome {
        TokenOutcome {
            sentence: 0,
            step: 0,
            token: "t".into(),
            token_id: 4,
            class,
            original_argmax: 0,
            results: results
                .iter()
                .map(|&(method, outcome)| MethodOutcome {
                    method,
                    outcome,
                    counterfactual: None,
                    attention: Some(vec![0.0, 1.0]),
                })
                .collect(),
        }
    }

    #[test]
    fn not_counterfactualizable_counts_in_total_only() {
        use InterventionMethod::*;
        let toks = vec![
            outcome(TokenClass::Function, &[(Uniform, Outcome::Preserved)]),
            outcome(
                TokenClass::Function,
                &[(Uniform, Outcome::NotCounterfactualizable)],
            ),
        ];
        let report = assemble_report(&toks, &[Uniform], RunMetadata::default());
        let row = report.row(Uniform).unwrap();
        assert_eq!(row.function.total, 2);
        assert_eq!(row.function.preserved, 1);
        assert_eq!(row.function.not_counterfactualizable, 1);
        assert_eq!(row.function.rate, 0.5);
        assert_eq!(report.class_share(TokenClass::Function), 1.0);
    }

    #[test]
    fn violations_are_detected() {
        use InterventionMethod::*;
        let mut tok = outcome(TokenClass::Content, &[(ZeroOutMax, Outcome::Preserved)]);
        assert!(verify_counterfactuality(&[tok.clone()]).is_empty());
        tok.results[0].attention = Some(vec![1.0, 0.0]);
        assert_eq!(verify_counterfactuality(&[tok]).len(), 1);
    }
}
