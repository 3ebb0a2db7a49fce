//! Report emitters: JSON, aligned text tables, the per-token outcome dump and
//! the training curve.

use std::fmt::Write as _;

use cfattn_core::analysis::{
    top_tokens, ClassCounts, PreservationReport, SortOrder, TokenOutcome, TopToken,
};
use cfattn_core::intervention::InterventionMethod;
use cfattn_core::lexicon::TokenClass;
use cfattn_core::seq2seq::TrainReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Bumped whenever a field of [`ReportDocument`] changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTables {
    pub function: Vec<TopToken>,
    pub content: Vec<TopToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTables {
    pub method: InterventionMethod,
    pub by_count: ClassTables,
    /// Only tokens seen more than `min_frequency` times.
    pub by_coverage: ClassTables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub min_frequency: usize,
    pub report: PreservationReport,
    pub tables: Vec<MethodTables>,
    pub config: RunConfig,
}

impl ReportDocument {
    pub fn new(report: PreservationReport, config: &RunConfig) -> Self {
        let min = config.min_frequency;
        let tables = report
            .tallies
            .iter()
            .map(|t| {
                let view = |class, order| top_tokens(&t.tokens, Some(class), order, min, None);
                MethodTables {
                    method: t.method,
                    by_count: ClassTables {
                        function: view(TokenClass::Function, SortOrder::ByCount),
                        content: view(TokenClass::Content, SortOrder::ByCount),
                    },
                    by_coverage: ClassTables {
                        function: view(TokenClass::Function, SortOrder::ByCoverage),
                        content: view(TokenClass::Content, SortOrder::ByCoverage),
                    },
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            min_frequency: min,
            report,
            tables,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn tables(&self, method: InterventionMethod) -> Option<&MethodTables> {
        self.tables.iter().find(|t| t.method == method)
    }
}

fn pct(x: f64) -> String {
    format!("{:.0}%", x * 100.0)
}

fn rule(widths: &[usize]) -> String {
    let mut s = String::from("+");
    for w in widths {
        s.push_str(&"-".repeat(w + 2));
        s.push('+');
    }
    s.push('\n');
    s
}

fn row(cells: &[String], widths: &[usize]) -> String {
    let mut s = String::from("|");
    for (c, w) in cells.iter().zip(widths) {
        let _ = write!(s, " {c:<w$} |");
    }
    s.push('\n');
    s
}

/// An aligned table; `breaks` lists the body rows after which a rule goes.
fn table(title: &str, head: &[&str], body: &[Vec<String>], breaks: &[usize]) -> String {
    let mut widths: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for r in body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = format!("{title}\n");
    out.push_str(&rule(&widths));
    out.push_str(&row(
        &head.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
        &widths,
    ));
    out.push_str(&rule(&widths));
    for (i, r) in body.iter().enumerate() {
        out.push_str(&row(r, &widths));
        if breaks.contains(&(i + 1)) && i + 1 < body.len() {
            out.push_str(&rule(&widths));
        }
    }
    out.push_str(&rule(&widths));
    out.push('\n');
    out
}

fn ncf(c: &ClassCounts) -> String {
    format!("{}/{}", c.not_counterfactualizable, c.total)
}

fn top_rows(rows: &[TopToken], limit: usize, with_preserved: bool) -> Vec<Vec<String>> {
    rows.iter()
        .take(limit)
        .map(|t| {
            let mut r = vec![t.token.clone()];
            if with_preserved {
                r.push(t.preserved.to_string());
            }
            r.push(pct(t.coverage));
            r.push(t.total.to_string());
            r
        })
        .collect()
}

/// Human-readable tables: token statistics, per-method rates, top preserved tokens by count and coverage,
/// and the tokens `LastEncoderState` leaves untouched.
pub fn render_text(doc: &ReportDocument) -> String {
    let r = &doc.report;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {}  config {}  checkpoint {}",
        r.run.tool_version, r.run.config_hash, r.run.checkpoint_hash
    );
    let _ = writeln!(
        out,
        "# sentences {}  seed {}  keep-max mode {:?}  function words {}\n",
        r.run.sentences, r.run.seed, r.run.keep_max_mode, r.run.lexicon
    );

    out.push_str(&table(
        "Table 1. Function and content words in the generated translations",
        &["Statistic", "Value"],
        &[
            vec!["Number of tokens (+EOS)".into(), r.total_tokens.to_string()],
            vec![
                "Percentage of function words".into(),
                pct(r.class_share(TokenClass::Function)),
            ],
            vec![
                "Percentage of content words".into(),
                pct(r.class_share(TokenClass::Content)),
            ],
        ],
        &[1, 2],
    ));

    let body: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|m| {
            let n = InterventionMethod::ALL
                .iter()
                .position(|x| *x == m.method)
                .unwrap_or(0)
                + 1;
            let name = if m.method == InterventionMethod::Aggregate {
                "Aggregate(1+2+3)".to_string()
            } else {
                m.method.to_string()
            };
            vec![
                n.to_string(),
                name,
                pct(m.function.rate),
                pct(m.content.rate),
                ncf(&m.function),
                ncf(&m.content),
            ]
        })
        .collect();
    let breaks: Vec<usize> = r
        .rows
        .iter()
        .enumerate()
        .filter(|(i, m)| {
            let next = r.rows.get(i + 1).map(|n| n.method);
            m.method == InterventionMethod::Aggregate || next == Some(InterventionMethod::Aggregate)
        })
        .map(|(i, _)| i + 1)
        .collect();
    out.push_str(&table(
        "Table 2. Preserved function (FW) and content (CW) words per method",
        &[
            "#",
            "Method",
            "% for FWs",
            "% for CWs",
            "no cf. FW",
            "no cf. CW",
        ],
        &body,
        &breaks,
    ));

    let focus = if doc.tables(InterventionMethod::Aggregate).is_some() {
        InterventionMethod::Aggregate
    } else {
        r.rows
            .first()
            .map(|m| m.method)
            .unwrap_or(InterventionMethod::Aggregate)
    };
    if let Some(t) = doc.tables(focus) {
        let min = doc.min_frequency;
        let head = ["Token", "Preserved", "Coverage", "Total"];
        out.push_str(&table(
            &format!("Table 3. Top 20 content words preserved by {focus}, by count"),
            &head,
            &top_rows(&t.by_count.content, 20, true),
            &[],
        ));
        out.push_str(&table(
            &format!(
                "Table 4. Top 20 content words preserved by {focus}, by coverage (total > {min})"
            ),
            &head,
            &top_rows(&t.by_coverage.content, 20, true),
            &[],
        ));
        out.push_str(&table(
            &format!("Table 5. Top 30 function words preserved by {focus}, by count"),
            &head,
            &top_rows(&t.by_count.function, 30, true),
            &[],
        ));
        out.push_str(&table(
            &format!(
                "Table 6. Top 30 function words preserved by {focus}, by coverage (total > {min})"
            ),
            &head,
            &top_rows(&t.by_coverage.function, 30, true),
            &[],
        ));
    }
    if let Some(t) = doc.tables(InterventionMethod::LastEncoderState) {
        out.push_str(&table(
            &format!(
                "Table 7. Top 10 function words unaffected by LastEncoderState, by coverage (total > {})",
                doc.min_frequency
            ),
            &["Token", "Coverage", "Total"],
            &top_rows(&t.by_coverage.function, 10, false),
            &[],
        ));
    }
    out
}

/// One tab-separated line per output token with each method's result.
pub fn outcome_dump(outcomes: &[TokenOutcome], report: &PreservationReport) -> String {
    let methods: Vec<InterventionMethod> = report.rows.iter().map(|r| r.method).collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {}\tconfig {}\tcheckpoint {}",
        report.run.tool_version, report.run.config_hash, report.run.checkpoint_hash
    );
    out.push_str("sentence\tstep\ttoken\tclass");
    for m in &methods {
        let _ = write!(out, "\t{m}");
    }
    out.push('\n');
    for tok in outcomes {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            tok.sentence,
            tok.step,
            tok.token,
            tok.class.label()
        );
        for m in &methods {
            let cell = tok.result(*m).map_or("-", |r| r.outcome.label());
            let _ = write!(out, "\t{cell}");
        }
        out.push('\n');
    }
    out
}

pub fn curve_tsv(report: &TrainReport, tool_version: &str, config_hash: &str) -> String {
    let mut out = format!("# {tool_version}\tconfig {config_hash}\n");
    let _ = writeln!(
        out,
        "# steps_run {}\tbest_step {}\tstopped_early {}",
        report.steps_run, report.best_step, report.stopped_early
    );
    out.push_str("step\ttrain_loss\theldout_loss\theldout_accuracy\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    for p in &report.curve {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.step,
            p.train_loss,
            opt(p.heldout_loss),
            opt(p.heldout_accuracy)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = table("T", &["a", "bb"], &[vec!["xyz".into(), "1".into()]], &[]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[1], "+-----+----+");
        assert_eq!(lines[2], "| a   | bb |");
        assert_eq!(lines[4], "| xyz | 1  |");
    }
}
