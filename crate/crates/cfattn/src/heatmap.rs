//! Side-by-side attention heatmaps as SVG, plus a terminal rendering.

use std::fmt::Write as _;

const CELL: usize = 48;
const LABEL_WIDTH: usize = 150;
const PANEL_GAP: usize = 40;
const TOP: usize = 56;

pub struct HeatmapPanel<'a> {
    pub title: &'a str,
    pub weights: &'a [f64],
}

pub struct Heatmap<'a> {
    pub source_tokens: &'a [String],
    pub target_token: &'a str,
    pub step: usize,
    pub left: HeatmapPanel<'a>,
    pub right: HeatmapPanel<'a>,
    /// Free text under the title, such as the preservation outcome.
    pub caption: String,
    /// Written into an XML comment for provenance.
    pub provenance: String,
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Cell opacity is the weight itself, clamped to `[0, 1]`, so a one-hot row
/// has a single saturated cell and a uniform row has equal cells.
fn panel(svg: &mut String, x0: usize, p: &HeatmapPanel<'_>, sources: &[String], target: &str) {
    let _ = writeln!(
        svg,
        r#"  <g class="panel"><text x="{}" y="{}" font-weight="bold">{}</text>"#,
        x0,
        TOP - 14,
        escape(p.title)
    );
    for (i, (&w, tok)) in p.weights.iter().zip(sources).enumerate() {
        let y = TOP + i * CELL;
        let _ = writeln!(
            svg,
            r#"    <text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 + LABEL_WIDTH - 8,
            y + CELL / 2 + 5,
            escape(tok)
        );
        let _ = writeln!(
            svg,
            r##"    <rect class="cell" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#1f4e9c" fill-opacity="{:.6}" stroke="#888" data-weight="{}"/>"##,
            x0 + LABEL_WIDTH,
            y,
            w.clamp(0.0, 1.0),
            w
        );
    }
    let _ = writeln!(
        svg,
        r#"    <text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        x0 + LABEL_WIDTH + CELL / 2,
        TOP + sources.len() * CELL + 20,
        escape(target)
    );
    svg.push_str("  </g>\n");
}

pub fn render_svg(h: &Heatmap<'_>) -> String {
    let m = h.source_tokens.len();
    let panel_width = LABEL_WIDTH + CELL;
    let width = 2 * panel_width + PANEL_GAP + 20;
    let height = TOP + m * CELL + 40;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="14">"#
    );
    let _ = writeln!(
        svg,
        "  <!-- {} -->",
        escape(&h.provenance).replace("--", "- -")
    );
    let _ = writeln!(
        svg,
        r#"  <text x="10" y="18">step {}: {}</text>"#,
        h.step,
        escape(&h.caption)
    );
    panel(&mut svg, 10, &h.left, h.source_tokens, h.target_token);
    panel(
        &mut svg,
        10 + panel_width + PANEL_GAP,
        &h.right,
        h.source_tokens,
        h.target_token,
    );
    svg.push_str("</svg>\n");
    svg
}

const BAR: usize = 20;

fn bar(w: f64) -> String {
    let n = (w.clamp(0.0, 1.0) * BAR as f64).round() as usize;
    format!("{}{}", "#".repeat(n), ".".repeat(BAR - n))
}

/// Two aligned bar columns, one line per source token.
pub fn render_text(h: &Heatmap<'_>) -> String {
    let width = h
        .source_tokens
        .iter()
        .map(|t| t.chars().count())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = format!("step {} -> {:?}: {}\n", h.step, h.target_token, h.caption);
    let _ = writeln!(
        out,
        "{:<width$}  {:<w2$}  {}",
        "source",
        h.left.title,
        h.right.title,
        w2 = BAR + 7
    );
    for ((tok, &a), &b) in h
        .source_tokens
        .iter()
        .zip(h.left.weights)
        .zip(h.right.weights)
    {
        let _ = writeln!(out, "{tok:<width$}  {} {a:.3}  {} {b:.3}", bar(a), bar(b));
    }
    out
}
