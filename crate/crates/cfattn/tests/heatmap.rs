use cfattn::heatmap::{render_svg, render_text, Heatmap, HeatmapPanel};
use cfattn_core::intervention::{only_max, uniform, AttentionVector};

fn cells(svg: &str) -> Vec<Vec<f64>> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    doc.descendants()
        .filter(|n| n.has_tag_name("g"))
        .map(|g| {
            g.children()
                .filter(|n| n.has_tag_name("rect"))
                .map(|r| r.attribute("fill-opacity").unwrap().parse().unwrap())
                .collect()
        })
        .collect()
}

fn tokens(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn map<'a>(
    src: &'a [String],
    left: &'a [f64],
    right: &'a [f64],
    right_title: &'a str,
) -> Heatmap<'a> {
    Heatmap {
        source_tokens: src,
        target_token: "y<1>",
        step: 2,
        left: HeatmapPanel {
            title: "original",
            weights: left,
        },
        right: HeatmapPanel {
            title: right_title,
            weights: right,
        },
        caption: "\"y<1>\" preserved & more".into(),
        provenance: "run -- with dashes".into(),
    }
}

#[test]
fn only_max_panel_is_one_hot() {
    let src = tokens(4);
    let alpha = [0.1, 0.6, 0.2, 0.1];
    let one_hot = only_max(&AttentionVector::new(alpha.to_vec()).unwrap()).into_weights();
    let svg = render_svg(&map(&src, &alpha, &one_hot, "OnlyMax"));
    let panels = cells(&svg);
    assert_eq!(panels.len(), 2);
    assert_eq!(panels[0], alpha);
    assert_eq!(panels[1], [0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn uniform_panel_has_equal_cells() {
    let src = tokens(5);
    let alpha = [0.05, 0.05, 0.7, 0.1, 0.1];
    let u = uniform(5).into_weights();
    let panels = cells(&render_svg(&map(&src, &alpha, &u, "Uniform")));
    assert!(panels[1].iter().all(|&w| (w - 0.2).abs() < 1e-6));
}

#[test]
fn markup_in_tokens_is_escaped() {
    let src = vec!["<b>".to_string(), "a&b".to_string()];
    let w = [0.5, 0.5];
    let svg = render_svg(&map(&src, &w, &w, "x"));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let texts: Vec<&str> = doc.descendants().filter_map(|n| n.text()).collect();
    assert!(texts.contains(&"<b>"));
    assert!(texts.contains(&"a&b"));
    let comment = doc.descendants().find(|n| n.is_comment()).unwrap();
    assert!(comment.text().unwrap().contains("run"));
}

#[test]
fn text_rendering_has_a_line_per_source_token() {
    let src = tokens(3);
    let (a, b) = ([0.2, 0.3, 0.5], [1.0, 0.0, 0.0]);
    let text = render_text(&map(&src, &a, &b, "OnlyMax"));
    assert_eq!(text.lines().count(), 2 + 3);
    assert!(text.lines().last().unwrap().contains("0.500"));
}
