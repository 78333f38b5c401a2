//! Minimal hand-rolled SVG output for the confusion heatmap and training
//! curves. No styling dependencies, just shapes and text.

use super::ConfusionMatrix;
use std::fmt::Write;

const CELL: f64 = 42.0;
const MARGIN: f64 = 110.0;

/// One named line in a chart.
pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

/// Blue-scale heatmap of the confusion counts with row and column labels
/// and the count printed in each cell.
pub fn confusion_heatmap_svg(m: &ConfusionMatrix, class_names: &[String]) -> String {
    let n = m.classes();
    let size = MARGIN + n as f64 * CELL + 20.0;
    let max = (0..n)
        .flat_map(|t| (0..n).map(move |p| (t, p)))
        .map(|(t, p)| m.count(t, p))
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size:.0}\" height=\"{size:.0}\" \
         font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{size:.0}\" height=\"{size:.0}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\">predicted</text>",
        MARGIN + n as f64 * CELL / 2.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.0})\">true</text>",
        MARGIN + n as f64 * CELL / 2.0,
        MARGIN + n as f64 * CELL / 2.0
    );

    for (i, name) in class_names.iter().enumerate() {
        let x = MARGIN + (i as f64 + 0.5) * CELL;
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"end\" transform=\"rotate(-45 {x:.1} {:.1})\">{}</text>",
            MARGIN - 8.0,
            MARGIN - 8.0,
            escape(name)
        );
        let y = MARGIN + (i as f64 + 0.5) * CELL + 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">{}</text>",
            MARGIN - 8.0,
            escape(name)
        );
    }

    for t in 0..n {
        for p in 0..n {
            let count = m.count(t, p);
            let intensity = count as f64 / max;
            // White to saturated blue.
            let r = (255.0 - 205.0 * intensity).round() as u8;
            let g = (255.0 - 175.0 * intensity).round() as u8;
            let b = (255.0 - 55.0 * intensity).round() as u8;
            let x = MARGIN + p as f64 * CELL;
            let y = MARGIN + t as f64 * CELL;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL}\" height=\"{CELL}\" \
                 fill=\"rgb({r},{g},{b})\" stroke=\"#ccc\"/>"
            );
            let text_fill = if intensity > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{text_fill}\">{count}</text>",
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart over an implicit 1..=n x-axis (epochs). Every series must
/// have the same length.
pub fn line_chart_svg(title: &str, y_label: &str, series: &[Series<'_>]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let finite = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in finite {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }

    let x_of = |i: usize| {
        if n <= 1 {
            PAD + (W - 2.0 * PAD) / 2.0
        } else {
            PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">epoch</text>",
        W / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.0})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", H - PAD + 14.0, lo);
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", PAD, hi);

    for (k, sr) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let points: Vec<String> = sr
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x_of(i), y_of(v)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            W - PAD - 150.0,
            ly - 9.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>",
            W - PAD - 134.0,
            escape(sr.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Pixel size of charts from `line_chart_svg`.
pub const CHART_WIDTH: f64 = 640.0;
pub const CHART_HEIGHT: f64 = 400.0;

/// Stacks complete SVG documents top to bottom into one document.
pub fn stack_svgs_vertically(parts: &[&str], width: f64, part_height: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\">\n",
        part_height * parts.len() as f64
    );
    for (i, part) in parts.iter().enumerate() {
        let _ = write!(s, "<g transform=\"translate(0 {})\">\n{part}</g>\n", part_height * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ConfusionMatrix;

    #[test]
    fn heatmap_contains_one_cell_per_class_pair() {
        let m = ConfusionMatrix::from_pairs(3, &[0, 1, 2, 0], &[0, 1, 1, 2]).unwrap();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let svg = confusion_heatmap_svg(&m, &names);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // One background rect plus nine cells.
        assert_eq!(svg.matches("<rect").count(), 10);
        for n in &names {
            assert!(svg.contains(n.as_str()));
        }
        // The counts appear as cell text.
        assert!(svg.contains(">1</text>"));
        assert!(svg.contains(">0</text>"));
    }

    #[test]
    fn heatmap_is_deterministic() {
        let m = ConfusionMatrix::from_pairs(2, &[0, 1], &[1, 0]).unwrap();
        let names = vec!["x".to_string(), "y".to_string()];
        assert_eq!(confusion_heatmap_svg(&m, &names), confusion_heatmap_svg(&m, &names));
    }

    #[test]
    fn line_chart_draws_each_series_and_scales_to_the_data() {
        let chart = line_chart_svg(
            "loss",
            "value",
            &[
                Series { label: "train", values: &[2.0, 1.0, 0.5] },
                Series { label: "val", values: &[2.2, 1.4, 0.9] },
            ],
        );
        assert!(chart.starts_with("<svg"));
        assert_eq!(chart.matches("<polyline").count(), 2);
        assert!(chart.contains("train"));
        assert!(chart.contains("val"));
        // Axis labels carry the data range.
        assert!(chart.contains("0.500"));
        assert!(chart.contains("2.200"));
    }

    #[test]
    fn line_chart_survives_degenerate_input() {
        let flat = line_chart_svg("acc", "value", &[Series { label: "a", values: &[0.5, 0.5] }]);
        assert!(flat.contains("</svg>"));
        let empty = line_chart_svg("none", "value", &[]);
        assert!(empty.contains("</svg>"));
        let nan = line_chart_svg(
            "nan",
            "value",
            &[Series { label: "a", values: &[f64::NAN, 1.0] }],
        );
        assert!(nan.contains("</svg>"));
    }

    #[test]
    fn stacked_charts_nest_both_documents() {
        let a = line_chart_svg("top", "y", &[Series { label: "s", values: &[1.0, 2.0] }]);
        let b = line_chart_svg("bottom", "y", &[Series { label: "s", values: &[3.0, 1.0] }]);
        let stacked = stack_svgs_vertically(&[&a, &b], CHART_WIDTH, CHART_HEIGHT);
        assert!(stacked.contains("top"));
        assert!(stacked.contains("bottom"));
        assert!(stacked.contains("translate(0 400)"));
        assert_eq!(stacked.matches("<svg").count(), 3);
    }

    #[test]
    fn markup_characters_in_labels_are_escaped() {
        let chart =
            line_chart_svg("a<b", "x&y", &[Series { label: "<s>", values: &[1.0, 2.0] }]);
        assert!(chart.contains("a&lt;b"));
        assert!(chart.contains("x&amp;y"));
        assert!(chart.contains("&lt;s&gt;"));
        assert!(!chart.contains("<s>"));
    }
}
