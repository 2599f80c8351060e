//! Minimal SVG emitters for the correlation map and the probability scan.

use std::fmt::Write as _;

use crate::dataset::CorrelationMatrix;
use crate::designer::ScanReport;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Diverging blue-white-red colour for a value in [-1, 1].
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

pub fn correlation_heatmap(m: &CorrelationMatrix) -> String {
    let n = m.labels.len();
    let cell = 36.0;
    let margin = 170.0;
    let size = margin + n as f64 * cell + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
    );
    for (i, label) in m.labels.iter().enumerate() {
        let y = margin + (i as f64 + 0.6) * cell;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            margin - 6.0,
            escape(label)
        );
        let x = margin + (i as f64 + 0.5) * cell;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="start" transform="rotate(-60 {x} {})">{}</text>"#,
            margin - 6.0,
            margin - 6.0,
            escape(label)
        );
    }
    for (i, row) in m.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let x = margin + j as f64 * cell;
            let y = margin + i as f64 * cell;
            let (fill, text) = match v {
                Some(v) => (diverging(*v), format!("{v:.2}")),
                None => ("rgb(200,200,200)".to_string(), "n/a".to_string()),
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/><text x="{}" y="{}" text-anchor="middle" font-size="9">{text}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 3.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Joint probability against w/c, one line per scan; the argmax of each
/// scan is circled.
pub fn probability_plot(scans: &[&ScanReport]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 160.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    let styles = [("6,4", "square"), ("8,3,2,3", "triangle"), ("2,2", "diamond")];
    let colours = ["#1f77b4", "#d62728", "#2ca02c"];

    let all_wc: Vec<f64> = scans
        .iter()
        .flat_map(|s| s.results.iter().map(|r| r.candidate.wc))
        .collect();
    let lo = all_wc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all_wc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |wc: f64| L + (wc - lo) / span * (W - L - R);
    let py = |p: f64| T + (1.0 - p) * (H - T - B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#,
        H - B,
        W - R,
        H - B,
        H - B
    );
    for k in 0..=5 {
        let p = k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{p:.1}</text>"#,
            L - 6.0,
            py(p) + 4.0
        );
    }
    let mut wcs = all_wc.clone();
    wcs.sort_by(f64::total_cmp);
    wcs.dedup();
    for wc in &wcs {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{wc:.2}</text>"#,
            px(*wc),
            H - B + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">Water/cement ratio</text><text x="18" y="{}" transform="rotate(-90 18 {})" text-anchor="middle">Probability of success</text>"#,
        (L + W - R) / 2.0,
        H - 16.0,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );

    for (s, scan) in scans.iter().enumerate() {
        let (dash, marker) = styles[s % styles.len()];
        let colour = colours[s % colours.len()];
        let points: Vec<String> = scan
            .results
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.candidate.wc), py(r.joint_probability)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-dasharray="{dash}"/>"#,
            points.join(" ")
        );
        for r in &scan.results {
            let (x, y) = (px(r.candidate.wc), py(r.joint_probability));
            let shape = match marker {
                "square" => format!(r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{colour}"/>"#, x - 4.0, y - 4.0),
                "triangle" => format!(
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{colour}"/>"#,
                    x, y - 5.0, x - 5.0, y + 4.0, x + 5.0, y + 4.0
                ),
                _ => format!(
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{colour}"/>"#,
                    x, y - 5.0, x + 5.0, y, x, y + 5.0, x - 5.0, y
                ),
            };
            svg.push_str(&shape);
            svg.push('\n');
        }
        let best = scan.best_result();
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="10" fill="none" stroke="black" stroke-width="1.5"/>"#,
            px(best.candidate.wc),
            py(best.joint_probability)
        );
        let ly = T + 20.0 + s as f64 * 22.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-dasharray="{dash}"/><text x="{}" y="{}">{}</text>"#,
            W - R + 12.0,
            W - R + 42.0,
            W - R + 48.0,
            ly + 4.0,
            escape(&scan.criteria_name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
