//! Minimal SVG renderings of ROC curves and 2-D projections.

use std::fmt::Write;

use super::projection::EmbeddingProjection;
use super::roc::RocReport;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 40.0;

fn frame(title: &str) -> String {
    let side = SIZE + 2.0 * MARGIN;
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" font-family="sans-serif" font-size="12">"#);
    let _ = write!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = write!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, side / 2.0, escape(title));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One or more ROC curves with the chance diagonal.
pub fn roc_svg(curves: &[(&str, &RocReport)]) -> String {
    let mut s = frame("ROC");
    let (x0, y0) = (MARGIN, MARGIN + SIZE);
    let _ = write!(s, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{MARGIN}" stroke="gray" stroke-dasharray="4"/>"#, MARGIN + SIZE);
    for (i, (name, roc)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = roc.points.iter().map(|(f, t)| format!("{:.2},{:.2}", x0 + f * SIZE, y0 - t * SIZE)).collect();
        let _ = write!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{} (AUC {:.3})</text>"#,
            MARGIN + SIZE - 150.0,
            y0 - 10.0 - 16.0 * i as f64,
            escape(name),
            roc.auc
        );
    }
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#, MARGIN + SIZE / 2.0, y0 + 28.0);
    s.push_str("</svg>\n");
    s
}

/// Scatter of projected points, forged in red and pristine in blue.
pub fn projection_svg(p: &EmbeddingProjection) -> String {
    let mut s = frame("t-SNE projection");
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for &(x, y) in &p.points_2d {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let span = ((hi.0 - lo.0).max(1e-12), (hi.1 - lo.1).max(1e-12));
    for (&(x, y), &forged) in p.points_2d.iter().zip(&p.labels) {
        let cx = MARGIN + 10.0 + (x - lo.0) / span.0 * (SIZE - 20.0);
        let cy = MARGIN + SIZE - 10.0 - (y - lo.1) / span.1 * (SIZE - 20.0);
        let color = if forged { COLORS[1] } else { COLORS[0] };
        let _ = write!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::super::roc::roc_curve;
    use super::*;

    #[test]
    fn roc_svg_is_well_formed() {
        let roc = roc_curve(&[0.9, 0.1, 0.4], &[true, false, true]).unwrap();
        let svg = roc_svg(&[("binary <cnn>", &roc)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("binary &lt;cnn&gt; (AUC 1.000)"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
