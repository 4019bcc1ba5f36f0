//! Static score-versus-time chart.

use std::fmt::Write as _;

use crate::evaluation::segments;

const WIDTH: f64 = 1000.0;
const PANEL: f64 = 180.0;
const MARGIN: f64 = 40.0;

pub struct PlotData<'a> {
    pub series: Option<&'a [f64]>,
    pub score: &'a [f64],
    pub labels: &'a [u8],
    pub delta: Option<f64>,
}

fn range(v: &[f64], extra: Option<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v.iter().chain(extra.iter()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !(hi > lo) {
        (lo - 0.5, lo + 0.5)
    } else {
        (lo, hi)
    }
}

struct Panel {
    top: f64,
    lo: f64,
    hi: f64,
    len: usize,
}

impl Panel {
    fn x(&self, i: usize) -> f64 {
        MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (self.len.max(2) - 1) as f64
    }

    fn y(&self, v: f64) -> f64 {
        self.top + PANEL - PANEL * (v - self.lo) / (self.hi - self.lo)
    }

    fn polyline(&self, out: &mut String, v: &[f64], color: &str) {
        let pts: Vec<String> = v
            .iter()
            .enumerate()
            .map(|(i, &y)| format!("{:.2},{:.2}", self.x(i), self.y(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            color,
            pts.join(" ")
        );
    }
}

/// Renders the series (if given) above the score trace, with the threshold
/// as a dashed line and true anomaly segments shaded.
pub fn render_svg(p: &PlotData) -> String {
    let n = p.score.len();
    let panels = if p.series.is_some() { 2 } else { 1 };
    let height = MARGIN + panels as f64 * (PANEL + MARGIN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        WIDTH, height, WIDTH, height
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let mut top = MARGIN;
    let mut boxes = Vec::new();
    if let Some(s) = p.series {
        let (lo, hi) = range(s, None);
        boxes.push((Panel { top, lo, hi, len: n }, s, "#1f77b4", "series"));
        top += PANEL + MARGIN;
    }
    let (lo, hi) = range(p.score, p.delta);
    boxes.push((Panel { top, lo, hi, len: n }, p.score, "#d62728", "anomaly score"));

    for (panel, values, color, title) in &boxes {
        for (s, e) in segments(p.labels) {
            let x0 = panel.x(s);
            let x1 = panel.x(e.min(n).saturating_sub(1)).max(x0 + 1.0);
            let _ = writeln!(
                out,
                r##"<rect class="truth" x="{:.2}" y="{:.2}" width="{:.2}" height="{}" fill="#ffbb78" opacity="0.5"/>"##,
                x0,
                panel.top,
                x1 - x0,
                PANEL
            );
        }
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
            MARGIN,
            panel.top,
            WIDTH - 2.0 * MARGIN,
            PANEL
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            MARGIN,
            panel.top - 6.0,
            title
        );
        panel.polyline(&mut out, values, color);
    }
    if let (Some(d), Some((panel, ..))) = (p.delta, boxes.last()) {
        let y = panel.y(d);
        let _ = writeln!(
            out,
            r#"<line class="threshold" data-delta="{}" x1="{}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
            d,
            MARGIN,
            WIDTH - MARGIN,
            y,
            y
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Long-format table: one row per (index, variable).
pub fn tidy_csv(p: &PlotData) -> String {
    let mut out = String::from("index,variable,value\n");
    for i in 0..p.score.len() {
        if let Some(s) = p.series {
            let _ = writeln!(out, "{},series,{}", i, s[i]);
        }
        let _ = writeln!(out, "{},score,{}", i, p.score[i]);
        if let Some(l) = p.labels.get(i) {
            let _ = writeln!(out, "{},label,{}", i, l);
        }
        if let Some(d) = p.delta {
            let _ = writeln!(out, "{},threshold,{}", i, d);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_line_carries_delta() {
        let score = [0.1, 0.5, 0.2];
        let svg = render_svg(&PlotData {
            series: Some(&[1.0, 2.0, 3.0]),
            score: &score,
            labels: &[0, 1, 0],
            delta: Some(0.3),
        });
        assert!(svg.contains(r#"data-delta="0.3""#));
        assert_eq!(svg.matches("class=\"truth\"").count(), 2);
    }

    #[test]
    fn no_labels_no_shading() {
        let svg = render_svg(&PlotData {
            series: None,
            score: &[1.0, 1.0],
            labels: &[],
            delta: None,
        });
        assert!(!svg.contains("truth"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
