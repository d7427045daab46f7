//! Two-panel SVG line charts of refinement studies.

use std::fmt::Write;

use placeopt_core::approximation::{RefinementRecord, RefinementStudy};
use placeopt_core::Result;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 56.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3e}")
    }
}

/// Data range padded so that a single value still spans a visible band.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn panel(out: &mut String, x0: f64, title: &str, x_label: &str, y_label: &str, series: &[Series]) {
    let (xl, xh) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (yl, yh) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (left, top) = (x0 + MARGIN, 40.0);
    let (w, h) = (PANEL_W - MARGIN - 16.0, PANEL_H - 40.0 - MARGIN);
    let sx = |x: f64| left + (x - xl) / (xh - xl) * w;
    let sy = |y: f64| top + h - (y - yl) / (yh - yl) * h;
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, x0 + PANEL_W / 2.0, escape(title));
    let _ = writeln!(out, r##"<rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##);
    for (v, anchor) in [(xl, "start"), (xh, "end")] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}" font-size="10">{}</text>"#, sx(v), top + h + 14.0, label(v));
    }
    for v in [yl, yh] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#, left - 4.0, sy(v) + 3.0, label(v));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#, left + w / 2.0, top + h + 32.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        x0 + 14.0,
        top + h / 2.0,
        x0 + 14.0,
        top + h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if pts.len() > 1 {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" "));
        }
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(x), sy(y));
        }
        if series.len() > 1 {
            let ly = top + 14.0 + 14.0 * i as f64;
            let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}" font-size="10" fill="{colour}">{}</text>"#, left + 6.0, escape(&s.label));
        }
    }
}

/// Renders a study: optimal cost against the level dimension on the left,
/// coordinates of the optimal location on the right. Failed levels are
/// left out of both panels.
pub fn study_chart(records: &[RefinementRecord], title: &str, cost_label: &str) -> String {
    let ok: Vec<&RefinementRecord> = records.iter().filter(|r| r.cost.is_some() && r.location.is_some()).collect();
    let cost = Series { label: cost_label.into(), points: ok.iter().map(|r| (r.dim as f64, r.cost.unwrap_or_default())).collect() };
    let coords = ok.first().and_then(|r| r.location.as_ref()).map_or(0, Vec::len);
    let location: Vec<Series> = (0..coords)
        .map(|i| Series {
            label: format!("r{i}"),
            points: ok.iter().map(|r| (r.dim as f64, r.location.as_ref().map_or(0.0, |l| l[i]))).collect(),
        })
        .collect();
    let mut out = String::new();
    let width = 2.0 * PANEL_W;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" viewBox="0 0 {width} {}" font-family="sans-serif">"#,
        PANEL_H + 20.0,
        PANEL_H + 20.0
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    panel(&mut out, 0.0, &format!("{title}: minimal cost"), "dimension n", cost_label, std::slice::from_ref(&cost));
    panel(&mut out, PANEL_W, &format!("{title}: optimal location"), "dimension n", "coordinate", &location);
    out.push_str("</svg>\n");
    out
}

/// Reads a refinement CSV and renders it; missing columns are a schema error.
pub fn emit_figure(csv: &str, title: &str, cost_label: &str) -> Result<String> {
    let records = RefinementStudy::records_from_csv(csv)?;
    Ok(study_chart(&records, title, cost_label))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(level: usize, cost: f64, x: f64) -> RefinementRecord {
        RefinementRecord {
            level,
            dim: 50 * (level + 1),
            cost: Some(cost),
            location: Some(vec![x, 2.5, 0.0]),
            evaluated: 25,
            failed: 0,
            ties: 1,
            relative_change: None,
            displacement: None,
            error: None,
        }
    }

    #[test]
    fn single_level_renders_one_point() {
        let svg = study_chart(&[record(0, 0.5, 2.5)], "one", "cost");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("<polyline"));
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn curves_have_one_vertex_per_level() {
        let svg = study_chart(&[record(0, 0.5, 2.5), record(1, 0.6, 3.5), record(2, 0.61, 3.5)], "three", "cost");
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg.matches("<circle").count(), 12);
    }

    #[test]
    fn missing_columns_are_rejected() {
        assert!(emit_figure("level,dim\n0,5\n", "x", "cost").is_err());
    }

    #[test]
    fn output_is_a_pure_function_of_the_input() {
        let rs = [record(0, 0.5, 2.5), record(1, 0.6, 3.5)];
        assert_eq!(study_chart(&rs, "t", "c"), study_chart(&rs, "t", "c"));
        assert!(study_chart(&rs, "a < b", "c").contains("a &lt; b"));
    }
}
