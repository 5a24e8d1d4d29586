//! Metrics reports: a CSV table with per-episode rows followed by an
//! aggregate block per method, plus optional SVG plots.

use super::metrics::{Method, Metrics, MetricsError, Outcome};
use crate::geometry::Vec2;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("empty report: no episodes recorded")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<MetricsError> for ReportError {
    fn from(_: MetricsError) -> Self {
        ReportError::Empty
    }
}

pub const AGGREGATE_HEADER: [&str; 9] = ["method", "episodes", "success", "alpha", "beta", "gamma", "timeout", "collision", "total"];

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// CSV text: episode rows, one blank separator line, then aggregate rows
/// in percent.
pub fn render_csv(metrics: &Metrics) -> Result<String, ReportError> {
    if metrics.episodes.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(["scenario", "test", "episode", "method", "outcome", "ticks", "time_s", "path_length", "vias_passed"])?;
    for e in &metrics.episodes {
        let vias = format!("{}/{}", e.vias_passed.iter().filter(|&&p| p).count(), e.vias_passed.len());
        w.write_record([
            e.scenario.clone(),
            e.test.clone(),
            e.episode.to_string(),
            e.method.label().to_string(),
            e.outcome.label().to_string(),
            e.ticks.to_string(),
            format!("{:.1}", e.time_s),
            format!("{:.3}", e.path_length),
            vias,
        ])?;
    }
    w.write_record([""])?;
    w.write_record(AGGREGATE_HEADER)?;
    for m in metrics.methods() {
        let sub = metrics.for_method(m);
        let r = sub.rates()?;
        let mut row = vec![m.label().to_string(), sub.episodes.len().to_string()];
        row.extend(Outcome::ALL.iter().map(|&o| pct(r.get(o))));
        row.push(pct(r.total()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn bbox(metrics: &Metrics) -> (Vec2, Vec2) {
    let pts = metrics.episodes.iter().flat_map(|e| e.trajectory.iter());
    let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in pts {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if !lo.is_finite() {
        return (Vec2::ZERO, Vec2::new(1.0, 1.0));
    }
    (lo - Vec2::new(0.5, 0.5), hi + Vec2::new(0.5, 0.5))
}

fn outcome_color(o: Outcome) -> &'static str {
    match o {
        Outcome::Success => "#2a9d4a",
        Outcome::Alpha => "#d62828",
        Outcome::Beta => "#f77f00",
        Outcome::Gamma => "#7b2cbf",
        Outcome::Timeout => "#6c757d",
        Outcome::Collision => "#000000",
    }
}

/// One polyline per episode, colored by outcome, in world meters (y up).
pub fn trajectory_svg(metrics: &Metrics) -> String {
    let (lo, hi) = bbox(metrics);
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.3} {h:.3}" width="{:.0}" height="{:.0}">"#,
        w * 60.0,
        h * 60.0
    );
    for e in &metrics.episodes {
        let pts: Vec<String> = e.trajectory.iter().map(|p| format!("{:.3},{:.3}", p.x - lo.x, hi.y - p.y)).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="episode" data-episode="{}" data-method="{}" fill="none" stroke="{}" stroke-width="0.03" points="{}"/>"#,
            e.episode,
            e.method.label(),
            outcome_color(e.outcome),
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Success-rate bars, one per method.
pub fn success_svg(metrics: &Metrics) -> Result<String, ReportError> {
    let methods: Vec<Method> = metrics.methods();
    if methods.is_empty() {
        return Err(ReportError::Empty);
    }
    let (bar, gap, height) = (60.0, 30.0, 200.0);
    let width = methods.len() as f64 * (bar + gap) + gap;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}">"#, height + 40.0);
    for (k, m) in methods.iter().enumerate() {
        let r = metrics.for_method(*m).rates()?.success;
        let x = gap + k as f64 * (bar + gap);
        let bh = r * height;
        let _ = writeln!(s, r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{bh:.1}" fill="#2a9d4a"/>"##, height - bh + 10.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{} {}%</text>"#, x + bar / 2.0, height + 30.0, m.label(), pct(r));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the CSV to `out`; with `plots`, also `<stem>_trajectories.svg`
/// and `<stem>_success.svg` next to it.
pub fn write_report(metrics: &Metrics, out: &Path, plots: bool) -> Result<(), ReportError> {
    std::fs::write(out, render_csv(metrics)?)?;
    if plots {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let dir = out.parent().unwrap_or(Path::new("."));
        std::fs::write(dir.join(format!("{stem}_trajectories.svg")), trajectory_svg(metrics))?;
        std::fs::write(dir.join(format!("{stem}_success.svg")), success_svg(metrics)?)?;
    }
    Ok(())
}

/// Parses the aggregate block of a rendered CSV back into rows of
/// (method, percentages).
pub fn parse_aggregate(csv_text: &str) -> Vec<(String, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut in_block = false;
    for line in csv_text.lines() {
        if line.starts_with("method,episodes") {
            in_block = true;
            continue;
        }
        if in_block && !line.trim().is_empty() {
            let cells: Vec<&str> = line.split(',').collect();
            let vals = cells[2..].iter().filter_map(|c| c.parse().ok()).collect();
            rows.push((cells[0].to_string(), vals));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::super::metrics::record;
    use super::*;

    fn ten_with_one_alpha() -> Metrics {
        let mut m = Metrics::default();
        for k in 0..10 {
            m.push(record(if k == 3 { Outcome::Alpha } else { Outcome::Success }, Method::Fused));
        }
        m
    }

    #[test]
    fn one_alpha_in_ten_is_ten_percent() {
        let csv = render_csv(&ten_with_one_alpha()).unwrap();
        let agg = parse_aggregate(&csv);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].0, "fused");
        assert_eq!(agg[0].1[0], 90.0);
        assert_eq!(agg[0].1[1], 10.0);
        assert_eq!(*agg[0].1.last().unwrap(), 100.0);
    }

    #[test]
    fn trajectory_file_has_one_polyline_per_episode() {
        let svg = trajectory_svg(&ten_with_one_alpha());
        assert_eq!(svg.matches("<polyline").count(), 10);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(render_csv(&Metrics::default()), Err(ReportError::Empty)));
    }
}
