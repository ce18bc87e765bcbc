//! Minimal static SVG charts: axes, polylines, and bars.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Bars at one x position; `values` align with the chart's series names.
pub struct BarGroup {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

struct Frame {
    out: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
        let (pl, pr, pt, pb) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(out, r#"<line x1="{pl}" y1="{pb}" x2="{pr}" y2="{pb}" stroke="black"/>"#);
        let _ = writeln!(out, r#"<line x1="{pl}" y1="{pt}" x2="{pl}" y2="{pb}" stroke="black"/>"#);
        for i in 0..=4 {
            let v = y0 + (y1 - y0) * i as f64 / 4.0;
            let y = pb - (pb - pt) * i as f64 / 4.0;
            let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{pl}" y2="{y:.2}" stroke="black"/>"#, pl - 4.0);
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, pl - 6.0, y + 4.0, tick(v));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (pl + pr) / 2.0, HEIGHT - 12.0, escape(x_label));
        let _ = writeln!(
            out,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (pt + pb) / 2.0,
            escape(y_label)
        );
        Self { out, x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (WIDTH - RIGHT - LEFT) * (x - self.x0) / (self.x1 - self.x0)
    }

    fn py(&self, y: f64) -> f64 {
        let pb = HEIGHT - BOTTOM;
        pb - (pb - TOP) * (y - self.y0) / (self.y1 - self.y0)
    }

    fn legend(&mut self, names: &[String]) {
        for (i, name) in names.iter().enumerate() {
            let y = TOP + 16.0 * i as f64;
            let x = WIDTH - RIGHT + 12.0;
            let _ = writeln!(self.out, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y, color(i));
            let _ = writeln!(self.out, r#"<text x="{}" y="{}">{}</text>"#, x + 14.0, y + 9.0, escape(name));
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (lo, hi) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut frame = Frame::new(title, x_label, y_label, xs, (lo.min(0.0), hi));
    for i in 0..=4 {
        let v = xs.0 + (xs.1 - xs.0) * i as f64 / 4.0;
        let x = frame.px(v);
        let _ = writeln!(frame.out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - BOTTOM + 16.0, tick(v));
    }
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            frame.out,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            escape(&s.name),
            color(i),
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(frame.out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, color(i));
        }
    }
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    frame.legend(&names);
    frame.finish()
}

/// Grouped bars, or stacked bars when `stacked` is set.
pub fn bar_chart(title: &str, y_label: &str, names: &[String], groups: &[BarGroup], stacked: bool) -> String {
    let hi = if stacked {
        groups.iter().map(|g| g.values.iter().flatten().sum::<f64>()).fold(0.0, f64::max)
    } else {
        groups.iter().flat_map(|g| g.values.iter().flatten().copied()).fold(0.0, f64::max)
    };
    let hi = if hi > 0.0 { hi } else { 1.0 };
    let mut frame = Frame::new(title, "", y_label, (0.0, groups.len().max(1) as f64), (0.0, hi));
    for (gi, group) in groups.iter().enumerate() {
        let left = frame.px(gi as f64 + 0.1);
        let right = frame.px(gi as f64 + 0.9);
        let _ = writeln!(frame.out, r#"<g class="bar-group" data-label="{}">"#, escape(&group.label));
        let slot = if stacked { right - left } else { (right - left) / names.len().max(1) as f64 };
        let mut base = 0.0;
        for (si, v) in group.values.iter().enumerate() {
            let Some(v) = v.filter(|v| v.is_finite()) else { continue };
            let (y_top, y_bottom) = if stacked { (frame.py(base + v), frame.py(base)) } else { (frame.py(v), frame.py(0.0)) };
            let x = if stacked { left } else { left + slot * si as f64 };
            let _ = writeln!(
                frame.out,
                r#"<rect x="{x:.2}" y="{y_top:.2}" width="{slot:.2}" height="{:.2}" fill="{}"/>"#,
                (y_bottom - y_top).max(0.0),
                color(si)
            );
            if stacked {
                base += v;
            }
        }
        let _ = writeln!(
            frame.out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            HEIGHT - BOTTOM + 16.0,
            escape(&group.label)
        );
        frame.out.push_str("</g>\n");
    }
    frame.legend(names);
    frame.finish()
}
