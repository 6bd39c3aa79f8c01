//! Validation-accuracy line charts as standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::TrainingHistory;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Validation accuracy against epoch, one line per history, with a dashed line at 0.5.
pub fn render_svg(series: &[(&str, &TrainingHistory)]) -> Result<String> {
    let points: Vec<(usize, f64)> = series
        .iter()
        .flat_map(|(_, h)| h.records.iter().map(|r| (r.epoch, r.val_acc)))
        .collect();
    if points.is_empty() {
        return Err(Error::param("nothing to plot: histories are empty"));
    }
    let max_epoch = points.iter().map(|p| p.0).max().unwrap().max(2) as f64;
    let lo = points.iter().map(|p| p.1).fold(0.4, f64::min).max(0.0);
    let hi = points.iter().map(|p| p.1).fold(1.0, f64::max).min(1.0);
    let (y_lo, y_hi) = ((lo * 10.0).floor() / 10.0, (hi * 10.0).ceil() / 10.0);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |e: f64| LEFT + (e - 1.0) / (max_epoch - 1.0) * pw;
    let y = |a: f64| TOP + (y_hi - a) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut t = y_lo;
    while t <= y_hi + 1e-9 {
        let yy = y(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t:.1}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            yy + 4.0
        );
        t += 0.1;
    }
    let step = ((max_epoch / 6.0).ceil() as usize).max(1);
    let mut e = 1;
    while e as f64 <= max_epoch {
        let xx = x(e as f64);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
            TOP + ph + 16.0
        );
        e += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">validation accuracy</text>"#,
        TOP + ph / 2.0
    );
    let half = y(0.5);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{half:.2}" x2="{:.2}" y2="{half:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
        LEFT + pw
    );

    for (i, (label, h)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = h
            .records
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.epoch as f64), y(r.val_acc)))
            .collect();
        if pts.len() == 1 {
            let r = &h.records[0];
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                x(r.epoch as f64),
                y(r.val_acc)
            );
        } else if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(series: &[(&str, &TrainingHistory)], path: &Path) -> Result<()> {
    let svg = render_svg(series)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
