//! Learning curves as standalone SVG 1.1 line charts.

use std::fmt::Write;

use ncps_core::trainer::{EvalMode, RunHistory};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn colour(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Single => "#1f77b4",
        EvalMode::Mc => "#ff7f0e",
        EvalMode::Sv => "#2ca02c",
    }
}

/// mIoU (percent) against training step, one polyline per mode. The untrained
/// evaluation is drawn at step 0.
pub fn learning_curve(history: &RunHistory, modes: &[EvalMode]) -> String {
    let steps: Vec<(usize, &_)> =
        std::iter::once((0, &history.initial)).chain(history.records.iter().map(|r| (r.iter, &r.eval))).collect();
    let max_step = steps.last().map_or(0, |s| s.0).max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |step: usize| LEFT + plot_w * step as f64 / max_step;
    let sy = |miou: f64| TOP + plot_h * (1.0 - miou);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick * 25);
    }
    let base = TOP + plot_h;
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{base}" x2="{:.2}" y2="{base}" stroke="black"/>"#, LEFT + plot_w);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    for (label, step) in [("0".to_string(), 0), (format!("{}", max_step as usize), max_step as usize)] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, sx(step), base + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#, LEFT + plot_w / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mIoU (%)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, &mode) in modes.iter().enumerate() {
        let points: Vec<String> =
            steps.iter().map(|(step, e)| format!("{:.2},{:.2}", sx(*step), sy(e.get(mode)))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            colour(mode),
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            colour(mode)
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, mode.name());
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}
