// SPDX-License-Identifier: Apache-2.0

//! Static SVG plots: time series and harmonic spectra.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use scmmi::analysis::{samples_per_period, spectrum_of};
use scmmi::WaveformRecord;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;
const COLUMNS: usize = 800;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MAX_ORDER: usize = 40;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn open_svg(title: &str, frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##, r - l, b - t);
    for k in 0..=4 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 4.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let (x, y) = (frame.px(fx), frame.py(fy));
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{t}" x2="{x:.1}" y2="{b}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r##"<line x1="{l}" y1="{y:.1}" x2="{r}" y2="{y:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#, b + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, tick(fy));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else if a < 1.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.1}")
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * k as f64;
        let x = WIDTH - MARGIN - 110.0;
        let c = COLORS[k % COLORS.len()];
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#, x + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 24.0, y + 4.0, escape(name));
    }
}

/// Min/max envelope per pixel column, so switching edges survive decimation.
fn envelope(samples: &[f64], t0: f64, dt: f64) -> Vec<(f64, f64)> {
    let per_col = samples.len().div_ceil(COLUMNS).max(1);
    let mut pts = Vec::with_capacity(2 * COLUMNS);
    for (c, chunk) in samples.chunks(per_col).enumerate() {
        let t = t0 + (c * per_col) as f64 * dt;
        let (lo, hi) = chunk.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        pts.push((t, lo));
        if hi != lo {
            pts.push((t, hi));
        }
    }
    pts
}

fn time_series(
    rec: &WaveformRecord,
    names: &[&str],
    range: std::ops::Range<usize>,
    title: &str,
    unit: &str,
) -> Option<String> {
    if names.is_empty() || range.is_empty() {
        return None;
    }
    let series: Vec<&[f64]> = names.iter().filter_map(|n| rec.samples(n).ok()).map(|s| &s[range.clone()]).collect();
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let (y0, y1) = padded(lo, hi);
    let frame =
        Frame { x0: rec.time(range.start), x1: rec.time(range.end - 1).max(rec.time(range.start) + 1e-12), y0, y1 };
    let mut s = open_svg(title, &frame, "time (s)", unit);
    for (k, samples) in series.iter().enumerate() {
        let pts: Vec<String> = envelope(samples, frame.x0, rec.sample_period)
            .into_iter()
            .map(|(t, v)| format!("{:.1},{:.1}", frame.px(t), frame.py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            COLORS[k % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, names);
    s.push_str("</svg>\n");
    Some(s)
}

fn spectrum_plot(rec: &WaveformRecord, names: &[&str], f: f64, cycles: usize) -> Result<Option<String>, String> {
    if names.is_empty() {
        return Ok(None);
    }
    let mut spectra = Vec::new();
    for n in names {
        let samples = rec.samples(n).map_err(|e| e.to_string())?;
        let sp = spectrum_of(samples, rec.sample_period, f, cycles).map_err(|e| e.to_string())?;
        let fund = sp.magnitude(1).unwrap_or(0.0);
        if fund <= 1e-12 {
            continue;
        }
        let orders = sp.max_order().min(MAX_ORDER);
        spectra.push((1..=orders).map(|m| 100.0 * sp.magnitude(m).unwrap_or(0.0) / fund).collect::<Vec<_>>());
    }
    if spectra.is_empty() {
        return Ok(None);
    }
    let orders = spectra.iter().map(Vec::len).max().unwrap_or(1);
    // Fundamental is 100 %; scale to the largest harmonic so the rest stays visible.
    let top = spectra.iter().flat_map(|s| s.iter().skip(1)).fold(1.0f64, |a, &b| a.max(b));
    let frame = Frame { x0: 0.5, x1: orders as f64 + 0.5, y0: 0.0, y1: 1.1 * top };
    let mut s = open_svg("harmonic spectrum (fundamental clipped)", &frame, "harmonic order", "% of fundamental");
    let slot = (frame.px(1.5) - frame.px(0.5)) / (spectra.len() as f64 + 1.0);
    for (k, sp) in spectra.iter().enumerate() {
        for (i, &pct) in sp.iter().enumerate() {
            let order = (i + 1) as f64;
            let x = frame.px(order - 0.5) + slot * (k as f64 + 0.5);
            let y = frame.py(pct.min(frame.y1));
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                slot,
                (frame.py(0.0) - y).max(0.0),
                COLORS[k % COLORS.len()]
            );
        }
    }
    legend(&mut s, names);
    s.push_str("</svg>\n");
    Ok(Some(s))
}

/// Writes `phase_voltages.svg`, `capacitor_voltages.svg` and `spectrum.svg`
/// for whichever channel groups the record holds; returns the paths written.
pub fn write_plots(rec: &WaveformRecord, f: f64, cycles: usize, dir: &Path) -> Result<Vec<PathBuf>, String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let phases: Vec<&str> =
        rec.names().filter(|n| n.strip_prefix("V_").is_some_and(|r| r.chars().all(|c| c.is_ascii_digit()))).collect();
    let caps: Vec<&str> = rec.names().filter(|n| n.starts_with("V_C")).collect();
    let per = samples_per_period(rec.sample_period, f).map_err(|e| e.to_string())?;
    let tail = rec.len().saturating_sub(cycles * per)..rec.len();

    let mut written = Vec::new();
    let mut emit = |name: &str, svg: Option<String>| -> Result<(), String> {
        if let Some(svg) = svg {
            let path = dir.join(name);
            fs::write(&path, svg).map_err(|e| format!("{}: {e}", path.display()))?;
            written.push(path);
        }
        Ok(())
    };
    emit("phase_voltages.svg", time_series(rec, &phases, tail, "phase voltages", "V"))?;
    emit("capacitor_voltages.svg", time_series(rec, &caps, 0..rec.len(), "capacitor voltages", "V"))?;
    emit("spectrum.svg", spectrum_plot(rec, &phases, f, cycles)?)?;
    Ok(written)
}
