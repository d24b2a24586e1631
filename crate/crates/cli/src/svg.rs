//! Minimal standalone SVG 1.1 plots: the TOC curve with 95% bars and the
//! outcome histogram split by event status.

use std::fmt::Write as _;

use csf_core::inference::TocBar;
use csf_core::Histogram;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Frame {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 1.0, a + 1.0) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, xlab: &str, ylab: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        WIDTH / 2.0,
        escape(title),
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(xlab),
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(ylab)
    );
}

fn axes(out: &mut String, f: &Frame) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let xv = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let yv = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            b + 5.0,
            b + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 5.0,
            l - 8.0,
            py + 4.0,
            tick(yv)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// TOC curve against the treated fraction with pointwise 95% bars.
pub fn toc_plot(bars: &[TocBar], title: &str) -> String {
    let lo = bars.iter().map(|b| b.lower).fold(0.0, f64::min);
    let hi = bars.iter().map(|b| b.upper).fold(0.0, f64::max);
    let f = Frame::new(0.0, 1.0, lo, hi);
    let mut out = String::new();
    header(&mut out, title, "Treated fraction (q)", "TOC");
    axes(&mut out, &f);
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        LEFT,
        WIDTH - RIGHT,
        y = f.py(0.0)
    );
    for b in bars {
        let x = f.px(b.q);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#9ab" stroke-width="1"/>"##,
            f.py(b.lower),
            f.py(b.upper)
        );
    }
    let path: Vec<String> = bars.iter().map(|b| format!("{:.2},{:.2}", f.px(b.q), f.py(b.toc))).collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        path.join(" ")
    );
    out.push_str("</svg>\n");
    out
}

/// Histogram of recorded times with the censored counts overlaid and a
/// dashed line at the horizon.
pub fn histogram_plot(h: &Histogram, horizon: Option<f64>, title: &str) -> String {
    let total: Vec<usize> = h.counts_event.iter().zip(&h.counts_censored).map(|(a, b)| a + b).collect();
    let ymax = total.iter().copied().max().unwrap_or(1) as f64;
    let x0 = h.bin_edges[0];
    let x1 = *h.bin_edges.last().expect("histogram has edges");
    let f = Frame::new(x0, x1, 0.0, ymax);
    let mut out = String::new();
    header(&mut out, title, "Recorded time", "Frequency");
    axes(&mut out, &f);
    for (k, (&all, &cens)) in total.iter().zip(&h.counts_censored).enumerate() {
        let (a, b) = (f.px(h.bin_edges[k]), f.px(h.bin_edges[k + 1]));
        for (count, fill) in [(all, "#bbbbbb"), (cens, "rgb(255,0,0)\" fill-opacity=\"0.5")] {
            let top = f.py(count as f64);
            let _ = writeln!(
                out,
                r#"<rect x="{a:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{fill}" stroke="black" stroke-width="0.5"/>"#,
                (b - a).max(0.0),
                f.py(0.0) - top
            );
        }
    }
    if let Some(hz) = horizon.filter(|v| *v >= x0 && *v <= x1) {
        let x = f.px(hz);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="black" stroke-dasharray="6 4"/>"#,
            HEIGHT - BOTTOM
        );
    }
    let lx = WIDTH - RIGHT - 110.0;
    let _ = writeln!(
        out,
        r##"<rect x="{lx}" y="{TOP}" width="14" height="10" fill="#bbbbbb"/><text x="{}" y="{}">Event</text>
<rect x="{lx}" y="{}" width="14" height="10" fill="rgb(255,0,0)" fill-opacity="0.5"/><text x="{}" y="{}">Censored</text>"##,
        lx + 20.0,
        TOP + 10.0,
        TOP + 16.0,
        lx + 20.0,
        TOP + 26.0
    );
    out.push_str("</svg>\n");
    out
}
