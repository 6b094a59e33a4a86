//! Minimal SVG line charts with a log-scale y axis.

use std::fmt::Write as _;
use std::path::Path;

use super::output::{write_text, OutputError};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot: no series with positive finite values")]
    Empty,
    #[error(transparent)]
    Output(#[from] OutputError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

/// Axis mapping from data to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_domain: (f64, f64),
    /// Decade bounds of the y axis, as `log10` values.
    pub y_decades: (f64, f64),
    log_x: bool,
}

impl Axes {
    fn tx(&self, x: f64) -> f64 {
        let (lo, hi, v) = if self.log_x {
            (self.x_domain.0.log10(), self.x_domain.1.log10(), x.log10())
        } else {
            (self.x_domain.0, self.x_domain.1, x)
        };
        let frac = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        LEFT + frac * (WIDTH - LEFT - RIGHT)
    }

    /// Pixel row of a positive value.
    pub fn y_pixel(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_decades;
        TOP + (hi - y.log10()) / (hi - lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn usable(p: &(f64, f64), log_x: bool) -> bool {
    p.0.is_finite() && p.1.is_finite() && p.1 > 0.0 && (!log_x || p.0 > 0.0)
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str, log_x: bool) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x,
            series: Vec::new(),
        }
    }

    pub fn add(&mut self, label: &str, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            label: label.into(),
            points,
        });
    }

    pub fn axes(&self) -> Result<Axes, PlotError> {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(|p| usable(p, self.log_x))
            .collect();
        if pts.is_empty() {
            return Err(PlotError::Empty);
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| {
            pts.iter().map(sel).fold(init, f)
        };
        let x_domain = (
            fold(f64::min, f64::INFINITY, |p| p.0),
            fold(f64::max, f64::NEG_INFINITY, |p| p.0),
        );
        let y_lo = fold(f64::min, f64::INFINITY, |p| p.1).log10().floor();
        let mut y_hi = fold(f64::max, f64::NEG_INFINITY, |p| p.1).log10().ceil();
        if y_hi <= y_lo {
            y_hi = y_lo + 1.0;
        }
        Ok(Axes {
            x_domain,
            y_decades: (y_lo, y_hi),
            log_x: self.log_x,
        })
    }

    pub fn render(&self) -> Result<String, PlotError> {
        let ax = self.axes()?;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );

        let (lo, hi) = ax.y_decades;
        for d in lo as i32..=hi as i32 {
            let y = ax.y_pixel(10f64.powi(d));
            let _ = writeln!(
                s,
                r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
                x0 - 6.0,
                y + 4.0
            );
        }
        for x in self.x_ticks(&ax) {
            let px = ax.tx(x);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="black"/>"##,
                y1 + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text class="xtick" x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y1 + 18.0,
                tick_label(x)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|p| usable(p, self.log_x))
                .map(|&(x, y)| format!("{:.2},{:.2}", ax.tx(x), ax.y_pixel(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = x1 + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                s,
                r#"<text class="legend" x="{}" y="{}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }

    fn x_ticks(&self, ax: &Axes) -> Vec<f64> {
        let (a, b) = ax.x_domain;
        if self.log_x {
            let (lo, hi) = (a.log10().ceil() as i32, b.log10().floor() as i32);
            (lo..=hi).map(|d| 10f64.powi(d)).collect()
        } else {
            (0..=5).map(|i| a + (b - a) * i as f64 / 5.0).collect()
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PlotError> {
        let svg = self.render()?;
        write_text(path, &svg)?;
        Ok(())
    }
}

fn tick_label(x: f64) -> String {
    if x == x.round() {
        format!("{x:.0}")
    } else {
        let s = format!("{x:.3}");
        s.trim_end_matches('0').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
