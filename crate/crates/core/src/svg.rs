//! Minimal SVG line/scatter plots for diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Scatter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub kind: SeriesKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Dashed horizontal reference lines `(y, label)`.
    pub hlines: Vec<(f64, String)>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    pub fn line(mut self, name: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { name: name.into(), points, kind: SeriesKind::Line });
        self
    }

    pub fn scatter(mut self, name: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { name: name.into(), points, kind: SeriesKind::Scatter });
        self
    }

    fn tx(&self, v: f64, log: bool) -> Option<f64> {
        let u = if log { v.log10() } else { v };
        u.is_finite().then_some(u)
    }

    pub fn to_svg(&self) -> Result<String> {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter_map(|&(x, y)| Some((self.tx(x, self.log_x)?, self.tx(y, self.log_y)?)))
            .chain(self.hlines.iter().filter_map(|(y, _)| {
                let y = self.tx(*y, self.log_y)?;
                Some((f64::NAN, y))
            }))
            .collect();
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                return None;
            }
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
            Some((lo - pad, hi + pad))
        };
        let (x0, x1) = range(&mut pts.iter().map(|p| p.0))
            .ok_or_else(|| Error::InvalidConfig("nothing to plot".into()))?;
        let (y0, y1) = range(&mut pts.iter().map(|p| p.1))
            .ok_or_else(|| Error::InvalidConfig("nothing to plot".into()))?;
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |u: f64| LEFT + (u - x0) / (x1 - x0) * pw;
        let py = |u: f64| TOP + ph - (u - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (ux, uy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(ux), TOP + ph + 16.0, tick(ux, self.log_x));
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(uy) + 4.0, tick(uy, self.log_y));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for (y, label) in &self.hlines {
            if let Some(u) = self.tx(*y, self.log_y) {
                let (xe, yy) = (LEFT + pw, py(u));
                let _ = writeln!(
                    s,
                    r#"<line x1="{LEFT}" x2="{xe:.1}" y1="{yy:.1}" y2="{yy:.1}" stroke="gray" stroke-dasharray="5,4"/>"#
                );
                let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="gray">{}</text>"#, xe + 6.0, yy + 4.0, esc(label));
            }
        }
        for (i, ser) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let coords: Vec<(f64, f64)> = ser
                .points
                .iter()
                .filter_map(|&(x, y)| Some((px(self.tx(x, self.log_x)?), py(self.tx(y, self.log_y)?))))
                .collect();
            match ser.kind {
                SeriesKind::Line => {
                    let path: Vec<String> = coords.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                    let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
                    for (x, y) in &coords {
                        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{color}"/>"#);
                    }
                }
                SeriesKind::Scatter => {
                    for (x, y) in &coords {
                        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="1.2" fill="{color}" fill-opacity="0.5"/>"#);
                    }
                }
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                LEFT + pw + 10.0,
                ly,
                LEFT + pw + 26.0,
                ly + 9.0,
                esc(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg()?)?;
        Ok(())
    }
}

fn tick(u: f64, log: bool) -> String {
    if log {
        format!("1e{u:.1}")
    } else {
        format!("{u:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_reference_line() {
        let mut p = Plot::new("kl <vs> steps", "steps", "KL")
            .line("lanpaint", vec![(5.0, 0.1), (10.0, 0.01), (20.0, 0.001)])
            .scatter("samples", vec![(1.0, 1.0)]);
        p.log_y = true;
        p.hlines.push((0.01, "0.01".into()));
        let svg = p.to_svg().unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("kl &lt;vs&gt; steps"));
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn empty_plot_is_an_error() {
        assert!(Plot::new("", "", "").to_svg().is_err());
        let mut p = Plot::new("", "", "").line("a", vec![(0.0, -1.0)]);
        p.log_y = true;
        assert!(p.to_svg().is_err());
    }
}
