//! Minimal SVG line and scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::{io_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Markers only, no connecting line.
    pub scatter: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            scatter: false,
        }
    }
    pub fn scatter(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            scatter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Free text placed under the title, e.g. a fitted slope.
    pub annotation: Option<String>,
    /// Hash of the data file the plot was drawn from, embedded as a comment.
    pub data_hash: Option<String>,
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];
const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Plot {
    fn tx(&self, v: f64) -> Option<f64> {
        let v = if self.log_x { v.log10() } else { v };
        v.is_finite().then_some(v)
    }
    fn ty(&self, v: f64) -> Option<f64> {
        let v = if self.log_y { v.log10() } else { v };
        v.is_finite().then_some(v)
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter_map(|&(x, y)| Some((self.tx(x)?, self.ty(y)?)))
                    .collect()
            })
            .collect();
        let all = pts.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        if let Some(h) = &self.data_hash {
            let _ = writeln!(s, "<!-- data-sha256: {h} -->");
        }
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
            W / 2.0,
            esc(&self.title)
        );
        if let Some(a) = &self.annotation {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="42" text-anchor="middle" font-size="12">{}</text>"#,
                W / 2.0,
                esc(a)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let xl = if self.log_x {
                format!("1e{xv:.2}")
            } else {
                format!("{xv:.3}")
            };
            let yl = if self.log_y {
                format!("1e{yv:.2}")
            } else {
                format!("{yv:.3}")
            };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{xl}</text>"#,
                sx(xv),
                H - M + 14.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{yl}</text>"#,
                M - 4.0,
                sy(yv) + 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            W / 2.0,
            H - 16.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (k, (ser, p)) in self.series.iter().zip(&pts).enumerate() {
            let col = COLORS[k % COLORS.len()];
            if ser.scatter {
                for &(x, y) in p {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{col}"/>"#,
                        sx(x),
                        sy(y)
                    );
                }
            } else if !p.is_empty() {
                let path: Vec<String> = p
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            let ly = M + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" font-size="11" fill="{col}">{}</text>"#,
                W - M - 150.0,
                esc(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg()).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_axes_drop_nonpositive_points() {
        let p = Plot {
            title: "a < b".into(),
            log_y: true,
            series: vec![Series::line("s", vec![(0.0, 1.0), (1.0, 0.0), (2.0, 10.0)])],
            data_hash: Some("abc".into()),
            ..Default::default()
        };
        let svg = p.to_svg();
        assert!(svg.contains("data-sha256: abc"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }
}
