//! Minimal SVG heatmaps with point and circle overlays.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::Result;
use crate::output::write_text;

/// Five-stop perceptual ramp (dark blue to yellow).
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn color(u: f64) -> String {
    if !u.is_finite() {
        return "#808080".into();
    }
    let u = u.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (u.floor() as usize).min(RAMP.len() - 2);
    let f = u - k as f64;
    let (a, b) = (RAMP[k], RAMP[k + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap of `values[[row, col]]` where rows run along the vertical axis
/// (bottom to top) and columns along the horizontal axis.
#[derive(Debug, Clone)]
pub struct Heatmap<'a> {
    pub values: &'a Array2<f64>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Pixel size of one lattice cell.
    pub cell: f64,
    pub title: String,
    pub points: Vec<(f64, f64)>,
    /// `(center_x, center_y, radius)` in data coordinates.
    pub circles: Vec<(f64, f64, f64)>,
}

impl<'a> Heatmap<'a> {
    pub fn new(values: &'a Array2<f64>, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Self {
            values,
            x_range,
            y_range,
            cell: 4.0,
            title: String::new(),
            points: Vec::new(),
            circles: Vec::new(),
        }
    }

    pub fn size(&self) -> (f64, f64) {
        let (rows, cols) = self.values.dim();
        (cols as f64 * self.cell, rows as f64 * self.cell)
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let (w, hgt) = self.size();
        let sx = if self.x_range.1 > self.x_range.0 {
            (x - self.x_range.0) / (self.x_range.1 - self.x_range.0)
        } else {
            0.5
        };
        let sy = if self.y_range.1 > self.y_range.0 {
            (y - self.y_range.0) / (self.y_range.1 - self.y_range.0)
        } else {
            0.5
        };
        (sx * w, (1.0 - sy) * hgt)
    }

    pub fn render(&self) -> String {
        let (w, hgt) = self.size();
        let (rows, cols) = self.values.dim();
        let finite = self.values.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{hgt}" viewBox="0 0 {w} {hgt}">"#
        );
        if !self.title.is_empty() {
            let _ = writeln!(s, "<title>{}</title>", escape(&self.title));
        }
        for r in 0..rows {
            for c in 0..cols {
                let v = self.values[[r, c]];
                let fill = color((v - lo) / span);
                let y = (rows - 1 - r) as f64 * self.cell;
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
                    c as f64 * self.cell,
                    y,
                    self.cell,
                    self.cell
                );
            }
        }
        for &(cx, cy, r) in &self.circles {
            let (px, py) = self.to_px(cx, cy);
            let rx = r / (self.x_range.1 - self.x_range.0).max(f64::MIN_POSITIVE) * w;
            let ry = r / (self.y_range.1 - self.y_range.0).max(f64::MIN_POSITIVE) * hgt;
            let _ = writeln!(
                s,
                r#"<ellipse cx="{px}" cy="{py}" rx="{rx}" ry="{ry}" fill="none" stroke="white" stroke-width="1.5"/>"#
            );
        }
        for &(x, y) in &self.points {
            let (px, py) = self.to_px(x, y);
            if px >= 0.0 && px <= w && py >= 0.0 && py <= hgt {
                let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="2" fill="red"/>"#);
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_follow_lattice() {
        let v = Array2::from_shape_fn((3, 5), |(r, c)| (r * 5 + c) as f64);
        let mut hm = Heatmap::new(&v, (0.0, 1.0), (0.0, 1.0));
        hm.cell = 6.0;
        hm.points.push((0.5, 0.5));
        hm.circles.push((0.5, 0.5, 0.25));
        let svg = hm.render();
        assert!(svg.contains(r#"width="30" height="18""#));
        assert_eq!(svg.matches("<rect").count(), 15);
        assert!(svg.contains("<ellipse") && svg.contains(r#"fill="red""#));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(f64::NAN), "#808080");
    }
}
