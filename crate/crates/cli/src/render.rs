//! Field rasters and loss-curve plots.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use parc_core::fields::Field;
use parc_core::{Error, Result};

/// Five-stop viridis, interpolated linearly in RGB from the minimum (first
/// stop) to the maximum (last stop) of each rendered field.
pub const COLORMAP: [[u8; 3]; 5] = [[0x44, 0x01, 0x54], [0x3b, 0x52, 0x8b], [0x21, 0x91, 0x8c], [0x5e, 0xc9, 0x62], [0xfd, 0xe7, 0x25]];

/// Color for `s` in `[0, 1]`; values outside are clamped.
pub fn colormap(s: f64) -> [u8; 3] {
    let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
    let pos = s * (COLORMAP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(COLORMAP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Renders `field` with rows of increasing `y` drawn bottom-up, upscaled by
/// an integer factor to at least 256 pixels on the longer side.
pub fn field_image(field: &Field) -> RgbImage {
    let g = *field.grid();
    let v = field.values();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scale = (256 / g.height.max(g.width)).max(1) as u32;
    RgbImage::from_fn(g.width as u32 * scale, g.height as u32 * scale, |px, py| {
        let col = (px / scale) as usize;
        let row = g.height - 1 - (py / scale) as usize;
        let x = field.get(row, col);
        let s = if span > 0.0 { (x - lo) / span } else { 0.5 };
        Rgb(colormap(s))
    })
}

pub fn write_png(field: &Field, path: &Path) -> Result<()> {
    field_image(field)
        .save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with a log10 y axis. Non-positive values are dropped.
pub fn loss_svg(title: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().filter(|p| p.1 > 0.0).map(|&(x, y)| (x, y.log10())))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |a, p| {
        (a.0.min(p.0), a.1.max(p.0), a.2.min(p.1), a.3.max(p.1))
    });
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0).unwrap();
    writeln!(s, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M).unwrap();
    for e in (y0 as i32)..=(y1 as i32) {
        let y = sy(e as f64);
        writeln!(s, r##"<line x1="{M}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, W - M).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"#, M - 6.0, y + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{M}" y="{:.1}">{x0}</text>"#, H - M + 16.0).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{x1}</text>"#, W - M, H - M + 16.0).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#, W / 2.0, H - M + 32.0).unwrap();
    for (i, ser) in series.iter().enumerate() {
        let line: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y.log10())))
            .collect();
        if !line.is_empty() {
            writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, ser.color, line.join(" ")).unwrap();
        }
        let ly = M + 16.0 + 16.0 * i as f64;
        writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{}" text-anchor="end">{}</text>"#, W - M - 8.0, ser.color, ser.label).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
