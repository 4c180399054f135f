use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::train::csv_error;
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_Y: f64 = 30.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Series read from a CSV: x values (the `epoch` column when present, row
/// numbers otherwise) and one `(x, y)` list per requested column. Empty cells
/// are skipped.
pub fn read_series(csv_path: &Path, columns: &[String]) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| csv_error(csv_path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(csv_path, e))?.clone();
    let index: Vec<usize> = columns
        .iter()
        .map(|c| header.iter().position(|h| h == c).ok_or_else(|| Error::MissingColumn(c.clone())))
        .collect::<Result<_>>()?;
    let x_col = header.iter().position(|h| h == "epoch");
    let mut series = vec![Vec::new(); columns.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(csv_path, e))?;
        let parse = |i: usize| -> Result<Option<f64>> {
            let cell = rec.get(i).unwrap_or("").trim();
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("{}: row {}: not a number: {cell:?}", csv_path.display(), row + 1)))
        };
        let x = match x_col {
            Some(i) => parse(i)?.unwrap_or((row + 1) as f64),
            None => (row + 1) as f64,
        };
        for (s, &i) in series.iter_mut().zip(&index) {
            if let Some(y) = parse(i)? {
                s.push((x, y));
            }
        }
    }
    Ok(series)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a line chart with linear axes, one polyline per column, as SVG text.
pub fn render_svg(columns: &[String], series: &[Vec<(f64, f64)>]) -> String {
    let pts = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN_Y - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN_LEFT, MARGIN_LEFT + plot_w, MARGIN_Y, HEIGHT - MARGIN_Y);
    let _ = writeln!(
        s,
        r#"<path d="M{left:.2},{top:.2} L{left:.2},{bottom:.2} L{right:.2},{bottom:.2}" fill="none" stroke="black"/>"#
    );
    let font = r#"font-family="sans-serif" font-size="11""#;
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" {font} text-anchor="{anchor}">{x:.4}</text>"#,
            sx(x),
            bottom + 16.0
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" {font} text-anchor="end">{y:.4e}</text>"#,
            left - 4.0,
            sy(y) + 4.0
        );
    }
    for (i, (name, pts)) in columns.iter().zip(series).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            right + 12.0,
            right + 32.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" {font}>{}</text>"#, right + 38.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

pub fn cmd_render(csv_path: &Path, columns: &[String], out: &Path) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::InvalidArgument("render needs at least one column".into()));
    }
    let series = read_series(csv_path, columns)?;
    fs::write(out, render_svg(columns, &series)).map_err(|e| Error::io(out.display().to_string(), e))
}
