//! Edge-score heatmaps as CSV (exact values) and SVG (colour grid).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CELL: usize = 28;
const MARGIN: usize = 90;

/// Blue at 0, yellow at 0.5, red at 1; inputs are clamped to `[0, 1]`.
pub fn heat_colour(v: f64) -> (u8, u8, u8) {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    if v < 0.5 {
        let t = v / 0.5;
        (lerp(0.0, 255.0, t), lerp(0.0, 255.0, t), lerp(255.0, 0.0, t))
    } else {
        let t = (v - 0.5) / 0.5;
        (255, lerp(255.0, 0.0, t), 0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn check(scores: &Tensor, names: &[String]) -> Result<usize> {
    let p = names.len();
    if scores.shape() != [p, p] {
        return Err(Error::shape("export_heatmap", scores.shape(), &[p, p]));
    }
    Ok(p)
}

pub fn heatmap_csv(scores: &Tensor, names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let p = check(scores, names)?;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..p {
        let mut rec = vec![names[i].clone()];
        rec.extend((0..p).map(|j| format!("{}", scores.at2(i, j))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::file(path.as_ref(), e))
}

/// Reads a matrix written by [`heatmap_csv`].
pub fn read_heatmap_csv(path: impl AsRef<Path>) -> Result<(Tensor, Vec<String>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let p = names.len();
    let mut data = Vec::with_capacity(p * p);
    for rec in r.records() {
        let rec = rec?;
        for cell in rec.iter().skip(1) {
            data.push(cell.parse::<f64>().map_err(|_| Error::Data(format!("{}: bad value '{cell}'", path.display())))?);
        }
    }
    Ok((Tensor::new(vec![p, p], data)?, names))
}

pub fn heatmap_svg(scores: &Tensor, names: &[String], title: &str) -> Result<String> {
    let p = check(scores, names)?;
    let size = MARGIN + p * CELL + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="11">"#,
        size + 20
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="14">{}</text>"#, escape(title));
    for (k, name) in names.iter().enumerate() {
        let c = MARGIN + k * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{c}" y="{}" text-anchor="end" transform="rotate(-60 {c} {})">{}</text>"#,
            MARGIN - 4,
            MARGIN - 4,
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 6,
            MARGIN + k * CELL + CELL / 2 + 4,
            escape(name)
        );
    }
    for i in 0..p {
        for j in 0..p {
            let v = scores.at2(i, j);
            let (r, g, b) = heat_colour(v);
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}"><title>{} → {}: {v}</title></rect>"##,
                MARGIN + j * CELL,
                MARGIN + i * CELL,
                escape(&names[i]),
                escape(&names[j]),
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<stem>.csv` and `<stem>.svg`; returns both paths.
pub fn export_heatmap(scores: &Tensor, names: &[String], stem: impl AsRef<Path>, title: &str) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let csv_path = stem.with_extension("csv");
    let svg_path = stem.with_extension("svg");
    heatmap_csv(scores, names, &csv_path)?;
    let svg = heatmap_svg(scores, names, title)?;
    std::fs::write(&svg_path, svg).map_err(|e| Error::file(&svg_path, e))?;
    Ok((csv_path, svg_path))
}
