//! Predicted-vs-subjective scatter plots as PNG.
//!
//! The SROCC/PLCC annotation is drawn into the image with a small built-in
//! bitmap font and also stored in `tEXt` chunks (`srocc`, `plcc`) so tools
//! can read the exact values back.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::metrics::{plcc, srocc, EvaluationRecord};

const SIZE: usize = 320;
const MARGIN: usize = 24;

/// 3x5 glyphs, rows top to bottom, 3 bits per row (MSB = left column).
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '=' => [0, 7, 0, 7, 0],
        'S' => [7, 4, 7, 1, 7],
        'R' => [6, 5, 6, 5, 5],
        'O' => [7, 5, 5, 5, 7],
        'C' => [7, 4, 4, 4, 7],
        'P' => [7, 5, 7, 4, 4],
        'L' => [4, 4, 4, 4, 7],
        ' ' => [0, 0, 0, 0, 0],
        _ => return None,
    })
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Self {
            px: vec![255; SIZE * SIZE * 3],
        }
    }

    fn put(&mut self, x: isize, y: isize, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= SIZE || y as usize >= SIZE {
            return;
        }
        let i = (y as usize * SIZE + x as usize) * 3;
        self.px[i..i + 3].copy_from_slice(&rgb);
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), rgb: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            self.put(
                (x0 + t * (x1 - x0)).round() as isize,
                (y0 + t * (y1 - y0)).round() as isize,
                rgb,
            );
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, scale: usize) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some(g) = glyph(ch) {
                for (row, bits) in g.iter().enumerate() {
                    for col in 0..3 {
                        if bits >> (2 - col) & 1 == 1 {
                            for dy in 0..scale {
                                for dx in 0..scale {
                                    self.put(
                                        (cx + col * scale + dx) as isize,
                                        (y + row * scale + dy) as isize,
                                        [0, 0, 0],
                                    );
                                }
                            }
                        }
                    }
                }
            }
            cx += 4 * scale;
        }
    }
}

/// Values written into the plot annotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotAnnotation {
    pub srocc: f64,
    pub plcc: f64,
}

/// Renders the scatter plot and returns the annotated metric values.
pub fn emit_scatter_plot(records: &[EvaluationRecord], path: &Path) -> Result<PlotAnnotation> {
    if records.is_empty() {
        return Err(Error::invalid("cannot plot an empty record set"));
    }
    let ann = PlotAnnotation {
        srocc: if records.len() >= 2 { srocc(records)?.value } else { f64::NAN },
        plcc: if records.len() >= 2 { plcc(records).unwrap_or(f64::NAN) } else { f64::NAN },
    };

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in records {
        lo = lo.min(r.subjective.min(r.predicted));
        hi = hi.max(r.subjective.max(r.predicted));
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let span = (SIZE - 2 * MARGIN) as f64;
    let map = |v: f64| (v - lo) / (hi - lo) * span;
    let to_px = |s: f64, p: f64| (MARGIN as f64 + map(s), (SIZE - MARGIN) as f64 - map(p));

    let mut c = Canvas::new();
    let axis = [120, 120, 120];
    c.line(to_px(lo, lo), to_px(hi, lo), axis);
    c.line(to_px(lo, lo), to_px(lo, hi), axis);
    c.line(to_px(lo, lo), to_px(hi, hi), [200, 60, 60]);
    for r in records {
        let (x, y) = to_px(r.subjective, r.predicted);
        for dy in -1..=1 {
            for dx in -1..=1 {
                c.put(x.round() as isize + dx, y.round() as isize + dy, [30, 80, 200]);
            }
        }
    }
    c.text(MARGIN + 4, 4, &format!("SROCC={:.4}", ann.srocc), 2);
    c.text(SIZE / 2 + 4, 4, &format!("PLCC={:.4}", ann.plcc), 2);

    let file = File::create(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), SIZE as u32, SIZE as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("srocc".into(), format!("{:.17e}", ann.srocc))
        .map_err(|e| Error::invalid(e.to_string()))?;
    enc.add_text_chunk("plcc".into(), format!("{:.17e}", ann.plcc))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut writer = enc.write_header().map_err(|e| Error::invalid(e.to_string()))?;
    writer
        .write_image_data(&c.px)
        .map_err(|e| Error::invalid(e.to_string()))?;
    writer.finish().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(ann)
}

/// Reads back the `srocc`/`plcc` text chunks written by [`emit_scatter_plot`].
pub fn read_plot_annotation(path: &Path) -> Result<PlotAnnotation> {
    let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    let reader = decoder.read_info().map_err(|e| Error::invalid(e.to_string()))?;
    let info = reader.info();
    let find = |key: &str| -> Result<f64> {
        info.uncompressed_latin1_text
            .iter()
            .find(|t| t.keyword == key)
            .ok_or_else(|| Error::invalid(format!("plot has no `{key}` annotation")))?
            .text
            .parse::<f64>()
            .map_err(|e| Error::invalid(e.to_string()))
    };
    Ok(PlotAnnotation {
        srocc: find("srocc")?,
        plcc: find("plcc")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::records_from;

    #[test]
    fn writes_annotated_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.png");
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 2.0 + 3.0).collect();
        let p: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + 0.3 * (i as f64).cos()).collect();
        let recs = records_from(&s, &p);
        let ann = emit_scatter_plot(&recs, &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
        let back = read_plot_annotation(&path).unwrap();
        assert_eq!(back, ann);
        assert_eq!(ann.srocc, srocc(&recs).unwrap().value);
        assert_eq!(ann.plcc, plcc(&recs).unwrap());
    }

    #[test]
    fn perfect_predictions_annotate_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let s = [1.0, 2.0, 3.5, 4.0];
        let ann = emit_scatter_plot(&records_from(&s, &s), &path).unwrap();
        assert_eq!(ann.srocc, 1.0);
        assert!((ann.plcc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let recs = records_from(&[1.0, 2.0], &[1.0, 3.0]);
        let err = emit_scatter_plot(&recs, Path::new("/nonexistent-dir/x.png")).unwrap_err();
        assert!(matches!(err, Error::Write { .. }));
    }

    #[test]
    fn empty_records_rejected() {
        assert!(emit_scatter_plot(&[], Path::new("x.png")).is_err());
    }
}
