//! Grayscale image grids: spatial-transformer before/after views and
//! per-class pixel statistics, written as binary PGM.
//!
//! Everything is computed in `f64`; values are clamped to `[0, 1]` and
//! quantized to 8 bits only when a file is written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stdac_core::dac::{Model, StPlacement};
use stdac_core::Tensor;

use crate::error::{io_err, Error, Result};

/// A row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Gray {
    pub fn new(width: usize, height: usize) -> Self {
        Gray {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Copies a `h×w` single-channel tile with its top-left corner at `(x0, y0)`.
    fn blit(&mut self, tile: &[f64], w: usize, h: usize, x0: usize, y0: usize) {
        for y in 0..h {
            let dst = (y0 + y) * self.width + x0;
            self.pixels[dst..dst + w].copy_from_slice(&tile[y * w..(y + 1) * w]);
        }
    }

    /// Cuts the tile at grid cell `(col, row)` back out.
    pub fn tile(&self, col: usize, row: usize, w: usize, h: usize, gap: usize) -> Vec<f64> {
        let (x0, y0) = (col * (w + gap), row * (h + gap));
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x0 + x, y0 + y)))
            .map(|(x, y)| self.get(x, y))
            .collect()
    }
}

/// Gap in pixels between grid cells.
pub const GAP: usize = 2;

/// Lays out `columns[c][r]` tiles of `h×w`, column-major, separated by [`GAP`].
pub fn grid(columns: &[Vec<Vec<f64>>], w: usize, h: usize) -> Gray {
    let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
    let cols = columns.len();
    let span = |n: usize, s: usize| if n == 0 { 0 } else { n * s + (n - 1) * GAP };
    let mut g = Gray::new(span(cols, w), span(rows, h));
    for (c, col) in columns.iter().enumerate() {
        for (r, tile) in col.iter().enumerate() {
            g.blit(tile, w, h, c * (w + GAP), r * (h + GAP));
        }
    }
    g
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (`P5`) with optional comment lines in the header.
pub fn encode_pgm(img: &Gray, comments: &[&str]) -> Vec<u8> {
    let mut head = String::from("P5\n");
    for c in comments {
        writeln!(head, "# {c}").unwrap();
    }
    write!(head, "{} {}\n255\n", img.width, img.height).unwrap();
    let mut out = head.into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

pub fn write_pgm(path: &Path, img: &Gray, comments: &[&str]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, encode_pgm(img, comments)).map_err(io_err(path))
}

fn image_tiles(t: &Tensor) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 || s[3] != 1 {
        return Err(Error::Unsupported(format!(
            "expected n×h×w×1 images, got {s:?}"
        )));
    }
    let (h, w) = (s[1], s[2]);
    Ok((t.data().chunks(h * w).map(<[f64]>::to_vec).collect(), w, h))
}

/// Original images in the first column, then the first ST layer's output
/// under each model: one row per image.
pub fn st_grid(models: &mut [&mut Model], images: &Tensor) -> Result<Gray> {
    if models.is_empty() {
        return Err(Error::Unsupported("no model given".into()));
    }
    let (orig, w, h) = image_tiles(images)?;
    let mut columns = vec![orig];
    for m in models.iter_mut() {
        if m.config().st_layer_count == 0 {
            return Err(Error::Unsupported(
                "model has no spatial transformer layer".into(),
            ));
        }
        let (out, _) = m.st_output(StPlacement::AfterInput, images)?;
        columns.push(image_tiles(&out)?.0);
    }
    Ok(grid(&columns, w, h))
}

/// Writes [`st_grid`] to `<dir>/st.pgm`; `labels` name the model columns.
pub fn emit_st_visuals(
    models: &mut [&mut Model],
    labels: &[&str],
    images: &Tensor,
    dir: &Path,
) -> Result<PathBuf> {
    let g = st_grid(models, images)?;
    let path = dir.join("st.pgm");
    let cols = format!("columns: original | {}", labels.join(" | "));
    write_pgm(&path, &g, &["first spatial transformer output", &cols])?;
    Ok(path)
}

/// Per-class pixelwise mean, population variance and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    /// Class label of each column.
    pub classes: Vec<u8>,
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub width: usize,
    pub height: usize,
}

/// Statistics of `images` grouped by `truth`, classes in ascending order.
/// Variance divides by the class size.
pub fn class_stats(images: &Tensor, truth: Option<&[u8]>) -> Result<ClassStats> {
    let truth = truth.ok_or(Error::MissingLabels)?;
    let (tiles, w, h) = image_tiles(images)?;
    if truth.len() != tiles.len() {
        return Err(Error::CountMismatch {
            images: tiles.len(),
            labels: truth.len(),
        });
    }
    let mut classes: Vec<u8> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut out = ClassStats {
        classes: classes.clone(),
        mean: Vec::new(),
        variance: Vec::new(),
        std: Vec::new(),
        width: w,
        height: h,
    };
    for c in classes {
        let members: Vec<&Vec<f64>> = tiles
            .iter()
            .zip(truth)
            .filter(|(_, &t)| t == c)
            .map(|(x, _)| x)
            .collect();
        let n = members.len() as f64;
        let mean: Vec<f64> = (0..w * h)
            .map(|i| members.iter().map(|m| m[i]).sum::<f64>() / n)
            .collect();
        let var: Vec<f64> = (0..w * h)
            .map(|i| {
                members
                    .iter()
                    .map(|m| (m[i] - mean[i]).powi(2))
                    .sum::<f64>()
                    / n
            })
            .collect();
        out.std.push(var.iter().map(|v| v.sqrt()).collect());
        out.mean.push(mean);
        out.variance.push(var);
    }
    Ok(out)
}

/// Writes `mean`, `std` and `variance` grids (one column per class) for the
/// original images and, given a model with ST layers, for the first ST
/// layer's output. Returns the written paths.
pub fn class_statistics(
    model: Option<&mut Model>,
    images: &Tensor,
    truth: Option<&[u8]>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut sources = vec![("original", class_stats(images, truth)?)];
    if let Some(m) = model {
        if m.config().st_layer_count > 0 {
            let (warped, _) = m.st_output(StPlacement::AfterInput, images)?;
            sources.push(("st", class_stats(&warped, truth)?));
        }
    }
    let mut paths = Vec::new();
    for (tag, s) in &sources {
        let classes: Vec<String> = s.classes.iter().map(u8::to_string).collect();
        let cols = format!("columns: classes {}", classes.join(" "));
        for (stat, data) in [
            ("mean", &s.mean),
            ("std", &s.std),
            ("variance", &s.variance),
        ] {
            let columns: Vec<Vec<Vec<f64>>> = data.iter().map(|t| vec![t.clone()]).collect();
            let path = dir.join(format!("{tag}-{stat}.pgm"));
            let what =
                format!("per-class pixel {stat}, population convention (divide by class size)");
            write_pgm(&path, &grid(&columns, s.width, s.height), &[&what, &cols])?;
            paths.push(path);
        }
    }
    Ok(paths)
}
