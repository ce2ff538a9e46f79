//! Training curves as SVG line plots, one file per metric with one line
//! per variant, plus the plotted numbers as CSV.
//!
//! Each plotted point is a `<circle>` carrying `data-epoch` and `data-value`
//! attributes with the exact CSV text of the value, so the plot can be
//! checked against the logs by re-parsing it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::results::{self, fmt_f64, RunRecord};

pub const CURVE_METRICS: [&str; 5] = ["acc", "nmi", "ari", "loss", "selected_fraction"];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// A labeled run to plot.
#[derive(Clone, Debug)]
pub struct Variant {
    pub label: String,
    pub record: RunRecord,
}

#[derive(Clone, Debug, Default)]
pub struct CurvesOutput {
    pub files: Vec<PathBuf>,
    /// Lines left out of a plot, as `metric: label: reason`.
    pub warnings: Vec<String>,
    pub manifest: PathBuf,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG for one metric. Variants whose column is entirely missing are left
/// out and reported in the returned warnings.
pub fn plot(metric: &str, variants: &[Variant]) -> (String, Vec<String>) {
    let mut warnings = Vec::new();
    let mut lines = Vec::new();
    for v in variants {
        let pts: Vec<(usize, f64)> = v
            .record
            .column(metric)
            .into_iter()
            .filter_map(|(e, x)| x.map(|x| (e, x)))
            .collect();
        if pts.is_empty() {
            warnings.push(format!("{metric}: {}: no values, line omitted", v.label));
        } else {
            lines.push((v.label.as_str(), pts));
        }
    }
    let all = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x1, mut y0, mut y1) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
    for &(e, y) in all {
        x1 = x1.max(e);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let sx = |e: usize| MARGIN + (e as f64) / (x1 as f64) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        xml_escape(metric)
    )
    .unwrap();
    let (l, b, r, t) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
    writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">epoch</text>"#,
        W / 2.0,
        H - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10">{x1}</text>"#,
        r - 4.0,
        b + 14.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
        l - 4.0,
        b,
        fmt_short(y0)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
        l - 4.0,
        t + 4.0,
        fmt_short(y1)
    )
    .unwrap();
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = xml_escape(label);
        writeln!(
            s,
            r#"<g class="series" data-label="{label}" stroke="{color}" fill="{color}">"#
        )
        .unwrap();
        let path: Vec<String> = pts
            .iter()
            .map(|&(e, y)| format!("{:.2},{:.2}", sx(e), sy(y)))
            .collect();
        writeln!(s, r#"<polyline fill="none" points="{}"/>"#, path.join(" ")).unwrap();
        for &(e, y) in pts {
            writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" data-epoch="{e}" data-value="{}"/>"#,
                sx(e),
                sy(y),
                fmt_f64(y)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" stroke="none">{label}</text>"#,
            r - 120.0,
            t + 14.0 * (i as f64 + 1.0)
        )
        .unwrap();
        writeln!(s, "</g>").unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    (s, warnings)
}

fn fmt_short(v: f64) -> String {
    format!("{v:.3}")
}

/// Plotted values as a CSV table: `epoch,<label>,...`, missing cells empty.
pub fn curve_csv(metric: &str, variants: &[Variant]) -> String {
    let epochs: std::collections::BTreeSet<usize> = variants
        .iter()
        .flat_map(|v| v.record.rows.iter().map(|r| r.epoch))
        .collect();
    let mut s = String::from("epoch");
    for v in variants {
        write!(s, ",{}", v.label.replace(',', ";")).unwrap();
    }
    s.push('\n');
    for e in epochs {
        write!(s, "{e}").unwrap();
        for v in variants {
            let cell = v
                .record
                .rows
                .iter()
                .find(|r| r.epoch == e)
                .and_then(|r| r.value(metric));
            write!(s, ",{}", cell.map(fmt_f64).unwrap_or_default()).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Writes `<metric>.svg` and `<metric>.csv` for every curve metric plus a
/// `manifest.txt` listing the files and any warnings.
pub fn emit_curves(variants: &[Variant], dir: &Path) -> Result<CurvesOutput> {
    let mut out = CurvesOutput {
        manifest: dir.join("manifest.txt"),
        ..CurvesOutput::default()
    };
    for m in CURVE_METRICS {
        let (svg, warnings) = plot(m, variants);
        let svg_path = dir.join(format!("{m}.svg"));
        results::write(&svg_path, &svg)?;
        let csv_path = dir.join(format!("{m}.csv"));
        results::write(&csv_path, &curve_csv(m, variants))?;
        out.files.extend([svg_path, csv_path]);
        out.warnings.extend(warnings);
    }
    let mut manifest = String::new();
    for f in &out.files {
        writeln!(
            manifest,
            "file {}",
            f.file_name().unwrap().to_string_lossy()
        )
        .unwrap();
    }
    for w in &out.warnings {
        writeln!(manifest, "warning {w}").unwrap();
    }
    results::write(&out.manifest, &manifest)?;
    Ok(out)
}

/// `(epoch, value text)` of every point in an SVG emitted by [`plot`],
/// grouped by series label.
pub fn parse_plot_points(svg: &str) -> Vec<(String, Vec<(usize, String)>)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = line.find(&key)? + key.len();
        let len = line[start..].find('"')?;
        Some(line[start..start + len].to_string())
    };
    let mut out: Vec<(String, Vec<(usize, String)>)> = Vec::new();
    for line in svg.lines() {
        if line.starts_with("<g class=\"series\"") {
            out.push((attr(line, "data-label").unwrap_or_default(), Vec::new()));
        } else if line.starts_with("<circle") {
            if let (Some(series), Some(e), Some(v)) = (
                out.last_mut(),
                attr(line, "data-epoch"),
                attr(line, "data-value"),
            ) {
                series.1.push((e.parse().unwrap_or(0), v));
            }
        }
    }
    out
}
