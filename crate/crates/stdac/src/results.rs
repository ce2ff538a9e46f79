//! Per-run and summary CSV files.
//!
//! Every file opens with `#` comment lines carrying the code version, the
//! completion status and the full configuration (`# config <key> = <value>`),
//! followed by an ordinary CSV table. Floats are written with 17 significant
//! digits so they parse back to the identical `f64`. Wall-clock times would
//! make reruns differ, so they go to a separate `run<i>.timing.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stdac_core::metrics::Scores;

use crate::config::ExperimentConfig;
use crate::error::{io_err, Error, Result};

pub const CODE_VERSION: &str = concat!("stdac ", env!("CARGO_PKG_VERSION"));

pub const RUN_COLUMNS: [&str; 10] = [
    "epoch",
    "loss",
    "selected_fraction",
    "skipped_batches",
    "acc",
    "nmi",
    "ari",
    "lambda",
    "upper",
    "lower",
];

/// One logged epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub selected_fraction: f64,
    pub skipped_batches: usize,
    pub scores: Option<Scores>,
    pub lambda: f64,
    pub upper: f64,
    pub lower: f64,
    /// Seconds spent on the epoch (training plus evaluation).
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// Scores of the untrained network.
    pub initial: Option<Scores>,
    pub rows: Vec<EpochRow>,
    pub complete: bool,
}

impl RunRecord {
    pub fn last_scores(&self) -> Option<Scores> {
        self.rows.last().and_then(|r| r.scores)
    }

    /// Value of a metric column per epoch; `None` entries are missing values.
    pub fn column(&self, name: &str) -> Vec<(usize, Option<f64>)> {
        self.rows.iter().map(|r| (r.epoch, r.value(name))).collect()
    }
}

impl EpochRow {
    pub fn value(&self, column: &str) -> Option<f64> {
        match column {
            "epoch" => Some(self.epoch as f64),
            "loss" => Some(self.loss),
            "selected_fraction" => Some(self.selected_fraction),
            "skipped_batches" => Some(self.skipped_batches as f64),
            "acc" => self.scores.map(|s| s.acc),
            "nmi" => self.scores.map(|s| s.nmi),
            "ari" => self.scores.map(|s| s.ari),
            "lambda" => Some(self.lambda),
            "upper" => Some(self.upper),
            "lower" => Some(self.lower),
            "wall_seconds" => Some(self.wall_seconds),
            _ => None,
        }
    }
}

/// Fixed 17-significant-digit float text.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn header(out: &mut String, cfg: &ExperimentConfig, status: &str) -> Result<()> {
    writeln!(out, "# code_version = {CODE_VERSION}").unwrap();
    writeln!(out, "# status = {status}").unwrap();
    for (k, v) in cfg.pairs()? {
        writeln!(out, "# config {k} = {v}").unwrap();
    }
    Ok(())
}

pub fn run_csv(cfg: &ExperimentConfig, rec: &RunRecord) -> Result<String> {
    let mut out = String::new();
    header(
        &mut out,
        cfg,
        if rec.complete {
            "complete"
        } else {
            "incomplete"
        },
    )?;
    writeln!(out, "# run = {}", rec.run).unwrap();
    writeln!(out, "# seed = {}", rec.seed).unwrap();
    let init = rec.initial;
    writeln!(
        out,
        "# initial acc,nmi,ari = {},{},{}",
        opt(init.map(|s| s.acc)),
        opt(init.map(|s| s.nmi)),
        opt(init.map(|s| s.ari))
    )
    .unwrap();
    writeln!(out, "{}", RUN_COLUMNS.join(",")).unwrap();
    for r in &rec.rows {
        let s = r.scores;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.loss),
            fmt_f64(r.selected_fraction),
            r.skipped_batches,
            opt(s.map(|s| s.acc)),
            opt(s.map(|s| s.nmi)),
            opt(s.map(|s| s.ari)),
            fmt_f64(r.lambda),
            fmt_f64(r.upper),
            fmt_f64(r.lower)
        )
        .unwrap();
    }
    Ok(out)
}

pub fn timing_csv(rec: &RunRecord) -> String {
    let mut out = String::from("epoch,wall_seconds\n");
    for r in &rec.rows {
        writeln!(out, "{},{}", r.epoch, fmt_f64(r.wall_seconds)).unwrap();
    }
    out
}

/// Statistics over runs of one summary metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Aggregate {
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

pub const SUMMARY_METRICS: [&str; 5] = [
    "final_acc",
    "final_nmi",
    "final_ari",
    "final_loss",
    "best_acc",
];

/// Per-run value of a summary metric.
pub fn summary_value(rec: &RunRecord, metric: &str) -> Option<f64> {
    let last = rec.rows.last()?;
    match metric {
        "final_acc" => last.value("acc"),
        "final_nmi" => last.value("nmi"),
        "final_ari" => last.value("ari"),
        "final_loss" => Some(last.loss),
        "best_acc" => rec
            .rows
            .iter()
            .filter_map(|r| r.value("acc"))
            .reduce(f64::max),
        _ => None,
    }
}

pub fn summary_csv(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    complete: bool,
) -> Result<String> {
    let mut out = String::new();
    header(
        &mut out,
        cfg,
        if complete { "complete" } else { "incomplete" },
    )?;
    writeln!(out, "# runs = {}", records.len()).unwrap();
    writeln!(out, "# std = population").unwrap();
    writeln!(out, "metric,mean,std,count").unwrap();
    for m in SUMMARY_METRICS {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.complete)
            .filter_map(|r| summary_value(r, m))
            .collect();
        match aggregate(&vals) {
            Some(a) => writeln!(
                out,
                "{m},{},{},{}",
                fmt_f64(a.mean),
                fmt_f64(a.std),
                a.count
            )
            .unwrap(),
            None => writeln!(out, "{m},,,0").unwrap(),
        }
    }
    Ok(out)
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// A results file read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedResults {
    pub code_version: String,
    pub complete: bool,
    pub config: ExperimentConfig,
    /// Remaining `# key = value` comment lines.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    /// Table cells; empty cells are `None`.
    pub rows: Vec<Vec<Option<String>>>,
}

impl ParsedResults {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn floats(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("no column {name:?}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[i].as_deref()
                    .map(|c| {
                        c.parse()
                            .map_err(|_| Error::Config(format!("bad number {c:?} in {name}")))
                    })
                    .transpose()
            })
            .collect()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Rebuilds the per-run record (without wall times).
    pub fn run_record(&self) -> Result<RunRecord> {
        let col = |n: &str| self.floats(n);
        let (ep, loss, sel, skip) = (
            col("epoch")?,
            col("loss")?,
            col("selected_fraction")?,
            col("skipped_batches")?,
        );
        let (acc, nmi, ari) = (col("acc")?, col("nmi")?, col("ari")?);
        let (lam, up, lo) = (col("lambda")?, col("upper")?, col("lower")?);
        let need = |v: Option<f64>| {
            v.ok_or_else(|| Error::Config("missing value in required column".into()))
        };
        let scores = |i: usize| match (acc[i], nmi[i], ari[i]) {
            (Some(acc), Some(nmi), Some(ari)) => Some(Scores { acc, nmi, ari }),
            _ => None,
        };
        let mut rows = Vec::new();
        for i in 0..self.rows.len() {
            rows.push(EpochRow {
                epoch: need(ep[i])? as usize,
                loss: need(loss[i])?,
                selected_fraction: need(sel[i])?,
                skipped_batches: need(skip[i])? as usize,
                scores: scores(i),
                lambda: need(lam[i])?,
                upper: need(up[i])?,
                lower: need(lo[i])?,
                wall_seconds: 0.0,
            });
        }
        let num = |k: &str| -> Result<u64> {
            self.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("missing `# {k}` line")))
        };
        let initial = self.meta("initial acc,nmi,ari").and_then(|v| {
            let p: Vec<f64> = v.split(',').filter_map(|c| c.parse().ok()).collect();
            (p.len() == 3).then(|| Scores {
                acc: p[0],
                nmi: p[1],
                ari: p[2],
            })
        });
        Ok(RunRecord {
            run: num("run")? as usize,
            seed: num("seed")?,
            initial,
            rows,
            complete: self.complete,
        })
    }
}

pub fn parse_results(text: &str, path: &Path) -> Result<ParsedResults> {
    let bad = |msg: String| Error::Results {
        path: path.into(),
        msg,
    };
    let mut version = None;
    let mut status = None;
    let mut config = String::new();
    let mut meta = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next_if(|l| l.starts_with('#')) {
        let body = line[1..].trim_start();
        if let Some(kv) = body.strip_prefix("config ") {
            config.push_str(kv);
            config.push('\n');
            continue;
        }
        let (k, v) = body
            .split_once(" = ")
            .ok_or_else(|| bad(format!("comment line {line:?} is not `key = value`")))?;
        match k {
            "code_version" => version = Some(v.to_string()),
            "status" => status = Some(v == "complete"),
            _ => meta.push((k.to_string(), v.to_string())),
        }
    }
    let columns: Vec<String> = lines
        .next()
        .ok_or_else(|| bad("no column header".into()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for l in lines {
        let cells: Vec<Option<String>> = l
            .split(',')
            .map(|c| (!c.is_empty()).then(|| c.to_owned()))
            .collect();
        if cells.len() != columns.len() {
            return Err(bad(format!(
                "row {l:?} has {} cells, header has {}",
                cells.len(),
                columns.len()
            )));
        }
        rows.push(cells);
    }
    Ok(ParsedResults {
        code_version: version.ok_or_else(|| bad("no code_version line".into()))?,
        complete: status.ok_or_else(|| bad("no status line".into()))?,
        config: ExperimentConfig::parse_text(&config)?,
        meta,
        columns,
        rows,
    })
}

pub fn read_results(path: &Path) -> Result<ParsedResults> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_results(&text, path)
}

/// Layout of an experiment's output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub name: String,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            root: cfg.out_dir.clone(),
            name: cfg.name.clone(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root.join("runs").join(&self.name)
    }

    pub fn run_csv(&self, run: usize) -> PathBuf {
        self.run_dir().join(format!("run{run}.csv"))
    }

    pub fn timing_csv(&self, run: usize) -> PathBuf {
        self.run_dir().join(format!("run{run}.timing.csv"))
    }

    pub fn summary(&self) -> PathBuf {
        self.run_dir().join("summary.csv")
    }

    pub fn checkpoint(&self, run: usize, tag: &str) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{}-run{run}-{tag}.stdac", self.name))
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn viz_dir(&self) -> PathBuf {
        self.root.join("viz")
    }
}
