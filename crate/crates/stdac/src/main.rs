use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use stdac::curves::{emit_curves, Variant};
use stdac::results::{read_results, Layout};
use stdac::stdac_core::dac::Model;
use stdac::stdac_core::metrics::score;
use stdac::{checkpoint_file, load_dataset, run_experiment, viz, Dataset, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "stdac",
    version,
    about = "Deep adaptive clustering with spatial transformer layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Fashion,
}

impl From<DatasetArg> for Dataset {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => Dataset::Mnist,
            DatasetArg::Fashion => Dataset::Fashion,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VizKind {
    /// Original images next to the first ST layer's output.
    St,
    /// Per-class mean, std and variance images.
    Stats,
    /// Training curves of every run found next to the checkpoint.
    Curves,
}

#[derive(Subcommand)]
enum Command {
    /// Train `repeat` runs and write CSV logs, a summary and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        st_layers: Option<usize>,
        /// Changes the dataset only; thresholds stay as configured.
        #[arg(long)]
        dataset: Option<DatasetArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Results name (defaults to the config's `name`).
        #[arg(long)]
        name: Option<String>,
    },
    /// Score a checkpoint's clustering on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<DatasetArg>,
        /// Directory with the IDX files (defaults to the checkpoint's).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Use only the first N images (0: all).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write visualizations.
    Viz {
        /// Repeat to put several models side by side (`st` kind).
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: VizKind,
        /// Number of images in the `st` grid.
        #[arg(long, default_value_t = 8)]
        images: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            st_layers,
            dataset,
            seed,
            out,
            name,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = st_layers {
                cfg.st_layer_count = n;
            }
            if let Some(d) = dataset {
                cfg.dataset = d.into();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(n) = name {
                cfg.set("name", &n)?;
            }
            train(&cfg)
        }
        Command::Eval {
            checkpoint,
            dataset,
            data_dir,
            limit,
        } => {
            let (mut cfg, mut model) = checkpoint_file::load(&checkpoint)?;
            if let Some(d) = dataset {
                cfg.dataset = d.into();
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            if let Some(l) = limit {
                cfg.limit = l;
            }
            let data = load_dataset(&cfg)?;
            let truth = data.labels().context("dataset has no label file")?;
            let f = model.label_features(data.images(), cfg.eval_batch)?;
            let pred = stdac::stdac_core::dac::cluster_assign(&f);
            let s = score(&pred, &truth.into())?;
            println!("images {}", data.len());
            println!("acc {:.6}\nnmi {:.6}\nari {:.6}", s.acc, s.nmi, s.ari);
            Ok(())
        }
        Command::Viz {
            checkpoint,
            kind,
            images,
            out,
        } => viz_command(&checkpoint, kind, images, out),
    }
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let data = load_dataset(cfg)
        .with_context(|| format!("loading {} from {}", cfg.dataset, cfg.data_dir.display()))?;
    eprintln!(
        "{}: {} images, {} ST layer(s), {} run(s)",
        cfg.name,
        data.len(),
        cfg.st_layer_count,
        cfg.repeat
    );
    let out = run_experiment(cfg, &data, |run, row| {
        let s = row.scores.map_or_else(String::new, |s| {
            format!(" acc {:.4} nmi {:.4} ari {:.4}", s.acc, s.nmi, s.ari)
        });
        eprintln!(
            "run {run} epoch {:>2} loss {:.4} selected {:.3}{s} ({:.0}s)",
            row.epoch, row.loss, row.selected_fraction, row.wall_seconds
        );
    })?;
    eprintln!("summary: {}", out.summary.display());
    Ok(())
}

fn viz_command(
    checkpoints: &[PathBuf],
    kind: VizKind,
    count: usize,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut loaded: Vec<(ExperimentConfig, Model)> = checkpoints
        .iter()
        .map(|p| checkpoint_file::load(p).with_context(|| p.display().to_string()))
        .collect::<anyhow::Result<_>>()?;
    let cfg = loaded[0].0.clone();
    let layout = Layout::new(&cfg);
    let dir = out.clone().unwrap_or_else(|| layout.viz_dir());
    match kind {
        VizKind::Curves => {
            let runs = cfg.out_dir.join("runs");
            let variants = collect_variants(&runs)?;
            if variants.is_empty() {
                bail!("no run CSVs under {}", runs.display());
            }
            let res = emit_curves(&variants, &out.unwrap_or_else(|| layout.curves_dir()))?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", res.manifest.display());
        }
        VizKind::St => {
            let data = load_dataset(&cfg)?;
            let n = count.min(data.len());
            let imgs = data.images().slice_rows(0, n);
            let labels: Vec<String> = checkpoints
                .iter()
                .map(|p| {
                    p.file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned()
                })
                .collect();
            let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
            let mut models: Vec<&mut Model> = loaded.iter_mut().map(|(_, m)| m).collect();
            println!(
                "{}",
                viz::emit_st_visuals(&mut models, &labels, &imgs, &dir)?.display()
            );
        }
        VizKind::Stats => {
            let data = load_dataset(&cfg)?;
            let model = &mut loaded[0].1;
            for p in viz::class_statistics(Some(model), data.images(), data.labels(), &dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Every `run<i>.csv` under `runs/<name>/`, labeled `<name>` (or
/// `<name>/run<i>` when a variant has several runs).
fn collect_variants(runs: &Path) -> anyhow::Result<Vec<Variant>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(runs)
        .with_context(|| runs.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let name = d
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let mut csvs: Vec<PathBuf> = std::fs::read_dir(&d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let f = p.file_name().unwrap_or_default().to_string_lossy();
                f.starts_with("run") && f.ends_with(".csv") && !f.ends_with(".timing.csv")
            })
            .collect();
        csvs.sort();
        let several = csvs.len() > 1;
        for c in csvs {
            let record = read_results(&c)?.run_record()?;
            let label = if several {
                format!("{name}/run{}", record.run)
            } else {
                name.clone()
            };
            out.push(Variant { label, record });
        }
    }
    Ok(out)
}
