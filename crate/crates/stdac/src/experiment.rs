//! Repeated training runs with per-epoch logging, summaries and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use stdac_core::dac::fit;
use stdac_core::data::ImageSet;
use stdac_core::Tensor;

use crate::checkpoint_file;
use crate::config::{ExperimentConfig, Split};
use crate::error::{Error, Result};
use crate::idx::load_idx;
use crate::results::{self, EpochRow, Layout, RunRecord};

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "{stem}[.gz] not found in {}",
        dir.display()
    )))
}

/// Loads the configured split from `data_dir`, which holds the standard
/// `train-*`/`t10k-*` IDX file names, optionally gzip-compressed.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<ImageSet> {
    let load = |prefix: &str| -> Result<ImageSet> {
        let images = find(&cfg.data_dir, &format!("{prefix}-images-idx3-ubyte"))?;
        let labels = find(&cfg.data_dir, &format!("{prefix}-labels-idx1-ubyte")).ok();
        load_idx(&images, labels.as_deref())
    };
    let mut set = load("train")?;
    if cfg.split == Split::All {
        let test = load("t10k")?;
        let images = Tensor::concat_rows(&[set.images().clone(), test.images().clone()])?;
        let labels = match (set.labels(), test.labels()) {
            (Some(a), Some(b)) => Some([a, b].concat()),
            _ => None,
        };
        set = ImageSet::new(images, labels)?;
    }
    if cfg.limit > 0 && cfg.limit < set.len() {
        set = set.subset(&(0..cfg.limit).collect::<Vec<_>>());
    }
    Ok(set)
}

/// Everything one experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub run_csvs: Vec<PathBuf>,
    pub summary: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs `cfg.repeat` trainings with seeds `seed, seed+1, …` on `data`.
///
/// Each run's CSV is rewritten after every epoch, so an interrupted run
/// leaves its rows on disk marked incomplete. The best-ACC parameters are
/// checkpointed as `<name>-run<i>-best.stdac` (the final ones when the data
/// has no labels); models with ST layers also keep their state after the
/// first epoch as `-epoch1` for before/after visualizations.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &ImageSet,
    mut progress: impl FnMut(usize, &EpochRow),
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut out = ExperimentOutput {
        records: Vec::new(),
        run_csvs: Vec::new(),
        summary: layout.summary(),
        checkpoints: Vec::new(),
    };
    for run in 0..cfg.repeat {
        let fit_cfg = cfg.fit_config(run);
        let mut rec = RunRecord {
            run,
            seed: fit_cfg.train.seed,
            initial: None,
            rows: Vec::new(),
            complete: false,
        };
        let csv_path = layout.run_csv(run);
        let mut io_error = None;
        let mut clock = Instant::now();
        let result = fit(&fit_cfg, data, |r, model| {
            let row = EpochRow {
                epoch: r.epoch,
                loss: r.loss,
                selected_fraction: r.selected_fraction,
                skipped_batches: r.skipped_batches,
                scores: r.scores,
                lambda: r.lambda,
                upper: r.upper,
                lower: r.lower,
                wall_seconds: clock.elapsed().as_secs_f64(),
            };
            progress(run, &row);
            rec.rows.push(row);
            let step = || -> Result<()> {
                results::write(&csv_path, &results::run_csv(cfg, &rec)?)?;
                results::write(&layout.timing_csv(run), &results::timing_csv(&rec))?;
                if r.epoch == 1 && cfg.st_layer_count > 0 {
                    checkpoint_file::save(&layout.checkpoint(run, "epoch1"), cfg, &model.params)?;
                }
                Ok(())
            };
            if let Err(e) = step() {
                io_error.get_or_insert(e);
            }
            clock = Instant::now();
        });
        if let Some(e) = io_error {
            return Err(e);
        }
        let fitted = match result {
            Ok(f) => f,
            Err(source) => {
                results::write(&csv_path, &results::run_csv(cfg, &rec)?)?;
                out.records.push(rec);
                results::write(
                    &layout.summary(),
                    &results::summary_csv(cfg, &out.records, false)?,
                )?;
                return Err(Error::RunFailed {
                    run,
                    epochs: out.records[run].rows.len(),
                    dir: layout.run_dir(),
                    source,
                });
            }
        };
        rec.initial = fitted.initial;
        rec.complete = true;
        results::write(&csv_path, &results::run_csv(cfg, &rec)?)?;
        let best = fitted
            .best
            .as_ref()
            .map_or(&fitted.model.params, |(_, p)| p);
        let ckpt = layout.checkpoint(run, "best");
        checkpoint_file::save(&ckpt, cfg, best)?;
        out.checkpoints.push(ckpt);
        out.run_csvs.push(csv_path);
        out.records.push(rec);
    }
    results::write(
        &layout.summary(),
        &results::summary_csv(cfg, &out.records, true)?,
    )?;
    Ok(out)
}
