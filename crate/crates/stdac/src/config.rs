//! Experiment configuration as a flat `key = value` text file.
//!
//! Keys are the field names of [`ExperimentConfig`]. Blank lines and lines
//! starting with `#` are ignored; a key may appear at most once and keys
//! left out keep their defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stdac_core::augment::AugmentConfig;
use stdac_core::dac::{BackboneConfig, FitConfig, ThresholdState, TrainConfig};
use stdac_core::optim::AdamConfig;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Mnist,
    Fashion,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Fashion => "fashion",
        }
    }

    /// Initial thresholds `(u0, l0)` used for this dataset.
    pub fn default_thresholds(self) -> (f64, f64) {
        let t = match self {
            Dataset::Mnist => ThresholdState::mnist(),
            Dataset::Fashion => ThresholdState::fashion(),
        };
        (t.u0, t.l0)
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Dataset::Mnist),
            "fashion" => Ok(Dataset::Fashion),
            _ => Err(Error::Config(format!(
                "unknown dataset {s:?} (mnist|fashion)"
            ))),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which IDX split(s) to cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    /// Train and test concatenated.
    All,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "all" => Ok(Split::All),
            _ => Err(Error::Config(format!("unknown split {s:?} (train|all)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Names the results directory `runs/<name>`.
    pub name: String,
    pub dataset: Dataset,
    pub data_dir: PathBuf,
    pub split: Split,
    /// Keep only the first `limit` images; 0 keeps all.
    pub limit: usize,
    pub st_layer_count: usize,
    pub cluster_count: usize,
    pub u0: f64,
    pub l0: f64,
    pub rate: f64,
    pub include_diagonal: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub eval_batch: usize,
    pub rotation_deg: f64,
    pub translation_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub resample_per_epoch: bool,
    pub max_epochs: usize,
    pub repeat: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        let aug = fit.train.augment;
        ExperimentConfig {
            name: "mnist".into(),
            dataset: Dataset::Mnist,
            data_dir: "data/mnist".into(),
            split: Split::Train,
            limit: 0,
            st_layer_count: fit.backbone.st_layer_count,
            cluster_count: fit.backbone.cluster_count,
            u0: fit.thresholds.u0,
            l0: fit.thresholds.l0,
            rate: fit.thresholds.rate,
            include_diagonal: fit.train.include_diagonal,
            lr: fit.train.adam.lr,
            beta1: fit.train.adam.beta1,
            beta2: fit.train.adam.beta2,
            epsilon: fit.train.adam.epsilon,
            batch_size: fit.train.batch_size,
            eval_batch: fit.train.eval_batch,
            rotation_deg: aug.rotation_deg,
            translation_frac: aug.translation_frac,
            scale_min: aug.scale_min,
            scale_max: aug.scale_max,
            resample_per_epoch: aug.resample_per_epoch,
            max_epochs: fit.max_epochs,
            repeat: 1,
            seed: 0,
            out_dir: "out".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn path_text(p: &Path) -> Result<String> {
    p.to_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Config(format!("path {} is not UTF-8", p.display())))
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 26] = [
        "name",
        "dataset",
        "data_dir",
        "split",
        "limit",
        "st_layer_count",
        "cluster_count",
        "u0",
        "l0",
        "rate",
        "include_diagonal",
        "lr",
        "beta1",
        "beta2",
        "epsilon",
        "batch_size",
        "eval_batch",
        "rotation_deg",
        "translation_frac",
        "scale_min",
        "scale_max",
        "resample_per_epoch",
        "max_epochs",
        "repeat",
        "seed",
        "out_dir",
    ];

    /// Defaults for a dataset, thresholds included.
    pub fn for_dataset(dataset: Dataset) -> Self {
        let (u0, l0) = dataset.default_thresholds();
        ExperimentConfig {
            name: dataset.name().into(),
            dataset,
            data_dir: PathBuf::from("data").join(dataset.name()),
            u0,
            l0,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => {
                if value.is_empty() || value.contains(['/', '\\']) {
                    return Err(Error::Config(format!(
                        "name {value:?} must be a plain directory name"
                    )));
                }
                self.name = value.into()
            }
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = value.into(),
            "split" => self.split = value.parse()?,
            "limit" => self.limit = parse(key, value)?,
            "st_layer_count" => self.st_layer_count = parse(key, value)?,
            "cluster_count" => self.cluster_count = parse(key, value)?,
            "u0" => self.u0 = parse(key, value)?,
            "l0" => self.l0 = parse(key, value)?,
            "rate" => self.rate = parse(key, value)?,
            "include_diagonal" => self.include_diagonal = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_batch" => self.eval_batch = parse(key, value)?,
            "rotation_deg" => self.rotation_deg = parse(key, value)?,
            "translation_frac" => self.translation_frac = parse(key, value)?,
            "scale_min" => self.scale_min = parse(key, value)?,
            "scale_max" => self.scale_max = parse(key, value)?,
            "resample_per_epoch" => self.resample_per_epoch = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "repeat" => self.repeat = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = value.into(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` text, in declaration order.
    pub fn pairs(&self) -> Result<Vec<(&'static str, String)>> {
        let values = [
            self.name.clone(),
            self.dataset.to_string(),
            path_text(&self.data_dir)?,
            self.split.to_string(),
            self.limit.to_string(),
            self.st_layer_count.to_string(),
            self.cluster_count.to_string(),
            self.u0.to_string(),
            self.l0.to_string(),
            self.rate.to_string(),
            self.include_diagonal.to_string(),
            self.lr.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.epsilon.to_string(),
            self.batch_size.to_string(),
            self.eval_batch.to_string(),
            self.rotation_deg.to_string(),
            self.translation_frac.to_string(),
            self.scale_min.to_string(),
            self.scale_max.to_string(),
            self.resample_per_epoch.to_string(),
            self.max_epochs.to_string(),
            self.repeat.to_string(),
            self.seed.to_string(),
            path_text(&self.out_dir)?,
        ];
        Ok(Self::KEYS.iter().copied().zip(values).collect())
    }

    /// Parses the `key = value` text. Unknown or repeated keys are errors.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        let mut dataset_given = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if seen.contains(&k) {
                return Err(Error::ConfigSyntax {
                    line: i + 1,
                    msg: format!("key {k:?} repeated"),
                });
            }
            seen.push(k);
            if k == "dataset" {
                dataset_given = Some(v.parse::<Dataset>()?);
            }
        }
        // dataset-dependent defaults first, explicit keys override them
        if let Some(d) = dataset_given {
            cfg = Self::for_dataset(d);
        }
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').expect("checked above");
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::ConfigSyntax {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(self
            .pairs()?
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(io_err(path))
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            rotation_deg: self.rotation_deg,
            translation_frac: self.translation_frac,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            resample_per_epoch: self.resample_per_epoch,
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            st_layer_count: self.st_layer_count,
            cluster_count: self.cluster_count,
            ..BackboneConfig::default()
        }
    }

    /// Training settings for repeat `run` (seeded with `seed + run`).
    pub fn fit_config(&self, run: usize) -> FitConfig {
        FitConfig {
            backbone: self.backbone(),
            train: TrainConfig {
                batch_size: self.batch_size,
                adam: AdamConfig {
                    lr: self.lr,
                    beta1: self.beta1,
                    beta2: self.beta2,
                    epsilon: self.epsilon,
                },
                augment: self.augment(),
                include_diagonal: self.include_diagonal,
                eval_batch: self.eval_batch,
                seed: self.seed.wrapping_add(run as u64),
            },
            thresholds: ThresholdState::new(self.u0, self.l0, self.rate),
            max_epochs: self.max_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone().validate()?;
        self.augment().validate()?;
        if self.batch_size < stdac_core::batch::MIN_BATCH {
            return Err(Error::Config(format!(
                "batch_size {} below 2",
                self.batch_size
            )));
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be positive".into()));
        }
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be at least 1".into()));
        }
        for (k, v) in [
            ("u0", self.u0),
            ("l0", self.l0),
            ("rate", self.rate),
            ("lr", self.lr),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{k} must be finite")));
            }
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}
