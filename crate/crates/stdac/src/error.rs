use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: bad magic {found:#010x}, expected {expected:#010x}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{}: truncated, expected {expected} bytes, found {actual}", path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{}: label {label} outside 0..=9 at index {index}", path.display())]
    LabelRange {
        path: PathBuf,
        index: usize,
        label: u8,
    },
    #[error("config line {line}: {msg}")]
    ConfigSyntax { line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("ground-truth labels are required")]
    MissingLabels,
    #[error("{}: malformed results file: {msg}", path.display())]
    Results { path: PathBuf, msg: String },
    #[error("run {run} failed after {epochs} epoch(s), partial results kept in {}: {source}", dir.display())]
    RunFailed {
        run: usize,
        epochs: usize,
        dir: PathBuf,
        #[source]
        source: stdac_core::Error,
    },
    #[error(transparent)]
    Core(#[from] stdac_core::Error),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
