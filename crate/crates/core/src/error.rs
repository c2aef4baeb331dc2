use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The plant state stopped being finite. Carries the simulation time of
    /// the offending sample.
    #[error("numerical blow-up at t = {t:.6} s: {detail}")]
    NonFinite { t: f64, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown feature variant `{0}`")]
    UnknownVariant(String),

    #[error("model expects feature variant {model}, controller configured for {requested}")]
    VariantMismatch { model: String, requested: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
