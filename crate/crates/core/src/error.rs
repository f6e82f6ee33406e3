use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed maze layout: {0}")]
    MalformedLayout(String),
    #[error("maze has no goal cell")]
    NoGoal,
    #[error("maze has {0} goal cells, expected exactly one")]
    MultipleGoals(usize),
    #[error("maze has no start region")]
    MissingStartRegion,
    #[error("goal unreachable from start cell ({row}, {col})")]
    UnreachableGoal { row: usize, col: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no path between ({0}, {1}) and ({2}, {3})")]
    NoPath(usize, usize, usize, usize),
    #[error("demonstration generation failed after {0} attempts")]
    DemoGenerationFailed(usize),
    #[error("no trajectory is long enough for a {0}-step window")]
    NoValidWindow(usize),
    #[error("dataset file: {0}")]
    DatasetFormat(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("non-finite {what} at gradient step {step}; batch dumped to {dump:?}")]
    NonFiniteLoss { what: String, step: u64, dump: Option<PathBuf> },
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] skild_nn::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
