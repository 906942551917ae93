use thiserror::Error;

use crate::model::ValidationReport;

/// Which Gibbs block a failure came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    LatentUtility,
    Ability,
    Growth,
    TestEffect,
    TestEffectPrecision,
    DayEffect,
    DayEffectPrecision,
    DriftPrecision,
    KsScale,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Block::LatentUtility => "latent utilities",
            Block::Ability => "abilities",
            Block::Growth => "growth rate",
            Block::TestEffect => "test effects",
            Block::TestEffectPrecision => "test-effect precision",
            Block::DayEffect => "day effects",
            Block::DayEffectPrecision => "day-effect precision",
            Block::DriftPrecision => "drift precision",
            Block::KsScale => "K-S scales",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset is malformed: {0}")]
    Malformed(String),

    #[error("dataset failed validation: {0}")]
    Validation(ValidationReport),

    #[error("numeric failure in {block} update (individual {individual}, day {day:?}): {detail}")]
    Numeric {
        block: Block,
        individual: usize,
        day: Option<usize>,
        detail: String,
    },

    #[error("degenerate gamma rate in {block} update{}", individual.map(|i| format!(" (individual {i})")).unwrap_or_default())]
    DegenerateRate {
        block: Block,
        individual: Option<usize>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {detail}")]
    Csv { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
