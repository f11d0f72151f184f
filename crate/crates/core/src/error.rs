// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("packet for queue {got} fed to the sketch of queue {expected}")]
    QidMismatch { expected: u16, got: u16 },
    #[error("edge array of length {got} does not match {bins} bins")]
    EdgeCount { bins: usize, got: usize },
    #[error("bin edges are not strictly increasing at index {index}")]
    EdgesNotIncreasing { index: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinningError {
    #[error("no samples to fit bin edges")]
    Empty,
    #[error("degenerate distribution: quantiles {duplicated:?} coincide")]
    Degenerate { duplicated: Vec<String> },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario field {field}: {reason}")]
    Field { field: String, reason: String },
    #[error("failed to parse scenario: {0}")]
    Parse(String),
}

impl ScenarioError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("training data has no {missing} examples for {kind}")]
    SingleClass { kind: String, missing: &'static str },
    #[error("feature matrix is empty")]
    NoFeatures,
    #[error("records from windows {0} and {1} mixed in one extraction")]
    MixedWindows(u64, u64),
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
