//! Exit-code classification: 2 usage/config, 3 data, 4 safety refusal.

use affectva::corpus::CorpusError;
use affectva::experiments::ExperimentError;
use affectva::model::ModelError;
use affectva::trainer::TrainError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const REFUSED: u8 = 4;
pub const INTERNAL: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Self::new(USAGE, anyhow::anyhow!("{msg}"))
    }

    pub fn context(mut self, ctx: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }
}

pub fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::InvalidManifest(_) | CorpusError::InvalidDescriptor(_) | CorpusError::UnknownAdapter(_) => USAGE,
        _ => DATA,
    }
}

pub fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::TokenizationFailure(_) | ModelError::EmptyBatch => DATA,
        _ => USAGE,
    }
}

pub fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::InvalidConfig(_)
        | TrainError::OutOfMemoryGuidance { .. }
        | TrainError::AccumulationUnsupportedForBatchLoss(_)
        | TrainError::MicroBatchSizes { .. }
        | TrainError::Loss(_) => USAGE,
        TrainError::Model(m) => model_code(m),
        TrainError::NonFiniteLoss { .. } | TrainError::EmptyFold(_) => DATA,
        TrainError::Io { .. } => INTERNAL,
    }
}

pub fn experiment_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::InvalidPlan(_) | ExperimentError::EmptyHoldout(_) | ExperimentError::UnknownDatasetId(_) => USAGE,
        ExperimentError::ProtocolViolation(_) | ExperimentError::Metrics(_) => DATA,
        ExperimentError::Train(t) => train_code(t),
        ExperimentError::Model(m) => model_code(m),
        ExperimentError::Corpus(c) => corpus_code(c),
        ExperimentError::Io { .. } => INTERNAL,
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Self::new(corpus_code(&e), e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self::new(model_code(&e), e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Self::new(train_code(&e), e)
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Self::new(experiment_code(&e), e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(INTERNAL, e)
    }
}
