use thiserror::Error;

/// Unified error type for the engine.
///
/// `exit_code` groups errors the way the command line reports them:
/// 2 for configuration problems, 3 for data problems, 4 for numeric
/// failures.
#[derive(Debug, Error)]
pub enum CoreError {
    // ── numeric ─────────────────────────────────────────────────────────
    #[error(transparent)]
    Tensor(#[from] cape_tensor::TensorError),
    #[error("non-finite gradient in parameter '{name}'")]
    NonFiniteGradient { name: String },
    #[error("loss became non-finite at optimization step {step}")]
    AbortOnNaN { step: u64 },

    // ── configuration ───────────────────────────────────────────────────
    #[error("invalid dataset spec: {0}")]
    SpecError(String),
    #[error("embedding width {embed_dim} is not divisible by {heads} heads")]
    HeadDivisibility { embed_dim: usize, heads: usize },
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("k={k} exceeds the {available} rankable compositions")]
    KTooLarge { k: usize, available: usize },

    // ── data ────────────────────────────────────────────────────────────
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("embedding file is missing tokens: {}", tokens.join(", "))]
    MissingToken { tokens: Vec<String> },
    #[error("{path}:{line}: vector has {found} components, expected {expected}")]
    RaggedVectors {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate name '{0}'")]
    DuplicateName(String),
    #[error("duplicate composition ({state}, {object})")]
    DuplicatePair { state: String, object: String },
    #[error("unknown name '{0}'")]
    UnknownName(String),
    #[error("unknown split tag '{0}' (expected seen, unseen_val or unseen_test)")]
    InvalidSplit(String),
    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: String, expected: String },
    #[error("{path}: file ends mid-record")]
    TruncatedFile { path: String },
    #[error("feature length mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("training step read unseen composition {composition}")]
    UnseenLabelInTraining { composition: usize },
    #[error("evaluation requires a non-empty {which} partition")]
    EmptyPartition { which: String },
    #[error("unknown composition '{0}'")]
    UnknownComposition(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is missing entry '{0}'")]
    MissingEntry(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
}

impl CoreError {
    /// Process exit code the CLI reports for this failure class.
    pub fn exit_code(&self) -> i32 {
        use CoreError::*;
        match self {
            Tensor(_) | NonFiniteGradient { .. } | AbortOnNaN { .. } => 4,
            SpecError(_) | HeadDivisibility { .. } | ConfigError(_) | KTooLarge { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
