use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance matrix {index} is not symmetric positive definite")]
    NotPositiveDefinite { index: usize },

    #[error("mixture weights sum to {sum}, expected 1 (tolerance 1e-9)")]
    WeightsNotNormalized { sum: f64 },

    #[error("discrete chain needs at least {min} states, got {got}")]
    ChainTooSmall { min: usize, got: usize },

    #[error("invalid discrete chain: {0}")]
    InvalidChain(String),

    #[error("chain is not flagged reversible")]
    NotReversible,

    #[error("chain state lies outside the target support")]
    OutsideSupport,

    #[error("initial state for region {region} does not lie in region {region}")]
    InitOutsideRegion { region: usize },

    #[error("invalid temperature ladder: {0}")]
    InvalidLadder(String),

    #[error("rejection sampling failed: no support point found in the box after {cap} draws")]
    RejectionCapExceeded { cap: usize },

    #[error(
        "landmark {index} has zero affinity degree; increase the proposal scale tau or the \
         subsample size"
    )]
    IsolatedLandmark { index: usize },

    #[error("subsample size {subsample} is smaller than the region count {regions}")]
    SubsampleTooSmall { subsample: usize, regions: usize },

    #[error("sample bank is empty")]
    EmptyBank,

    #[error("landmark {index} has a zero embedding row; the fitted model is degenerate")]
    ZeroEmbeddingRow { index: usize },

    #[error("eigenvalue {index} is {value:.3e}, below the 1e-10 degeneracy guard")]
    DegenerateEigenvalue { index: usize, value: f64 },

    #[error("unreachable point: zero affinity to every landmark")]
    UnreachablePoint,

    #[error("point has affinity only to landmarks outside the leading eigenspace")]
    DegenerateProjection,

    #[error("k-means called on an empty point set")]
    EmptyKmeansInput,

    #[error("k-means cluster count {k} exceeds the number of points {points}")]
    TooManyClusters { k: usize, points: usize },

    #[error(
        "only {got} region samples but {needed} are needed to fit a bridge proposal; run a \
         longer exploration phase for that region"
    )]
    TooFewSamples { needed: usize, got: usize },

    #[error("bridge estimate degenerate: {0}")]
    BridgeDegenerate(String),

    #[error("weight {index} is {value} but must be positive and finite")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("region {region} contains no bank points; increase N0 or the exploration budget")]
    EmptyRegion { region: usize },

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("burn-in {burn_in} is not smaller than the trace length {len}")]
    BurnInTooLarge { burn_in: usize, len: usize },

    #[error("conductance undefined for an empty or full state subset")]
    DegenerateSubset,

    #[error("exhaustive conductance search supports at most {cap} states, got {got}")]
    ConductanceSizeCap { cap: usize, got: usize },

    #[error("spectral gap undefined: {0}")]
    ZeroGap(String),

    #[error("discretization grid needs at least {min} points, got {got}")]
    GridTooCoarse { min: usize, got: usize },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("failed to parse persisted model: {0}")]
    Persist(String),
}

impl Error {
    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
