use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed model document: {0}")]
    MalformedDocument(String),

    #[error("unsupported operator in node(s): {}", .0.join(", "))]
    UnsupportedOperator(Vec<String>),

    #[error("computation graph contains a cycle through: {}", .0.join(", "))]
    CyclicGraph(Vec<String>),

    #[error("shape mismatch on `{edge}`: {detail}")]
    ShapeMismatch { edge: String, detail: String },

    #[error("non-finite activation produced by node `{0}`")]
    NonFiniteActivation(String),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("invalid hypothesis configuration: {0}")]
    InvalidConfig(String),

    #[error("score map is constant; min-max normalization is undefined")]
    DegenerateNormalization,

    #[error("region of interest is empty")]
    EmptyRoi,

    #[error("region of interest covers every unmasked pixel")]
    FullRoi,

    #[error("neighborhood of the region of interest is empty")]
    EmptyNeighborhood,

    #[error("complement of the region of interest is empty")]
    EmptyComplement,

    #[error("covariance is singular or not positive definite: {0}")]
    SingularCovariance(String),

    #[error("observed statistic {z_obs} lies outside the truncation region")]
    ObservationOutsideRegion { z_obs: f64 },

    #[error("truncation region has zero probability mass")]
    ZeroDenominator,

    #[error("parametric search stalled near z = {z}: {count} consecutive intervals narrower than {min_width}")]
    StalledSearch { z: f64, count: usize, min_width: f64 },

    #[error("invalid synthetic data spec: {0}")]
    InvalidSpec(String),
}

impl Error {
    pub(crate) fn shape(edge: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { edge: edge.into(), detail: detail.into() }
    }

    /// True for failures caused by a statistically degenerate hypothesis
    /// (empty or full ROI, empty comparison region, constant score) rather
    /// than by a bug or bad input.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::EmptyRoi
                | Error::FullRoi
                | Error::EmptyNeighborhood
                | Error::EmptyComplement
                | Error::DegenerateNormalization
        )
    }
}
