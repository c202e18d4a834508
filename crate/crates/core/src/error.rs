use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Schema,
    Numerical,
    Degenerate,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid value for {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    #[error("joint {joint} has depth {depth_mm} mm, at or behind the camera")]
    DepthTooSmall { joint: usize, depth_mm: f64 },

    #[error("bone endpoint joint {joint} is missing or invisible")]
    MissingJoint { joint: usize },

    #[error("joint {joint} heatmap has no positive activation")]
    AllZeroHeatmap { joint: usize },

    #[error("non-finite activation in lifting network")]
    NonFiniteActivation,

    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("degenerate 2D scale: torso bone sum {s2d_px} px")]
    DegenerateScale { s2d_px: f64 },

    #[error("no person has at least 3 visible joints")]
    NoVisibleJoints,

    #[error("reprojection residual became non-finite")]
    NonFiniteResidual,

    #[error("no matched prediction/ground-truth pairs")]
    EmptyMatching,

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSkeleton(_)
            | Error::ShapeMismatch { .. }
            | Error::InvalidInput { .. }
            | Error::Schema { .. } => ErrorClass::Schema,
            Error::DepthTooSmall { .. }
            | Error::NonFiniteActivation
            | Error::DivergedLoss { .. }
            | Error::NonFiniteResidual => ErrorClass::Numerical,
            Error::MissingJoint { .. }
            | Error::AllZeroHeatmap { .. }
            | Error::DegenerateScale { .. }
            | Error::NoVisibleJoints
            | Error::EmptyMatching => ErrorClass::Degenerate,
            Error::Stage { source, .. } => source.class(),
            Error::Io(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
        Error::InvalidInput {
            field,
            reason: reason.into(),
        }
    }
}
