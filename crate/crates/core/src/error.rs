use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the mapping pipeline stages.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("{0} requires non-empty input")]
    Empty(&'static str),

    #[error("line does not cross the {width}x{height} image rectangle")]
    LineOutsideImage { width: f64, height: f64 },

    #[error("ray has no cloud intersection (nearest point {residual:.3} m away)")]
    NoIntersection { residual: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("structural conflict: rows {rows:?} of frame `{frame_id}` were assigned to one global line")]
    StructuralConflict { frame_id: String, rows: Vec<usize> },

    #[error("correction #{index} rejected: {reason}")]
    Correction { index: usize, reason: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{stage} stage{}: {inner}", .frame_id.as_ref().map(|f| alloc::format!(" (frame `{f}`)")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame_id: Option<String>,
        inner: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// Wraps the error with the pipeline stage and frame it came from.
    pub fn in_stage(self, stage: &'static str, frame_id: Option<&str>) -> Self {
        Error::Stage {
            stage,
            frame_id: frame_id.map(String::from),
            inner: alloc::boxed::Box::new(self),
        }
    }

    /// The innermost error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { inner, .. } => inner.root(),
            e => e,
        }
    }

    pub(crate) fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
