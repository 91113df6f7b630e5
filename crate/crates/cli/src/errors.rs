use mono3d_core::depth::DepthError;
use mono3d_core::equivariance::EquivError;
use mono3d_core::geometry::GeometryError;
use mono3d_core::loss_analysis::LossError;
use mono3d_core::nms::NmsError;
use mono3d_core::target_loss::TargetError;

/// Failure classes, one per non-zero exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags or parameter values.
    Usage(String),
    /// Unreadable or malformed input files, unwritable outputs.
    Input(String),
    /// A computation produced no usable result.
    Numerical(String),
}

impl CliError {
    pub const USAGE: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const NUMERICAL: i32 = 3;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => Self::USAGE,
            CliError::Input(_) => Self::INPUT,
            CliError::Numerical(_) => Self::NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Input(m) => write!(f, "input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Parse { .. } | GeometryError::InvalidBox2D { .. } | GeometryError::InvalidBox3D(_) => {
                CliError::Input(e.to_string())
            }
            GeometryError::ResolutionTooLow(_) => CliError::Usage(e.to_string()),
            GeometryError::DegenerateHull(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<NmsError> for CliError {
    fn from(e: NmsError) -> Self {
        match e {
            NmsError::InvalidThreshold(_)
            | NmsError::MissingTemperature(_)
            | NmsError::NotDifferentiable
            | NmsError::ZeroGroupSize => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TargetError> for CliError {
    fn from(e: TargetError) -> Self {
        match e {
            TargetError::Geometry(g) => g.into(),
            TargetError::InvalidBeta(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DepthError> for CliError {
    fn from(e: DepthError) -> Self {
        match e {
            DepthError::InvalidCamera(_) | DepthError::InvalidTrend(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EquivError> for CliError {
    fn from(e: EquivError) -> Self {
        match e {
            EquivError::EvenFilterSize(_)
            | EquivError::ImageTooSmall { .. }
            | EquivError::InvalidScale(_)
            | EquivError::InvalidBank(_)
            | EquivError::InvalidGrid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
