use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A network dimension was zero or the layer list was empty.
    InvalidSpec(&'static str),
    /// Mask, parameter, or task shapes disagree.
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// Task output arity does not match the network output layer.
    ArityMismatch {
        task: usize,
        network: usize,
    },
    InvalidConfig(&'static str),
    /// Training produced a non-finite loss or crossed the divergence guard.
    Diverged {
        epoch: usize,
        loss: f64,
    },
    /// Pruning would remove every surviving weight of a layer.
    LayerCollapse {
        layer: usize,
    },
    /// An IMP round failed; carries the round index.
    ImpRound {
        iteration: usize,
        source: alloc::boxed::Box<Error>,
    },
    /// Every weight is pruned, so magnitude fractions are undefined.
    ZeroMagnitude,
    InsufficientPoints {
        needed: usize,
        found: usize,
    },
    NonPositiveLoss {
        index: usize,
    },
    EmptyTrace,
    InvalidArgument(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSpec(msg) => write!(f, "invalid network spec: {msg}"),
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "{what} shape mismatch: expected {expected}, found {found}"
            ),
            Error::ArityMismatch { task, network } => write!(
                f,
                "task expects {task} network outputs but the network has {network}"
            ),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss})")
            }
            Error::LayerCollapse { layer } => {
                write!(f, "pruning would remove every weight of layer {layer}")
            }
            Error::ImpRound { iteration, source } => {
                write!(f, "IMP iteration {iteration} failed: {source}")
            }
            Error::ZeroMagnitude => write!(f, "no surviving weight magnitude"),
            Error::InsufficientPoints { needed, found } => {
                write!(f, "need at least {needed} points, found {found}")
            }
            Error::NonPositiveLoss { index } => {
                write!(f, "loss at trace index {index} is not positive")
            }
            Error::EmptyTrace => write!(f, "trace is empty"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
