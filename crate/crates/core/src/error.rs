use thiserror::Error;

use crate::sparse::Coord;

/// Errors raised by the sparse engine, the blocks and the network assembly.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate coordinate {0}")]
    DuplicateCoordinate(Coord),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("coordinate arithmetic overflow: {0}")]
    CoordinateOverflow(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
