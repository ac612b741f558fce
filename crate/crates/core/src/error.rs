use alloc::boxed::Box;
use alloc::string::String;

use crate::bp::BpResult;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph needs at least one node")]
    EmptyGraph,
    #[error("expected length {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("value {value} at position {index} is not binary")]
    NonBinary { index: usize, value: u8 },
    #[error("{what}: {size} exceeds the enumeration limit of {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error("graph is not a grid produced by grid_graph")]
    NotAGrid,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("beliefs leave the Fréchet interior at {0}")]
    BoundaryBeliefs(String),
    #[error("belief propagation did not converge after {} iterations (delta {:e})", .0.iterations, .0.final_delta)]
    BpNotConverged(Box<BpResult>),
    #[error("singular matrix (condition estimate {0:e})")]
    Singular(f64),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate chains: {0}")]
    Degenerate(String),
}
