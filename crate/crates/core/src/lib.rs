//! Bethe–Laplace posterior approximation for binary pairwise random fields
//! and tied-weight linear-chain conditional random fields.
//!
//! The crate is `no_std` and needs only `alloc`. Everything here is a pure
//! function of its inputs and an explicit seed; file formats, CSV output and
//! the experiment runner live in the companion `bethe-cli` crate.
//!
//! Variables are binary with values in `{0, 1}`. A model with `n` nodes and
//! `m` edges has `F = n + m` features, ordered nodes first and then edges in
//! lexicographic order; every vector and matrix in the crate uses that order.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;
mod optimize;

pub mod bp;
pub mod crf;
pub mod evaluation;
pub mod exact;
pub mod fit;
pub mod graph;
pub mod posterior;
pub mod response;
pub mod samplers;

pub use error::{Error, Result};

pub use bp::{Beliefs, BpOptions, BpResult, Schedule, BELIEF_FLOOR};
pub use evaluation::{cvm_score, CvmReport};
pub use graph::{Dataset, GaussianPrior, Graph, GridShape, PairwiseBinaryModel};
pub use posterior::{GaussianPosterior, ParameterSampleSet, Provenance};

pub mod prelude {
    pub use crate::bp::{run_max_product, run_sum_product, BpOptions};
    pub use crate::crf::{
        crf_fit_map, crf_posterior, forward_backward, predict_vote, supergraph_predict, viterbi,
        ChainCrfModel, Sequence, SequenceDataset,
    };
    pub use crate::exact::{brute_log_z, brute_moments, grid_log_z_and_marginals, perfect_sample};
    pub use crate::fit::{fit_map, Backend, FitOptions};
    pub use crate::graph::{build_graph, grid_graph, Dataset, GaussianPrior, PairwiseBinaryModel};
    pub use crate::posterior::{assemble_posterior, sample_posterior};
    pub use crate::response::lr_covariance;
    pub use crate::{cvm_score, Error, Result};
}
