//! Reductions of matching, ℓ1-SVM training and shortest paths to
//! standard-form LPs, with decoders back to domain objects.

mod matching;
mod shortest_path;
mod svm;

use serde::{Deserialize, Serialize};

pub use matching::{
    build_matching_lp, decode_matching, embed_assignment, slack_gamma, DecodedMatching, MatchingInstance,
};
pub use shortest_path::{build_shortest_path_lp, Arc, Graph};
pub use svm::{
    build_l1svm_lp, decode_svm, fit_pairwise, fit_svm, pairwise_multiclass, Kernel, PairwiseClassifier,
    PairwiseProblem, SvmClassifier, SvmInstance, SvmLayout, SvmParams,
};

/// One-to-one map from rows (templates) to columns (proposals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub map: Vec<usize>,
    pub cost: f64,
}
