//! Boosted-tree classifier and the hybrid global/local router.

pub mod gbdt;
pub mod hybrid;

pub use gbdt::{
    logistic_grad_hess, logistic_loss, root_split, split_gain, split_threshold, train,
    train_logged, train_records, ClassWeight, Node, SplitChoice, TrainConfig, TrainOutput, Tree,
    TreeEnsemble, MODEL_FORMAT,
};
pub use hybrid::{train_hybrid, HybridRouter, DEFAULT_LOCAL_THRESHOLD};
