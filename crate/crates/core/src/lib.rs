//! High-recall approximate top-k for linear scorers.
//!
//! A cheap approximation of a score matrix (low-rank factors, int4 codes, or
//! both) proposes `k'` candidate columns; only those columns are scored
//! exactly, and their top-k is returned. The crate also covers the softmax and
//! feedforward layers built on that primitive, a sharded variant, recall and
//! cost metrics, and a gather microbenchmark.

pub mod approx;
pub mod bench;
pub mod distributed;
pub mod error;
pub mod experiment;
pub mod ffn;
pub mod hire;
pub mod instance;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod svd;

pub use approx::{
    fit_low_rank_svd, quantize_int4, random_low_rank, round_bf16, ApproxScorer, LowRankApprox, QuantizedLowRank,
    QuantizedMatrix, ScorerKind,
};
pub use distributed::{da_group_sparse, da_topk, shard, CommReport, ShardedScorer};
pub use error::{HireError, Result};
pub use ffn::{
    ffn_common_path, ffn_dense, ffn_group_sparse, ffn_topk, group_proxy, union_group_select, CommonPathFFN,
    GroupIndexSet, GroupedFFN,
};
pub use hire::{hire_topk, softmax_full, softmax_topk, CandidateSet, HireConfig, SparseDistribution};
pub use linalg::{exact_topk, matvec, topk_select, ActivationKind, DenseVector, ScoreMatrix, ScoredIndex, TopKSet};
pub use metrics::{overlap_ratio, param_bytes, recall, CostReport, RecallReport};
