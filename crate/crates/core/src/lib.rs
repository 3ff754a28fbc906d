//! Distribution feature matching for label-shift quantification.
//!
//! Estimate the class proportions of an unlabeled target sample by matching
//! a weighted sum of class-conditional mean embeddings to the target mean
//! embedding, under hard (simplex) or soft (sub-simplex) constraints. The
//! soft variant absorbs contaminant mass into a dummy class and is robust to
//! noise whose embedding is nearly orthogonal to the class geometry.
//!
//! Module map:
//! - [`data`]: datasets and the class partition
//! - [`linalg`]: small symmetric eigen solves and deterministic sums
//! - [`rng`]: splittable seeded random streams
//! - [`featmap`]: random Fourier features, one-hot classifier features,
//!   exact energy/Gaussian kernel paths
//! - [`solver`]: simplex QP (hard/soft) and the unconstrained BBSE solve
//! - [`diagnostics`]: Gram spectra, finite-sample certificates, bandwidth
//!   selection, contamination decomposition
//! - [`harness`]: synthetic benchmark generators and experiment runners
//! - [`io`]/[`chart`]: CSV readers and SVG output

pub mod chart;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod featmap;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod solver;

pub use data::{split_by_class, PointBlock, SourceDataset, TargetDataset};
pub use diagnostics::{
    contamination_decomposition, contamination_from_problem, default_sigma_grid,
    select_bandwidth, spectrum, spectrum_from_gram, theorem1_bound, theorem1_bound_from_parts,
    BoundCertificate, ContaminationReport, SpectrumReport,
};
pub use error::{DfmError, Result};
pub use featmap::{
    embed_means, kernel_problem, nearest_centroid_crossfit, onehot_from_predictions, rff_sample,
    rff_sample_cos_shift, ClassEmbeddings, EmbeddingStats, ExplicitEmbedder, KernelBackend,
    RffVariant,
};
pub use harness::{
    run_contamination_sweep, run_holdout_class, sample_experiment, scaling_probe,
    ExperimentResult, MethodId, MethodParams, MixtureSpec, NoiseKind, NoiseSpec, SweepConfig,
};
pub use linalg::SymMatrix;
pub use rng::RngStream;
pub use solver::{
    project_simplex, solve_bbse_unconstrained, solve_hard, solve_soft, Mode, ProportionEstimate,
    QuantProblem,
};
