//! Feature-map backends: random Fourier features, one-hot classifier
//! outputs, raw user features, and exact-kernel paths.
//!
//! Explicit backends turn datasets into [`ClassEmbeddings`] (the per-class
//! mean feature vectors Φ(P̂ᵢ) and the target mean Φ(Q̂)); kernel backends
//! skip the coordinates and produce the Gram/linear-term pair directly.
//!
//! Class means are accumulated in fixed-size row blocks combined in a
//! pairwise tree by block index, so results are bit-identical at any worker
//! count and the accumulation error stays bounded on very long inputs.

use crate::data::{split_by_class, PointBlock, SourceDataset, TargetDataset};
use crate::error::{DfmError, Result};
use crate::linalg::{tree_sum, tree_sum_vectors};
use crate::rng::RngStream;
use crate::solver::QuantProblem;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Rows per accumulation block for explicit embeddings.
const EMBED_BLOCK_ROWS: usize = 1024;
/// Outer rows per block for exact pairwise kernel sums.
const PAIR_BLOCK_ROWS: usize = 128;

/// The two random-Fourier-feature layouts for the Gaussian kernel: paired
/// cos/sin coordinates, or cosines with random phase shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RffVariant {
    CosSin,
    CosShift,
}

#[derive(Debug, Clone)]
enum EmbedderKind {
    Rff {
        variant: RffVariant,
        /// frequency-major: frequencies × input_dim
        omega: Vec<f64>,
        /// per-frequency phases, cos-shift only
        phases: Vec<f64>,
        sigma: f64,
        input_dim: usize,
        feature_dim: usize,
    },
    OneHot {
        preds_src: Vec<usize>, // 0-based
        preds_tgt: Vec<usize>,
        classes: usize,
    },
    /// Identity map over the supplied point coordinates.
    UserSupplied,
}

/// A finite-dimensional feature map Φ: ℝ^d → ℝ^D.
#[derive(Debug, Clone)]
pub struct ExplicitEmbedder {
    kind: EmbedderKind,
}

impl ExplicitEmbedder {
    pub fn user_supplied() -> Self {
        ExplicitEmbedder {
            kind: EmbedderKind::UserSupplied,
        }
    }

    /// Output dimension D, when fixed by the embedder itself.
    pub fn feature_dim(&self) -> Option<usize> {
        match &self.kind {
            EmbedderKind::Rff { feature_dim, .. } => Some(*feature_dim),
            EmbedderKind::OneHot { classes, .. } => Some(*classes),
            EmbedderKind::UserSupplied => None,
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match &self.kind {
            EmbedderKind::Rff { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    /// Φ(x) for pointwise backends. One-hot embeddings are tied to dataset
    /// rows, not raw points, so they are rejected here.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            EmbedderKind::OneHot { .. } => Err(DfmError::Parameter(
                "one-hot embedder maps dataset rows, not raw points".into(),
            )),
            EmbedderKind::UserSupplied => Ok(x.to_vec()),
            EmbedderKind::Rff { feature_dim, .. } => {
                let mut out = vec![0.0; *feature_dim];
                self.accumulate(x, &mut out);
                Ok(out)
            }
        }
    }

    /// acc += Φ(x); returns ‖Φ(x)‖².
    fn accumulate(&self, x: &[f64], acc: &mut [f64]) -> f64 {
        match &self.kind {
            EmbedderKind::Rff {
                variant,
                omega,
                phases,
                input_dim,
                feature_dim,
                ..
            } => {
                let d = *input_dim;
                match variant {
                    RffVariant::CosSin => {
                        let scale = (2.0 / *feature_dim as f64).sqrt();
                        let mut norm2 = 0.0;
                        for (k, w) in omega.chunks_exact(d).enumerate() {
                            let t: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                            let (s, c) = t.sin_cos();
                            acc[2 * k] += scale * c;
                            acc[2 * k + 1] += scale * s;
                            norm2 += scale * scale * (c * c + s * s);
                        }
                        norm2
                    }
                    RffVariant::CosShift => {
                        let scale = (2.0 / *feature_dim as f64).sqrt();
                        let mut norm2 = 0.0;
                        for (k, w) in omega.chunks_exact(d).enumerate() {
                            let t: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                            let v = scale * (t + phases[k]).cos();
                            acc[k] += v;
                            norm2 += v * v;
                        }
                        norm2
                    }
                }
            }
            EmbedderKind::UserSupplied => {
                let mut norm2 = 0.0;
                for (a, &xi) in acc.iter_mut().zip(x) {
                    *a += xi;
                    norm2 += xi * xi;
                }
                norm2
            }
            EmbedderKind::OneHot { .. } => unreachable!("one-hot handled by tabulation"),
        }
    }
}

/// Draw a cos/sin random-Fourier embedder for the Gaussian kernel
/// exp(−‖x−y‖²/(2σ²)): frequencies i.i.d. normal with per-coordinate
/// standard deviation 1/σ.
pub fn rff_sample(d: usize, features: usize, sigma: f64, rng: &mut RngStream) -> Result<ExplicitEmbedder> {
    if features == 0 || features % 2 != 0 {
        return Err(DfmError::Parameter(format!(
            "cos-sin RFF needs a positive even feature count, got {features}"
        )));
    }
    if !(sigma > 0.0) || d == 0 {
        return Err(DfmError::Parameter("rff_sample needs sigma > 0 and d >= 1".into()));
    }
    let normal = Normal::new(0.0, 1.0 / sigma).expect("valid std dev");
    let omega: Vec<f64> = (0..(features / 2) * d).map(|_| normal.sample(rng)).collect();
    Ok(ExplicitEmbedder {
        kind: EmbedderKind::Rff {
            variant: RffVariant::CosSin,
            omega,
            phases: Vec::new(),
            sigma,
            input_dim: d,
            feature_dim: features,
        },
    })
}

/// The cos-with-phase variant: D frequencies, phases uniform on [0, 2π).
pub fn rff_sample_cos_shift(
    d: usize,
    features: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<ExplicitEmbedder> {
    if features == 0 || !(sigma > 0.0) || d == 0 {
        return Err(DfmError::Parameter(
            "rff_sample_cos_shift needs features >= 1, sigma > 0, d >= 1".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0 / sigma).expect("valid std dev");
    let omega: Vec<f64> = (0..features * d).map(|_| normal.sample(rng)).collect();
    let phases: Vec<f64> = (0..features)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    Ok(ExplicitEmbedder {
        kind: EmbedderKind::Rff {
            variant: RffVariant::CosShift,
            omega,
            phases,
            sigma,
            input_dim: d,
            feature_dim: features,
        },
    })
}

/// One-hot classifier feature map from per-row predictions (1-based labels).
/// Class means reproduce the conditional confusion matrix; the target mean
/// reproduces the prediction histogram.
pub fn onehot_from_predictions(
    preds_src: &[usize],
    preds_tgt: &[usize],
    classes: usize,
) -> Result<ExplicitEmbedder> {
    if classes == 0 {
        return Err(DfmError::Parameter("class count must be positive".into()));
    }
    let check = |preds: &[usize]| -> Result<Vec<usize>> {
        preds
            .iter()
            .map(|&p| {
                if p < 1 || p > classes {
                    Err(DfmError::Parameter(format!(
                        "prediction {p} outside [1..{classes}]"
                    )))
                } else {
                    Ok(p - 1)
                }
            })
            .collect()
    };
    Ok(ExplicitEmbedder {
        kind: EmbedderKind::OneHot {
            preds_src: check(preds_src)?,
            preds_tgt: check(preds_tgt)?,
            classes,
        },
    })
}

/// Class mean embeddings Φ(P̂ᵢ), the target mean Φ(Q̂), and the sample-side
/// bookkeeping the error bounds need.
#[derive(Debug, Clone)]
pub struct ClassEmbeddings {
    /// Φ(P̂ᵢ), one vector of dim D per class.
    pub phi: Vec<Vec<f64>>,
    /// Φ(Q̂).
    pub phi_target: Vec<f64>,
    /// n_i.
    pub counts: Vec<usize>,
    /// β̃_i = n_i / n.
    pub beta_tilde: Vec<f64>,
    /// Sup-norm bound C of the feature map on the observed data.
    pub bound_c: f64,
    /// m.
    pub target_count: usize,
}

impl ClassEmbeddings {
    pub fn class_count(&self) -> usize {
        self.phi.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.phi_target.len()
    }

    pub fn source_count(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// (mean embedding, max ‖Φ(x)‖ over the rows)
fn mean_embedding(emb: &ExplicitEmbedder, data: &[f64], rows: usize, dim: usize, feature_dim: usize) -> (Vec<f64>, f64) {
    debug_assert_eq!(data.len(), rows * dim);
    let partials: Vec<(Vec<f64>, f64)> = data
        .par_chunks(EMBED_BLOCK_ROWS * dim)
        .map(|chunk| {
            let mut acc = vec![0.0; feature_dim];
            let mut max_norm2 = 0.0_f64;
            for row in chunk.chunks_exact(dim) {
                let n2 = emb.accumulate(row, &mut acc);
                max_norm2 = max_norm2.max(n2);
            }
            (acc, max_norm2)
        })
        .collect();
    let sums: Vec<Vec<f64>> = partials.iter().map(|(v, _)| v.clone()).collect();
    let total = tree_sum_vectors(&sums, feature_dim);
    let max_norm2 = partials.iter().map(|&(_, m)| m).fold(0.0_f64, f64::max);
    let inv = 1.0 / rows as f64;
    (total.iter().map(|v| v * inv).collect(), max_norm2.sqrt())
}

/// Compute class means and the target mean under an explicit feature map.
pub fn embed_means(
    emb: &ExplicitEmbedder,
    src: &SourceDataset,
    tgt: &TargetDataset,
) -> Result<ClassEmbeddings> {
    if src.dim() != tgt.dim() {
        return Err(DfmError::DimensionMismatch {
            context: "source/target dimension",
            left: src.dim(),
            right: tgt.dim(),
        });
    }
    let counts = src.class_counts();
    let beta_tilde = src.beta_tilde();

    if let EmbedderKind::OneHot {
        preds_src,
        preds_tgt,
        classes,
    } = &emb.kind
    {
        if *classes != src.class_count() {
            return Err(DfmError::DimensionMismatch {
                context: "one-hot classes",
                left: *classes,
                right: src.class_count(),
            });
        }
        if preds_src.len() != src.n() {
            return Err(DfmError::DimensionMismatch {
                context: "source predictions",
                left: preds_src.len(),
                right: src.n(),
            });
        }
        if preds_tgt.len() != tgt.m() {
            return Err(DfmError::DimensionMismatch {
                context: "target predictions",
                left: preds_tgt.len(),
                right: tgt.m(),
            });
        }
        let c = *classes;
        // integer tabulation first, division last
        let mut confusion = vec![0u64; c * c]; // [predicted][true]
        for r in 0..src.n() {
            confusion[preds_src[r] * c + src.class_index(r)] += 1;
        }
        let mut hist = vec![0u64; c];
        for &p in preds_tgt {
            hist[p] += 1;
        }
        let phi: Vec<Vec<f64>> = (0..c)
            .map(|j| {
                (0..c)
                    .map(|i| confusion[i * c + j] as f64 / counts[j] as f64)
                    .collect()
            })
            .collect();
        let phi_target: Vec<f64> = hist.iter().map(|&h| h as f64 / tgt.m() as f64).collect();
        return Ok(ClassEmbeddings {
            phi,
            phi_target,
            counts,
            beta_tilde,
            bound_c: 1.0,
            target_count: tgt.m(),
        });
    }

    let feature_dim = match &emb.kind {
        EmbedderKind::Rff {
            input_dim,
            feature_dim,
            ..
        } => {
            if *input_dim != src.dim() {
                return Err(DfmError::DimensionMismatch {
                    context: "rff input dimension",
                    left: *input_dim,
                    right: src.dim(),
                });
            }
            *feature_dim
        }
        EmbedderKind::UserSupplied => src.dim(),
        EmbedderKind::OneHot { .. } => unreachable!(),
    };

    let blocks = split_by_class(src);
    let mut phi = Vec::with_capacity(blocks.len());
    let mut max_norm = 0.0_f64;
    for b in &blocks {
        let (mean, mx) = mean_embedding(emb, &b.data, b.rows, b.dim, feature_dim);
        phi.push(mean);
        max_norm = max_norm.max(mx);
    }
    let (phi_target, mx_t) = mean_embedding(emb, tgt.points(), tgt.m(), tgt.dim(), feature_dim);
    max_norm = max_norm.max(mx_t);

    let bound_c = match &emb.kind {
        EmbedderKind::Rff {
            variant: RffVariant::CosSin,
            ..
        } => 1.0,
        _ => max_norm,
    };

    Ok(ClassEmbeddings {
        phi,
        phi_target,
        counts,
        beta_tilde,
        bound_c,
        target_count: tgt.m(),
    })
}

/// Exact-kernel backends for when only kernel evaluations are available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelBackend {
    /// k(x,y) = ‖x‖ + ‖y‖ − ‖x−y‖
    Energy,
    /// k(x,y) = exp(−‖x−y‖²/(2σ²))
    GaussianExact { sigma: f64 },
}

impl KernelBackend {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelBackend::Energy => norm(x) + norm(y) - dist(x, y),
            KernelBackend::GaussianExact { sigma } => {
                let d2 = dist2(x, y);
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Empirical bound C = max over observed points of √k(x,x).
    pub fn bound_c(&self, src: &SourceDataset, tgt: &TargetDataset) -> f64 {
        match self {
            KernelBackend::GaussianExact { .. } => 1.0,
            KernelBackend::Energy => {
                let max_norm = src
                    .points()
                    .chunks_exact(src.dim())
                    .chain(tgt.points().chunks_exact(tgt.dim()))
                    .map(norm)
                    .fold(0.0_f64, f64::max);
                (2.0 * max_norm).sqrt()
            }
        }
    }
}

#[inline]
fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

#[inline]
fn dist(x: &[f64], y: &[f64]) -> f64 {
    dist2(x, y).sqrt()
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Mean of f over all ordered cross pairs a × b.
fn mean_cross<F>(a: &PointBlock, b: &PointBlock, f: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let dim = a.dim;
    let partials: Vec<f64> = a
        .data
        .par_chunks(PAIR_BLOCK_ROWS * dim)
        .map(|chunk| {
            let mut s = 0.0;
            for x in chunk.chunks_exact(dim) {
                for y in b.data.chunks_exact(dim) {
                    s += f(x, y);
                }
            }
            s
        })
        .collect();
    tree_sum(&partials) / (a.rows as f64 * b.rows as f64)
}

/// Sum of f over unordered within-block pairs i < j.
fn sum_self_pairs<F>(a: &PointBlock, f: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let rows = a.rows;
    let nblocks = rows.div_ceil(PAIR_BLOCK_ROWS);
    let partials: Vec<f64> = (0..nblocks)
        .into_par_iter()
        .map(|blk| {
            let start = blk * PAIR_BLOCK_ROWS;
            let end = (start + PAIR_BLOCK_ROWS).min(rows);
            let mut s = 0.0;
            for i in start..end {
                let x = a.row(i);
                for j in (i + 1)..rows {
                    s += f(x, a.row(j));
                }
            }
            s
        })
        .collect();
    tree_sum(&partials)
}

fn mean_norm(a: &PointBlock) -> f64 {
    let dim = a.dim;
    let partials: Vec<f64> = a
        .data
        .par_chunks(EMBED_BLOCK_ROWS * dim)
        .map(|chunk| chunk.chunks_exact(dim).map(norm).sum())
        .collect();
    tree_sum(&partials) / a.rows as f64
}

/// Build the QP data directly from kernel evaluations: Ĝᵢⱼ is the mean of k
/// over class-i × class-j pairs, qᵢ the mean over class-i × target pairs,
/// and the target norm² the mean over target × target pairs.
pub fn kernel_problem(
    kb: &KernelBackend,
    src: &SourceDataset,
    tgt: &TargetDataset,
) -> Result<QuantProblem> {
    if src.dim() != tgt.dim() {
        return Err(DfmError::DimensionMismatch {
            context: "source/target dimension",
            left: src.dim(),
            right: tgt.dim(),
        });
    }
    let classes = split_by_class(src);
    let c = classes.len();
    let tgt_block = PointBlock {
        data: tgt.points().to_vec(),
        rows: tgt.m(),
        dim: tgt.dim(),
    };

    let (gram, q, tnorm2) = match kb {
        KernelBackend::Energy => {
            // k(x,y) = ‖x‖ + ‖y‖ − ‖x−y‖ splits into norm means and a
            // distance mean; only the distance needs the pair loop.
            let mn: Vec<f64> = classes.iter().map(mean_norm).collect();
            let mn_t = mean_norm(&tgt_block);
            let mut g = crate::linalg::SymMatrix::zeros(c);
            for i in 0..c {
                for j in 0..=i {
                    let md = if i == j {
                        2.0 * sum_self_pairs(&classes[i], dist)
                            / (classes[i].rows as f64 * classes[i].rows as f64)
                    } else {
                        mean_cross(&classes[i], &classes[j], dist)
                    };
                    g.set(i, j, mn[i] + mn[j] - md);
                }
            }
            let q: Vec<f64> = (0..c)
                .map(|i| mn[i] + mn_t - mean_cross(&classes[i], &tgt_block, dist))
                .collect();
            let m = tgt_block.rows as f64;
            let tnorm2 = 2.0 * mn_t - 2.0 * sum_self_pairs(&tgt_block, dist) / (m * m);
            (g, q, tnorm2)
        }
        KernelBackend::GaussianExact { .. } => {
            let k = |x: &[f64], y: &[f64]| kb.eval(x, y);
            let mut g = crate::linalg::SymMatrix::zeros(c);
            for i in 0..c {
                for j in 0..=i {
                    let v = if i == j {
                        let ni = classes[i].rows as f64;
                        (2.0 * sum_self_pairs(&classes[i], k) + ni) / (ni * ni)
                    } else {
                        mean_cross(&classes[i], &classes[j], k)
                    };
                    g.set(i, j, v);
                }
            }
            let q: Vec<f64> = (0..c)
                .map(|i| mean_cross(&classes[i], &tgt_block, k))
                .collect();
            let m = tgt_block.rows as f64;
            let tnorm2 = (2.0 * sum_self_pairs(&tgt_block, k) + m) / (m * m);
            (g, q, tnorm2)
        }
    };
    QuantProblem::new(gram, q, tnorm2)
}

/// Built-in stand-in classifier for BBSE when no prediction files are given:
/// nearest class centroid with 2-fold cross-fitting on the source (each half
/// predicted with centroids from the other half); the target is predicted
/// with centroids from the full source. Returns 1-based predictions.
pub fn nearest_centroid_crossfit(
    src: &SourceDataset,
    tgt: &TargetDataset,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if src.dim() != tgt.dim() {
        return Err(DfmError::DimensionMismatch {
            context: "source/target dimension",
            left: src.dim(),
            right: tgt.dim(),
        });
    }
    let c = src.class_count();
    let d = src.dim();
    let mut sums = vec![vec![0.0; d]; 2 * c]; // fold-major: fold*c + class
    let mut counts = vec![0usize; 2 * c];
    let mut full_sums = vec![vec![0.0; d]; c];
    for r in 0..src.n() {
        let fold = r % 2;
        let cls = src.class_index(r);
        for (acc, &v) in sums[fold * c + cls].iter_mut().zip(src.row(r)) {
            *acc += v;
        }
        counts[fold * c + cls] += 1;
        for (acc, &v) in full_sums[cls].iter_mut().zip(src.row(r)) {
            *acc += v;
        }
    }
    let full_counts = src.class_counts();
    let full_centroids: Vec<Vec<f64>> = (0..c)
        .map(|j| full_sums[j].iter().map(|s| s / full_counts[j] as f64).collect())
        .collect();
    // per-fold centroids, falling back to the full centroid for classes
    // missing from a fold
    let fold_centroids: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|f| {
            (0..c)
                .map(|j| {
                    if counts[f * c + j] > 0 {
                        sums[f * c + j]
                            .iter()
                            .map(|s| s / counts[f * c + j] as f64)
                            .collect()
                    } else {
                        full_centroids[j].clone()
                    }
                })
                .collect()
        })
        .collect();

    let predict = |x: &[f64], centroids: &[Vec<f64>]| -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (j, cen) in centroids.iter().enumerate() {
            let d2 = dist2(x, cen);
            if d2 < best_d {
                best_d = d2;
                best = j;
            }
        }
        best + 1
    };

    let preds_src: Vec<usize> = (0..src.n())
        .map(|r| predict(src.row(r), &fold_centroids[1 - r % 2]))
        .collect();
    let preds_tgt: Vec<usize> = (0..tgt.m())
        .map(|r| predict(tgt.row(r), &full_centroids))
        .collect();
    Ok((preds_src, preds_tgt))
}

/// Sample-side constants consumed by the error bounds: class counts, source
/// proportions, the embedding bound C, and the target size.
#[derive(Debug, Clone)]
pub struct EmbeddingStats {
    pub class_counts: Vec<usize>,
    pub beta_tilde: Vec<f64>,
    pub bound_c: f64,
    pub target_count: usize,
}

impl EmbeddingStats {
    pub fn from_embeddings(ce: &ClassEmbeddings) -> Self {
        EmbeddingStats {
            class_counts: ce.counts.clone(),
            beta_tilde: ce.beta_tilde.clone(),
            bound_c: ce.bound_c,
            target_count: ce.target_count,
        }
    }

    pub fn for_kernel(kb: &KernelBackend, src: &SourceDataset, tgt: &TargetDataset) -> Self {
        EmbeddingStats {
            class_counts: src.class_counts(),
            beta_tilde: src.beta_tilde(),
            bound_c: kb.bound_c(src, tgt),
            target_count: tgt.m(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{l2_norm, ordered_dot};

    fn random_point(d: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
        (-dist2(x, y) / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn rff_rejects_odd_feature_count() {
        let mut rng = RngStream::new(0, 0);
        assert!(rff_sample(3, 7, 1.0, &mut rng).is_err());
        assert!(rff_sample(3, 8, 0.0, &mut rng).is_err());
    }

    #[test]
    fn rff_cos_sin_has_unit_norm() {
        let mut rng = RngStream::new(1, 0);
        let emb = rff_sample(4, 128, 0.8, &mut rng).unwrap();
        for _ in 0..1000 {
            let x = random_point(4, &mut rng);
            let phi = emb.embed(&x).unwrap();
            assert!((l2_norm(&phi) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rff_self_product_is_one() {
        let mut rng = RngStream::new(2, 0);
        let emb = rff_sample(3, 64, 1.3, &mut rng).unwrap();
        let x = random_point(3, &mut rng);
        let phi = emb.embed(&x).unwrap();
        assert!((ordered_dot(&phi, &phi) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rff_expectation_matches_gaussian_kernel() {
        // Monte Carlo over fresh draws with a single frequency pair (D = 2);
        // oracle = direct kernel evaluation.
        let sigma = 1.1;
        let mut rng = RngStream::new(3, 0);
        let x = random_point(3, &mut rng);
        let y = random_point(3, &mut rng);
        let draws = 100_000;
        let mut acc = 0.0;
        for k in 0..draws {
            let mut sub = rng.substream(k as u64);
            let emb = rff_sample(3, 2, sigma, &mut sub).unwrap();
            let px = emb.embed(&x).unwrap();
            let py = emb.embed(&y).unwrap();
            acc += ordered_dot(&px, &py);
        }
        let mc = acc / draws as f64;
        let exact = gaussian_kernel(&x, &y, sigma);
        assert!(
            (mc - exact).abs() <= 0.01,
            "monte carlo {mc} vs kernel {exact}"
        );
    }

    #[test]
    fn rff_kernel_approximation_quality() {
        // D = 2048: at least 99% of 1000 random pairs within 0.1
        let sigma = 1.0;
        let mut rng = RngStream::new(4, 0);
        let emb = rff_sample(5, 2048, sigma, &mut rng).unwrap();
        let mut ok = 0;
        let pairs = 1000;
        for _ in 0..pairs {
            let x = random_point(5, &mut rng);
            let y = random_point(5, &mut rng);
            let approx = ordered_dot(&emb.embed(&x).unwrap(), &emb.embed(&y).unwrap());
            if (approx - gaussian_kernel(&x, &y, sigma)).abs() <= 0.1 {
                ok += 1;
            }
        }
        assert!(ok * 100 >= pairs * 99, "{ok}/{pairs} pairs within 0.1");
    }

    #[test]
    fn cos_shift_variant_also_approximates() {
        let sigma = 1.0;
        let mut rng = RngStream::new(5, 0);
        let emb = rff_sample_cos_shift(4, 4096, sigma, &mut rng).unwrap();
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let x = random_point(4, &mut rng);
            let y = random_point(4, &mut rng);
            let approx = ordered_dot(&emb.embed(&x).unwrap(), &emb.embed(&y).unwrap());
            worst = worst.max((approx - gaussian_kernel(&x, &y, sigma)).abs());
        }
        assert!(worst <= 0.15, "worst deviation {worst}");
    }

    #[test]
    fn single_point_class_embeds_to_its_feature_vector() {
        let mut rng = RngStream::new(6, 0);
        let emb = rff_sample(2, 32, 1.0, &mut rng).unwrap();
        let x = vec![0.4, -1.0];
        let src = SourceDataset::new(x.clone(), 1, 2, &[1], 1).unwrap();
        let tgt = TargetDataset::new(x.clone(), 1, 2).unwrap();
        let ce = embed_means(&emb, &src, &tgt).unwrap();
        let phi_x = emb.embed(&x).unwrap();
        assert_eq!(ce.phi[0], phi_x);
        assert_eq!(ce.phi_target, phi_x);
        assert_eq!(ce.bound_c, 1.0);
    }

    #[test]
    fn duplicated_target_points_change_nothing() {
        let mut rng = RngStream::new(7, 0);
        let emb = rff_sample(2, 32, 1.0, &mut rng).unwrap();
        let src = SourceDataset::new(vec![0.0, 0.0], 1, 2, &[1], 1).unwrap();
        let x = vec![1.5, -0.5];
        let single = TargetDataset::new(x.clone(), 1, 2).unwrap();
        let double = TargetDataset::new([x.clone(), x.clone()].concat(), 2, 2).unwrap();
        let a = embed_means(&emb, &src, &single).unwrap();
        let b = embed_means(&emb, &src, &double).unwrap();
        assert_eq!(a.phi_target, b.phi_target);
    }

    #[test]
    fn class_mean_matches_direct_average() {
        let mut rng = RngStream::new(8, 0);
        let emb = rff_sample(3, 64, 0.9, &mut rng).unwrap();
        let n = 500;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2 + 1).collect();
        let src = SourceDataset::new(data.clone(), n, 3, &labels, 2).unwrap();
        let tgt = TargetDataset::new(data[..30].to_vec(), 10, 3).unwrap();
        let ce = embed_means(&emb, &src, &tgt).unwrap();
        // direct mean over class-1 rows
        let mut direct = vec![0.0; 64];
        let mut count = 0.0;
        for i in 0..n {
            if labels[i] == 1 {
                let phi = emb.embed(&data[i * 3..(i + 1) * 3]).unwrap();
                for (a, b) in direct.iter_mut().zip(&phi) {
                    *a += b;
                }
                count += 1.0;
            }
        }
        for v in direct.iter_mut() {
            *v /= count;
        }
        let diff: Vec<f64> = direct.iter().zip(&ce.phi[0]).map(|(a, b)| a - b).collect();
        assert!(l2_norm(&diff) <= 1e-12 * l2_norm(&direct));
    }

    #[test]
    fn perfect_onehot_gives_basis_vectors_and_identity_gram() {
        let src = SourceDataset::new(vec![0.0; 8], 4, 2, &[1, 2, 1, 2], 2).unwrap();
        let tgt = TargetDataset::new(vec![0.0; 4], 2, 2).unwrap();
        let emb = onehot_from_predictions(&[1, 2, 1, 2], &[1, 2], 2).unwrap();
        let ce = embed_means(&emb, &src, &tgt).unwrap();
        assert_eq!(ce.phi[0], vec![1.0, 0.0]);
        assert_eq!(ce.phi[1], vec![0.0, 1.0]);
        let p = QuantProblem::from_embeddings(&ce).unwrap();
        assert_eq!(p.gram().get(0, 0), 1.0);
        assert_eq!(p.gram().get(1, 1), 1.0);
        assert_eq!(p.gram().get(0, 1), 0.0);
    }

    #[test]
    fn onehot_matches_tabulated_confusion_matrix_exactly() {
        let mut rng = RngStream::new(9, 0);
        let n = 300;
        let c = 3;
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=c)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if rng.gen_bool(0.8) { l } else { rng.gen_range(1..=c) })
            .collect();
        let src = SourceDataset::new(vec![0.0; n], n, 1, &labels, c).unwrap();
        let tgt = TargetDataset::new(vec![0.0; 50], 50, 1).unwrap();
        let preds_tgt: Vec<usize> = (0..50).map(|_| rng.gen_range(1..=c)).collect();
        let emb = onehot_from_predictions(&preds, &preds_tgt, c).unwrap();
        let ce = embed_means(&emb, &src, &tgt).unwrap();
        // direct tabulation
        let mut conf = vec![[0u64; 3]; 3];
        let mut class_n = [0u64; 3];
        for (l, p) in labels.iter().zip(&preds) {
            conf[p - 1][l - 1] += 1;
            class_n[l - 1] += 1;
        }
        for j in 0..c {
            for i in 0..c {
                let expect = conf[i][j] as f64 / class_n[j] as f64;
                assert_eq!(ce.phi[j][i], expect);
            }
        }
    }

    #[test]
    fn onehot_rejects_out_of_range_predictions() {
        assert!(onehot_from_predictions(&[1, 4], &[1], 3).is_err());
        assert!(onehot_from_predictions(&[1, 0], &[1], 3).is_err());
    }

    #[test]
    fn energy_kernel_hand_example() {
        // singleton classes at 0 and (1, 0): k(0,0)=0, k(0,x2)=0, k(x2,x2)=2
        let src = SourceDataset::new(vec![0.0, 0.0, 1.0, 0.0], 2, 2, &[1, 2], 2).unwrap();
        let tgt = TargetDataset::new(vec![1.0, 0.0], 1, 2).unwrap();
        let p = kernel_problem(&KernelBackend::Energy, &src, &tgt).unwrap();
        assert_eq!(p.gram().get(0, 0), 0.0);
        assert_eq!(p.gram().get(0, 1), 0.0);
        assert_eq!(p.gram().get(1, 1), 2.0);
        assert_eq!(p.linear_term(), &[0.0, 2.0]);
        assert_eq!(p.target_norm2(), 2.0);
    }

    #[test]
    fn gaussian_kernel_flattens_at_huge_bandwidth() {
        let mut rng = RngStream::new(10, 0);
        let n = 40;
        let data: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2 + 1).collect();
        let src = SourceDataset::new(data.clone(), n, 2, &labels, 2).unwrap();
        let tgt = TargetDataset::new(data[..20].to_vec(), 10, 2).unwrap();
        let kb = KernelBackend::GaussianExact { sigma: 1e6 };
        let p = kernel_problem(&kb, &src, &tgt).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.gram().get(i, j) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exact_gaussian_agrees_with_rff_problem() {
        let sigma = 1.5;
        let mut rng = RngStream::new(11, 0);
        let n = 100;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2 + 1).collect();
        let src = SourceDataset::new(data.clone(), n, 3, &labels, 2).unwrap();
        let tgt = TargetDataset::new(data[..90].to_vec(), 30, 3).unwrap();
        let exact = kernel_problem(&KernelBackend::GaussianExact { sigma }, &src, &tgt).unwrap();
        let emb = rff_sample(3, 8192, sigma, &mut rng).unwrap();
        let ce = embed_means(&emb, &src, &tgt).unwrap();
        let approx = QuantProblem::from_embeddings(&ce).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((exact.gram().get(i, j) - approx.gram().get(i, j)).abs() <= 0.02);
            }
            assert!((exact.linear_term()[i] - approx.linear_term()[i]).abs() <= 0.02);
        }
        assert!((exact.target_norm2() - approx.target_norm2()).abs() <= 0.02);
    }

    #[test]
    fn energy_bound_c_is_max_sqrt_self_kernel() {
        let src = SourceDataset::new(vec![3.0, 4.0, 0.0, 0.0], 2, 2, &[1, 2], 2).unwrap();
        let tgt = TargetDataset::new(vec![0.0, 1.0], 1, 2).unwrap();
        let c = KernelBackend::Energy.bound_c(&src, &tgt);
        // max ‖x‖ = 5 → C = √10
        assert!((c - 10.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn concentration_bound_holds_with_stated_coverage() {
        // Monte Carlo check of the vector Hoeffding bound at δ = 0.1 with a
        // unit-norm embedding (C = 1): over 500 resamples of size 400 from a
        // fixed discrete distribution, the deviation ‖Φ(P̂) − Φ(P)‖ must stay
        // below (2 + √(2 log(2/δ)))/√n in at least
        // (1−δ)·500 − 3√(500·δ(1−δ)) trials.
        let delta = 0.1_f64;
        let n = 400usize;
        let trials = 500usize;
        let mut rng = RngStream::new(12, 0);
        let emb = rff_sample(3, 64, 1.0, &mut rng).unwrap();
        let support: Vec<Vec<f64>> = (0..8).map(|_| random_point(3, &mut rng)).collect();
        let weights: Vec<f64> = (1..=8).map(|k| k as f64 / 36.0).collect();
        let phis: Vec<Vec<f64>> = support.iter().map(|x| emb.embed(x).unwrap()).collect();
        let mut true_mean = vec![0.0; 64];
        for (w, phi) in weights.iter().zip(&phis) {
            for (t, p) in true_mean.iter_mut().zip(phi) {
                *t += w * p;
            }
        }
        let bound = (2.0 + (2.0 * (2.0 / delta).ln()).sqrt()) / (n as f64).sqrt();
        let mut covered = 0usize;
        for t in 0..trials {
            let mut sub = rng.substream(t as u64);
            let mut mean = vec![0.0; 64];
            for _ in 0..n {
                let u: f64 = sub.gen_range(0.0..1.0);
                let mut acc = 0.0;
                let mut idx = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = k;
                        break;
                    }
                }
                for (m, p) in mean.iter_mut().zip(&phis[idx]) {
                    *m += p;
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            let dev: Vec<f64> = mean.iter().zip(&true_mean).map(|(a, b)| a - b).collect();
            if l2_norm(&dev) <= bound {
                covered += 1;
            }
        }
        let needed = (1.0 - delta) * trials as f64
            - 3.0 * (trials as f64 * delta * (1.0 - delta)).sqrt();
        assert!(
            covered as f64 >= needed,
            "covered {covered} of {trials}, needed {needed}"
        );
    }

    #[test]
    fn crossfit_centroid_classifier_is_near_perfect_on_separated_data() {
        let mut rng = RngStream::new(13, 0);
        let n = 400;
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let cls = i % 2;
            let center = if cls == 0 { -5.0 } else { 5.0 };
            data.push(center + rng.gen_range(-1.0..1.0));
            data.push(rng.gen_range(-1.0..1.0));
            labels.push(cls + 1);
        }
        let src = SourceDataset::new(data.clone(), n, 2, &labels, 2).unwrap();
        let tgt = TargetDataset::new(data[..200].to_vec(), 100, 2).unwrap();
        let (ps, _pt) = nearest_centroid_crossfit(&src, &tgt).unwrap();
        let correct = ps.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(correct == n, "expected perfect split, got {correct}/{n}");
    }
}
