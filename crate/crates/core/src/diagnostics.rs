//! Geometric and statistical certificates for a matching instance: Gram
//! spectra (λ_min, Δ_min), finite-sample error bounds, bandwidth selection
//! by spectral-gap maximisation, and the contamination decomposition of the
//! target embedding.

use crate::data::{SourceDataset, TargetDataset};
use crate::error::{DfmError, Result};
use crate::featmap::{embed_means, rff_sample, ClassEmbeddings, EmbeddingStats};
use crate::linalg::{l2_norm, ordered_dot, solve_psd, SymMatrix};
use crate::rng::RngStream;
use crate::solver::{Mode, ProportionEstimate};
use rand::seq::index::sample as sample_indices;

/// Gram and centered-Gram spectra of the class embeddings.
///
/// `delta_min` is the second-smallest eigenvalue of the centered Gram matrix
/// (undefined for a single class); `lambda_min` the smallest eigenvalue of
/// the raw Gram matrix. It always holds Δ_min ≥ λ_min.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub gram: SymMatrix,
    pub centered: SymMatrix,
    pub lambda_min: f64,
    pub delta_min: Option<f64>,
    /// false when λ_min is numerically zero relative to the trace, i.e. the
    /// class embeddings are linearly dependent and mixture weights are not
    /// identifiable.
    pub identifiable: bool,
}

fn finish_spectrum(gram: SymMatrix, centered: SymMatrix) -> Result<SpectrumReport> {
    let c = gram.order();
    let gram_eigs = gram.eigenvalues()?;
    let lambda_min = gram_eigs[0];
    let delta_min = if c >= 2 {
        Some(centered.eigenvalues()?[1])
    } else {
        None
    };
    let identifiable = lambda_min > 0.0 && lambda_min >= 1e-12 * gram.trace();
    Ok(SpectrumReport {
        gram,
        centered,
        lambda_min,
        delta_min,
        identifiable,
    })
}

/// Spectra from explicit embeddings; the centered matrix is built by
/// subtracting the average embedding in feature space.
pub fn spectrum(ce: &ClassEmbeddings) -> Result<SpectrumReport> {
    let c = ce.class_count();
    let d = ce.feature_dim();
    let gram = SymMatrix::from_fn(c, |i, j| ordered_dot(&ce.phi[i], &ce.phi[j]));
    let mut phibar = vec![0.0; d];
    for phi in &ce.phi {
        for (b, v) in phibar.iter_mut().zip(phi) {
            *b += v;
        }
    }
    for b in phibar.iter_mut() {
        *b /= c as f64;
    }
    let centered_vecs: Vec<Vec<f64>> = ce
        .phi
        .iter()
        .map(|phi| phi.iter().zip(&phibar).map(|(p, b)| p - b).collect())
        .collect();
    let centered = SymMatrix::from_fn(c, |i, j| ordered_dot(&centered_vecs[i], &centered_vecs[j]));
    finish_spectrum(gram, centered)
}

/// Spectra from a Gram matrix alone (exact-kernel path); the centered matrix
/// is P Ĝ P with P = I − (1/c)·11ᵀ, written as double centering.
pub fn spectrum_from_gram(gram: &SymMatrix) -> Result<SpectrumReport> {
    let c = gram.order();
    let row_means: Vec<f64> = (0..c)
        .map(|i| (0..c).map(|j| gram.get(i, j)).sum::<f64>() / c as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / c as f64;
    let centered =
        SymMatrix::from_fn(c, |i, j| gram.get(i, j) - row_means[i] - row_means[j] + grand);
    finish_spectrum(gram.clone(), centered)
}

/// The plug-in finite-sample certificate. `bound_w` uses the weight vector
/// wᵢ = α̂ᵢ/β̃ᵢ, `bound_minclass` the smallest class size; both scale with
/// 2CR_{c/δ}/√Δ_min (λ_min in soft mode).
#[derive(Debug, Clone)]
pub struct BoundCertificate {
    pub delta: f64,
    /// R_{c/δ} = 2 + √(2 log(2c/δ)), natural log.
    pub r: f64,
    /// Embedding bound C.
    pub c_bound: f64,
    pub w_norm: f64,
    pub bound_w: f64,
    pub bound_minclass: f64,
    pub eps_n: f64,
    pub eps_m: f64,
}

fn r_x(x: f64) -> f64 {
    2.0 + (2.0 * (2.0 * x).ln()).sqrt()
}

/// Bound from spectrum + sample sizes; shared by the embedding and
/// exact-kernel paths.
pub fn theorem1_bound_from_parts(
    spec: &SpectrumReport,
    stats: &EmbeddingStats,
    est: &ProportionEstimate,
    delta: f64,
) -> Result<BoundCertificate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DfmError::Parameter(format!(
            "confidence delta must lie in (0,1), got {delta}"
        )));
    }
    let c = stats.class_counts.len();
    if est.alpha.len() != c {
        return Err(DfmError::DimensionMismatch {
            context: "estimate vs class count",
            left: est.alpha.len(),
            right: c,
        });
    }
    let denom = match est.mode {
        Mode::Hard => spec.delta_min.unwrap_or(spec.lambda_min),
        Mode::Soft => spec.lambda_min,
    };
    if denom <= 0.0 {
        return Err(DfmError::Identifiability {
            lambda_min: spec.lambda_min,
        });
    }
    let n: usize = stats.class_counts.iter().sum();
    let m = stats.target_count;
    let min_n = *stats.class_counts.iter().min().expect("non-empty classes");
    let r_cd = r_x(c as f64 / delta);
    let r_1d = r_x(1.0 / delta);
    let w: Vec<f64> = est
        .alpha
        .iter()
        .zip(&stats.beta_tilde)
        .map(|(a, b)| a / b)
        .collect();
    let w_norm = l2_norm(&w);
    let prefix = 2.0 * stats.bound_c * r_cd / denom.sqrt();
    let bound_w = prefix * (w_norm / (n as f64).sqrt() + 1.0 / (m as f64).sqrt());
    let bound_minclass = prefix * (1.0 / (min_n as f64).sqrt() + 1.0 / (m as f64).sqrt());
    let eps_n = stats.bound_c * r_cd / (min_n as f64).sqrt();
    let eps_m = stats.bound_c * r_1d / (m as f64).sqrt();
    Ok(BoundCertificate {
        delta,
        r: r_cd,
        c_bound: stats.bound_c,
        w_norm,
        bound_w,
        bound_minclass,
        eps_n,
        eps_m,
    })
}

/// Certificate for an estimate computed from explicit embeddings.
pub fn theorem1_bound(
    ce: &ClassEmbeddings,
    est: &ProportionEstimate,
    delta: f64,
) -> Result<BoundCertificate> {
    let spec = spectrum(ce)?;
    theorem1_bound_from_parts(&spec, &EmbeddingStats::from_embeddings(ce), est, delta)
}

/// Pick the RFF bandwidth that maximises Δ_min over a grid, drawing a fresh
/// feature map per grid point from a substream keyed by the σ value (so a
/// later run at the chosen σ under the same parent stream reproduces the
/// same draw). Ties break toward the smaller σ.
pub fn select_bandwidth(
    src: &SourceDataset,
    tgt: &TargetDataset,
    features: usize,
    sigma_grid: &[f64],
    rng: &RngStream,
) -> Result<(f64, Vec<(f64, SpectrumReport)>)> {
    if sigma_grid.is_empty() {
        return Err(DfmError::Parameter("empty sigma grid".into()));
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(DfmError::Parameter("sigma grid entries must be positive".into()));
    }
    let mut reports = Vec::with_capacity(sigma_grid.len());
    for &sigma in sigma_grid {
        let mut sub = rng.substream(sigma.to_bits());
        let emb = rff_sample(src.dim(), features, sigma, &mut sub)?;
        let ce = embed_means(&emb, src, tgt)?;
        reports.push((sigma, spectrum(&ce)?));
    }
    let criterion = |rep: &SpectrumReport| rep.delta_min.unwrap_or(rep.lambda_min);
    let mut best = 0usize;
    for k in 1..reports.len() {
        let (cand_sigma, cand) = (&reports[k].0, criterion(&reports[k].1));
        let (best_sigma, best_val) = (&reports[best].0, criterion(&reports[best].1));
        if cand > best_val || (cand == best_val && cand_sigma < best_sigma) {
            best = k;
        }
    }
    Ok((reports[best].0, reports))
}

/// Default bandwidth grid: median pairwise distance of at most 2000
/// subsampled points, times {1/8, 1/4, 1/2, 1, 2, 4, 8}.
pub fn default_sigma_grid(src: &SourceDataset, tgt: &TargetDataset, rng: &RngStream) -> Vec<f64> {
    const CAP: usize = 2000;
    const MULTIPLIERS: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let total = src.n() + tgt.m();
    let fetch = |idx: usize| -> &[f64] {
        if idx < src.n() {
            src.row(idx)
        } else {
            tgt.row(idx - src.n())
        }
    };
    let mut sub = rng.substream(0x5197);
    let chosen: Vec<usize> = if total <= CAP {
        (0..total).collect()
    } else {
        let mut v = sample_indices(&mut sub, total, CAP).into_vec();
        v.sort_unstable();
        v
    };
    let mut dists = Vec::with_capacity(chosen.len() * (chosen.len() - 1) / 2);
    for (a, &i) in chosen.iter().enumerate() {
        let xi = fetch(i);
        for &j in &chosen[a + 1..] {
            let xj = fetch(j);
            let d2: f64 = xi
                .iter()
                .zip(xj)
                .map(|(p, q)| {
                    let t = p - q;
                    t * t
                })
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let median = if dists.is_empty() {
        1.0
    } else {
        dists[dists.len() / 2]
    };
    let base = if median > 0.0 { median } else { 1.0 };
    MULTIPLIERS.iter().map(|m| m * base).collect()
}

/// Decomposition of the target embedding against the source-class geometry:
/// its least-squares fit over the span of the class embeddings, the
/// orthogonal remainder, the convex-projection residual taken from the soft
/// estimate, and (in oracle mode) how much of a known contaminant embedding
/// leaks into the span.
#[derive(Debug, Clone)]
pub struct ContaminationReport {
    /// Coordinates of the span projection of Φ(Q̂).
    pub parallel_fit: Vec<f64>,
    /// ‖Φ(Q̂) − Π_span Φ(Q̂)‖.
    pub orth_norm: f64,
    /// ‖Φ(Q̂) − Π_hull Φ(Q̂)‖ = √(objective of the supplied estimate).
    pub conv_residual: f64,
    /// ‖Π_span Φ(Q̂₀)‖ for a supplied contaminant embedding.
    pub span_leak: Option<f64>,
    pub rank_deficient: bool,
}

/// Contamination components from the Gram data alone (no explicit
/// coordinates, so no oracle span-leak term). The orthogonal residual is
/// computed through the already-built Ĝ and q as
/// ‖Φ(Q̂)‖² − 2λᵀq + λᵀĜλ with λ the least-squares fit.
pub fn contamination_from_problem(
    p: &crate::solver::QuantProblem,
    est: &ProportionEstimate,
) -> Result<ContaminationReport> {
    let (parallel_fit, full_rank) = solve_psd(p.gram(), p.linear_term(), 1e-12)?;
    let fitted = p.gram().quad_form(&parallel_fit);
    let cross = ordered_dot(&parallel_fit, p.linear_term());
    let orth2 = (p.target_norm2() - 2.0 * cross + fitted).max(0.0);
    Ok(ContaminationReport {
        parallel_fit,
        orth_norm: orth2.sqrt(),
        conv_residual: est.objective.max(0.0).sqrt(),
        span_leak: None,
        rank_deficient: !full_rank,
    })
}

pub fn contamination_decomposition(
    ce: &ClassEmbeddings,
    est: &ProportionEstimate,
    noise_embedding: Option<&[f64]>,
) -> Result<ContaminationReport> {
    let c = ce.class_count();
    let d = ce.feature_dim();
    if let Some(v) = noise_embedding {
        if v.len() != d {
            return Err(DfmError::DimensionMismatch {
                context: "noise embedding dimension",
                left: v.len(),
                right: d,
            });
        }
    }
    let gram = SymMatrix::from_fn(c, |i, j| ordered_dot(&ce.phi[i], &ce.phi[j]));
    let q: Vec<f64> = (0..c)
        .map(|i| ordered_dot(&ce.phi[i], &ce.phi_target))
        .collect();
    let (parallel_fit, full_rank) = solve_psd(&gram, &q, 1e-12)?;
    let mut resid = ce.phi_target.clone();
    for (i, coeff) in parallel_fit.iter().enumerate() {
        for (r, p) in resid.iter_mut().zip(&ce.phi[i]) {
            *r -= coeff * p;
        }
    }
    let orth_norm = l2_norm(&resid);
    let conv_residual = est.objective.max(0.0).sqrt();
    let span_leak = match noise_embedding {
        None => None,
        Some(v) => {
            let rhs: Vec<f64> = (0..c).map(|i| ordered_dot(&ce.phi[i], v)).collect();
            let (mu, _) = solve_psd(&gram, &rhs, 1e-12)?;
            let mut proj = vec![0.0; d];
            for (i, coeff) in mu.iter().enumerate() {
                for (p, phi) in proj.iter_mut().zip(&ce.phi[i]) {
                    *p += coeff * phi;
                }
            }
            Some(l2_norm(&proj))
        }
    };
    Ok(ContaminationReport {
        parallel_fit,
        orth_norm,
        conv_residual,
        span_leak,
        rank_deficient: !full_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featmap::onehot_from_predictions;
    use crate::solver::{solve_soft, QuantProblem};
    use rand::Rng;

    fn embeddings_from_vectors(phi: Vec<Vec<f64>>, target: Vec<f64>) -> ClassEmbeddings {
        let c = phi.len();
        ClassEmbeddings {
            phi,
            phi_target: target,
            counts: vec![100; c],
            beta_tilde: vec![1.0 / c as f64; c],
            bound_c: 1.0,
            target_count: 100,
        }
    }

    fn random_embeddings(c: usize, d: usize, rng: &mut RngStream) -> ClassEmbeddings {
        let phi: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let target = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        embeddings_from_vectors(phi, target)
    }

    #[test]
    fn two_class_delta_is_half_squared_distance() {
        let mut rng = RngStream::new(20, 0);
        for _ in 0..100 {
            let ce = random_embeddings(2, 6, &mut rng);
            let rep = spectrum(&ce).unwrap();
            let diff: Vec<f64> = ce.phi[0].iter().zip(&ce.phi[1]).map(|(a, b)| a - b).collect();
            let expect = 0.5 * ordered_dot(&diff, &diff);
            assert!((rep.delta_min.unwrap() - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn perfect_classifier_has_unit_delta() {
        for c in 2..=5 {
            let phi: Vec<Vec<f64>> = (0..c)
                .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            let ce = embeddings_from_vectors(phi, vec![1.0 / c as f64; c]);
            let rep = spectrum(&ce).unwrap();
            assert!((rep.delta_min.unwrap() - 1.0).abs() <= 1e-12);
            assert!(rep.identifiable);
        }
    }

    #[test]
    fn two_class_accuracy_example() {
        // Per-class accuracy a → columns (a, 1−a) and (1−a, a); the
        // two-class identity gives Δ_min = ½‖φ₁−φ₂‖² = (2a−1)².
        // Cross-checked against the sum-zero Rayleigh quotient at
        // u = (1,−1)/√2, which evaluates to the same value.
        for a in [0.6, 0.75, 0.9] {
            let phi = vec![vec![a, 1.0 - a], vec![1.0 - a, a]];
            let ce = embeddings_from_vectors(phi, vec![0.5, 0.5]);
            let rep = spectrum(&ce).unwrap();
            let expect = (2.0 * a - 1.0) * (2.0 * a - 1.0);
            assert!((rep.delta_min.unwrap() - expect).abs() <= 1e-12);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let u = [s, -s];
            let rayleigh = rep.gram.quad_form(&u);
            assert!((rayleigh - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_classifier_flagged_unidentifiable() {
        let src = SourceDataset::new(vec![0.0; 8], 4, 2, &[1, 2, 1, 2], 2).unwrap();
        let tgt = TargetDataset::new(vec![0.0; 4], 2, 2).unwrap();
        let emb = onehot_from_predictions(&[1, 1, 1, 1], &[1, 1], 2).unwrap();
        let ce = embed_means(&emb, &src, &tgt).unwrap();
        let rep = spectrum(&ce).unwrap();
        assert!(!rep.identifiable);
        assert!(rep.lambda_min.abs() <= 1e-12);
    }

    #[test]
    fn delta_dominates_lambda() {
        let mut rng = RngStream::new(21, 0);
        for _ in 0..50 {
            let c = rng.gen_range(2..=5);
            let ce = random_embeddings(c, 8, &mut rng);
            let rep = spectrum(&ce).unwrap();
            assert!(rep.delta_min.unwrap() >= rep.lambda_min - 1e-10);
        }
    }

    #[test]
    fn centered_gram_built_two_ways_agrees() {
        let mut rng = RngStream::new(22, 0);
        for _ in 0..20 {
            let c = rng.gen_range(2..=6);
            let ce = random_embeddings(c, 10, &mut rng);
            let by_features = spectrum(&ce).unwrap();
            let by_gram = spectrum_from_gram(&by_features.gram).unwrap();
            for i in 0..c {
                for j in 0..c {
                    assert!(
                        (by_features.centered.get(i, j) - by_gram.centered.get(i, j)).abs()
                            <= 1e-10
                    );
                }
            }
        }
    }

    #[test]
    fn centering_kills_the_uniform_direction() {
        let mut rng = RngStream::new(23, 0);
        let ce = random_embeddings(4, 8, &mut rng);
        let rep = spectrum(&ce).unwrap();
        let eigs = rep.centered.eigenvalues().unwrap();
        assert!(eigs[0].abs() <= 1e-9);
    }

    #[test]
    fn delta_matches_randomised_rayleigh_search() {
        let mut rng = RngStream::new(24, 0);
        let ce = random_embeddings(4, 8, &mut rng);
        let rep = spectrum(&ce).unwrap();
        let delta = rep.delta_min.unwrap();
        let c = 4;
        let mut best = f64::INFINITY;
        let mut best_u = vec![0.0; c];
        for _ in 0..100_000 {
            let mut u: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean: f64 = u.iter().sum::<f64>() / c as f64;
            for v in u.iter_mut() {
                *v -= mean;
            }
            let norm = l2_norm(&u);
            if norm < 1e-9 {
                continue;
            }
            for v in u.iter_mut() {
                *v /= norm;
            }
            let val = rep.gram.quad_form(&u);
            if val < best {
                best = val;
                best_u = u;
            }
        }
        assert!(delta <= best + 1e-12);
        // local refinement: shifted power iteration inside the sum-zero plane
        let gamma = rep.gram.trace() + 1.0;
        let mut u = best_u;
        for _ in 0..20_000 {
            let gu = rep.gram.matvec(&u);
            let mut v: Vec<f64> = u.iter().zip(&gu).map(|(ui, gi)| gamma * ui - gi).collect();
            let mean: f64 = v.iter().sum::<f64>() / c as f64;
            for x in v.iter_mut() {
                *x -= mean;
            }
            let norm = l2_norm(&v);
            for x in v.iter_mut() {
                *x /= norm;
            }
            u = v;
        }
        let refined = rep.gram.quad_form(&u);
        assert!((delta - refined).abs() <= 1e-3);
    }

    #[test]
    fn r_value_for_five_classes() {
        // R_{c/δ} with c = 5, δ = 0.05 → 2 + √(2 ln 200)
        let r = r_x(5.0 / 0.05);
        assert!((r - 5.255247).abs() < 1e-6);
    }

    #[test]
    fn balanced_plugin_weights_have_sqrt_c_norm() {
        let c = 5;
        let phi: Vec<Vec<f64>> = (0..c)
            .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut ce = embeddings_from_vectors(phi, vec![0.2; c]);
        ce.counts = vec![2000; c];
        ce.beta_tilde = vec![0.2; c];
        ce.target_count = 10_000;
        let est = ProportionEstimate {
            alpha: vec![0.2; c],
            mode: Mode::Hard,
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        };
        let cert = theorem1_bound(&ce, &est, 0.05).unwrap();
        assert!((cert.w_norm - (c as f64).sqrt()).abs() <= 1e-12);
        assert!((cert.bound_w - cert.bound_minclass).abs() <= 1e-12);
    }

    #[test]
    fn bounds_halve_when_samples_quadruple() {
        let mut rng = RngStream::new(25, 0);
        let mut ce = random_embeddings(3, 6, &mut rng);
        ce.counts = vec![100, 200, 300];
        let n: usize = ce.counts.iter().sum();
        ce.beta_tilde = ce.counts.iter().map(|&k| k as f64 / n as f64).collect();
        ce.target_count = 400;
        let est = ProportionEstimate {
            alpha: vec![0.3, 0.3, 0.4],
            mode: Mode::Hard,
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        };
        let small = theorem1_bound(&ce, &est, 0.1).unwrap();
        let mut big = ce.clone();
        big.counts = ce.counts.iter().map(|&k| 4 * k).collect();
        big.target_count = 4 * ce.target_count;
        let large = theorem1_bound(&big, &est, 0.1).unwrap();
        assert!((large.bound_w - small.bound_w / 2.0).abs() <= 1e-12 * small.bound_w);
        assert!(
            (large.bound_minclass - small.bound_minclass / 2.0).abs()
                <= 1e-12 * small.bound_minclass
        );
    }

    #[test]
    fn bound_rejects_bad_delta_and_degenerate_spectrum() {
        let mut rng = RngStream::new(26, 0);
        let ce = random_embeddings(3, 6, &mut rng);
        let est = ProportionEstimate {
            alpha: vec![0.3, 0.3, 0.4],
            mode: Mode::Hard,
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        };
        assert!(theorem1_bound(&ce, &est, 0.0).is_err());
        assert!(theorem1_bound(&ce, &est, 1.0).is_err());
        let degenerate =
            embeddings_from_vectors(vec![vec![1.0, 0.0]; 3], vec![1.0, 0.0]);
        let est3 = ProportionEstimate {
            alpha: vec![0.5, 0.25, 0.25],
            mode: Mode::Soft,
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        };
        assert!(matches!(
            theorem1_bound(&degenerate, &est3, 0.05),
            Err(DfmError::Identifiability { .. })
        ));
    }

    fn two_gaussian_blobs(rng: &mut RngStream) -> (SourceDataset, TargetDataset) {
        let n = 600;
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let cls = i % 2;
            let center = if cls == 0 { -4.0 } else { 4.0 };
            data.push(center + rng.gen_range(-1.0..1.0));
            data.push(rng.gen_range(-1.0..1.0));
            labels.push(cls + 1);
        }
        let src = SourceDataset::new(data.clone(), n, 2, &labels, 2).unwrap();
        let tgt = TargetDataset::new(data[..400].to_vec(), 200, 2).unwrap();
        (src, tgt)
    }

    #[test]
    fn singleton_grid_is_returned() {
        let mut rng = RngStream::new(27, 0);
        let (src, tgt) = two_gaussian_blobs(&mut rng);
        let (sigma, reports) = select_bandwidth(&src, &tgt, 128, &[2.5], &rng).unwrap();
        assert_eq!(sigma, 2.5);
        assert_eq!(reports.len(), 1);
    }

    #[test]
    fn huge_bandwidth_never_beats_median_scale() {
        let mut rng = RngStream::new(28, 0);
        let (src, tgt) = two_gaussian_blobs(&mut rng);
        let (sigma, reports) =
            select_bandwidth(&src, &tgt, 256, &[4.0, 1e6], &rng).unwrap();
        assert_eq!(sigma, 4.0);
        let d_good = reports[0].1.delta_min.unwrap();
        let d_huge = reports[1].1.delta_min.unwrap();
        assert!(d_good > d_huge, "{d_good} vs {d_huge}");
    }

    #[test]
    fn default_grid_is_median_times_multipliers() {
        let mut rng = RngStream::new(29, 0);
        let (src, tgt) = two_gaussian_blobs(&mut rng);
        let grid = default_sigma_grid(&src, &tgt, &rng);
        assert_eq!(grid.len(), 7);
        let median = grid[3];
        for (g, m) in grid.iter().zip([0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]) {
            assert!((g - median * m).abs() <= 1e-12 * median.max(1.0));
        }
        // the blobs are 8 apart, so the median pairwise distance is a few units
        assert!(median > 1.0 && median < 12.0, "median {median}");
    }

    #[test]
    fn orthogonal_noise_has_zero_span_leak() {
        let phi = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let ce = embeddings_from_vectors(phi, vec![0.5, 0.5, 0.0]);
        let est = ProportionEstimate {
            alpha: vec![0.5, 0.5],
            mode: Mode::Soft,
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        };
        let noise = vec![0.0, 0.0, 2.0];
        let rep = contamination_decomposition(&ce, &est, Some(&noise)).unwrap();
        assert!(rep.span_leak.unwrap() <= 1e-12);
        assert!(rep.orth_norm <= 1e-12);
    }

    #[test]
    fn hull_mixture_has_negligible_residuals() {
        let mut rng = RngStream::new(30, 0);
        let phi: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let weights = [0.2, 0.3, 0.4]; // sums to 0.9: interior of the sub-simplex
        let mut target = vec![0.0; 6];
        for (w, p) in weights.iter().zip(&phi) {
            for (t, v) in target.iter_mut().zip(p) {
                *t += w * v;
            }
        }
        let ce = embeddings_from_vectors(phi, target);
        let p = QuantProblem::from_embeddings(&ce).unwrap();
        let est = solve_soft(&p, 1e-12, 100_000).unwrap();
        let rep = contamination_decomposition(&ce, &est, None).unwrap();
        assert!(rep.conv_residual <= 1e-6, "conv residual {}", rep.conv_residual);
        assert!(rep.conv_residual >= rep.orth_norm - 1e-10);
    }

    #[test]
    fn projection_nesting_on_random_instances() {
        let mut rng = RngStream::new(31, 0);
        for _ in 0..20 {
            let ce = random_embeddings(3, 7, &mut rng);
            let p = QuantProblem::from_embeddings(&ce).unwrap();
            let est = solve_soft(&p, 1e-11, 100_000).unwrap();
            let rep = contamination_decomposition(&ce, &est, None).unwrap();
            assert!(rep.conv_residual >= rep.orth_norm - 1e-10);
        }
    }

    #[test]
    fn gram_space_contamination_matches_feature_space() {
        let mut rng = RngStream::new(32, 0);
        let ce = random_embeddings(3, 7, &mut rng);
        let p = QuantProblem::from_embeddings(&ce).unwrap();
        let est = solve_soft(&p, 1e-11, 100_000).unwrap();
        let a = contamination_decomposition(&ce, &est, None).unwrap();
        let b = contamination_from_problem(&p, &est).unwrap();
        assert!((a.orth_norm - b.orth_norm).abs() <= 1e-8);
        for (x, y) in a.parallel_fit.iter().zip(&b.parallel_fit) {
            assert!((x - y).abs() <= 1e-8);
        }
        assert_eq!(a.conv_residual, b.conv_residual);
    }

    #[test]
    fn rank_deficient_span_is_flagged() {
        let phi = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let ce = embeddings_from_vectors(phi, vec![1.5, 0.5]);
        let est = ProportionEstimate {
            alpha: vec![0.0, 0.0, 0.5],
            mode: Mode::Soft,
            objective: 0.25,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        };
        let rep = contamination_decomposition(&ce, &est, None).unwrap();
        assert!(rep.rank_deficient);
        // projection onto the achieved span {e1}: residual is the e2 part
        assert!((rep.orth_norm - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn single_class_has_undefined_delta() {
        let ce = embeddings_from_vectors(vec![vec![0.6, 0.8]], vec![0.6, 0.8]);
        let rep = spectrum(&ce).unwrap();
        assert!(rep.delta_min.is_none());
        assert!(rep.identifiable);
    }
}
