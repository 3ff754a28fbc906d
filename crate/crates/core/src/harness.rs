//! Synthetic experiment harness: Gaussian-mixture sources, three
//! contamination regimes, ε sweeps with repetitions, a leave-one-class-out
//! protocol for labeled CSV datasets, and wall-time scaling probes.
//!
//! Repetition cells are independent and run on the rayon pool; every cell
//! derives its own substream from the master seed and rows are sorted by key
//! before emission, so results are identical at any thread count.

use crate::data::{SourceDataset, TargetDataset};
use crate::diagnostics::{
    default_sigma_grid, select_bandwidth, spectrum, spectrum_from_gram, SpectrumReport,
};
use crate::error::{DfmError, Result};
use crate::featmap::{
    embed_means, kernel_problem, nearest_centroid_crossfit, onehot_from_predictions, rff_sample,
    EmbeddingStats, KernelBackend,
};
use crate::linalg::{cholesky_lower, l2_norm};
use crate::rng::RngStream;
use crate::solver::{solve_hard, solve_soft, ProportionEstimate, QuantProblem};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// A c-component Gaussian mixture shared by source and target, with the
/// label distributions of each side.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dim: usize,
    /// One mean per class.
    pub means: Vec<Vec<f64>>,
    /// One dense row-major d×d SPD covariance per class.
    pub covariances: Vec<Vec<f64>>,
    /// Source label distribution β.
    pub source_proportions: Vec<f64>,
    /// Clean-target label distribution α*.
    pub target_proportions: Vec<f64>,
    pub source_size: usize,
    pub target_size: usize,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn identity_covariances(classes: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        vec![eye; classes]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes;
        if c == 0 || self.dim == 0 {
            return Err(DfmError::Parameter("mixture needs c >= 1 and d >= 1".into()));
        }
        if self.means.len() != c || self.covariances.len() != c {
            return Err(DfmError::Parameter("one mean and covariance per class".into()));
        }
        for (v, name) in [
            (&self.source_proportions, "source proportions"),
            (&self.target_proportions, "target proportions"),
        ] {
            if v.len() != c
                || v.iter().any(|&p| !(p >= 0.0))
                || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(DfmError::Parameter(format!("{name} must lie on the simplex")));
            }
        }
        if self.source_size < c || self.target_size == 0 {
            return Err(DfmError::Parameter("sample sizes too small".into()));
        }
        Ok(())
    }

    /// Means drawn uniformly in a box of the given side, redrawn until all
    /// pairwise distances reach `min_separation`; identity covariances.
    #[allow(clippy::too_many_arguments)]
    pub fn random_separated(
        classes: usize,
        dim: usize,
        source_size: usize,
        target_size: usize,
        source_proportions: Vec<f64>,
        target_proportions: Vec<f64>,
        box_side: f64,
        min_separation: f64,
        rng: &mut RngStream,
    ) -> Result<MixtureSpec> {
        let half = box_side / 2.0;
        'outer: for _attempt in 0..10_000 {
            let means: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..dim).map(|_| rng.gen_range(-half..half)).collect())
                .collect();
            for i in 0..classes {
                for j in (i + 1)..classes {
                    let d2: f64 = means[i]
                        .iter()
                        .zip(&means[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d2.sqrt() < min_separation {
                        continue 'outer;
                    }
                }
            }
            let spec = MixtureSpec {
                classes,
                dim,
                means,
                covariances: Self::identity_covariances(classes, dim),
                source_proportions,
                target_proportions,
                source_size,
                target_size,
                seed: rng.seed(),
            };
            spec.validate()?;
            return Ok(spec);
        }
        Err(DfmError::Parameter(format!(
            "could not place {classes} means with separation {min_separation} in a box of side {box_side}"
        )))
    }

    pub fn class_centroid(&self) -> Vec<f64> {
        let mut cen = vec![0.0; self.dim];
        for m in &self.means {
            for (c, v) in cen.iter_mut().zip(m) {
                *c += v / self.classes as f64;
            }
        }
        cen
    }
}

/// The three contamination regimes of the synthetic study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "background-uniform")]
    BackgroundUniform,
    #[serde(rename = "far-gaussian")]
    FarGaussian,
    #[serde(rename = "near-gaussian")]
    NearGaussian,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::BackgroundUniform => "background-uniform",
            NoiseKind::FarGaussian => "far-gaussian",
            NoiseKind::NearGaussian => "near-gaussian",
        }
    }
}

/// Contamination of the target: kind, level ε = α₀*, and the far-Gaussian
/// mean offset.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    pub far_offset: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level < 1.0) {
            return Err(DfmError::Parameter(format!(
                "noise level must lie in [0,1), got {}",
                self.level
            )));
        }
        if self.kind == NoiseKind::FarGaussian && !(self.far_offset > 0.0) {
            return Err(DfmError::Parameter("far-gaussian offset must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled experiment: labeled source, shuffled contaminated target,
/// the noise rows kept separately for oracle diagnostics, and the realized
/// per-class clean counts used for scoring.
#[derive(Debug, Clone)]
pub struct SampledExperiment {
    pub source: SourceDataset,
    pub target: TargetDataset,
    /// noise_rows × dim, row-major.
    pub noise_points: Vec<f64>,
    pub noise_rows: usize,
    pub target_clean_counts: Vec<usize>,
}

fn draw_categorical(probs: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Draw the source from Σ βᵢ Pᵢ, the clean target from Σ α*ᵢ Pᵢ, then add
/// round(ε/(1−ε)·m) noise rows so the number of non-contaminated points
/// stays at m, and shuffle.
pub fn sample_experiment(
    spec: &MixtureSpec,
    noise: &NoiseSpec,
    rng: &RngStream,
) -> Result<SampledExperiment> {
    spec.validate()?;
    noise.validate()?;
    let c = spec.classes;
    let d = spec.dim;
    let chol: Vec<Vec<f64>> = spec
        .covariances
        .iter()
        .map(|cov| cholesky_lower(d, cov))
        .collect::<Result<_>>()?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let sample_point = |cls: usize, rng: &mut RngStream, out: &mut Vec<f64>| {
        let z: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let l = &chol[cls];
        for i in 0..d {
            let mut v = spec.means[cls][i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                v += l[i * d + k] * zk;
            }
            out.push(v);
        }
    };

    // source labels i.i.d. β, redrawn until every class is present
    let mut src_rng = rng.substream(1);
    let mut labels = Vec::new();
    for _ in 0..1000 {
        labels = (0..spec.source_size)
            .map(|_| draw_categorical(&spec.source_proportions, &mut src_rng))
            .collect();
        let mut seen = vec![false; c];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().all(|&s| s) {
            break;
        }
        labels.clear();
    }
    if labels.is_empty() {
        return Err(DfmError::Parameter(
            "failed to draw a source containing every class".into(),
        ));
    }
    let mut src_points = Vec::with_capacity(spec.source_size * d);
    for &l in &labels {
        sample_point(l, &mut src_rng, &mut src_points);
    }
    let labels_1based: Vec<usize> = labels.iter().map(|&l| l + 1).collect();
    let source = SourceDataset::new(src_points, spec.source_size, d, &labels_1based, c)?;

    // clean target
    let mut tgt_rng = rng.substream(2);
    let mut clean_counts = vec![0usize; c];
    let mut clean_points = Vec::with_capacity(spec.target_size * d);
    for _ in 0..spec.target_size {
        let l = draw_categorical(&spec.target_proportions, &mut tgt_rng);
        clean_counts[l] += 1;
        sample_point(l, &mut tgt_rng, &mut clean_points);
    }

    // contamination
    let m_noise = if noise.level > 0.0 {
        (noise.level / (1.0 - noise.level) * spec.target_size as f64).round() as usize
    } else {
        0
    };
    let mut noise_rng = rng.substream(3);
    let mut noise_points = Vec::with_capacity(m_noise * d);
    if m_noise > 0 {
        match noise.kind {
            NoiseKind::BackgroundUniform => {
                // support = per-dimension bounding box of the clean target
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for row in clean_points.chunks_exact(d) {
                    for k in 0..d {
                        lo[k] = lo[k].min(row[k]);
                        hi[k] = hi[k].max(row[k]);
                    }
                }
                for _ in 0..m_noise {
                    for k in 0..d {
                        noise_points.push(if hi[k] > lo[k] {
                            noise_rng.gen_range(lo[k]..hi[k])
                        } else {
                            lo[k]
                        });
                    }
                }
            }
            NoiseKind::FarGaussian | NoiseKind::NearGaussian => {
                let centroid = spec.class_centroid();
                let mean: Vec<f64> = if noise.kind == NoiseKind::NearGaussian {
                    centroid
                } else {
                    let mut dir: Vec<f64> = (0..d).map(|_| normal.sample(&mut noise_rng)).collect();
                    let norm = l2_norm(&dir).max(1e-12);
                    for v in dir.iter_mut() {
                        *v /= norm;
                    }
                    centroid
                        .iter()
                        .zip(&dir)
                        .map(|(cen, u)| cen + noise.far_offset * u)
                        .collect()
                };
                for _ in 0..m_noise {
                    for k in 0..d {
                        noise_points.push(mean[k] + normal.sample(&mut noise_rng));
                    }
                }
            }
        }
    }

    // shuffle clean + noise rows together
    let m_total = spec.target_size + m_noise;
    let mut order: Vec<usize> = (0..m_total).collect();
    let mut shuffle_rng = rng.substream(4);
    order.shuffle(&mut shuffle_rng);
    let mut tgt_points = Vec::with_capacity(m_total * d);
    for &idx in &order {
        let row = if idx < spec.target_size {
            &clean_points[idx * d..(idx + 1) * d]
        } else {
            let j = idx - spec.target_size;
            &noise_points[j * d..(j + 1) * d]
        };
        tgt_points.extend_from_slice(row);
    }
    let target = TargetDataset::new(tgt_points, m_total, d)?;

    Ok(SampledExperiment {
        source,
        target,
        noise_points,
        noise_rows: m_noise,
        target_clean_counts: clean_counts,
    })
}

/// The four benchmarked estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "rffm-hard")]
    RffmHard,
    #[serde(rename = "rffm-soft")]
    RffmSoft,
    #[serde(rename = "energy-soft")]
    EnergySoft,
    #[serde(rename = "bbse+-soft")]
    BbsePlusSoft,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [
        MethodId::RffmHard,
        MethodId::RffmSoft,
        MethodId::EnergySoft,
        MethodId::BbsePlusSoft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::RffmHard => "rffm-hard",
            MethodId::RffmSoft => "rffm-soft",
            MethodId::EnergySoft => "energy-soft",
            MethodId::BbsePlusSoft => "bbse+-soft",
        }
    }
}

/// Per-method solver and feature-map settings.
#[derive(Debug, Clone, Copy)]
pub struct MethodParams {
    pub rff_features: usize,
    pub sigma_select_features: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            rff_features: 2048,
            sigma_select_features: 512,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// One method applied to one sampled dataset.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: MethodId,
    pub estimate: ProportionEstimate,
    pub spectrum: SpectrumReport,
    pub stats: EmbeddingStats,
    pub error_l2: f64,
    pub runtime_ms: f64,
    /// σ* for the RFF methods.
    pub sigma: Option<f64>,
}

fn score(alpha: &[f64], truth: &[f64]) -> f64 {
    let diff: Vec<f64> = alpha.iter().zip(truth).map(|(a, b)| a - b).collect();
    l2_norm(&diff)
}

/// Run the requested methods on one dataset pair against the realized clean
/// proportions. The two RFF methods share one bandwidth selection and one
/// feature draw; every method sees identical data.
pub fn run_methods_on(
    src: &SourceDataset,
    tgt: &TargetDataset,
    truth: &[f64],
    methods: &[MethodId],
    params: &MethodParams,
    rng: &RngStream,
) -> Vec<(MethodId, Result<MethodRun>)> {
    let mut out = Vec::with_capacity(methods.len());
    let wants = |m: MethodId| methods.contains(&m);

    if wants(MethodId::RffmHard) || wants(MethodId::RffmSoft) {
        let prep = (|| -> Result<_> {
            let t0 = Instant::now();
            let grid = default_sigma_grid(src, tgt, &rng.substream(10));
            let sel_rng = rng.substream(11);
            let (sigma, _) =
                select_bandwidth(src, tgt, params.sigma_select_features, &grid, &sel_rng)?;
            let mut draw = sel_rng.substream(sigma.to_bits());
            let emb = rff_sample(src.dim(), params.rff_features, sigma, &mut draw)?;
            let ce = embed_means(&emb, src, tgt)?;
            let spec_rep = spectrum(&ce)?;
            let stats = EmbeddingStats::from_embeddings(&ce);
            let problem = QuantProblem::from_embeddings(&ce)?;
            Ok((t0.elapsed().as_secs_f64() * 1e3, sigma, spec_rep, stats, problem))
        })();
        match prep {
            Err(e) => {
                for m in [MethodId::RffmHard, MethodId::RffmSoft] {
                    if wants(m) {
                        out.push((m, Err(DfmError::Parameter(e.to_string()))));
                    }
                }
            }
            Ok((prep_ms, sigma, spec_rep, stats, problem)) => {
                for m in [MethodId::RffmHard, MethodId::RffmSoft] {
                    if !wants(m) {
                        continue;
                    }
                    let t1 = Instant::now();
                    let est = if m == MethodId::RffmHard {
                        solve_hard(&problem, params.tol, params.max_iter)
                    } else {
                        solve_soft(&problem, params.tol, params.max_iter)
                    };
                    out.push((
                        m,
                        est.map(|estimate| MethodRun {
                            method: m,
                            error_l2: score(&estimate.alpha, truth),
                            estimate,
                            spectrum: spec_rep.clone(),
                            stats: stats.clone(),
                            runtime_ms: prep_ms + t1.elapsed().as_secs_f64() * 1e3,
                            sigma: Some(sigma),
                        }),
                    ));
                }
            }
        }
    }

    if wants(MethodId::EnergySoft) {
        let run = (|| -> Result<MethodRun> {
            let t0 = Instant::now();
            let kb = KernelBackend::Energy;
            let problem = kernel_problem(&kb, src, tgt)?;
            let spec_rep = spectrum_from_gram(problem.gram())?;
            let stats = EmbeddingStats::for_kernel(&kb, src, tgt);
            let estimate = solve_soft(&problem, params.tol, params.max_iter)?;
            Ok(MethodRun {
                method: MethodId::EnergySoft,
                error_l2: score(&estimate.alpha, truth),
                estimate,
                spectrum: spec_rep,
                stats,
                runtime_ms: t0.elapsed().as_secs_f64() * 1e3,
                sigma: None,
            })
        })();
        out.push((MethodId::EnergySoft, run));
    }

    if wants(MethodId::BbsePlusSoft) {
        let run = (|| -> Result<MethodRun> {
            let t0 = Instant::now();
            let (preds_src, preds_tgt) = nearest_centroid_crossfit(src, tgt)?;
            let emb = onehot_from_predictions(&preds_src, &preds_tgt, src.class_count())?;
            let ce = embed_means(&emb, src, tgt)?;
            let spec_rep = spectrum(&ce)?;
            if !spec_rep.identifiable {
                return Err(DfmError::Identifiability {
                    lambda_min: spec_rep.lambda_min,
                });
            }
            let stats = EmbeddingStats::from_embeddings(&ce);
            let problem = QuantProblem::from_embeddings(&ce)?;
            let estimate = solve_soft(&problem, params.tol, params.max_iter)?;
            Ok(MethodRun {
                method: MethodId::BbsePlusSoft,
                error_l2: score(&estimate.alpha, truth),
                estimate,
                spectrum: spec_rep,
                stats,
                runtime_ms: t0.elapsed().as_secs_f64() * 1e3,
                sigma: None,
            })
        })();
        out.push((MethodId::BbsePlusSoft, run));
    }

    out
}

fn default_methods() -> Vec<MethodId> {
    MethodId::ALL.to_vec()
}

fn default_noise_kinds() -> Vec<NoiseKind> {
    vec![
        NoiseKind::BackgroundUniform,
        NoiseKind::FarGaussian,
        NoiseKind::NearGaussian,
    ]
}

fn default_eps_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
}

fn default_dims() -> Vec<usize> {
    (2..=10).collect()
}

fn default_reps() -> usize {
    20
}

fn default_classes() -> usize {
    5
}

fn default_sample_size() -> usize {
    10_000
}

fn default_rff_features() -> usize {
    2048
}

fn default_select_features() -> usize {
    512
}

fn default_separation() -> f64 {
    6.0
}

fn default_box_side() -> f64 {
    20.0
}

fn default_far_offset() -> f64 {
    30.0
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    100_000
}

/// Configuration of the contamination sweep; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodId>,
    #[serde(default = "default_noise_kinds")]
    pub noise_kinds: Vec<NoiseKind>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_sample_size")]
    pub source_size: usize,
    #[serde(default = "default_sample_size")]
    pub target_size: usize,
    #[serde(default = "default_rff_features")]
    pub rff_features: usize,
    #[serde(default = "default_select_features")]
    pub sigma_select_features: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_box_side")]
    pub box_side: f64,
    #[serde(default = "default_far_offset")]
    pub far_offset: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 0,
            methods: default_methods(),
            noise_kinds: default_noise_kinds(),
            eps_grid: default_eps_grid(),
            dims: default_dims(),
            reps: default_reps(),
            classes: default_classes(),
            source_size: default_sample_size(),
            target_size: default_sample_size(),
            rff_features: default_rff_features(),
            sigma_select_features: default_select_features(),
            separation: default_separation(),
            box_side: default_box_side(),
            far_offset: default_far_offset(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.noise_kinds.is_empty() || self.eps_grid.is_empty()
            || self.dims.is_empty() || self.reps == 0
        {
            return Err(DfmError::Parameter("sweep config has an empty axis".into()));
        }
        if self.eps_grid.iter().any(|&e| !(0.0..=0.3).contains(&e)) {
            return Err(DfmError::Parameter("eps grid must lie inside [0, 0.3]".into()));
        }
        if self.dims.iter().any(|&d| !(2..=10).contains(&d)) {
            return Err(DfmError::Parameter("dims must lie inside [2..10]".into()));
        }
        if self.classes < 2 {
            return Err(DfmError::Parameter("sweep needs at least two classes".into()));
        }
        if self.rff_features % 2 != 0 || self.sigma_select_features % 2 != 0 {
            return Err(DfmError::Parameter("feature counts must be even".into()));
        }
        Ok(())
    }

    /// Mildly imbalanced default source proportions βᵢ ∝ c+1+i.
    pub fn default_source_proportions(classes: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..classes).map(|i| (classes + 1 + i) as f64).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect()
    }

    fn method_params(&self) -> MethodParams {
        MethodParams {
            rff_features: self.rff_features,
            sigma_select_features: self.sigma_select_features,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// One emitted benchmark row, keyed by (method, scenario, ε, dim, rep).
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub method: MethodId,
    pub noise_kind: String,
    pub eps: f64,
    pub dim: usize,
    pub rep: usize,
    pub error_l2: f64,
    pub delta_min: f64,
    pub lambda_min: f64,
    pub noise_mass_est: f64,
    pub runtime_ms: f64,
}

/// A cell whose method failed; kept out of the CSV data rows.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub method: MethodId,
    pub noise_kind: String,
    pub eps: f64,
    pub dim: usize,
    pub rep: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

pub const RESULT_CSV_HEADER: &str =
    "method,noise_kind,eps,dim,rep,error_l2,delta_min,lambda_min,noise_mass_est,runtime_ms";

impl ExperimentResult {
    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.noise_kind.as_str(), a.eps, a.dim, a.rep, a.method.as_str())
                .partial_cmp(&(b.noise_kind.as_str(), b.eps, b.dim, b.rep, b.method.as_str()))
                .expect("finite keys")
        });
        self.failures.sort_by(|a, b| {
            (a.noise_kind.as_str(), a.eps, a.dim, a.rep, a.method.as_str())
                .partial_cmp(&(b.noise_kind.as_str(), b.eps, b.dim, b.rep, b.method.as_str()))
                .expect("finite keys")
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method.as_str(),
                r.noise_kind,
                r.eps,
                r.dim,
                r.rep,
                r.error_l2,
                r.delta_min,
                r.lambda_min,
                r.noise_mass_est,
                r.runtime_ms
            ));
        }
        out
    }

    /// Mean error per (method, ε) for one scenario, ε ascending.
    pub fn mean_error_series(&self, noise_kind: &str) -> Vec<(MethodId, Vec<(f64, f64)>)> {
        let mut series = Vec::new();
        for m in MethodId::ALL {
            let mut buckets: Vec<(f64, f64, usize)> = Vec::new();
            for r in self.rows.iter().filter(|r| r.method == m && r.noise_kind == noise_kind) {
                match buckets.iter_mut().find(|(e, _, _)| *e == r.eps) {
                    Some((_, sum, count)) => {
                        *sum += r.error_l2;
                        *count += 1;
                    }
                    None => buckets.push((r.eps, r.error_l2, 1)),
                }
            }
            if buckets.is_empty() {
                continue;
            }
            buckets.sort_by(|a, b| a.0.total_cmp(&b.0));
            series.push((
                m,
                buckets.iter().map(|&(e, s, k)| (e, s / k as f64)).collect(),
            ));
        }
        series
    }
}

fn rows_from_runs(
    runs: Vec<(MethodId, Result<MethodRun>)>,
    noise_kind: &str,
    eps: f64,
    dim: usize,
    rep: usize,
) -> (Vec<ResultRow>, Vec<CellFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (method, run) in runs {
        match run {
            Ok(r) => rows.push(ResultRow {
                method,
                noise_kind: noise_kind.to_string(),
                eps,
                dim,
                rep,
                error_l2: r.error_l2,
                delta_min: r.spectrum.delta_min.unwrap_or(f64::NAN),
                lambda_min: r.spectrum.lambda_min,
                noise_mass_est: r.estimate.noise_mass(),
                runtime_ms: r.runtime_ms,
            }),
            Err(e) => failures.push(CellFailure {
                method,
                noise_kind: noise_kind.to_string(),
                eps,
                dim,
                rep,
                reason: e.to_string(),
            }),
        }
    }
    (rows, failures)
}

/// Run the full synthetic sweep: for every (noise kind, ε, dim, repetition)
/// cell, draw fresh separated class means, sample one dataset pair, and run
/// all requested methods on it.
pub fn run_contamination_sweep(config: &SweepConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let root = RngStream::new(config.seed, 0);
    let params = config.method_params();
    let mut cells = Vec::new();
    for (ki, kind) in config.noise_kinds.iter().enumerate() {
        for (ei, &eps) in config.eps_grid.iter().enumerate() {
            for (di, &dim) in config.dims.iter().enumerate() {
                for rep in 0..config.reps {
                    cells.push((ki, *kind, ei, eps, di, dim, rep));
                }
            }
        }
    }
    let outcomes: Vec<Result<(Vec<ResultRow>, Vec<CellFailure>)>> = cells
        .par_iter()
        .map(|&(ki, kind, ei, eps, di, dim, rep)| {
            let cell_rng = root
                .substream(1 + ki as u64)
                .substream(ei as u64)
                .substream(di as u64)
                .substream(rep as u64);
            let mut mean_rng = cell_rng.substream(0);
            let spec = MixtureSpec::random_separated(
                config.classes,
                dim,
                config.source_size,
                config.target_size,
                SweepConfig::default_source_proportions(config.classes),
                vec![1.0 / config.classes as f64; config.classes],
                config.box_side,
                config.separation,
                &mut mean_rng,
            )?;
            let noise = NoiseSpec {
                kind,
                level: eps,
                far_offset: config.far_offset,
            };
            let sampled = sample_experiment(&spec, &noise, &cell_rng.substream(1))?;
            let m_tot = sampled.target.m() as f64;
            let truth: Vec<f64> = sampled
                .target_clean_counts
                .iter()
                .map(|&k| k as f64 / m_tot)
                .collect();
            let runs = run_methods_on(
                &sampled.source,
                &sampled.target,
                &truth,
                &config.methods,
                &params,
                &cell_rng.substream(2),
            );
            Ok(rows_from_runs(runs, kind.as_str(), eps, dim, rep))
        })
        .collect();

    let mut result = ExperimentResult::default();
    for outcome in outcomes {
        let (rows, failures) = outcome?;
        result.rows.extend(rows);
        result.failures.extend(failures);
    }
    result.sort();
    Ok(result)
}

/// Configuration of the leave-one-class-out protocol on CSV datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodId>,
    #[serde(default = "default_holdout_reps")]
    pub reps: usize,
    #[serde(default = "default_rff_features")]
    pub rff_features: usize,
    #[serde(default = "default_select_features")]
    pub sigma_select_features: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_holdout_reps() -> usize {
    1
}

impl HoldoutConfig {
    fn method_params(&self) -> MethodParams {
        MethodParams {
            rff_features: self.rff_features,
            sigma_select_features: self.sigma_select_features,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Leave-one-class-out on labeled CSV files: a baseline run with every
/// class, then one run per held-out class whose source rows are dropped so
/// its target mass plays the contaminant. Target labels are used only for
/// scoring.
pub fn run_holdout_class(
    src_csv: &Path,
    tgt_csv: &Path,
    config: &HoldoutConfig,
) -> Result<ExperimentResult> {
    if config.methods.is_empty() || config.reps == 0 {
        return Err(DfmError::Parameter("holdout config has an empty axis".into()));
    }
    let labeled_src = crate::io::read_source_csv(src_csv)?;
    let labeled_tgt = crate::io::read_target_csv(tgt_csv)?;
    let tgt_labels = labeled_tgt.labels.ok_or_else(|| {
        DfmError::Malformed("holdout protocol needs a labeled target csv".into())
    })?;
    run_holdout_on(
        &labeled_src.dataset,
        &labeled_src.class_labels,
        &labeled_tgt.dataset,
        &tgt_labels,
        config,
    )
}

/// In-memory core of the holdout protocol (exposed for synthetic tests).
pub fn run_holdout_on(
    src: &SourceDataset,
    class_labels: &[i64],
    tgt: &TargetDataset,
    tgt_labels: &[i64],
    config: &HoldoutConfig,
) -> Result<ExperimentResult> {
    let c = src.class_count();
    let m_tot = tgt.m() as f64;
    let params = config.method_params();
    let root = RngStream::new(config.seed, 0);

    // target mass per original source class
    let target_mass: Vec<f64> = class_labels
        .iter()
        .map(|&lab| tgt_labels.iter().filter(|&&t| t == lab).count() as f64 / m_tot)
        .collect();

    let mut variants: Vec<(String, Option<usize>)> = vec![("baseline".to_string(), None)];
    for (h, &lab) in class_labels.iter().enumerate() {
        variants.push((format!("holdout-{lab}"), Some(h)));
    }

    let outcomes: Vec<Result<(Vec<ResultRow>, Vec<CellFailure>)>> = variants
        .par_iter()
        .enumerate()
        .map(|(vi, (name, held))| {
            // rebuild the source without the held-out class
            let keep: Vec<usize> = (0..c).filter(|&j| Some(j) != *held).collect();
            if keep.is_empty() {
                return Ok((Vec::new(), Vec::new()));
            }
            let mut relabel = vec![usize::MAX; c];
            for (new, &old) in keep.iter().enumerate() {
                relabel[old] = new + 1;
            }
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for r in 0..src.n() {
                let cls = src.class_index(r);
                if relabel[cls] != usize::MAX {
                    data.extend_from_slice(src.row(r));
                    labels.push(relabel[cls]);
                }
            }
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            if labels.is_empty() {
                failures.push(CellFailure {
                    method: config.methods[0],
                    noise_kind: name.clone(),
                    eps: f64::NAN,
                    dim: src.dim(),
                    rep: 0,
                    reason: "no source rows left after holdout".into(),
                });
                return Ok((rows, failures));
            }
            let sub_src = SourceDataset::new(data, labels.len(), src.dim(), &labels, keep.len())?;
            let truth: Vec<f64> = keep.iter().map(|&j| target_mass[j]).collect();
            let eps = 1.0 - truth.iter().sum::<f64>();
            for rep in 0..config.reps {
                let rng = root.substream(vi as u64).substream(rep as u64);
                let runs = run_methods_on(&sub_src, tgt, &truth, &config.methods, &params, &rng);
                let (r, f) = rows_from_runs(runs, name, eps, src.dim(), rep);
                rows.extend(r);
                failures.extend(f);
            }
            Ok((rows, failures))
        })
        .collect();

    let mut result = ExperimentResult::default();
    for outcome in outcomes {
        let (rows, failures) = outcome?;
        result.rows.extend(rows);
        result.failures.extend(failures);
    }
    result.sort();
    Ok(result)
}

/// Wall-time table of the RFF path and its log-log slope against n+m.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    /// (n + m, seconds)
    pub rows: Vec<(usize, f64)>,
    pub log_log_slope: f64,
}

fn synthetic_pair(total: usize, dim: usize, rng: &mut RngStream) -> Result<(SourceDataset, TargetDataset)> {
    let n = (total / 2).max(2);
    let m = (total - n).max(1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut src_points = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cls = i % 2;
        let shift = if cls == 0 { -2.0 } else { 2.0 };
        src_points.push(shift + normal.sample(rng));
        for _ in 1..dim {
            src_points.push(normal.sample(rng));
        }
        labels.push(cls + 1);
    }
    let mut tgt_points = Vec::with_capacity(m * dim);
    for i in 0..m {
        let shift = if i % 2 == 0 { -2.0 } else { 2.0 };
        tgt_points.push(shift + normal.sample(rng));
        for _ in 1..dim {
            tgt_points.push(normal.sample(rng));
        }
    }
    Ok((
        SourceDataset::new(src_points, n, dim, &labels, 2)?,
        TargetDataset::new(tgt_points, m, dim)?,
    ))
}

/// Time the RFF path (feature draw, embedding, problem, hard solve) per
/// total sample size and fit the log-log slope.
pub fn scaling_probe(
    sizes: &[usize],
    dim: usize,
    features: usize,
    rng: &RngStream,
) -> Result<ScalingReport> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DfmError::Parameter("sizes must be strictly ascending".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for (k, &total) in sizes.iter().enumerate() {
        let mut data_rng = rng.substream(k as u64);
        let (src, tgt) = synthetic_pair(total, dim, &mut data_rng)?;
        let t0 = Instant::now();
        let mut draw = data_rng.substream(1);
        let emb = rff_sample(dim, features, 2.0, &mut draw)?;
        let ce = embed_means(&emb, &src, &tgt)?;
        let problem = QuantProblem::from_embeddings(&ce)?;
        let _ = solve_hard(&problem, 1e-10, 100_000)?;
        rows.push((total, t0.elapsed().as_secs_f64()));
    }
    // least-squares slope of log t against log size
    let xs: Vec<f64> = rows.iter().map(|&(s, _)| (s as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|&(_, t)| t.max(1e-9).ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    Ok(ScalingReport {
        rows,
        log_log_slope: if den > 0.0 { num / den } else { f64::NAN },
    })
}

/// Wall time of (exact energy path, RFF path) on one synthetic pair of the
/// given total size.
pub fn energy_vs_rff_probe(
    total: usize,
    dim: usize,
    features: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    let mut data_rng = rng.substream(0);
    let (src, tgt) = synthetic_pair(total, dim, &mut data_rng)?;
    let t0 = Instant::now();
    let problem = kernel_problem(&KernelBackend::Energy, &src, &tgt)?;
    let _ = solve_hard(&problem, 1e-10, 100_000)?;
    let energy_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut draw = data_rng.substream(1);
    let emb = rff_sample(dim, features, 2.0, &mut draw)?;
    let ce = embed_means(&emb, &src, &tgt)?;
    let problem = QuantProblem::from_embeddings(&ce)?;
    let _ = solve_hard(&problem, 1e-10, 100_000)?;
    Ok((energy_secs, t1.elapsed().as_secs_f64()))
}

/// Embedding wall time for one synthetic block (scaling diagnostics).
pub fn embed_probe(rows: usize, dim: usize, features: usize, rng: &RngStream) -> Result<f64> {
    let mut data_rng = rng.substream(0);
    let (src, tgt) = synthetic_pair(rows, dim, &mut data_rng)?;
    let mut draw = data_rng.substream(1);
    let emb = rff_sample(dim, features, 2.0, &mut draw)?;
    let t0 = Instant::now();
    let _ = embed_means(&emb, &src, &tgt)?;
    Ok(t0.elapsed().as_secs_f64())
}
