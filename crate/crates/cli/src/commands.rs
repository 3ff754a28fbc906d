use crate::report::Report;
use crate::{BenchmarkArgs, EstimateArgs, Failure, MethodArg, ModeArg};
use dfm_core::diagnostics::{
    contamination_decomposition, contamination_from_problem, default_sigma_grid,
    select_bandwidth, spectrum, spectrum_from_gram, theorem1_bound_from_parts, SpectrumReport,
};
use dfm_core::featmap::{
    embed_means, kernel_problem, nearest_centroid_crossfit, onehot_from_predictions, rff_sample,
    ClassEmbeddings, EmbeddingStats, KernelBackend,
};
use dfm_core::harness::{run_contamination_sweep, SweepConfig};
use dfm_core::io::{read_predictions_csv, read_source_csv, read_target_csv, LabeledCsv, TargetCsv};
use dfm_core::solver::{solve_hard, solve_soft, ProportionEstimate, QuantProblem};
use dfm_core::RngStream;
use std::path::Path;

/// Everything a report needs about the prepared matching instance.
struct Prepared {
    problem: QuantProblem,
    spectrum: SpectrumReport,
    stats: EmbeddingStats,
    embeddings: Option<ClassEmbeddings>,
    sigma: Option<f64>,
}

fn load_data(args: &EstimateArgs) -> Result<(LabeledCsv, TargetCsv), Failure> {
    let src = read_source_csv(&args.source)?;
    let tgt = read_target_csv(&args.target)?;
    if tgt.labels.is_some() {
        eprintln!(
            "warning: {} has a 'label' column; it is ignored for estimation",
            args.target.display()
        );
    }
    if src.dataset.dim() != tgt.dataset.dim() {
        return Err(Failure::new(
            2,
            format!(
                "feature count mismatch: source has {}, target has {}",
                src.dataset.dim(),
                tgt.dataset.dim()
            ),
        ));
    }
    Ok((src, tgt))
}

fn prepare(args: &EstimateArgs, src: &LabeledCsv, tgt: &TargetCsv) -> Result<Prepared, Failure> {
    let root = RngStream::new(args.seed, 0);
    match args.method {
        MethodArg::Rff => {
            let sel_rng = root.substream(2);
            let sigma = match args.sigma {
                Some(s) if s > 0.0 => s,
                Some(s) => return Err(Failure::new(2, format!("sigma must be positive, got {s}"))),
                None => {
                    let grid = default_sigma_grid(&src.dataset, &tgt.dataset, &root.substream(1));
                    let (best, _) =
                        select_bandwidth(&src.dataset, &tgt.dataset, args.features, &grid, &sel_rng)?;
                    best
                }
            };
            let mut draw = sel_rng.substream(sigma.to_bits());
            let emb = rff_sample(src.dataset.dim(), args.features, sigma, &mut draw)?;
            let ce = embed_means(&emb, &src.dataset, &tgt.dataset)?;
            Ok(Prepared {
                problem: QuantProblem::from_embeddings(&ce)?,
                spectrum: spectrum(&ce)?,
                stats: EmbeddingStats::from_embeddings(&ce),
                embeddings: Some(ce),
                sigma: Some(sigma),
            })
        }
        MethodArg::Energy => {
            let kb = KernelBackend::Energy;
            let problem = kernel_problem(&kb, &src.dataset, &tgt.dataset)?;
            Ok(Prepared {
                spectrum: spectrum_from_gram(problem.gram())?,
                stats: EmbeddingStats::for_kernel(&kb, &src.dataset, &tgt.dataset),
                embeddings: None,
                sigma: None,
                problem,
            })
        }
        MethodArg::Bbse => {
            let (preds_src, preds_tgt) = match (&args.predictions_source, &args.predictions_target)
            {
                (Some(ps), Some(pt)) => (
                    read_predictions_csv(ps, &src.class_labels, src.dataset.n())?,
                    read_predictions_csv(pt, &src.class_labels, tgt.dataset.m())?,
                ),
                (None, None) => nearest_centroid_crossfit(&src.dataset, &tgt.dataset)?,
                _ => {
                    return Err(Failure::new(
                        2,
                        "bbse needs both --predictions-source and --predictions-target (or neither)",
                    ))
                }
            };
            let emb = onehot_from_predictions(&preds_src, &preds_tgt, src.dataset.class_count())?;
            let ce = embed_means(&emb, &src.dataset, &tgt.dataset)?;
            Ok(Prepared {
                problem: QuantProblem::from_embeddings(&ce)?,
                spectrum: spectrum(&ce)?,
                stats: EmbeddingStats::from_embeddings(&ce),
                embeddings: Some(ce),
                sigma: None,
            })
        }
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Rff => "rff",
        MethodArg::Energy => "energy",
        MethodArg::Bbse => "bbse",
    }
}

fn push_common(r: &mut Report, args: &EstimateArgs, src: &LabeledCsv, tgt: &TargetCsv) {
    r.push_str("method", method_name(args.method));
    r.push_str(
        "mode",
        match args.mode {
            ModeArg::Hard => "hard",
            ModeArg::Soft => "soft",
        },
    );
    r.push_int("seed", args.seed as i64);
    r.push_int("classes", src.dataset.class_count() as i64);
    r.push_int("source_rows", src.dataset.n() as i64);
    r.push_int("target_rows", tgt.dataset.m() as i64);
}

fn push_spectrum(r: &mut Report, spec: &SpectrumReport) {
    match spec.delta_min {
        Some(d) => r.push_f64("delta_min", d),
        None => r.push_undefined("delta_min"),
    }
    r.push_f64("lambda_min", spec.lambda_min);
    r.push_bool("identifiable", spec.identifiable);
}

fn emit(report: &Report, json: bool, out: Option<&Path>) -> Result<(), Failure> {
    let rendered = report.render(json);
    print!("{rendered}");
    if let Some(path) = out {
        std::fs::write(path, rendered)
            .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn solve(args: &EstimateArgs, problem: &QuantProblem) -> Result<ProportionEstimate, Failure> {
    Ok(match args.mode {
        ModeArg::Hard => solve_hard(problem, args.tol, args.max_iter)?,
        ModeArg::Soft => solve_soft(problem, args.tol, args.max_iter)?,
    })
}

pub fn estimate(args: &EstimateArgs) -> Result<i32, Failure> {
    let threads = crate::resolve_threads(args.threads);
    crate::with_pool(threads, || estimate_inner(args))?
}

fn estimate_inner(args: &EstimateArgs) -> Result<i32, Failure> {
    let (src, tgt) = load_data(args)?;
    let prep = prepare(args, &src, &tgt)?;
    if !prep.spectrum.identifiable {
        return Err(Failure::new(
            3,
            format!(
                "identifiability failure: lambda_min = {:e}",
                prep.spectrum.lambda_min
            ),
        ));
    }
    let est = solve(args, &prep.problem)?;
    let cert = theorem1_bound_from_parts(&prep.spectrum, &prep.stats, &est, args.delta)?;

    let mut r = Report::new("estimate");
    push_common(&mut r, args, &src, &tgt);
    if let Some(sigma) = prep.sigma {
        r.push_int("features", args.features as i64);
        r.push_f64("sigma", sigma);
    }
    r.push_f64("delta", args.delta);
    for (i, &lab) in src.class_labels.iter().enumerate() {
        r.push_f64(format!("alpha[{lab}]"), est.alpha[i]);
    }
    r.push_f64("noise_mass", est.noise_mass());
    push_spectrum(&mut r, &prep.spectrum);
    r.push_f64("w_norm", cert.w_norm);
    r.push_f64("r_cdelta", cert.r);
    r.push_f64("c_bound", cert.c_bound);
    r.push_f64("bound_w", cert.bound_w);
    r.push_f64("bound_minclass", cert.bound_minclass);
    r.push_f64("eps_n", cert.eps_n);
    r.push_f64("eps_m", cert.eps_m);
    r.push_f64("objective", est.objective);
    r.push_int("iterations", est.iterations as i64);
    r.push_f64("kkt_residual", est.kkt_residual);
    r.push_bool("converged", est.converged);
    emit(&r, args.json, args.out.as_deref())?;
    if !est.converged {
        eprintln!(
            "error: solver did not reach tol {} in {} iterations",
            args.tol, args.max_iter
        );
        return Ok(4);
    }
    Ok(0)
}

pub fn diagnose(args: &EstimateArgs) -> Result<i32, Failure> {
    let threads = crate::resolve_threads(args.threads);
    crate::with_pool(threads, || diagnose_inner(args))?
}

fn diagnose_inner(args: &EstimateArgs) -> Result<i32, Failure> {
    let (src, tgt) = load_data(args)?;
    let prep = prepare(args, &src, &tgt)?;
    let soft = solve_soft(&prep.problem, args.tol, args.max_iter)?;
    let contamination = match &prep.embeddings {
        Some(ce) => contamination_decomposition(ce, &soft, None)?,
        None => contamination_from_problem(&prep.problem, &soft)?,
    };

    let mut r = Report::new("diagnose");
    push_common(&mut r, args, &src, &tgt);
    if let Some(sigma) = prep.sigma {
        r.push_int("features", args.features as i64);
        r.push_f64("sigma", sigma);
    }
    push_spectrum(&mut r, &prep.spectrum);
    let c = src.dataset.class_count();
    for i in 0..c {
        for j in 0..c {
            r.push_f64(format!("gram[{i}][{j}]"), prep.spectrum.gram.get(i, j));
        }
    }
    for (i, &lab) in src.class_labels.iter().enumerate() {
        r.push_f64(format!("parallel_fit[{lab}]"), contamination.parallel_fit[i]);
    }
    r.push_f64("orth_norm", contamination.orth_norm);
    r.push_f64("conv_residual", contamination.conv_residual);
    r.push_f64("soft_noise_mass", soft.noise_mass());
    r.push_bool("rank_deficient", contamination.rank_deficient);
    emit(&r, args.json, args.out.as_deref())?;
    if !prep.spectrum.identifiable {
        eprintln!(
            "error: identifiability failure: lambda_min = {:e}",
            prep.spectrum.lambda_min
        );
        return Ok(3);
    }
    Ok(0)
}

pub fn select_bandwidth_cmd(args: &EstimateArgs) -> Result<i32, Failure> {
    let threads = crate::resolve_threads(args.threads);
    crate::with_pool(threads, || select_bandwidth_inner(args))?
}

fn select_bandwidth_inner(args: &EstimateArgs) -> Result<i32, Failure> {
    if args.method != MethodArg::Rff {
        return Err(Failure::new(2, "select-bandwidth applies to --method rff only"));
    }
    let (src, tgt) = load_data(args)?;
    let root = RngStream::new(args.seed, 0);
    let grid = match args.sigma {
        Some(s) if s > 0.0 => vec![s],
        Some(s) => return Err(Failure::new(2, format!("sigma must be positive, got {s}"))),
        None => default_sigma_grid(&src.dataset, &tgt.dataset, &root.substream(1)),
    };
    let (best, reports) = select_bandwidth(
        &src.dataset,
        &tgt.dataset,
        args.features,
        &grid,
        &root.substream(2),
    )?;
    let mut r = Report::new("select-bandwidth");
    r.push_str("method", "rff");
    r.push_int("seed", args.seed as i64);
    r.push_int("features", args.features as i64);
    r.push_int("grid_size", grid.len() as i64);
    for (k, (sigma, rep)) in reports.iter().enumerate() {
        r.push_f64(format!("sigma_grid[{k}]"), *sigma);
        match rep.delta_min {
            Some(d) => r.push_f64(format!("delta_min[{k}]"), d),
            None => r.push_undefined(format!("delta_min[{k}]")),
        }
    }
    r.push_f64("sigma_star", best);
    emit(&r, args.json, args.out.as_deref())?;
    Ok(0)
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<i32, Failure> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::new(2, format!("{}: {e}", args.config.display())))?;
    let config: SweepConfig = serde_json::from_str(&raw)
        .map_err(|e| Failure::new(2, format!("{}: {e}", args.config.display())))?;
    config.validate()?;
    let threads = crate::resolve_threads(args.threads);
    let result = crate::with_pool(threads, || run_contamination_sweep(&config))??;
    for f in &result.failures {
        eprintln!(
            "warning: missing row {} {} eps={} dim={} rep={}: {}",
            f.method.as_str(),
            f.noise_kind,
            f.eps,
            f.dim,
            f.rep,
            f.reason
        );
    }
    let csv = result.to_csv();
    match &args.out {
        None => print!("{csv}"),
        Some(path) => {
            std::fs::write(path, &csv)
                .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
            if args.svg {
                let stem = path.with_extension("");
                let kinds: Vec<String> = {
                    let mut seen = Vec::new();
                    for row in &result.rows {
                        if !seen.contains(&row.noise_kind) {
                            seen.push(row.noise_kind.clone());
                        }
                    }
                    seen
                };
                for kind in kinds {
                    if let Some(svg) = dfm_core::chart::error_vs_eps_chart(&result, &kind) {
                        let svg_path = format!("{}-{kind}.svg", stem.display());
                        std::fs::write(&svg_path, svg)
                            .map_err(|e| Failure::new(2, format!("{svg_path}: {e}")))?;
                    }
                }
            }
        }
    }
    Ok(0)
}
