//! Simplex-constrained quadratic solvers for distribution feature matching.
//!
//! The stored objective is f(α) = αᵀGα − 2qᵀα + t with t = ‖Φ(Q̂)‖², i.e.
//! the squared feature-space distance ‖Σ αᵢ Φ(P̂ᵢ) − Φ(Q̂)‖². Hard mode
//! minimises over the simplex, soft mode over {α ≥ 0, Σα ≤ 1} by augmenting
//! the problem with a dummy class whose embedding is the zero vector.

use crate::error::{DfmError, Result};
use crate::featmap::ClassEmbeddings;
use crate::linalg::{ordered_dot, ordered_sum, SymMatrix};

/// A c-dimensional quadratic matching instance: Gram matrix of the class
/// embeddings, their inner products with the target embedding, and the
/// squared target norm.
#[derive(Debug, Clone)]
pub struct QuantProblem {
    gram: SymMatrix,
    q: Vec<f64>,
    tnorm2: f64,
}

impl QuantProblem {
    /// Validates symmetry (by construction), finiteness, and positive
    /// semi-definiteness up to a -1e-9·trace eigenvalue tolerance.
    pub fn new(gram: SymMatrix, q: Vec<f64>, tnorm2: f64) -> Result<Self> {
        if q.len() != gram.order() {
            return Err(DfmError::DimensionMismatch {
                context: "quant problem linear term",
                left: q.len(),
                right: gram.order(),
            });
        }
        if !gram.is_finite() || !q.iter().all(|v| v.is_finite()) || !tnorm2.is_finite() {
            return Err(DfmError::NonFinite("quant problem"));
        }
        let eigs = gram.eigenvalues()?;
        let floor = -1e-9 * gram.trace().max(0.0) - 1e-15;
        if eigs[0] < floor {
            return Err(DfmError::Parameter(format!(
                "gram matrix is not PSD: min eigenvalue {:e}",
                eigs[0]
            )));
        }
        Ok(QuantProblem { gram, q, tnorm2 })
    }

    pub fn from_embeddings(ce: &ClassEmbeddings) -> Result<Self> {
        let c = ce.class_count();
        let gram = SymMatrix::from_fn(c, |i, j| ordered_dot(&ce.phi[i], &ce.phi[j]));
        let q: Vec<f64> = (0..c).map(|i| ordered_dot(&ce.phi[i], &ce.phi_target)).collect();
        let tnorm2 = ordered_dot(&ce.phi_target, &ce.phi_target);
        QuantProblem::new(gram, q, tnorm2)
    }

    pub fn class_count(&self) -> usize {
        self.gram.order()
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.q
    }

    pub fn target_norm2(&self) -> f64 {
        self.tnorm2
    }

    /// f(α) = αᵀGα − 2qᵀα + t.
    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let ga = self.gram.matvec(alpha);
        ordered_dot(alpha, &ga) - 2.0 * ordered_dot(&self.q, alpha) + self.tnorm2
    }

    /// Soft instance: a dummy class with zero embedding prepended at index 0.
    fn augment_with_dummy(&self) -> QuantProblem {
        let c = self.gram.order();
        let gram = SymMatrix::from_fn(c + 1, |i, j| {
            if i == 0 || j == 0 {
                0.0
            } else {
                self.gram.get(i - 1, j - 1)
            }
        });
        let mut q = Vec::with_capacity(c + 1);
        q.push(0.0);
        q.extend_from_slice(&self.q);
        QuantProblem {
            gram,
            q,
            tnorm2: self.tnorm2,
        }
    }
}

/// Which feasible set the estimate was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Hard,
    Soft,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hard => "hard",
            Mode::Soft => "soft",
        }
    }
}

/// Estimated class proportions plus solver telemetry.
#[derive(Debug, Clone)]
pub struct ProportionEstimate {
    pub alpha: Vec<f64>,
    pub mode: Mode,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

impl ProportionEstimate {
    /// In soft mode, the mass assigned to the dummy (noise) class.
    pub fn noise_mass(&self) -> f64 {
        1.0 - ordered_sum(self.alpha.clone())
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if uk - candidate > 0.0 {
            theta = candidate;
            rho = k + 1;
        }
    }
    if rho == 0 {
        // all mass on the largest coordinate (degenerate numeric input)
        let mut out = vec![0.0; v.len()];
        let argmax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        out[argmax] = 1.0;
        return out;
    }
    v.iter().map(|&vi| (vi - theta).max(0.0)).collect()
}

/// Solve the hard problem: minimise f over the simplex.
///
/// Accelerated projected gradient with a monotone safeguard and fixed step
/// 1/L. L is the largest Gram eigenvalue rounded up to a power of two, so
/// the iteration is bitwise equivariant under class permutations.
pub fn solve_hard(p: &QuantProblem, tol: f64, max_iter: usize) -> Result<ProportionEstimate> {
    if tol <= 0.0 {
        return Err(DfmError::Parameter("solver tolerance must be positive".into()));
    }
    let c = p.class_count();
    if c == 1 {
        let alpha = vec![1.0];
        return Ok(ProportionEstimate {
            objective: p.objective(&alpha),
            alpha,
            mode: Mode::Hard,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        });
    }

    let eigs = p.gram.eigenvalues()?;
    let lmax = *eigs.last().expect("non-empty spectrum");
    if lmax <= 0.0 {
        // Gram numerically zero: the objective is linear, a best vertex wins.
        let argmax = p
            .q
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut alpha = vec![0.0; c];
        if p.q.iter().all(|&qi| qi == p.q[0]) {
            alpha.fill(1.0 / c as f64);
        } else {
            alpha[argmax] = 1.0;
        }
        return Ok(ProportionEstimate {
            objective: p.objective(&alpha),
            alpha,
            mode: Mode::Hard,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
        });
    }
    let lip = pow2_ceil(lmax);
    let step = 1.0 / lip;

    let pg_step = |x: &[f64]| -> Vec<f64> {
        let gx = p.gram.matvec(x);
        let moved: Vec<f64> = x
            .iter()
            .zip(gx.iter().zip(&p.q))
            .map(|(&xi, (&gi, &qi))| xi - step * (gi - qi))
            .collect();
        project_simplex(&moved)
    };
    // norm of the projected-gradient mapping at x, with the f-scale step 1/(2L)
    let kkt = |x: &[f64]| -> f64 {
        let next = pg_step(x);
        let diff: Vec<f64> = x.iter().zip(&next).map(|(a, b)| a - b).collect();
        crate::linalg::l2_norm(&diff) / step
    };

    let mut alpha = vec![1.0 / c as f64; c];
    let mut f_alpha = p.objective(&alpha);
    let mut y = alpha.clone();
    let mut t_momentum = 1.0_f64;
    let mut iterations = 0;
    let mut residual = kkt(&alpha);
    let mut converged = residual <= tol;

    while !converged && iterations < max_iter {
        iterations += 1;
        let candidate = pg_step(&y);
        let f_candidate = p.objective(&candidate);
        let next = if f_candidate <= f_alpha {
            candidate
        } else {
            // monotone restart: plain descent step from the incumbent
            t_momentum = 1.0;
            pg_step(&alpha)
        };
        let f_next = p.objective(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_momentum * t_momentum).sqrt());
        let beta = (t_momentum - 1.0) / t_next;
        y = next
            .iter()
            .zip(&alpha)
            .map(|(n, a)| n + beta * (n - a))
            .collect();
        t_momentum = t_next;
        alpha = next;
        f_alpha = f_next;
        residual = kkt(&alpha);
        converged = residual <= tol;
    }

    Ok(ProportionEstimate {
        objective: f_alpha,
        alpha,
        mode: Mode::Hard,
        iterations,
        kkt_residual: residual,
        converged,
    })
}

/// Solve the soft problem: minimise f over {α ≥ 0, Σα ≤ 1} via the
/// zero-embedding dummy class, then drop the dummy coordinate.
pub fn solve_soft(p: &QuantProblem, tol: f64, max_iter: usize) -> Result<ProportionEstimate> {
    let augmented = p.augment_with_dummy();
    let est = solve_hard(&augmented, tol, max_iter)?;
    Ok(ProportionEstimate {
        alpha: est.alpha[1..].to_vec(),
        mode: Mode::Soft,
        objective: est.objective,
        iterations: est.iterations,
        kkt_residual: est.kkt_residual,
        converged: est.converged,
    })
}

/// Unconstrained BBSE solve α̂ = M⁻¹Y via the normal equations Gα = q
/// (G = MᵀM, q = MᵀY for a one-hot problem). Entries may be negative; they
/// sum to one when M is an invertible confusion matrix.
pub fn solve_bbse_unconstrained(p: &QuantProblem) -> Result<Vec<f64>> {
    let eigs = p.gram.eigenvalues()?;
    let lmin = eigs[0];
    let lmax = *eigs.last().unwrap();
    // cond(M)² = λmax(MᵀM)/λmin(MᵀM)
    if lmin <= 0.0 || (lmax / lmin).sqrt() > 1e12 {
        return Err(DfmError::Identifiability { lambda_min: lmin });
    }
    let (alpha, _) = crate::linalg::solve_psd(&p.gram, &p.q, 0.0)?;
    Ok(alpha)
}

fn pow2_ceil(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut p = 1.0_f64;
    if x >= 1.0 {
        while p < x {
            p *= 2.0;
        }
    } else {
        while p * 0.5 >= x {
            p *= 0.5;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 100_000;

    fn identity_problem(q: Vec<f64>) -> QuantProblem {
        let c = q.len();
        let gram = SymMatrix::from_fn(c, |i, j| if i == j { 1.0 } else { 0.0 });
        // tnorm2 = |q|² keeps f ≥ 0 on the simplex
        let t = q.iter().map(|x| x * x).sum();
        QuantProblem::new(gram, q, t).unwrap()
    }

    fn random_psd_instance(c: usize, rng: &mut RngStream) -> QuantProblem {
        // G = BᵀB with B (c+2)×c; target embedding = B·mix + noise column
        let rows = c + 2;
        let b: Vec<f64> = (0..rows * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gram = SymMatrix::from_fn(c, |i, j| {
            (0..rows).map(|r| b[r * c + i] * b[r * c + j]).sum()
        });
        let mix: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
        let noise: Vec<f64> = (0..rows).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let target: Vec<f64> = (0..rows)
            .map(|r| {
                (0..c).map(|i| b[r * c + i] * mix[i]).sum::<f64>() + noise[r]
            })
            .collect();
        let q: Vec<f64> = (0..c)
            .map(|i| (0..rows).map(|r| b[r * c + i] * target[r]).sum())
            .collect();
        let t = target.iter().map(|x| x * x).sum();
        QuantProblem::new(gram, q, t).unwrap()
    }

    /// Brute-force minimum of f over the step-h grid of the simplex.
    fn grid_min_hard(p: &QuantProblem, h: f64) -> f64 {
        assert_eq!(p.class_count(), 3);
        let steps = (1.0 / h).round() as usize;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let a = [
                    i as f64 * h,
                    j as f64 * h,
                    (steps - i - j) as f64 * h,
                ];
                let f = p.objective(&a);
                if f < best {
                    best = f;
                }
            }
        }
        best
    }

    /// Brute-force minimum of f over the step-h grid of {α ≥ 0, Σα ≤ 1}.
    /// The innermost coordinate scan uses the exact grid minimum of the 1-D
    /// quadratic, cross-checked against the naive scan in a separate test.
    fn grid_min_soft(p: &QuantProblem, h: f64) -> f64 {
        assert_eq!(p.class_count(), 3);
        let g = p.gram();
        let q = p.linear_term();
        let steps = (1.0 / h).round() as usize;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            let a0 = i as f64 * h;
            for j in 0..=(steps - i) {
                let a1 = j as f64 * h;
                let kmax = steps - i - j;
                // f(a0,a1,x) = A x² + B x + C
                let quad_a = g.get(2, 2);
                let quad_b = 2.0 * (g.get(0, 2) * a0 + g.get(1, 2) * a1 - q[2]);
                let base = [a0, a1, 0.0];
                let quad_c = p.objective(&base);
                let val = grid_quad_min(quad_a, quad_b, quad_c, h, kmax);
                if val < best {
                    best = val;
                }
            }
        }
        best
    }

    /// Minimum of Ax²+Bx+C over x ∈ {0, h, …, kmax·h}.
    fn grid_quad_min(a: f64, b: f64, c: f64, h: f64, kmax: usize) -> f64 {
        let eval = |k: usize| {
            let x = k as f64 * h;
            a * x * x + b * x + c
        };
        let mut best = eval(0).min(eval(kmax));
        if a > 0.0 {
            let vertex = -b / (2.0 * a);
            let k = (vertex / h).floor();
            for cand in [k, k + 1.0] {
                if cand >= 0.0 && cand <= kmax as f64 {
                    best = best.min(eval(cand as usize));
                }
            }
        }
        best
    }

    fn naive_grid_quad_min(a: f64, b: f64, c: f64, h: f64, kmax: usize) -> f64 {
        (0..=kmax)
            .map(|k| {
                let x = k as f64 * h;
                a * x * x + b * x + c
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn quad_grid_shortcut_matches_naive_scan() {
        let mut rng = RngStream::new(77, 0);
        for _ in 0..200 {
            let a = rng.gen_range(0.0..3.0);
            let b = rng.gen_range(-2.0..2.0);
            let c = rng.gen_range(-1.0..1.0);
            let kmax = rng.gen_range(1..400);
            let fast = grid_quad_min(a, b, c, 1e-3, kmax);
            let slow = naive_grid_quad_min(a, b, c, 1e-3, kmax);
            assert!((fast - slow).abs() < 1e-15 * (1.0 + slow.abs()));
        }
    }

    #[test]
    fn interior_optimum_is_returned_directly() {
        let p = identity_problem(vec![0.7, 0.3]);
        let est = solve_hard(&p, TOL, MAX_ITER).unwrap();
        assert!(est.converged);
        assert!((est.alpha[0] - 0.7).abs() < 1e-9);
        assert!((est.alpha[1] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn exterior_point_projects_onto_simplex() {
        // With G = I, the solution is the Euclidean projection of q:
        // (1.2, 0.3) − θ with θ = 0.25 → (0.95, 0.05).
        let p = identity_problem(vec![1.2, 0.3]);
        let est = solve_hard(&p, TOL, MAX_ITER).unwrap();
        assert!((est.alpha[0] - 0.95).abs() < 1e-9);
        assert!((est.alpha[1] - 0.05).abs() < 1e-9);
    }

    #[test]
    fn singleton_simplex() {
        let gram = SymMatrix::from_fn(1, |_, _| 3.0);
        let p = QuantProblem::new(gram, vec![-1.0], 9.0).unwrap();
        let est = solve_hard(&p, TOL, MAX_ITER).unwrap();
        assert_eq!(est.alpha, vec![1.0]);
    }

    #[test]
    fn soft_zero_target_puts_all_mass_on_dummy() {
        let gram = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.2 });
        let p = QuantProblem::new(gram, vec![0.0, 0.0], 0.0).unwrap();
        let est = solve_soft(&p, TOL, MAX_ITER).unwrap();
        assert!(est.alpha.iter().all(|&a| a.abs() < 1e-9));
        assert!((est.noise_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn soft_objective_never_worse_than_hard() {
        let mut rng = RngStream::new(1234, 0);
        for _ in 0..25 {
            let p = random_psd_instance(3, &mut rng);
            let hard = solve_hard(&p, TOL, MAX_ITER).unwrap();
            let soft = solve_soft(&p, TOL, MAX_ITER).unwrap();
            assert!(soft.objective <= hard.objective + TOL);
            let sum: f64 = soft.alpha.iter().sum();
            assert!(sum <= 1.0 + 1e-10);
            assert!(soft.alpha.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn hard_and_soft_match_grid_oracle() {
        let mut rng = RngStream::new(55, 3);
        let p = random_psd_instance(3, &mut rng);
        let hard = solve_hard(&p, TOL, MAX_ITER).unwrap();
        let soft = solve_soft(&p, TOL, MAX_ITER).unwrap();
        let grid_hard = grid_min_hard(&p, 1e-3);
        let grid_soft = grid_min_soft(&p, 1e-3);
        assert!((hard.objective - grid_hard).abs() <= 1e-4);
        assert!((soft.objective - grid_soft).abs() <= 1e-4);
    }

    #[test]
    fn hard_feasibility_and_vertex_dominance() {
        let mut rng = RngStream::new(99, 0);
        for _ in 0..25 {
            let p = random_psd_instance(4, &mut rng);
            let est = solve_hard(&p, TOL, MAX_ITER).unwrap();
            let sum: f64 = est.alpha.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-10);
            assert!(est.alpha.iter().all(|&a| a >= 0.0));
            for i in 0..4 {
                let mut vertex = vec![0.0; 4];
                vertex[i] = 1.0;
                assert!(est.objective <= p.objective(&vertex) + TOL);
            }
        }
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        let mut rng = RngStream::new(2024, 1);
        let p = random_psd_instance(4, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let gram_p = SymMatrix::from_fn(4, |i, j| p.gram().get(perm[i], perm[j]));
        let q_p: Vec<f64> = perm.iter().map(|&k| p.linear_term()[k]).collect();
        let pp = QuantProblem::new(gram_p, q_p, p.target_norm2()).unwrap();
        let est = solve_hard(&p, TOL, MAX_ITER).unwrap();
        let est_p = solve_hard(&pp, TOL, MAX_ITER).unwrap();
        for i in 0..4 {
            assert_eq!(est_p.alpha[i].to_bits(), est.alpha[perm[i]].to_bits());
        }
    }

    #[test]
    fn bbse_identity_confusion_returns_target_histogram() {
        let gram = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = vec![0.4, 0.6];
        let p = QuantProblem::new(gram, y.clone(), 0.52).unwrap();
        let alpha = solve_bbse_unconstrained(&p).unwrap();
        for (a, b) in alpha.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bbse_hand_solved_two_by_two() {
        // M = [[0.9, 0.2], [0.1, 0.8]], Y = (0.05, 0.95).
        // Cramer: det = 0.7, α = ((0.05·0.8 − 0.2·0.95)/0.7, (0.9·0.95 − 0.1·0.05)/0.7)
        //            = (−0.15/0.7, 0.85/0.7)
        let m = [[0.9, 0.2], [0.1, 0.8]];
        let y = [0.05, 0.95];
        let gram = SymMatrix::from_fn(2, |i, j| m[0][i] * m[0][j] + m[1][i] * m[1][j]);
        let q: Vec<f64> = (0..2).map(|i| m[0][i] * y[0] + m[1][i] * y[1]).collect();
        let t = y[0] * y[0] + y[1] * y[1];
        let p = QuantProblem::new(gram, q, t).unwrap();
        let alpha = solve_bbse_unconstrained(&p).unwrap();
        let expect = [-0.15 / 0.7, 0.85 / 0.7];
        assert!(alpha[0] < 0.0);
        for (a, b) in alpha.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
        let sum: f64 = alpha.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn bbse_rejects_singular_confusion() {
        // constant classifier: both columns e1
        let gram = SymMatrix::from_fn(2, |_, _| 1.0);
        let p = QuantProblem::new(gram, vec![1.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            solve_bbse_unconstrained(&p),
            Err(DfmError::Identifiability { .. })
        ));
    }

    #[test]
    fn monotone_descent_along_iterates() {
        // re-run the solver at increasing iteration caps; the objective of
        // the incumbent must be non-increasing
        let mut rng = RngStream::new(31, 7);
        let p = random_psd_instance(5, &mut rng);
        let mut prev = f64::INFINITY;
        for iters in [1usize, 2, 5, 10, 50, 200, 1000] {
            let est = solve_hard(&p, 1e-16, iters).unwrap();
            assert!(est.objective <= prev + 1e-12);
            prev = est.objective;
        }
    }

    #[test]
    fn non_convergence_is_flagged_not_fatal() {
        let mut rng = RngStream::new(8, 8);
        let p = random_psd_instance(4, &mut rng);
        let est = solve_hard(&p, 1e-300, 3).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
    }
}
