//! Gromov-Wasserstein machinery on similarity graphs.
//!
//! The full objective compares intra-batch similarity structures through a
//! coupling with uniform marginals; it is blind to rotations because cosine
//! similarity is rotation-invariant. The sliced variant projects features
//! onto random directions first, which makes it rotation-sensitive and
//! cheap. The coupling itself comes from an entropic proximal solver
//! (alternate between a linearized cost and Sinkhorn rescaling) with an
//! annealed blur, a monotonicity safeguard and a final rounding-plus-swap
//! polish, or from exhaustive permutation search at tiny N.

use itertools::Itertools;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::align_losses::{FeatureBatch, SimilarityGraph};
use crate::lie_rotation::{grad_through_rotation, rotation_from_param, SkewParamMatrix};
use crate::rng::{normal_vector, stream_rng};
use crate::{Error, Result};

/// Row and column sums must equal 1/N to this tolerance.
pub const MARGINAL_TOL: f64 = 1e-8;

/// Exhaustive permutation search is limited to this batch size.
pub const BRUTE_FORCE_MAX: usize = 6;

/// Default entropic regularization strength.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Default outer (proximal) iteration count.
pub const DEFAULT_OUTER_ITERS: usize = 50;

/// Default inner (Sinkhorn) iteration count.
pub const DEFAULT_INNER_ITERS: usize = 100;

/// Default number of projection directions for the sliced loss.
pub const DEFAULT_SLICES: usize = 16;

/// Inner Sinkhorn stops once the worst marginal error drops below this.
const SINKHORN_TOL: f64 = 1e-13;

/// Kernel entries are floored here so Sinkhorn never divides by zero even
/// after coupling entries underflow.
const KERNEL_FLOOR: f64 = 1e-300;

/// Number of annealed passes the outer iteration budget is split across.
const SOLVER_RESTARTS: usize = 6;

/// Fixed seed for the restart anchor streams; restarts are part of the
/// algorithm, not an input, so the solver stays a deterministic function of
/// its arguments.
const SOLVER_RESTART_SEED: u64 = 0x5eed_c0de;

/// Sweep cap for the descent that polishes the rounded plan.
const PERM_POLISH_SWEEPS: usize = 100;

/// Number of kick-and-repolish rounds applied to the best permutation on
/// small plans.
const SOLVER_KICKS: usize = 16;

/// Moves touching 3 or 4 rows are scanned only up to this size; the scans
/// are cubic and quartic in N and pairwise swaps already do the job on
/// larger plans.
const PERM_POLISH_WIDE_MAX: usize = 24;

/// Transport plan with uniform marginals 1/N.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    entries: Array2<f64>,
}

impl CouplingMatrix {
    /// Validate an externally supplied plan: nonnegative entries, row and
    /// column sums 1/N within [`MARGINAL_TOL`].
    pub fn try_new(entries: Array2<f64>) -> Result<Self> {
        let (n, m) = entries.dim();
        if n != m || n == 0 {
            return Err(Error::ShapeMismatch {
                context: "CouplingMatrix",
                expected: "nonempty square matrix".to_string(),
                found: format!("{n}x{m}"),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CouplingMatrix entries"));
        }
        if let Some(v) = entries.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "coupling entry {v} is negative"
            )));
        }
        let violation = marginal_violation(&entries);
        if violation > MARGINAL_TOL {
            return Err(Error::InvalidInput(format!(
                "coupling marginals deviate from 1/N by {violation:.3e}"
            )));
        }
        Ok(CouplingMatrix { entries })
    }

    /// The maximum-entropy plan: every entry 1/N^2.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "coupling requires at least one point");
        CouplingMatrix {
            entries: Array2::from_elem((n, n), 1.0 / (n * n) as f64),
        }
    }

    /// Identity matching: diagonal entries 1/N.
    pub fn diagonal(n: usize) -> Self {
        assert!(n > 0, "coupling requires at least one point");
        let mut entries = Array2::zeros((n, n));
        for i in 0..n {
            entries[[i, i]] = 1.0 / n as f64;
        }
        CouplingMatrix { entries }
    }

    /// Hard matching i -> perm[i], each with mass 1/N.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty permutation".to_string()));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::InvalidInput(format!(
                    "{perm:?} is not a permutation of 0..{n}"
                )));
            }
            seen[p] = true;
        }
        let mut entries = Array2::zeros((n, n));
        for (i, &p) in perm.iter().enumerate() {
            entries[[i, p]] = 1.0 / n as f64;
        }
        Ok(CouplingMatrix { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Worst absolute deviation of any row or column sum from 1/N.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(&self.entries)
    }
}

fn marginal_violation(entries: &Array2<f64>) -> f64 {
    let n = entries.nrows();
    let target = 1.0 / n as f64;
    let mut worst = 0.0f64;
    for s in entries.sum_axis(Axis(1)).iter() {
        worst = worst.max((s - target).abs());
    }
    for s in entries.sum_axis(Axis(0)).iter() {
        worst = worst.max((s - target).abs());
    }
    worst
}

/// Bundle of unit projection directions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    vectors: Array2<f64>,
    seed: u64,
}

impl ProjectionSet {
    /// Wrap externally chosen directions; every row must be unit norm
    /// within 1e-12.
    pub fn try_new(vectors: Array2<f64>, seed: u64) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                context: "ProjectionSet",
                expected: "at least one row and one column".to_string(),
                found: format!("{}x{}", vectors.nrows(), vectors.ncols()),
            });
        }
        for (t, row) in vectors.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "projection row {t} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(ProjectionSet { vectors, seed })
    }

    pub fn t_count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw `t_count` directions uniformly on the unit sphere in `dim`
/// dimensions (normalized Gaussians). Deterministic given the seed.
pub fn sample_projections(t_count: usize, dim: usize, seed: u64) -> Result<ProjectionSet> {
    if t_count == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "projections need t_count >= 1 and dim >= 1, got {t_count} and {dim}"
        )));
    }
    let mut rng = stream_rng(seed, "ot.projections");
    let mut vectors = Array2::zeros((t_count, dim));
    for t in 0..t_count {
        loop {
            let v = normal_vector(&mut rng, dim);
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                for (a, x) in v.iter().enumerate() {
                    vectors[[t, a]] = x / norm;
                }
                break;
            }
        }
    }
    Ok(ProjectionSet { vectors, seed })
}

/// Decomposed evaluation of sum_{ijkl} (gs[i,j] - gt[k,l])^2 L[i,k] L[j,l].
///
/// Expanding the square turns the quartic sum into two marginal-weighted
/// quadratic forms plus one N^3 contraction. Clamped at zero against
/// cancellation roundoff.
fn gw_value(gs: &Array2<f64>, gt: &Array2<f64>, lam: &Array2<f64>) -> f64 {
    let rho = lam.sum_axis(Axis(1));
    let kap = lam.sum_axis(Axis(0));
    let gs2 = gs.mapv(|v| v * v);
    let gt2 = gt.mapv(|v| v * v);
    let term_s = rho.dot(&gs2.dot(&rho));
    let term_t = kap.dot(&gt2.dot(&kap));
    let mid = gs.dot(lam).dot(gt);
    let cross = (&mid * lam).sum();
    (term_s + term_t - 2.0 * cross).max(0.0)
}

/// Gromov-Wasserstein discrepancy between two similarity graphs under a
/// fixed coupling.
pub fn gw_objective(
    gs: &SimilarityGraph,
    gt: &SimilarityGraph,
    coupling: &CouplingMatrix,
) -> Result<f64> {
    let n = gs.n();
    if gt.n() != n || coupling.n() != n {
        return Err(Error::ShapeMismatch {
            context: "gw_objective",
            expected: format!("graphs and coupling of size {n}"),
            found: format!("gt {}x{0}, coupling {1}x{1}", gt.n(), coupling.n()),
        });
    }
    Ok(gw_value(gs.entries(), gt.entries(), coupling.entries()))
}

/// Linearized cost C[i,k] = sum_{j,l} (gs[i,j] - gt[k,l])^2 L[j,l].
fn gw_pseudo_cost(gs: &Array2<f64>, gt: &Array2<f64>, lam: &Array2<f64>) -> Array2<f64> {
    let n = gs.nrows();
    let rho = lam.sum_axis(Axis(1));
    let kap = lam.sum_axis(Axis(0));
    let row_part = gs.mapv(|v| v * v).dot(&rho);
    let col_part = gt.mapv(|v| v * v).dot(&kap);
    let mid = gs.dot(lam).dot(gt);
    Array2::from_shape_fn((n, n), |(i, k)| {
        row_part[i] + col_part[k] - 2.0 * mid[[i, k]]
    })
}

/// Greedy rounding of a soft plan to a permutation: repeatedly take the
/// largest remaining entry whose row and column are both unassigned.
fn greedy_round(plan: &Array2<f64>) -> Vec<usize> {
    let n = plan.nrows();
    let mut order: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .collect();
    order.sort_by(|&(i1, k1), &(i2, k2)| {
        plan[[i2, k2]]
            .partial_cmp(&plan[[i1, k1]])
            .expect("finite plan entries")
            .then(i1.cmp(&i2))
            .then(k1.cmp(&k2))
    });
    let mut perm = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    let mut assigned = 0;
    for (i, k) in order {
        if perm[i] == usize::MAX && !col_used[k] {
            perm[i] = k;
            col_used[k] = true;
            assigned += 1;
            if assigned == n {
                break;
            }
        }
    }
    perm
}

/// Objective of a permutation coupling: (1/N^2) sum_ij (gs_ij - gt_{pi,pj})^2.
fn perm_objective(gs: &Array2<f64>, gt: &Array2<f64>, perm: &[usize]) -> f64 {
    let n = perm.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff = gs[[i, j]] - gt[[perm[i], perm[j]]];
            total += diff * diff;
        }
    }
    total / (n * n) as f64
}

/// Objective change, times N^2, from remapping `rows[p] -> imgs[p]` while
/// every other row keeps its image. `rows` must be distinct.
fn perm_move_delta(
    gs: &Array2<f64>,
    gt: &Array2<f64>,
    perm: &[usize],
    rows: &[usize],
    imgs: &[usize],
) -> f64 {
    let n = perm.len();
    let img = |i: usize| match rows.iter().position(|&r| r == i) {
        Some(p) => imgs[p],
        None => perm[i],
    };
    let term = |i: usize, j: usize| {
        let old = gs[[i, j]] - gt[[perm[i], perm[j]]];
        let new = gs[[i, j]] - gt[[img(i), img(j)]];
        new * new - old * old
    };
    let mut delta = 0.0;
    for j in 0..n {
        if rows.contains(&j) {
            continue;
        }
        for &r in rows {
            delta += term(r, j) + term(j, r);
        }
    }
    for &r1 in rows {
        for &r2 in rows {
            delta += term(r1, r2);
        }
    }
    delta
}

/// Applies `rows[p] -> imgs[p]` to the permutation in place.
fn apply_move(perm: &mut [usize], rows: &[usize], imgs: &[usize]) {
    for (&r, &m) in rows.iter().zip(imgs) {
        perm[r] = m;
    }
}

/// Scans all moves that remap exactly `k` rows (fixed-point-free on the
/// subset, so each move is irreducible) and applies the first improvement
/// per subset. Returns whether any move was applied.
fn try_moves_of_size(gs: &Array2<f64>, gt: &Array2<f64>, perm: &mut [usize], k: usize) -> bool {
    let n = perm.len();
    let scale = (n * n) as f64;
    let mut improved = false;
    for rows in (0..n).combinations(k) {
        let cur: Vec<usize> = rows.iter().map(|&r| perm[r]).collect();
        for imgs in cur.iter().copied().permutations(k) {
            if imgs.iter().zip(&cur).any(|(a, b)| a == b) {
                continue;
            }
            if perm_move_delta(gs, gt, perm, &rows, &imgs) / scale < -1e-15 {
                apply_move(perm, &rows, &imgs);
                improved = true;
                // The subset's images changed; rescan it in the next sweep.
                break;
            }
        }
    }
    improved
}

/// Rounds the plan to a permutation and runs variable-neighborhood descent:
/// pairwise swaps first, then moves touching 3 and 4 rows on small plans.
/// Returns the polished permutation plan and its objective.
fn permutation_polish(
    gs: &Array2<f64>,
    gt: &Array2<f64>,
    plan: &Array2<f64>,
) -> (Array2<f64>, f64) {
    let n = plan.nrows();
    let mut perm = greedy_round(plan);
    let max_size = if n <= PERM_POLISH_WIDE_MAX { 4.min(n) } else { 2 };
    for _ in 0..PERM_POLISH_SWEEPS {
        let mut improved = false;
        for k in 2..=max_size {
            if try_moves_of_size(gs, gt, &mut perm, k) {
                improved = true;
                break;
            }
        }
        if !improved {
            break;
        }
    }
    let objective = perm_objective(gs, gt, &perm);
    let mut matrix = Array2::zeros((n, n));
    for (i, &k) in perm.iter().enumerate() {
        matrix[[i, k]] = 1.0 / n as f64;
    }
    (matrix, objective)
}

/// Alternating row/column rescaling toward uniform marginals. Returns the
/// scaled plan and its final worst marginal deviation.
fn sinkhorn_uniform(kernel: &Array2<f64>, inner_iters: usize) -> (Array2<f64>, f64) {
    let n = kernel.nrows();
    let target = 1.0 / n as f64;
    let mut u = vec![1.0f64; n];
    let mut v = vec![1.0f64; n];
    for _ in 0..inner_iters {
        for i in 0..n {
            let s: f64 = (0..n).map(|j| kernel[[i, j]] * v[j]).sum();
            u[i] = target / s;
        }
        for j in 0..n {
            let s: f64 = (0..n).map(|i| kernel[[i, j]] * u[i]).sum();
            v[j] = target / s;
        }
        // Columns are exact after the v-sweep; only rows can still drift.
        let mut worst = 0.0f64;
        for i in 0..n {
            let s: f64 = (0..n).map(|j| u[i] * kernel[[i, j]] * v[j]).sum();
            worst = worst.max((s - target).abs());
        }
        if worst < SINKHORN_TOL {
            break;
        }
    }
    let scaled = Array2::from_shape_fn((n, n), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    let violation = marginal_violation(&scaled);
    (scaled, violation)
}

/// Diagnostics from [`solve_coupling`].
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Objective after initialization and after each accepted step;
    /// non-increasing by construction.
    pub objective_history: Vec<f64>,
    /// Worst marginal deviation of the returned plan.
    pub marginal_violation: f64,
    /// Whether the returned plan meets [`MARGINAL_TOL`].
    pub converged: bool,
    /// Number of accepted proximal steps.
    pub outer_iterations: usize,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history always holds the initial objective")
    }
}

/// Entropic proximal solver for the coupling.
///
/// Each outer step linearizes the objective at the current plan, forms the
/// kernel `plan * exp(-(C - min C) / epsilon)`, and restores uniform
/// marginals by Sinkhorn rescaling. Steps that would increase the objective
/// are rejected and the iteration stops, so the reported objective history
/// is non-increasing. Starts from the uniform plan.
pub fn solve_coupling(
    gs: &SimilarityGraph,
    gt: &SimilarityGraph,
    epsilon: f64,
    outer_iters: usize,
    inner_iters: usize,
) -> Result<(CouplingMatrix, SolveReport)> {
    let n = gs.n();
    if gt.n() != n {
        return Err(Error::ShapeMismatch {
            context: "solve_coupling",
            expected: format!("{n}x{n} target graph"),
            found: format!("{0}x{0}", gt.n()),
        });
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Config(format!(
            "entropic regularization must be positive and finite, got {epsilon}"
        )));
    }

    // The objective is nonconvex, so a single descent path can settle in
    // the wrong basin. The outer budget is split across a few annealed
    // passes from different anchors (uniform first, then balanced random
    // plans from fixed streams); the best pass wins. Everything is
    // deterministic and the total work stays within the outer budget.
    let mut best: Option<(Array2<f64>, Vec<f64>, usize)> = None;
    let restarts = SOLVER_RESTARTS;
    for r in 0..restarts {
        let budget = outer_iters / restarts + usize::from(r < outer_iters % restarts);
        let anchor = if r == 0 {
            Array2::from_elem((n, n), 1.0 / (n * n) as f64)
        } else {
            let mut rng = stream_rng(SOLVER_RESTART_SEED, &format!("ot.solver.restart.{r}"));
            let kernel = crate::rng::normal_matrix(&mut rng, n, n).mapv(f64::exp);
            let (balanced, violation) = sinkhorn_uniform(&kernel, inner_iters.max(200));
            if violation > MARGINAL_TOL {
                continue;
            }
            balanced
        };
        let (plan, history, accepted) =
            anneal_pass(gs.entries(), gt.entries(), anchor, epsilon, budget, inner_iters);
        let final_obj = *history.last().expect("history is seeded");
        if best
            .as_ref()
            .is_none_or(|(_, h, _)| final_obj < *h.last().expect("history is seeded"))
        {
            best = Some((plan, history, accepted));
        }
    }
    let (mut plan, mut history, mut accepted) = best.expect("uniform anchor pass always runs");

    // Iterated local search on small plans: kick the best permutation with
    // a random 4-row remap, repolish, keep improvements. Fixed streams keep
    // the solver deterministic.
    if (4..=PERM_POLISH_WIDE_MAX).contains(&n) {
        for kick in 0..SOLVER_KICKS {
            let mut perm = greedy_round(&plan);
            let mut rng = stream_rng(SOLVER_RESTART_SEED, &format!("ot.solver.kick.{kick}"));
            let mut rows = Vec::with_capacity(4);
            while rows.len() < 4 {
                let r = rng.random_range(0..n);
                if !rows.contains(&r) {
                    rows.push(r);
                }
            }
            let imgs = [perm[rows[1]], perm[rows[2]], perm[rows[3]], perm[rows[0]]];
            apply_move(&mut perm, &rows, &imgs);
            let mut kicked = Array2::zeros((n, n));
            for (i, &k) in perm.iter().enumerate() {
                kicked[[i, k]] = 1.0 / n as f64;
            }
            let (polished, _) = permutation_polish(gs.entries(), gt.entries(), &kicked);
            let objective = gw_value(gs.entries(), gt.entries(), &polished);
            if objective < *history.last().expect("history is seeded") {
                plan = polished;
                history.push(objective);
                accepted += 1;
            }
        }
    }

    let violation = marginal_violation(&plan);
    let report = SolveReport {
        objective_history: history,
        marginal_violation: violation,
        converged: violation <= MARGINAL_TOL,
        outer_iterations: accepted,
    };
    Ok((CouplingMatrix { entries: plan }, report))
}

/// One annealed proximal descent from a feasible anchor plan, ending with
/// the rounding-plus-swap polish. Returns the best plan found, the history
/// of accepted objectives (anchor first, non-increasing) and the accepted
/// step count.
fn anneal_pass(
    gs: &Array2<f64>,
    gt: &Array2<f64>,
    anchor: Array2<f64>,
    epsilon: f64,
    budget: usize,
    inner_iters: usize,
) -> (Array2<f64>, Vec<f64>, usize) {
    let n = anchor.nrows();
    let mut plan = anchor;
    let mut history = vec![gw_value(gs, gt, &plan)];
    let mut accepted = 0;

    // The blur anneals geometrically from the pseudo-cost range at the
    // anchor down to the requested epsilon. Starting soft keeps the first
    // proximal steps close to the barycentric relaxation instead of
    // committing immediately to the nearest hard assignment, which is how
    // the plain fixed-blur iteration gets trapped away from the optimum.
    let init_cost = gw_pseudo_cost(gs, gt, &plan);
    let init_min = init_cost.iter().copied().fold(f64::INFINITY, f64::min);
    let init_max = init_cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let blur_ratio = ((init_max - init_min) / epsilon).max(1.0);

    for step in 0..budget {
        let frac = if budget <= 1 {
            1.0
        } else {
            step as f64 / (budget - 1) as f64
        };
        let blur = epsilon * blur_ratio.powf(1.0 - frac);
        let cost = gw_pseudo_cost(gs, gt, &plan);
        let cost_min = cost.iter().copied().fold(f64::INFINITY, f64::min);
        let kernel = Array2::from_shape_fn((n, n), |(i, k)| {
            (plan[[i, k]] * (-(cost[[i, k]] - cost_min) / blur).exp()).max(KERNEL_FLOOR)
        });
        let (candidate, cand_violation) = sinkhorn_uniform(&kernel, inner_iters);
        if cand_violation > MARGINAL_TOL {
            // An unconverged rescaling would hand back an infeasible plan;
            // skip it and let the next (sharper) step try again.
            continue;
        }
        let objective = gw_value(gs, gt, &candidate);
        if objective >= *history.last().expect("history is seeded") {
            continue;
        }
        plan = candidate;
        history.push(objective);
        accepted += 1;
    }

    // Round to a permutation and hill-climb on small row remaps;
    // permutations satisfy the marginals exactly, so this can only tighten
    // the result.
    let (polished, _) = permutation_polish(gs, gt, &plan);
    let polished_objective = gw_value(gs, gt, &polished);
    if polished_objective < *history.last().expect("history is seeded") {
        plan = polished;
        history.push(polished_objective);
        accepted += 1;
    }
    (plan, history, accepted)
}

/// Exhaustive search over all N! permutation couplings; N <= 6.
///
/// Permutation plans satisfy the marginal constraints exactly, so the
/// minimum found is an upper bound on the continuous optimum; for graphs of
/// identical point clouds that bound is 0 and tight.
pub fn brute_force_coupling(
    gs: &SimilarityGraph,
    gt: &SimilarityGraph,
) -> Result<(CouplingMatrix, f64)> {
    let n = gs.n();
    if gt.n() != n {
        return Err(Error::ShapeMismatch {
            context: "brute_force_coupling",
            expected: format!("{n}x{n} target graph"),
            found: format!("{0}x{0}", gt.n()),
        });
    }
    if n > BRUTE_FORCE_MAX {
        return Err(Error::SizeLimit {
            max: BRUTE_FORCE_MAX,
            got: n,
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let coupling = CouplingMatrix::from_permutation(&perm)?;
        let value = gw_value(gs.entries(), gt.entries(), coupling.entries());
        match &best {
            Some((_, incumbent)) if value >= *incumbent => {}
            _ => best = Some((perm, value)),
        }
    }
    let (perm, value) = best.expect("n >= 1 guarantees at least one permutation");
    Ok((CouplingMatrix::from_permutation(&perm)?, value))
}

fn outer_product(x: &Array1<f64>, y: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((x.len(), y.len()), |(i, j)| x[i] * y[j])
}

/// Per-slice quantities shared by the loss and gradient paths.
struct SliceTerms {
    /// |b_k - b_l| comparison matrix for the rotated target projections.
    b_abs: Array2<f64>,
    /// Coupling-contracted source comparisons, Lambda^T A Lambda.
    mid: Array2<f64>,
    /// Projected rotated-target scalars b.
    b: Array1<f64>,
    loss: f64,
}

fn slice_terms(
    a: &Array1<f64>,
    b: Array1<f64>,
    lam: &Array2<f64>,
    rho: &Array1<f64>,
    kap: &Array1<f64>,
) -> SliceTerms {
    let n = a.len();
    let a_abs = Array2::from_shape_fn((n, n), |(i, j)| (a[i] - a[j]).abs());
    let b_abs = Array2::from_shape_fn((n, n), |(k, l)| (b[k] - b[l]).abs());
    let a_sq = a_abs.mapv(|v| v * v);
    let b_sq = b_abs.mapv(|v| v * v);
    let term_s = rho.dot(&a_sq.dot(rho));
    let term_t = kap.dot(&b_sq.dot(kap));
    let mid = lam.t().dot(&a_abs).dot(lam);
    let cross = (&mid * &b_abs).sum();
    SliceTerms {
        b_abs,
        mid,
        b,
        loss: term_s + term_t - 2.0 * cross,
    }
}

fn check_sliced_shapes(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    param: &SkewParamMatrix,
    projections: &ProjectionSet,
    coupling: &CouplingMatrix,
) -> Result<()> {
    let n = src.n();
    let d = src.dim();
    if tgt.n() != n || tgt.dim() != d || coupling.n() != n {
        return Err(Error::ShapeMismatch {
            context: "sliced GW",
            expected: format!("target batch {n}x{d} and coupling {n}x{n}"),
            found: format!(
                "target {}x{}, coupling {2}x{2}",
                tgt.n(),
                tgt.dim(),
                coupling.n()
            ),
        });
    }
    if param.dim() != d || projections.dim() != d {
        return Err(Error::ShapeMismatch {
            context: "sliced GW",
            expected: format!("rotation parameter and projections of dimension {d}"),
            found: format!(
                "parameter {}, projections {}",
                param.dim(),
                projections.dim()
            ),
        });
    }
    Ok(())
}

/// Sliced Gromov-Wasserstein loss.
///
/// Features are projected onto each direction; within a slice the scalar
/// clouds are compared through |a_i - a_j| distance matrices under the
/// (fixed) coupling, and slices are averaged. The rotation enters through
/// the target projections b_k = <R tgt_k, pi>, so unlike the full-graph
/// objective this loss is rotation-sensitive.
pub fn sliced_gw_loss(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    param: &SkewParamMatrix,
    projections: &ProjectionSet,
    coupling: &CouplingMatrix,
) -> Result<f64> {
    check_sliced_shapes(src, tgt, param, projections, coupling)?;
    let rotation = rotation_from_param(param);
    let lam = coupling.entries();
    let rho = lam.sum_axis(Axis(1));
    let kap = lam.sum_axis(Axis(0));

    let mut total = 0.0;
    for pi in projections.vectors().rows() {
        let pi = pi.to_owned();
        let a = src.rows().dot(&pi);
        let back_projected = rotation.matrix().t().dot(&pi);
        let b = tgt.rows().dot(&back_projected);
        total += slice_terms(&a, b, lam, &rho, &kap).loss;
    }
    Ok((total / projections.t_count() as f64).max(0.0))
}

/// Loss plus exact gradients of [`sliced_gw_loss`] with respect to the
/// target rows and the rotation parameter (projections and coupling held
/// fixed).
#[derive(Debug, Clone)]
pub struct SlicedGradients {
    pub loss: f64,
    pub d_tgt: Array2<f64>,
    pub d_param: Array2<f64>,
}

pub fn sliced_gw_grad(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    param: &SkewParamMatrix,
    projections: &ProjectionSet,
    coupling: &CouplingMatrix,
) -> Result<SlicedGradients> {
    check_sliced_shapes(src, tgt, param, projections, coupling)?;
    let n = src.n();
    let d = src.dim();
    let rotation = rotation_from_param(param);
    let lam = coupling.entries();
    let rho = lam.sum_axis(Axis(1));
    let kap = lam.sum_axis(Axis(0));

    let mut total = 0.0;
    let mut d_tgt = Array2::<f64>::zeros((n, d));
    let mut d_rotation = Array2::<f64>::zeros((d, d));
    for pi in projections.vectors().rows() {
        let pi = pi.to_owned();
        let a = src.rows().dot(&pi);
        let back_projected = rotation.matrix().t().dot(&pi);
        let b = tgt.rows().dot(&back_projected);
        let terms = slice_terms(&a, b, lam, &rho, &kap);
        total += terms.loss;

        // dLoss/dB[k,l] = 2 B[k,l] kap_k kap_l - 2 mid[k,l]; both factors
        // are symmetric, so the chain through |b_k - b_l| collapses to
        // db_m = 2 sum_l W[m,l] sign(b_m - b_l).
        let mut db = Array1::<f64>::zeros(n);
        for m in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                let w = 2.0 * (terms.b_abs[[m, l]] * kap[m] * kap[l] - terms.mid[[m, l]]);
                acc += w * (terms.b[m] - terms.b[l]).signum_or_zero();
            }
            db[m] = 2.0 * acc;
        }

        d_tgt += &outer_product(&db, &back_projected);
        let weighted_rows = tgt.rows().t().dot(&db);
        d_rotation += &outer_product(&pi, &weighted_rows);
    }

    let t = projections.t_count() as f64;
    d_tgt.mapv_inplace(|v| v / t);
    d_rotation.mapv_inplace(|v| v / t);
    let d_param = grad_through_rotation(param, &d_rotation);
    Ok(SlicedGradients {
        loss: (total / t).max(0.0),
        d_tgt,
        d_param,
    })
}

/// `signum` that returns 0 at 0 (f64::signum(0.0) is 1.0 by IEEE sign-bit
/// semantics, which would be wrong for the |x| subgradient at a tie).
trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}
