//! Initial estimates: k-means, self-dictionary candidate selection from the
//! labeled pixels, group-lasso pruning, and the resulting starting state.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm_sym;
use crate::types::{attribution_matrix, Problem, State};

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    /// Clusters per class for candidate extraction.
    pub j: usize,
    /// Group-lasso weight; `None` uses `0.1 · max |ỸᵀY|`.
    pub alpha_group: Option<f64>,
    pub group_lasso_iters: usize,
    pub group_lasso_tol: f64,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    pub row_prune_tol: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            j: 4,
            alpha_group: None,
            group_lasso_iters: 5000,
            group_lasso_tol: 1e-6,
            kmeans_restarts: 5,
            kmeans_iters: 100,
            row_prune_tol: 1e-6,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::InvalidParameter("J must be >= 1".into()));
        }
        if let Some(a) = self.alpha_group {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidParameter(format!("alpha_group must be >= 0, got {a}")));
            }
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::InvalidParameter("kmeans_restarts must be >= 1".into()));
        }
        Ok(())
    }

    fn kmeans(&self, seed: u64) -> KMeansConfig {
        KMeansConfig { restarts: self.kmeans_restarts, max_iters: self.kmeans_iters, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 5, max_iters: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `d × K`
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    /// SSE after every Lloyd update of the retained restart.
    pub sse_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.columns().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn sse_of(points: &ArrayView2<f64>, centroids: &Array2<f64>, assignments: &[usize]) -> f64 {
    points
        .columns()
        .into_iter()
        .zip(assignments)
        .map(|(p, &k)| sq_dist(p, centroids.column(k)))
        .sum()
}

fn seed_plus_plus(points: &ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.ncols();
    let mut centroids = Array2::zeros((points.nrows(), k));
    let first = rng.random_range(0..n);
    centroids.column_mut(0).assign(&points.column(first));
    let mut dist: Vec<f64> = points.columns().into_iter().map(|p| sq_dist(p, points.column(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..n),
        };
        centroids.column_mut(c).assign(&points.column(pick));
        for (d, p) in dist.iter_mut().zip(points.columns()) {
            *d = d.min(sq_dist(p, points.column(pick)));
        }
    }
    centroids
}

fn update_means(points: &ArrayView2<f64>, centroids: &mut Array2<f64>, assignments: &mut [usize]) {
    let k = centroids.ncols();
    loop {
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (p, &a) in points.columns().into_iter().zip(assignments.iter()) {
            sums.column_mut(a).scaled_add(1.0, &p);
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            for (mut col, (s, &c)) in centroids.columns_mut().into_iter().zip(sums.columns().into_iter().zip(&counts)) {
                col.assign(&(&s / c as f64));
            }
            return;
        };
        // move the point farthest from its own centroid into the empty cluster
        let far = points
            .columns()
            .into_iter()
            .zip(assignments.iter())
            .enumerate()
            .filter(|(_, (_, &a))| counts[a] > 1)
            .map(|(i, (p, &a))| (i, sq_dist(p, centroids.column(a))))
            .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        assignments[far.0] = empty;
        centroids.column_mut(empty).assign(&points.column(far.0));
    }
}

fn lloyd(points: &ArrayView2<f64>, mut centroids: Array2<f64>, max_iters: usize) -> KMeans {
    let mut assignments: Vec<usize> = points.columns().into_iter().map(|p| nearest(p, &centroids).0).collect();
    update_means(points, &mut centroids, &mut assignments);
    let mut history = vec![sse_of(points, &centroids, &assignments)];
    for _ in 0..max_iters {
        let next: Vec<usize> = points.columns().into_iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
        update_means(points, &mut centroids, &mut assignments);
        history.push(sse_of(points, &centroids, &assignments));
    }
    let mut km = KMeans { centroids, assignments, sse: *history.last().unwrap(), sse_history: history };
    transfer_points(points, &mut km);
    km
}

/// Single-point transfers (Hartigan): moves a point to another cluster when
/// that lowers the SSE once both means are updated. Lloyd fixed points can
/// still admit such moves; the result of this pass is also a Lloyd fixed point.
fn transfer_points(points: &ArrayView2<f64>, km: &mut KMeans) {
    let k = km.centroids.ncols();
    let mut counts = vec![0usize; k];
    for &a in &km.assignments {
        counts[a] += 1;
    }
    loop {
        let mut moved = false;
        for (i, p) in points.columns().into_iter().enumerate() {
            let a = km.assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, km.centroids.column(a));
            let mut best = (a, 0.0);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let gain = removal - nb / (nb + 1.0) * sq_dist(p, km.centroids.column(b));
                // relative margin keeps rounding from cycling a point back and forth
                if gain > best.1 && gain > 1e-12 * removal {
                    best = (b, gain);
                }
            }
            let (b, gain) = best;
            if b == a {
                continue;
            }
            let nb = counts[b] as f64;
            let shrunk = (&km.centroids.column(a) * na - p) / (na - 1.0);
            let grown = (&km.centroids.column(b) * nb + p) / (nb + 1.0);
            km.centroids.column_mut(a).assign(&shrunk);
            km.centroids.column_mut(b).assign(&grown);
            counts[a] -= 1;
            counts[b] += 1;
            km.assignments[i] = b;
            km.sse -= gain;
            moved = true;
        }
        if !moved {
            break;
        }
        // exact values, free of the drift of incremental updates
        update_means(points, &mut km.centroids, &mut km.assignments);
        km.sse = sse_of(points, &km.centroids, &km.assignments);
        km.sse_history.push(km.sse);
    }
}

/// Lloyd's algorithm from k-means++ seeding, finished by single-point
/// transfers; keeps the restart with the lowest SSE (earliest restart on ties). `points` holds one point per column.
pub fn kmeans(points: ArrayView2<f64>, k: usize, config: &KMeansConfig) -> Result<KMeans> {
    let n = points.ncols();
    if k == 0 {
        return Err(Error::InvalidParameter("k-means needs K >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { needed: k, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..config.restarts.max(1) {
        let start = seed_plus_plus(&points, k, &mut rng);
        let run = lloyd(&points, start, config.max_iters);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Angle between two spectra, in radians.
pub fn spectral_angle(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Candidate spectra drawn from the labeled pixels, with the per-class
/// clustering that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    /// `L × n` candidate spectra, class-major then cluster order.
    pub spectra: Array2<f64>,
    /// Source pixel of every candidate.
    pub pixels: Vec<usize>,
    /// 0-based class of every candidate.
    pub classes: Vec<usize>,
    /// `L × n` centroid of the cluster each candidate was drawn from.
    pub centroids: Array2<f64>,
    /// Member pixels of every cluster.
    pub members: Vec<Vec<usize>>,
}

/// Per class, clusters the labeled spectra into `min(J, count)` groups and keeps
/// from each group the member whose smallest spectral angle to any other
/// group's centroid is largest. Without other groups the medoid is kept.
pub fn select_candidates(problem: &Problem, config: &InitConfig) -> Result<Candidates> {
    config.validate()?;
    let y = &problem.observations;
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut classes = Vec::new();
    let mut centroid_cols: Vec<Array1<f64>> = Vec::new();
    for class in 0..problem.num_classes {
        let pixels: Vec<usize> = (0..problem.num_pixels()).filter(|&p| problem.labels[p] == Some(class)).collect();
        if pixels.is_empty() {
            return Err(Error::EmptyClass(class + 1));
        }
        let spectra = y.select(Axis(1), &pixels);
        let j = config.j.min(pixels.len());
        let km = kmeans(spectra.view(), j, &config.kmeans(config.seed.wrapping_add(class as u64)))?;
        for cluster in 0..j {
            let in_cluster: Vec<usize> =
                pixels.iter().zip(&km.assignments).filter(|(_, &a)| a == cluster).map(|(&p, _)| p).collect();
            members.push(in_cluster);
            classes.push(class);
            centroid_cols.push(km.centroids.column(cluster).to_owned());
        }
    }

    let mut pixels = Vec::with_capacity(members.len());
    for (g, group) in members.iter().enumerate() {
        let pick = if members.len() == 1 {
            medoid(y, group)?
        } else {
            let mut best = (group[0], f64::NEG_INFINITY);
            for &p in group {
                let mut closest = f64::INFINITY;
                for (h, c) in centroid_cols.iter().enumerate() {
                    if h != g {
                        closest = closest.min(spectral_angle(y.column(p), c.view())?);
                    }
                }
                if closest > best.1 {
                    best = (p, closest);
                }
            }
            best.0
        };
        pixels.push(pick);
    }

    let mut centroids = Array2::zeros((y.nrows(), members.len()));
    for (mut col, c) in centroids.columns_mut().into_iter().zip(&centroid_cols) {
        col.assign(c);
    }
    Ok(Candidates { spectra: y.select(Axis(1), &pixels), pixels, classes, centroids, members })
}

/// Member with the smallest summed spectral angle to the rest of the group.
fn medoid(y: &Array2<f64>, group: &[usize]) -> Result<usize> {
    let mut best = (group[0], f64::INFINITY);
    for &p in group {
        let mut total = 0.0;
        for &q in group {
            total += spectral_angle(y.column(p), y.column(q))?;
        }
        if total < best.1 {
            best = (p, total);
        }
    }
    Ok(best.0)
}

/// Default group-lasso weight: a tenth of the largest entry of `|ỸᵀY|`.
pub fn default_alpha_group(observations: ArrayView2<f64>, candidates: ArrayView2<f64>) -> f64 {
    0.1 * candidates.t().dot(&observations).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn row_norm_sum(h: &Array2<f64>) -> f64 {
    h.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum()
}

/// `½‖Y − AH‖²` through `AᵀA` and `AᵀY`, without forming the residual.
fn quadratic_fit(y_sq: f64, gram: &Array2<f64>, cross: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let gh = gram.dot(h);
    let quad: f64 = gh.iter().zip(h).map(|(a, b)| a * b).sum();
    let lin: f64 = cross.iter().zip(h).map(|(a, b)| a * b).sum();
    0.5 * (y_sq - 2.0 * lin + quad)
}

/// Accelerated proximal gradient for
/// `½‖Y − ỸH‖² + α Σ_r ‖h_r‖₂`, started from `H = 0`.
///
/// Stops when the relative objective change falls below `tol` or after `iters`
/// iterations.
pub fn solve_group_lasso(
    observations: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    alpha: f64,
    iters: usize,
    tol: f64,
) -> Result<Array2<f64>> {
    if observations.nrows() != candidates.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "candidates have {} bands, image has {}",
            candidates.nrows(),
            observations.nrows()
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha_group must be >= 0, got {alpha}")));
    }
    let gram = candidates.t().dot(&candidates);
    let cross = candidates.t().dot(&observations);
    let lipschitz = spectral_norm_sym(gram.view());
    let mut h = Array2::zeros((candidates.ncols(), observations.ncols()));
    if lipschitz == 0.0 {
        return Ok(h);
    }
    let step = 1.0 / lipschitz;

    let mut extrapolated = h.clone();
    let mut t = 1.0_f64;
    let y_sq = observations.iter().map(|v| v * v).sum::<f64>();
    let mut previous = quadratic_fit(y_sq, &gram, &cross, &h);
    for _ in 0..iters {
        let grad = gram.dot(&extrapolated) - &cross;
        let mut next = &extrapolated - &(grad * step);
        for mut row in next.rows_mut() {
            let norm = row.dot(&row).sqrt();
            let shrink = if norm > 0.0 { (1.0 - alpha * step / norm).max(0.0) } else { 0.0 };
            row *= shrink;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let objective = quadratic_fit(y_sq, &gram, &cross, &next) + alpha * row_norm_sum(&next);
        // restart the momentum whenever the objective goes up
        let momentum = if objective > previous { 0.0 } else { (t - 1.0) / t_next };
        extrapolated = &next + &((&next - &h) * momentum);
        t = if momentum == 0.0 { 1.0 } else { t_next };
        h = next;
        let change = (previous - objective).abs() / previous.abs().max(f64::MIN_POSITIVE);
        previous = objective;
        if change < tol {
            break;
        }
    }
    Ok(h)
}

/// Starting point of the solver together with the dictionary it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    /// `L × R` dictionary the state is expressed in.
    pub dictionary: Array2<f64>,
    pub state: State,
    /// Source pixel of every retained atom; empty when the dictionary was given.
    pub atom_pixels: Vec<usize>,
    pub alpha_group: f64,
}

/// Self-dictionary initialization: candidates from the labeled pixels, group
/// lasso over them, pruning of inactive rows, then k-means on the abundances.
/// Any dictionary stored in `problem` is ignored.
pub fn initialize(problem: &Problem, config: &InitConfig) -> Result<Initialization> {
    let candidates = select_candidates(problem, config)?;
    let y = problem.observations.view();
    let alpha = config
        .alpha_group
        .unwrap_or_else(|| default_alpha_group(y, candidates.spectra.view()));
    let h0 = solve_group_lasso(y, candidates.spectra.view(), alpha, config.group_lasso_iters, config.group_lasso_tol)?;
    let keep: Vec<usize> = h0
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.dot(r).sqrt() > config.row_prune_tol)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::AllRowsPruned);
    }
    let dictionary = candidates.spectra.select(Axis(1), &keep);
    let h = h0.select(Axis(0), &keep).mapv(|v| v.max(0.0));
    let atom_pixels = keep.iter().map(|&i| candidates.pixels[i]).collect();
    let state = assemble_state(problem, h, config)?;
    Ok(Initialization { dictionary, state, atom_pixels, alpha_group: alpha })
}

/// Initialization for a known dictionary: `H⁰` minimizes
/// `λ0/2 ‖Y − WH‖² + λh ‖H‖₁` over `H ≥ 0`, the other blocks follow as in
/// [`initialize`].
pub fn initialize_with_dictionary(problem: &Problem, config: &InitConfig) -> Result<Initialization> {
    config.validate()?;
    let w = &problem.dictionary;
    if w.ncols() == 0 || w.nrows() != problem.bands() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary is {:?} for {} bands",
            w.dim(),
            problem.bands()
        )));
    }
    let hyper = &problem.hyper;
    let threshold = if hyper.lambda0 > 0.0 { hyper.lambda_h / hyper.lambda0 } else { 0.0 };
    let h = nonneg_lasso(problem.observations.view(), w.view(), threshold, config.group_lasso_iters, config.group_lasso_tol);
    let state = assemble_state(problem, h, config)?;
    Ok(Initialization { dictionary: w.clone(), state, atom_pixels: Vec::new(), alpha_group: 0.0 })
}

/// Accelerated projected gradient for `½‖Y − WH‖² + τ‖H‖₁`, `H ≥ 0`.
fn nonneg_lasso(y: ArrayView2<f64>, w: ArrayView2<f64>, tau: f64, iters: usize, tol: f64) -> Array2<f64> {
    let gram = w.t().dot(&w);
    let cross = w.t().dot(&y);
    let lipschitz = spectral_norm_sym(gram.view());
    let mut h = Array2::zeros((w.ncols(), y.ncols()));
    if lipschitz == 0.0 {
        return h;
    }
    let step = 1.0 / lipschitz;
    let y_sq = y.iter().map(|v| v * v).sum::<f64>();
    let objective = |h: &Array2<f64>| quadratic_fit(y_sq, &gram, &cross, h) + tau * h.sum();
    let mut extrapolated = h.clone();
    let mut t = 1.0_f64;
    let mut previous = objective(&h);
    for _ in 0..iters {
        let grad = gram.dot(&extrapolated) - &cross;
        let next = (&extrapolated - &(grad * step)).mapv(|v| (v - tau * step).max(0.0));
        let value = objective(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = if value > previous { 0.0 } else { (t - 1.0) / t_next };
        extrapolated = &next + &((&next - &h) * momentum);
        t = if momentum == 0.0 { 1.0 } else { t_next };
        h = next;
        let change = (previous - value).abs() / previous.abs().max(f64::MIN_POSITIVE);
        previous = value;
        if change < tol {
            break;
        }
    }
    h
}

fn assemble_state(problem: &Problem, h: Array2<f64>, config: &InitConfig) -> Result<State> {
    let k = problem.num_clusters;
    let km = kmeans(h.view(), k, &config.kmeans(config.seed))?;
    let p = problem.num_pixels();
    let mut z = Array2::zeros((k, p));
    for (j, &a) in km.assignments.iter().enumerate() {
        z[[a, j]] = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let q = Array2::from_shape_fn((problem.num_classes, k), |_| rng.random_range(-0.01..0.01));
    let c = attribution_matrix(&problem.labels, problem.num_classes, 1.0 / problem.num_classes as f64);
    Ok(State { h, b: km.centroids, z, q, c })
}
