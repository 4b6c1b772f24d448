//! Domain types shared by every stage of the pipeline: the problem bundle,
//! hyperparameters, the optimized state, the pixel grid and the class weights.
//!
//! Pixels are stored column-wise in every matrix, in row-major grid order:
//! pixel `p` sits at row `p / cols`, column `p % cols`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Tolerance on the sum-to-one constraint of attribution columns.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Which classification loss couples `C` with `QZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Weighted quadratic loss `½‖CD − QZD‖²`.
    Quadratic,
    /// Weighted cross-entropy on a sigmoid of `QZ`, plus weight decay on `Q`.
    CrossEntropy,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Quadratic => f.write_str("quadratic"),
            Variant::CrossEntropy => f.write_str("cross_entropy"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quadratic" | "q" => Ok(Variant::Quadratic),
            "cross_entropy" | "cross-entropy" | "ce" => Ok(Variant::CrossEntropy),
            other => Err(Error::InvalidParameter(format!("unknown variant `{other}`"))),
        }
    }
}

/// Term weights and solver knobs, after scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_h: f64,
    pub lambda_q: f64,
    pub lambda_c: f64,
    /// Smoothing inside the square root of the vectorial TV.
    pub epsilon_tv: f64,
    /// Offset in the edge-weight denominator.
    pub sigma_beta: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
    /// Step inflation; each block step is `1 / (alpha * L)`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_h: 0.1,
            lambda_q: 0.1,
            lambda_c: 1e-3,
            epsilon_tv: 1e-3,
            sigma_beta: 0.01,
            stop_tol: 1e-4,
            max_iters: 5000,
            alpha: 2.0,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_h", self.lambda_h),
            ("lambda_q", self.lambda_q),
            ("lambda_c", self.lambda_c),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.epsilon_tv.is_finite() && self.epsilon_tv > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon_tv must be > 0, got {}", self.epsilon_tv)));
        }
        if !(self.sigma_beta.is_finite() && self.sigma_beta > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_beta must be > 0, got {}", self.sigma_beta)));
        }
        if !(self.stop_tol.is_finite() && self.stop_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("stop_tol must be > 0, got {}", self.stop_tol)));
        }
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be > 1, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// User-facing weights before the size/dynamics normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWeights {
    pub lambda0_tilde: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_h: f64,
    pub lambda_q_tilde: f64,
    pub lambda_c: f64,
}

impl Default for RawWeights {
    fn default() -> Self {
        Self {
            lambda0_tilde: 100.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_h: 0.1,
            lambda_q_tilde: 0.1,
            lambda_c: 1e-3,
        }
    }
}

/// Normalizes the data-fit and weight-decay weights to the image size and dynamics:
/// `lambda0 = λ̃0 / (L ‖Y‖∞²)` and `lambda_q = (P / C) λ̃q`. Everything else
/// in `base` is kept; the remaining raw weights pass through unchanged.
pub fn scale_hyperparameters(
    raw: &RawWeights,
    observations: ArrayView2<f64>,
    num_classes: usize,
    base: Hyperparameters,
) -> Result<Hyperparameters> {
    let (bands, pixels) = observations.dim();
    if bands == 0 || pixels == 0 {
        return Err(Error::DimensionMismatch("observation matrix is empty".into()));
    }
    if num_classes == 0 {
        return Err(Error::InvalidParameter("num_classes must be >= 1".into()));
    }
    let y_inf = observations.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if y_inf == 0.0 {
        return Err(Error::ZeroImage);
    }
    Ok(Hyperparameters {
        lambda0: raw.lambda0_tilde / (bands as f64 * y_inf * y_inf),
        lambda1: raw.lambda1,
        lambda2: raw.lambda2,
        lambda_h: raw.lambda_h,
        lambda_q: pixels as f64 / num_classes as f64 * raw.lambda_q_tilde,
        lambda_c: raw.lambda_c,
        ..base
    })
}

/// Pixel lattice with per-pixel vTV edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub rows: usize,
    pub cols: usize,
    /// `rows × cols`, nonnegative, sums to one.
    pub beta: Array2<f64>,
}

impl SpatialGrid {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        let n = (rows * cols).max(1) as f64;
        Self { rows, cols, beta: Array2::from_elem((rows, cols), 1.0 / n) }
    }

    pub fn num_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn coords(&self, p: usize) -> (usize, usize) {
        (p / self.cols, p % self.cols)
    }

    pub fn max_beta(&self) -> f64 {
        self.beta.iter().fold(0.0_f64, |m, &b| m.max(b))
    }
}

/// Observations, dictionary, labels and model settings. Treated as immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    /// `L × P` observed spectra.
    pub observations: Array2<f64>,
    /// `L × R` endmember spectra.
    pub dictionary: Array2<f64>,
    /// Per-pixel 0-based class id, `None` when unlabeled.
    pub labels: Vec<Option<usize>>,
    pub grid: SpatialGrid,
    pub num_classes: usize,
    pub num_clusters: usize,
    pub variant: Variant,
    pub hyper: Hyperparameters,
}

impl Problem {
    pub fn bands(&self) -> usize {
        self.observations.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.observations.ncols()
    }

    pub fn num_atoms(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn labeled(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&p| self.labels[p].is_some()).collect()
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&p| self.labels[p].is_none()).collect()
    }

    pub fn with_dictionary(self, dictionary: Array2<f64>) -> Self {
        Self { dictionary, ..self }
    }
}

/// Checks every problem invariant and returns the problem untouched, or the full
/// list of violations.
pub fn validate_problem(problem: Problem) -> std::result::Result<Problem, Vec<Error>> {
    let mut errors = Vec::new();
    let (bands, pixels) = problem.observations.dim();

    if bands == 0 || pixels == 0 {
        errors.push(Error::DimensionMismatch(format!("observations are {bands} × {pixels}")));
    }
    if problem.dictionary.nrows() != bands {
        errors.push(Error::DimensionMismatch(format!(
            "dictionary has {} rows, observations have {bands} bands",
            problem.dictionary.nrows()
        )));
    }
    if problem.dictionary.ncols() == 0 {
        errors.push(Error::DimensionMismatch("dictionary has no column".into()));
    }
    if problem.labels.len() != pixels {
        errors.push(Error::DimensionMismatch(format!(
            "{} labels for {pixels} pixels",
            problem.labels.len()
        )));
    }
    if problem.grid.num_pixels() != pixels || problem.grid.beta.dim() != (problem.grid.rows, problem.grid.cols) {
        errors.push(Error::DimensionMismatch(format!(
            "grid {} × {} does not cover {pixels} pixels",
            problem.grid.rows, problem.grid.cols
        )));
    }
    if problem.num_classes < 2 {
        errors.push(Error::InvalidParameter(format!("num_classes must be >= 2, got {}", problem.num_classes)));
    }
    if problem.num_clusters < 1 {
        errors.push(Error::InvalidParameter("num_clusters must be >= 1".into()));
    }

    for ((i, j), v) in problem.observations.indexed_iter() {
        if !v.is_finite() {
            errors.push(Error::NonFiniteEntry(i, j));
        }
    }
    for ((i, j), v) in problem.dictionary.indexed_iter() {
        if !v.is_finite() {
            errors.push(Error::NonFiniteEntry(i, j));
        } else if *v < 0.0 {
            errors.push(Error::NegativeDictionary(i, j));
        }
    }
    for (r, col) in problem.dictionary.columns().into_iter().enumerate() {
        if col.iter().all(|&v| v == 0.0) {
            errors.push(Error::ZeroDictionaryColumn(r));
        }
    }

    let mut counts = vec![0usize; problem.num_classes];
    for label in problem.labels.iter().flatten() {
        if *label >= problem.num_classes {
            errors.push(Error::InvalidParameter(format!(
                "label {} exceeds {} classes",
                label + 1,
                problem.num_classes
            )));
        } else {
            counts[*label] += 1;
        }
    }
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            errors.push(Error::EmptyClass(i + 1));
        }
    }

    if let Err(e) = problem.hyper.validate() {
        errors.push(e);
    }

    if errors.is_empty() {
        Ok(problem)
    } else {
        Err(errors)
    }
}

/// Diagonal of the class-balancing matrix `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub d: Array1<f64>,
}

impl ClassWeights {
    /// `d_p²`, the weights that actually enter every loss and gradient.
    pub fn squared(&self) -> Array1<f64> {
        self.d.mapv(|v| v * v)
    }
}

/// `d_p = sqrt(1/|L_i|)` on the labeled pixels of class `i`, `sqrt(1/|U|)` on unlabeled pixels.
pub fn build_class_weights(labels: &[Option<usize>], num_classes: usize) -> Result<ClassWeights> {
    let mut counts = vec![0usize; num_classes];
    let mut unlabeled = 0usize;
    for label in labels {
        match label {
            Some(i) if *i < num_classes => counts[*i] += 1,
            Some(i) => {
                return Err(Error::InvalidParameter(format!("label {} exceeds {num_classes} classes", i + 1)))
            }
            None => unlabeled += 1,
        }
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(i + 1));
    }
    let d = labels
        .iter()
        .map(|label| match label {
            Some(i) => (1.0 / counts[*i] as f64).sqrt(),
            None => (1.0 / unlabeled as f64).sqrt(),
        })
        .collect();
    Ok(ClassWeights { d })
}

/// The five optimized blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// `R × P` abundances.
    pub h: Array2<f64>,
    /// `R × K` cluster centroids.
    pub b: Array2<f64>,
    /// `K × P` cluster attributions.
    pub z: Array2<f64>,
    /// `C × K` classifier weights.
    pub q: Array2<f64>,
    /// `C × P` class attributions; labeled columns are fixed one-hot vectors.
    pub c: Array2<f64>,
}

impl State {
    pub fn is_finite(&self) -> bool {
        [&self.h, &self.b, &self.z, &self.q, &self.c]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// One-hot `C × P` attribution matrix for the labeled pixels, `fill` elsewhere.
pub fn attribution_matrix(labels: &[Option<usize>], num_classes: usize, fill: f64) -> Array2<f64> {
    let mut c = Array2::from_elem((num_classes, labels.len()), fill);
    for (p, label) in labels.iter().enumerate() {
        if let Some(i) = label {
            c.column_mut(p).fill(0.0);
            c[[*i, p]] = 1.0;
        }
    }
    c
}

/// Checks dimensions and every feasibility invariant of `state` against `problem`.
pub fn check_feasibility(state: &State, problem: &Problem) -> Result<()> {
    let r = problem.num_atoms();
    let p = problem.num_pixels();
    let k = problem.num_clusters;
    let c = problem.num_classes;
    let shapes = [
        ("H", state.h.dim(), (r, p)),
        ("B", state.b.dim(), (r, k)),
        ("Z", state.z.dim(), (k, p)),
        ("Q", state.q.dim(), (c, k)),
        ("C", state.c.dim(), (c, p)),
    ];
    for (name, got, want) in shapes {
        if got != want {
            return Err(Error::DimensionMismatch(format!("{name} is {got:?}, expected {want:?}")));
        }
    }
    if !state.is_finite() {
        return Err(Error::InfeasibleState("non-finite entry".into()));
    }
    if let Some(v) = state.h.iter().find(|v| **v < 0.0) {
        return Err(Error::InfeasibleState(format!("H has negative entry {v}")));
    }
    if let Some(v) = state.b.iter().find(|v| **v < 0.0) {
        return Err(Error::InfeasibleState(format!("B has negative entry {v}")));
    }
    for (j, col) in state.z.columns().into_iter().enumerate() {
        if col.iter().any(|v| *v < 0.0) || (col.sum() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InfeasibleState(format!("Z column {j} is off the simplex")));
        }
    }
    for (j, col) in state.c.columns().into_iter().enumerate() {
        match problem.labels[j] {
            Some(label) => {
                let one_hot = col.iter().enumerate().all(|(i, &v)| v == if i == label { 1.0 } else { 0.0 });
                if !one_hot {
                    return Err(Error::InfeasibleState(format!("labeled C column {j} is not one-hot")));
                }
            }
            None => {
                if col.iter().any(|v| *v < 0.0) || (col.sum() - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InfeasibleState(format!("C column {j} is off the simplex")));
                }
            }
        }
    }
    Ok(())
}
