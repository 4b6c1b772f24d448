#![allow(dead_code)]

use cofact::objective::{Block, Model};
use cofact::prox::project_simplex_columns_in_place;
use cofact::types::{attribution_matrix, build_class_weights, ClassWeights, Hyperparameters, Problem, SpatialGrid, State, Variant};
use cofact::vtv::compute_edge_weights;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gradient-test size: L = 12, P = 40 on a 5 × 8 grid, R = 5, K = 4, C = 3.
pub const BANDS: usize = 12;
pub const ROWS: usize = 5;
pub const COLS: usize = 8;
pub const ATOMS: usize = 5;
pub const CLUSTERS: usize = 4;
pub const CLASSES: usize = 3;

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((k, n), |_| rng.random_range(-0.5..1.0));
    project_simplex_columns_in_place(&mut m).unwrap();
    m
}

/// Random problem of the gradient-test size with every class labeled at
/// least once and edge-aware vTV weights.
pub fn small_problem(variant: Variant, seed: u64) -> (Problem, ClassWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = ROWS * COLS;
    let observations = Array2::from_shape_fn((BANDS, pixels), |_| rng.random::<f64>());
    let labels: Vec<Option<usize>> = (0..pixels)
        .map(|p| if p < CLASSES { Some(p) } else if rng.random_bool(0.25) { Some(rng.random_range(0..CLASSES)) } else { None })
        .collect();
    let grid = compute_edge_weights(observations.view(), &SpatialGrid::uniform(ROWS, COLS), 0.01).unwrap();
    let hyper = Hyperparameters {
        lambda0: rng.random_range(0.5..2.0),
        lambda1: rng.random_range(0.5..2.0),
        lambda2: rng.random_range(0.5..2.0),
        lambda_h: 0.1,
        lambda_q: rng.random_range(0.05..0.5),
        lambda_c: rng.random_range(0.01..0.5),
        epsilon_tv: 1e-2,
        ..Hyperparameters::default()
    };
    let problem = Problem {
        observations,
        dictionary: Array2::from_shape_fn((BANDS, ATOMS), |_| rng.random_range(0.05..1.0)),
        labels,
        grid,
        num_classes: CLASSES,
        num_clusters: CLUSTERS,
        variant,
        hyper,
    };
    let weights = build_class_weights(&problem.labels, CLASSES).unwrap();
    (problem, weights)
}

/// Random feasible state for `problem`.
pub fn random_state(problem: &Problem, rng: &mut ChaCha8Rng) -> State {
    let p = problem.num_pixels();
    let mut c = attribution_matrix(&problem.labels, problem.num_classes, 0.0);
    let fill = random_simplex(rng, problem.num_classes, p);
    for j in problem.unlabeled() {
        c.column_mut(j).assign(&fill.column(j));
    }
    State {
        h: Array2::from_shape_fn((problem.num_atoms(), p), |_| rng.random::<f64>()),
        b: Array2::from_shape_fn((problem.num_atoms(), problem.num_clusters), |_| rng.random::<f64>()),
        z: random_simplex(rng, problem.num_clusters, p),
        q: Array2::from_shape_fn((problem.num_classes, problem.num_clusters), |_| rng.random_range(-2.0..2.0)),
        c,
    }
}

pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Copy of one block; `C_U` is the unlabeled columns of `C`.
pub fn get_block(model: &Model, state: &State, block: Block) -> Array2<f64> {
    match block {
        Block::H => state.h.clone(),
        Block::B => state.b.clone(),
        Block::Z => state.z.clone(),
        Block::Q => state.q.clone(),
        Block::CU => state.c.select(Axis(1), model.unlabeled()),
    }
}

pub fn set_block(model: &Model, state: &mut State, block: Block, value: &Array2<f64>) {
    match block {
        Block::H => state.h.assign(value),
        Block::B => state.b.assign(value),
        Block::Z => state.z.assign(value),
        Block::Q => state.q.assign(value),
        Block::CU => {
            for (col, &p) in value.columns().into_iter().zip(model.unlabeled()) {
                state.c.column_mut(p).assign(&col);
            }
        }
    }
}

/// Central finite differences of the smooth objective with respect to one block.
pub fn fd_gradient(model: &Model, state: &State, block: Block, step: f64) -> Array2<f64> {
    let base = get_block(model, state, block);
    let mut out = Array2::zeros(base.dim());
    let mut probe = state.clone();
    let mut x = base.clone();
    for ((i, j), &original) in base.indexed_iter() {
        x[[i, j]] = original + step;
        set_block(model, &mut probe, block, &x);
        let plus = model.evaluate(&probe).unwrap().smooth();
        x[[i, j]] = original - step;
        set_block(model, &mut probe, block, &x);
        let minus = model.evaluate(&probe).unwrap().smooth();
        x[[i, j]] = original;
        out[[i, j]] = (plus - minus) / (2.0 * step);
    }
    out
}

/// `‖g_fd − g‖ / ‖g‖` for one block, finite-difference step 1e-6.
pub fn gradient_error(model: &Model, state: &State, block: Block) -> f64 {
    let analytic = model.gradient(state, block).unwrap();
    let numeric = fd_gradient(model, state, block, 1e-6);
    frobenius(&(&numeric - &analytic)) / frobenius(&analytic).max(f64::MIN_POSITIVE)
}

/// Largest `‖∇(X₁) − ∇(X₂)‖ / ‖X₁ − X₂‖` over `pairs` random feasible pairs of
/// `block`, every other block held at `state`. Pairs are mixed at random
/// scales between 1e-5 and 1.
pub fn empirical_lipschitz(model: &Model, state: &State, block: Block, pairs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    let mut a = state.clone();
    let mut b = state.clone();
    for _ in 0..pairs {
        let xa = get_block(model, &random_state(model.problem, rng), block);
        let target = get_block(model, &random_state(model.problem, rng), block);
        let t = 10f64.powf(rng.random_range(-5.0..0.0));
        let xb = &xa * (1.0 - t) + &target * t;
        set_block(model, &mut a, block, &xa);
        set_block(model, &mut b, block, &xb);
        let dx = frobenius(&(&xa - &xb));
        if dx > 0.0 {
            let dg = &model.gradient(&a, block).unwrap() - &model.gradient(&b, block).unwrap();
            worst = worst.max(frobenius(&dg) / dx);
        }
    }
    worst
}
