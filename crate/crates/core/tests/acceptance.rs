//! Acceptance suite, run without the test harness: every criterion runs in
//! sequence so timings are not disturbed by concurrent tests, and each prints
//! one line whether or not output capture is on.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cofact::init::{initialize_with_dictionary, kmeans, InitConfig, KMeansConfig};
use cofact::metrics::{abundance_rmse, classification_scores, masked_scores, reconstruction_error};
use cofact::objective::{predict_classes, Block, Model};
use cofact::prox::{project_simplex_columns, prox_nonneg_l1};
use cofact::solver::{solve, SolverConfig, StopReason};
use cofact::synth::{augment_dictionary, generate_scene, pad_abundances, SceneParams, SyntheticScene};
use cofact::types::{
    build_class_weights, scale_hyperparameters, validate_problem, ClassWeights, Hyperparameters, Problem, RawWeights,
    SpatialGrid, State, Variant,
};
use cofact::vtv::compute_edge_weights;
use common::*;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

const VARIANTS: [Variant; 2] = [Variant::Quadratic, Variant::CrossEntropy];
const CONFOUNDERS: usize = 9;
const CONFOUNDER_MAX_ANGLE: f64 = 10.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(id: usize, name: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let passed = outcome.passed && in_time;
    println!(
        "criterion {id} {name}: {} ({}; {:.1} s of {} s)",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    passed
}

/// Default scene with confounders, scaled weights and the dictionary-path start.
struct DeskCase {
    scene: SyntheticScene,
    problem: Problem,
    weights: ClassWeights,
    start: State,
}

fn desk_case(params: SceneParams, variant: Variant) -> DeskCase {
    let scene = generate_scene(&params).unwrap();
    let dictionary = augment_dictionary(&scene.w_true, CONFOUNDERS, CONFOUNDER_MAX_ANGLE, params.seed).unwrap();
    let base = Hyperparameters { seed: params.seed, ..Hyperparameters::default() };
    let hyper = scale_hyperparameters(&RawWeights::default(), scene.y.view(), params.classes, base).unwrap();
    let grid = compute_edge_weights(scene.y.view(), &SpatialGrid::uniform(scene.rows, scene.cols), hyper.sigma_beta).unwrap();
    let problem = validate_problem(Problem {
        observations: scene.y.clone(),
        dictionary,
        labels: scene.labels(),
        grid,
        num_classes: params.classes,
        num_clusters: 10,
        variant,
        hyper,
    })
    .unwrap();
    let init = initialize_with_dictionary(&problem, &InitConfig { seed: params.seed, ..InitConfig::default() }).unwrap();
    let weights = build_class_weights(&problem.labels, problem.num_classes).unwrap();
    DeskCase { scene, problem, weights, start: init.state }
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for variant in VARIANTS {
        for seed in 0..20 {
            let (problem, weights) = small_problem(variant, seed);
            let model = Model::new(&problem, &weights).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let state = random_state(&problem, &mut rng);
            for block in Block::ALL {
                worst = worst.max(gradient_error(&model, &state, block));
            }
            instances += 1;
        }
    }
    Outcome { passed: worst < 1e-5, detail: format!("{instances} instances, max rel err {worst:.2e}") }
}

/// Minimizer of `½(u − x)² + τ|u|` over a 1e-4 grid of `u ≥ 0`.
fn grid_prox(x: f64, tau: f64) -> f64 {
    let top = (x.max(0.0) + 1.0) / 1e-4;
    (0..=top.ceil() as usize)
        .map(|i| i as f64 * 1e-4)
        .min_by(|a, b| {
            let fa = 0.5 * (a - x).powi(2) + tau * a;
            let fb = 0.5 * (b - x).powi(2) + tau * b;
            fa.total_cmp(&fb)
        })
        .unwrap()
}

fn prox_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut prox_err: f64 = 0.0;
    for _ in 0..20 {
        let x = Array2::from_shape_fn((5, 1), |_| rng.random_range(-2.0..2.0));
        let u = prox_nonneg_l1(x.view(), 0.3);
        for (xi, ui) in x.iter().zip(&u) {
            prox_err = prox_err.max((grid_prox(*xi, 0.3) - ui).abs());
        }
    }
    let mut beaten = 0;
    for _ in 0..100 {
        let x = Array2::from_shape_fn((4, 1), |_| rng.random_range(-1.5..1.5));
        let proj = project_simplex_columns(x.view()).unwrap();
        let dist = (&x - &proj).iter().map(|v| v * v).sum::<f64>();
        for _ in 0..10_000 {
            let e: Array1<f64> = (0..4).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let s = &e / e.sum();
            let d = x.column(0).iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            if d < dist - 1e-15 {
                beaten += 1;
            }
        }
    }
    Outcome {
        passed: prox_err <= 1e-3 && beaten == 0,
        detail: format!("prox max dev {prox_err:.1e}, {beaten} sampled points closer than the projection"),
    }
}

fn monotonicity_and_convergence() -> (Outcome, usize) {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut converged = 0;
    let mut max_iters = 0;
    let mut backtracks = 0;
    for variant in VARIANTS {
        for seed in 0..10 {
            let case = desk_case(SceneParams { seed: 100 + seed, ..SceneParams::default() }, variant);
            let config = SolverConfig::from_hyper(&case.problem.hyper);
            let (_, report) = solve(&case.problem, case.start, &case.weights, &config).unwrap();
            for pair in report.records.windows(2) {
                let rise = pair[1].objective.total - pair[0].objective.total;
                worst_rise = worst_rise.max(rise / pair[0].objective.total.abs().max(1.0));
            }
            if report.stop_reason == StopReason::Converged && report.iterations < 5000 {
                converged += 1;
            }
            max_iters = max_iters.max(report.iterations);
            backtracks += report.backtracks;
        }
    }
    let outcome = Outcome {
        passed: worst_rise <= 1e-10 && converged == 20,
        detail: format!("{converged}/20 converged, max {max_iters} iterations, largest rise {worst_rise:.1e}"),
    };
    (outcome, backtracks)
}

fn lipschitz_safety(desk_backtracks: usize) -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut backtracks = desk_backtracks;
    for variant in VARIANTS {
        for seed in 0..4 {
            let (problem, weights) = small_problem(variant, 300 + seed);
            let model = Model::new(&problem, &weights).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let state = random_state(&problem, &mut rng);
            for block in Block::ALL {
                let seen = empirical_lipschitz(&model, &state, block, 1000, &mut rng);
                worst_ratio = worst_ratio.max(seen / model.lipschitz(&state, block));
            }
            let (_, report) = solve(&problem, state, &weights, &SolverConfig::default()).unwrap();
            backtracks += report.backtracks;
        }
    }
    Outcome {
        passed: worst_ratio <= 1.0 + 1e-8 && backtracks == 0,
        detail: format!("max quotient / L = {worst_ratio:.4}, {backtracks} backtracks"),
    }
}

fn recovery() -> Outcome {
    let mut kappas = Vec::new();
    let mut detail = String::new();
    let mut passed = true;
    for variant in VARIANTS {
        let case = desk_case(SceneParams::default(), variant);
        let config = SolverConfig::from_hyper(&case.problem.hyper);
        let (state, _) = solve(&case.problem, case.start, &case.weights, &config).unwrap();
        let predicted = predict_classes(state.c.view());
        let truth: Vec<Option<usize>> = case.scene.class_map.iter().map(|&c| Some(c)).collect();
        let mask: Vec<bool> = case.scene.label_mask.iter().map(|&m| !m).collect();
        let scores = masked_scores(&predicted, &truth, &mask, case.problem.num_classes).unwrap();
        let h_true = pad_abundances(&case.scene.h_true, CONFOUNDERS);
        let rmse = abundance_rmse(h_true.view(), state.h.view()).unwrap();
        let re = reconstruction_error(case.scene.y.view(), case.problem.dictionary.view(), state.h.view()).unwrap();
        let floor = case.scene.noise_std;
        if variant == Variant::Quadratic {
            passed &= scores.kappa >= 0.85 && scores.f1_mean >= 0.85 && rmse <= 0.10 && re <= 1.5 * floor;
        }
        kappas.push(scores.kappa);
        detail += &format!(
            "{variant}: kappa {:.3} f1 {:.3} rmse {rmse:.4} re/noise {:.2}; ",
            scores.kappa,
            scores.f1_mean,
            re / floor
        );
    }
    passed &= (kappas[0] - kappas[1]).abs() <= 0.05;
    Outcome { passed, detail: detail.trim_end_matches("; ").to_string() }
}

fn brute_force_sse(points: &Array2<f64>) -> f64 {
    let n = points.ncols();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut sse = 0.0;
        for side in [true, false] {
            let members: Vec<usize> = (0..n).filter(|&i| (mask >> i & 1 == 1) == side).collect();
            for row in points.rows() {
                let mean = members.iter().map(|&i| row[i]).sum::<f64>() / members.len() as f64;
                sse += members.iter().map(|&i| (row[i] - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(sse);
    }
    best
}

fn kmeans_brute_force() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = Array2::from_shape_fn((2, 8), |_| rng.random::<f64>());
        let km = kmeans(points.view(), 2, &KMeansConfig { seed, ..KMeansConfig::default() }).unwrap();
        worst = worst.max((km.sse - brute_force_sse(&points)).abs());
    }
    Outcome { passed: worst <= 1e-9, detail: format!("50 seeds, max SSE gap {worst:.1e}") }
}

fn metrics() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    let w = array![[1.0, 0.5], [0.2, 0.3], [0.0, 1.0]];
    let h = array![[0.1, 0.7], [0.4, 0.2]];
    expect("re exact", reconstruction_error(w.dot(&h).view(), w.view(), h.view()).unwrap(), 0.0);
    let eye = Array2::eye(2);
    expect("re constant", reconstruction_error((&h - 0.25).view(), eye.view(), h.view()).unwrap(), 0.25);
    expect("rmse equal", abundance_rmse(h.view(), h.view()).unwrap(), 0.0);
    expect("rmse constant", abundance_rmse(h.view(), (&h + 0.1).view()).unwrap(), 0.1);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>());
    let w = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
    let h = Array2::from_shape_fn((3, 9), |_| rng.random::<f64>());
    let h2 = Array2::from_shape_fn((3, 9), |_| rng.random::<f64>());
    let (mut fit, mut diff) = (0.0, 0.0);
    for l in 0..6 {
        for p in 0..9 {
            let wh: f64 = (0..3).map(|r| w[[l, r]] * h[[r, p]]).sum();
            fit += (y[[l, p]] - wh).powi(2);
        }
    }
    for r in 0..3 {
        for p in 0..9 {
            diff += (h[[r, p]] - h2[[r, p]]).powi(2);
        }
    }
    expect("re loops", reconstruction_error(y.view(), w.view(), h.view()).unwrap(), (fit / 54.0).sqrt());
    expect("rmse loops", abundance_rmse(h.view(), h2.view()).unwrap(), (diff / 27.0).sqrt());

    let truth = [0, 1, 2, 1, 0];
    let s = classification_scores(&truth, &truth, 3).unwrap();
    expect("kappa perfect", s.kappa, 1.0);
    expect("f1 perfect", s.f1_mean, 1.0);
    let truth: Vec<usize> = [vec![0; 50], vec![1; 50]].concat();
    let pred: Vec<usize> = [vec![0; 45], vec![1; 5], vec![0; 5], vec![1; 45]].concat();
    let s = classification_scores(&pred, &truth, 2).unwrap();
    expect("kappa 45/5", s.kappa, 0.8);
    expect("f1 45/5", s.f1_mean, 0.9);
    expect("kappa constant", classification_scores(&[0; 4], &[0, 1, 0, 1], 2).unwrap().kappa, 0.0);
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() { "all fixed examples match".into() } else { failures.join(", ") },
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_cofact"))
        .args(args)
        .current_dir(dir)
        .env("COFACT_THREADS", "0")
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

/// Exit codes, `eval` output and every produced file sorted by path.
type PipelineOutput = (Vec<i32>, Vec<u8>, Vec<(String, Vec<u8>)>);

/// Runs `synth → run → eval` in `dir`.
fn pipeline(dir: &Path) -> PipelineOutput {
    fs::write(dir.join("c.cfg"), "seed = 3\nscene_dir = scene\noutput_dir = out\n").unwrap();
    let mut codes = Vec::new();
    let mut eval = Vec::new();
    for sub in ["synth", "run", "eval"] {
        let (code, stdout) = run_cli(dir, &[sub, "--config", "c.cfg"]);
        codes.push(code);
        eval = stdout;
    }
    let mut files = Vec::new();
    for sub in ["scene", "out"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            files.push((format!("{sub}/{}", path.file_name().unwrap().to_string_lossy()), fs::read(&path).unwrap()));
        }
    }
    files.sort();
    (codes, eval, files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (codes_a, eval_a, files_a) = pipeline(a.path());
    let (codes_b, eval_b, files_b) = pipeline(b.path());
    let ok_codes = codes_a.iter().chain(&codes_b).all(|&c| c == 0);
    let names_match = files_a.iter().map(|f| &f.0).eq(files_b.iter().map(|f| &f.0));
    let differing: Vec<&str> =
        files_a.iter().zip(&files_b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    Outcome {
        passed: ok_codes && names_match && differing.is_empty() && eval_a == eval_b && !files_a.is_empty(),
        detail: format!(
            "exit codes {codes_a:?}/{codes_b:?}, {} files compared, {} differ",
            files_a.len(),
            differing.len()
        ),
    }
}

/// Shortest per-iteration wall time over a few fixed-length solves.
fn time_per_iteration(rows: usize, cols: usize) -> f64 {
    let case = desk_case(SceneParams { rows, cols, seed: 9, ..SceneParams::default() }, Variant::Quadratic);
    let config = SolverConfig { stop_tol: 1e-300, max_iters: 20, ..SolverConfig::default() };
    (0..3)
        .map(|_| {
            let (_, report) = solve(&case.problem, case.start.clone(), &case.weights, &config).unwrap();
            report.wall_time.as_secs_f64() / report.iterations as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn complexity() -> Outcome {
    let small = time_per_iteration(50, 50);
    let large = time_per_iteration(50, 100);
    // linear cost doubles the time; allow 1.5× on top of that
    let growth = large / (2.0 * small);
    Outcome {
        passed: growth <= 1.5,
        detail: format!(
            "P 2500 → 5000: {:.2} ms → {:.2} ms per iteration, ratio {:.2}, per-pixel growth {growth:.2}",
            small * 1e3,
            large * 1e3,
            large / small
        ),
    }
}

fn main() {
    cofact::parallel::set_threads(0);
    let mut results = Vec::new();
    results.push(check(1, "gradient correctness", Duration::from_secs(30), gradient_correctness));
    results.push(check(2, "prox oracles", Duration::from_secs(10), prox_oracles));
    let mut desk_backtracks = 0;
    results.push(check(3, "monotonicity and convergence", Duration::from_secs(120), || {
        let (outcome, backtracks) = monotonicity_and_convergence();
        desk_backtracks = backtracks;
        outcome
    }));
    results.push(check(4, "lipschitz safety", Duration::from_secs(60), || lipschitz_safety(desk_backtracks)));
    results.push(check(5, "synthetic recovery", Duration::from_secs(180), recovery));
    results.push(check(6, "k-means brute force", Duration::from_secs(10), kmeans_brute_force));
    results.push(check(7, "metrics", Duration::from_secs(10), metrics));
    results.push(check(8, "determinism", Duration::from_secs(120), determinism));
    results.push(check(9, "complexity", Duration::from_secs(120), complexity));
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
