//! Command-line front end: `synth`, `run`, `eval` and `check`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array2;

use crate::error::Error;
use crate::init::{initialize, initialize_with_dictionary};
use crate::io::{classes_to_map, map_to_classes, read_matrix, write_matrix, write_matrix_csv, InitMode, RunConfig};
use crate::metrics::{abundance_rmse, masked_scores, reconstruction_error};
use crate::objective::predict_classes;
use crate::solver::{solve, SolveReport, SolverConfig, StopReason};
use crate::synth::{augment_dictionary, generate_scene, pad_abundances, SceneParams};
use crate::types::{build_class_weights, scale_hyperparameters, validate_problem, Problem, SpatialGrid};
use crate::vtv::compute_edge_weights;

/// Largest angle between a confounder and its source endmember, in degrees.
const CONFOUNDER_MAX_ANGLE: f64 = 10.0;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cofact", version, about = "Joint unmixing, clustering and classification of hyperspectral images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene into `scene_dir`
    Synth {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Initialize and solve, writing the factors into `output_dir`
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Also write CSV copies of every output matrix
        #[arg(long)]
        csv: bool,
    },
    /// Score the outputs of `run` against the scene ground truth
    Eval {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Validate the problem described by the config
    Check {
        #[arg(short, long)]
        config: PathBuf,
    },
}

enum Failure {
    Data(String),
    NonFinite(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth { config } => load(&config).and_then(|c| synth(&c)),
        Command::Run { config, csv } => load(&config).and_then(|c| run_solver(&c, csv)),
        Command::Eval { config } => load(&config).and_then(|c| eval(&c)),
        Command::Check { config } => load(&config).and_then(|c| check(&c)),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
        Err(Failure::NonFinite(msg)) => {
            eprintln!("error: {msg}");
            EXIT_NON_FINITE
        }
    }
}

fn load(path: &Path) -> std::result::Result<RunConfig, Failure> {
    Ok(RunConfig::load(path)?)
}

fn create_dir(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn synth(config: &RunConfig) -> Outcome {
    let params = SceneParams {
        rows: config.rows,
        cols: config.cols,
        bands: config.bands,
        endmembers: config.endmembers,
        classes: config.classes,
        snr_db: config.snr_db,
        train_fraction: config.train_fraction,
        seed: config.seed,
    };
    let scene = generate_scene(&params)?;
    let w = augment_dictionary(&scene.w_true, config.extra_endmembers, CONFOUNDER_MAX_ANGLE, config.seed)?;
    let h_true = pad_abundances(&scene.h_true, config.extra_endmembers);
    let truth: Vec<Option<usize>> = scene.class_map.iter().map(|&c| Some(c)).collect();

    let dir = config.scene_path();
    create_dir(&dir)?;
    write_matrix(dir.join("Y.cofa"), &scene.y)?;
    write_matrix(dir.join("W.cofa"), &w)?;
    write_matrix(dir.join("H_true.cofa"), &h_true)?;
    write_matrix(dir.join("classmap.cofa"), &classes_to_map(&truth, scene.rows, scene.cols))?;
    write_matrix(dir.join("labelmask.cofa"), &classes_to_map(&scene.labels(), scene.rows, scene.cols))?;
    println!("scene={}", dir.display());
    println!("pixels={}", scene.rows * scene.cols);
    println!("noise_std={}", scene.noise_std);
    Ok(())
}

/// Problem read from `scene_dir`. In self-dictionary mode the observations
/// stand in for the dictionary, since atoms are drawn from them.
fn load_problem(config: &RunConfig) -> std::result::Result<Problem, Failure> {
    let dir = config.scene_path();
    let y = read_matrix(dir.join("Y.cofa"))?;
    let mask = read_matrix(dir.join("labelmask.cofa"))?;
    let (rows, cols) = mask.dim();
    if rows * cols != y.ncols() {
        return Err(Failure::Data(format!("label mask is {rows} × {cols} but Y has {} pixels", y.ncols())));
    }
    let labels = map_to_classes(&mask, config.classes)?;
    let dictionary = match config.init {
        InitMode::Dictionary => read_matrix(dir.join("W.cofa"))?,
        InitMode::SelfDictionary => y.clone(),
    };
    let hyper = scale_hyperparameters(&config.raw_weights(), y.view(), config.classes, config.base_hyperparameters())?;
    let grid = compute_edge_weights(y.view(), &SpatialGrid::uniform(rows, cols), hyper.sigma_beta)?;
    let problem = Problem {
        observations: y,
        dictionary,
        labels,
        grid,
        num_classes: config.classes,
        num_clusters: config.k,
        variant: config.variant,
        hyper,
    };
    validate_problem(problem).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
        Failure::Data(format!("invalid problem:\n  {}", lines.join("\n  ")))
    })
}

fn check(config: &RunConfig) -> Outcome {
    let problem = load_problem(config)?;
    println!("bands={}", problem.bands());
    println!("pixels={}", problem.num_pixels());
    println!("labeled={}", problem.labeled().len());
    println!("ok");
    Ok(())
}

fn trace_csv(report: &SolveReport) -> String {
    let mut out = String::from("iteration,total,repr,l1,clust,classif,weight_decay,vtv,rel_change\n");
    for r in &report.records {
        let o = &r.objective;
        let rel = r.rel_change.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration, o.total, o.repr, o.l1, o.clust, o.classif, o.weight_decay, o.vtv, rel
        );
    }
    out
}

fn run_solver(config: &RunConfig, csv: bool) -> Outcome {
    let problem = load_problem(config)?;
    let init_config = config.init_config();
    let (problem, init) = match config.init {
        InitMode::Dictionary => {
            let init = initialize_with_dictionary(&problem, &init_config)?;
            (problem, init)
        }
        InitMode::SelfDictionary => {
            let init = initialize(&problem, &init_config)?;
            let problem = problem.with_dictionary(init.dictionary.clone());
            (problem, init)
        }
    };
    let weights = build_class_weights(&problem.labels, problem.num_classes)?;
    let solver_config = SolverConfig::from_hyper(&problem.hyper);
    let (state, report) = solve(&problem, init.state, &weights, &solver_config)?;

    let predicted: Vec<Option<usize>> = predict_classes(state.c.view()).into_iter().map(Some).collect();
    let classmap = classes_to_map(&predicted, problem.grid.rows, problem.grid.cols);
    let dir = config.output_path();
    create_dir(&dir)?;
    let outputs: [(&str, &Array2<f64>); 7] = [
        ("H", &state.h),
        ("B", &state.b),
        ("Z", &state.z),
        ("Q", &state.q),
        ("C", &state.c),
        ("W", &problem.dictionary),
        ("classmap", &classmap),
    ];
    for (name, matrix) in outputs {
        write_matrix(dir.join(format!("{name}.cofa")), matrix)?;
        if csv {
            write_matrix_csv(dir.join(format!("{name}.csv")), matrix)?;
        }
    }
    let trace = dir.join("trace.csv");
    fs::write(&trace, trace_csv(&report)).map_err(|e| Failure::Data(format!("cannot write {}: {e}", trace.display())))?;

    let stop = match report.stop_reason {
        StopReason::Converged => "converged",
        StopReason::MaxIters => "max_iters",
        StopReason::NonFiniteIterate { .. } => "non_finite",
    };
    println!("stop={stop}");
    println!("iterations={}", report.iterations);
    println!("atoms={}", problem.num_atoms());
    if let StopReason::NonFiniteIterate { iteration, block } = report.stop_reason {
        return Err(Failure::NonFinite(
            Error::NonFiniteIterate { iteration, block }.to_string() + "; last finite iterate written",
        ));
    }
    Ok(())
}

fn eval(config: &RunConfig) -> Outcome {
    let scene = config.scene_path();
    let out = config.output_path();
    let y = read_matrix(scene.join("Y.cofa"))?;
    let h_true = read_matrix(scene.join("H_true.cofa"))?;
    let truth_map = read_matrix(scene.join("classmap.cofa"))?;
    let mask_map = read_matrix(scene.join("labelmask.cofa"))?;
    let w = read_matrix(out.join("W.cofa"))?;
    let h = read_matrix(out.join("H.cofa"))?;
    let predicted_map = read_matrix(out.join("classmap.cofa"))?;
    if truth_map.dim() != mask_map.dim() || truth_map.dim() != predicted_map.dim() {
        return Err(Failure::Data("class maps have different shapes".into()));
    }

    let truth = map_to_classes(&truth_map, config.classes)?;
    let training = map_to_classes(&mask_map, config.classes)?;
    let predicted: Vec<usize> = map_to_classes(&predicted_map, config.classes)?
        .into_iter()
        .map(|c| c.ok_or_else(|| Failure::Data("predicted class map has unassigned pixels".into())))
        .collect::<std::result::Result<_, _>>()?;
    let mask: Vec<bool> = training.iter().map(Option::is_none).collect();
    let scores = masked_scores(&predicted, &truth, &mask, config.classes)?;
    let re = reconstruction_error(y.view(), w.view(), h.view())?;
    // a self-learned dictionary has no row-wise match with the true abundances
    let rmse = abundance_rmse(h_true.view(), h.view()).unwrap_or(f64::NAN);

    println!("kappa={}", scores.kappa);
    println!("f1_mean={}", scores.f1_mean);
    println!("re={re}");
    println!("rmse={rmse}");
    Ok(())
}
