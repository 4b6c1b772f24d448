//! Proximal alternating linearized minimization over the blocks
//! `H, B, Z, Q, C_U`, in that order.

use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::objective::{Block, Model, ObjectiveBreakdown};
use crate::prox::{project_nonneg, project_simplex_columns_in_place, prox_nonneg_l1};
use crate::types::{check_feasibility, ClassWeights, Hyperparameters, Problem, State};

/// Increase of a block's energy tolerated before the step is shrunk.
const INCREASE_SLACK: f64 = 1e-10;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
    /// Iterations between objective evaluations.
    pub monitor_every: usize,
    pub backtracking_enabled: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { alpha: 2.0, stop_tol: 1e-4, max_iters: 5000, monitor_every: 1, backtracking_enabled: true }
    }
}

impl SolverConfig {
    pub fn from_hyper(hyper: &Hyperparameters) -> Self {
        Self { alpha: hyper.alpha, stop_tol: hyper.stop_tol, max_iters: hyper.max_iters, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be > 1, got {}", self.alpha)));
        }
        if !(self.stop_tol.is_finite() && self.stop_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("stop_tol must be > 0, got {}", self.stop_tol)));
        }
        if self.monitor_every == 0 {
            return Err(Error::InvalidParameter("monitor_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    Converged,
    MaxIters,
    /// A NaN or infinity appeared; the returned state is the last finite one.
    NonFiniteIterate { iteration: usize, block: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: ObjectiveBreakdown,
    /// `|f_k − f_{k−1}| / |f_{k−1}|` against the previous record; `None` for the first.
    pub rel_change: Option<f64>,
    /// Step size `1 / (alpha L)` actually used per block, in update order.
    pub steps: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// Number of step halvings over the whole run.
    pub backtracks: usize,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn final_objective(&self) -> Option<&ObjectiveBreakdown> {
        self.records.last().map(|r| &r.objective)
    }

    pub fn is_flagged(&self) -> bool {
        matches!(self.stop_reason, StopReason::NonFiniteIterate { .. })
    }
}

fn relative_change(current: f64, previous: f64) -> f64 {
    if previous == 0.0 {
        if current == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (current - previous).abs() / previous.abs()
    }
}

fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

struct Stepper<'a> {
    model: Model<'a>,
    config: &'a SolverConfig,
    lipschitz_h: f64,
    backtracks: usize,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a Problem, weights: &ClassWeights, config: &'a SolverConfig) -> Result<Self> {
        let model = Model::new(problem, weights)?;
        let placeholder = State {
            h: Array2::zeros((0, 0)),
            b: Array2::zeros((0, 0)),
            z: Array2::zeros((0, 0)),
            q: Array2::zeros((0, 0)),
            c: Array2::zeros((0, 0)),
        };
        // L_H only depends on W and the weights
        let lipschitz_h = model.lipschitz(&placeholder, Block::H);
        Ok(Self { model, config, lipschitz_h, backtracks: 0 })
    }

    fn candidate(&self, block: Block, base: &Array2<f64>, grad: &Array2<f64>, step: f64) -> Result<Array2<f64>> {
        let mut moved = base - &(grad * step);
        match block {
            Block::H => moved = prox_nonneg_l1(moved.view(), self.model.problem.hyper.lambda_h * step),
            Block::B => moved = project_nonneg(moved.view()),
            Block::Z | Block::CU => project_simplex_columns_in_place(&mut moved)?,
            Block::Q => {}
        }
        Ok(moved)
    }

    fn assign(&self, state: &mut State, block: Block, value: Array2<f64>) {
        match block {
            Block::H => state.h = value,
            Block::B => state.b = value,
            Block::Z => state.z = value,
            Block::Q => state.q = value,
            Block::CU => {
                for (col, &p) in value.columns().into_iter().zip(self.model.unlabeled()) {
                    state.c.column_mut(p).assign(&col);
                }
            }
        }
    }

    fn current(&self, state: &State, block: Block) -> Array2<f64> {
        match block {
            Block::H => state.h.clone(),
            Block::B => state.b.clone(),
            Block::Z => state.z.clone(),
            Block::Q => state.q.clone(),
            Block::CU => state.c.select(Axis(1), self.model.unlabeled()),
        }
    }

    /// Updates one block in place and returns the step used. `Err` carries the
    /// block name when a non-finite value shows up.
    fn update(&mut self, state: &mut State, block: Block) -> std::result::Result<f64, &'static str> {
        if block == Block::CU && self.model.unlabeled().is_empty() {
            return Ok(0.0);
        }
        let lipschitz = match block {
            Block::H => self.lipschitz_h,
            _ => self.model.lipschitz(state, block),
        };
        let grad = self.model.gradient(state, block).map_err(|_| block.name())?;
        if !all_finite(&grad) || !lipschitz.is_finite() {
            return Err(block.name());
        }
        let mut step = 1.0 / (self.config.alpha * lipschitz);
        let previous = self.current(state, block);
        let moved = self.candidate(block, &previous, &grad, step).map_err(|_| block.name())?;
        if !all_finite(&moved) {
            return Err(block.name());
        }
        if !self.config.backtracking_enabled {
            self.assign(state, block, moved);
            return Ok(step);
        }

        let before = self.model.block_energy(state, block).map_err(|_| block.name())?;
        self.assign(state, block, moved);
        for attempt in 0..=MAX_HALVINGS {
            let after = self.model.block_energy(state, block).map_err(|_| block.name())?;
            if !after.is_finite() {
                return Err(block.name());
            }
            if after <= before + INCREASE_SLACK {
                return Ok(step);
            }
            if attempt == MAX_HALVINGS {
                break;
            }
            self.backtracks += 1;
            step *= 0.5;
            let moved = self.candidate(block, &previous, &grad, step).map_err(|_| block.name())?;
            self.assign(state, block, moved);
        }
        // no decrease found: keep the block as it was
        self.assign(state, block, previous);
        Ok(0.0)
    }

    fn step(&mut self, state: &mut State) -> std::result::Result<[f64; 5], &'static str> {
        let mut steps = [0.0; 5];
        for (slot, block) in steps.iter_mut().zip(Block::ALL) {
            *slot = self.update(state, block)?;
        }
        Ok(steps)
    }
}

/// One Gauss–Seidel sweep over the five blocks.
pub fn palm_step(problem: &Problem, state: &State, weights: &ClassWeights, config: &SolverConfig) -> Result<State> {
    config.validate()?;
    check_feasibility(state, problem)?;
    let mut stepper = Stepper::new(problem, weights, config)?;
    let mut next = state.clone();
    stepper
        .step(&mut next)
        .map_err(|block| Error::NonFiniteIterate { iteration: 1, block })?;
    Ok(next)
}

/// Runs PALM from `initial` until the relative objective change drops below
/// `stop_tol` or `max_iters` sweeps are done.
///
/// A non-finite iterate does not produce an `Err`: the last finite state is
/// returned with a [`StopReason::NonFiniteIterate`] report.
pub fn solve(
    problem: &Problem,
    initial: State,
    weights: &ClassWeights,
    config: &SolverConfig,
) -> Result<(State, SolveReport)> {
    config.validate()?;
    check_feasibility(&initial, problem)?;
    let start = Instant::now();
    let mut stepper = Stepper::new(problem, weights, config)?;

    let mut state = initial;
    let mut previous = stepper.model.evaluate(&state)?.total;
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: stepper.model.evaluate(&state)?,
        rel_change: None,
        steps: [0.0; 5],
    }];
    let mut stop_reason = StopReason::MaxIters;
    let mut iterations = 0;

    for iteration in 1..=config.max_iters {
        let mut next = state.clone();
        let steps = match stepper.step(&mut next) {
            Ok(steps) => steps,
            Err(block) => {
                stop_reason = StopReason::NonFiniteIterate { iteration, block };
                break;
            }
        };
        state = next;
        iterations = iteration;
        if iteration % config.monitor_every != 0 && iteration != config.max_iters {
            continue;
        }
        let objective = stepper.model.evaluate(&state)?;
        if !objective.total.is_finite() {
            stop_reason = StopReason::NonFiniteIterate { iteration, block: "objective" };
            break;
        }
        let rel_change = relative_change(objective.total, previous);
        previous = objective.total;
        records.push(IterationRecord { iteration, objective, rel_change: Some(rel_change), steps });
        if rel_change < config.stop_tol {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let report = SolveReport {
        records,
        stop_reason,
        iterations,
        backtracks: stepper.backtracks,
        wall_time: start.elapsed(),
    };
    Ok((state, report))
}
