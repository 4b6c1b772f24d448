//! Objective terms, partial gradients and block Lipschitz constants of the
//! cofactorization problem, for both classification losses.
//!
//! The smooth coupling term is
//!
//! ```text
//! g = λ0/2 ‖Y − WH‖² + λ2/2 ‖H − BZ‖² + classif(C, QZ) + λc ‖C‖_vTV  (+ λq/2 ‖Q‖² for CE)
//! ```
//!
//! with `classif = λ1/2 ‖(C − QZ)D‖²` (quadratic) or
//! `classif = −λ1/2 Σ_p d_p² Σ_i c_ip log σ(q_i z_p)` (cross-entropy).
//! The ℓ1 penalty on `H` is the only nonsmooth term besides the constraints.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm_sym;
use crate::types::{check_feasibility, ClassWeights, Problem, State, Variant};
use crate::vtv::{vtv_grad, vtv_value};

/// Lower bound applied to every Lipschitz constant.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// The optimized blocks, in update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    H,
    B,
    Z,
    Q,
    CU,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::H, Block::B, Block::Z, Block::Q, Block::CU];

    pub fn name(self) -> &'static str {
        match self {
            Block::H => "H",
            Block::B => "B",
            Block::Z => "Z",
            Block::Q => "Q",
            Block::CU => "C_U",
        }
    }
}

/// Weighted value of every objective term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub repr: f64,
    pub l1: f64,
    pub clust: f64,
    pub classif: f64,
    pub weight_decay: f64,
    pub vtv: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    fn from_terms(repr: f64, l1: f64, clust: f64, classif: f64, weight_decay: f64, vtv: f64) -> Self {
        Self { repr, l1, clust, classif, weight_decay, vtv, total: repr + l1 + clust + classif + weight_decay + vtv }
    }

    /// Everything except the nonsmooth ℓ1 term.
    pub fn smooth(&self) -> f64 {
        self.repr + self.clust + self.classif + self.weight_decay + self.vtv
    }

    /// ℓ1 plus weight decay.
    pub fn penalties(&self) -> f64 {
        self.l1 + self.weight_decay
    }
}

/// `log σ(x)` without overflow at saturated logits.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `σ(−x) = 1 − σ(x)`, computed without cancellation.
pub fn sigmoid_neg(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn sq_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Problem-level quantities reused across evaluations: `d²`, the unlabeled
/// index set, `WᵀW` and `WᵀY`.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub problem: &'a Problem,
    d2: Array1<f64>,
    unlabeled: Vec<usize>,
    wtw: Array2<f64>,
    wty: Array2<f64>,
}

impl<'a> Model<'a> {
    pub fn new(problem: &'a Problem, weights: &ClassWeights) -> Result<Self> {
        if weights.d.len() != problem.num_pixels() {
            return Err(Error::DimensionMismatch(format!(
                "{} class weights for {} pixels",
                weights.d.len(),
                problem.num_pixels()
            )));
        }
        let w = &problem.dictionary;
        Ok(Self {
            problem,
            d2: weights.squared(),
            unlabeled: problem.unlabeled(),
            wtw: w.t().dot(w),
            wty: w.t().dot(&problem.observations),
        })
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn d2(&self) -> &Array1<f64> {
        &self.d2
    }

    fn hyper(&self) -> &crate::types::Hyperparameters {
        &self.problem.hyper
    }

    /// Feasibility-checked objective.
    pub fn objective(&self, state: &State) -> Result<ObjectiveBreakdown> {
        check_feasibility(state, self.problem)?;
        self.evaluate(state)
    }

    /// Every term, without the feasibility check (gradient tests probe infeasible points).
    pub fn evaluate(&self, state: &State) -> Result<ObjectiveBreakdown> {
        Ok(ObjectiveBreakdown::from_terms(
            self.term_repr(&state.h),
            self.term_l1(&state.h),
            self.term_clust(&state.h, &state.b, &state.z),
            self.term_classif(&state.z, &state.q, &state.c),
            self.term_weight_decay(&state.q),
            self.term_vtv(&state.c)?,
        ))
    }

    /// Sum of the terms that depend on `block`, nonsmooth part included.
    pub fn block_energy(&self, state: &State, block: Block) -> Result<f64> {
        Ok(match block {
            Block::H => {
                self.term_repr(&state.h) + self.term_l1(&state.h) + self.term_clust(&state.h, &state.b, &state.z)
            }
            Block::B => self.term_clust(&state.h, &state.b, &state.z),
            Block::Z => {
                self.term_clust(&state.h, &state.b, &state.z) + self.term_classif(&state.z, &state.q, &state.c)
            }
            Block::Q => self.term_classif(&state.z, &state.q, &state.c) + self.term_weight_decay(&state.q),
            Block::CU => self.term_classif(&state.z, &state.q, &state.c) + self.term_vtv(&state.c)?,
        })
    }

    pub fn term_repr(&self, h: &Array2<f64>) -> f64 {
        let lambda0 = self.hyper().lambda0;
        if lambda0 == 0.0 {
            return 0.0;
        }
        let mut residual = self.problem.observations.clone();
        general_mat_mul(-1.0, &self.problem.dictionary, h, 1.0, &mut residual);
        0.5 * lambda0 * sq_norm(&residual)
    }

    pub fn term_l1(&self, h: &Array2<f64>) -> f64 {
        self.hyper().lambda_h * h.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn term_clust(&self, h: &Array2<f64>, b: &Array2<f64>, z: &Array2<f64>) -> f64 {
        let lambda2 = self.hyper().lambda2;
        if lambda2 == 0.0 {
            return 0.0;
        }
        let mut residual = h.clone();
        general_mat_mul(-1.0, b, z, 1.0, &mut residual);
        0.5 * lambda2 * sq_norm(&residual)
    }

    pub fn term_classif(&self, z: &Array2<f64>, q: &Array2<f64>, c: &Array2<f64>) -> f64 {
        let lambda1 = self.hyper().lambda1;
        if lambda1 == 0.0 {
            return 0.0;
        }
        let scores = q.dot(z);
        match self.problem.variant {
            Variant::Quadratic => {
                let mut total = 0.0;
                for (p, (sc, cc)) in scores.columns().into_iter().zip(c.columns()).enumerate() {
                    let col: f64 = sc.iter().zip(cc).map(|(s, c)| (c - s) * (c - s)).sum();
                    total += self.d2[p] * col;
                }
                0.5 * lambda1 * total
            }
            Variant::CrossEntropy => {
                let mut total = 0.0;
                for (p, (sc, cc)) in scores.columns().into_iter().zip(c.columns()).enumerate() {
                    let col: f64 = sc.iter().zip(cc).map(|(s, c)| c * log_sigmoid(*s)).sum();
                    total += self.d2[p] * col;
                }
                -0.5 * lambda1 * total
            }
        }
    }

    pub fn term_weight_decay(&self, q: &Array2<f64>) -> f64 {
        match self.problem.variant {
            Variant::Quadratic => 0.0,
            Variant::CrossEntropy => 0.5 * self.hyper().lambda_q * sq_norm(q),
        }
    }

    pub fn term_vtv(&self, c: &Array2<f64>) -> Result<f64> {
        let lambda_c = self.hyper().lambda_c;
        if lambda_c == 0.0 {
            return Ok(0.0);
        }
        Ok(lambda_c * vtv_value(c.view(), &self.problem.grid, self.hyper().epsilon_tv)?)
    }

    /// `∂ classif / ∂ (QZ)`, a `C × P` matrix.
    fn score_gradient(&self, z: &Array2<f64>, q: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
        let lambda1 = self.hyper().lambda1;
        let mut g = q.dot(z);
        match self.problem.variant {
            Variant::Quadratic => {
                // λ1 (QZ − C) D²
                Zip::from(&mut g).and(c).for_each(|s, &cv| *s -= cv);
                for (mut col, &w) in g.columns_mut().into_iter().zip(&self.d2) {
                    col *= lambda1 * w;
                }
            }
            Variant::CrossEntropy => {
                // (λ1/2) E with E_ip = −d_p² c_ip σ(−s_ip)
                for (p, (mut col, cc)) in g.columns_mut().into_iter().zip(c.columns()).enumerate() {
                    let scale = -0.5 * lambda1 * self.d2[p];
                    Zip::from(&mut col).and(&cc).for_each(|s, &cv| *s = scale * cv * sigmoid_neg(*s));
                }
            }
        }
        g
    }

    pub fn grad_h(&self, state: &State) -> Array2<f64> {
        let h = &self.problem.hyper;
        // λ0 (WᵀW H − WᵀY) + λ2 (H − BZ)
        let mut g = self.wtw.dot(&state.h);
        g -= &self.wty;
        g *= h.lambda0;
        let mut cluster = state.h.clone();
        general_mat_mul(-1.0, &state.b, &state.z, 1.0, &mut cluster);
        g.scaled_add(h.lambda2, &cluster);
        g
    }

    pub fn grad_b(&self, state: &State) -> Array2<f64> {
        // λ2 (BZ − H) Zᵀ
        let mut residual = state.b.dot(&state.z);
        residual -= &state.h;
        let mut g = residual.dot(&state.z.t());
        g *= self.hyper().lambda2;
        g
    }

    pub fn grad_z(&self, state: &State) -> Array2<f64> {
        // λ2 Bᵀ(BZ − H) + Qᵀ ∂classif/∂S
        let mut residual = state.b.dot(&state.z);
        residual -= &state.h;
        let mut g = state.b.t().dot(&residual);
        g *= self.hyper().lambda2;
        if self.hyper().lambda1 != 0.0 {
            let s = self.score_gradient(&state.z, &state.q, &state.c);
            general_mat_mul(1.0, &state.q.t(), &s, 1.0, &mut g);
        }
        g
    }

    pub fn grad_q(&self, state: &State) -> Array2<f64> {
        let mut g = if self.hyper().lambda1 != 0.0 {
            self.score_gradient(&state.z, &state.q, &state.c).dot(&state.z.t())
        } else {
            Array2::zeros(state.q.dim())
        };
        if self.problem.variant == Variant::CrossEntropy {
            g.scaled_add(self.hyper().lambda_q, &state.q);
        }
        g
    }

    /// Gradient with respect to every column of `C`; labeled columns are
    /// computed and left to the caller to discard.
    pub fn grad_c_full(&self, state: &State) -> Result<Array2<f64>> {
        let hyper = self.hyper();
        let mut g = if hyper.lambda_c != 0.0 {
            let mut v = vtv_grad(state.c.view(), &self.problem.grid, hyper.epsilon_tv)?;
            v *= hyper.lambda_c;
            v
        } else {
            Array2::zeros(state.c.dim())
        };
        if hyper.lambda1 != 0.0 {
            let scores = state.q.dot(&state.z);
            match self.problem.variant {
                Variant::Quadratic => {
                    // λ1 (C − QZ) D²
                    for (p, ((mut gc, sc), cc)) in
                        g.columns_mut().into_iter().zip(scores.columns()).zip(state.c.columns()).enumerate()
                    {
                        let w = hyper.lambda1 * self.d2[p];
                        Zip::from(&mut gc).and(&sc).and(&cc).for_each(|gv, &s, &c| *gv += w * (c - s));
                    }
                }
                Variant::CrossEntropy => {
                    // −(λ1/2) d_p² log σ(s_ip)
                    for (p, (mut gc, sc)) in g.columns_mut().into_iter().zip(scores.columns()).enumerate() {
                        let w = -0.5 * hyper.lambda1 * self.d2[p];
                        Zip::from(&mut gc).and(&sc).for_each(|gv, &s| *gv += w * log_sigmoid(s));
                    }
                }
            }
        }
        Ok(g)
    }

    /// Gradient with respect to the unlabeled columns only, `C × |U|`.
    pub fn grad_cu(&self, state: &State) -> Result<Array2<f64>> {
        Ok(self.grad_c_full(state)?.select(Axis(1), &self.unlabeled))
    }

    pub fn gradient(&self, state: &State, block: Block) -> Result<Array2<f64>> {
        Ok(match block {
            Block::H => self.grad_h(state),
            Block::B => self.grad_b(state),
            Block::Z => self.grad_z(state),
            Block::Q => self.grad_q(state),
            Block::CU => self.grad_cu(state)?,
        })
    }

    /// Block Lipschitz constant of the partial gradient, floored at 1e-12.
    pub fn lipschitz(&self, state: &State, block: Block) -> f64 {
        let hyper = self.hyper();
        let value = match block {
            Block::H => {
                let mut m = self.wtw.clone() * hyper.lambda0;
                m.diag_mut().mapv_inplace(|v| v + hyper.lambda2);
                spectral_norm_sym(m.view())
            }
            Block::B => hyper.lambda2 * spectral_norm_sym(state.z.dot(&state.z.t()).view()),
            Block::Z => {
                let btb = state.b.t().dot(&state.b);
                match self.problem.variant {
                    Variant::Quadratic => {
                        let max_d2 = self.d2.iter().fold(0.0_f64, |m, &v| m.max(v));
                        let mut m = btb * hyper.lambda2;
                        m.scaled_add(hyper.lambda1 * max_d2, &state.q.t().dot(&state.q));
                        spectral_norm_sym(m.view())
                    }
                    Variant::CrossEntropy => {
                        let row_norms: Vec<f64> = state.q.rows().into_iter().map(|r| r.dot(&r)).collect();
                        let weighted: f64 = state
                            .c
                            .columns()
                            .into_iter()
                            .zip(&self.d2)
                            .map(|(col, &w)| w * col.iter().zip(&row_norms).map(|(c, n)| c * n).sum::<f64>())
                            .sum();
                        hyper.lambda1 * weighted + hyper.lambda2 * spectral_norm_sym(btb.view())
                    }
                }
            }
            Block::Q => match self.problem.variant {
                Variant::Quadratic => {
                    let mut zd = state.z.clone();
                    for (mut col, &w) in zd.columns_mut().into_iter().zip(&self.d2) {
                        col *= w;
                    }
                    hyper.lambda1 * spectral_norm_sym(zd.dot(&state.z.t()).view())
                }
                Variant::CrossEntropy => hyper.lambda1 * self.d2.sum() + hyper.lambda_q,
            },
            Block::CU => {
                let tv = if hyper.lambda_c != 0.0 {
                    hyper.lambda_c * 8f64.sqrt() * self.problem.grid.max_beta() / hyper.epsilon_tv
                } else {
                    0.0
                };
                match self.problem.variant {
                    Variant::Quadratic => {
                        let max_d2 = self.unlabeled.iter().fold(0.0_f64, |m, &p| m.max(self.d2[p]));
                        hyper.lambda1 * max_d2 + tv
                    }
                    Variant::CrossEntropy => tv,
                }
            }
        };
        value.max(LIPSCHITZ_FLOOR)
    }
}

pub fn objective_value(problem: &Problem, state: &State, weights: &ClassWeights) -> Result<ObjectiveBreakdown> {
    Model::new(problem, weights)?.objective(state)
}

pub fn grad_h(problem: &Problem, state: &State, weights: &ClassWeights) -> Result<Array2<f64>> {
    Ok(Model::new(problem, weights)?.grad_h(state))
}

pub fn grad_b(problem: &Problem, state: &State, weights: &ClassWeights) -> Result<Array2<f64>> {
    Ok(Model::new(problem, weights)?.grad_b(state))
}

pub fn grad_z(problem: &Problem, state: &State, weights: &ClassWeights) -> Result<Array2<f64>> {
    Ok(Model::new(problem, weights)?.grad_z(state))
}

pub fn grad_q(problem: &Problem, state: &State, weights: &ClassWeights) -> Result<Array2<f64>> {
    Ok(Model::new(problem, weights)?.grad_q(state))
}

pub fn grad_cu(problem: &Problem, state: &State, weights: &ClassWeights) -> Result<Array2<f64>> {
    Model::new(problem, weights)?.grad_cu(state)
}

pub fn lipschitz_constant(problem: &Problem, state: &State, block: Block, weights: &ClassWeights) -> Result<f64> {
    Ok(Model::new(problem, weights)?.lipschitz(state, block))
}

/// 0-based argmax of every column of the class attributions; ties go to the lowest class.
pub fn predict_classes(attributions: ArrayView2<f64>) -> Vec<usize> {
    attributions
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (i, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
