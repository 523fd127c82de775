//! Outer optimization loop: factor, propose a tangent step, line-search
//! along the retracted arc, repeat until a termination test fires.
//!
//! Every accepted iterate is feasible: nonlinear constraints to `eps_c`
//! and the box constraints (through `h`) to machine precision. Multipliers
//! are recomputed from the factorization at every iteration rather than
//! carried, and the objective itself serves as the merit function.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::deriv::DerivativeOracle;
use crate::direction::{
    dembo_tolerance, gradient_direction, newton_direction_equality, newton_direction_mixed,
    Direction, DirectionKind,
};
use crate::error::{Error, Result};
use crate::factor::{factor_equality, factor_mixed, TangentProjector};
use crate::linesearch::{armijo, golden_with_decrease, Accepted, LineSearchConfig, LineSearchMethod};
use crate::problem::{init_augmented, transform, AugmentedPoint, ProblemSpec, TransformedProblem};
use crate::retract::{
    inf_norm, projection_retract, projection_retract_mixed, qn_retract_equality, qn_retract_mixed,
    RetractionConfig, RetractionResult, RetractionVariant,
};

/// Search-direction family for the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionChoice {
    Gradient,
    Newton,
}

/// Solver configuration. Defaults follow the usual practical choices:
/// `eps_c = 1e-6`, `kappa = 1/2`, `mu0 = 0.01`, Armijo line search.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub direction: DirectionChoice,
    pub retraction: RetractionVariant,
    pub linesearch: LineSearchConfig,
    /// Constraint feasibility tolerance.
    pub eps_c: f64,
    /// Relative rank-tolerance coefficient for the SVD.
    pub eps_rank: f64,
    /// Inexact-Newton forcing constant.
    pub kappa: f64,
    /// Initial penalty for the projection retraction.
    pub mu0: f64,
    /// Objective-change tolerance, relative to `1 + |f|`.
    pub ftol: f64,
    /// Step-size tolerance, relative to `1 + |x|`.
    pub xtol: f64,
    /// Projected-gradient-norm tolerance.
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            direction: DirectionChoice::Newton,
            retraction: RetractionVariant::Projection,
            linesearch: LineSearchConfig::default(),
            eps_c: 1e-6,
            eps_rank: crate::factor::DEFAULT_EPS_RANK,
            kappa: 0.5,
            mu0: 0.01,
            ftol: 1e-8,
            xtol: 1e-10,
            gtol: 1e-6,
            max_iter: 1000,
        }
    }
}

/// Per-iteration statistics. One record is written for every outer
/// iteration entered, including the terminal one (whose step fields are
/// zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f: f64,
    pub proj_grad_norm: f64,
    pub constraint_viol_inf: f64,
    pub step_norm: f64,
    pub alpha: f64,
    pub direction_kind: DirectionKind,
    pub cg_iters: usize,
    pub retract_inner_iters: usize,
    pub cum_f_evals: u64,
    pub cum_grad_evals: u64,
    pub cum_jac_evals: u64,
    pub cum_w_actions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    ConvergedF,
    ConvergedX,
    ConvergedGrad,
    MaxIter,
    LineSearchFailed,
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(
            self,
            SolveStatus::ConvergedF | SolveStatus::ConvergedX | SolveStatus::ConvergedGrad
        )
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::ConvergedF => "converged_f",
            SolveStatus::ConvergedX => "converged_x",
            SolveStatus::ConvergedGrad => "converged_grad",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::LineSearchFailed => "line_search_failed",
        };
        write!(f, "{s}")
    }
}

/// Solve outcome. `x_final` is in original coordinates (slacks stripped);
/// `lambda_final` pairs with the stacked constraints `(c, d)`.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_final: DVector<f64>,
    pub f_final: f64,
    pub lambda_final: DVector<f64>,
    pub status: SolveStatus,
    pub trace: Vec<TraceRecord>,
}

impl SolveResult {
    /// Number of accepted outer steps.
    pub fn outer_iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Minimize `spec` starting from `x0`.
pub fn solve(spec: ProblemSpec, x0: &DVector<f64>, opts: &SolveOptions) -> Result<SolveResult> {
    assert!(opts.eps_c > 0.0 && opts.ftol > 0.0 && opts.xtol > 0.0 && opts.gtol > 0.0);
    assert!(opts.kappa > 0.0 && opts.kappa < 1.0);
    let tp = transform(spec)?;
    if tp.is_equality_only() {
        solve_equality(&tp, x0, opts)
    } else {
        solve_mixed(&tp, x0, opts)
    }
}

fn retraction_config(opts: &SolveOptions) -> RetractionConfig {
    RetractionConfig {
        eps_c: opts.eps_c,
        k_max: 100,
        mu0: opts.mu0,
        variant: opts.retraction,
    }
}

struct StepOutcome {
    accepted: Accepted<RetractionResult>,
    kind: DirectionKind,
    cg_iters: usize,
}

/// Line search dispatch shared by both paths; `arc` retracts a scaled
/// step, `f_eval` prices the retracted point.
fn search_along<FE, AR>(
    ls: &LineSearchConfig,
    f_eval: FE,
    arc: AR,
    f_cur: f64,
    g_dot_d: f64,
    dx_norm: f64,
) -> Result<Accepted<RetractionResult>>
where
    FE: FnMut(&RetractionResult) -> f64,
    AR: FnMut(f64) -> Result<RetractionResult>,
{
    match ls.method {
        LineSearchMethod::Armijo => armijo(f_eval, arc, f_cur, g_dot_d, ls),
        LineSearchMethod::Golden => golden_with_decrease(f_eval, arc, f_cur, dx_norm, ls),
    }
}

fn solve_equality(
    tp: &TransformedProblem,
    x0: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let oracle = DerivativeOracle::new(tp.spec());
    let retract_cfg = retraction_config(opts);

    let mut x = x0.clone();
    // Recover mildly infeasible starts with one zero-step projection.
    if inf_norm(&tp.eval_cprime(&x)) > opts.eps_c {
        let zero = DVector::zeros(x.len());
        match projection_retract(
            &x,
            &zero,
            |xx| Ok(tp.eval_cprime(xx)),
            |xx| oracle.jacobian(xx),
            &retract_cfg,
        ) {
            Ok(res) => x = res.point,
            Err(_) => {
                return Err(Error::InfeasibleStart(
                    "initial point violates c(x) = 0 beyond tolerance".into(),
                ))
            }
        }
    }

    let mut f_cur = oracle.eval_f(&x);
    let mut f_prev: Option<f64> = None;
    let mut last_step: Option<f64> = None;
    let mut g_prev_norm = f64::INFINITY;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let status;

    let mut iter = 0usize;
    loop {
        let grad = oracle.gradient(&x)?;
        let jac = oracle.jacobian(&x)?;
        let fact = factor_equality(&jac, opts.eps_rank)?;
        let pg = fact.project_tangent(&grad);
        let g_now = pg.norm();
        let viol = inf_norm(&tp.eval_cprime(&x));

        let mut row = TraceRecord {
            iter,
            f: f_cur,
            proj_grad_norm: g_now,
            constraint_viol_inf: viol,
            step_norm: 0.0,
            alpha: 0.0,
            direction_kind: DirectionKind::Gradient,
            cg_iters: 0,
            retract_inner_iters: 0,
            cum_f_evals: 0,
            cum_grad_evals: 0,
            cum_jac_evals: 0,
            cum_w_actions: 0,
        };

        if let Some(done) = check_termination(opts, f_cur, f_prev, last_step, g_now, x.norm(), iter)
        {
            status = done;
            finish_row(&mut row, &oracle);
            trace.push(row);
            break;
        }

        let dir =
            propose_direction_equality(opts, &oracle, &fact, &x, &grad, &pg, g_now, g_prev_norm)?;
        g_prev_norm = g_now;

        match line_search_equality(tp, opts, &oracle, &fact, &retract_cfg, &x, f_cur, &grad, dir)? {
            Ok(outcome) => {
                let step_norm = (&outcome.accepted.point.point - &x).norm();
                row.step_norm = step_norm;
                row.alpha = outcome.accepted.alpha;
                row.direction_kind = outcome.kind;
                row.cg_iters = outcome.cg_iters;
                row.retract_inner_iters = outcome.accepted.point.inner_iters;
                finish_row(&mut row, &oracle);
                trace.push(row);
                x = outcome.accepted.point.point;
                f_prev = Some(f_cur);
                f_cur = outcome.accepted.f_new;
                last_step = Some(step_norm);
                iter += 1;
            }
            Err(kind) => {
                row.direction_kind = kind;
                finish_row(&mut row, &oracle);
                trace.push(row);
                status = SolveStatus::LineSearchFailed;
                break;
            }
        }
    }

    let grad = oracle.gradient(&x)?;
    let fact = factor_equality(&oracle.jacobian(&x)?, opts.eps_rank)?;
    let lambda = fact.multipliers(&grad);
    Ok(SolveResult {
        x_final: tp.original_x(&x),
        f_final: f_cur,
        lambda_final: lambda,
        status,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn propose_direction_equality(
    opts: &SolveOptions,
    oracle: &DerivativeOracle<'_>,
    fact: &crate::factor::EqualityFactorization,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    pg: &DVector<f64>,
    g_now: f64,
    g_prev_norm: f64,
) -> Result<Direction> {
    match opts.direction {
        DirectionChoice::Gradient => Ok(Direction {
            step: -pg.clone(),
            kind: DirectionKind::Gradient,
            residual: 0.0,
            cg_iters: 0,
        }),
        DirectionChoice::Newton => {
            let delta = dembo_tolerance(opts.kappa, g_now, g_prev_norm);
            match newton_direction_equality(fact, oracle, x, grad, delta) {
                Ok((dir, _lambda)) => Ok(dir),
                Err(Error::IndefiniteProjection) => Ok(gradient_direction(fact, grad)),
                Err(e) => Err(e),
            }
        }
    }
}

/// Run the line search for a direction; on failure with a second-order
/// direction, retry once with the gradient direction. The outer `Result`
/// carries hard errors; the inner one reports unrecoverable line-search
/// failure together with the last direction kind tried.
#[allow(clippy::too_many_arguments)]
fn line_search_equality(
    tp: &TransformedProblem,
    opts: &SolveOptions,
    oracle: &DerivativeOracle<'_>,
    fact: &crate::factor::EqualityFactorization,
    retract_cfg: &RetractionConfig,
    x: &DVector<f64>,
    f_cur: f64,
    grad: &DVector<f64>,
    dir: Direction,
) -> Result<std::result::Result<StepOutcome, DirectionKind>> {
    let use_qn = opts.retraction == RetractionVariant::QuasiNewton && fact.is_full_rank();
    let attempt = |dir: &Direction| -> Result<std::result::Result<Accepted<RetractionResult>, ()>> {
        let g_dot_d = grad.dot(&dir.step);
        if g_dot_d > 0.0 {
            return Ok(Err(()));
        }
        let arc = |alpha: f64| -> Result<RetractionResult> {
            let dx = &dir.step * alpha;
            if use_qn {
                qn_retract_equality(x, &dx, |xx| Ok(tp.eval_cprime(xx)), fact, retract_cfg)
            } else {
                projection_retract(
                    x,
                    &dx,
                    |xx| Ok(tp.eval_cprime(xx)),
                    |xx| oracle.jacobian(xx),
                    retract_cfg,
                )
            }
        };
        let f_eval = |r: &RetractionResult| oracle.eval_f(&r.point);
        match search_along(&opts.linesearch, f_eval, arc, f_cur, g_dot_d, dir.step.norm()) {
            Ok(acc) => Ok(Ok(acc)),
            Err(Error::LineSearchFailed { .. }) => Ok(Err(())),
            Err(e) => Err(e),
        }
    };

    match attempt(&dir)? {
        Ok(accepted) => Ok(Ok(StepOutcome {
            accepted,
            kind: dir.kind,
            cg_iters: dir.cg_iters,
        })),
        Err(()) if dir.kind != DirectionKind::Gradient => {
            let grad_dir = gradient_direction(fact, grad);
            match attempt(&grad_dir)? {
                Ok(accepted) => Ok(Ok(StepOutcome {
                    accepted,
                    kind: grad_dir.kind,
                    cg_iters: dir.cg_iters,
                })),
                Err(()) => Ok(Err(DirectionKind::Gradient)),
            }
        }
        Err(()) => Ok(Err(dir.kind)),
    }
}

fn solve_mixed(
    tp: &TransformedProblem,
    x0: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let oracle = DerivativeOracle::new(tp.spec());
    let retract_cfg = retraction_config(opts);
    let np = tp.n_prime();

    let z0 = init_augmented(tp, x0, opts.eps_c)?;
    let mut z = z0.to_packed();
    let x_part = |z: &DVector<f64>| z.rows(0, np).into_owned();

    if inf_norm(&tp.eval_cprime(&x_part(&z))) > opts.eps_c {
        let zero = DVector::zeros(2 * np);
        match projection_retract_mixed(
            &z,
            &zero,
            tp,
            |xx| Ok(tp.eval_cprime(xx)),
            |xx| oracle.jacobian_aug(tp, xx),
            &retract_cfg,
        ) {
            Ok(res) => z = res.point,
            Err(_) => {
                return Err(Error::InfeasibleStart(
                    "initial point violates c'(x) = 0 beyond tolerance".into(),
                ))
            }
        }
    }

    let mut f_cur = oracle.eval_f_aug(tp, &x_part(&z));
    let mut f_prev: Option<f64> = None;
    let mut last_step: Option<f64> = None;
    let mut g_prev_norm = f64::INFINITY;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let status;

    let mut iter = 0usize;
    loop {
        let x_aug = x_part(&z);
        let grad_x = oracle.gradient_aug(tp, &x_aug)?;
        let jac = oracle.jacobian_aug(tp, &x_aug)?;
        let zpt = AugmentedPoint::from_packed(&z);
        let fact = factor_mixed(tp, &zpt, &jac, opts.eps_rank)?;

        let mut grad_z = DVector::zeros(2 * np);
        grad_z.rows_mut(0, np).copy_from(&grad_x);
        let pg = fact.project_tangent(&grad_z);
        let g_now = pg.norm();
        let viol = inf_norm(&tp.eval_cprime(&x_aug)).max(inf_norm(&tp.eval_h_packed(&z)));

        let mut row = TraceRecord {
            iter,
            f: f_cur,
            proj_grad_norm: g_now,
            constraint_viol_inf: viol,
            step_norm: 0.0,
            alpha: 0.0,
            direction_kind: DirectionKind::Gradient,
            cg_iters: 0,
            retract_inner_iters: 0,
            cum_f_evals: 0,
            cum_grad_evals: 0,
            cum_jac_evals: 0,
            cum_w_actions: 0,
        };

        if let Some(done) = check_termination(opts, f_cur, f_prev, last_step, g_now, z.norm(), iter)
        {
            status = done;
            finish_row(&mut row, &oracle);
            trace.push(row);
            break;
        }

        let dir = match opts.direction {
            DirectionChoice::Gradient => Direction {
                step: -pg.clone(),
                kind: DirectionKind::Gradient,
                residual: 0.0,
                cg_iters: 0,
            },
            DirectionChoice::Newton => {
                let delta = dembo_tolerance(opts.kappa, g_now, g_prev_norm);
                match newton_direction_mixed(&fact, &oracle, tp, &x_aug, &grad_x, delta) {
                    Ok((dir, _lambdas)) => dir,
                    Err(Error::IndefiniteProjection) => gradient_direction(&fact, &grad_z),
                    Err(e) => return Err(e),
                }
            }
        };
        g_prev_norm = g_now;

        let use_qn = opts.retraction == RetractionVariant::QuasiNewton && fact.is_full_rank();
        let attempt =
            |dir: &Direction| -> Result<std::result::Result<Accepted<RetractionResult>, ()>> {
                let g_dot_d = grad_z.dot(&dir.step);
                if g_dot_d > 0.0 {
                    return Ok(Err(()));
                }
                let arc = |alpha: f64| -> Result<RetractionResult> {
                    let dz = &dir.step * alpha;
                    if use_qn {
                        qn_retract_mixed(
                            &z,
                            &dz,
                            tp,
                            |xx| Ok(tp.eval_cprime(xx)),
                            &fact,
                            &retract_cfg,
                        )
                    } else {
                        projection_retract_mixed(
                            &z,
                            &dz,
                            tp,
                            |xx| Ok(tp.eval_cprime(xx)),
                            |xx| oracle.jacobian_aug(tp, xx),
                            &retract_cfg,
                        )
                    }
                };
                let f_eval = |r: &RetractionResult| oracle.eval_f_aug(tp, &x_part(&r.point));
                match search_along(
                    &opts.linesearch,
                    f_eval,
                    arc,
                    f_cur,
                    g_dot_d,
                    dir.step.norm(),
                ) {
                    Ok(acc) => Ok(Ok(acc)),
                    Err(Error::LineSearchFailed { .. }) => Ok(Err(())),
                    Err(e) => Err(e),
                }
            };

        let outcome = match attempt(&dir)? {
            Ok(accepted) => Ok(StepOutcome {
                accepted,
                kind: dir.kind,
                cg_iters: dir.cg_iters,
            }),
            Err(()) if dir.kind != DirectionKind::Gradient => {
                let grad_dir = gradient_direction(&fact, &grad_z);
                match attempt(&grad_dir)? {
                    Ok(accepted) => Ok(StepOutcome {
                        accepted,
                        kind: grad_dir.kind,
                        cg_iters: dir.cg_iters,
                    }),
                    Err(()) => Err(DirectionKind::Gradient),
                }
            }
            Err(()) => Err(dir.kind),
        };

        match outcome {
            Ok(outcome) => {
                let step_norm = (&outcome.accepted.point.point - &z).norm();
                row.step_norm = step_norm;
                row.alpha = outcome.accepted.alpha;
                row.direction_kind = outcome.kind;
                row.cg_iters = outcome.cg_iters;
                row.retract_inner_iters = outcome.accepted.point.inner_iters;
                finish_row(&mut row, &oracle);
                trace.push(row);
                z = outcome.accepted.point.point;
                f_prev = Some(f_cur);
                f_cur = outcome.accepted.f_new;
                last_step = Some(step_norm);
                iter += 1;
            }
            Err(kind) => {
                row.direction_kind = kind;
                finish_row(&mut row, &oracle);
                trace.push(row);
                status = SolveStatus::LineSearchFailed;
                break;
            }
        }
    }

    // Final multipliers for the original constraint stack (c, d).
    let x_aug = x_part(&z);
    let grad_x = oracle.gradient_aug(tp, &x_aug)?;
    let jac = oracle.jacobian_aug(tp, &x_aug)?;
    let zpt = AugmentedPoint::from_packed(&z);
    let fact = factor_mixed(tp, &zpt, &jac, opts.eps_rank)?;
    let (_lambda_h, lambda_c) = fact.multipliers(&grad_x);

    Ok(SolveResult {
        x_final: tp.original_x(&x_aug),
        f_final: f_cur,
        lambda_final: lambda_c,
        status,
        trace,
    })
}

fn check_termination(
    opts: &SolveOptions,
    f_cur: f64,
    f_prev: Option<f64>,
    last_step: Option<f64>,
    g_now: f64,
    x_norm: f64,
    iter: usize,
) -> Option<SolveStatus> {
    if let Some(fp) = f_prev {
        if (f_cur - fp).abs() < opts.ftol * (1.0 + f_cur.abs()) {
            return Some(SolveStatus::ConvergedF);
        }
    }
    if let Some(st) = last_step {
        if st < opts.xtol * (1.0 + x_norm) {
            return Some(SolveStatus::ConvergedX);
        }
    }
    if g_now < opts.gtol {
        // A gradient that is identically zero before any step means the
        // objective cannot improve at all; report it as an f-convergence.
        if f_prev.is_none() && g_now == 0.0 {
            return Some(SolveStatus::ConvergedF);
        }
        return Some(SolveStatus::ConvergedGrad);
    }
    if iter >= opts.max_iter {
        return Some(SolveStatus::MaxIter);
    }
    None
}

fn finish_row(row: &mut TraceRecord, oracle: &DerivativeOracle<'_>) {
    let counts = oracle.counts();
    row.cum_f_evals = counts.f;
    row.cum_grad_evals = counts.grad;
    row.cum_jac_evals = counts.jac;
    row.cum_w_actions = counts.w_action;
}
