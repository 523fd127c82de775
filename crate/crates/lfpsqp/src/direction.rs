//! Tangent-space search directions: projected gradient and inexact Newton
//! via projected conjugate gradient on the saddle-point system.
//!
//! The CG solver keeps every iterate in the tangent space by projecting the
//! residual each pass, detects nonpositive curvature and returns that
//! direction instead of a Newton step, and stops at the Dembo forcing
//! tolerance so the system is never oversolved far from a critical point.

use nalgebra::DVector;

use crate::deriv::DerivativeOracle;
use crate::error::{Error, Result};
use crate::factor::{EqualityFactorization, MixedFactorization, TangentProjector};
use crate::problem::TransformedProblem;

/// Provenance of a proposed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Gradient,
    Newton,
    NegativeCurvature,
}

impl std::fmt::Display for DirectionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DirectionKind::Gradient => write!(f, "gradient"),
            DirectionKind::Newton => write!(f, "newton"),
            DirectionKind::NegativeCurvature => write!(f, "negative_curvature"),
        }
    }
}

impl std::str::FromStr for DirectionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gradient" => Ok(DirectionKind::Gradient),
            "newton" => Ok(DirectionKind::Newton),
            "negative_curvature" => Ok(DirectionKind::NegativeCurvature),
            other => Err(format!("unknown direction kind: {other}")),
        }
    }
}

/// Box-row and nonlinear-row multipliers of the augmented problem.
pub type MixedMultipliers = (DVector<f64>, DVector<f64>);

/// A tangent-space step proposal.
#[derive(Debug, Clone)]
pub struct Direction {
    pub step: DVector<f64>,
    pub kind: DirectionKind,
    /// Residual 2-norm achieved by CG (0 for gradient steps).
    pub residual: f64,
    pub cg_iters: usize,
}

/// Steepest-descent step restricted to the tangent space.
pub fn gradient_direction<P: TangentProjector>(fact: &P, grad_f: &DVector<f64>) -> Direction {
    let step = -fact.project_tangent(grad_f);
    Direction {
        step,
        kind: DirectionKind::Gradient,
        residual: 0.0,
        cg_iters: 0,
    }
}

/// Inexact-Newton forcing tolerance
/// `delta = kappa * min(1, |g_i| / |g_{i-1}|) * |g_i|`; pass `infinity` for
/// the previous norm on the first iteration, which makes the ratio factor 1.
pub fn dembo_tolerance(kappa: f64, g_norm_now: f64, g_norm_prev: f64) -> f64 {
    let ratio = if g_norm_prev.is_finite() {
        (g_norm_now / g_norm_prev).min(1.0)
    } else {
        1.0
    };
    kappa * ratio * g_norm_now
}

/// Projected conjugate gradient for `A dx + U dl = b`, `U^T dx = 0`, with
/// the basis given implicitly through the projector `(I - U U^T)`.
///
/// Exits with a normalized nonpositive-curvature direction when one is
/// found, and with [`Error::IndefiniteProjection`] when the projected
/// system is inconsistent (`r . g <= 0`); the caller then falls back to a
/// gradient step. The residual is re-projected every iteration so roundoff
/// cannot push iterates out of the tangent space.
pub fn projected_cg<P: TangentProjector>(
    mut a_action: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    basis: &P,
    b: &DVector<f64>,
    delta: f64,
    max_iters: usize,
) -> Result<Direction> {
    // Floor keeps the loop from chasing residuals below roundoff.
    let delta = delta.max(1e-14 * (1.0 + b.norm()));

    let mut dx = DVector::zeros(b.len());
    let mut r = -basis.project_tangent(b);
    let mut g = r.clone();
    let mut p = -g.clone();

    let mut iters = 0;
    while r.norm() > delta {
        if iters >= max_iters {
            break;
        }
        let q = a_action(&p)?;
        iters += 1;

        let pq = p.dot(&q);
        if pq <= 0.0 {
            let norm = p.norm();
            return Ok(Direction {
                step: p / norm,
                kind: DirectionKind::NegativeCurvature,
                residual: r.norm(),
                cg_iters: iters,
            });
        }
        let rg = r.dot(&g);
        if rg <= 0.0 {
            return Err(Error::IndefiniteProjection);
        }

        let alpha = rg / pq;
        dx.axpy(alpha, &p, 1.0);
        let r_plus = &r + q * alpha;
        let g_plus = basis.project_tangent(&r_plus);
        let beta = r_plus.dot(&g_plus) / rg;
        p = -&g_plus + p * beta;
        g = g_plus.clone();
        r = g_plus;
    }

    Ok(Direction {
        step: dx,
        kind: DirectionKind::Newton,
        residual: r.norm(),
        cg_iters: iters,
    })
}

fn cg_iteration_cap(tangent_dim: usize) -> usize {
    10 * tangent_dim.max(1)
}

/// Inexact Newton direction for the equality-constrained case. Multipliers
/// are recomputed from the factorization (never carried between
/// iterations); returns them alongside the step.
pub fn newton_direction_equality(
    fact: &EqualityFactorization,
    oracle: &DerivativeOracle<'_>,
    x: &DVector<f64>,
    grad_f: &DVector<f64>,
    delta: f64,
) -> Result<(Direction, DVector<f64>)> {
    let lambda = fact.multipliers(grad_f);
    let b = -fact.project_tangent(grad_f);
    let cap = cg_iteration_cap(fact.ambient_dim() - fact.normal_dim());
    let dir = projected_cg(
        |v| oracle.w_action(x, &lambda, v),
        fact,
        &b,
        delta,
        cap,
    )?;
    Ok((dir, lambda))
}

/// Inexact Newton direction for the augmented (mixed) case. The operator
/// applies `W' + H_x` on the `x` block and the diagonal `H_y` on the `y`
/// block, where `H_x = 2 diag(lambda_h . q)` and `H_y = 2 diag(lambda_h . s)`.
pub fn newton_direction_mixed(
    fact: &MixedFactorization,
    oracle: &DerivativeOracle<'_>,
    tp: &TransformedProblem,
    x_aug: &DVector<f64>,
    grad_fx: &DVector<f64>,
    delta: f64,
) -> Result<(Direction, MixedMultipliers)> {
    let np = tp.n_prime();
    let (lambda_h, lambda_c) = fact.multipliers(grad_fx);

    let h_x: DVector<f64> = DVector::from_fn(np, |k, _| 2.0 * lambda_h[k] * tp.q()[k]);
    let h_y: DVector<f64> = DVector::from_fn(np, |k, _| 2.0 * lambda_h[k] * tp.s()[k]);

    let mut grad_z = DVector::zeros(2 * np);
    grad_z.rows_mut(0, np).copy_from(grad_fx);
    let b = -fact.project_tangent(&grad_z);

    let cap = cg_iteration_cap(2 * np - fact.normal_dim());
    let dir = projected_cg(
        |v: &DVector<f64>| {
            let vx = v.rows(0, np).into_owned();
            let w = oracle.w_action_aug(tp, x_aug, &lambda_c, &vx)?;
            let mut out = DVector::zeros(2 * np);
            for k in 0..np {
                out[k] = w[k] + h_x[k] * v[k];
                out[np + k] = h_y[k] * v[np + k];
            }
            Ok(out)
        },
        fact,
        &b,
        delta,
        cap,
    )?;
    Ok((dir, (lambda_h, lambda_c)))
}
