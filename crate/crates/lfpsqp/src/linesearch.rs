//! Line searches along the retracted arc `alpha -> R(alpha * dx)`.
//!
//! Retraction failures are treated as objective value `+inf`: Armijo spends
//! a backtrack on them, and the golden-section bracketing phase caps its
//! bracket there. Because steps are tangent, the ambient slope
//! `grad f . dx` equals the projected slope, so callers pass the plain dot
//! product.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearchMethod {
    Armijo,
    Golden,
}

#[derive(Debug, Clone)]
pub struct LineSearchConfig {
    pub method: LineSearchMethod,
    /// Initial trial step.
    pub alpha0: f64,
    /// Backtracking reduction factor in (0, 1).
    pub shrink: f64,
    /// Sufficient-decrease coefficient in (0, 1).
    pub sigma: f64,
    pub max_backtracks: usize,
    /// Golden-section termination: bracket width below
    /// `golden_rel_tol * |dx|`.
    pub golden_rel_tol: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            method: LineSearchMethod::Armijo,
            alpha0: 1.0,
            shrink: 0.5,
            sigma: 1e-4,
            max_backtracks: 60,
            golden_rel_tol: 1e-6,
        }
    }
}

/// Accepted step: length, retracted point, and its objective value.
pub struct Accepted<P> {
    pub alpha: f64,
    pub point: P,
    pub f_new: f64,
}

/// Armijo backtracking: the first `alpha = alpha0 * shrink^k` with
/// `f(x) - f(R(alpha dx)) >= -sigma * alpha * (grad f . dx)` is accepted.
pub fn armijo<P>(
    mut f_eval: impl FnMut(&P) -> f64,
    mut arc: impl FnMut(f64) -> Result<P>,
    f_x: f64,
    g_dot_d: f64,
    cfg: &LineSearchConfig,
) -> Result<Accepted<P>> {
    debug_assert!(g_dot_d <= 0.0, "line search requires a descent direction");
    let mut alpha = cfg.alpha0;
    for _ in 0..cfg.max_backtracks {
        if let Ok(point) = arc(alpha) {
            let f_new = f_eval(&point);
            // NaN objective fails the comparison and costs a backtrack.
            if f_x - f_new >= -cfg.sigma * alpha * g_dot_d {
                return Ok(Accepted {
                    alpha,
                    point,
                    f_new,
                });
            }
        }
        alpha *= cfg.shrink;
    }
    Err(Error::LineSearchFailed {
        backtracks: cfg.max_backtracks,
    })
}

/// Golden-section search with an upper-bounding phase: the trial step
/// doubles until the objective rises (or the retraction fails, which caps
/// the bracket), then the bracket shrinks to `golden_rel_tol * dx_norm`
/// and the best probed point is returned.
pub fn golden<P>(
    mut f_eval: impl FnMut(&P) -> f64,
    mut arc: impl FnMut(f64) -> Result<P>,
    dx_norm: f64,
    cfg: &LineSearchConfig,
) -> Result<Accepted<P>> {
    let mut best: Option<Accepted<P>> = None;
    let mut probe = |alpha: f64, best: &mut Option<Accepted<P>>| -> f64 {
        match arc(alpha) {
            Ok(point) => {
                let f = f_eval(&point);
                if f.is_finite() && best.as_ref().is_none_or(|b| f < b.f_new) {
                    *best = Some(Accepted {
                        alpha,
                        point,
                        f_new: f,
                    });
                }
                f
            }
            Err(_) => f64::INFINITY,
        }
    };
    // Bracketing: double from alpha0 until the value rises or the arc
    // fails; the bracket then spans the two probes around the best one.
    const MAX_DOUBLINGS: usize = 60;
    let mut lo = 0.0;
    let mut prev_alpha = 0.0;
    let mut alpha = cfg.alpha0;
    let mut f_prev = f64::INFINITY;
    let mut hi = None;
    for _ in 0..MAX_DOUBLINGS {
        let f_alpha = probe(alpha, &mut best);
        if f_alpha >= f_prev {
            hi = Some(alpha);
            break;
        }
        lo = prev_alpha;
        prev_alpha = alpha;
        f_prev = f_alpha;
        alpha *= 2.0;
    }
    let mut hi = hi.unwrap_or(alpha);

    // Golden-section reduction on [lo, hi].
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let tol = cfg.golden_rel_tol * dx_norm;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = probe(x1, &mut best);
    let mut f2 = probe(x2, &mut best);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = probe(x1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = probe(x2, &mut best);
        }
    }

    match best {
        Some(acc) => Ok(acc),
        None => Err(Error::LineSearchFailed {
            backtracks: MAX_DOUBLINGS,
        }),
    }
}

/// Golden search that also enforces decrease against the current value.
pub fn golden_with_decrease<P>(
    f_eval: impl FnMut(&P) -> f64,
    arc: impl FnMut(f64) -> Result<P>,
    f_x: f64,
    dx_norm: f64,
    cfg: &LineSearchConfig,
) -> Result<Accepted<P>> {
    let acc = golden(f_eval, arc, dx_norm, cfg)?;
    if acc.f_new < f_x {
        Ok(acc)
    } else {
        Err(Error::LineSearchFailed { backtracks: 0 })
    }
}
