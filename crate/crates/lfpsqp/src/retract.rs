//! Retractions: maps from tangent proposals back onto the feasible set.
//!
//! Two families are provided. The quasi-Newton (orthographic) retraction
//! moves along the normal space `U w` and solves `c = 0` for `w` by
//! Broyden's good method seeded with `Sigma^{-1} V^T`, the exact inverse
//! Jacobian at zero step. It requires a full-rank factorization. The
//! projection retraction solves the nearest-point problem by a quadratic
//! penalty method whose inner step is a single Gauss-Newton/Levenberg-
//! Marquardt solve; it tolerates rank-deficient Jacobians and is the
//! robust default.
//!
//! For the augmented problem the box constraints `h` are handled in closed
//! form: [`h_retract`] maps each `(x_k, y_k)` pair back to its line,
//! parabola, or circle in `O(1)`, and the composite retraction wraps the
//! Broyden iteration around it so `h` holds exactly while `c'` is solved.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::{EqualityFactorization, MixedFactorization};
use crate::problem::{RowKind, TransformedProblem};

/// Which retraction the solver should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetractionVariant {
    Projection,
    QuasiNewton,
}

#[derive(Debug, Clone)]
pub struct RetractionConfig {
    /// Feasibility tolerance on the constraint infinity-norm.
    pub eps_c: f64,
    /// Inner iteration cap.
    pub k_max: usize,
    /// Initial penalty parameter for the projection variant.
    pub mu0: f64,
    pub variant: RetractionVariant,
}

impl Default for RetractionConfig {
    fn default() -> Self {
        Self {
            eps_c: 1e-6,
            k_max: 100,
            mu0: 0.01,
            variant: RetractionVariant::Projection,
        }
    }
}

/// Outcome of a successful retraction.
#[derive(Debug, Clone)]
pub struct RetractionResult {
    pub point: DVector<f64>,
    pub inner_iters: usize,
    /// Achieved constraint infinity-norm (for the augmented problem, the
    /// larger of the `c'` and `h` norms).
    pub constraint_norm: f64,
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Broyden good-method iteration shared by both quasi-Newton retractions.
/// `move_and_eval(w)` applies the accumulated normal coefficients and
/// returns the residual at the new point.
fn broyden_solve(
    mut b: DMatrix<f64>,
    mut move_and_eval: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    eps_c: f64,
    k_max: usize,
) -> Result<(DVector<f64>, usize)> {
    let m = b.nrows();
    let mut w = DVector::zeros(m);
    let mut c = move_and_eval(&w)?;
    let mut k = 0;
    while inf_norm(&c) > eps_c && k < k_max {
        let dw = -(&b * &c);
        w += &dw;
        let c_new = move_and_eval(&w)?;
        let dc = &c_new - &c;
        let u_vec = &dw - &b * &dc;
        let v_vec = b.transpose() * &dw;
        let denom = v_vec.dot(&dc);
        if denom.abs() <= 1e-14 * v_vec.norm() * dc.norm() {
            return Err(Error::RetractionDiverged { iters: k });
        }
        b += u_vec * v_vec.transpose() / denom;
        c = c_new;
        k += 1;
    }
    if inf_norm(&c) > eps_c {
        return Err(Error::RetractionDiverged { iters: k });
    }
    Ok((w, k))
}

/// Orthographic retraction `x + dx + U w` with `c(x + dx + U w) = 0`,
/// solved by Broyden iteration. Requires the factorization to be full
/// rank; each inner iteration costs `O(nm)`.
pub fn qn_retract_equality(
    x_i: &DVector<f64>,
    dx: &DVector<f64>,
    mut c_eval: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    fact: &EqualityFactorization,
    cfg: &RetractionConfig,
) -> Result<RetractionResult> {
    assert!(fact.is_full_rank(), "quasi-Newton retraction needs full rank");
    let x_tilde = x_i + dx;
    let u = fact.u_full();
    let mut point = x_tilde.clone();
    let mut last_norm = 0.0;
    let (_, iters) = broyden_solve(
        fact.broyden_seed(),
        |w| {
            point = &x_tilde + u * w;
            let c = c_eval(&point)?;
            last_norm = inf_norm(&c);
            Ok(c)
        },
        cfg.eps_c,
        cfg.k_max,
    )?;
    Ok(RetractionResult {
        point,
        inner_iters: iters,
        constraint_norm: last_norm,
    })
}

/// Plain conjugate gradient for the SPD Gauss-Newton systems; absolute
/// residual tolerance.
fn cg_spd(
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    rhs: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut rs = r.norm_squared();
    if rs.sqrt() <= tol {
        return x;
    }
    let mut p = r.clone();
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.norm_squared();
        if rs_new.sqrt() <= tol {
            break;
        }
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    x
}

/// Tolerance to which the `h` rows are driven before the final snap, so
/// the snap displacement cannot disturb `c'` at the `eps_c` level.
const H_POLISH_TOL: f64 = 1e-11;

/// Shared penalty/Gauss-Newton projection loop. The residual stack and its
/// Jacobian action are supplied as closures so the equality and augmented
/// cases share one implementation. `converged` inspects the residual
/// stack; `snap` projects exactly onto the structured (box) rows once the
/// stack has converged, after which convergence is re-verified. For the
/// equality case both are trivial.
fn penalty_projection_loop(
    z_tilde: &DVector<f64>,
    mut residual: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    // (J v, J^T rho) at the current point; refreshed every inner iteration.
    mut jacobian_ops: impl FnMut(
        &DVector<f64>,
    ) -> Result<(
        Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
        Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
    )>,
    mut converged: impl FnMut(&DVector<f64>) -> bool,
    mut snap: impl FnMut(&mut DVector<f64>),
    cg_tol: f64,
    cfg: &RetractionConfig,
) -> Result<RetractionResult> {
    let dim = z_tilde.len();
    let mut z = z_tilde.clone();
    let mut rho = residual(&z)?;
    let mut mu = cfg.mu0;
    let mut k = 0;
    loop {
        if converged(&rho) {
            // Snap displacement is bounded by the (tight) h tolerance, so
            // in practice this cannot push c' back out of tolerance.
            snap(&mut z);
            rho = residual(&z)?;
            if converged(&rho) {
                return Ok(RetractionResult {
                    point: z,
                    inner_iters: k,
                    constraint_norm: inf_norm(&rho),
                });
            }
        }
        if k >= cfg.k_max {
            return Err(Error::RetractionDiverged { iters: k });
        }

        let (j_apply, jt_apply) = jacobian_ops(&z)?;
        let diff = &z - z_tilde;
        let rhs = -(jt_apply(&rho) + &diff * mu);
        let p = cg_spd(|v| jt_apply(&j_apply(v)) + v * mu, &rhs, cg_tol, 2 * dim);

        // Armijo on the penalty objective: accept the unit step on plain
        // decrease, backtrack with sufficient decrease otherwise.
        let phi = |diff: &DVector<f64>, rho: &DVector<f64>, mu: f64| {
            0.5 * mu * diff.norm_squared() + 0.5 * rho.norm_squared()
        };
        let phi_cur = phi(&diff, &rho, mu);
        let slope = -rhs.dot(&p);
        let mut alpha = 1.0;
        let mut accepted = None;
        for backtrack in 0..40 {
            let z_try = &z + &p * alpha;
            let rho_try = residual(&z_try)?;
            let phi_try = phi(&(&z_try - z_tilde), &rho_try, mu);
            let ok = if backtrack == 0 {
                phi_try <= phi_cur
            } else {
                phi_try <= phi_cur + 1e-4 * alpha * slope
            };
            if ok {
                accepted = Some((z_try, rho_try));
                break;
            }
            alpha *= 0.5;
        }
        let (z_new, rho_new) = match accepted {
            Some(pair) => pair,
            None => return Err(Error::RetractionDiverged { iters: k }),
        };
        z = z_new;
        rho = rho_new;
        mu = rho.norm().max(1e-12);
        k += 1;
    }
}

/// Projection retraction: nearest point on `c = 0` to `x + dx`, computed
/// by the quadratic penalty method with Levenberg-Marquardt-style inner
/// steps. Does not require a full-rank Jacobian.
pub fn projection_retract(
    x_i: &DVector<f64>,
    dx: &DVector<f64>,
    mut c_eval: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut jac_eval: impl FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
    cfg: &RetractionConfig,
) -> Result<RetractionResult> {
    let x_tilde = x_i + dx;
    let eps_c = cfg.eps_c;
    penalty_projection_loop(
        &x_tilde,
        |x| c_eval(x),
        |x| {
            let jac = jac_eval(x)?;
            let jt = jac.transpose();
            Ok((
                Box::new(move |v: &DVector<f64>| &jac * v) as Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
                Box::new(move |r: &DVector<f64>| &jt * r) as Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
            ))
        },
        move |rho| inf_norm(rho) <= eps_c,
        |_| {},
        cfg.eps_c,
        cfg,
    )
}

/// Stable real roots of `a g^2 + b g + c = 0`, smallest magnitude first.
fn smallest_quadratic_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if c == 0.0 {
        return Some(0.0);
    }
    if a.abs() <= f64::EPSILON * (b.abs() + c.abs()) {
        if b == 0.0 {
            return None;
        }
        return Some(-c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if qq == 0.0 {
        (0.0, 0.0)
    } else {
        (qq / a, c / qq)
    };
    Some(if r1.abs() < r2.abs() { r1 } else { r2 })
}

/// Coordinate-wise retraction onto the `h` manifold (packed layout).
///
/// Line rows pass through; parabola rows project along the ray toward the
/// point one unit inward along the normal at the base point; circle rows
/// rescale radially about the center.
pub(crate) fn h_retract_packed(
    tp: &TransformedProblem,
    z_i: &DVector<f64>,
    dz: &DVector<f64>,
) -> Result<DVector<f64>> {
    let np = tp.n_prime();
    let mut out = DVector::zeros(2 * np);
    for k in 0..np {
        let (x, y) = (z_i[k], z_i[np + k]);
        let (ddx, ddy) = (dz[k], dz[np + k]);
        if ddx == 0.0 && ddy == 0.0 {
            out[k] = x;
            out[np + k] = y;
            continue;
        }
        let (xt, yt) = (x + ddx, y + ddy);
        let (r, s, t) = (tp.r()[k], tp.s()[k], tp.t()[k]);
        match tp.row_kind(k) {
            RowKind::Line => {
                out[k] = xt;
                out[np + k] = yt;
            }
            RowKind::Parabola => {
                // Ray from the displaced point toward the fixed point one
                // unit inward along the normal at (x, y).
                let nx = -s;
                let ny = -2.0 * (y - r);
                let norm = nx.hypot(ny);
                let xi_x = nx / norm - ddx;
                let xi_y = ny / norm - ddy;
                // h(xt + g xi_x, yt + g xi_y) = 0 is quadratic in g.
                let a = s * xi_y * xi_y;
                let b = xi_x + 2.0 * s * (yt - r) * xi_y;
                let c = xt + s * (yt - r).powi(2) - t;
                let gamma = smallest_quadratic_root(a, b, c)
                    .ok_or(Error::CoordinateRetractFailed { index: k })?;
                out[k] = xt + gamma * xi_x;
                out[np + k] = yt + gamma * xi_y;
            }
            RowKind::Circle => {
                let (vx, vy) = (xt - r, yt - r);
                let rho = vx.hypot(vy);
                if rho == 0.0 {
                    return Err(Error::CoordinateRetractFailed { index: k });
                }
                let scale = t.sqrt() / rho;
                out[k] = r + vx * scale;
                out[np + k] = r + vy * scale;
            }
        }
    }
    Ok(out)
}

/// Coordinate-wise retraction onto the `h` manifold.
pub fn h_retract(
    tp: &TransformedProblem,
    z_i: &crate::problem::AugmentedPoint,
    dz: &DVector<f64>,
) -> Result<crate::problem::AugmentedPoint> {
    let packed = h_retract_packed(tp, &z_i.to_packed(), dz)?;
    Ok(crate::problem::AugmentedPoint::from_packed(&packed))
}

/// Exact coordinate-wise projection onto the `h` manifold: lines move to
/// their midpoint, parabolas solve for `x` given `y`, circles rescale
/// radially. Used to polish projection-retraction output so `h` holds to
/// machine precision.
fn snap_to_h(tp: &TransformedProblem, z: &mut DVector<f64>) {
    let np = tp.n_prime();
    for k in 0..np {
        let (r, s, t) = (tp.r()[k], tp.s()[k], tp.t()[k]);
        match tp.row_kind(k) {
            RowKind::Line => {
                let mid = 0.5 * (z[k] + z[np + k]);
                z[k] = mid;
                z[np + k] = mid;
            }
            RowKind::Parabola => {
                z[k] = t - s * (z[np + k] - r).powi(2);
            }
            RowKind::Circle => {
                let (vx, vy) = (z[k] - r, z[np + k] - r);
                let rho = vx.hypot(vy);
                if rho > 0.0 {
                    let scale = t.sqrt() / rho;
                    z[k] = r + vx * scale;
                    z[np + k] = r + vy * scale;
                }
            }
        }
    }
}

/// Composite quasi-Newton retraction for the augmented problem: Broyden
/// iteration on the normal coefficients `w` with residual
/// `c'(Rh(dz + U w))`, so the box constraints hold exactly at every trial
/// point. `cprime_eval` receives the `x` block (length `n'`).
pub fn qn_retract_mixed(
    z_i: &DVector<f64>,
    dz: &DVector<f64>,
    tp: &TransformedProblem,
    mut cprime_eval: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    fact: &MixedFactorization,
    cfg: &RetractionConfig,
) -> Result<RetractionResult> {
    assert!(fact.is_full_rank(), "quasi-Newton retraction needs full rank");
    let np = tp.n_prime();
    if tp.m_prime() == 0 {
        let point = h_retract_packed(tp, z_i, dz)?;
        let h_norm = inf_norm(&tp.eval_h_packed(&point));
        return Ok(RetractionResult {
            point,
            inner_iters: 0,
            constraint_norm: h_norm,
        });
    }

    let mut point = z_i.clone();
    let mut last_norm = 0.0;
    let (_, iters) = broyden_solve(
        fact.broyden_seed(),
        |w| {
            let shifted = dz + fact.u_times(w);
            point = h_retract_packed(tp, z_i, &shifted)?;
            let c = cprime_eval(&point.rows(0, np).into_owned())?;
            last_norm = inf_norm(&c);
            Ok(c)
        },
        cfg.eps_c,
        cfg.k_max,
    )?;
    let h_norm = inf_norm(&tp.eval_h_packed(&point));
    Ok(RetractionResult {
        point,
        inner_iters: iters,
        constraint_norm: last_norm.max(h_norm),
    })
}

/// Projection retraction for the augmented problem: quadratic penalty on
/// the stacked residual `(c', h)` whose Jacobian actions exploit the
/// diagonal `h` blocks, followed by an exact snap onto the `h` manifold.
pub fn projection_retract_mixed(
    z_i: &DVector<f64>,
    dz: &DVector<f64>,
    tp: &TransformedProblem,
    mut cprime_eval: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut cprime_jac: impl FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
    cfg: &RetractionConfig,
) -> Result<RetractionResult> {
    let np = tp.n_prime();
    let mp = tp.m_prime();
    let z_tilde = z_i + dz;
    let eps_c = cfg.eps_c;
    let h_tol = H_POLISH_TOL.min(eps_c);

    let stack_residual = |cp: &DVector<f64>, h: &DVector<f64>| {
        let mut rho = DVector::zeros(mp + np);
        rho.rows_mut(0, mp).copy_from(cp);
        rho.rows_mut(mp, np).copy_from(h);
        rho
    };

    let result = penalty_projection_loop(
        &z_tilde,
        |z| {
            let x = z.rows(0, np).into_owned();
            let cp = cprime_eval(&x)?;
            Ok(stack_residual(&cp, &tp.eval_h_packed(z)))
        },
        |z| {
            let x = z.rows(0, np).into_owned();
            let jac = cprime_jac(&x)?;
            let jt = jac.transpose();
            let (hx, hy) = tp.h_partials(z);
            let (hx2, hy2) = (hx.clone(), hy.clone());
            let j_apply = move |v: &DVector<f64>| {
                let vx = v.rows(0, np).into_owned();
                let mut out = DVector::zeros(mp + np);
                if mp > 0 {
                    out.rows_mut(0, mp).copy_from(&(&jac * &vx));
                }
                for k in 0..np {
                    out[mp + k] = hx[k] * v[k] + hy[k] * v[np + k];
                }
                out
            };
            let jt_apply = move |rho: &DVector<f64>| {
                let mut out = DVector::zeros(2 * np);
                if mp > 0 {
                    let rc = rho.rows(0, mp).into_owned();
                    out.rows_mut(0, np).copy_from(&(&jt * &rc));
                }
                for k in 0..np {
                    out[k] += hx2[k] * rho[mp + k];
                    out[np + k] += hy2[k] * rho[mp + k];
                }
                out
            };
            Ok((
                Box::new(j_apply) as Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
                Box::new(jt_apply) as Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
            ))
        },
        move |rho| {
            let c_ok = mp == 0 || rho.rows(0, mp).amax() <= eps_c;
            c_ok && rho.rows(mp, np).amax() <= h_tol
        },
        |z| snap_to_h(tp, z),
        h_tol * 0.1,
        cfg,
    )?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{factor_equality, factor_mixed, TangentProjector, DEFAULT_EPS_RANK};
    use crate::problem::{init_augmented, transform, AugmentedPoint, ProblemSpec};
    use approx::assert_abs_diff_eq;

    fn sphere_c(x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x.dot(x) - 1.0))
    }

    fn sphere_jac(x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(1, x.len(), |_, j| 2.0 * x[j]))
    }

    fn tight_cfg() -> RetractionConfig {
        RetractionConfig {
            eps_c: 1e-12,
            ..Default::default()
        }
    }

    #[test]
    fn qn_orthographic_on_sphere() {
        // x = e1, dx = 0.6 e2: w = -0.2, landing at (0.8, 0.6).
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let dx = DVector::from_vec(vec![0.0, 0.6]);
        let fact = factor_equality(&sphere_jac(&x).unwrap(), DEFAULT_EPS_RANK).unwrap();
        let res = qn_retract_equality(&x, &dx, sphere_c, &fact, &tight_cfg()).unwrap();
        assert_abs_diff_eq!(res.point[0], 0.8, epsilon = 1e-10);
        assert_abs_diff_eq!(res.point[1], 0.6, epsilon = 1e-10);
    }

    #[test]
    fn qn_zero_step_is_identity() {
        let x = DVector::from_vec(vec![0.0, 1.0]);
        let dx = DVector::zeros(2);
        let fact = factor_equality(&sphere_jac(&x).unwrap(), DEFAULT_EPS_RANK).unwrap();
        let res = qn_retract_equality(&x, &dx, sphere_c, &fact, &tight_cfg()).unwrap();
        assert_eq!(res.inner_iters, 0);
        assert_eq!(res.point, x);
    }

    #[test]
    fn qn_overshoot_has_no_preimage() {
        // dx = 2 e2 leaves the orthographic domain: (1 + w)^2 = -3.
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let dx = DVector::from_vec(vec![0.0, 2.0]);
        let fact = factor_equality(&sphere_jac(&x).unwrap(), DEFAULT_EPS_RANK).unwrap();
        let err = qn_retract_equality(&x, &dx, sphere_c, &fact, &tight_cfg()).unwrap_err();
        assert!(matches!(err, Error::RetractionDiverged { .. }));
    }

    #[test]
    fn projection_radial_symmetry() {
        // Projecting (0, 2) onto the unit circle gives (0, 1).
        let x = DVector::from_vec(vec![0.0, 1.0]);
        let dx = DVector::from_vec(vec![0.0, 1.0]);
        let cfg = RetractionConfig {
            eps_c: 1e-10,
            ..Default::default()
        };
        let res = projection_retract(&x, &dx, sphere_c, sphere_jac, &cfg).unwrap();
        assert_abs_diff_eq!(res.point[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(res.point[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn projection_nearest_point_on_circle() {
        // x = e1, dx = 0.5 e2: nearest point is (1, 0.5)/sqrt(1.25).
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let dx = DVector::from_vec(vec![0.0, 0.5]);
        let cfg = RetractionConfig {
            eps_c: 1e-10,
            ..Default::default()
        };
        let res = projection_retract(&x, &dx, sphere_c, sphere_jac, &cfg).unwrap();
        assert_abs_diff_eq!(res.point[0], 0.8944271909999159, epsilon = 1e-8);
        assert_abs_diff_eq!(res.point[1], 0.4472135954999579, epsilon = 1e-8);
    }

    #[test]
    fn projection_handles_duplicated_constraints() {
        // c1 = c2 = x.x - 1: rank-deficient Jacobian, same projection as
        // the single-constraint problem.
        let dup_c = |x: &DVector<f64>| -> Result<DVector<f64>> {
            let v = x.dot(x) - 1.0;
            Ok(DVector::from_vec(vec![v, v]))
        };
        let dup_jac = |x: &DVector<f64>| -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(2, x.len(), |_, j| 2.0 * x[j]))
        };
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let dx = DVector::from_vec(vec![0.0, 0.5]);
        let cfg = RetractionConfig {
            eps_c: 1e-10,
            ..Default::default()
        };
        let res = projection_retract(&x, &dx, dup_c, dup_jac, &cfg).unwrap();
        let single = projection_retract(&x, &dx, sphere_c, sphere_jac, &cfg).unwrap();
        assert!((res.point - single.point).amax() <= 1e-7);
    }

    fn box_tp(lowers: &[f64], uppers: &[f64]) -> TransformedProblem {
        let n = lowers.len();
        transform(
            ProblemSpec::new(n, |x| x.sum()).with_bounds(
                DVector::from_row_slice(lowers),
                DVector::from_row_slice(uppers),
            ),
        )
        .unwrap()
    }

    use crate::problem::TransformedProblem;

    #[test]
    fn h_retract_line_passes_through() {
        let inf = f64::INFINITY;
        let tp = box_tp(&[-inf], &[inf]);
        let z = AugmentedPoint {
            x: DVector::from_element(1, 1.0),
            y: DVector::from_element(1, 1.0),
        };
        let dz = DVector::from_vec(vec![2.0, 2.0]);
        let out = h_retract(&tp, &z, &dz).unwrap();
        assert_eq!(out.x[0], 3.0);
        assert_eq!(out.y[0], 3.0);
    }

    #[test]
    fn h_retract_circle_top_tangent_step() {
        // (q, r, s, t) = (1, 1, 1, 1): from (1, 2) with tangent (1, 0),
        // the displaced point (2, 2) rescales to (1 + 1/sqrt2, 1 + 1/sqrt2).
        let tp = box_tp(&[0.0], &[2.0]);
        let z = AugmentedPoint {
            x: DVector::from_element(1, 1.0),
            y: DVector::from_element(1, 2.0),
        };
        let dz = DVector::from_vec(vec![1.0, 0.0]);
        let out = h_retract(&tp, &z, &dz).unwrap();
        let expected = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(out.x[0], expected, epsilon = 1e-14);
        assert_abs_diff_eq!(out.y[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn h_retract_zero_step_identity() {
        let tp = box_tp(&[0.0], &[2.0]);
        let z = AugmentedPoint {
            x: DVector::from_element(1, 1.0),
            y: DVector::from_element(1, 2.0),
        };
        let out = h_retract(&tp, &z, &DVector::zeros(2)).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn h_retract_circle_center_fails() {
        let tp = box_tp(&[0.0], &[2.0]);
        let z = AugmentedPoint {
            x: DVector::from_element(1, 1.0),
            y: DVector::from_element(1, 2.0),
        };
        // Step straight to the center (1, 1).
        let dz = DVector::from_vec(vec![0.0, -1.0]);
        let err = h_retract(&tp, &z, &dz).unwrap_err();
        assert!(matches!(err, Error::CoordinateRetractFailed { .. }));
    }

    #[test]
    fn h_retract_parabola_stays_on_manifold() {
        let inf = f64::INFINITY;
        let tp = box_tp(&[0.0], &[inf]);
        // Base point x = 4 -> y = 2 on h = x - y^2.
        let z = AugmentedPoint {
            x: DVector::from_element(1, 4.0),
            y: DVector::from_element(1, 2.0),
        };
        // Tangent at (4, 2): h gradient is (1, -2y) = (1, -4); a tangent
        // direction is (4, 1)/sqrt(17).
        let norm = 17.0f64.sqrt();
        for scale in [0.1, 0.5, 1.0, -0.5] {
            let dz = DVector::from_vec(vec![scale * 4.0 / norm, scale * 1.0 / norm]);
            let out = h_retract(&tp, &z, &dz).unwrap();
            let h = tp.eval_h(&out);
            assert!(h.amax() <= 1e-12, "h = {}", h.amax());
        }
    }

    #[test]
    fn qn_and_projection_agree_to_second_order_on_sphere() {
        // Both are second-order retractions of the same manifold, so they
        // agree to O(|dx|^2) for small steps.
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let jac = sphere_jac(&x).unwrap();
        let fact = factor_equality(&jac, DEFAULT_EPS_RANK).unwrap();
        let v = DVector::from_vec(vec![0.0, 0.8, 0.6]);
        let cfg = tight_cfg();
        for t in [0.1, 0.03, 0.01] {
            let dx = &v * t;
            let qn = qn_retract_equality(&x, &dx, sphere_c, &fact, &cfg).unwrap();
            let proj = projection_retract(&x, &dx, sphere_c, sphere_jac, &cfg).unwrap();
            let diff = (qn.point - proj.point).norm();
            assert!(diff <= t * t, "t = {t}: retraction gap {diff}");
        }
    }

    #[test]
    fn composite_mixed_matches_equality_embedding() {
        // Sphere with artificial free bounds: the composite retraction on
        // the augmented manifold must agree with the equality retraction.
        let spec = ProblemSpec::new(3, |x| x[0])
            .with_equalities(1, |x| DVector::from_element(1, x.dot(x) - 1.0))
            .with_jacobian_c(|x| DMatrix::from_fn(1, 3, |_, j| 2.0 * x[j]));
        let tp = transform(spec).unwrap();
        assert!(tp.is_equality_only());

        let x0 = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let z = init_augmented(&tp, &x0, 1e-9).unwrap();
        let zp = z.to_packed();
        let oracle = crate::deriv::DerivativeOracle::new(tp.spec());
        let jac_aug = oracle.jacobian_aug(&tp, &z.x).unwrap();
        let mixed = factor_mixed(&tp, &z, &jac_aug, DEFAULT_EPS_RANK).unwrap();
        let eq_fact =
            factor_equality(&oracle.jacobian(&x0).unwrap(), DEFAULT_EPS_RANK).unwrap();

        // Equality tangent v; its embedding is (v, v).
        let v = eq_fact.project_tangent(&DVector::from_vec(vec![0.05, -0.1, 0.02]));
        let mut dz = DVector::zeros(6);
        dz.rows_mut(0, 3).copy_from(&v);
        dz.rows_mut(3, 3).copy_from(&v);

        let cfg = tight_cfg();
        let res_mixed = qn_retract_mixed(
            &zp,
            &dz,
            &tp,
            |x| Ok(tp.eval_cprime(x)),
            &mixed,
            &cfg,
        )
        .unwrap();
        let res_eq = qn_retract_equality(&x0, &v, sphere_c, &eq_fact, &cfg).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(res_mixed.point[i], res_eq.point[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn composite_mixed_zero_step_identity() {
        let spec = ProblemSpec::new(2, |x| x[0])
            .with_equalities(1, |x| DVector::from_element(1, x.dot(x) - 1.0))
            .with_bounds(
                DVector::from_vec(vec![0.0, -f64::INFINITY]),
                DVector::from_vec(vec![f64::INFINITY, f64::INFINITY]),
            );
        let tp = transform(spec).unwrap();
        let z = init_augmented(&tp, &DVector::from_vec(vec![0.6, 0.8]), 1e-9).unwrap();
        let zp = z.to_packed();
        let oracle = crate::deriv::DerivativeOracle::new(tp.spec());
        let jac_aug = oracle.jacobian_aug(&tp, &z.x).unwrap();
        let fact = factor_mixed(&tp, &z, &jac_aug, DEFAULT_EPS_RANK).unwrap();
        let res = qn_retract_mixed(
            &zp,
            &DVector::zeros(4),
            &tp,
            |x| Ok(tp.eval_cprime(x)),
            &fact,
            &tight_cfg(),
        )
        .unwrap();
        assert_eq!(res.inner_iters, 0);
        assert_eq!(res.point, zp);
    }

    #[test]
    fn mixed_projection_zero_step_feasible() {
        let spec = ProblemSpec::new(2, |x| x[0]).with_bounds(
            DVector::from_vec(vec![0.0, -1.0]),
            DVector::from_vec(vec![f64::INFINITY, 1.0]),
        );
        let tp = transform(spec).unwrap();
        let z = init_augmented(&tp, &DVector::from_vec(vec![0.5, 0.3]), 1e-9).unwrap();
        let zp = z.to_packed();
        let oracle = crate::deriv::DerivativeOracle::new(tp.spec());
        let res = projection_retract_mixed(
            &zp,
            &DVector::zeros(4),
            &tp,
            |x| Ok(tp.eval_cprime(x)),
            |x| oracle.jacobian_aug(&tp, x),
            &RetractionConfig::default(),
        )
        .unwrap();
        assert_eq!(res.inner_iters, 0);
    }

    #[test]
    fn mixed_projection_matches_2d_geometry() {
        // Single lower-bounded scalar, no c: the augmented manifold is the
        // parabola x = y^2. Project a tangent proposal and compare with a
        // dense 2-D nearest-point search.
        let spec = ProblemSpec::new(1, |x| x[0]).with_bounds(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, f64::INFINITY),
        );
        let tp = transform(spec).unwrap();
        let z = init_augmented(&tp, &DVector::from_element(1, 1.0), 1e-9).unwrap();
        let zp = z.to_packed(); // (1, 1) on x = y^2
        // Tangent at (1, 1): gradient of h = x - y^2 is (1, -2): tangent (2, 1)/sqrt(5).
        let dz = DVector::from_vec(vec![2.0, 1.0]) * (0.3 / 5.0f64.sqrt());
        let cfg = RetractionConfig {
            eps_c: 1e-10,
            ..Default::default()
        };
        let res = projection_retract_mixed(
            &zp,
            &dz,
            &tp,
            |x| Ok(tp.eval_cprime(x)),
            |_| Ok(DMatrix::zeros(0, 1)),
            &cfg,
        )
        .unwrap();
        // Dense oracle: minimize ||(y^2, y) - target|| over y.
        let target = &zp + &dz;
        let mut best_y = 0.0;
        let mut best = f64::INFINITY;
        let mut yy = 0.5;
        while yy <= 1.5 {
            let d = (yy * yy - target[0]).powi(2) + (yy - target[1]).powi(2);
            if d < best {
                best = d;
                best_y = yy;
            }
            yy += 1e-6;
        }
        assert_abs_diff_eq!(res.point[1], best_y, epsilon = 1e-5);
        assert_abs_diff_eq!(res.point[0], best_y * best_y, epsilon = 1e-5);
        // h holds to machine precision after the snap.
        assert!(tp.eval_h_packed(&res.point).amax() <= 1e-12);
    }
}
