//! Problem statement and its transformation to an equality-constrained form.
//!
//! A user problem minimizes `f(x)` subject to nonlinear equalities
//! `c(x) = 0`, bounded nonlinear inequalities `dl <= d(x) <= du`, and box
//! constraints `xl <= x <= xu`. [`transform`] rewrites it over `n' = n + p`
//! variables (the originals plus one slack per inequality) with equality
//! constraints `c'(x) = 0` and one auxiliary constraint `h_k(x_k, y_k) = 0`
//! per variable. Each `h_k` is a line, parabola, or circle in the
//! `(x_k, y_k)` plane chosen so that `h_k = 0` implies `l_k <= x_k <= u_k`,
//! which removes the need for per-bound multipliers.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Scalar-valued callback on `R^n`.
pub type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
/// Vector-valued callback on `R^n`.
pub type VectorFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
/// Dense-matrix-valued callback on `R^n`.
pub type MatrixFn = dyn Fn(&DVector<f64>) -> nalgebra::DMatrix<f64> + Send + Sync;
/// Lagrangian-Hessian action callback `(x, lambda, v) -> W(x, lambda) v`.
pub type HessActionFn =
    dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Narrowest admissible two-sided box; below this the transformed Jacobian
/// loses numerical rank and the problem is rejected.
pub const MIN_BOX_WIDTH: f64 = 1e-8;

/// Inward nudge applied to starting points sitting on a bound, relative to
/// the box width.
const BOUNDARY_MARGIN: f64 = 1e-9;

/// User-facing statement of a constrained minimization problem.
///
/// Build one with [`ProblemSpec::new`] and the `with_*` methods, then pass
/// it to [`crate::solve`]. Analytic derivative callbacks are optional;
/// missing ones are filled in by finite differences (see [`crate::deriv`]).
pub struct ProblemSpec {
    n: usize,
    f: Box<ScalarFn>,
    c: Option<Box<VectorFn>>,
    m: usize,
    d: Option<Box<VectorFn>>,
    p: usize,
    x_lower: DVector<f64>,
    x_upper: DVector<f64>,
    d_lower: DVector<f64>,
    d_upper: DVector<f64>,
    grad_f: Option<Box<VectorFn>>,
    jac_c: Option<Box<MatrixFn>>,
    jac_d: Option<Box<MatrixFn>>,
    hess_lag_action: Option<Box<HessActionFn>>,
}

impl ProblemSpec {
    /// Unconstrained problem skeleton over `n >= 1` variables.
    pub fn new(n: usize, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        assert!(n >= 1, "problem dimension must be at least 1");
        let inf = f64::INFINITY;
        Self {
            n,
            f: Box::new(f),
            c: None,
            m: 0,
            d: None,
            p: 0,
            x_lower: DVector::from_element(n, -inf),
            x_upper: DVector::from_element(n, inf),
            d_lower: DVector::zeros(0),
            d_upper: DVector::zeros(0),
            grad_f: None,
            jac_c: None,
            jac_d: None,
            hess_lag_action: None,
        }
    }

    /// Add `m` equality constraints `c(x) = 0`.
    pub fn with_equalities(
        mut self,
        m: usize,
        c: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.m = m;
        self.c = Some(Box::new(c));
        self
    }

    /// Add `p` inequality constraints `dl <= d(x) <= du`; entries of the
    /// bound vectors may be infinite.
    pub fn with_inequalities(
        mut self,
        p: usize,
        d: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        d_lower: DVector<f64>,
        d_upper: DVector<f64>,
    ) -> Self {
        assert_eq!(d_lower.len(), p);
        assert_eq!(d_upper.len(), p);
        self.p = p;
        self.d = Some(Box::new(d));
        self.d_lower = d_lower;
        self.d_upper = d_upper;
        self
    }

    /// Box constraints on the variables; entries may be infinite.
    pub fn with_bounds(mut self, x_lower: DVector<f64>, x_upper: DVector<f64>) -> Self {
        assert_eq!(x_lower.len(), self.n);
        assert_eq!(x_upper.len(), self.n);
        self.x_lower = x_lower;
        self.x_upper = x_upper;
        self
    }

    /// Analytic objective gradient.
    pub fn with_gradient(
        mut self,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_f = Some(Box::new(g));
        self
    }

    /// Analytic Jacobian of the equality constraints (`m x n`).
    pub fn with_jacobian_c(
        mut self,
        jc: impl Fn(&DVector<f64>) -> nalgebra::DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_c = Some(Box::new(jc));
        self
    }

    /// Analytic Jacobian of the inequality constraints (`p x n`).
    pub fn with_jacobian_d(
        mut self,
        jd: impl Fn(&DVector<f64>) -> nalgebra::DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_d = Some(Box::new(jd));
        self
    }

    /// Analytic action of the Lagrangian Hessian. The multiplier vector has
    /// length `m + p` and pairs with the stacked constraints `(c, d)`.
    pub fn with_hessian_action(
        mut self,
        w: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        self.hess_lag_action = Some(Box::new(w));
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x_lower(&self) -> &DVector<f64> {
        &self.x_lower
    }

    pub fn x_upper(&self) -> &DVector<f64> {
        &self.x_upper
    }

    pub fn d_lower(&self) -> &DVector<f64> {
        &self.d_lower
    }

    pub fn d_upper(&self) -> &DVector<f64> {
        &self.d_upper
    }

    pub(crate) fn f_raw(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }

    pub(crate) fn c_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.c {
            Some(c) => c(x),
            None => DVector::zeros(0),
        }
    }

    pub(crate) fn d_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.d {
            Some(d) => d(x),
            None => DVector::zeros(0),
        }
    }

    pub(crate) fn grad_f_cb(&self) -> Option<&VectorFn> {
        self.grad_f.as_deref()
    }

    pub(crate) fn jac_c_cb(&self) -> Option<&MatrixFn> {
        self.jac_c.as_deref()
    }

    pub(crate) fn jac_d_cb(&self) -> Option<&MatrixFn> {
        self.jac_d.as_deref()
    }

    pub(crate) fn hess_lag_cb(&self) -> Option<&HessActionFn> {
        self.hess_lag_action.as_deref()
    }

    fn validate(&self) -> Result<()> {
        if self.m > self.n {
            return Err(Error::DimensionMismatch {
                what: "equality constraint count (must not exceed n)",
                expected: self.n,
                got: self.m,
            });
        }
        let check = |lo: &DVector<f64>, hi: &DVector<f64>, offset: usize| -> Result<()> {
            for k in 0..lo.len() {
                let (l, u) = (lo[k], hi[k]);
                if l > u {
                    return Err(Error::InfeasibleBounds {
                        index: offset + k,
                        lower: l,
                        upper: u,
                    });
                }
                if l.is_finite() && u.is_finite() && u - l <= MIN_BOX_WIDTH {
                    return Err(Error::DegenerateBox {
                        index: offset + k,
                        width: u - l,
                    });
                }
            }
            Ok(())
        };
        check(&self.x_lower, &self.x_upper, 0)?;
        check(&self.d_lower, &self.d_upper, self.n)?;
        Ok(())
    }
}

/// Geometry of a single `h_k` row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// No finite bound: `h = x - y`.
    Line,
    /// Exactly one finite bound: `x` is a parabola in `y`.
    Parabola,
    /// Two finite bounds: circle of radius `(u - l) / 2`.
    Circle,
}

/// The augmented equality-constrained problem over `(x, y)`.
pub struct TransformedProblem {
    spec: ProblemSpec,
    n_prime: usize,
    m_prime: usize,
    q: DVector<f64>,
    r: DVector<f64>,
    s: DVector<f64>,
    t: DVector<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    is_equality_only: bool,
}

/// A point on the augmented manifold: original variables plus slacks in
/// `x`, auxiliary variables in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPoint {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl AugmentedPoint {
    /// Pack as `(x_1..x_n', y_1..y_n')`.
    pub fn to_packed(&self) -> DVector<f64> {
        let np = self.x.len();
        let mut z = DVector::zeros(2 * np);
        z.rows_mut(0, np).copy_from(&self.x);
        z.rows_mut(np, np).copy_from(&self.y);
        z
    }

    pub fn from_packed(z: &DVector<f64>) -> Self {
        let np = z.len() / 2;
        Self {
            x: z.rows(0, np).into_owned(),
            y: z.rows(np, np).into_owned(),
        }
    }
}

/// Build the augmented problem: append slacks for the inequalities,
/// concatenate the bounds, and fill the per-row coefficient quadruples
/// `(q_k, r_k, s_k, t_k)` from the finiteness pattern of `(l_k, u_k)`.
pub fn transform(spec: ProblemSpec) -> Result<TransformedProblem> {
    spec.validate()?;
    let (n, m, p) = (spec.n, spec.m, spec.p);
    let n_prime = n + p;
    let m_prime = m + p;

    let mut l = DVector::zeros(n_prime);
    let mut u = DVector::zeros(n_prime);
    l.rows_mut(0, n).copy_from(&spec.x_lower);
    u.rows_mut(0, n).copy_from(&spec.x_upper);
    if p > 0 {
        l.rows_mut(n, p).copy_from(&spec.d_lower);
        u.rows_mut(n, p).copy_from(&spec.d_upper);
    }

    let mut q = DVector::zeros(n_prime);
    let mut r = DVector::zeros(n_prime);
    let mut s = DVector::zeros(n_prime);
    let mut t = DVector::zeros(n_prime);
    for k in 0..n_prime {
        match (l[k].is_finite(), u[k].is_finite()) {
            (false, false) => {} // q = r = s = t = 0
            (true, false) => {
                r[k] = l[k];
                s[k] = -1.0;
                t[k] = l[k];
            }
            (false, true) => {
                r[k] = u[k];
                s[k] = 1.0;
                t[k] = u[k];
            }
            (true, true) => {
                q[k] = 1.0;
                r[k] = 0.5 * (u[k] + l[k]);
                s[k] = 1.0;
                t[k] = 0.25 * (u[k] - l[k]).powi(2);
            }
        }
    }

    let all_free = l.iter().all(|v| !v.is_finite()) && u.iter().all(|v| !v.is_finite());
    let is_equality_only = p == 0 && all_free;

    Ok(TransformedProblem {
        spec,
        n_prime,
        m_prime,
        q,
        r,
        s,
        t,
        l,
        u,
        is_equality_only,
    })
}

impl TransformedProblem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime
    }

    pub fn m_prime(&self) -> usize {
        self.m_prime
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.l
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.u
    }

    /// True when the problem has no inequalities and no finite bounds, so
    /// the solver can skip the augmentation entirely.
    pub fn is_equality_only(&self) -> bool {
        self.is_equality_only
    }

    pub fn row_kind(&self, k: usize) -> RowKind {
        if self.q[k] == 1.0 {
            RowKind::Circle
        } else if self.s[k] != 0.0 {
            RowKind::Parabola
        } else {
            RowKind::Line
        }
    }

    /// `c'(x) = (c(x_1..n), d(x_1..n) - x_(n+1..n+p))` for an augmented
    /// `x` of length `n'`.
    pub fn eval_cprime(&self, x_aug: &DVector<f64>) -> DVector<f64> {
        let n = self.spec.n;
        let p = self.spec.p;
        let x_orig = x_aug.rows(0, n).into_owned();
        let mut out = DVector::zeros(self.m_prime);
        if self.spec.m > 0 {
            out.rows_mut(0, self.spec.m)
                .copy_from(&self.spec.c_raw(&x_orig));
        }
        if p > 0 {
            let d = self.spec.d_raw(&x_orig);
            for j in 0..p {
                out[self.spec.m + j] = d[j] - x_aug[n + j];
            }
        }
        out
    }

    /// Componentwise `h_k = q_k (x_k - r_k)^2 + (1 - q_k^2) x_k
    /// + s_k (y_k - r_k)^2 - (1 - s_k^2) y_k - t_k`.
    pub fn eval_h(&self, z: &AugmentedPoint) -> DVector<f64> {
        self.eval_h_packed(&z.to_packed())
    }

    pub(crate) fn eval_h_packed(&self, z: &DVector<f64>) -> DVector<f64> {
        let np = self.n_prime;
        DVector::from_fn(np, |k, _| {
            let (x, y) = (z[k], z[np + k]);
            let (q, r, s, t) = (self.q[k], self.r[k], self.s[k], self.t[k]);
            q * (x - r).powi(2) + (1.0 - q * q) * x + s * (y - r).powi(2) - (1.0 - s * s) * y - t
        })
    }

    /// Partial derivatives of `h_k` with respect to `x_k` and `y_k`.
    pub(crate) fn h_partials(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let np = self.n_prime;
        let hx = DVector::from_fn(np, |k, _| {
            2.0 * self.q[k] * (z[k] - self.r[k]) + (1.0 - self.q[k] * self.q[k])
        });
        let hy = DVector::from_fn(np, |k, _| {
            2.0 * self.s[k] * (z[np + k] - self.r[k]) - (1.0 - self.s[k] * self.s[k])
        });
        (hx, hy)
    }

    /// Strip slacks from an augmented `x` block.
    pub fn original_x(&self, x_aug: &DVector<f64>) -> DVector<f64> {
        x_aug.rows(0, self.spec.n).into_owned()
    }
}

/// Lift a starting point onto the `h` manifold: clamp it strictly inside
/// its box, set the slacks to `d(x0)`, and solve each `h_k = 0` for `y_k`
/// (circle rows take the upper branch).
///
/// Fails with [`Error::InfeasibleStart`] when `x0` or `d(x0)` violates its
/// bounds by more than `eps_c`. Feasibility of `c'` is the caller's
/// responsibility (the solver attempts one zero-step projection).
pub fn init_augmented(
    tp: &TransformedProblem,
    x0: &DVector<f64>,
    eps_c: f64,
) -> Result<AugmentedPoint> {
    let spec = tp.spec();
    let (n, p) = (spec.n, spec.p);
    assert_eq!(x0.len(), n, "x0 must have length n");

    let np = tp.n_prime;
    let mut x = DVector::zeros(np);
    x.rows_mut(0, n).copy_from(x0);
    if p > 0 {
        x.rows_mut(n, p).copy_from(&spec.d_raw(x0));
    }

    // Clamp each component strictly inside its box.
    for k in 0..np {
        let (l, u) = (tp.l[k], tp.u[k]);
        let width = u - l;
        let margin = BOUNDARY_MARGIN * if width.is_finite() { width.max(1.0) } else { 1.0 };
        let lo = if l.is_finite() { l + margin } else { -f64::INFINITY };
        let hi = if u.is_finite() { u - margin } else { f64::INFINITY };
        if x[k] < lo {
            if l - x[k] > eps_c {
                return Err(Error::InfeasibleStart(format!(
                    "component {k} = {} is below its lower bound {l}",
                    x[k]
                )));
            }
            x[k] = lo;
        } else if x[k] > hi {
            if x[k] - u > eps_c {
                return Err(Error::InfeasibleStart(format!(
                    "component {k} = {} is above its upper bound {u}",
                    x[k]
                )));
            }
            x[k] = hi;
        }
    }

    // Solve h_k = 0 for y_k given x_k.
    let mut y = DVector::zeros(np);
    for k in 0..np {
        y[k] = match tp.row_kind(k) {
            RowKind::Line => x[k],
            RowKind::Parabola => {
                // h = x + s (y - r)^2 - t  =>  (y - r)^2 = s (t - x)
                let rad = tp.s[k] * (tp.t[k] - x[k]);
                if rad < 0.0 {
                    return Err(Error::InfeasibleStart(format!(
                        "component {k} has no feasible auxiliary value"
                    )));
                }
                tp.r[k] + rad.sqrt()
            }
            RowKind::Circle => {
                let rad = tp.t[k] - (x[k] - tp.r[k]).powi(2);
                if rad < 0.0 {
                    return Err(Error::InfeasibleStart(format!(
                        "component {k} has no feasible auxiliary value"
                    )));
                }
                tp.r[k] + rad.sqrt()
            }
        };
    }

    let z = AugmentedPoint { x, y };
    let h_norm = tp.eval_h(&z).amax();
    if h_norm > 1e-12 {
        return Err(Error::InfeasibleStart(format!(
            "auxiliary initialization left |h| = {h_norm:.3e}"
        )));
    }
    Ok(z)
}
