//! Derivative oracle: analytic callbacks with finite-difference fallbacks.
//!
//! Step generation needs the objective gradient, the constraint Jacobian
//! (the stacked rows of `c` followed by `d`), and the action of the
//! Lagrangian Hessian `W(x, lambda) v`. Each comes from the user callback
//! when present and from central differences otherwise. The Hessian action
//! is never formed as a matrix: the fallback differences the map
//! `a -> grad f(x + a v) + J(x + a v)^T lambda` directionally, so one
//! W-action costs two gradient/Jacobian evaluations.
//!
//! Evaluation counters tick once per public operation regardless of how
//! many internal probes a fallback performs, so traces count oracle calls,
//! not scalar function evaluations.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, TransformedProblem};

/// Relative finite-difference step, chosen as cube-root of machine epsilon
/// so that truncation and rounding errors balance for central differences.
pub fn default_fd_step() -> f64 {
    f64::EPSILON.cbrt()
}

#[derive(Debug, Default)]
pub struct EvalCounts {
    f: AtomicU64,
    grad: AtomicU64,
    jac: AtomicU64,
    w_action: AtomicU64,
}

/// Snapshot of the cumulative evaluation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountsSnapshot {
    pub f: u64,
    pub grad: u64,
    pub jac: u64,
    pub w_action: u64,
}

impl EvalCounts {
    fn snapshot(&self) -> CountsSnapshot {
        CountsSnapshot {
            f: self.f.load(Ordering::Relaxed),
            grad: self.grad.load(Ordering::Relaxed),
            jac: self.jac.load(Ordering::Relaxed),
            w_action: self.w_action.load(Ordering::Relaxed),
        }
    }
}

/// Derivative source for one solve. Borrows the problem; counters are
/// per-oracle, so parallel solves on separate oracles do not interleave.
pub struct DerivativeOracle<'a> {
    spec: &'a ProblemSpec,
    fd_step: f64,
    counts: EvalCounts,
}

fn ensure_finite(v: &DVector<f64>, op: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteDerivative { op })
    }
}

impl<'a> DerivativeOracle<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        Self {
            spec,
            fd_step: default_fd_step(),
            counts: EvalCounts::default(),
        }
    }

    /// Override the relative finite-difference step.
    pub fn with_fd_step(mut self, fd_step: f64) -> Self {
        assert!(fd_step > 0.0);
        self.fd_step = fd_step;
        self
    }

    pub fn counts(&self) -> CountsSnapshot {
        self.counts.snapshot()
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    /// Objective value.
    pub fn eval_f(&self, x: &DVector<f64>) -> f64 {
        self.counts.f.fetch_add(1, Ordering::Relaxed);
        self.spec.f_raw(x)
    }

    /// Stacked constraint values `(c(x), d(x))`, uncounted.
    pub fn eval_cd(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = self.spec.c_raw(x);
        let d = self.spec.d_raw(x);
        let mut out = DVector::zeros(c.len() + d.len());
        out.rows_mut(0, c.len()).copy_from(&c);
        out.rows_mut(c.len(), d.len()).copy_from(&d);
        out
    }

    /// Objective gradient, analytic or central-difference.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.counts.grad.fetch_add(1, Ordering::Relaxed);
        self.gradient_impl(x)
    }

    fn gradient_impl(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = match self.spec.grad_f_cb() {
            Some(cb) => cb(x),
            None => {
                let h = self.fd_step * (1.0 + x.amax());
                let n = x.len();
                let mut g = DVector::zeros(n);
                let mut xp = x.clone();
                for i in 0..n {
                    xp[i] = x[i] + h;
                    let fp = self.spec.f_raw(&xp);
                    xp[i] = x[i] - h;
                    let fm = self.spec.f_raw(&xp);
                    xp[i] = x[i];
                    g[i] = (fp - fm) / (2.0 * h);
                }
                g
            }
        };
        if g.len() != x.len() {
            return Err(Error::DimensionMismatch {
                what: "gradient callback",
                expected: x.len(),
                got: g.len(),
            });
        }
        ensure_finite(&g, "gradient")?;
        Ok(g)
    }

    /// Dense `(m + p) x n` Jacobian of the stacked constraints.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.counts.jac.fetch_add(1, Ordering::Relaxed);
        self.jacobian_impl(x)
    }

    fn jacobian_impl(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (n, m, p) = (self.spec.n(), self.spec.m(), self.spec.p());
        let mut jac = DMatrix::zeros(m + p, n);

        let fill = |jac: &mut DMatrix<f64>,
                    rows: usize,
                    row0: usize,
                    analytic: Option<&crate::problem::MatrixFn>,
                    eval: &dyn Fn(&DVector<f64>) -> DVector<f64>|
         -> Result<()> {
            if rows == 0 {
                return Ok(());
            }
            match analytic {
                Some(cb) => {
                    let block = cb(x);
                    if block.nrows() != rows || block.ncols() != n {
                        return Err(Error::DimensionMismatch {
                            what: "jacobian callback",
                            expected: rows * n,
                            got: block.nrows() * block.ncols(),
                        });
                    }
                    jac.view_mut((row0, 0), (rows, n)).copy_from(&block);
                }
                None => {
                    let h = self.fd_step * (1.0 + x.amax());
                    let mut xp = x.clone();
                    for j in 0..n {
                        xp[j] = x[j] + h;
                        let vp = eval(&xp);
                        xp[j] = x[j] - h;
                        let vm = eval(&xp);
                        xp[j] = x[j];
                        for i in 0..rows {
                            jac[(row0 + i, j)] = (vp[i] - vm[i]) / (2.0 * h);
                        }
                    }
                }
            }
            Ok(())
        };

        fill(&mut jac, m, 0, self.spec.jac_c_cb(), &|x| self.spec.c_raw(x))?;
        fill(&mut jac, p, m, self.spec.jac_d_cb(), &|x| self.spec.d_raw(x))?;

        if jac.iter().all(|v| v.is_finite()) {
            Ok(jac)
        } else {
            Err(Error::NonFiniteDerivative { op: "jacobian" })
        }
    }

    /// Action `W(x, lambda) v` of the Lagrangian Hessian, where `lambda`
    /// pairs with the stacked constraints `(c, d)`.
    pub fn w_action(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.counts.w_action.fetch_add(1, Ordering::Relaxed);
        let mp = self.spec.m() + self.spec.p();
        if lambda.len() != mp {
            return Err(Error::DimensionMismatch {
                what: "multiplier vector",
                expected: mp,
                got: lambda.len(),
            });
        }
        if let Some(cb) = self.spec.hess_lag_cb() {
            let w = cb(x, lambda, v);
            ensure_finite(&w, "hessian action")?;
            return Ok(w);
        }
        if v.iter().all(|c| *c == 0.0) {
            return Ok(DVector::zeros(x.len()));
        }
        // Central difference of a |-> grad f(x + a v) + J(x + a v)^T lambda.
        let tau = self.fd_step * (1.0 + x.norm()) / (1.0 + v.norm());
        let lag_grad = |xx: &DVector<f64>| -> Result<DVector<f64>> {
            let mut g = self.gradient_impl(xx)?;
            if mp > 0 {
                let jac = self.jacobian_impl(xx)?;
                g += jac.transpose() * lambda;
            }
            Ok(g)
        };
        let gp = lag_grad(&(x + v * tau))?;
        let gm = lag_grad(&(x - v * tau))?;
        let w = (gp - gm) / (2.0 * tau);
        ensure_finite(&w, "hessian action")?;
        Ok(w)
    }

    // ---- augmented-problem wrappers -----------------------------------

    /// Objective on the augmented variables (slacks ignored).
    pub fn eval_f_aug(&self, tp: &TransformedProblem, x_aug: &DVector<f64>) -> f64 {
        self.eval_f(&tp.original_x(x_aug))
    }

    /// Gradient of `f'` on the augmented `x` block: `(grad f, 0_p)`.
    pub fn gradient_aug(
        &self,
        tp: &TransformedProblem,
        x_aug: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let g = self.gradient(&tp.original_x(x_aug))?;
        let mut out = DVector::zeros(tp.n_prime());
        out.rows_mut(0, g.len()).copy_from(&g);
        Ok(out)
    }

    /// Jacobian of `c'` on the augmented `x` block:
    /// `[[Jc, 0], [Jd, -I]]`, size `m' x n'`.
    pub fn jacobian_aug(
        &self,
        tp: &TransformedProblem,
        x_aug: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let (n, m, p) = (self.spec.n(), self.spec.m(), self.spec.p());
        let jac = self.jacobian(&tp.original_x(x_aug))?;
        let mut out = DMatrix::zeros(tp.m_prime(), tp.n_prime());
        out.view_mut((0, 0), (m + p, n)).copy_from(&jac);
        for j in 0..p {
            out[(m + j, n + j)] = -1.0;
        }
        Ok(out)
    }

    /// Action of `W'` (the augmented Lagrangian Hessian block in the `x`
    /// variables). Slacks enter the constraints linearly, so only the
    /// original block is nonzero.
    pub fn w_action_aug(
        &self,
        tp: &TransformedProblem,
        x_aug: &DVector<f64>,
        lambda_cprime: &DVector<f64>,
        v_aug: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.spec.n();
        let w = self.w_action(
            &tp.original_x(x_aug),
            lambda_cprime,
            &v_aug.rows(0, n).into_owned(),
        )?;
        let mut out = DVector::zeros(tp.n_prime());
        out.rows_mut(0, n).copy_from(&w);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSpec;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn quad_spec() -> ProblemSpec {
        // f = x' diag(2, 1) x / 2, c = x.x - 1
        ProblemSpec::new(2, |x| 0.5 * (2.0 * x[0] * x[0] + x[1] * x[1]))
            .with_equalities(1, |x| DVector::from_element(1, x.dot(x) - 1.0))
    }

    #[test]
    fn gradient_of_quadratic() {
        let spec = quad_spec();
        let oracle = DerivativeOracle::new(&spec);
        let g = oracle
            .gradient(&DVector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(g[1], 1.0, epsilon = 1e-7);
        assert_eq!(oracle.counts().grad, 1);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let spec = ProblemSpec::new(3, |_| 4.0);
        let oracle = DerivativeOracle::new(&spec);
        let g = oracle.gradient(&DVector::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn fallback_gradient_matches_analytic_product() {
        // f = x1 x2 at (3, 5) -> (5, 3)
        let spec = ProblemSpec::new(2, |x| x[0] * x[1]);
        let oracle = DerivativeOracle::new(&spec);
        let g = oracle.gradient(&DVector::from_vec(vec![3.0, 5.0])).unwrap();
        assert_abs_diff_eq!(g[0], 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn jacobian_of_sphere_at_basis_vector() {
        let spec = ProblemSpec::new(3, |x| x[0])
            .with_equalities(1, |x| DVector::from_element(1, x.dot(x) - 1.0));
        let oracle = DerivativeOracle::new(&spec);
        let jac = oracle
            .jacobian(&DVector::from_vec(vec![1.0, 0.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac[(0, 1)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac[(0, 2)], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn jacobian_of_affine_map_is_its_matrix() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let bc = b.clone();
        let spec = ProblemSpec::new(3, |x| x[0])
            .with_equalities(2, move |x| &bc * x - DVector::from_vec(vec![1.0, 2.0]));
        let oracle = DerivativeOracle::new(&spec);
        let jac = oracle
            .jacobian(&DVector::from_vec(vec![0.3, -0.7, 2.0]))
            .unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_abs_diff_eq!(jac[(i, j)], b[(i, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn fallback_jacobian_matches_analytic() {
        // c = (sin x1, x1 x2) at (0, 2) -> [[1, 0], [2, 0]]
        let spec = ProblemSpec::new(2, |x| x[0]).with_equalities(2, |x| {
            DVector::from_vec(vec![x[0].sin(), x[0] * x[1]])
        });
        let oracle = DerivativeOracle::new(&spec);
        let jac = oracle.jacobian(&DVector::from_vec(vec![0.0, 2.0])).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac[(0, 1)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac[(1, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac[(1, 1)], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn w_action_on_sphere_lagrangian() {
        // W = A + 2 lambda I with A = diag(2, 1); lambda = -1, v = e1 -> 0.
        let spec = quad_spec();
        let oracle = DerivativeOracle::new(&spec);
        let w = oracle
            .w_action(
                &DVector::from_vec(vec![0.3, 0.4]),
                &DVector::from_element(1, -1.0),
                &DVector::from_vec(vec![1.0, 0.0]),
            )
            .unwrap();
        assert_abs_diff_eq!(w[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn w_action_with_zero_multiplier_is_hessian_product() {
        let spec = quad_spec();
        let oracle = DerivativeOracle::new(&spec);
        let w = oracle
            .w_action(
                &DVector::from_vec(vec![0.1, -0.2]),
                &DVector::zeros(1),
                &DVector::from_vec(vec![1.0, 2.0]),
            )
            .unwrap();
        assert_abs_diff_eq!(w[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn w_action_of_zero_vector_is_zero() {
        let spec = quad_spec();
        let oracle = DerivativeOracle::new(&spec);
        let w = oracle
            .w_action(
                &DVector::from_vec(vec![0.1, -0.2]),
                &DVector::from_element(1, 0.7),
                &DVector::zeros(2),
            )
            .unwrap();
        assert_eq!(w, DVector::zeros(2));
    }

    #[test]
    fn implied_w_is_symmetric() {
        // Nonlinear objective and constraints with analytic derivatives.
        let spec = ProblemSpec::new(3, |x| (x[0] * x[1]).sin() + x[2].powi(3))
            .with_gradient(|x| {
                DVector::from_vec(vec![
                    x[1] * (x[0] * x[1]).cos(),
                    x[0] * (x[0] * x[1]).cos(),
                    3.0 * x[2] * x[2],
                ])
            })
            .with_equalities(1, |x| DVector::from_element(1, x[0] * x[2] - x[1]))
            .with_jacobian_c(|x| DMatrix::from_row_slice(1, 3, &[x[2], -1.0, x[0]]));
        let oracle = DerivativeOracle::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let lam = DVector::from_element(1, rng.random::<f64>() - 0.5);
            let v = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let w = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let wv = oracle.w_action(&x, &lam, &v).unwrap();
            let ww = oracle.w_action(&x, &lam, &w).unwrap();
            let asym = (v.dot(&ww) - w.dot(&wv)).abs();
            assert!(
                asym <= 1e-8 * (1.0 + v.norm() * w.norm()),
                "asymmetry {asym}"
            );
        }
    }

    #[test]
    fn central_difference_is_second_order() {
        // Halving the step shrinks the Jacobian error about fourfold.
        let analytic = |x: &DVector<f64>| {
            DMatrix::from_row_slice(1, 2, &[(x[0]).cos() * x[1], (x[0]).sin()])
        };
        let x = DVector::from_vec(vec![0.7, 1.3]);
        let mut errs = Vec::new();
        for step in [1e-3, 5e-4] {
            let spec = ProblemSpec::new(2, |x| x[0]).with_equalities(1, |x| {
                DVector::from_element(1, x[0].sin() * x[1])
            });
            let oracle = DerivativeOracle::new(&spec).with_fd_step(step);
            let jac = oracle.jacobian(&x).unwrap();
            let err = (&jac - analytic(&x)).amax();
            errs.push(err);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.0..5.5).contains(&ratio),
            "expected ~4x error reduction, got {ratio}"
        );
    }

    #[test]
    fn non_finite_gradient_detected() {
        let spec = ProblemSpec::new(1, |x| x[0].sqrt());
        let oracle = DerivativeOracle::new(&spec);
        let err = oracle.gradient(&DVector::from_element(1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteDerivative { .. }));
    }

    #[test]
    fn augmented_jacobian_has_slack_identity() {
        let spec = ProblemSpec::new(2, |x| x[0])
            .with_inequalities(
                1,
                |x| DVector::from_element(1, x[0] * x[0] + x[1]),
                DVector::from_element(1, -f64::INFINITY),
                DVector::from_element(1, 1.0),
            )
            .with_jacobian_d(|x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 1.0]));
        let tp = crate::problem::transform(spec).unwrap();
        let oracle = DerivativeOracle::new(tp.spec());
        let x_aug = DVector::from_vec(vec![0.5, 0.25, 0.5]);
        let jac = oracle.jacobian_aug(&tp, &x_aug).unwrap();
        assert_eq!(jac.nrows(), 1);
        assert_eq!(jac.ncols(), 3);
        assert_abs_diff_eq!(jac[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(jac[(0, 1)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(jac[(0, 2)], -1.0, epsilon = 1e-12);
    }
}
