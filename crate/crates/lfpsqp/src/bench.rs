//! Benchmark problems and the independent desk-scale oracles used to
//! check them.
//!
//! Random instances draw from `ChaCha8Rng::seed_from_u64(seed)` with a
//! fixed stream order (matrix pattern and values first, starting point
//! last), so every builder reproduces bit-identically across platforms.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::problem::ProblemSpec;

/// Parameters accepted by every registry builder; problems ignore the
/// fields they do not use.
#[derive(Debug, Clone, Copy)]
pub struct BenchParams {
    pub n: usize,
    pub seed: u64,
    pub density: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 0,
            density: 0.02,
        }
    }
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn rayleigh_spec_from_matrix(a: DMatrix<f64>) -> ProblemSpec {
    let n = a.nrows();
    let a_f = a.clone();
    let a_g = a.clone();
    let a_w = a;
    ProblemSpec::new(n, move |x| 0.5 * x.dot(&(&a_f * x)))
        .with_gradient(move |x| &a_g * x)
        .with_equalities(1, |x| DVector::from_element(1, x.dot(x) - 1.0))
        .with_jacobian_c(|x| DMatrix::from_fn(1, x.len(), |_, j| 2.0 * x[j]))
        .with_hessian_action(move |_x, lam, v| &a_w * v + v * (2.0 * lam[0]))
}

/// Rayleigh quotient on the sphere with `A = diag(n, n-1, ..., 1)`;
/// minimum objective is `1/2` at the last coordinate axis.
pub fn rayleigh_diag(n: usize, seed: u64) -> (ProblemSpec, DVector<f64>) {
    assert!(n >= 2);
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { (n - i) as f64 } else { 0.0 });
    let spec = rayleigh_spec_from_matrix(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = normal_vector(&mut rng, n);
    x0 /= x0.norm();
    (spec, x0)
}

/// The random symmetric matrix `A = B + B^T` where `B` has i.i.d. standard
/// normal entries present with probability `density / 2` (row-major
/// Bernoulli draws, one normal per hit). Exposed so tests can hand the
/// same matrix to an independent eigensolver.
pub fn rayleigh_sparse_matrix(n: usize, density: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if rng.random::<f64>() < density / 2.0 {
                b[(i, j)] = rng.sample(StandardNormal);
            }
        }
    }
    &b + b.transpose()
}

fn rayleigh_sparse_x0(n: usize, density: f64, seed: u64, positive: bool) -> DVector<f64> {
    // Reproduce the builder's stream: skip past the matrix draws.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n * n {
        if rng.random::<f64>() < density / 2.0 {
            let _: f64 = rng.sample(StandardNormal);
        }
    }
    let mut x0 = normal_vector(&mut rng, n);
    if positive {
        x0.apply(|v| *v = v.abs());
    }
    x0 /= x0.norm();
    x0
}

/// Rayleigh quotient on the sphere with a random sparse symmetric matrix.
pub fn rayleigh_sparse(n: usize, density: f64, seed: u64) -> (ProblemSpec, DVector<f64>) {
    assert!(n >= 2);
    let a = rayleigh_sparse_matrix(n, density, seed);
    (
        rayleigh_spec_from_matrix(a),
        rayleigh_sparse_x0(n, density, seed, false),
    )
}

/// Rayleigh quotient restricted to the part of the sphere in the positive
/// orthant: adds `x >= 0` and starts from a positive random unit vector.
pub fn rayleigh_positive(n: usize, density: f64, seed: u64) -> (ProblemSpec, DVector<f64>) {
    assert!(n >= 2);
    let a = rayleigh_sparse_matrix(n, density, seed);
    let spec = rayleigh_spec_from_matrix(a).with_bounds(
        DVector::zeros(n),
        DVector::from_element(n, f64::INFINITY),
    );
    (spec, rayleigh_sparse_x0(n, density, seed, true))
}

/// Coefficients of the linear objective for [`sphere_linear`].
pub fn sphere_linear_coeffs(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_vector(&mut rng, n)
}

/// Linear objective over the solid unit ball, `min c.x` s.t. `x.x <= 1`;
/// the solution is `-c / |c|`. Starts at the strictly interior origin.
pub fn sphere_linear(n: usize, seed: u64) -> (ProblemSpec, DVector<f64>) {
    assert!(n >= 2);
    let c = sphere_linear_coeffs(n, seed);
    let c_f = c.clone();
    let c_g = c;
    let spec = ProblemSpec::new(n, move |x| c_f.dot(x))
        .with_gradient(move |_| c_g.clone())
        .with_inequalities(
            1,
            |x| DVector::from_element(1, x.dot(x)),
            DVector::from_element(1, -f64::INFINITY),
            DVector::from_element(1, 1.0),
        )
        .with_jacobian_d(|x| DMatrix::from_fn(1, x.len(), |_, j| 2.0 * x[j]))
        .with_hessian_action(|_x, lam, v| v * (2.0 * lam[0]));
    (spec, DVector::zeros(n))
}

fn quartic_g(x1: f64) -> f64 {
    (x1 + 1.0) * (x1 - 1.0) * x1 * x1
}

fn quartic_g_prime(x1: f64) -> f64 {
    4.0 * x1.powi(3) - 2.0 * x1
}

/// Figure-eight feasible region that pinches at the origin:
/// `min -x1 - x2/2` with `x2 <= -(x1+1)(x1-1)x1^2` and
/// `x2 >= (x1+1)(x1-1)x1^2`. The active Jacobian has rank one at the
/// pinch. Starts in the left lobe.
pub fn degenerate_quartic() -> (ProblemSpec, DVector<f64>) {
    let spec = ProblemSpec::new(2, |x| -x[0] - 0.5 * x[1])
        .with_gradient(|_| DVector::from_vec(vec![-1.0, -0.5]))
        .with_inequalities(
            2,
            |x| {
                let g = quartic_g(x[0]);
                DVector::from_vec(vec![x[1] + g, x[1] - g])
            },
            DVector::from_vec(vec![-f64::INFINITY, 0.0]),
            DVector::from_vec(vec![0.0, f64::INFINITY]),
        )
        .with_jacobian_d(|x| {
            let gp = quartic_g_prime(x[0]);
            DMatrix::from_row_slice(2, 2, &[gp, 1.0, -gp, 1.0])
        })
        .with_hessian_action(|x, lam, v| {
            let gpp = 12.0 * x[0] * x[0] - 2.0;
            DVector::from_vec(vec![(lam[0] - lam[1]) * gpp * v[0], 0.0])
        });
    (spec, DVector::from_vec(vec![-0.9, 0.0]))
}

/// Degenerate trigonometric variant: `min -x1 - x2/2` with
/// `cos^2(x1) + x2^2 <= 1` and `-2 <= x1 <= 2`. The active Jacobian has
/// rank zero at the origin pinch.
pub fn degenerate_cos() -> (ProblemSpec, DVector<f64>) {
    let inf = f64::INFINITY;
    let spec = ProblemSpec::new(2, |x| -x[0] - 0.5 * x[1])
        .with_gradient(|_| DVector::from_vec(vec![-1.0, -0.5]))
        .with_bounds(
            DVector::from_vec(vec![-2.0, -inf]),
            DVector::from_vec(vec![2.0, inf]),
        )
        .with_inequalities(
            1,
            |x| DVector::from_element(1, x[0].cos().powi(2) + x[1] * x[1]),
            DVector::from_element(1, -inf),
            DVector::from_element(1, 1.0),
        )
        .with_jacobian_d(|x| {
            DMatrix::from_row_slice(1, 2, &[-(2.0 * x[0]).sin(), 2.0 * x[1]])
        })
        .with_hessian_action(|x, lam, v| {
            DVector::from_vec(vec![
                lam[0] * (-2.0 * (2.0 * x[0]).cos()) * v[0],
                lam[0] * 2.0 * v[1],
            ])
        });
    (spec, DVector::from_vec(vec![-1.5, 0.0]))
}

// ---- independent oracles -----------------------------------------------

/// Smallest eigenvalue via a dense symmetric eigendecomposition;
/// independent of the solver's SVD machinery.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    eig.eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// 2-D grid search with local refinement: minimize `f` over feasible grid
/// points, shrinking the window tenfold around the incumbent each stage
/// (clipped to the original box). Resolution `pts` per axis. The gentle
/// shrink keeps corner optima inside the window even when grid ties pull
/// the incumbent a few cells away.
pub fn grid_search_2d(
    f: impl Fn(f64, f64) -> f64,
    feasible: impl Fn(f64, f64) -> bool,
    lo: (f64, f64),
    hi: (f64, f64),
    pts: usize,
    refinements: usize,
) -> DVector<f64> {
    let box_lo = lo;
    let box_hi = hi;
    let (mut lo, mut hi) = (lo, hi);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for stage in 0..=refinements {
        let dx = (hi.0 - lo.0) / (pts - 1) as f64;
        let dy = (hi.1 - lo.1) / (pts - 1) as f64;
        for i in 0..pts {
            let x = lo.0 + i as f64 * dx;
            for j in 0..pts {
                let y = lo.1 + j as f64 * dy;
                if feasible(x, y) {
                    let v = f(x, y);
                    if v < best.0 {
                        best = (v, x, y);
                    }
                }
            }
        }
        if stage < refinements {
            let (wx, wy) = ((hi.0 - lo.0) / 20.0, (hi.1 - lo.1) / 20.0);
            lo = (
                (best.1 - wx).max(box_lo.0),
                (best.2 - wy).max(box_lo.1),
            );
            hi = (
                (best.1 + wx).min(box_hi.0),
                (best.2 + wy).min(box_hi.1),
            );
        }
    }
    DVector::from_vec(vec![best.1, best.2])
}

/// Grid-search optimum of the quartic degenerate problem.
pub fn degenerate_quartic_optimum() -> DVector<f64> {
    grid_search_2d(
        |x1, x2| -x1 - 0.5 * x2,
        |x1, x2| {
            let g = quartic_g(x1);
            x2 + g <= 1e-12 && x2 - g >= -1e-12
        },
        (-1.5, -1.5),
        (1.5, 1.5),
        2001,
        5,
    )
}

/// Grid-search optimum of the cosine degenerate problem.
pub fn degenerate_cos_optimum() -> DVector<f64> {
    grid_search_2d(
        |x1, x2| -x1 - 0.5 * x2,
        |x1, x2| {
            (-2.0..=2.0).contains(&x1) && x1.cos().powi(2) + x2 * x2 <= 1.0 + 1e-12
        },
        (-2.0, -1.1),
        (2.0, 1.1),
        2001,
        5,
    )
}

// ---- registry ------------------------------------------------------------

/// How a registered problem's solution is known.
pub enum KnownSolution {
    None,
    /// Closed-form or oracle value of the minimum objective.
    MinObjective(fn(&BenchParams) -> f64),
    /// Oracle minimizer in original coordinates.
    Point(fn(&BenchParams) -> DVector<f64>),
}

pub struct BenchProblem {
    pub name: &'static str,
    pub builder: fn(&BenchParams) -> (ProblemSpec, DVector<f64>),
    pub known_solution: KnownSolution,
}

/// All registered benchmark problems.
pub fn registry() -> Vec<BenchProblem> {
    vec![
        BenchProblem {
            name: "rayleigh-diag",
            builder: |p| rayleigh_diag(p.n, p.seed),
            known_solution: KnownSolution::MinObjective(|_| 0.5),
        },
        BenchProblem {
            name: "rayleigh-sparse",
            builder: |p| rayleigh_sparse(p.n, p.density, p.seed),
            known_solution: KnownSolution::MinObjective(|p| {
                0.5 * min_eigenvalue(&rayleigh_sparse_matrix(p.n, p.density, p.seed))
            }),
        },
        BenchProblem {
            name: "rayleigh-positive",
            builder: |p| rayleigh_positive(p.n, p.density, p.seed),
            known_solution: KnownSolution::None,
        },
        BenchProblem {
            name: "sphere-linear",
            builder: |p| sphere_linear(p.n, p.seed),
            known_solution: KnownSolution::Point(|p| {
                let c = sphere_linear_coeffs(p.n, p.seed);
                let norm = c.norm();
                -c / norm
            }),
        },
        BenchProblem {
            name: "degenerate-quartic",
            builder: |_| degenerate_quartic(),
            known_solution: KnownSolution::Point(|_| degenerate_quartic_optimum()),
        },
        BenchProblem {
            name: "degenerate-cos",
            builder: |_| degenerate_cos(),
            known_solution: KnownSolution::Point(|_| degenerate_cos_optimum()),
        },
    ]
}

/// Look up a registered problem by name.
pub fn lookup(name: &str) -> Option<BenchProblem> {
    registry().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::TangentProjector;
    use crate::problem::{init_augmented, transform};
    use approx::assert_abs_diff_eq;

    #[test]
    fn diag_minimum_is_half() {
        let (spec, x0) = rayleigh_diag(100, 0);
        assert_eq!(spec.n(), 100);
        assert_abs_diff_eq!(x0.norm(), 1.0, epsilon = 1e-12);
        // Stationarity at e_n: projected gradient vanishes there.
        let oracle = crate::deriv::DerivativeOracle::new(&spec);
        let mut e_n = DVector::zeros(100);
        e_n[99] = 1.0;
        let grad = oracle.gradient(&e_n).unwrap();
        let jac = oracle.jacobian(&e_n).unwrap();
        let fact = crate::factor::factor_equality(&jac, 1e-8).unwrap();
        assert!(fact.project_tangent(&grad).norm() <= 1e-12);
    }

    #[test]
    fn sparse_matrix_is_symmetric_and_reproducible() {
        let a = rayleigh_sparse_matrix(50, 0.1, 42);
        let b = rayleigh_sparse_matrix(50, 0.1, 42);
        assert_eq!(a, b);
        assert!((&a - a.transpose()).amax() == 0.0);
        let nnz = a.iter().filter(|&&v| v != 0.0).count();
        // density ~ 0.1 of 2500 entries, twice (symmetrized)
        assert!(nnz > 50 && nnz < 800, "nnz = {nnz}");
    }

    #[test]
    fn sparse_objective_matches_eigensolver_at_eigvec() {
        // 2 f(v_min) = lambda_min for the unit eigenvector.
        let a = rayleigh_sparse_matrix(20, 0.3, 7);
        let eig = nalgebra::SymmetricEigen::new(a.clone());
        let (mut idx, mut best) = (0, f64::INFINITY);
        for (i, &v) in eig.eigenvalues.iter().enumerate() {
            if v < best {
                best = v;
                idx = i;
            }
        }
        let v = eig.eigenvectors.column(idx).into_owned();
        let (spec, _) = rayleigh_sparse(20, 0.3, 7);
        let f_v = spec_f(&spec, &v);
        assert_abs_diff_eq!(2.0 * f_v, best, epsilon = 1e-10);
    }

    fn spec_f(spec: &crate::problem::ProblemSpec, x: &DVector<f64>) -> f64 {
        crate::deriv::DerivativeOracle::new(spec).eval_f(x)
    }

    #[test]
    fn positive_variant_starts_in_orthant() {
        let (_, x0) = rayleigh_positive(30, 0.2, 3);
        assert!(x0.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(x0.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_linear_small_case() {
        // n = 2 with c = (1, 0) has solution (-1, 0).
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let x_star = -&c / c.norm();
        assert_eq!(x_star, DVector::from_vec(vec![-1.0, 0.0]));
        // Interior start: the inequality slack is strictly inside.
        let (spec, x0) = sphere_linear(10, 1);
        assert_eq!(x0, DVector::zeros(10));
        let d0 = spec_d(&spec, &x0);
        assert!(d0[0] < 1.0);
    }

    fn spec_d(spec: &crate::problem::ProblemSpec, x: &DVector<f64>) -> DVector<f64> {
        let oracle = crate::deriv::DerivativeOracle::new(spec);
        let full = oracle.eval_cd(x);
        full.rows(spec.m(), spec.p()).into_owned()
    }

    #[test]
    fn quartic_grid_optimum_is_right_lobe_tip() {
        // Analytically the maximizer of x1 + x2/2 on the region is (1, 0).
        let opt = degenerate_quartic_optimum();
        assert_abs_diff_eq!(opt[0], 1.0, epsilon = 2e-3);
        assert_abs_diff_eq!(opt[1], 0.0, epsilon = 2e-3);
    }

    #[test]
    fn cos_grid_optimum_hits_box_bound() {
        // phi' = 1 + cos(x1)/2 > 0, so x1 rides to its bound at 2 with
        // x2 = sin(2) on the constraint boundary.
        let opt = degenerate_cos_optimum();
        assert_abs_diff_eq!(opt[0], 2.0, epsilon = 2e-3);
        assert_abs_diff_eq!(opt[1], (2.0f64).sin(), epsilon = 2e-3);
    }

    #[test]
    fn every_registered_start_initializes() {
        let params = BenchParams {
            n: 20,
            seed: 5,
            density: 0.2,
        };
        for prob in registry() {
            let (spec, x0) = (prob.builder)(&params);
            let tp = transform(spec).unwrap();
            init_augmented(&tp, &x0, 1e-6)
                .unwrap_or_else(|e| panic!("{} failed to initialize: {e}", prob.name));
        }
    }

    #[test]
    fn lookup_finds_registered_names() {
        assert!(lookup("rayleigh-diag").is_some());
        assert!(lookup("no-such-problem").is_none());
    }
}
