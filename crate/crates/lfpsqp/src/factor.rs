//! Per-iteration factorization of the constraint Jacobian.
//!
//! The equality case takes a thin SVD of `J^T`; the first `r` left singular
//! vectors (those whose singular values exceed the rank tolerance) span the
//! normal space, which makes tangent projection, multiplier recovery, and
//! degeneracy detection all fall out of one `O(n m^2)` decomposition.
//!
//! The mixed case never factors the full `(n' + m') x 2n'` Jacobian of
//! `(h, c')`. The `h` rows have one nonzero per column pair, so normalizing
//! them gives an orthonormal diagonal block `[D_x; D_y]` for free, and only
//! the projected `c'` Jacobian `(I - D D^T) [J^T; 0]` needs an SVD. The
//! result is a block factorization with the same asymptotic cost in `n` and
//! `m'` as the equality case, independent of how many bounds are imposed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{AugmentedPoint, TransformedProblem};

/// Default relative rank-tolerance coefficient: singular values at or below
/// `eps_rank * max(1, sigma_1)` are treated as zero.
pub const DEFAULT_EPS_RANK: f64 = 1e-8;

/// Orthogonal projection onto the tangent space of the current iterate.
pub trait TangentProjector {
    fn project_tangent(&self, g: &DVector<f64>) -> DVector<f64>;
    /// Ambient dimension of projected vectors.
    fn ambient_dim(&self) -> usize;
    /// Number of independent normal directions (tangent dim = ambient - this).
    fn normal_dim(&self) -> usize;
}

/// Thin SVD of a tall matrix (`nrows >= ncols`) by one-sided Jacobi
/// (Hestenes) iteration: rotate column pairs until mutually orthogonal,
/// then read off `sigma` as column norms. Returns `(U, sigma, V)` with
/// `A = U diag(sigma) V^T` and `sigma` nonincreasing; columns of `U`
/// belonging to zero singular values are zero.
///
/// Jacobi is used instead of a bidiagonalization/QR-sweep SVD because it
/// stays accurate on exactly rank-deficient inputs (duplicated constraint
/// rows are a supported use case) and the column count here is the small
/// constraint count.
fn thin_svd_sorted(mat: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (n, m) = (mat.nrows(), mat.ncols());
    assert!(n >= m, "thin SVD expects a tall matrix");
    let mut b = mat.clone();
    let mut v = DMatrix::identity(m, m);

    const MAX_SWEEPS: usize = 30;
    const ORTHO_TOL: f64 = 1e-15;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let bp = b.column(p);
                let bq = b.column(q);
                let app = bp.norm_squared();
                let aqq = bq.norm_squared();
                let apq = bp.dot(&bq);
                if app * aqq == 0.0 || apq.abs() <= ORTHO_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let bip = b[(i, p)];
                    let biq = b[(i, q)];
                    b[(i, p)] = c * bip - s * biq;
                    b[(i, q)] = s * bip + c * biq;
                }
                for i in 0..m {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::LinAlgFailure("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<usize> = (0..m).collect();
    let norms: Vec<f64> = (0..m).map(|j| b.column(j).norm()).collect();
    order.sort_by(|&a, &c| norms[c].partial_cmp(&norms[a]).unwrap());

    let mut u = DMatrix::zeros(n, m);
    let mut v_sorted = DMatrix::zeros(m, m);
    let mut sigma = DVector::zeros(m);
    for (i, &j) in order.iter().enumerate() {
        sigma[i] = norms[j];
        v_sorted.set_column(i, &v.column(j));
        if norms[j] > 0.0 {
            u.set_column(i, &(b.column(j) / norms[j]));
        }
    }
    Ok((u, sigma, v_sorted))
}

fn numerical_rank(sigma: &DVector<f64>, eps_rank: f64) -> (usize, f64) {
    let sigma1 = if sigma.is_empty() { 0.0 } else { sigma[0] };
    let threshold = eps_rank * sigma1.max(1.0);
    let rank = sigma.iter().take_while(|&&s| s > threshold).count();
    (rank, threshold)
}

/// Orthonormal normal-space basis at an iterate of an equality-constrained
/// problem: `U Sigma V^T = J^T` with numerical rank `r`.
pub struct EqualityFactorization {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
    rank: usize,
    threshold: f64,
}

/// Factor the `m x n` Jacobian (`m <= n`) by a thin SVD of its transpose.
pub fn factor_equality(jac: &DMatrix<f64>, eps_rank: f64) -> Result<EqualityFactorization> {
    let (m, n) = (jac.nrows(), jac.ncols());
    assert!(m <= n, "expected m <= n (got {m} x {n})");
    if m == 0 {
        return Ok(EqualityFactorization {
            u: DMatrix::zeros(n, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(0, 0),
            rank: 0,
            threshold: eps_rank,
        });
    }
    let (u, sigma, v) = thin_svd_sorted(&jac.transpose())?;
    let (rank, threshold) = numerical_rank(&sigma, eps_rank);
    Ok(EqualityFactorization {
        u,
        sigma,
        v,
        rank,
        threshold,
    })
}

impl EqualityFactorization {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.sigma.len()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn rank_threshold(&self) -> f64 {
        self.threshold
    }

    /// First `r` columns of `U` (the retained normal-space basis).
    pub fn u_r(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.u.columns(0, self.rank)
    }

    /// Full `U` (all `m` columns), used by the quasi-Newton retraction.
    pub fn u_full(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `Sigma^{-1} V^T`, the initial inverse-Jacobian seed for Broyden
    /// iteration. Requires full rank.
    pub fn broyden_seed(&self) -> DMatrix<f64> {
        assert!(self.is_full_rank());
        let m = self.m();
        let mut b = self.v.transpose();
        for i in 0..m {
            let inv = 1.0 / self.sigma[i];
            for j in 0..m {
                b[(i, j)] *= inv;
            }
        }
        b
    }

    /// Least-squares multipliers `lambda = -V_r Sigma_r^{-1} U_r^T g`,
    /// the minimal-norm solution of `J^T lambda ~ -g` on the retained
    /// singular subspace.
    pub fn multipliers(&self, grad_f: &DVector<f64>) -> DVector<f64> {
        let m = self.m();
        let mut lambda = DVector::zeros(m);
        if self.rank == 0 {
            return lambda;
        }
        let coeffs = self.u_r().transpose() * grad_f;
        for j in 0..self.rank {
            let scale = -coeffs[j] / self.sigma[j];
            lambda.axpy(scale, &self.v.column(j).into_owned(), 1.0);
        }
        lambda
    }
}

impl TangentProjector for EqualityFactorization {
    fn project_tangent(&self, g: &DVector<f64>) -> DVector<f64> {
        if self.rank == 0 {
            return g.clone();
        }
        let u_r = self.u_r();
        let coeffs = u_r.transpose() * g;
        g - u_r * coeffs
    }

    fn ambient_dim(&self) -> usize {
        self.u.nrows()
    }

    fn normal_dim(&self) -> usize {
        self.rank
    }
}

/// Block factorization of the full Jacobian of `(h, c')` at an augmented
/// iterate: diagonal blocks `D_x, D_y` (normalized `h` gradients) with
/// norms `S`, an SVD `U Sigma V^T` of the projected `c'` Jacobian, and the
/// coupling matrix `R = D_x J^T`.
pub struct MixedFactorization {
    d_x: DVector<f64>,
    d_y: DVector<f64>,
    s: DVector<f64>,
    u_x: DMatrix<f64>,
    u_y: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
    r_mat: DMatrix<f64>,
    rank: usize,
    threshold: f64,
}

/// Factor the augmented constraint Jacobian at `z`. `jac_cprime` is the
/// `m' x n'` Jacobian of `c'` at the `x` block of `z`.
pub fn factor_mixed(
    tp: &TransformedProblem,
    z: &AugmentedPoint,
    jac_cprime: &DMatrix<f64>,
    eps_rank: f64,
) -> Result<MixedFactorization> {
    let np = tp.n_prime();
    let mp = tp.m_prime();
    assert_eq!(jac_cprime.nrows(), mp);
    assert_eq!(jac_cprime.ncols(), np);

    let zp = z.to_packed();
    let (hx, hy) = tp.h_partials(&zp);
    let mut s = DVector::zeros(np);
    let mut d_x = DVector::zeros(np);
    let mut d_y = DVector::zeros(np);
    for k in 0..np {
        let norm = hx[k].hypot(hy[k]);
        // Positive by construction: bounds narrower than the rank tolerance
        // are rejected at transform time.
        debug_assert!(norm > 0.0, "degenerate h row {k}");
        s[k] = norm;
        d_x[k] = hx[k] / norm;
        d_y[k] = hy[k] / norm;
    }

    // Projected c' Jacobian: (I - D D^T) [J^T; 0] stacked as two n' x m'
    // blocks. With diagonal D this is (I - D_x^2) J^T and -D_y D_x J^T.
    let jt = jac_cprime.transpose();
    let mut projected = DMatrix::zeros(2 * np, mp);
    for k in 0..np {
        let wx = 1.0 - d_x[k] * d_x[k];
        let wy = -d_y[k] * d_x[k];
        for j in 0..mp {
            projected[(k, j)] = wx * jt[(k, j)];
            projected[(np + k, j)] = wy * jt[(k, j)];
        }
    }

    let (u, sigma, v, rank, threshold) = if mp == 0 {
        (DMatrix::zeros(2 * np, 0), DVector::zeros(0), DMatrix::zeros(0, 0), 0, eps_rank)
    } else {
        let (u, sigma, v) = thin_svd_sorted(&projected)?;
        let (rank, threshold) = numerical_rank(&sigma, eps_rank);
        (u, sigma, v, rank, threshold)
    };

    let mut r_mat = DMatrix::zeros(np, mp);
    for k in 0..np {
        for j in 0..mp {
            r_mat[(k, j)] = d_x[k] * jt[(k, j)];
        }
    }

    Ok(MixedFactorization {
        d_x,
        d_y,
        s,
        u_x: u.rows(0, np).into_owned(),
        u_y: u.rows(np, np).into_owned(),
        sigma,
        v,
        r_mat,
        rank,
        threshold,
    })
}

impl MixedFactorization {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn m_prime(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_prime(&self) -> usize {
        self.d_x.len()
    }

    /// Full rank of the stacked `(h, c')` Jacobian is `n' + rank`.
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.sigma.len()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn rank_threshold(&self) -> f64 {
        self.threshold
    }

    pub fn d_x(&self) -> &DVector<f64> {
        &self.d_x
    }

    pub fn d_y(&self) -> &DVector<f64> {
        &self.d_y
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    /// `(U_x w, U_y w)` packed, using all `m'` columns.
    pub fn u_times(&self, w: &DVector<f64>) -> DVector<f64> {
        let np = self.n_prime();
        let top = &self.u_x * w;
        let bot = &self.u_y * w;
        let mut out = DVector::zeros(2 * np);
        out.rows_mut(0, np).copy_from(&top);
        out.rows_mut(np, np).copy_from(&bot);
        out
    }

    /// `Sigma^{-1} V^T` seed for Broyden iteration on the composite
    /// retraction. Requires full rank.
    pub fn broyden_seed(&self) -> DMatrix<f64> {
        assert!(self.is_full_rank());
        let mp = self.m_prime();
        let mut b = self.v.transpose();
        for i in 0..mp {
            let inv = 1.0 / self.sigma[i];
            for j in 0..mp {
                b[(i, j)] *= inv;
            }
        }
        b
    }

    /// Multipliers `(lambda_h, lambda_c')` from the block pseudoinverse of
    /// the full Jacobian applied to `-(grad f', 0)`. `grad_fx` is the `x`
    /// block of the augmented objective gradient (length `n'`).
    pub fn multipliers(&self, grad_fx: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let np = self.n_prime();
        let mp = self.m_prime();
        // lambda_c' = -V_r Sigma_r^{-1} U_{x,r}^T grad
        let mut lambda_c = DVector::zeros(mp);
        if self.rank > 0 {
            let coeffs = self.u_x.columns(0, self.rank).transpose() * grad_fx;
            for j in 0..self.rank {
                let scale = -coeffs[j] / self.sigma[j];
                lambda_c.axpy(scale, &self.v.column(j).into_owned(), 1.0);
            }
        }
        // lambda_h = -S^{-1} (D_x grad + R lambda_c')
        let mut lambda_h = DVector::zeros(np);
        let r_lc = &self.r_mat * &lambda_c;
        for k in 0..np {
            lambda_h[k] = -(self.d_x[k] * grad_fx[k] + r_lc[k]) / self.s[k];
        }
        (lambda_h, lambda_c)
    }
}

impl TangentProjector for MixedFactorization {
    fn project_tangent(&self, g: &DVector<f64>) -> DVector<f64> {
        let np = self.n_prime();
        let mut out = g.clone();
        // Subtract D (D^T g): D^T g has one entry per coordinate pair.
        for k in 0..np {
            let dk = self.d_x[k] * g[k] + self.d_y[k] * g[np + k];
            out[k] -= self.d_x[k] * dk;
            out[np + k] -= self.d_y[k] * dk;
        }
        if self.rank > 0 {
            let ux = self.u_x.columns(0, self.rank);
            let uy = self.u_y.columns(0, self.rank);
            let coeffs =
                ux.transpose() * g.rows(0, np) + uy.transpose() * g.rows(np, np);
            let top = ux * &coeffs;
            let bot = uy * &coeffs;
            for k in 0..np {
                out[k] -= top[k];
                out[np + k] -= bot[k];
            }
        }
        out
    }

    fn ambient_dim(&self) -> usize {
        2 * self.n_prime()
    }

    fn normal_dim(&self) -> usize {
        self.n_prime() + self.rank
    }
}
