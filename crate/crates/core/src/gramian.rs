//! Reachability Gramian of a bilinear system.
//!
//! The Gramian `W = sum_{i>=1} W_i` solves the generalized Lyapunov equation
//!
//! ```text
//! A W A^T - W + sum_j F_j W F_j^T + B B^T = 0
//! ```
//!
//! Two routes are provided. [`gramian_vec_solve`] solves the vectorized
//! equation `(I - A(x)A - sum_j F_j(x)F_j) vec(W) = vec(B B^T)` directly and is
//! the reference. [`gramian_series`] sums the terms `W_i`, each obtained from a
//! plain Lyapunov solve `A W_i A^T - W_i + sum_j F_j W_{i-1} F_j^T = 0`, and is
//! used as an independent check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kron, spectral_norm, spectral_radius, unvec, vec_stack, Lu, Matrix, SYMMETRY_TOL};
use crate::system::{schur_stable, BilinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianMethod {
    VecSolve,
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramianOptions {
    /// Series stops once `||W_L||_F <= tol * ||sum_{i<=L} W_i||_F`.
    pub series_tol: f64,
    pub max_order: usize,
    /// Largest relative Lyapunov residual accepted from either method.
    pub residual_tol: f64,
}

impl Default for GramianOptions {
    fn default() -> Self {
        Self {
            series_tol: 1e-12,
            max_order: 200,
            residual_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianResult {
    pub w: Matrix,
    pub method: GramianMethod,
    /// Number of series terms summed; `None` for the direct solve.
    pub truncation_order: Option<usize>,
    /// Relative residual from [`lyapunov_residual`].
    pub residual: f64,
    /// `rho(A (x) A + sum_j F_j (x) F_j)`.
    pub existence_rho: f64,
}

/// Factored operator `X -> X - A X A^T - sum_j F_j X F_j^T`, reusable across
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct LyapunovOperator {
    n: usize,
    lu: Lu,
    existence_rho: f64,
}

impl LyapunovOperator {
    /// Fails with [`Error::GramianNonexistent`] unless the Kronecker operator
    /// has spectral radius below one.
    pub fn new(a: &Matrix, f: &[Matrix]) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("A must be square".into()));
        }
        let n = a.rows();
        let mut k = kron(a, a)?;
        let active: Vec<&Matrix> = f.iter().filter(|fj| !fj.is_zero()).collect();
        for fj in &active {
            k.add_scaled(1.0, &kron(fj, fj)?);
        }
        let existence_rho = if active.is_empty() {
            spectral_radius(a)?.powi(2)
        } else {
            spectral_radius(&k)?
        };
        if existence_rho >= 1.0 {
            return Err(Error::GramianNonexistent { rho: existence_rho });
        }
        let mut op = Matrix::identity(n * n);
        op.add_scaled(-1.0, &k);
        let lu = Lu::factor(&op)?;
        Ok(Self { n, lu, existence_rho })
    }

    pub fn existence_rho(&self) -> f64 {
        self.existence_rho
    }

    /// Solves `A X A^T - X + sum_j F_j X F_j^T + Q = 0`; the result is symmetrized.
    pub fn solve(&self, q: &Matrix) -> Result<Matrix> {
        if q.shape() != (self.n, self.n) {
            return Err(Error::Shape(format!("right-hand side must be {0}x{0}", self.n)));
        }
        let x = self.lu.solve_vec(vec_stack(q).as_slice());
        Ok(unvec(&x, self.n)?.symmetrized())
    }
}

/// Relative residual `||A W A^T - W + sum_j F_j W F_j^T + B B^T|| / max(1, ||W||)`
/// in the spectral norm.
pub fn lyapunov_residual(sys: &BilinearSystem, w: &Matrix) -> f64 {
    let a = sys.a();
    let mut r = &(&(a * w) * &a.transpose()) - w;
    for fj in sys.f() {
        r.add_scaled(1.0, &(&(fj * w) * &fj.transpose()));
    }
    r.add_scaled(1.0, &(sys.b() * &sys.b().transpose()));
    spectral_norm(&r) / spectral_norm(w).max(1.0)
}

fn check_residual(residual: f64, opts: &GramianOptions) -> Result<()> {
    if residual > opts.residual_tol || !residual.is_finite() {
        return Err(Error::Residual {
            residual,
            tolerance: opts.residual_tol,
        });
    }
    Ok(())
}

/// Direct solve of the vectorized generalized Lyapunov equation.
pub fn gramian_vec_solve(sys: &BilinearSystem) -> Result<GramianResult> {
    gramian_vec_solve_with(sys, &GramianOptions::default())
}

pub fn gramian_vec_solve_with(sys: &BilinearSystem, opts: &GramianOptions) -> Result<GramianResult> {
    let op = LyapunovOperator::new(sys.a(), sys.f())?;
    let w = op.solve(&(sys.b() * &sys.b().transpose()))?;
    let residual = lyapunov_residual(sys, &w);
    check_residual(residual, opts)?;
    Ok(GramianResult {
        w,
        method: GramianMethod::VecSolve,
        truncation_order: None,
        residual,
        existence_rho: op.existence_rho(),
    })
}

/// Solves `A X A^T - X + Q = 0` for Schur-stable `A`.
pub fn discrete_lyapunov_solve(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    if q.max_asymmetry() > SYMMETRY_TOL * q.norm_max() {
        return Err(Error::NotSymmetric {
            deviation: q.max_asymmetry(),
            tolerance: SYMMETRY_TOL * q.norm_max(),
        });
    }
    let stab = schur_stable(a)?;
    if !stab.holds {
        return Err(Error::Unstable { rho: stab.rho });
    }
    LyapunovOperator::new(a, &[])?.solve(q)
}

/// Truncated series `sum_{i<=L} W_i` built from the Lyapunov recursion.
pub fn gramian_series(sys: &BilinearSystem, max_order: usize, tol: f64) -> Result<GramianResult> {
    let opts = GramianOptions {
        series_tol: tol,
        max_order,
        ..GramianOptions::default()
    };
    gramian_series_with(sys, &opts)
}

pub fn gramian_series_with(sys: &BilinearSystem, opts: &GramianOptions) -> Result<GramianResult> {
    if opts.max_order == 0 {
        return Err(Error::InvalidInput("max_order must be at least 1".into()));
    }
    // rho(A)^2 <= rho(A(x)A + sum F_j(x)F_j), so existence also makes A stable.
    let existence_rho = if sys.is_linear() {
        spectral_radius(sys.a())?.powi(2)
    } else {
        spectral_radius(&sys.kronecker_operator()?)?
    };
    if existence_rho >= 1.0 {
        return Err(Error::GramianNonexistent { rho: existence_rho });
    }
    let linear = LyapunovOperator::new(sys.a(), &[])?;

    let mut term = linear.solve(&(sys.b() * &sys.b().transpose()))?;
    let mut sum = term.clone();
    let mut order = 1;
    let mut converged = term.is_zero();
    while !converged {
        let mut rhs = Matrix::zeros(sys.n(), sys.n());
        for fj in sys.f() {
            rhs.add_scaled(1.0, &(&(fj * &term) * &fj.transpose()));
        }
        if rhs.is_zero() {
            break;
        }
        if order == opts.max_order {
            return Err(Error::Truncation {
                order,
                last_norm: term.norm_fro(),
            });
        }
        term = linear.solve(&rhs.symmetrized())?;
        sum.add_scaled(1.0, &term);
        order += 1;
        converged = term.norm_fro() <= opts.series_tol * sum.norm_fro();
    }

    let w = sum.symmetrized();
    let residual = lyapunov_residual(sys, &w);
    check_residual(residual, opts)?;
    Ok(GramianResult {
        w,
        method: GramianMethod::Series,
        truncation_order: Some(order),
        residual,
        existence_rho,
    })
}

/// `sum_{k=0}^{K-1} A^k B B^T (A^T)^k`.
pub fn linear_gramian_k_step(a: &Matrix, b: &Matrix, steps: usize) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::InvalidInput("K-step Gramian needs K >= 1".into()));
    }
    if !a.is_square() || b.rows() != a.rows() {
        return Err(Error::Shape("A and B dimensions disagree".into()));
    }
    let mut akb = b.clone();
    let mut w = Matrix::zeros(a.rows(), a.rows());
    for k in 0..steps {
        if k > 0 {
            akb = a * &akb;
        }
        w.add_scaled(1.0, &(&akb * &akb.transpose()));
    }
    Ok(w.symmetrized())
}
