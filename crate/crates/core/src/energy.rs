//! Gramian-based lower bound on input energy.
//!
//! For `V(x) = x^T W^{-1} x`, the per-step difference
//! `V(x(k+1)) - V(x(k)) - u^T u` is the quadratic form of the block matrix
//! built by [`phi_matrix`]. That matrix is negative semidefinite whenever
//! `||u||_inf` stays below the cap computed by [`input_cap`], and summing the
//! steps from `x(0) = 0` gives `sum_k u^T u >= x(K)^T W^{-1} x(K)`.
//!
//! With
//!
//! ```text
//! Psi  = W^{-1} - W^{-1} B (B^T W^{-1} B - I)^{-1} B^T W^{-1}
//! s    = sum_j ||A^T Psi F_j + F_j^T Psi A||
//! c    = sum_{i,j} ||F_j^T Psi F_i||
//! beta = -s + sqrt(s^2 - 4 c lambda_max(A^T Psi A - W^{-1}))
//! cap  = beta / (2 c)
//! ```
//!
//! the cap is positive exactly when `G = A^T Psi A - W^{-1}` is negative
//! definite. Whether that always happens is not known; results report the
//! sign instead of assuming it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gramian::gramian_vec_solve;
use crate::numerics::{bilinear_form, spectral_norm, sym_eig, Cholesky, Lu, Matrix};
use crate::system::BilinearSystem;

/// `lambda_min(W) / lambda_max(W)` below this is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Relative slack when checking `energy >= bound`.
pub const INEQUALITY_TOL: f64 = 1e-9;

/// Cholesky factor of `W` after a conditioning check.
fn factor_gramian(w: &Matrix) -> Result<Cholesky> {
    let eig = sym_eig(w, false)?;
    let ratio = if eig.max() > 0.0 { eig.min() / eig.max() } else { 0.0 };
    if ratio <= RANK_TOL {
        return Err(Error::RankDeficient { ratio });
    }
    Cholesky::factor(w)
}

fn check_dims(sys: &BilinearSystem, w: &Matrix) -> Result<()> {
    if w.shape() != (sys.n(), sys.n()) {
        return Err(Error::Shape(format!(
            "W is {}x{}, system has n = {}",
            w.rows(),
            w.cols(),
            sys.n()
        )));
    }
    Ok(())
}

fn psi_from_factor(sys: &BilinearSystem, chol: &Cholesky) -> Result<(Matrix, Matrix)> {
    let w_inv = chol.inverse();
    let w_inv_b = chol.solve(sys.b());
    let mut s = &sys.b().transpose() * &w_inv_b;
    s.add_scaled(-1.0, &Matrix::identity(sys.m()));
    let s_lu = Lu::factor(&s.symmetrized())?;
    let correction = &w_inv_b * &s_lu.solve(&w_inv_b.transpose());
    let psi = (&w_inv - &correction).symmetrized();
    Ok((psi, w_inv))
}

/// `Psi = W^{-1} - W^{-1} B (B^T W^{-1} B - I_m)^{-1} B^T W^{-1}`.
pub fn compute_psi(sys: &BilinearSystem, w: &Matrix) -> Result<Matrix> {
    check_dims(sys, w)?;
    let chol = factor_gramian(w)?;
    Ok(psi_from_factor(sys, &chol)?.0)
}

/// Definiteness of `G = A^T Psi A - W^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapDefiniteness {
    pub negative_definite: bool,
    pub lambda_max: f64,
}

fn gap_from_inverse(sys: &BilinearSystem, psi: &Matrix, w_inv: &Matrix) -> Result<GapDefiniteness> {
    let a = sys.a();
    let g = &(&(&a.transpose() * psi) * a) - w_inv;
    let lambda_max = sym_eig(&g.symmetrized(), false)?.max();
    Ok(GapDefiniteness {
        negative_definite: lambda_max < 0.0,
        lambda_max,
    })
}

pub fn gap_matrix_negdef(sys: &BilinearSystem, w: &Matrix, psi: &Matrix) -> Result<GapDefiniteness> {
    check_dims(sys, w)?;
    let chol = factor_gramian(w)?;
    gap_from_inverse(sys, psi, &chol.inverse())
}

/// Ingredients of `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Beta {
    pub beta: f64,
    /// `sum_j ||A^T Psi F_j + F_j^T Psi A||`
    pub linear_norm_sum: f64,
    /// `sum_{i,j} ||F_j^T Psi F_i||`
    pub cross_norm_sum: f64,
    /// `lambda_max(A^T Psi A - W^{-1})`
    pub gap_lambda_max: f64,
}

fn beta_from_parts(sys: &BilinearSystem, psi: &Matrix, gap: &GapDefiniteness) -> Result<Beta> {
    let a = sys.a();
    let at_psi = &a.transpose() * psi;
    let psi_a = psi * a;
    let mut s = 0.0;
    let mut c = 0.0;
    for fj in sys.f() {
        let fjt = fj.transpose();
        s += spectral_norm(&(&(&at_psi * fj) + &(&fjt * &psi_a)));
        let fjt_psi = &fjt * psi;
        for fi in sys.f() {
            c += spectral_norm(&(&fjt_psi * fi));
        }
    }
    let discriminant = s * s - 4.0 * c * gap.lambda_max;
    if discriminant < 0.0 {
        return Err(Error::Discriminant { discriminant });
    }
    Ok(Beta {
        beta: -s + discriminant.sqrt(),
        linear_norm_sum: s,
        cross_norm_sum: c,
        gap_lambda_max: gap.lambda_max,
    })
}

pub fn compute_beta(sys: &BilinearSystem, w: &Matrix, psi: &Matrix) -> Result<Beta> {
    let gap = gap_matrix_negdef(sys, w, psi)?;
    beta_from_parts(sys, psi, &gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBound {
    pub psi: Matrix,
    pub beta: f64,
    /// Admissible `||u(k)||_inf`; `+inf` for linear systems, may be `<= 0`.
    pub input_cap: f64,
    pub g_negdef: bool,
    pub g_lambda_max: f64,
    pub cross_norm_sum: f64,
    pub linear_norm_sum: f64,
}

fn cap_from_beta(beta: &Beta) -> f64 {
    let (s, c) = (beta.linear_norm_sum, beta.cross_norm_sum);
    if c > 0.0 {
        beta.beta / (2.0 * c)
    } else if s > 0.0 {
        // Quadratic term vanishes: s * |u| + lambda_max <= 0.
        -beta.gap_lambda_max / s
    } else {
        f64::INFINITY
    }
}

/// Input cap for a given Gramian.
pub fn input_cap_for(sys: &BilinearSystem, w: &Matrix) -> Result<EnergyBound> {
    check_dims(sys, w)?;
    let chol = factor_gramian(w)?;
    let (psi, w_inv) = psi_from_factor(sys, &chol)?;
    let gap = gap_from_inverse(sys, &psi, &w_inv)?;
    let beta = beta_from_parts(sys, &psi, &gap)?;
    Ok(EnergyBound {
        input_cap: cap_from_beta(&beta),
        beta: beta.beta,
        g_negdef: gap.negative_definite,
        g_lambda_max: gap.lambda_max,
        cross_norm_sum: beta.cross_norm_sum,
        linear_norm_sum: beta.linear_norm_sum,
        psi,
    })
}

/// Computes the Gramian by the direct solve, then the input cap.
pub fn input_cap(sys: &BilinearSystem) -> Result<EnergyBound> {
    let g = gramian_vec_solve(sys)?;
    input_cap_for(sys, &g.w)
}

/// `x_f^T W^{-1} x_f`, by Cholesky solve.
pub fn energy_lower_bound(w: &Matrix, x_f: &[f64]) -> Result<f64> {
    if x_f.len() != w.rows() {
        return Err(Error::Shape("target state does not match W".into()));
    }
    let chol = factor_gramian(w)?;
    Ok(x_f.iter().zip(chol.solve_vec(x_f)).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub k: usize,
    pub energy: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// One record per state `x(0) .. x(K)`.
    pub records: Vec<EnergyRecord>,
    /// `None` when the cap is inapplicable (negative discriminant).
    pub cap: Option<f64>,
    pub cap_satisfied: bool,
    pub inequality_held: bool,
}

impl EnergyReport {
    pub fn min_relative_slack(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.slack / (1.0 + r.bound.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Simulates from `x(0) = 0` and compares the cumulative input energy with
/// `x(k)^T W^{-1} x(k)` at every step. The inequality is evaluated even when
/// the cap is violated.
pub fn verify_energy_inequality(
    sys: &BilinearSystem,
    inputs: &[Vec<f64>],
    w: &Matrix,
) -> Result<EnergyReport> {
    check_dims(sys, w)?;
    let chol = factor_gramian(w)?;
    let cap = match input_cap_for(sys, w) {
        Ok(b) => Some(b.input_cap),
        Err(Error::Discriminant { .. }) => None,
        Err(e) => return Err(e),
    };
    let traj = sys.simulate(inputs, &vec![0.0; sys.n()])?;
    let records: Vec<EnergyRecord> = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let bound: f64 = x.iter().zip(chol.solve_vec(x)).map(|(a, b)| a * b).sum();
            let energy = traj.energy_to(k);
            EnergyRecord {
                k,
                energy,
                bound,
                slack: energy - bound,
            }
        })
        .collect();
    let cap_satisfied = cap.is_some_and(|c| {
        inputs
            .iter()
            .all(|u| u.iter().all(|v| v.abs() <= c))
    });
    let inequality_held = records
        .iter()
        .all(|r| r.slack >= -INEQUALITY_TOL * (1.0 + r.bound));
    Ok(EnergyReport {
        records,
        cap,
        cap_satisfied,
        inequality_held,
    })
}

/// The `(n+m) x (n+m)` matrix whose quadratic form in `[x; u]` equals
/// `V(x+) - V(x) - u^T u` for the input `u`.
pub fn phi_matrix(sys: &BilinearSystem, w: &Matrix, u: &[f64]) -> Result<Matrix> {
    check_dims(sys, w)?;
    if u.len() != sys.m() {
        return Err(Error::Shape(format!("u has length {}, expected {}", u.len(), sys.m())));
    }
    let (n, m) = (sys.n(), sys.m());
    let w_inv = factor_gramian(w)?.inverse();
    // A + sum_j u_j F_j
    let mut closed = sys.a().clone();
    for (fj, &uj) in sys.f().iter().zip(u) {
        closed.add_scaled(uj, fj);
    }
    let bt_winv = &sys.b().transpose() * &w_inv;

    let mut phi11 = &(&closed.transpose() * &w_inv) * &closed;
    phi11.add_scaled(-1.0, &w_inv);
    let phi21 = &bt_winv * &closed;
    let mut phi22 = &bt_winv * sys.b();
    phi22.add_scaled(-1.0, &Matrix::identity(m));

    let mut phi = Matrix::zeros(n + m, n + m);
    phi.set_block(0, 0, &phi11);
    phi.set_block(n, 0, &phi21);
    phi.set_block(0, n, &phi21.transpose());
    phi.set_block(n, n, &phi22);
    Ok(phi.symmetrized())
}

/// `[x; u]^T Phi [x; u]`
pub fn phi_quadratic_form(phi: &Matrix, x: &[f64], u: &[f64]) -> f64 {
    let z: Vec<f64> = x.iter().chain(u).copied().collect();
    bilinear_form(&z, phi, &z)
}

/// Closed interval `[lo, hi]`, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Admissible inputs `|u + a/f| <= sqrt(a^2/f^2 + 1)` for the scalar system
/// `x+ = a x + f x u + b u`; all reals when `f = 0`.
pub fn scalar_input_cap(a: f64, f: f64) -> Interval {
    if f == 0.0 {
        return Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        };
    }
    let center = -a / f;
    let radius = (a * a / (f * f) + 1.0).sqrt();
    Interval {
        lo: center - radius,
        hi: center + radius,
    }
}

/// Two-step input sequence for `x+ = a x + f x u + u` from `x(0) = 0` whose
/// energy is below `x_f^2 / w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub a: f64,
    pub f: f64,
    pub w: f64,
    pub u0: f64,
    pub u1: f64,
    pub x_f: f64,
    pub energy: f64,
    /// `(u0^2 + u1^2) / x_f^2` from simulation.
    pub achieved_ratio: f64,
}

/// Constructs inputs with `u0^2 + u1^2 < x_f^2 / w`.
///
/// `u1` is the integer nearest to zero beyond `(sqrt(w) - a)/f` by more than
/// one, so `g = (a + f u1)^{-2} < 1/w`. Writing `x_f = M u1` and
/// `u0 = (x_f - u1)/(a + f u1)`, the energy ratio is
/// `g - 2g/M + (1+g)/M^2`, a quadratic in `1/M` minimized at
/// `M = (1+g)/g` with value `g/(1+g)`.
pub fn unbounded_ratio_witness(a: f64, f: f64, w: f64) -> Result<Witness> {
    if f == 0.0 || !f.is_finite() {
        return Err(Error::InvalidInput("witness needs a nonzero finite f".into()));
    }
    if !(w > 0.0) || !w.is_finite() || !a.is_finite() {
        return Err(Error::InvalidInput("witness needs finite a and w > 0".into()));
    }
    let t = (w.sqrt() - a) / f;
    let u1 = if f > 0.0 {
        (t + 1.0).floor() + 1.0
    } else {
        (t - 1.0).ceil() - 1.0
    };
    let gain = a + f * u1;
    let g = 1.0 / (gain * gain);
    let m_ratio = (1.0 + g) / g;
    let x_f = m_ratio * u1;
    let u0 = (x_f - u1) / gain;

    let sys = BilinearSystem::new(Matrix::diag(&[a]), vec![Matrix::diag(&[f])], Matrix::diag(&[1.0]))?;
    let traj = sys.simulate(&[vec![u0], vec![u1]], &[0.0])?;
    let reached = traj.final_state()[0];
    let energy = traj.energy_to(2);
    let achieved_ratio = energy / (reached * reached);
    if !(achieved_ratio < 1.0 / w) {
        return Err(Error::InvalidInput(format!(
            "witness construction lost precision (ratio {achieved_ratio:.3e} vs 1/w = {:.3e})",
            1.0 / w
        )));
    }
    Ok(Witness {
        a,
        f,
        w,
        u0,
        u1,
        x_f: reached,
        energy,
        achieved_ratio,
    })
}
