//! Bilinear system model: `x(k+1) = A x(k) + sum_j (F_j x(k) + B_j) u_j(k)`.

use crate::error::{Error, Result};
use crate::numerics::{kron, norm2, spectral_norm, spectral_radius, sym_eig, Matrix};

/// States whose Euclidean norm exceeds this abort a simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Default relative kernel threshold for [`image_invariance_check`].
pub const KERNEL_TOL: f64 = 1e-9;

/// Canonical bilinear system `(A, F, B)` with `m` inputs; input `j` drives
/// both `F_j x` and column `B_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSystem {
    a: Matrix,
    f: Vec<Matrix>,
    b: Matrix,
}

impl BilinearSystem {
    pub fn new(a: Matrix, f: Vec<Matrix>, b: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::Shape(format!("A is {}x{}, expected square", a.rows(), a.cols())));
        }
        if b.rows() != n {
            return Err(Error::Shape(format!("B has {} rows, expected {n}", b.rows())));
        }
        if f.len() != b.cols() {
            return Err(Error::Shape(format!(
                "{} bilinear matrices for {} input columns",
                f.len(),
                b.cols()
            )));
        }
        if let Some(j) = f.iter().position(|fj| fj.shape() != (n, n)) {
            return Err(Error::Shape(format!("F[{j}] is not {n}x{n}")));
        }
        Ok(Self { a, f, b })
    }

    /// Linear system `(A, 0, B)`.
    pub fn linear(a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.rows();
        let f = vec![Matrix::zeros(n, n); b.cols()];
        Self::new(a, f, b)
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn f(&self) -> &[Matrix] {
        &self.f
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn is_linear(&self) -> bool {
        self.f.iter().all(Matrix::is_zero)
    }

    /// The same `(A, B)` with every `F_j` set to zero.
    pub fn linear_part(&self) -> Self {
        Self::linear(self.a.clone(), self.b.clone()).expect("dimensions already validated")
    }

    /// `A x + sum_j (F_j x + B_j) u_j`.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() || u.len() != self.m() {
            return Err(Error::Shape(format!(
                "step expects x in R^{} and u in R^{}, got {} and {}",
                self.n(),
                self.m(),
                x.len(),
                u.len()
            )));
        }
        let mut next = self.a.mul_vec(x);
        for (j, &uj) in u.iter().enumerate() {
            if uj == 0.0 {
                continue;
            }
            let fx = self.f[j].mul_vec(x);
            for (i, v) in next.iter_mut().enumerate() {
                *v += (fx[i] + self.b[(i, j)]) * uj;
            }
        }
        Ok(next)
    }

    /// Iterates [`step`](Self::step) from `x0` over `inputs`.
    pub fn simulate(&self, inputs: &[Vec<f64>], x0: &[f64]) -> Result<Trajectory> {
        if x0.len() != self.n() {
            return Err(Error::Shape(format!("x0 has length {}, expected {}", x0.len(), self.n())));
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut cumulative_energy = Vec::with_capacity(inputs.len());
        states.push(x0.to_vec());
        let mut energy = 0.0;
        for (k, u) in inputs.iter().enumerate() {
            let next = self.step(&states[k], u)?;
            if next.iter().any(|v| !v.is_finite()) || norm2(&next) > DIVERGENCE_LIMIT {
                return Err(Error::Divergence { step: k + 1 });
            }
            energy += u.iter().map(|v| v * v).sum::<f64>();
            cumulative_energy.push(energy);
            states.push(next);
        }
        Ok(Trajectory {
            states,
            inputs: inputs.to_vec(),
            cumulative_energy,
        })
    }

    /// `A (x) A + sum_j F_j (x) F_j`, the operator whose spectral radius
    /// decides existence of the Gramian.
    pub fn kronecker_operator(&self) -> Result<Matrix> {
        let mut k = kron(&self.a, &self.a)?;
        for fj in self.f.iter().filter(|fj| !fj.is_zero()) {
            k.add_scaled(1.0, &kron(fj, fj)?);
        }
        Ok(k)
    }
}

/// Input/state record of a simulation.
///
/// `cumulative_energy[k]` is `sum_{i <= k} u(i)^T u(i)`, the energy spent to
/// reach `states[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub cumulative_energy: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds x0")
    }

    /// Energy spent to reach `states[k]`.
    pub fn energy_to(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cumulative_energy[k - 1]
        }
    }
}

/// General form `x+ = A x + sum_j Fbar_j x v_j + Bbar w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralBilinearSystem {
    pub a: Matrix,
    pub fbar: Vec<Matrix>,
    pub bbar: Matrix,
}

impl GeneralBilinearSystem {
    pub fn new(a: Matrix, fbar: Vec<Matrix>, bbar: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || bbar.rows() != n || fbar.iter().any(|f| f.shape() != (n, n)) {
            return Err(Error::Shape("inconsistent general bilinear system dimensions".into()));
        }
        Ok(Self { a, fbar, bbar })
    }

    pub fn p(&self) -> usize {
        self.fbar.len()
    }

    pub fn q(&self) -> usize {
        self.bbar.cols()
    }

    pub fn step(&self, x: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.a.rows() || v.len() != self.p() || w.len() != self.q() {
            return Err(Error::Shape("general step dimension mismatch".into()));
        }
        let mut next = self.a.mul_vec(x);
        for (fj, &vj) in self.fbar.iter().zip(v) {
            for (acc, fx) in next.iter_mut().zip(fj.mul_vec(x)) {
                *acc += fx * vj;
            }
        }
        for (acc, bw) in next.iter_mut().zip(self.bbar.mul_vec(w)) {
            *acc += bw;
        }
        Ok(next)
    }
}

/// Rewrites the general form with `u = [v; w]`, `F = [Fbar | 0]`, `B = [0 | Bbar]`.
pub fn canonicalize(g: &GeneralBilinearSystem) -> BilinearSystem {
    let n = g.a.rows();
    let (p, q) = (g.p(), g.q());
    let mut f = g.fbar.clone();
    f.extend(std::iter::repeat_with(|| Matrix::zeros(n, n)).take(q));
    let mut b = Matrix::zeros(n, p + q);
    b.set_block(0, p, &g.bbar);
    BilinearSystem::new(g.a.clone(), f, b).expect("general system dimensions already validated")
}

/// Stability verdict with the spectral radius that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTest {
    pub holds: bool,
    pub rho: f64,
}

/// `rho(A) < 1`; `rho == 1` counts as unstable.
pub fn schur_stable(a: &Matrix) -> Result<SpectralTest> {
    let rho = spectral_radius(a)?;
    Ok(SpectralTest { holds: rho < 1.0, rho })
}

/// `rho(A (x) A + sum_j F_j (x) F_j) < 1`.
pub fn gramian_exists(sys: &BilinearSystem) -> Result<SpectralTest> {
    let rho = spectral_radius(&sys.kronecker_operator()?)?;
    Ok(SpectralTest { holds: rho < 1.0, rho })
}

/// Orthonormal basis (as columns) of the numerical kernel of a symmetric PSD
/// `w`: eigenvectors whose eigenvalue is at most `tol * lambda_max(w)`.
pub fn kernel_basis(w: &Matrix, tol: f64) -> Result<Vec<Vec<f64>>> {
    let eig = sym_eig(w, true)?;
    let threshold = tol * eig.max().max(0.0);
    let vectors = eig.vectors.expect("requested eigenvectors");
    Ok(eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= threshold)
        .map(|(i, _)| vectors.column(i))
        .collect())
}

/// Checks that `Ker(W)` is mapped into itself by `A^T` and every `F_j^T`, and
/// annihilated by `B^T`, which makes `Im(W)` invariant under the dynamics.
pub fn image_invariance_check(sys: &BilinearSystem, w: &Matrix, tol: f64) -> Result<bool> {
    if w.shape() != (sys.n(), sys.n()) {
        return Err(Error::Shape("W does not match the system dimension".into()));
    }
    let kernel = kernel_basis(w, tol)?;
    if kernel.is_empty() {
        return Ok(true);
    }
    // Component of y outside span(kernel).
    let outside_kernel = |y: Vec<f64>| -> f64 {
        let mut r = y;
        for k in &kernel {
            let c: f64 = k.iter().zip(&r).map(|(a, b)| a * b).sum();
            for (ri, ki) in r.iter_mut().zip(k) {
                *ri -= c * ki;
            }
        }
        norm2(&r)
    };
    let at = sys.a().transpose();
    let ft: Vec<Matrix> = sys.f().iter().map(Matrix::transpose).collect();
    let bt = sys.b().transpose();
    let a_tol = tol * spectral_norm(sys.a()).max(1.0);
    let b_tol = tol * spectral_norm(sys.b()).max(1.0);
    for v in &kernel {
        if outside_kernel(at.mul_vec(v)) > a_tol {
            return Ok(false);
        }
        for fj in &ft {
            if outside_kernel(fj.mul_vec(v)) > tol * spectral_norm(fj).max(1.0) {
                return Ok(false);
            }
        }
        if norm2(&bt.mul_vec(v)) > b_tol {
            return Ok(false);
        }
    }
    Ok(true)
}
