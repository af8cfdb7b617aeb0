//! Network families, the self-loop modulation bound, scaling sweeps and the
//! bilinear-to-linear input expansion.

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gramian::LyapunovOperator;
use crate::numerics::{spectral_radius, sym_eig, Matrix, SYMMETRY_TOL};
use crate::selection::{binomial, DEFAULT_BUDGET};
use crate::system::{gramian_exists, BilinearSystem};

/// Symmetric tridiagonal matrix with every diagonal and first off-diagonal
/// entry equal to `a`.
pub fn line_network(n: usize, a: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i.abs_diff(j) <= 1 { a } else { 0.0 })
}

/// `x+ = (A + alpha v I) x + B u`, written with `m + 1` inputs: input 0 is the
/// modulation `v` (`F_0 = alpha I`, zero `B` column), inputs `1..=m` are the
/// columns of `B` with `F_j = 0`.
pub fn selfloop_modulated_system(a: &Matrix, alpha: f64, b: &Matrix) -> Result<BilinearSystem> {
    if !a.is_square() {
        return Err(Error::Shape("A must be square".into()));
    }
    let tol = SYMMETRY_TOL * a.norm_max().max(1.0);
    if a.max_asymmetry() > tol {
        return Err(Error::InvalidInput(format!(
            "A is not symmetric (deviation {:.3e})",
            a.max_asymmetry()
        )));
    }
    let n = a.rows();
    if b.rows() != n {
        return Err(Error::Shape(format!("B has {} rows, expected {n}", b.rows())));
    }
    let mut f = vec![Matrix::identity(n).scale(alpha)];
    f.extend((0..b.cols()).map(|_| Matrix::zeros(n, n)));
    let b_full = Matrix::hstack(&[&Matrix::zeros(n, 1), b])?;
    BilinearSystem::new(a.clone(), f, b_full)
}

/// `ceil(n / m) - 1`.
pub fn tm(n: usize, m: usize) -> usize {
    assert!(n >= 1 && m >= 1, "tm needs n, m >= 1");
    n.div_ceil(m) - 1
}

/// Upper bound on `lambda_min(W)` for self-loop modulated networks,
/// `rho^(2T) / ((1 - T alpha^2)(1 - rho^2 - 1/T))`.
///
/// `None` unless `T >= 1`, `rho < sqrt(1 - 1/T)` and `T alpha^2 < 1`.
pub fn theorem8_bound(rho: f64, alpha: f64, t: usize) -> Option<f64> {
    if t == 0 {
        return None;
    }
    let tf = t as f64;
    let gap = 1.0 - rho * rho - 1.0 / tf;
    let mod_gap = 1.0 - tf * alpha * alpha;
    if gap <= 0.0 || mod_gap <= 0.0 || !(rho >= 0.0) {
        return None;
    }
    Some(rho.powi(2 * t as i32) / (mod_gap * gap))
}

/// The prefactor `(1 - T alpha^2)^-1 / (1 - rho^2 - 1/T)` of [`theorem8_bound`].
pub fn theorem8_prefactor(rho: f64, alpha: f64, t: usize) -> Option<f64> {
    theorem8_bound(rho, alpha, t).map(|b| b / rho.powi(2 * t as i32))
}

/// Tridiagonal `A` with nonzero entries `coupling`, a single input with
/// `F` the subdiagonal of ones and `B = e_0`.
pub fn subdiag_system(n: usize, coupling: f64) -> Result<BilinearSystem> {
    if n < 2 {
        return Err(Error::InvalidInput("subdiagonal family needs n >= 2".into()));
    }
    let f = Matrix::from_fn(n, n, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
    let sys = BilinearSystem::new(line_network(n, coupling), vec![f], Matrix::basis(n, 0))?;
    let ex = gramian_exists(&sys)?;
    if !ex.holds {
        return Err(Error::GramianNonexistent { rho: ex.rho });
    }
    Ok(sys)
}

/// [`subdiag_system`] with coupling `0.05`.
pub fn subdiag_modulated_system(n: usize) -> Result<BilinearSystem> {
    subdiag_system(n, 0.05)
}

/// Builds `(A, [F_1, ..., F_p])` for size `n` and a coupling parameter.
pub type CustomBuilder = fn(usize, f64) -> Result<(Matrix, Vec<Matrix>)>;

#[derive(Debug, Clone, Copy)]
pub enum FamilyKind {
    /// Line network with self-loop modulation `alpha = trace_budget / n`.
    LineSelfLoop,
    /// Line network driven at node 0 through a subdiagonal-modulated input.
    LineSubdiag,
    /// The builder's `F` matrices become bilinear inputs with zero `B`
    /// columns, followed by `m` placed linear inputs.
    Custom(CustomBuilder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    /// Canonical columns maximizing `lambda_min(W)` over all placements.
    OptimalExhaustive,
    /// Columns `e_0, ..., e_{m-1}`.
    FirstNodes,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct NetworkFamily {
    pub kind: FamilyKind,
    pub coupling: f64,
    pub m: usize,
    pub trace_budget: f64,
    pub placement: Placement,
}

impl NetworkFamily {
    /// Line network, coupling 0.25, three inputs, self-loop trace 0.9,
    /// optimal placement.
    pub fn line_selfloop_default() -> Self {
        Self {
            kind: FamilyKind::LineSelfLoop,
            coupling: 0.25,
            m: 3,
            trace_budget: 0.9,
            placement: Placement::OptimalExhaustive,
        }
    }

    /// Line network, coupling 0.05, driven at the first node.
    pub fn line_subdiag_default() -> Self {
        Self {
            kind: FamilyKind::LineSubdiag,
            coupling: 0.05,
            m: 1,
            trace_budget: 0.0,
            placement: Placement::FirstNodes,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.coupling.is_finite() || !self.trace_budget.is_finite() {
            return Err(Error::InvalidInput("family parameters must be finite".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidInput("m must be at least 1".into()));
        }
        if let Placement::Explicit(nodes) = &self.placement {
            if nodes.len() != self.m || !nodes.iter().all_unique() {
                return Err(Error::InvalidInput(format!(
                    "explicit placement needs {} distinct nodes",
                    self.m
                )));
            }
        }
        Ok(())
    }

    /// `(A, bilinear F's, modulation alpha)` at size `n`.
    fn dynamics(&self, n: usize) -> Result<(Matrix, Vec<Matrix>, f64)> {
        match self.kind {
            FamilyKind::LineSelfLoop => {
                let alpha = self.trace_budget / n as f64;
                Ok((line_network(n, self.coupling), vec![Matrix::identity(n).scale(alpha)], alpha))
            }
            FamilyKind::LineSubdiag => {
                if n < 2 {
                    return Err(Error::InvalidInput("subdiagonal family needs n >= 2".into()));
                }
                let f = Matrix::from_fn(n, n, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
                Ok((line_network(n, self.coupling), vec![f], 0.0))
            }
            FamilyKind::Custom(build) => {
                let (a, f) = build(n, self.coupling)?;
                if a.shape() != (n, n) || f.iter().any(|fj| fj.shape() != (n, n)) {
                    return Err(Error::Shape(format!("custom family returned wrong size for n = {n}")));
                }
                Ok((a, f, 0.0))
            }
        }
    }

    /// Full system at size `n` with the given linear-input nodes.
    pub fn instance(&self, n: usize, nodes: &[usize]) -> Result<BilinearSystem> {
        let (a, f, _) = self.dynamics(n)?;
        assemble_instance(&self.kind, a, f, n, nodes)
    }
}

fn columns(n: usize, nodes: &[usize]) -> Result<Matrix> {
    if let Some(&i) = nodes.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!("node {i} out of range for n = {n}")));
    }
    Ok(Matrix::from_fn(n, nodes.len(), |r, c| if nodes[c] == r { 1.0 } else { 0.0 }))
}

fn assemble_instance(
    kind: &FamilyKind,
    a: Matrix,
    f: Vec<Matrix>,
    n: usize,
    nodes: &[usize],
) -> Result<BilinearSystem> {
    let b = columns(n, nodes)?;
    match kind {
        // The modulated input carries the first placed column.
        FamilyKind::LineSubdiag => {
            let mut fs = f;
            fs.extend((1..nodes.len()).map(|_| Matrix::zeros(n, n)));
            BilinearSystem::new(a, fs, b)
        }
        _ => {
            let p = f.len();
            let mut fs = f;
            fs.extend((0..nodes.len()).map(|_| Matrix::zeros(n, n)));
            BilinearSystem::new(a, fs, Matrix::hstack(&[&Matrix::zeros(n, p), &b])?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub n: usize,
    /// `None` when the bilinear Gramian does not exist.
    pub lambda_min_bilinear: Option<f64>,
    pub lambda_min_linear: Option<f64>,
    pub theorem8_bound: Option<f64>,
    pub assumptions_hold: bool,
    pub gramian_exists: bool,
    pub existence_rho: Option<f64>,
    pub rho_a: f64,
    pub t_m: usize,
    /// Linear-input nodes used for the bilinear system.
    pub placement: Vec<usize>,
    pub placement_linear: Vec<usize>,
    pub note: Option<String>,
}

/// Per-node Gramians `W(e_i)` share one operator; `W` of a placement is
/// their sum because the Gramian is linear in `B B^T`.
struct PlacementEvaluator {
    per_node: Vec<Matrix>,
}

impl PlacementEvaluator {
    fn new(op: &LyapunovOperator, n: usize) -> Result<Self> {
        let per_node = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut q = Matrix::zeros(n, n);
                q[(i, i)] = 1.0;
                op.solve(&q)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_node })
    }

    fn gramian(&self, nodes: &[usize]) -> Matrix {
        let n = self.per_node[0].rows();
        let mut w = Matrix::zeros(n, n);
        for &i in nodes {
            w.add_scaled(1.0, &self.per_node[i]);
        }
        w
    }

    fn lambda_min(&self, nodes: &[usize]) -> Result<f64> {
        Ok(sym_eig(&self.gramian(nodes).symmetrized(), false)?.min())
    }

    /// Lexicographically first placement attaining the largest `lambda_min`.
    fn best(&self, k: usize) -> Result<(Vec<usize>, f64)> {
        let n = self.per_node.len();
        let count = binomial(n, k);
        if count > DEFAULT_BUDGET {
            return Err(Error::Budget {
                count,
                budget: DEFAULT_BUDGET,
            });
        }
        let sets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
        let values = sets
            .par_iter()
            .map(|s| self.lambda_min(s))
            .collect::<Result<Vec<f64>>>()?;
        let scale = self.gramian(&(0..n).collect::<Vec<_>>()).norm_max();
        // Mirror-image placements tie up to roundoff in W.
        let tie = 1e-12 * scale;
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] + tie {
                best = i;
            }
        }
        Ok((sets[best].clone(), values[best]))
    }
}

fn clamp(v: f64) -> f64 {
    v.max(0.0)
}

fn pick(placement: &Placement, eval: &PlacementEvaluator, n: usize, k: usize) -> Result<(Vec<usize>, f64)> {
    let nodes = match placement {
        Placement::OptimalExhaustive => return eval.best(k),
        Placement::FirstNodes => (0..k).collect(),
        Placement::Explicit(nodes) => {
            let nodes: Vec<usize> = nodes.iter().copied().sorted().collect();
            columns(n, &nodes)?;
            nodes
        }
    };
    let v = eval.lambda_min(&nodes)?;
    Ok((nodes, v))
}

fn sweep_one(family: &NetworkFamily, n: usize) -> SweepRecord {
    let k = family.m.min(n);
    let mut rec = SweepRecord {
        n,
        lambda_min_bilinear: None,
        lambda_min_linear: None,
        theorem8_bound: None,
        assumptions_hold: false,
        gramian_exists: false,
        existence_rho: None,
        rho_a: f64::NAN,
        t_m: tm(n, family.m),
        placement: Vec::new(),
        placement_linear: Vec::new(),
        note: None,
    };
    let result = (|| -> Result<()> {
        let (a, f, alpha) = family.dynamics(n)?;
        rec.rho_a = spectral_radius(&a)?;
        if let FamilyKind::LineSelfLoop = family.kind {
            rec.theorem8_bound = theorem8_bound(rec.rho_a, alpha, rec.t_m);
            let mu = family.trace_budget;
            rec.assumptions_hold =
                rec.theorem8_bound.is_some() && (n as f64) > mu * mu / family.m as f64;
        }
        let linear_op = LyapunovOperator::new(&a, &[])?;
        let linear_eval = PlacementEvaluator::new(&linear_op, n)?;

        let modulated = match family.kind {
            // The modulated input shares the B column of the first node, so
            // the placement is fixed rather than searched.
            FamilyKind::LineSubdiag => None,
            _ => Some(()),
        };
        match LyapunovOperator::new(&a, &f) {
            Ok(op) => {
                rec.gramian_exists = true;
                rec.existence_rho = Some(op.existence_rho());
                if modulated.is_some() {
                    let eval = PlacementEvaluator::new(&op, n)?;
                    let (nodes, v) = pick(&family.placement, &eval, n, k)?;
                    rec.placement = nodes;
                    rec.lambda_min_bilinear = Some(clamp(v));
                } else {
                    let nodes = match &family.placement {
                        Placement::OptimalExhaustive => {
                            return Err(Error::InvalidInput(
                                "the subdiagonal family uses a fixed placement".into(),
                            ))
                        }
                        Placement::FirstNodes => (0..k).collect(),
                        Placement::Explicit(nodes) => nodes.clone(),
                    };
                    let sys = assemble_instance(&family.kind, a.clone(), f.clone(), n, &nodes)?;
                    let b = sys.b();
                    let w = op.solve(&(b * &b.transpose()))?;
                    rec.lambda_min_bilinear = Some(clamp(sym_eig(&w, false)?.min()));
                    rec.placement = nodes;
                }
            }
            Err(Error::GramianNonexistent { rho }) => {
                rec.existence_rho = Some(rho);
                rec.note = Some(format!("bilinear Gramian does not exist (rho = {rho:.6})"));
            }
            Err(e) => return Err(e),
        }

        let (nodes, v) = if modulated.is_some() {
            pick(&family.placement, &linear_eval, n, k)?
        } else {
            // Same inputs with the modulation removed.
            let nodes = rec.placement.clone();
            let v = linear_eval.lambda_min(&nodes)?;
            (nodes, v)
        };
        rec.placement_linear = nodes;
        rec.lambda_min_linear = Some(clamp(v));
        Ok(())
    })();
    if let Err(e) = result {
        rec.note = Some(e.to_string());
    }
    rec
}

/// One record per `n` in `n_from..=n_to`, sorted by `n`.
///
/// The bilinear and linear (modulation removed) variants get their own
/// optimal placements. Negative `lambda_min` from roundoff is reported as 0.
pub fn dtc_sweep(family: &NetworkFamily, n_from: usize, n_to: usize) -> Result<Vec<SweepRecord>> {
    family.validate()?;
    if n_from == 0 || n_from > n_to {
        return Err(Error::InvalidInput(format!("invalid range {n_from}..={n_to}")));
    }
    Ok((n_from..=n_to)
        .into_par_iter()
        .map(|n| sweep_one(family, n))
        .collect())
}

/// Provenance of an appended input column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionColumn {
    /// Bilinear input `j` whose `F_j` entry this column replaces.
    pub input: usize,
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// Linear system `(A, B_ext)` that reproduces every bilinear trajectory.
///
/// Each nonzero `F_j[row, col]` becomes the canonical column `e_row`, driven
/// by `u_hat = F_j[row, col] * x_col * u_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearExpansion {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B_ext")]
    pub b_ext: Matrix,
    #[serde(rename = "column_map")]
    pub columns: Vec<ExpansionColumn>,
    #[serde(rename = "M_F")]
    pub m_f: usize,
    /// Inputs of the original system.
    pub m: usize,
}

impl LinearExpansion {
    pub fn linear_system(&self) -> Result<BilinearSystem> {
        BilinearSystem::linear(self.a.clone(), self.b_ext.clone())
    }

    /// Inputs of the expanded system reproducing a bilinear trajectory;
    /// `states[k]` must be the state the bilinear input `inputs[k]` acts on.
    pub fn replay_inputs(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if states.len() < inputs.len() {
            return Err(Error::Shape("fewer states than inputs".into()));
        }
        inputs
            .iter()
            .zip(states)
            .map(|(u, x)| {
                if u.len() != self.m || x.len() != self.a.rows() {
                    return Err(Error::Shape("input or state has the wrong length".into()));
                }
                let mut v = u.clone();
                v.extend(self.columns.iter().map(|c| c.weight * x[c.col] * u[c.input]));
                Ok(v)
            })
            .collect()
    }
}

pub fn expand_to_linear(sys: &BilinearSystem) -> LinearExpansion {
    let n = sys.n();
    let columns: Vec<ExpansionColumn> = sys
        .f()
        .iter()
        .enumerate()
        .flat_map(|(j, fj)| {
            (0..n)
                .cartesian_product(0..n)
                .filter(move |&(r, c)| fj[(r, c)] != 0.0)
                .map(move |(row, col)| ExpansionColumn {
                    input: j,
                    row,
                    col,
                    weight: fj[(row, col)],
                })
        })
        .collect();
    let mut b_ext = Matrix::zeros(n, sys.m() + columns.len());
    b_ext.set_block(0, 0, sys.b());
    for (k, c) in columns.iter().enumerate() {
        b_ext[(c.row, sys.m() + k)] = 1.0;
    }
    LinearExpansion {
        a: sys.a().clone(),
        b_ext,
        m_f: columns.len(),
        columns,
        m: sys.m(),
    }
}
