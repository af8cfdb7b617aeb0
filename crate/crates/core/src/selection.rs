//! Actuator selection by reachability metrics.
//!
//! A library holds candidate actuators `(F_i, b_i)` sharing the dynamics `A`.
//! A subset `S` assembles the system `(A, F_S, B_S)` with inputs ordered by
//! ascending candidate index, and `W(S)` is its Gramian (`W({}) = 0`).
//! `S -> W(S)` has increasing returns in the PSD order, so trace is
//! supermodular and any metric of `W(S)` is bounded below by the sum over a
//! partition of `S`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::{discrete_lyapunov_solve, gramian_vec_solve};
use crate::numerics::{is_psd, log_det_pd, sym_eig, Matrix};
use crate::system::BilinearSystem;

/// Default cap on the number of subsets [`exhaustive_select`] will evaluate.
pub const DEFAULT_BUDGET: u128 = 100_000;

/// Values within this relative margin of the incumbent count as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Actuator {
    pub f: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorLibrary {
    a: Matrix,
    candidates: Vec<Actuator>,
}

impl ActuatorLibrary {
    pub fn new(a: Matrix, candidates: Vec<Actuator>) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::Shape("library A must be square".into()));
        }
        for (i, c) in candidates.iter().enumerate() {
            if c.f.shape() != (n, n) || c.b.len() != n {
                return Err(Error::Shape(format!("candidate {i} does not match n = {n}")));
            }
        }
        Ok(Self { a, candidates })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Actuator] {
        &self.candidates
    }

    /// Library with candidates listed in `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let sorted: Vec<usize> = order.iter().copied().sorted().collect();
        if sorted != (0..self.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidInput("not a permutation of the library".into()));
        }
        Self::new(
            self.a.clone(),
            order.iter().map(|&i| self.candidates[i].clone()).collect(),
        )
    }
}

fn normalize_set(lib: &ActuatorLibrary, set: &[usize], allow_empty: bool) -> Result<Vec<usize>> {
    if set.is_empty() && !allow_empty {
        return Err(Error::InvalidInput("actuator set is empty".into()));
    }
    let sorted: Vec<usize> = set.iter().copied().sorted().collect();
    if let Some(&i) = sorted.iter().find(|&&i| i >= lib.len()) {
        return Err(Error::InvalidInput(format!(
            "actuator index {i} out of range (library has {})",
            lib.len()
        )));
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate actuator index".into()));
    }
    Ok(sorted)
}

/// System `(A, F_S, B_S)` with inputs in ascending index order.
pub fn assemble(lib: &ActuatorLibrary, set: &[usize]) -> Result<BilinearSystem> {
    let set = normalize_set(lib, set, false)?;
    let n = lib.n();
    let f = set.iter().map(|&i| lib.candidates[i].f.clone()).collect();
    let b = Matrix::from_fn(n, set.len(), |r, c| lib.candidates[set[c]].b[r]);
    BilinearSystem::new(lib.a.clone(), f, b)
}

/// `W(S)` by the direct solve; the zero matrix for the empty set.
pub fn gramian_of_set(lib: &ActuatorLibrary, set: &[usize]) -> Result<Matrix> {
    let set = normalize_set(lib, set, true)?;
    if set.is_empty() {
        return Ok(Matrix::zeros(lib.n(), lib.n()));
    }
    Ok(gramian_vec_solve(&assemble(lib, &set)?)?.w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Trace,
    LambdaMin,
    /// Compared in the log domain; `det` is recovered by exponentiation.
    LogDet,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Trace, MetricKind::LambdaMin, MetricKind::LogDet];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Trace => "trace",
            MetricKind::LambdaMin => "lambda_min",
            MetricKind::LogDet => "log_det",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(MetricKind::Trace),
            "lmin" | "lambda_min" => Ok(MetricKind::LambdaMin),
            "logdet" | "log_det" => Ok(MetricKind::LogDet),
            other => Err(Error::InvalidInput(format!("unknown metric '{other}'"))),
        }
    }
}

pub fn metric(w: &Matrix, kind: MetricKind) -> Result<f64> {
    match kind {
        MetricKind::Trace => Ok(w.trace()),
        MetricKind::LambdaMin => Ok(sym_eig(w, false)?.min()),
        MetricKind::LogDet => log_det_pd(w),
    }
}

/// All three metrics of a Gramian for one actuator set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    #[serde(rename = "S")]
    pub set: Vec<usize>,
    pub trace: f64,
    pub lambda_min: f64,
    /// `None` when `W` is not positive definite.
    pub log_det: Option<f64>,
    /// `exp(log_det)` when below `1e300`.
    pub det: Option<f64>,
}

impl MetricRow {
    pub fn from_gramian(set: Vec<usize>, w: &Matrix) -> Result<Self> {
        let log_det = log_det_pd(w).ok();
        Ok(Self {
            set,
            trace: w.trace(),
            lambda_min: sym_eig(w, false)?.min(),
            log_det,
            det: log_det.map(f64::exp).filter(|d| *d < 1e300),
        })
    }
}

pub fn metric_row(lib: &ActuatorLibrary, set: &[usize]) -> Result<MetricRow> {
    let set = normalize_set(lib, set, false)?;
    let w = gramian_of_set(lib, &set)?;
    MetricRow::from_gramian(set, &w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Ascending.
    pub set: Vec<usize>,
    pub metric: MetricKind,
    pub value: f64,
    pub singletons: BTreeMap<usize, f64>,
    /// Candidates skipped during singleton evaluation, with the reason.
    pub excluded: Vec<(usize, String)>,
}

fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + TIE_TOL * incumbent.abs().max(1.0)
}

fn evaluate_singletons(lib: &ActuatorLibrary, kind: MetricKind) -> (BTreeMap<usize, f64>, Vec<(usize, String)>) {
    let results: Vec<(usize, Result<f64>)> = (0..lib.len())
        .into_par_iter()
        .map(|i| (i, gramian_of_set(lib, &[i]).and_then(|w| metric(&w, kind))))
        .collect();
    let mut singletons = BTreeMap::new();
    let mut excluded = Vec::new();
    for (i, r) in results {
        match r {
            Ok(v) => {
                singletons.insert(i, v);
            }
            Err(e) => excluded.push((i, e.to_string())),
        }
    }
    (singletons, excluded)
}

/// Ranks candidates by their individual metric value and keeps the top `m`
/// (ties by ascending index).
pub fn greedy_select(lib: &ActuatorLibrary, m: usize, kind: MetricKind) -> Result<Selection> {
    if m == 0 || m > lib.len() {
        return Err(Error::InvalidInput(format!(
            "cannot select {m} of {} actuators",
            lib.len()
        )));
    }
    let (singletons, excluded) = evaluate_singletons(lib, kind);
    if singletons.len() < m {
        return Err(Error::InvalidInput(format!(
            "only {} candidates have a usable Gramian, {m} requested",
            singletons.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = singletons.iter().map(|(&i, &v)| (i, v)).collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let set: Vec<usize> = ranked.iter().take(m).map(|&(i, _)| i).sorted().collect();
    let value = metric(&gramian_of_set(lib, &set)?, kind)?;
    Ok(Selection {
        set,
        metric: kind,
        value,
        singletons,
        excluded,
    })
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Best `m`-subset over all `C(|V|, m)` choices; ties go to the
/// lexicographically smallest set.
pub fn exhaustive_select(lib: &ActuatorLibrary, m: usize, kind: MetricKind) -> Result<Selection> {
    exhaustive_select_with_budget(lib, m, kind, DEFAULT_BUDGET)
}

pub fn exhaustive_select_with_budget(
    lib: &ActuatorLibrary,
    m: usize,
    kind: MetricKind,
    budget: u128,
) -> Result<Selection> {
    if m == 0 || m > lib.len() {
        return Err(Error::InvalidInput(format!(
            "cannot select {m} of {} actuators",
            lib.len()
        )));
    }
    let count = binomial(lib.len(), m);
    if count > budget {
        return Err(Error::Budget { count, budget });
    }
    let subsets: Vec<Vec<usize>> = (0..lib.len()).combinations(m).collect();
    let values: Vec<Result<f64>> = subsets
        .par_iter()
        .map(|s| gramian_of_set(lib, s).and_then(|w| metric(&w, kind)))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (idx, v) in values.iter().enumerate() {
        let Ok(v) = v else { continue };
        if best.is_none_or(|(_, b)| improves(*v, b)) {
            best = Some((idx, *v));
        }
    }
    let Some((idx, value)) = best else {
        return Err(values.into_iter().find_map(Result::err).expect("no subset evaluated"));
    };
    let (singletons, excluded) = evaluate_singletons(lib, kind);
    Ok(Selection {
        set: subsets[idx].clone(),
        metric: kind,
        value,
        singletons,
        excluded,
    })
}

/// `D = [W(S2 u {s}) - W(S2)] - [W(S1 u {s}) - W(S1)]` and its PSD verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct IncreasingReturns {
    pub psd: bool,
    pub lambda_min: f64,
    pub difference: Matrix,
}

pub fn increasing_returns_check(
    lib: &ActuatorLibrary,
    s1: &[usize],
    s2: &[usize],
    s: usize,
) -> Result<IncreasingReturns> {
    let s1 = normalize_set(lib, s1, true)?;
    let s2 = normalize_set(lib, s2, true)?;
    if !s1.iter().all(|i| s2.contains(i)) {
        return Err(Error::InvalidInput("S1 is not a subset of S2".into()));
    }
    if s >= lib.len() || s2.contains(&s) {
        return Err(Error::InvalidInput(format!("s = {s} must lie in V \\ S2")));
    }
    let with = |set: &[usize]| -> Vec<usize> { set.iter().copied().chain([s]).collect() };
    let mut d = gramian_of_set(lib, &with(&s2))?;
    d.add_scaled(-1.0, &gramian_of_set(lib, &s2)?);
    d.add_scaled(-1.0, &gramian_of_set(lib, &with(&s1))?);
    d.add_scaled(1.0, &gramian_of_set(lib, &s1)?);
    let d = d.symmetrized();
    Ok(IncreasingReturns {
        psd: is_psd(&d)?,
        lambda_min: sym_eig(&d, false)?.min(),
        difference: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Superposition {
    /// `f(W(S))`; `log det` for [`MetricKind::LogDet`].
    pub lhs: f64,
    /// `sum_i f(W(S_i))`; `log sum_i det` for [`MetricKind::LogDet`].
    pub rhs: f64,
    pub holds: bool,
}

/// `f(W(S)) >= sum_i f(W(S_i))` for a partition `S_1, ..., S_N` of `S`.
///
/// For the determinant both sides are compared as logarithms, so the
/// right-hand side is `log(sum_i det W(S_i))`; singular blocks contribute
/// `log 0 = -inf`.
pub fn superposition_bound_check(
    lib: &ActuatorLibrary,
    set: &[usize],
    partition: &[Vec<usize>],
    kind: MetricKind,
) -> Result<Superposition> {
    let set = normalize_set(lib, set, false)?;
    let mut union = Vec::new();
    for part in partition {
        if part.is_empty() {
            return Err(Error::InvalidInput("partition has an empty block".into()));
        }
        union.extend(normalize_set(lib, part, false)?);
    }
    union.sort_unstable();
    if union != set {
        return Err(Error::InvalidInput("blocks are not a partition of S".into()));
    }
    // A singular block has determinant zero.
    let value = |s: &[usize]| -> Result<f64> {
        match (gramian_of_set(lib, s).and_then(|w| metric(&w, kind)), kind) {
            (Err(Error::NotPositiveDefinite { .. }), MetricKind::LogDet) => Ok(f64::NEG_INFINITY),
            (r, _) => r,
        }
    };
    let lhs = value(&set)?;
    let parts: Vec<f64> = partition.iter().map(|p| value(p)).collect::<Result<_>>()?;
    let rhs = match kind {
        MetricKind::LogDet => {
            let top = parts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                top
            } else {
                top + parts.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
            }
        }
        _ => parts.iter().sum(),
    };
    let holds = if lhs == f64::NEG_INFINITY {
        rhs == f64::NEG_INFINITY
    } else {
        lhs >= rhs - 1e-9 * (1.0 + lhs.abs())
    };
    Ok(Superposition { lhs, rhs, holds })
}

/// Linear-part Gramian `W_1(S)` from `A W A^T - W + B_S B_S^T = 0`.
pub fn linear_gramian_of_set(lib: &ActuatorLibrary, set: &[usize]) -> Result<Matrix> {
    let sys = assemble(lib, set)?;
    discrete_lyapunov_solve(lib.a(), &(sys.b() * &sys.b().transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Additivity {
    pub holds: bool,
    /// `||W_1(S) - sum_s W_1({s})||_F / ||W_1(S)||_F`
    pub deviation: f64,
}

pub fn w1_additivity_check(lib: &ActuatorLibrary, set: &[usize]) -> Result<Additivity> {
    let set = normalize_set(lib, set, false)?;
    let whole = linear_gramian_of_set(lib, &set)?;
    let mut sum = Matrix::zeros(lib.n(), lib.n());
    for &s in &set {
        sum.add_scaled(1.0, &linear_gramian_of_set(lib, &[s])?);
    }
    let scale = whole.norm_fro();
    let diff = (&whole - &sum).norm_fro();
    let deviation = if scale > 0.0 { diff / scale } else { diff };
    Ok(Additivity {
        holds: deviation <= 1e-10,
        deviation,
    })
}
