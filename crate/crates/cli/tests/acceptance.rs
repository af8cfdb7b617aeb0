//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any of them fails.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use bilinear_reach::energy::{input_cap_for, phi_matrix, unbounded_ratio_witness, verify_energy_inequality};
use bilinear_reach::gramian::{gramian_series, gramian_vec_solve, lyapunov_residual};
use bilinear_reach::io::{load_library, load_system};
use bilinear_reach::network::{dtc_sweep, expand_to_linear, NetworkFamily};
use bilinear_reach::numerics::{spectral_norm, spectral_radius, sym_eig, Matrix};
use bilinear_reach::selection::{
    assemble, gramian_of_set, increasing_returns_check, metric_row, superposition_bound_check, Actuator,
    ActuatorLibrary, MetricKind,
};
use bilinear_reach::system::{image_invariance_check, kernel_basis, BilinearSystem, KERNEL_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const FIVE_STATE_W: [[f64; 5]; 5] = [
    [0.6505, 0.4572, 0.4741, 0.1945, 0.5342],
    [0.4572, 1.2846, -0.4169, -0.1165, -0.3682],
    [0.4741, -0.4169, 6.9412, 1.1619, 4.5490],
    [0.1945, -0.1165, 1.1619, 0.2708, 0.9262],
    [0.5342, -0.3682, 4.5490, 0.9262, 5.2681],
];

/// `(S, trace, lambda_min, det, det significant figures)`
const LIBRARY4_METRICS: [(&[usize], f64, f64, f64, u8); 10] = [
    (&[0], 14.42, 0.027, 0.242, 3),
    (&[1], 5.03, 0.023, 0.025, 2),
    (&[2], 4.04, 3e-5, 9e-7, 1),
    (&[3], 3.03, 1.6e-6, 4e-11, 1),
    (&[0, 1], 20.98, 0.09, 11.704, 5),
    (&[0, 2], 19.91, 0.07, 3.32, 3),
    (&[0, 3], 18.69, 0.05, 1.13, 3),
    (&[0, 1, 2], 26.50, 0.137, 46.15, 4),
    (&[0, 1, 3], 25.28, 0.125, 28.68, 4),
    (&[0, 2, 3], 24.19, 0.103, 8.34, 3),
];

type Outcome = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Runs the binary and parses stdout as JSON.
fn cli(args: &[&str]) -> Result<(Value, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_bireach"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!(
            "bireach {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    let v = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    Ok((v, elapsed))
}

fn field(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("missing numeric field {key}"))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: bilinear_reach::Error) -> String {
    e.to_string()
}

/// Residuals of every Gramian computed along the way.
#[derive(Default)]
struct Residuals {
    worst: f64,
    worst_label: String,
    count: usize,
}

impl Residuals {
    fn track(&mut self, label: &str, sys: &BilinearSystem, w: &Matrix) {
        let r = lyapunov_residual(sys, w);
        self.count += 1;
        if !(r <= self.worst) {
            self.worst = r;
            self.worst_label = label.to_string();
        }
    }

    fn track_set(&mut self, label: &str, lib: &ActuatorLibrary, set: &[usize], w: &Matrix) -> Result<(), String> {
        if !set.is_empty() {
            self.track(label, &assemble(lib, set).map_err(err)?, w);
        }
        Ok(())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random system rescaled so that `rho(A (x) A + sum F (x) F) = rho`.
fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, rho: f64, f_scale: f64) -> BilinearSystem {
    let a = random_matrix(rng, n, n);
    let f: Vec<Matrix> = (0..m).map(|_| random_matrix(rng, n, n).scale(f_scale)).collect();
    let b = random_matrix(rng, n, m);
    let raw = BilinearSystem::new(a.clone(), f.clone(), b.clone()).unwrap();
    let current = spectral_radius(&raw.kronecker_operator().unwrap()).unwrap();
    let c = (rho / current).sqrt();
    BilinearSystem::new(a.scale(c), f.iter().map(|x| x.scale(c)).collect(), b).unwrap()
}

fn random_library(rng: &mut ChaCha8Rng, n: usize, size: usize) -> ActuatorLibrary {
    let base = random_system(rng, n, size, 0.8, 0.5);
    let candidates = (0..size)
        .map(|i| Actuator {
            f: base.f()[i].clone(),
            b: base.b().column(i),
        })
        .collect();
    ActuatorLibrary::new(base.a().clone(), candidates).unwrap()
}

fn random_inputs(rng: &mut ChaCha8Rng, steps: usize, m: usize, amp: f64) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| (0..m).map(|_| rng.gen_range(-amp..=amp)).collect())
        .collect()
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

fn partitions(set: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let Some((&first, rest)) = set.split_first() else {
        return vec![vec![]];
    };
    let mut out = Vec::new();
    for p in partitions(rest) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].insert(0, first);
            out.push(q);
        }
        let mut q = p;
        q.push(vec![first]);
        out.push(q);
    }
    out
}

fn rel_fro(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm_fro() / a.norm_fro().max(b.norm_fro()).max(f64::MIN_POSITIVE)
}

fn five_state_gramian(res: &mut Residuals) -> Outcome {
    let path = fixture("five_state.json");
    let (v, elapsed) = cli(&["gramian", "--system", path.to_str().unwrap()])?;
    let w = Matrix::from_rows(
        &v["W"]
            .as_array()
            .ok_or("W missing")?
            .iter()
            .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
            .collect::<Vec<Vec<f64>>>(),
    )
    .map_err(err)?;
    check(w.shape() == (5, 5), || format!("W is {:?}", w.shape()))?;
    let mut worst: f64 = 0.0;
    for (i, row) in FIVE_STATE_W.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            worst = worst.max((w[(i, j)] - p).abs());
        }
    }
    res.track("five-state", &load_system(&path).map_err(err)?, &w);
    let detail = format!("max |W - reference| = {worst:.2e} (tol 5e-4), {:.3} s", elapsed.as_secs_f64());
    check(worst <= 5e-4 && elapsed < Duration::from_secs(1), || detail.clone())?;
    Ok(detail)
}

fn five_state_cap() -> Outcome {
    let path = fixture("five_state.json");
    let (v, elapsed) = cli(&["bound", "--system", path.to_str().unwrap()])?;
    let cap = field(&v, "input_cap")?;
    let negdef = v["G_negdef"].as_bool().ok_or("G_negdef missing")?;
    let detail = format!(
        "input_cap = {cap:.6} (0.0011 +- 1e-4), G_negdef = {negdef}, {:.3} s",
        elapsed.as_secs_f64()
    );
    check((cap - 0.0011).abs() <= 1e-4 && negdef && elapsed < Duration::from_secs(1), || detail.clone())?;
    Ok(detail)
}

fn library_metrics(res: &mut Residuals) -> Outcome {
    let lib = load_library(&fixture("library4.json")).map_err(err)?;
    let start = Instant::now();
    let mut worst_loose: f64 = 0.0;
    let mut worst_det: f64 = 0.0;
    let mut worst_factor: f64 = 1.0;
    let mut failures = Vec::new();
    for &(set, trace, lmin, det, digits) in &LIBRARY4_METRICS {
        let row = metric_row(&lib, set).map_err(err)?;
        res.track_set("library4", &lib, set, &gramian_of_set(&lib, set).map_err(err)?)?;
        for (got, reference) in [(row.trace, trace), (row.lambda_min, lmin)] {
            let tol = (0.01 * reference.abs()).max(0.01);
            worst_loose = worst_loose.max((got - reference).abs() / tol);
            if (got - reference).abs() > tol {
                failures.push(format!("{set:?}: {got} vs {reference}"));
            }
        }
        let got_det = row.det.ok_or_else(|| format!("{set:?}: det missing"))?;
        if digits >= 2 {
            let rel = (got_det - det).abs() / det;
            worst_det = worst_det.max(rel);
            if rel > 0.02 {
                failures.push(format!("{set:?}: det {got_det} vs {det}"));
            }
        } else {
            let factor = (got_det / det).max(det / got_det);
            worst_factor = worst_factor.max(factor);
            if !(factor <= 1.5) {
                failures.push(format!("{set:?}: det {got_det:.3e} vs {det:.0e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "worst trace/lambda_min error {:.2} of tolerance, det rel {:.2e}, 1-digit det factor {:.3}, {:.3} s",
        worst_loose,
        worst_det,
        worst_factor,
        elapsed.as_secs_f64()
    );
    check(failures.is_empty() && elapsed < Duration::from_secs(10), || {
        format!("{detail}; {}", failures.join("; "))
    })?;
    Ok(detail)
}

fn greedy_vs_exhaustive() -> Outcome {
    let path = fixture("library4.json");
    let mut parts = Vec::new();
    for method in ["greedy", "exhaustive"] {
        let (v, _) = cli(&[
            "select",
            "--library",
            path.to_str().unwrap(),
            "--m",
            "2",
            "--metric",
            "trace",
            "--method",
            method,
        ])?;
        let set: Vec<u64> = v["S"]
            .as_array()
            .ok_or("S missing")?
            .iter()
            .filter_map(Value::as_u64)
            .collect();
        let value = field(&v, "value")?;
        check(set == [0, 1] && (value - 20.98).abs() <= 0.01 * 20.98, || {
            format!("{method} returned {set:?} with value {value}")
        })?;
        parts.push(format!("{method} {set:?} {value:.4}"));
    }
    Ok(parts.join(", "))
}

fn scalar_closed_form(res: &mut Residuals) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, f) = loop {
            let a: f64 = rng.gen_range(-0.95..0.95);
            let f: f64 = rng.gen_range(-0.95..0.95);
            if a * a + f * f <= 0.9 {
                break (a, f);
            }
        };
        let b: f64 = rng.gen_range(0.1..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let sys = BilinearSystem::new(Matrix::diag(&[a]), vec![Matrix::diag(&[f])], Matrix::diag(&[b])).unwrap();
        let w = gramian_vec_solve(&sys).map_err(err)?.w;
        res.track("scalar", &sys, &w);
        let exact = b * b / (1.0 - a * a - f * f);
        worst = worst.max((w[(0, 0)] - exact).abs() / exact);
    }
    let detail = format!("100 systems, max rel error {worst:.2e} (tol 1e-12)");
    check(worst <= 1e-12, || detail.clone())?;
    Ok(detail)
}

fn series_vs_vec(res: &mut Residuals) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=2);
        let rho = rng.gen_range(0.1..0.9);
        let sys = random_system(&mut rng, n, m, rho, 0.5);
        let direct = gramian_vec_solve(&sys).map_err(err)?;
        let series = gramian_series(&sys, 2000, 1e-14).map_err(err)?;
        res.track("random vec", &sys, &direct.w);
        res.track("random series", &sys, &series.w);
        worst = worst.max(rel_fro(&direct.w, &series.w));
    }
    let detail = format!("30 systems, max Frobenius rel difference {worst:.2e} (tol 1e-8)");
    check(worst <= 1e-8, || detail.clone())?;
    Ok(detail)
}

/// Energy inequality on one system; returns `(sequences, worst relative slack)`.
fn energy_runs(
    sys: &BilinearSystem,
    w: &Matrix,
    cap: f64,
    rng: &mut ChaCha8Rng,
    sequences: usize,
) -> Result<f64, String> {
    let mut worst = f64::INFINITY;
    for i in 0..sequences {
        let inputs = if i % 4 == 3 {
            // Bang-bang at the cap.
            (0..10)
                .map(|_| (0..sys.m()).map(|_| if rng.gen::<bool>() { cap } else { -cap }).collect())
                .collect()
        } else {
            random_inputs(rng, 10, sys.m(), cap)
        };
        let report = verify_energy_inequality(sys, &inputs, w).map_err(err)?;
        check(report.cap_satisfied, || "sampled inputs exceed the cap".into())?;
        // Energy recomputed from the inputs directly.
        let total: f64 = inputs.iter().flatten().map(|u| u * u).sum();
        let last = report.records.last().unwrap();
        check((last.energy - total).abs() <= 1e-12 * total.max(1e-300), || {
            format!("energy {} vs {}", last.energy, total)
        })?;
        for r in &report.records {
            let slack = r.slack / (1.0 + r.bound);
            worst = worst.min(slack);
            check(r.slack >= -1e-9 * (1.0 + r.bound), || {
                format!("slack {} at k = {} with bound {}", r.slack, r.k, r.bound)
            })?;
        }
    }
    Ok(worst)
}

fn max_phi_eig(sys: &BilinearSystem, w: &Matrix, cap: f64, rng: &mut ChaCha8Rng, samples: usize) -> Result<f64, String> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let u: Vec<f64> = (0..sys.m()).map(|_| rng.gen_range(-cap..=cap)).collect();
        let phi = phi_matrix(sys, w, &u).map_err(err)?;
        worst = worst.max(sym_eig(&phi, false).map_err(err)?.max());
    }
    Ok(worst)
}

fn energy_inequality(res: &mut Residuals) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sys5 = load_system(&fixture("five_state.json")).map_err(err)?;
    let w = gramian_vec_solve(&sys5).map_err(err)?.w;
    res.track("five-state", &sys5, &w);
    let cap = input_cap_for(&sys5, &w).map_err(err)?.input_cap;
    check(cap > 0.0, || format!("five-state cap {cap}"))?;
    let mut worst = energy_runs(&sys5, &w, cap, &mut rng, 100)?;
    let mut phi_worst = max_phi_eig(&sys5, &w, cap, &mut rng, 100)?;

    let mut found = 0;
    let mut attempts = 0;
    while found < 10 {
        attempts += 1;
        check(attempts <= 2000, || format!("only {found} positive-cap systems in 2000 draws"))?;
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=2);
        let rho = rng.gen_range(0.3..0.8);
        let sys = random_system(&mut rng, n, m, rho, 0.2);
        let Ok(g) = gramian_vec_solve(&sys) else { continue };
        let Ok(bound) = input_cap_for(&sys, &g.w) else { continue };
        if !(bound.input_cap > 0.0 && bound.input_cap.is_finite()) {
            continue;
        }
        found += 1;
        res.track("positive-cap", &sys, &g.w);
        worst = worst.min(energy_runs(&sys, &g.w, bound.input_cap, &mut rng, 10)?);
        phi_worst = phi_worst.max(max_phi_eig(&sys, &g.w, bound.input_cap, &mut rng, 10)?);
    }
    let detail = format!(
        "five-state cap {cap:.5}, 100 + 10x10 sequences, min slack/(1+bound) {worst:.2e}, max lambda_max(Phi) {phi_worst:.2e}"
    );
    check(phi_worst <= 1e-9, || detail.clone())?;
    Ok(detail)
}

/// Every `(S1, S2, s)` with `S1` a subset of `S2` and `s` outside `S2`.
fn triples(size: usize) -> Vec<(Vec<usize>, Vec<usize>, usize)> {
    let mut out = Vec::new();
    for s2 in subsets(size) {
        for s1 in subsets(s2.len()) {
            let s1: Vec<usize> = s1.iter().map(|&i| s2[i]).collect();
            for s in (0..size).filter(|s| !s2.contains(s)) {
                out.push((s1.clone(), s2.clone(), s));
            }
        }
    }
    out
}

fn increasing_returns(res: &mut Residuals) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut libs = vec![load_library(&fixture("library4.json")).map_err(err)?];
    for _ in 0..20 {
        let n = rng.gen_range(2..=5);
        let size = rng.gen_range(2..=4);
        libs.push(random_library(&mut rng, n, size));
    }
    let mut count = 0;
    let mut worst: f64 = f64::INFINITY;
    for (li, lib) in libs.iter().enumerate() {
        for set in subsets(lib.len()) {
            res.track_set("library subset", lib, &set, &gramian_of_set(lib, &set).map_err(err)?)?;
        }
        for (s1, s2, s) in triples(lib.len()) {
            let r = increasing_returns_check(lib, &s1, &s2, s).map_err(err)?;
            count += 1;
            let scale = spectral_norm(&r.difference).max(1.0);
            worst = worst.min(r.lambda_min / scale);
            check(r.psd, || {
                format!("library {li}: {s1:?} {s2:?} {s}: lambda_min {:.3e}", r.lambda_min)
            })?;
        }
    }
    Ok(format!(
        "{count} triples over library4 and 20 random libraries, min lambda_min/max(1,||D||) {worst:.2e}"
    ))
}

fn superposition(res: &mut Residuals) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let lib4 = load_library(&fixture("library4.json")).map_err(err)?;
    let mut cases: Vec<(ActuatorLibrary, Vec<Vec<usize>>)> =
        vec![(lib4, LIBRARY4_METRICS.iter().map(|t| t.0.to_vec()).collect())];
    for _ in 0..10 {
        let n = rng.gen_range(2..=5);
        let size = rng.gen_range(2..=4);
        let lib = random_library(&mut rng, n, size);
        let sets = subsets(size).into_iter().filter(|s| !s.is_empty()).collect();
        cases.push((lib, sets));
    }
    let mut count = 0;
    for (lib, sets) in &cases {
        for set in sets {
            res.track_set("superposition", lib, set, &gramian_of_set(lib, set).map_err(err)?)?;
            for p in partitions(set) {
                for kind in MetricKind::ALL {
                    let r = superposition_bound_check(lib, set, &p, kind).map_err(err)?;
                    count += 1;
                    check(r.holds, || format!("{set:?} split {p:?} ({kind}): {} < {}", r.lhs, r.rhs))?;
                }
            }
        }
    }
    Ok(format!("{count} (set, partition, metric) checks on reference subsets and 10 random libraries"))
}

fn selfloop_decay(res: &mut Residuals) -> Outcome {
    let family = NetworkFamily::line_selfloop_default();
    let start = Instant::now();
    let records = dtc_sweep(&family, 1, 15).map_err(err)?;
    let elapsed = start.elapsed();
    let mut applicable = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for r in &records {
        if r.gramian_exists {
            let sys = family.instance(r.n, &r.placement).map_err(err)?;
            res.track("sweep", &sys, &gramian_vec_solve(&sys).map_err(err)?.w);
        }
        if let (true, Some(bound), Some(l)) = (r.assumptions_hold, r.theorem8_bound, r.lambda_min_bilinear) {
            applicable += 1;
            worst_gap = worst_gap.max(l - bound);
            check(l <= bound + 1e-12, || format!("n = {}: lambda_min {l:.4e} > bound {bound:.4e}", r.n))?;
        }
    }
    let at = |n: usize| {
        records
            .iter()
            .find(|r| r.n == n)
            .and_then(|r| r.lambda_min_bilinear)
            .ok_or(format!("no lambda_min at n = {n}"))
    };
    let (l5, l15) = (at(5)?, at(15)?);
    let detail = format!(
        "bound applicable at {applicable} sizes, max lambda_min - bound {worst_gap:.3e}; lambda_min(5) = {l5:.3e}, lambda_min(15) = {l15:.3e}; {:.3} s",
        elapsed.as_secs_f64()
    );
    check(applicable > 0 && l15 <= 1e-2 * l5 && elapsed < Duration::from_secs(60), || detail.clone())?;
    Ok(detail)
}

fn subdiag_family(res: &mut Residuals) -> Outcome {
    let family = NetworkFamily::line_subdiag_default();
    let records = dtc_sweep(&family, 3, 12).map_err(err)?;
    let collect = |pick: fn(&bilinear_reach::network::SweepRecord) -> Option<f64>| -> Result<(f64, f64), String> {
        let values: Vec<f64> = records.iter().map(|r| pick(r).ok_or(format!("missing value at n = {}", r.n))).collect::<Result<_, _>>()?;
        Ok((
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ))
    };
    for r in &records {
        let sys = family.instance(r.n, &r.placement).map_err(err)?;
        res.track("subdiag", &sys, &gramian_vec_solve(&sys).map_err(err)?.w);
    }
    let (lo, hi) = collect(|r| r.lambda_min_bilinear)?;
    let (lo1, hi1) = collect(|r| r.lambda_min_linear)?;
    let (ratio, ratio1) = (hi / lo, hi1 / lo1);
    let detail = format!("lambda_min(W) max/min {ratio:.4} (<= 10), lambda_min(W1) max/min {ratio1:.3e} (>= 1e3)");
    check(records.len() == 10 && ratio <= 10.0 && ratio1 >= 1e3, || detail.clone())?;
    Ok(detail)
}

fn witness() -> Outcome {
    let mut parts = Vec::new();
    for w in [10.0, 1e3, 1e5] {
        let (v, _) = cli(&["witness", "--a", "0.5", "--f", "1", "--w", &w.to_string()])?;
        let (u0, u1, x_f, ratio) = (field(&v, "u0")?, field(&v, "u1")?, field(&v, "x_f")?, field(&v, "ratio")?);
        // x(1) = u0, x(2) = 0.5 x(1) + x(1) u1 + u1
        let x2 = 0.5 * u0 + u0 * u1 + u1;
        let sim_ratio = (u0 * u0 + u1 * u1) / (x2 * x2);
        check((x2 - x_f).abs() <= 1e-12 * x2.abs(), || format!("w = {w}: x_f {x_f} vs simulated {x2}"))?;
        check((sim_ratio - ratio).abs() <= 1e-12 * sim_ratio, || {
            format!("w = {w}: reported ratio {ratio} vs simulated {sim_ratio}")
        })?;
        check(sim_ratio < 1.0 / w, || format!("w = {w}: ratio {sim_ratio:.3e}"))?;
        // Same construction through the library.
        let lib = unbounded_ratio_witness(0.5, 1.0, w).map_err(err)?;
        check(lib.u1 == u1, || format!("w = {w}: library u1 {} vs {u1}", lib.u1))?;
        parts.push(format!("w = {w:.0e}: ratio {sim_ratio:.3e}"));
    }
    Ok(parts.join(", "))
}

fn expansion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    let mut columns = 0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=3);
        let rho = rng.gen_range(0.2..0.9);
        let mut sys = random_system(&mut rng, n, m, rho, 0.5);
        // Sparsify F so the column count varies.
        let f: Vec<Matrix> = sys
            .f()
            .iter()
            .map(|fj| Matrix::from_fn(n, n, |i, j| if rng.gen_bool(0.6) { fj[(i, j)] } else { 0.0 }))
            .collect();
        sys = BilinearSystem::new(sys.a().clone(), f, sys.b().clone()).unwrap();
        let inputs = random_inputs(&mut rng, 15, m, 0.5);
        let traj = sys.simulate(&inputs, &vec![0.0; n]).map_err(err)?;
        let exp = expand_to_linear(&sys);
        columns += exp.columns.len();
        let lin = exp.linear_system().map_err(err)?;
        let replay = exp.replay_inputs(&traj.states, &inputs).map_err(err)?;
        let lin_traj = lin.simulate(&replay, &vec![0.0; n]).map_err(err)?;
        check(lin_traj.states.len() == traj.states.len(), || "trajectory lengths differ".into())?;
        for (x, y) in traj.states.iter().zip(&lin_traj.states) {
            let scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
            let diff = x.iter().zip(y).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            worst = worst.max(diff / scale);
        }
    }
    let detail = format!("20 systems, {columns} expansion columns, max state mismatch {worst:.2e} (tol 1e-12)");
    check(worst <= 1e-12, || detail.clone())?;
    Ok(detail)
}

fn image_invariance(res: &mut Residuals) -> Outcome {
    let sys = load_system(&fixture("rank_deficient.json")).map_err(err)?;
    let w = gramian_vec_solve(&sys).map_err(err)?.w;
    res.track("rank deficient", &sys, &w);
    let kernel = kernel_basis(&w, KERNEL_TOL).map_err(err)?;
    check(!kernel.is_empty(), || "fixture Gramian has full rank".into())?;
    check(image_invariance_check(&sys, &w, KERNEL_TOL).map_err(err)?, || "invariance check failed".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let inputs = random_inputs(&mut rng, 20, sys.m(), 1.0);
        let traj = sys.simulate(&inputs, &vec![0.0; sys.n()]).map_err(err)?;
        for x in &traj.states {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let outside = kernel
                .iter()
                .map(|k| k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(outside / norm);
        }
    }
    let detail = format!(
        "kernel dimension {}, invariance holds, max ||P_ker x|| / ||x|| = {worst:.2e} over 50 runs (tol 1e-8)",
        kernel.len()
    );
    check(worst <= 1e-8, || detail.clone())?;
    Ok(detail)
}

fn main() -> ExitCode {
    let mut res = Residuals::default();
    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();
    outcomes.push((1, "five-state Gramian", five_state_gramian(&mut res)));
    outcomes.push((2, "five-state input cap", five_state_cap()));
    outcomes.push((3, "library4 metrics", library_metrics(&mut res)));
    outcomes.push((4, "greedy equals exhaustive", greedy_vs_exhaustive()));
    outcomes.push((5, "scalar closed form", scalar_closed_form(&mut res)));
    outcomes.push((6, "series against direct solve", series_vs_vec(&mut res)));
    outcomes.push((8, "energy lower bound", energy_inequality(&mut res)));
    outcomes.push((9, "increasing returns", increasing_returns(&mut res)));
    outcomes.push((10, "superposition bound", superposition(&mut res)));
    outcomes.push((11, "self-loop family decay", selfloop_decay(&mut res)));
    outcomes.push((12, "subdiagonal family", subdiag_family(&mut res)));
    outcomes.push((13, "unbounded energy ratio witness", witness()));
    outcomes.push((14, "linear expansion replay", expansion()));
    outcomes.push((15, "Im(W) invariance", image_invariance(&mut res)));
    let residual_detail = format!(
        "{} Gramians, worst relative residual {:.2e} ({}) (tol 1e-10)",
        res.count, res.worst, res.worst_label
    );
    let residual = if res.count > 0 && res.worst <= 1e-10 {
        Ok(residual_detail)
    } else {
        Err(residual_detail)
    };
    outcomes.push((7, "Lyapunov residuals", residual));
    outcomes.sort_by_key(|o| o.0);

    let mut failed = 0;
    for (id, name, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("[PASS] {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id:>2} {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
