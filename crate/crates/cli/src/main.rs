use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use bilinear_reach::energy::{input_cap_for, unbounded_ratio_witness, verify_energy_inequality};
use bilinear_reach::gramian::{gramian_series_with, gramian_vec_solve_with, GramianOptions};
use bilinear_reach::io;
use bilinear_reach::network::{dtc_sweep, expand_to_linear, FamilyKind, NetworkFamily, Placement};
use bilinear_reach::numerics::{log_det_pd, sym_eig};
use bilinear_reach::selection::{
    exhaustive_select_with_budget, greedy_select, metric_row, MetricKind, DEFAULT_BUDGET,
};
use bilinear_reach::Error;
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bireach", version, about = "Reachability analysis for bilinear control systems")]
struct Cli {
    /// Write the result to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Vec,
    Series,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Trace,
    Lmin,
    Logdet,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Trace => MetricKind::Trace,
            MetricArg::Lmin => MetricKind::LambdaMin,
            MetricArg::Logdet => MetricKind::LogDet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectMethod {
    Greedy,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    LineSelfloop,
    LineSubdiag,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Optimal,
    First,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Reachability Gramian of a system.
    Gramian {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, value_enum, default_value = "vec")]
        method: Method,
        /// Relative stopping tolerance of the series.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_order: usize,
    },
    /// Trace, smallest eigenvalue and determinant of the Gramian.
    Metrics {
        #[arg(long)]
        system: PathBuf,
    },
    /// Input cap under which the minimum-energy lower bound holds.
    Bound {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        emit_psi: bool,
    },
    /// Simulates from the origin and reports energy against the lower bound.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, conflicts_with = "random_inputs")]
        inputs: Option<PathBuf>,
        /// Draw this many input vectors uniformly within the cap.
        #[arg(long, requires = "seed")]
        random_inputs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Random input amplitude as a fraction of the cap.
        #[arg(long, default_value_t = 0.9)]
        amplitude: f64,
        /// Exit with status 5 if the bound fails for inputs within the cap.
        #[arg(long)]
        check_bound: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Chooses actuators from a library.
    Select {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value = "trace")]
        metric: MetricArg,
        #[arg(long, value_enum, default_value = "greedy")]
        method: SelectMethod,
        /// Largest number of subsets the exhaustive search may evaluate.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u128,
    },
    /// Smallest Gramian eigenvalue over a range of network sizes.
    Sweep {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        n_from: usize,
        #[arg(long)]
        n_to: usize,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        trace_budget: Option<f64>,
        #[arg(long)]
        coupling: Option<f64>,
        #[arg(long, value_enum)]
        placement: Option<PlacementArg>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Equivalent linear system with one input per nonzero entry of each F.
    Expand {
        #[arg(long)]
        system: PathBuf,
    },
    /// Two-step inputs of x+ = a x + f x u + u with energy below x_f^2 / w.
    Witness {
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, allow_hyphen_values = true)]
        f: f64,
        #[arg(long)]
        w: f64,
    },
}

/// Error with the process exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Shape(_)
            | Error::InvalidInput(_)
            | Error::NotSymmetric { .. }
            | Error::SizeLimit { .. } => 2,
            Error::Discriminant { .. } => 4,
            Error::Budget { .. } => 6,
            _ => 3,
        };
        let mut message = e.to_string();
        if let Error::Budget { .. } = e {
            message.push_str("; use --method greedy or raise --budget");
        }
        Failure { code, message }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Text to emit plus the exit status to report afterwards.
struct Outcome {
    text: String,
    code: u8,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Self { text, code: 0 }
    }

    fn json(v: &Value) -> Self {
        Self::ok(pretty(v))
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn run(cmd: Command) -> Result<Outcome, Failure> {
    match cmd {
        Command::Gramian {
            system,
            method,
            tol,
            max_order,
        } => {
            if !(tol > 0.0) || max_order == 0 {
                return Err(invalid("--tol and --max-order must be positive"));
            }
            let sys = io::load_system(&system)?;
            let opts = GramianOptions {
                series_tol: tol,
                max_order,
                ..GramianOptions::default()
            };
            let g = match method {
                Method::Vec => gramian_vec_solve_with(&sys, &opts)?,
                Method::Series => gramian_series_with(&sys, &opts)?,
            };
            Ok(Outcome::json(&io::gramian_json(&g)))
        }
        Command::Metrics { system } => {
            let sys = io::load_system(&system)?;
            let w = gramian_vec_solve_with(&sys, &GramianOptions::default())?.w;
            let mut v = json!({
                "trace": io::num(w.trace()),
                "lambda_min": io::num(sym_eig(&w, false)?.min()),
            });
            match log_det_pd(&w) {
                Ok(ld) => {
                    v["log_det"] = io::num(ld);
                    let det = ld.exp();
                    v["det"] = if det < 1e300 { io::num(det) } else { Value::Null };
                    Ok(Outcome::json(&v))
                }
                Err(e) => {
                    eprintln!("warning: Gramian is singular ({e}); determinant omitted");
                    Ok(Outcome {
                        text: pretty(&v),
                        code: 3,
                    })
                }
            }
        }
        Command::Bound { system, emit_psi } => {
            let sys = io::load_system(&system)?;
            let w = gramian_vec_solve_with(&sys, &GramianOptions::default())?.w;
            let b = input_cap_for(&sys, &w)?;
            if b.input_cap <= 0.0 {
                eprintln!("warning: input cap is not positive; the bound admits no nonzero inputs");
            }
            Ok(Outcome::json(&io::energy_bound_json(&b, emit_psi)))
        }
        Command::Simulate {
            system,
            inputs,
            random_inputs,
            seed,
            amplitude,
            check_bound,
            format,
        } => {
            let sys = io::load_system(&system)?;
            let w = gramian_vec_solve_with(&sys, &GramianOptions::default())?.w;
            let u = match (inputs, random_inputs) {
                (Some(path), None) => io::load_inputs(&path, sys.m())?,
                (None, Some(k)) => {
                    if !(amplitude > 0.0) || !amplitude.is_finite() {
                        return Err(invalid("--amplitude must be positive"));
                    }
                    let cap = match input_cap_for(&sys, &w) {
                        Ok(b) if b.input_cap > 0.0 && b.input_cap.is_finite() => b.input_cap,
                        Ok(b) if b.input_cap.is_infinite() => 1.0,
                        Ok(_) | Err(Error::Discriminant { .. }) => {
                            return Err(invalid("no positive input cap to sample within"))
                        }
                        Err(e) => return Err(e.into()),
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.expect("clap enforces --seed"));
                    let r = amplitude * cap;
                    (0..k)
                        .map(|_| (0..sys.m()).map(|_| rng.gen_range(-r..=r)).collect())
                        .collect()
                }
                _ => return Err(invalid("give exactly one of --inputs or --random-inputs")),
            };
            let report = verify_energy_inequality(&sys, &u, &w)?;
            if !report.cap_satisfied {
                eprintln!("warning: inputs exceed the input cap; the lower bound is not guaranteed");
            }
            let text = match format {
                Format::Csv => io::energy_report_csv(&report),
                Format::Json => pretty(&json!({
                    "cap": report.cap.map_or(Value::Null, io::num),
                    "cap_satisfied": report.cap_satisfied,
                    "inequality_held": report.inequality_held,
                    "records": report.records.iter().map(|r| json!({
                        "k": r.k,
                        "energy": io::num(r.energy),
                        "bound": io::num(r.bound),
                        "slack": io::num(r.slack),
                    })).collect::<Vec<_>>(),
                })),
            };
            let violated = check_bound && report.cap_satisfied && !report.inequality_held;
            if violated {
                eprintln!("error: energy fell below the lower bound for inputs within the cap");
            }
            Ok(Outcome {
                text,
                code: if violated { 5 } else { 0 },
            })
        }
        Command::Select {
            library,
            m,
            metric,
            method,
            budget,
        } => {
            let lib = io::load_library(&library)?;
            let kind = MetricKind::from(metric);
            let sel = match method {
                SelectMethod::Greedy => greedy_select(&lib, m, kind)?,
                SelectMethod::Exhaustive => exhaustive_select_with_budget(&lib, m, kind, budget)?,
            };
            for (i, why) in &sel.excluded {
                eprintln!("warning: candidate {i} excluded: {why}");
            }
            let mut table = Vec::new();
            for i in sel.singletons.keys() {
                table.push(metric_row(&lib, &[*i])?);
            }
            if sel.set.len() > 1 {
                table.push(metric_row(&lib, &sel.set)?);
            }
            Ok(Outcome::json(&io::selection_json(&sel, &table)))
        }
        Command::Sweep {
            family,
            n_from,
            n_to,
            m,
            trace_budget,
            coupling,
            placement,
            format,
        } => {
            let mut fam = match family {
                Family::LineSelfloop => NetworkFamily::line_selfloop_default(),
                Family::LineSubdiag => NetworkFamily::line_subdiag_default(),
            };
            if let Some(m) = m {
                fam.m = m;
            }
            if let Some(t) = trace_budget {
                fam.trace_budget = t;
            }
            if let Some(c) = coupling {
                fam.coupling = c;
            }
            match placement {
                Some(PlacementArg::Optimal) => fam.placement = Placement::OptimalExhaustive,
                Some(PlacementArg::First) => fam.placement = Placement::FirstNodes,
                None => {}
            }
            if let (FamilyKind::LineSubdiag, Placement::OptimalExhaustive) = (fam.kind, &fam.placement) {
                return Err(invalid("line-subdiag drives fixed nodes; use --placement first"));
            }
            let records = dtc_sweep(&fam, n_from, n_to)?;
            for r in &records {
                if let Some(note) = &r.note {
                    eprintln!("warning: n = {}: {note}", r.n);
                }
            }
            let text = match format {
                Format::Csv => io::sweep_csv(&records),
                Format::Json => pretty(&serde_json::to_value(&records).expect("records serialize")),
            };
            Ok(Outcome::ok(text))
        }
        Command::Expand { system } => {
            let sys = io::load_system(&system)?;
            let e = expand_to_linear(&sys);
            Ok(Outcome::json(&serde_json::to_value(&e).expect("expansion serializes")))
        }
        Command::Witness { a, f, w } => {
            let wit = unbounded_ratio_witness(a, f, w)?;
            Ok(Outcome::json(&io::witness_json(&wit)))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli.command);
    let (text, code) = match result {
        Ok(o) => (Some(o.text), o.code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (None, f.code)
        }
    };
    if let Some(text) = text {
        match &cli.output {
            Some(path) => {
                if let Err(e) = fs::write(path, text) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            None => print!("{text}"),
        }
    }
    ExitCode::from(code)
}
