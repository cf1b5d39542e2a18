use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use degell_core::analysis::{check_negativity, estimate_global_poincare, NegativityCondition};
use degell_core::assembly::assemble_form;
use degell_core::checks::{find_check, CheckContext};
use degell_core::linalg;
use degell_core::problem::{BoundaryKind, ProblemSpec};
use degell_core::solver::{fredholm, solve_shifted, stability_report, Branch};
use degell_core::space::{build_space, DiscreteSpace};
use degell_core::spectral::{compute_spectrum, eigenvalue_convergence, rayleigh_recursion, verify_spectral_claims};
use degell_core::{Error, Result};

#[derive(Parser)]
#[command(name = "degell", version, about = "Galerkin solver and inequality checks for degenerate elliptic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shifted solve (with --mu) or the full Fredholm pipeline.
    Solve {
        spec: PathBuf,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest eigenvalues and eigenfunctions.
    Spectrum {
        spec: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Use the Rayleigh-quotient recursion (self-adjoint forms only).
        #[arg(long)]
        recursion: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs one named check.
    Check {
        spec: PathBuf,
        #[arg(long)]
        which: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global Poincare constant on the Neumann space.
    Poincare {
        spec: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        r: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalue convergence table over several resolutions.
    Convergence {
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
        resolutions: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// JSON document plus side files, and the exit status.
struct Output {
    json: Value,
    csv: Vec<(String, String)>,
    status: u8,
}

fn load(path: &Path) -> Result<Arc<ProblemSpec>> {
    let mut spec = ProblemSpec::from_path(path)?;
    spec.apply_env();
    spec.validate()?;
    Ok(Arc::new(spec))
}

fn space_for(spec: &ProblemSpec) -> Result<Arc<DiscreteSpace>> {
    let mesh = Arc::new(spec.domain.build_mesh()?);
    Ok(Arc::new(build_space(mesh, spec.bc)))
}

fn envelope(command: &str, spec: &ProblemSpec, warnings: Vec<String>, result: Value) -> Result<Value> {
    let mut all = spec.exponent_warnings();
    all.extend(warnings);
    Ok(json!({
        "command": command,
        "spec": serde_json::to_value(spec)?,
        "warnings": all,
        "result": result,
    }))
}

fn cmd_solve(path: &Path, mu: Option<f64>) -> Result<Output> {
    let spec = load(path)?;
    let space = space_for(&spec)?;
    let form = assemble_form(&space, &spec)?;
    let warnings = form.warnings.clone();
    match mu {
        Some(mu) => {
            let rhs = form.rhs()?;
            let solve = solve_shifted(&form, mu, &rhs)?;
            let stability = stability_report(&form, &solve.solution.coeffs, Some(mu))?;
            let csv = vec![("solution".to_string(), solve.solution.to_csv())];
            let json = envelope("solve", &spec, warnings, json!({ "shifted": solve, "stability": stability }))?;
            Ok(Output { json, csv, status: 0 })
        }
        None => {
            let outcome = fredholm(&form)?;
            let status = if outcome.branch == Branch::Alternative && outcome.compatible == Some(false) { 2 } else { 0 };
            let csv = outcome.solution.iter().map(|u| ("solution".to_string(), u.to_csv())).collect();
            let json = envelope("solve", &spec, warnings, serde_json::to_value(&outcome)?)?;
            Ok(Output { json, csv, status })
        }
    }
}

fn cmd_spectrum(path: &Path, k: Option<usize>, recursion: bool) -> Result<Output> {
    let spec = load(path)?;
    let space = space_for(&spec)?;
    let form = assemble_form(&space, &spec)?;
    let k = k.unwrap_or(spec.numerics.k);
    let result = if recursion { rayleigh_recursion(&form, k)? } else { compute_spectrum(&form, k)? };
    let negativity = [NegativityCondition::Cond1I, NegativityCondition::Cond1Ii]
        .into_iter()
        .map(|c| check_negativity(&spec, &space, c, spec.numerics.negativity_trials, spec.numerics.seed).map(|r| r.holds))
        .collect::<Result<Vec<_>>>()?;
    let claims = verify_spectral_claims(&form, &result, Some(negativity.iter().any(|h| *h)));
    let csv = result
        .eigenfunctions
        .iter()
        .enumerate()
        .filter_map(|(i, u)| u.as_ref().map(|u| (format!("eig{}", i + 1), u.to_csv())))
        .collect();
    let json = envelope(
        "spectrum",
        &spec,
        form.warnings.clone(),
        json!({ "spectrum": result, "claims": claims }),
    )?;
    Ok(Output { json, csv, status: 0 })
}

fn cmd_check(path: &Path, which: &str, trials: Option<usize>, seed: Option<u64>) -> Result<Output> {
    let spec = load(path)?;
    let check = find_check(which)?;
    let default_trials = if which.parse::<NegativityCondition>().is_ok() {
        spec.numerics.negativity_trials
    } else {
        spec.numerics.trials
    };
    let ctx = CheckContext::new(spec.clone(), trials.unwrap_or(default_trials), seed.unwrap_or(spec.numerics.seed))?;
    let outcome = check.run(&ctx)?;
    let status = if outcome.holds == Some(false) { 2 } else { 0 };
    let json = envelope(
        "check",
        &spec,
        Vec::new(),
        json!({ "check": which, "trials": ctx.trials, "seed": ctx.seed, "outcome": outcome }),
    )?;
    Ok(Output { json, csv: Vec::new(), status })
}

fn cmd_poincare(path: &Path, r: f64) -> Result<Output> {
    let spec = load(path)?;
    let space = Arc::new(space_for(&spec)?.with_bc(BoundaryKind::Neumann));
    let backend = linalg::select_backend(&spec.numerics.backend, space.dof_count)?;
    let rep = estimate_global_poincare(
        &space,
        &spec.operator.q,
        r,
        spec.numerics.trials,
        spec.numerics.seed,
        Some(spec.exponents.omega),
        backend.as_ref(),
    )?;
    let status = if rep.holds { 0 } else { 2 };
    let warnings = rep.notes.clone();
    let json = envelope("poincare", &spec, warnings, serde_json::to_value(&rep)?)?;
    Ok(Output { json, csv: Vec::new(), status })
}

fn cmd_convergence(path: &Path, resolutions: &[usize]) -> Result<Output> {
    let spec = load(path)?;
    let table = eigenvalue_convergence(&spec, resolutions, spec.numerics.k)?;
    let k = table.rows.iter().map(|r| r.eigenvalues.len()).min().unwrap_or(0);
    let mut csv = String::from("n,h");
    for j in 1..=k {
        csv.push_str(&format!(",lambda{j}"));
    }
    csv.push('\n');
    for row in &table.rows {
        csv.push_str(&format!("{},{:e}", row.n, row.h));
        for v in &row.eigenvalues[..k] {
            csv.push_str(&format!(",{v:e}"));
        }
        csv.push('\n');
    }
    let json = envelope("convergence", &spec, Vec::new(), serde_json::to_value(&table)?)?;
    Ok(Output { json, csv: vec![("table".to_string(), csv)], status: 0 })
}

/// Writes the JSON to `out` and each CSV to `<out stem>_<label>.csv`; prints
/// the JSON when no path is given.
fn emit(output: &Output, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&output.json)? + "\n";
    let Some(out) = out else {
        print!("{text}");
        return Ok(());
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, text)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    for (label, body) in &output.csv {
        std::fs::write(out.with_file_name(format!("{stem}_{label}.csv")), body)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let (output, out) = match cli.command {
        Command::Solve { spec, mu, out } => (cmd_solve(&spec, mu)?, out),
        Command::Spectrum { spec, k, recursion, out } => (cmd_spectrum(&spec, k, recursion)?, out),
        Command::Check { spec, which, trials, seed, out } => (cmd_check(&spec, &which, trials, seed)?, out),
        Command::Poincare { spec, r, out } => (cmd_poincare(&spec, r)?, out),
        Command::Convergence { spec, resolutions, out } => (cmd_convergence(&spec, &resolutions)?, out),
    };
    emit(&output, out.as_deref())?;
    Ok(output.status)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Spec { line, column, .. } = e {
                eprintln!("  --> line {line}, column {column}");
            }
            ExitCode::from(1)
        }
    }
}
