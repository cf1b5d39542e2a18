//! Named checks dispatched by the command line.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    check_negativity, estimate_global_sobolev, estimate_local_poincare, verify_max_principle, verify_subunit_bound,
    verify_uniqueness, NegativityCondition,
};
use crate::assembly::{assemble_form, check_boundedness, check_coercivity, DIRECTIONS};
use crate::error::{Error, Result};
use crate::fields::{check_subunit, scan_comparability};
use crate::linalg;
use crate::problem::{BoundaryKind, ProblemSpec};
use crate::solver::solve_dirichlet;
use crate::space::{build_space, DiscreteSpace, WeakSolution};

/// Inputs shared by all checks.
pub struct CheckContext {
    pub problem: Arc<ProblemSpec>,
    pub space: Arc<DiscreteSpace>,
    pub trials: usize,
    pub seed: u64,
}

impl CheckContext {
    pub fn new(problem: Arc<ProblemSpec>, trials: usize, seed: u64) -> Result<Self> {
        let mesh = Arc::new(problem.domain.build_mesh()?);
        let space = Arc::new(build_space(mesh, problem.bc));
        Ok(Self { problem, space, trials, seed })
    }

    fn space_with(&self, bc: BoundaryKind) -> Arc<DiscreteSpace> {
        if self.space.bc == bc {
            self.space.clone()
        } else {
            Arc::new(self.space.with_bc(bc))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    /// `None` when the check was skipped because a precondition is unmet.
    pub holds: Option<bool>,
    pub report: Value,
}

impl CheckOutcome {
    fn new(holds: bool, report: impl Serialize) -> Result<Self> {
        Ok(Self { holds: Some(holds), report: serde_json::to_value(report)? })
    }
}

pub trait Check: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome>;
}

struct Negativity(NegativityCondition);

impl Check for Negativity {
    fn name(&self) -> &'static str {
        self.0.name()
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let rep = check_negativity(&ctx.problem, &ctx.space, self.0, ctx.trials, ctx.seed)?;
        CheckOutcome::new(rep.holds, rep)
    }
}

struct Uniqueness;

impl Check for Uniqueness {
    fn name(&self) -> &'static str {
        "uniqueness"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let rep = verify_uniqueness(&ctx.problem, &ctx.space_with(BoundaryKind::Neumann))?;
        Ok(CheckOutcome { holds: rep.holds, report: serde_json::to_value(rep)? })
    }
}

struct MaxPrinciple;

impl Check for MaxPrinciple {
    fn name(&self) -> &'static str {
        "maxprinciple"
    }
    /// Uses `data.candidate` when given, otherwise the Dirichlet solution.
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let (u, source) = match &ctx.problem.data.candidate {
            Some(expr) => {
                let full = ctx.space_with(BoundaryKind::Neumann);
                let values = full.interpolate(expr)?;
                (WeakSolution::new(full, values), "candidate")
            }
            None => {
                let problem = Arc::new(ctx.problem.with_bc(BoundaryKind::Dirichlet));
                let out = solve_dirichlet(&problem, &ctx.space_with(BoundaryKind::Dirichlet))?;
                let u = out
                    .solution
                    .ok_or_else(|| Error::Precondition("Dirichlet problem has no solution".into()))?;
                (u, "dirichlet_solution")
            }
        };
        let rep = verify_max_principle(&ctx.problem, &ctx.space, &u)?;
        let holds = rep.holds;
        CheckOutcome::new(holds, json!({ "source": source, "result": rep }))
    }
}

struct Subunit;

impl Check for Subunit {
    fn name(&self) -> &'static str {
        "subunit"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let op = &ctx.problem.operator;
        let points = ctx.space.sample_points();
        let mut entries = Vec::new();
        let mut holds = true;
        for (label, tuple) in [("R", &op.r), ("S", &op.s), ("T", &ctx.problem.data.t)] {
            for (i, w) in tuple.fields().iter().enumerate() {
                let pointwise = check_subunit(w, &op.q, &points, DIRECTIONS)?;
                let bound = verify_subunit_bound(&ctx.space, &op.q, w, ctx.trials, ctx.seed)?;
                holds &= pointwise.ok && bound.holds;
                entries.push(json!({ "field": format!("{label}[{i}]"), "pointwise": pointwise, "norm_bound": bound }));
            }
        }
        CheckOutcome::new(holds, entries)
    }
}

struct Comparability;

impl Check for Comparability {
    fn name(&self) -> &'static str {
        "comparability"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let op = &ctx.problem.operator;
        let scan = scan_comparability(&op.p, &op.q, &ctx.space.sample_points(), DIRECTIONS)?;
        let holds = scan.violation.is_none() && scan.lower > 0.0 && scan.upper.is_finite();
        CheckOutcome::new(
            holds,
            json!({
                "c1": scan.lower,
                "C1": if scan.upper.is_finite() { json!(scan.upper) } else { json!("infinity") },
                "violation": scan.violation.map(|e| e.to_string()),
            }),
        )
    }
}

struct Boundedness;

impl Check for Boundedness {
    fn name(&self) -> &'static str {
        "boundedness"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let form = assemble_form(&ctx.space, &ctx.problem)?;
        let rep = check_boundedness(&form, ctx.trials, ctx.seed)?;
        let mut holds = rep.c6_empirical.is_finite();
        if let Some(bound) = rep.c6_formula {
            holds &= rep.c6_empirical <= bound * (1.0 + 1e-9);
        }
        CheckOutcome::new(holds, rep)
    }
}

struct Coercivity;

impl Check for Coercivity {
    fn name(&self) -> &'static str {
        "coercivity"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let form = assemble_form(&ctx.space, &ctx.problem)?;
        let rep = check_coercivity(&form, ctx.trials, ctx.seed)?;
        CheckOutcome::new(rep.holds, rep)
    }
}

struct Sobolev;

impl Check for Sobolev {
    fn name(&self) -> &'static str {
        "sobolev"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let space = ctx.space_with(BoundaryKind::Dirichlet);
        let backend = linalg::select_backend(&ctx.problem.numerics.backend, space.dof_count)?;
        let q = &ctx.problem.operator.q;
        let rep = estimate_global_sobolev(&space, q, ctx.problem.exponents.sigma, ctx.trials, ctx.seed, backend.as_ref())?;
        CheckOutcome::new(rep.holds, rep)
    }
}

struct LocalPoincare;

impl LocalPoincare {
    /// Configured balls, or one centred ball whose dilation fits the box.
    fn balls(ctx: &CheckContext) -> Result<Vec<(Vec<f64>, f64)>> {
        let num = &ctx.problem.numerics;
        let dim = ctx.space.dimension();
        if num.balls.is_empty() {
            let bounds = &ctx.space.mesh.bounds;
            let center: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
            let half = bounds.iter().map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min);
            return Ok(vec![(center, 0.5 * half / num.beta.max(1.0))]);
        }
        num.balls
            .iter()
            .map(|b| {
                if b.len() != dim + 1 {
                    return Err(Error::InvalidBall(format!("ball {b:?} needs {dim} center coordinates and a radius")));
                }
                Ok((b[..dim].to_vec(), b[dim]))
            })
            .collect()
    }
}

impl Check for LocalPoincare {
    fn name(&self) -> &'static str {
        "local_poincare"
    }
    fn run(&self, ctx: &CheckContext) -> Result<CheckOutcome> {
        let balls = Self::balls(ctx)?;
        let q = &ctx.problem.operator.q;
        let rep = estimate_local_poincare(&ctx.space, q, &balls, ctx.problem.numerics.beta, ctx.trials, ctx.seed)?;
        CheckOutcome::new(rep.holds, rep)
    }
}

pub fn registry() -> Vec<Box<dyn Check>> {
    let mut out: Vec<Box<dyn Check>> =
        NegativityCondition::ALL.into_iter().map(|c| Box::new(Negativity(c)) as Box<dyn Check>).collect();
    out.push(Box::new(Uniqueness));
    out.push(Box::new(MaxPrinciple));
    out.push(Box::new(Subunit));
    out.push(Box::new(Comparability));
    out.push(Box::new(Boundedness));
    out.push(Box::new(Coercivity));
    out.push(Box::new(Sobolev));
    out.push(Box::new(LocalPoincare));
    out
}

pub fn check_names() -> Vec<&'static str> {
    registry().iter().map(|c| c.name()).collect()
}

pub fn find_check(name: &str) -> Result<Box<dyn Check>> {
    registry().into_iter().find(|c| c.name() == name).ok_or_else(|| Error::UnknownStrategy {
        kind: "check",
        name: name.to_string(),
        available: check_names().join(", "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique_and_resolvable() {
        let names = check_names();
        assert_eq!(names.len(), 12);
        for n in &names {
            assert_eq!(find_check(n).unwrap().name(), *n);
        }
        assert!(matches!(find_check("nope"), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn convex_parabola_candidate() {
        let text = "[domain]\nkind = \"interval\"\na = \"0\"\nb = \"1\"\nn = 50\nbc = \"dirichlet\"\n\
                    [operator]\nP = [[\"1\"]]\n[data]\nf = \"0\"\ncandidate = \"x^2 - x\"\n";
        let p = Arc::new(ProblemSpec::from_toml_str(text).unwrap());
        let ctx = CheckContext::new(p, 100, 1).unwrap();
        let out = find_check("maxprinciple").unwrap().run(&ctx).unwrap();
        assert_eq!(out.holds, Some(true));
    }
}
