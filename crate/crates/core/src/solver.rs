//! Shifted coercive solves and the Fredholm alternative for the Neumann and
//! Dirichlet problems.

use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::assembly::{assemble_form, check_coercivity, AssembledForm};
use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{BoundaryKind, ProblemSpec};
use crate::space::{DiscreteSpace, WeakSolution};

const GAMMA_MARGIN: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-10;

/// Shift `gamma` making `A + gamma M` coercive with constant `c1/4` in QH1.
/// Cached on the form after the first call.
pub fn find_shift_gamma(form: &AssembledForm) -> Result<f64> {
    if let Some(&g) = form.gamma.get() {
        return Ok(g);
    }
    let c1 = form.c1_hat;
    if !(c1.is_finite() && c1 > 0.0) {
        return Err(Error::CoercivityFailure(c1));
    }
    let num = &form.problem.numerics;
    let rep = check_coercivity(form, num.trials, num.seed)?;
    if !rep.c7_empirical.is_finite() {
        return Err(Error::CoercivityFailure(rep.c7_empirical));
    }
    let mut trials: Vec<Vec<f64>> = rep.extremal.into_iter().collect();
    let mut rng = linalg::seeded_rng(num.seed);
    trials.extend((0..num.trials).map(|_| linalg::normal_vec(&mut rng, form.dofs())));
    let mut margin = GAMMA_MARGIN;
    for _ in 0..=3 {
        let gamma = rep.c7_empirical + c1 / 4.0 + margin;
        let ok = trials.iter().all(|u| {
            let lhs = linalg::form(&form.a, u, u) + gamma * linalg::form(&form.m, u, u);
            lhs >= c1 / 4.0 * form.qh1_norm(u).powi(2)
        });
        if ok {
            let _ = form.gamma.set(gamma);
            return Ok(gamma);
        }
        margin *= 2.0;
    }
    Err(Error::CoercivityFailure(rep.c7_empirical))
}

/// Output of [`solve_shifted`].
#[derive(Debug, Clone, Serialize)]
pub struct ShiftedSolve {
    pub mu: f64,
    pub gamma: f64,
    pub solution: WeakSolution,
    pub relative_residual: f64,
    pub qh1_norm: f64,
    /// `sqrt(b^T (M + Gq)^-1 b)`, the dual QH1 norm of the load.
    pub rhs_dual_norm: f64,
    /// `qh1_norm / rhs_dual_norm`, to be compared with `4 / c1`.
    pub bound_ratio: f64,
    pub bound_limit: f64,
}

fn relative_residual(a: &nalgebra_sparse::CsrMatrix<f64>, u: &[f64], b: &[f64]) -> f64 {
    let au = linalg::matvec(a, u);
    let r: Vec<f64> = au.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = linalg::norm_inf_mat(a) * linalg::norm_inf(u) + linalg::norm_inf(b);
    if scale == 0.0 {
        0.0
    } else {
        linalg::norm_inf(&r) / scale
    }
}

/// Solves `(A + mu M) u = rhs` for `mu >= gamma`.
pub fn solve_shifted(form: &AssembledForm, mu: f64, rhs: &[f64]) -> Result<ShiftedSolve> {
    let gamma = find_shift_gamma(form)?;
    if mu < gamma {
        return Err(Error::Precondition(format!("mu = {mu} is below the coercivity shift gamma = {gamma}")));
    }
    if rhs.len() != form.dofs() {
        return Err(Error::InvalidData(format!("rhs has {} entries, expected {}", rhs.len(), form.dofs())));
    }
    let backend = form.backend()?;
    let k = linalg::combine(1.0, &form.a, mu, &form.m);
    let u = backend.factor(&k)?.solve(rhs);
    let relative_residual = relative_residual(&k, &u, rhs);
    let h = form.h_matrix();
    let hinv_b = backend.factor(&h)?.solve(rhs);
    let rhs_dual_norm = linalg::dot(rhs, &hinv_b).max(0.0).sqrt();
    let qh1_norm = form.qh1_norm(&u);
    let bound_ratio = if rhs_dual_norm > 0.0 { qh1_norm / rhs_dual_norm } else { 0.0 };
    Ok(ShiftedSolve {
        mu,
        gamma,
        solution: form.solution(u),
        relative_residual,
        qh1_norm,
        rhs_dual_norm,
        bound_ratio,
        bound_limit: 4.0 / form.c1_hat,
    })
}

/// Null-space bases of `A` and `A*` together with rank diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct NullSpaces {
    pub n_basis: Vec<Vec<f64>>,
    pub nstar_basis: Vec<Vec<f64>>,
    pub smallest_singular_values: Vec<f64>,
    pub largest_singular_value: f64,
    pub rank_ambiguous: bool,
}

/// Kernels of `A` and of the independently assembled adjoint, `M`-orthonormal.
pub fn null_spaces(form: &AssembledForm, tol_rank: f64) -> Result<NullSpaces> {
    let adj = form.adjoint()?;
    let analysis = form.backend()?.analyze(&form.a, &adj.a, &form.m, tol_rank)?;
    let (small, smax) = analysis.singular_values();
    Ok(NullSpaces {
        n_basis: analysis.kernel().to_vec(),
        nstar_basis: analysis.adjoint_kernel().to_vec(),
        smallest_singular_values: small.to_vec(),
        largest_singular_value: smax,
        rank_ambiguous: analysis.ambiguous(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Unique,
    Alternative,
}

fn infinity_marker<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("infinity")
    } else {
        s.serialize_f64(*v)
    }
}

/// Empirical constant of `|u|_QH1 <= C8 (|f|_2 + sqrt(K) |g|_2)`.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    #[serde(serialize_with = "infinity_marker")]
    pub bound_c8: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `4 / c1` when the solve was shifted by at least `gamma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

/// `|f|_2 + sqrt(K) |g|_2` by quadrature.
pub fn data_norm(space: &DiscreteSpace, problem: &ProblemSpec) -> Result<f64> {
    let d = &problem.data;
    Ok(space.lp_norm_expr(&d.f, 2.0)? + (d.g.len() as f64).sqrt() * space.lp_norm_vector(&d.g, 2.0)?)
}

/// Stability report for a solution `u` of the problem's data. With
/// `lambda_shift >= gamma` the constant is compared against `4 / c1`.
pub fn stability_report(form: &AssembledForm, u: &[f64], lambda_shift: Option<f64>) -> Result<StabilityReport> {
    let lhs = form.qh1_norm(u);
    let rhs = data_norm(&form.space, &form.problem)?;
    let bound_c8 = if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let reference = match lambda_shift {
        Some(mu) if mu >= find_shift_gamma(form)? => Some(4.0 / form.c1_hat),
        _ => None,
    };
    let holds = reference.is_none_or(|r| bound_c8 <= r + 1e-6);
    Ok(StabilityReport { bound_c8, lhs, rhs, holds, reference })
}

/// Result of the Fredholm pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct FredholmOutcome {
    pub branch: Branch,
    pub solution: Option<WeakSolution>,
    pub dim_n: usize,
    pub dim_nstar: usize,
    pub n_basis: Vec<WeakSolution>,
    pub nstar_basis: Vec<WeakSolution>,
    pub compatible: Option<bool>,
    /// `int f w + g T w` per adjoint null vector `w`, scaled to unit max norm
    /// with `int w >= 0`.
    pub compatibility_residuals: Vec<f64>,
    pub galerkin_residual: Option<f64>,
    pub smallest_singular_values: Vec<f64>,
    pub largest_singular_value: f64,
    pub stability: Option<StabilityReport>,
    pub backend: String,
    pub warnings: Vec<String>,
}

/// Unit max-norm scaling with nonnegative integral.
fn normalize_null_vector(space: &DiscreteSpace, w: &[f64]) -> Vec<f64> {
    let mx = linalg::norm_inf(w);
    let integral = space.mean(&space.full_values(w));
    let sign = if integral < 0.0 { -1.0 } else { 1.0 };
    w.iter().map(|x| sign * x / mx).collect()
}

fn check_bc(space: &DiscreteSpace, want: BoundaryKind) -> Result<()> {
    if space.bc != want {
        return Err(Error::Precondition(format!("expected a {want:?} space, got {:?}", space.bc)));
    }
    Ok(())
}

/// Fredholm alternative for the Neumann problem on `space`.
pub fn solve_neumann(problem: &Arc<ProblemSpec>, space: &Arc<DiscreteSpace>) -> Result<FredholmOutcome> {
    check_bc(space, BoundaryKind::Neumann)?;
    fredholm(&assemble_form(space, problem)?)
}

/// Fredholm alternative for the homogeneous Dirichlet problem on `space`.
pub fn solve_dirichlet(problem: &Arc<ProblemSpec>, space: &Arc<DiscreteSpace>) -> Result<FredholmOutcome> {
    check_bc(space, BoundaryKind::Dirichlet)?;
    fredholm(&assemble_form(space, problem)?)
}

/// Dispatches on the space's boundary kind.
pub fn solve_problem(problem: &Arc<ProblemSpec>, space: &Arc<DiscreteSpace>) -> Result<FredholmOutcome> {
    match space.bc {
        BoundaryKind::Neumann => solve_neumann(problem, space),
        BoundaryKind::Dirichlet => solve_dirichlet(problem, space),
    }
}

/// Fredholm pipeline on an assembled form.
pub fn fredholm(form: &AssembledForm) -> Result<FredholmOutcome> {
    let space = &form.space;
    let b = form.rhs()?;
    let adj = form.adjoint()?;
    let backend = form.backend()?;
    let analysis = backend.analyze(&form.a, &adj.a, &form.m, form.problem.numerics.tol_rank)?;
    let mut warnings = form.warnings.clone();
    if analysis.ambiguous() {
        warnings.push("rank ambiguous: a singular value lies within a factor 10 of the rank threshold".into());
    }
    let (small, smax) = analysis.singular_values();
    let n_basis = analysis.kernel().to_vec();
    let nstar_basis = analysis.adjoint_kernel().to_vec();
    if n_basis.len() != nstar_basis.len() {
        warnings.push(format!("dim N = {} differs from dim N* = {}", n_basis.len(), nstar_basis.len()));
    }
    let mut outcome = FredholmOutcome {
        branch: Branch::Unique,
        solution: None,
        dim_n: n_basis.len(),
        dim_nstar: nstar_basis.len(),
        n_basis: Vec::new(),
        nstar_basis: Vec::new(),
        compatible: None,
        compatibility_residuals: Vec::new(),
        galerkin_residual: None,
        smallest_singular_values: small.to_vec(),
        largest_singular_value: smax,
        stability: None,
        backend: backend.name().to_string(),
        warnings,
    };
    let u = if n_basis.is_empty() && nstar_basis.is_empty() {
        Some(backend.factor(&form.a)?.solve(&b))
    } else {
        outcome.branch = Branch::Alternative;
        let dn = data_norm(space, &form.problem)?;
        let mut compatible = true;
        for w in &nstar_basis {
            let w = normalize_null_vector(space, w);
            let r = linalg::dot(&w, &b);
            compatible &= r.abs() <= 1e-9 * form.l2_norm(&w) * dn;
            outcome.compatibility_residuals.push(r);
        }
        outcome.compatible = Some(compatible);
        outcome.n_basis = n_basis.iter().map(|v| form.solution(v.clone())).collect();
        outcome.nstar_basis = nstar_basis.iter().map(|v| form.solution(v.clone())).collect();
        if compatible {
            let mut u = analysis.particular(&b)?;
            linalg::m_project_out(&form.m, &n_basis, &mut u);
            Some(u)
        } else {
            None
        }
    };
    if let Some(u) = u {
        let res = relative_residual(&form.a, &u, &b);
        if res > RESIDUAL_TOL {
            outcome.warnings.push(format!("Galerkin residual {res:e} exceeds {RESIDUAL_TOL:e}"));
        }
        outcome.galerkin_residual = Some(res);
        outcome.stability = Some(stability_report(form, &u, None)?);
        outcome.solution = Some(form.solution(u));
    }
    Ok(outcome)
}

impl FredholmOutcome {
    /// Unique or compatible alternative.
    pub fn solvable(&self) -> bool {
        self.solution.is_some()
    }
}
