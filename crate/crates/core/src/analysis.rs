//! Sampled checks of the sign conditions, uniqueness, the maximum principle
//! and Poincare/Sobolev-type constants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::assembly::{assemble_form, assemble_gram, nodal_l2_norm, product_gradient, subunit_derivative};
use crate::error::{Error, Result};
use crate::fields::{check_subunit, MatrixField, VectorField};
use crate::linalg::{self, LinearBackend};
use crate::problem::{BoundaryKind, Data, Operator, ProblemSpec};
use crate::solver::{solve_problem, Branch};
use crate::space::{DiscreteSpace, WeakSolution};

/// Quotients above this value count as unbounded.
pub const UNBOUNDED: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub u: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    pub value: f64,
}

/// Result of an empirical inequality check.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub holds: bool,
    pub constant: f64,
    /// The constant is a sampled lower bound of the true optimum.
    pub lower_bound: bool,
    pub witness: Option<Witness>,
    pub trials: usize,
    pub seed: u64,
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl InequalityReport {
    fn new(name: impl Into<String>, trials: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            holds: true,
            constant: 0.0,
            lower_bound: false,
            witness: None,
            trials,
            seed,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

fn with_bc(space: &Arc<DiscreteSpace>, bc: BoundaryKind) -> Arc<DiscreteSpace> {
    if space.bc == bc {
        space.clone()
    } else {
        Arc::new(space.with_bc(bc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativityCondition {
    Cond1I,
    Cond1Ii,
    Cond2I,
    Cond2Ii,
}

impl NegativityCondition {
    pub const ALL: [NegativityCondition; 4] = [Self::Cond1I, Self::Cond1Ii, Self::Cond2I, Self::Cond2Ii];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cond1I => "cond1_i",
            Self::Cond1Ii => "cond1_ii",
            Self::Cond2I => "cond2_i",
            Self::Cond2Ii => "cond2_ii",
        }
    }

    /// Condition (1) quantifies over the full space, (2) over the
    /// boundary-constrained one.
    pub fn strict(self) -> bool {
        matches!(self, Self::Cond1I | Self::Cond1Ii)
    }

    /// Uses the `G.S` drift (variant i) or the `H.R` drift (variant ii).
    pub fn uses_gs(self) -> bool {
        matches!(self, Self::Cond1I | Self::Cond2I)
    }
}

impl fmt::Display for NegativityCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NegativityCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::UnknownStrategy {
            kind: "negativity condition",
            name: s.to_string(),
            available: Self::ALL.map(|c| c.name()).join(", "),
        })
    }
}

/// `(int F u v + D.grad(uv), int u v)` with `D = G.S` or `H.R`, `grad(uv)`
/// by the elementwise product rule. `u`, `v` are dof vectors of `space`.
pub fn negativity_integral(
    space: &DiscreteSpace,
    op: &Operator,
    which: NegativityCondition,
    u: &[f64],
    v: &[f64],
) -> Result<(f64, f64)> {
    let (uf, vf) = (space.full_values(u), space.full_values(v));
    let mut total = 0.0;
    let mut uv = 0.0;
    for (ci, cell) in space.cells.iter().enumerate() {
        for (qi, node) in cell.nodes.iter().enumerate() {
            let x = &node.point;
            let f = op.zeroth.eval(x)?;
            let d = if which.uses_gs() { op.drift_s(x)? } else { op.drift_r(x)? };
            let p = cell.value(qi, &uf) * cell.value(qi, &vf);
            let grad = product_gradient(space, ci, qi, &uf, &vf);
            total += node.weight * (f * p + linalg::dot(&d, &grad));
            uv += node.weight * p;
        }
    }
    Ok((total, uv))
}

fn truncation(u: &[f64], k: f64) -> Vec<f64> {
    u.iter().map(|x| (x - k).max(0.0)).collect()
}

/// Sampled negativity condition: random pairs with `v = |v| sign(u)` plus
/// truncation pairs `(u, (u - k)^+)` at quantile levels `k >= 0`.
pub fn check_negativity(
    problem: &ProblemSpec,
    space: &Arc<DiscreteSpace>,
    which: NegativityCondition,
    trials: usize,
    seed: u64,
) -> Result<InequalityReport> {
    if trials == 0 {
        return Err(Error::InvalidRequest("trials must be >= 1".into()));
    }
    let bc = if which.strict() { BoundaryKind::Neumann } else { BoundaryKind::Dirichlet };
    let space = with_bc(space, bc);
    let n = space.dof_count;
    let op = &problem.operator;
    let mut rng = linalg::seeded_rng(seed);
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(trials + 90);
    for t in 0..trials {
        let u = linalg::normal_vec(&mut rng, n);
        let w = linalg::normal_vec(&mut rng, n);
        let v: Vec<f64> = u.iter().zip(&w).map(|(a, b)| b.abs() * a.signum()).collect();
        if t < 10 {
            let mut pos: Vec<f64> = u.iter().copied().filter(|x| *x > 0.0).collect();
            pos.sort_by(f64::total_cmp);
            for q in 1..10 {
                if let Some(&k) = pos.get(pos.len() * q / 10) {
                    pairs.push((u.clone(), truncation(&u, k)));
                }
            }
        }
        pairs.push((u, v));
    }
    let mut rep = InequalityReport::new(which.name(), 0, seed);
    let mut best = f64::INFINITY;
    let mut best_pair = None;
    for (u, v) in pairs {
        let (i, uv) = negativity_integral(&space, op, which, &u, &v)?;
        if uv < 1e-14 {
            continue;
        }
        rep.trials += 1;
        let value = if which.strict() { i / uv } else { i / linalg::norm_inf(&u) / linalg::norm_inf(&v) };
        if value < best {
            best = value;
            best_pair = Some((u, v, value));
        }
    }
    if rep.trials == 0 {
        return Err(Error::DegenerateSampling(trials));
    }
    rep.constant = best;
    rep.holds = if which.strict() { best > 0.0 } else { best >= -1e-10 };
    if !rep.holds {
        rep.witness = best_pair.map(|(u, v, value)| Witness { u, v: Some(v), value });
    }
    Ok(rep)
}

/// Value recorded for a negativity witness, recomputed from the pair.
pub fn negativity_value(
    space: &Arc<DiscreteSpace>,
    op: &Operator,
    which: NegativityCondition,
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    let bc = if which.strict() { BoundaryKind::Neumann } else { BoundaryKind::Dirichlet };
    let space = with_bc(space, bc);
    let (i, uv) = negativity_integral(&space, op, which, u, v)?;
    Ok(if which.strict() { i / uv } else { i / linalg::norm_inf(u) / linalg::norm_inf(v) })
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub precondition: bool,
    pub conditions: Vec<InequalityReport>,
    pub skipped: bool,
    pub branch: Option<Branch>,
    pub homogeneous_norm: Option<f64>,
    pub holds: Option<bool>,
}

/// Homogeneous problem under negativity condition (1) must have only the
/// zero solution.
pub fn verify_uniqueness(problem: &ProblemSpec, space: &Arc<DiscreteSpace>) -> Result<UniquenessReport> {
    let num = &problem.numerics;
    let conditions = [NegativityCondition::Cond1I, NegativityCondition::Cond1Ii]
        .into_iter()
        .map(|c| check_negativity(problem, space, c, num.negativity_trials, num.seed))
        .collect::<Result<Vec<_>>>()?;
    let precondition = conditions.iter().any(|c| c.holds);
    if !precondition {
        return Ok(UniquenessReport {
            precondition,
            conditions,
            skipped: true,
            branch: None,
            homogeneous_norm: None,
            holds: None,
        });
    }
    let homogeneous = Arc::new(problem.with_data(Data::homogeneous()));
    let out = solve_problem(&homogeneous, space)?;
    let norm = out.solution.as_ref().map(|u| linalg::norm_inf(&u.coeffs));
    let holds = out.branch == Branch::Unique && norm.is_some_and(|n| n <= 1e-10);
    Ok(UniquenessReport {
        precondition,
        conditions,
        skipped: false,
        branch: Some(out.branch),
        homogeneous_norm: norm,
        holds: Some(holds),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxPrincipleReport {
    pub holds: bool,
    pub interior_max: f64,
    pub boundary_sup_plus: f64,
    pub tolerance: f64,
    /// Largest `(A u)_i` over interior rows (nonpositive for subsolutions).
    pub max_residual: f64,
    pub negativity: InequalityReport,
}

/// `sup u <= sup_boundary u^+` for a discrete weak subsolution `u`, given by
/// its vertex values (any space on the same mesh).
pub fn verify_max_principle(problem: &ProblemSpec, space: &Arc<DiscreteSpace>, u: &WeakSolution) -> Result<MaxPrincipleReport> {
    let num = &problem.numerics;
    let negativity = check_negativity(problem, space, NegativityCondition::Cond2I, num.negativity_trials, num.seed)?;
    if !negativity.holds {
        return Err(Error::Precondition(format!(
            "negativity condition (2)-i fails (min integral {:e})",
            negativity.constant
        )));
    }
    let full = with_bc(space, BoundaryKind::Neumann);
    let spec = Arc::new(problem.with_bc(BoundaryKind::Neumann));
    let form = assemble_form(&full, &spec)?;
    let values = u.vertex_values();
    let au = linalg::matvec(&form.a, &values);
    let boundary = full.mesh.is_boundary();
    let scale = linalg::norm_inf_mat(&form.a) * linalg::norm_inf(&values);
    let row_tol = 1e-10 * scale.max(1.0);
    let mut rows = Vec::new();
    let mut max_residual = f64::NEG_INFINITY;
    for (i, (&r, &b)) in au.iter().zip(&boundary).enumerate() {
        if b {
            continue;
        }
        max_residual = max_residual.max(r);
        if r > row_tol {
            rows.push(i);
        }
    }
    if !rows.is_empty() {
        return Err(Error::NotSubsolution { rows, max_violation: max_residual });
    }
    let interior_max = values.iter().zip(&boundary).filter(|(_, b)| !**b).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    let boundary_max = values.iter().zip(&boundary).filter(|(_, b)| **b).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    let boundary_sup_plus = boundary_max.max(0.0);
    let tolerance = 1e-8 * linalg::norm_inf(&values).max(1.0);
    Ok(MaxPrincipleReport {
        holds: interior_max <= boundary_sup_plus + tolerance,
        interior_max,
        boundary_sup_plus,
        tolerance,
        max_residual,
        negativity,
    })
}

fn lr_norm(space: &DiscreteSpace, dofs: &[f64], shift: f64, r: f64) -> f64 {
    let vals: Vec<f64> = space.full_values(dofs).iter().map(|v| v - shift).collect();
    space.lp_norm_values(&vals, r)
}

fn energy(gq: &nalgebra_sparse::CsrMatrix<f64>, u: &[f64]) -> f64 {
    linalg::form(gq, u, u).max(0.0).sqrt()
}

/// Mean-deviation Poincare constant `C5` on a Neumann space. For `r = 2`
/// the constant is `1/sqrt(mu_2)` of the pencil `(Gq, M)`; for `r > 2` it
/// is a sampled lower bound.
pub fn estimate_global_poincare(
    space: &Arc<DiscreteSpace>,
    q: &MatrixField,
    r: f64,
    trials: usize,
    seed: u64,
    gain: Option<f64>,
    backend: &dyn LinearBackend,
) -> Result<InequalityReport> {
    if r < 2.0 {
        return Err(Error::InvalidRequest(format!("exponent r = {r} must be >= 2")));
    }
    let space = with_bc(space, BoundaryKind::Neumann);
    let (m, gq) = assemble_gram(&space, q)?;
    let k = (11).min(space.dof_count);
    let (vals, vecs) = backend.symmetric_eigs(&gq, &m, k)?;
    let mu2 = vals.get(1).copied().unwrap_or(0.0);
    if mu2 < 1e-12 {
        return Err(Error::NoPoincare(mu2));
    }
    let mut rep = InequalityReport::new("global_poincare", trials, seed);
    rep.details.insert("mu2".into(), mu2);
    rep.details.insert("r".into(), r);
    if let Some(w) = gain {
        if r > 2.0 * w {
            rep.notes.push(format!("r = {r} exceeds twice the declared gain {w}"));
        }
    }
    let measure = space.mesh.total_measure();
    let mut rng = linalg::seeded_rng(seed);
    let mut candidates: Vec<Vec<f64>> = (0..trials).map(|_| linalg::normal_vec(&mut rng, space.dof_count)).collect();
    candidates.extend(vecs.into_iter().skip(1));
    let mut sampled: f64 = 0.0;
    let mut weak: f64 = 0.0;
    let mut witness = None;
    for w in &candidates {
        let mean = space.mean(&space.full_values(w));
        let lhs = lr_norm(&space, w, mean, r);
        let den = energy(&gq, w);
        if lhs <= 1e-14 {
            continue;
        }
        let quotient = if den > 1e-14 { lhs / den } else { f64::INFINITY };
        if quotient > sampled {
            sampled = quotient;
            witness = Some(Witness { u: w.clone(), v: None, value: quotient });
        }
        let full = (den * den + linalg::form(&m, w, w)).sqrt();
        weak = weak.max(lr_norm(&space, w, 0.0, r) / full);
    }
    rep.details.insert("sampled_max".into(), sampled);
    // Weak form with the full QH1 norm; the bound follows from the mean
    // deviation estimate and Holder on the mean.
    let c5 = if r == 2.0 { 1.0 / mu2.sqrt() } else { sampled };
    rep.details.insert("weak_form_constant".into(), weak);
    rep.details.insert("weak_form_bound".into(), 2f64.sqrt() * c5.max(measure.powf(1.0 / r - 0.5)));
    rep.constant = c5;
    rep.lower_bound = r != 2.0;
    rep.holds = sampled <= UNBOUNDED;
    if !rep.holds {
        rep.witness = witness;
    }
    Ok(rep)
}

/// Axis-aligned containment of the Euclidean ball in the domain box.
fn ball_inside(space: &DiscreteSpace, center: &[f64], radius: f64) -> bool {
    center.len() == space.dimension()
        && space.mesh.bounds.iter().zip(center).all(|((lo, hi), c)| c - radius >= lo - 1e-12 && c + radius <= hi + 1e-12)
}

/// Cells with every vertex inside the closed ball.
pub fn discrete_ball(space: &DiscreteSpace, center: &[f64], radius: f64) -> Vec<usize> {
    let inside = |v: usize| {
        let p = &space.mesh.vertices[v];
        p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12)
    };
    (0..space.cells.len()).filter(|&c| space.cells[c].vertices.iter().all(|&v| inside(v))).collect()
}

struct Ball {
    inner: Vec<usize>,
    outer: Vec<usize>,
    inner_measure: f64,
    outer_measure: f64,
}

fn local_quotient(space: &DiscreteSpace, q: &MatrixField, ball: &Ball, radius: f64, vals: &[f64]) -> Result<(f64, f64)> {
    let mut mean = 0.0;
    for &c in &ball.inner {
        let cell = &space.cells[c];
        for (qi, node) in cell.nodes.iter().enumerate() {
            mean += node.weight * cell.value(qi, vals);
        }
    }
    mean /= ball.inner_measure;
    let mut lhs = 0.0;
    for &c in &ball.inner {
        let cell = &space.cells[c];
        for (qi, node) in cell.nodes.iter().enumerate() {
            lhs += node.weight * (cell.value(qi, vals) - mean).powi(2);
        }
    }
    let mut rhs = 0.0;
    for &c in &ball.outer {
        let cell = &space.cells[c];
        let g = cell.gradient(vals);
        for node in &cell.nodes {
            rhs += node.weight * crate::fields::quad_form(&q.eval(&node.point)?, &g);
        }
    }
    Ok(((lhs / ball.inner_measure).sqrt(), radius * (rhs / ball.outer_measure).sqrt()))
}

/// Local Poincare constant `C2` on Euclidean balls with dilation `beta`.
pub fn estimate_local_poincare(
    space: &Arc<DiscreteSpace>,
    q: &MatrixField,
    balls: &[(Vec<f64>, f64)],
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<InequalityReport> {
    if beta < 1.0 {
        return Err(Error::InvalidBall(format!("dilation beta = {beta} must be >= 1")));
    }
    if balls.is_empty() {
        return Err(Error::InvalidBall("no balls given".into()));
    }
    let space = with_bc(space, BoundaryKind::Neumann);
    let mut prepared = Vec::new();
    for (center, radius) in balls {
        if radius.is_nan() || *radius <= 0.0 || !ball_inside(&space, center, beta * radius) {
            return Err(Error::InvalidBall(format!("ball ({center:?}, {radius}) dilated by {beta} leaves the domain")));
        }
        let inner = discrete_ball(&space, center, *radius);
        let outer = discrete_ball(&space, center, beta * radius);
        if inner.is_empty() {
            return Err(Error::InvalidBall(format!("ball ({center:?}, {radius}) contains no mesh cell")));
        }
        let measure = |cells: &[usize]| cells.iter().map(|&c| space.mesh.cell_measures[c]).sum::<f64>();
        prepared.push(Ball { inner_measure: measure(&inner), outer_measure: measure(&outer), inner, outer });
    }
    let mut rng = linalg::seeded_rng(seed);
    let mut funcs: Vec<Vec<f64>> = (0..space.dimension())
        .map(|d| space.mesh.vertices.iter().map(|p| p[d]).collect())
        .collect();
    funcs.extend((0..trials).map(|_| linalg::normal_vec(&mut rng, space.mesh.vertex_count())));
    let mut rep = InequalityReport::new("local_poincare", funcs.len() * balls.len(), seed);
    rep.lower_bound = true;
    rep.details.insert("beta".into(), beta);
    for (ball, (_, radius)) in prepared.iter().zip(balls) {
        for f in &funcs {
            let (lhs, rhs) = local_quotient(&space, q, ball, *radius, f)?;
            if lhs <= 1e-12 {
                continue;
            }
            let quotient = if rhs < 1e-14 { f64::INFINITY } else { lhs / rhs };
            if quotient > rep.constant {
                rep.constant = quotient;
                if quotient > UNBOUNDED {
                    rep.holds = false;
                    rep.witness = Some(Witness { u: f.clone(), v: None, value: quotient });
                }
            }
        }
    }
    Ok(rep)
}

/// Sobolev constant `C3` on the Dirichlet space, sampled lower bound.
pub fn estimate_global_sobolev(
    space: &Arc<DiscreteSpace>,
    q: &MatrixField,
    sigma: f64,
    trials: usize,
    seed: u64,
    backend: &dyn LinearBackend,
) -> Result<InequalityReport> {
    if sigma <= 1.0 {
        return Err(Error::InvalidRequest(format!("sigma = {sigma} must exceed 1")));
    }
    let space = with_bc(space, BoundaryKind::Dirichlet);
    if space.dof_count == 0 {
        return Err(Error::InvalidResolution("Dirichlet space has no interior dofs".into()));
    }
    let (m, gq) = assemble_gram(&space, q)?;
    let (vals, vecs) = backend.symmetric_eigs(&gq, &m, 10.min(space.dof_count))?;
    let mu1 = vals.first().copied().unwrap_or(0.0);
    if mu1 < 1e-12 {
        return Err(Error::NoPoincare(mu1));
    }
    let mut rng = linalg::seeded_rng(seed);
    let mut funcs: Vec<Vec<f64>> = (0..trials).map(|_| linalg::normal_vec(&mut rng, space.dof_count)).collect();
    funcs.extend(vecs);
    let mut rep = InequalityReport::new("global_sobolev", funcs.len(), seed);
    rep.lower_bound = true;
    rep.details.insert("sigma".into(), sigma);
    rep.details.insert("mu1".into(), mu1);
    for f in &funcs {
        let lhs = lr_norm(&space, f, 0.0, 2.0 * sigma);
        if lhs <= 1e-14 {
            continue;
        }
        let den = energy(&gq, f);
        let quotient = if den < 1e-14 { f64::INFINITY } else { lhs / den };
        if quotient > rep.constant {
            rep.constant = quotient;
            if quotient > UNBOUNDED {
                rep.holds = false;
                rep.witness = Some(Witness { u: f.clone(), v: None, value: quotient });
            }
        }
    }
    Ok(rep)
}

/// `|W u|_2 <= |u|_QH1` over random `u` for a subunit field `W`.
pub fn verify_subunit_bound(
    space: &Arc<DiscreteSpace>,
    q: &MatrixField,
    w: &VectorField,
    trials: usize,
    seed: u64,
) -> Result<InequalityReport> {
    let subunit = check_subunit(w, q, &space.sample_points(), crate::assembly::DIRECTIONS)?;
    let (m, gq) = assemble_gram(space, q)?;
    let mut rng = linalg::seeded_rng(seed);
    let mut rep = InequalityReport::new("subunit_bound", trials, seed);
    rep.details.insert("subunit_worst_ratio".into(), subunit.worst_ratio);
    if !subunit.ok {
        rep.notes.push("field is not subunit; bound not expected".into());
    }
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..trials {
        let u = linalg::normal_vec(&mut rng, space.dof_count);
        let sol = WeakSolution::new(space.clone(), u.clone());
        let wu = nodal_l2_norm(space, &subunit_derivative(space, w, &sol)?);
        let qh1 = (linalg::form(&m, &u, &u) + linalg::form(&gq, &u, &u)).sqrt();
        rep.constant = rep.constant.max(wu / qh1);
        let excess = wu - qh1;
        if excess > worst_excess {
            worst_excess = excess;
            if excess > 1e-10 {
                rep.witness = Some(Witness { u, v: None, value: excess });
            }
        }
    }
    rep.details.insert("max_excess".into(), worst_excess);
    rep.holds = worst_excess <= 1e-10;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarExpr;
    use crate::mesh::build_interval_mesh;
    use crate::problem::Domain;
    use crate::space::build_space;
    use std::f64::consts::PI;

    fn spec(f: f64, b: f64, n: usize, bc: BoundaryKind) -> (ProblemSpec, Arc<DiscreteSpace>) {
        let mut op = Operator::principal(MatrixField::identity(1));
        op.zeroth = ScalarExpr::constant(f);
        let p = ProblemSpec::new(Domain::Interval { a: 0.0, b, n }, bc, op, Data::homogeneous());
        let s = Arc::new(build_space(Arc::new(build_interval_mesh(0.0, b, n).unwrap()), bc));
        (p, s)
    }

    #[test]
    fn negativity_examples() {
        let (p, s) = spec(1.0, 1.0, 20, BoundaryKind::Neumann);
        let r = check_negativity(&p, &s, NegativityCondition::Cond1I, 50, 1).unwrap();
        assert!(r.holds && (r.constant - 1.0).abs() < 1e-12);
        let (p, s) = spec(-1.0, 1.0, 20, BoundaryKind::Neumann);
        let r = check_negativity(&p, &s, NegativityCondition::Cond1I, 50, 1).unwrap();
        assert!(!r.holds);
        let w = r.witness.unwrap();
        let again = negativity_value(&s, &p.operator, NegativityCondition::Cond1I, &w.u, w.v.as_ref().unwrap()).unwrap();
        assert_eq!(again, w.value);
        let (p, s) = spec(0.0, 1.0, 20, BoundaryKind::Neumann);
        let r = check_negativity(&p, &s, NegativityCondition::Cond2I, 50, 1).unwrap();
        assert!(r.holds && r.constant == 0.0);
    }

    #[test]
    fn poincare_on_unit_interval() {
        let (_, s) = spec(0.0, 1.0, 200, BoundaryKind::Neumann);
        let b = linalg::select_backend("dense", 201).unwrap();
        let r = estimate_global_poincare(&s, &MatrixField::identity(1), 2.0, 20, 3, None, b.as_ref()).unwrap();
        assert!((r.constant - 1.0 / PI).abs() < 1e-2 / PI);
        assert!(r.details["sampled_max"] <= r.constant + 1e-10);
    }

    #[test]
    fn local_poincare_linear_function() {
        let (_, s) = spec(0.0, 1.0, 100, BoundaryKind::Neumann);
        let r = estimate_local_poincare(&s, &MatrixField::identity(1), &[(vec![0.5], 0.2)], 1.0, 0, 1).unwrap();
        assert!((r.constant - 1.0 / 3f64.sqrt()).abs() < 1e-2);
        assert!(matches!(
            estimate_local_poincare(&s, &MatrixField::identity(1), &[(vec![0.9], 0.2)], 1.0, 0, 1),
            Err(Error::InvalidBall(_))
        ));
    }
}
