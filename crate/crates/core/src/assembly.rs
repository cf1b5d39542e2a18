//! Assembly of the bilinear form, its adjoint, the load functional and the
//! mass and degenerate-gradient Gram matrices.

use std::sync::Arc;

use nalgebra_sparse::CsrMatrix;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::fields::{check_subunit, scan_comparability, MatrixField, SubunitTuple, VectorField};
use crate::linalg::{self, LinearBackend};
use crate::problem::{Operator, ProblemSpec};
use crate::space::{DiscreteSpace, WeakSolution};

/// Directions per sample point used by the pointwise form checks.
pub const DIRECTIONS: usize = 32;

/// Relative asymmetry below which `A` is treated as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative transpose mismatch above which adjoint assembly is rejected.
pub const ADJOINT_TOL: f64 = 1e-9;

/// Matrices of a discretized problem. `a[i][j] = L(phi_j, phi_i)`.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub a: CsrMatrix<f64>,
    pub m: CsrMatrix<f64>,
    pub gq: CsrMatrix<f64>,
    pub c1_hat: f64,
    pub big_c1_hat: f64,
    pub space: Arc<DiscreteSpace>,
    pub problem: Arc<ProblemSpec>,
    /// Coefficients actually assembled (the adjoint operator for adjoint forms).
    pub operator: Operator,
    pub warnings: Vec<String>,
    /// Cached coercivity shift.
    pub(crate) gamma: std::sync::OnceLock<f64>,
}

fn cell_err(cell: usize) -> impl Fn(Error) -> Error {
    move |e| Error::CellEvaluation { cell, source: Box::new(e) }
}

fn assemble_operator(space: &Arc<DiscreteSpace>, problem: &Arc<ProblemSpec>, op: Operator) -> Result<AssembledForm> {
    let n = space.dof_count;
    let mut ta = Vec::new();
    let mut tm = Vec::new();
    let mut tg = Vec::new();
    let dim = space.dimension();
    for (ci, cell) in space.cells.iter().enumerate() {
        let nv = cell.vertices.len();
        let dofs: Vec<Option<usize>> = cell.vertices.iter().map(|&v| space.dof_map[v]).collect();
        let mut la = vec![0.0; nv * nv];
        let mut lm = vec![0.0; nv * nv];
        let mut lg = vec![0.0; nv * nv];
        for node in &cell.nodes {
            let x = &node.point;
            let err = cell_err(ci);
            let p = op.p.eval(x).map_err(&err)?;
            let q = op.q.eval(x).map_err(&err)?;
            let br = op.drift_r(x).map_err(&err)?;
            let bs = op.drift_s(x).map_err(&err)?;
            let f = op.zeroth.eval(x).map_err(&err)?;
            let w = node.weight;
            for a in 0..nv {
                let (ga, pa) = (&cell.grads[a], node.basis[a]);
                for b in 0..nv {
                    let (gb, pb) = (&cell.grads[b], node.basis[b]);
                    let mut pform = 0.0;
                    let mut qform = 0.0;
                    for i in 0..dim {
                        for j in 0..dim {
                            pform += ga[i] * p[i * dim + j] * gb[j];
                            qform += ga[i] * q[i * dim + j] * gb[j];
                        }
                    }
                    let drift = pa * linalg::dot(&br, gb) + pb * linalg::dot(&bs, ga);
                    la[a * nv + b] += w * (pform + drift + f * pa * pb);
                    lm[a * nv + b] += w * pa * pb;
                    lg[a * nv + b] += w * qform;
                }
            }
        }
        for a in 0..nv {
            let Some(i) = dofs[a] else { continue };
            for b in 0..nv {
                let Some(j) = dofs[b] else { continue };
                ta.push((i, j, la[a * nv + b]));
                tm.push((i, j, lm[a * nv + b]));
                tg.push((i, j, lg[a * nv + b]));
            }
        }
    }

    let mut warnings = problem.exponent_warnings();
    let points = space.sample_points();
    for (label, tuple) in [("R", &op.r), ("S", &op.s)] {
        for (k, w) in tuple.fields().iter().enumerate() {
            let rep = check_subunit(w, &op.q, &points, DIRECTIONS)?;
            if !rep.ok {
                warnings.push(format!(
                    "{label}[{k}] is not subunit for Q (worst ratio {:.6e})",
                    rep.worst_ratio
                ));
            }
        }
    }
    let scan = scan_comparability(&op.p, &op.q, &points, DIRECTIONS)?;
    if let Some(v) = scan.violation {
        warnings.push(v.to_string());
    }
    Ok(AssembledForm {
        a: linalg::from_triplets(n, &ta),
        m: linalg::from_triplets(n, &tm),
        gq: linalg::from_triplets(n, &tg),
        c1_hat: scan.lower,
        big_c1_hat: scan.upper,
        space: space.clone(),
        problem: problem.clone(),
        operator: op,
        warnings,
        gamma: Default::default(),
    })
}

/// Assembles `A`, `M` and `Gq` for the problem's operator on `space`.
pub fn assemble_form(space: &Arc<DiscreteSpace>, problem: &Arc<ProblemSpec>) -> Result<AssembledForm> {
    assemble_operator(space, problem, problem.operator.clone())
}

/// Assembles the adjoint operator independently and checks it against the
/// transpose of the primal matrix.
pub fn assemble_adjoint(space: &Arc<DiscreteSpace>, problem: &Arc<ProblemSpec>) -> Result<AssembledForm> {
    assemble_form(space, problem)?.adjoint()
}

impl AssembledForm {
    pub fn adjoint(&self) -> Result<AssembledForm> {
        let adj = assemble_operator(&self.space, &self.problem, self.operator.adjoint())?;
        let mismatch = linalg::transpose_mismatch(&self.a, &adj.a);
        if mismatch > ADJOINT_TOL {
            return Err(Error::TransposeMismatch(mismatch));
        }
        Ok(adj)
    }

    pub fn dofs(&self) -> usize {
        self.space.dof_count
    }

    pub fn backend(&self) -> Result<Box<dyn LinearBackend>> {
        linalg::select_backend(&self.problem.numerics.backend, self.dofs())
    }

    /// `M + Gq`, the Gram matrix of the QH1 inner product.
    pub fn h_matrix(&self) -> CsrMatrix<f64> {
        linalg::combine(1.0, &self.m, 1.0, &self.gq)
    }

    pub fn is_symmetric(&self) -> bool {
        linalg::is_symmetric(&self.a, SYMMETRY_TOL)
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        linalg::form(&self.m, u, u).max(0.0).sqrt()
    }

    pub fn qh1_norm(&self, u: &[f64]) -> f64 {
        (linalg::form(&self.m, u, u) + linalg::form(&self.gq, u, u)).max(0.0).sqrt()
    }

    /// Coefficient-level self-adjointness: `H.R == G.S` at every quadrature node.
    pub fn drift_self_adjoint(&self) -> Result<bool> {
        drift_self_adjoint(&self.space, &self.operator)
    }

    pub fn solution(&self, coeffs: Vec<f64>) -> WeakSolution {
        WeakSolution::new(self.space.clone(), coeffs)
    }

    /// Load vector of the problem's data.
    pub fn rhs(&self) -> Result<Vec<f64>> {
        let d = &self.problem.data;
        assemble_rhs(&self.space, &d.f, &d.t, &d.g)
    }
}

pub fn drift_self_adjoint(space: &DiscreteSpace, op: &Operator) -> Result<bool> {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (ci, cell) in space.cells.iter().enumerate() {
        for node in &cell.nodes {
            let r = op.drift_r(&node.point).map_err(cell_err(ci))?;
            let s = op.drift_s(&node.point).map_err(cell_err(ci))?;
            for (a, b) in r.iter().zip(&s) {
                diff = diff.max((a - b).abs());
                scale = scale.max(a.abs()).max(b.abs());
            }
        }
    }
    Ok(diff <= 1e-12 * scale.max(1e-300) || diff == 0.0)
}

/// Mass matrix and Gram matrix of `<grad u, Q grad v>` alone.
pub fn assemble_gram(space: &DiscreteSpace, q: &MatrixField) -> Result<(CsrMatrix<f64>, CsrMatrix<f64>)> {
    let dim = space.dimension();
    let mut tm = Vec::new();
    let mut tg = Vec::new();
    for (ci, cell) in space.cells.iter().enumerate() {
        for node in &cell.nodes {
            let qm = q.eval(&node.point).map_err(cell_err(ci))?;
            for (a, &va) in cell.vertices.iter().enumerate() {
                let Some(i) = space.dof_map[va] else { continue };
                for (b, &vb) in cell.vertices.iter().enumerate() {
                    let Some(j) = space.dof_map[vb] else { continue };
                    let mut qf = 0.0;
                    for r in 0..dim {
                        for c in 0..dim {
                            qf += cell.grads[a][r] * qm[r * dim + c] * cell.grads[b][c];
                        }
                    }
                    tm.push((i, j, node.weight * node.basis[a] * node.basis[b]));
                    tg.push((i, j, node.weight * qf));
                }
            }
        }
    }
    let n = space.dof_count;
    Ok((linalg::from_triplets(n, &tm), linalg::from_triplets(n, &tg)))
}

/// `b[i] = int f phi_i + sum_k g_k (T_k . grad phi_i)`.
pub fn assemble_rhs(space: &DiscreteSpace, f: &ScalarExpr, t: &SubunitTuple, g: &[ScalarExpr]) -> Result<Vec<f64>> {
    if t.len() != g.len() {
        return Err(Error::InvalidData(format!("T has {} fields but g has {} entries", t.len(), g.len())));
    }
    let mut b = vec![0.0; space.dof_count];
    for (ci, cell) in space.cells.iter().enumerate() {
        for node in &cell.nodes {
            let x = &node.point;
            let fv = f.eval(x).map_err(cell_err(ci))?;
            let mut tg = vec![0.0; space.dimension()];
            for (gk, tk) in g.iter().zip(t.fields()) {
                let gv = gk.eval(x).map_err(cell_err(ci))?;
                linalg::axpy(gv, &tk.eval(x).map_err(cell_err(ci))?, &mut tg);
            }
            for (a, &v) in cell.vertices.iter().enumerate() {
                if let Some(i) = space.dof_map[v] {
                    b[i] += node.weight * (fv * node.basis[a] + linalg::dot(&tg, &cell.grads[a]));
                }
            }
        }
    }
    Ok(b)
}

/// `W u = <W, grad u>` at every quadrature node, grouped by cell.
pub fn subunit_derivative(space: &DiscreteSpace, w: &VectorField, u: &WeakSolution) -> Result<Vec<Vec<f64>>> {
    space
        .cells
        .iter()
        .enumerate()
        .map(|(ci, cell)| {
            cell.nodes
                .iter()
                .map(|n| Ok(linalg::dot(&w.eval(&n.point).map_err(cell_err(ci))?, &u.gradient[ci])))
                .collect()
        })
        .collect()
}

/// `L2` norm of per-node values produced by [`subunit_derivative`].
pub fn nodal_l2_norm(space: &DiscreteSpace, values: &[Vec<f64>]) -> f64 {
    space.integrate(|c, q| values[c][q] * values[c][q]).sqrt()
}

/// Gradient of `uv` at a node by the elementwise product rule.
pub fn product_gradient(space: &DiscreteSpace, cell: usize, node: usize, u: &[f64], v: &[f64]) -> Vec<f64> {
    let c = &space.cells[cell];
    let (uu, vv) = (c.value(node, u), c.value(node, v));
    let (gu, gv) = (c.gradient(u), c.gradient(v));
    gu.iter().zip(&gv).map(|(a, b)| vv * a + uu * b).collect()
}

fn unavailable<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("unavailable"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundednessReport {
    pub c6_empirical: f64,
    /// Exact discrete supremum when the backend provides it.
    #[serde(serialize_with = "unavailable")]
    pub c6_exact: Option<f64>,
    #[serde(serialize_with = "unavailable")]
    pub c6_formula: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// Sampled continuity constant of the form in the QH1 norm, and the
/// coefficient-norm bound when a Poincare constant `c4` is configured.
pub fn check_boundedness(form: &AssembledForm, trials: usize, seed: u64) -> Result<BoundednessReport> {
    if trials == 0 {
        return Err(Error::InvalidRequest("trials must be >= 1".into()));
    }
    let n = form.dofs();
    let mut rng = linalg::seeded_rng(seed);
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let u = linalg::normal_vec(&mut rng, n);
        let v = linalg::normal_vec(&mut rng, n);
        let den = form.qh1_norm(&u) * form.qh1_norm(&v);
        if den > 1e-300 {
            best = best.max(linalg::form(&form.a, &u, &v).abs() / den);
        }
    }
    let c6_exact = if n == 0 { None } else { form.backend()?.sup_ratio(&form.a, &form.h_matrix())? };
    Ok(BoundednessReport { c6_empirical: best, c6_exact, c6_formula: c6_formula(form)?, trials, seed })
}

fn c6_formula(form: &AssembledForm) -> Result<Option<f64>> {
    let Some(c4) = form.problem.numerics.c4 else { return Ok(None) };
    let omega = form.problem.exponents.omega;
    if omega <= 1.0 {
        return Ok(None);
    }
    let w = omega / (omega - 1.0);
    let op = &form.operator;
    let c1 = form.big_c1_hat;
    let principal = c1.max(c1 * c1);
    let drift = form.space.lp_norm_vector(&op.g, 2.0 * w)? + form.space.lp_norm_vector(&op.h, 2.0 * w)?;
    let f = form.space.lp_norm_expr(&op.zeroth, w)?;
    Ok(Some(principal + c4 * (op.tuple_len() as f64).sqrt() * drift + c4 * c4 * f))
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    /// `max(0, sampled, extremal)` defect constant.
    pub c7_empirical: f64,
    /// Same maximum restricted to the random trial vectors.
    pub c7_sampled: f64,
    pub holds: bool,
    pub trials: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub extremal: Option<Vec<f64>>,
}

fn coercivity_defect(form: &AssembledForm, u: &[f64]) -> Option<f64> {
    let l2 = linalg::form(&form.m, u, u);
    if l2 < 1e-14 {
        return None;
    }
    let h = l2 + linalg::form(&form.gq, u, u);
    Some((form.c1_hat / 4.0 * h - linalg::form(&form.a, u, u)) / l2)
}

/// Lower-order defect `C7` in `L(u,u) >= (c1/4)|u|^2 - C7 |u|_2^2`, sampled
/// on seeded random vectors and on the extremal vector of the pencil
/// `(sym(A) - (c1/4) Gq, M)`.
pub fn check_coercivity(form: &AssembledForm, trials: usize, seed: u64) -> Result<CoercivityReport> {
    if trials == 0 {
        return Err(Error::InvalidRequest("trials must be >= 1".into()));
    }
    let n = form.dofs();
    let mut rng = linalg::seeded_rng(seed);
    let mut sampled = f64::NEG_INFINITY;
    let mut skipped = 0;
    for _ in 0..trials {
        match coercivity_defect(form, &linalg::normal_vec(&mut rng, n)) {
            Some(d) => sampled = sampled.max(d),
            None => skipped += 1,
        }
    }
    let mut warnings = Vec::new();
    if skipped > 0 {
        warnings.push(format!("{skipped} trial vectors had L2 norm below 1e-14"));
    }
    let mut extremal = None;
    let mut best = sampled;
    if n > 0 && form.c1_hat.is_finite() {
        let b = linalg::combine(1.0, &linalg::symmetric_part(&form.a), -form.c1_hat / 4.0, &form.gq);
        let (_, vecs) = form.backend()?.symmetric_eigs(&b, &form.m, 1)?;
        if let Some(v) = vecs.into_iter().next() {
            if let Some(d) = coercivity_defect(form, &v) {
                best = best.max(d);
            }
            extremal = Some(v);
        }
    }
    if !best.is_finite() {
        warnings.push("coercivity defect is not finite".into());
    }
    Ok(CoercivityReport {
        c7_empirical: best.max(0.0),
        c7_sampled: sampled.max(0.0),
        holds: true,
        trials,
        seed,
        warnings,
        extremal,
    })
}
