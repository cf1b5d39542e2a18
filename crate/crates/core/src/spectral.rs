//! Eigenvalues of `A u = lambda M u`, the deflated Rayleigh-quotient
//! recursion, structural checks and mesh-convergence tables.

use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::assembly::{assemble_form, AssembledForm};
use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::ProblemSpec;
use crate::solver::find_shift_gamma;
use crate::space::{build_space, WeakSolution};

/// Relative gap below which eigenvalues are grouped as one.
pub const MULTIPLICITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumDiagnostics {
    /// `max |u_i^T M u_j|`, `i != j`, over the returned eigenfunctions.
    pub orthogonality_max: f64,
    /// `max |u_i^T M u_i - 1|`.
    pub normalization_max: f64,
    /// Vertex minimum and maximum of the sign-fixed first eigenfunction.
    pub first_eigfn_min: f64,
    pub first_eigfn_max: f64,
    pub monotone: bool,
    /// `max |A u - lambda M u|_inf / ((|A| + |lambda| |M|) |u|_inf)`.
    pub residual_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub method: &'static str,
    pub backend: String,
    pub self_adjoint: bool,
    /// Real parts, ascending.
    pub eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub imaginary_parts: Vec<f64>,
    pub multiplicities: Vec<(f64, usize)>,
    /// `None` for non-real eigenvalues.
    pub eigenfunctions: Vec<Option<WeakSolution>>,
    pub diagnostics: SpectrumDiagnostics,
    /// Max relative deviation from the direct eigensolve (recursion only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
}

impl SpectrumResult {
    pub fn real_eigenfunctions(&self) -> Vec<&WeakSolution> {
        self.eigenfunctions.iter().flatten().collect()
    }
}

/// Groups eigenvalues whose relative gap is below [`MULTIPLICITY_TOL`].
pub fn group_multiplicities(values: &[f64], floor: f64) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        match out.last_mut() {
            Some((last, count)) if (v - *last).abs() <= MULTIPLICITY_TOL * v.abs().max(last.abs()).max(floor) => {
                *count += 1
            }
            _ => out.push((v, 1)),
        }
    }
    out
}

/// Scale used as an absolute floor for relative eigenvalue comparisons.
fn eig_floor(form: &AssembledForm) -> f64 {
    let m = linalg::norm_inf_mat(&form.m);
    if m > 0.0 {
        1e-8 * linalg::norm_inf_mat(&form.a) / m
    } else {
        0.0
    }
}

/// Flips `u` so that `int u >= 0`; for (numerically) zero-mean vectors the
/// largest-magnitude entry is made positive.
pub fn sign_fix(form: &AssembledForm, u: &mut [f64]) {
    let space = &form.space;
    let mean = space.mean(&space.full_values(u));
    let scale = linalg::norm_inf(u);
    let flip = if mean.abs() > 1e-10 * scale {
        mean < 0.0
    } else {
        let idx = u.iter().enumerate().fold(0, |b, (i, x)| if x.abs() > u[b].abs() + 1e-12 * scale { i } else { b });
        u.get(idx).is_some_and(|&x| x < 0.0)
    };
    if flip {
        u.iter_mut().for_each(|x| *x = -*x);
    }
}

fn diagnostics(form: &AssembledForm, values: &[f64], vecs: &[Option<Vec<f64>>]) -> SpectrumDiagnostics {
    let mut orth: f64 = 0.0;
    let mut norm: f64 = 0.0;
    let mut res: f64 = 0.0;
    let an = linalg::norm_inf_mat(&form.a);
    let mn = linalg::norm_inf_mat(&form.m);
    for (i, (lam, u)) in values.iter().zip(vecs).enumerate() {
        let Some(u) = u else { continue };
        let mu = linalg::matvec(&form.m, u);
        norm = norm.max((linalg::dot(u, &mu) - 1.0).abs());
        let au = linalg::matvec(&form.a, u);
        let r: Vec<f64> = au.iter().zip(&mu).map(|(a, m)| a - lam * m).collect();
        let scale = (an + lam.abs() * mn) * linalg::norm_inf(u);
        if scale > 0.0 {
            res = res.max(linalg::norm_inf(&r) / scale);
        }
        for v in vecs.iter().take(i).flatten() {
            orth = orth.max(linalg::dot(v, &mu).abs());
        }
    }
    let (mn_first, mx_first) = match vecs.first() {
        Some(Some(u)) => {
            let vals = form.space.full_values(u);
            (vals.iter().cloned().fold(f64::INFINITY, f64::min), vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        }
        _ => (f64::NAN, f64::NAN),
    };
    SpectrumDiagnostics {
        orthogonality_max: orth,
        normalization_max: norm,
        first_eigfn_min: mn_first,
        first_eigfn_max: mx_first,
        monotone: values.windows(2).all(|w| w[0] <= w[1]),
        residual_max: res,
    }
}

fn finish(
    form: &AssembledForm,
    method: &'static str,
    backend: String,
    self_adjoint: bool,
    values: Vec<f64>,
    imag: Vec<f64>,
    mut vecs: Vec<Option<Vec<f64>>>,
) -> SpectrumResult {
    for v in vecs.iter_mut().flatten() {
        sign_fix(form, v);
    }
    let diagnostics = diagnostics(form, &values, &vecs);
    SpectrumResult {
        method,
        backend,
        self_adjoint,
        multiplicities: group_multiplicities(&values, eig_floor(form)),
        eigenvalues: values,
        imaginary_parts: imag,
        eigenfunctions: vecs.into_iter().map(|v| v.map(|c| form.solution(c))).collect(),
        diagnostics,
        agreement: None,
    }
}

/// Smallest `k` eigenpairs (by real part) of the pencil `(A, M)`.
pub fn compute_spectrum(form: &AssembledForm, k: usize) -> Result<SpectrumResult> {
    let n = form.dofs();
    if k > n {
        return Err(Error::InvalidRequest(format!("k = {k} exceeds the {n} degrees of freedom")));
    }
    let backend = form.backend()?;
    if form.is_symmetric() {
        let (vals, vecs) = backend.symmetric_eigs(&linalg::symmetric_part(&form.a), &form.m, k)?;
        return Ok(finish(form, "direct", backend.name().into(), true, vals, Vec::new(), vecs.into_iter().map(Some).collect()));
    }
    let mut all = backend.general_eigenvalues(&form.a, &form.m)?;
    all.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    all.truncate(k);
    let scale = all.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut vecs = Vec::with_capacity(k);
    for z in &all {
        vecs.push(if z.im.abs() <= 1e-10 * scale { inverse_iteration(form, z.re).ok() } else { None });
    }
    let re = all.iter().map(|z| z.re).collect();
    let im = all.iter().map(|z| if z.im.abs() <= 1e-10 * scale { 0.0 } else { z.im }).collect();
    Ok(finish(form, "direct", backend.name().into(), false, re, im, vecs))
}

/// Eigenvector for a known real eigenvalue of a general pencil.
fn inverse_iteration(form: &AssembledForm, lambda: f64) -> Result<Vec<f64>> {
    let backend = form.backend()?;
    let mut delta = 1e-9 * lambda.abs().max(1.0);
    let lu = loop {
        match backend.factor(&linalg::combine(1.0, &form.a, -(lambda + delta), &form.m)) {
            Ok(lu) => break lu,
            Err(_) if delta < 1e-3 => delta *= 10.0,
            Err(e) => return Err(e),
        }
    };
    let mut rng = linalg::seeded_rng(11);
    let mut x = linalg::normal_vec(&mut rng, form.dofs());
    for _ in 0..6 {
        x = lu.solve(&linalg::matvec(&form.m, &x));
        let nx = form.l2_norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
    }
    Ok(x)
}

fn rayleigh_quotient(form: &AssembledForm, x: &[f64]) -> f64 {
    linalg::form(&form.a, x, x) / linalg::form(&form.m, x, x)
}

fn normalize(form: &AssembledForm, x: &mut [f64]) {
    let n = form.l2_norm(x);
    x.iter_mut().for_each(|v| *v /= n);
}

/// Successive minimization of the Rayleigh quotient on `M`-orthogonal
/// complements: deflated inverse iteration shifted by `gamma`, polished by
/// Rayleigh-quotient iteration.
pub fn rayleigh_recursion(form: &AssembledForm, k: usize) -> Result<SpectrumResult> {
    if !form.is_symmetric() {
        return Err(Error::Precondition("form is not self-adjoint".into()));
    }
    if k == 0 || k > form.dofs() {
        return Err(Error::InvalidRequest(format!("k = {k} must lie in 1..={}", form.dofs())));
    }
    let backend = form.backend()?;
    let gamma = find_shift_gamma(form)?;
    let shifted = backend.factor(&linalg::combine(1.0, &form.a, gamma, &form.m))?;
    let mut rng = linalg::seeded_rng(form.problem.numerics.seed);
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();
    let floor = eig_floor(form);
    for _ in 0..k {
        let mut x = linalg::normal_vec(&mut rng, form.dofs());
        linalg::m_project_out(&form.m, &found, &mut x);
        normalize(form, &mut x);
        let mut rq = rayleigh_quotient(form, &x);
        for _ in 0..2000 {
            x = shifted.solve(&linalg::matvec(&form.m, &x));
            linalg::m_project_out(&form.m, &found, &mut x);
            normalize(form, &mut x);
            let next = rayleigh_quotient(form, &x);
            let done = (next - rq).abs() <= 1e-7 * next.abs().max(floor.max(1e-300));
            rq = next;
            if done {
                break;
            }
        }
        for _ in 0..8 {
            let Ok(lu) = backend.factor(&linalg::combine(1.0, &form.a, -rq, &form.m)) else { break };
            let mut y = lu.solve(&linalg::matvec(&form.m, &x));
            linalg::m_project_out(&form.m, &found, &mut y);
            normalize(form, &mut y);
            let next = rayleigh_quotient(form, &y);
            let step = (next - rq).abs();
            x = y;
            rq = next;
            if step <= 1e-15 * rq.abs().max(floor) {
                break;
            }
        }
        // second pass keeps the basis M-orthonormal to rounding
        linalg::m_project_out(&form.m, &found, &mut x);
        normalize(form, &mut x);
        values.push(rayleigh_quotient(form, &x));
        found.push(x);
    }
    let direct = compute_spectrum(form, k)?;
    let agreement = values
        .iter()
        .zip(&direct.eigenvalues)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor.max(1e-300)))
        .fold(0.0, f64::max);
    let mut out = finish(form, "recursion", backend.name().into(), true, values, Vec::new(), found.into_iter().map(Some).collect());
    out.agreement = Some(agreement);
    Ok(out)
}

/// Outcome of [`verify_spectral_claims`]; `None` marks a skipped claim.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralClaims {
    pub monotone: bool,
    pub l2_orthogonality: Option<f64>,
    pub l2_orthogonal: Option<bool>,
    pub positive_spectrum: Option<bool>,
    pub qh1_orthogonality: Option<f64>,
    pub qh1_orthogonal: Option<bool>,
    pub first_eigfn_nonnegative: Option<bool>,
    pub holds: bool,
}

/// `A = Gq + c M` exactly: `P` and `Q` coincide, no drift, constant `F`.
fn gram_shaped(form: &AssembledForm) -> bool {
    let op = &form.operator;
    let no_drift = op.h.iter().chain(&op.g).all(|e| e.is_zero());
    op.p == op.q && no_drift && op.zeroth.as_constant().is_some()
}

pub fn verify_spectral_claims(
    form: &AssembledForm,
    result: &SpectrumResult,
    negativity_holds: Option<bool>,
) -> SpectralClaims {
    let monotone = result.diagnostics.monotone;
    let vecs: Vec<&[f64]> = result.eigenfunctions.iter().flatten().map(|u| u.coeffs.as_slice()).collect();
    let (l2_orthogonality, l2_orthogonal) = if result.self_adjoint {
        (Some(result.diagnostics.orthogonality_max), Some(result.diagnostics.orthogonality_max <= 1e-8))
    } else {
        (None, None)
    };
    let positive_spectrum = match negativity_holds {
        Some(true) => Some(result.eigenvalues.first().is_none_or(|&l| l > 0.0)),
        _ => None,
    };
    let (qh1_orthogonality, qh1_orthogonal) = if result.self_adjoint && gram_shaped(form) {
        let h = form.h_matrix();
        let mut worst: f64 = 0.0;
        for i in 0..vecs.len() {
            let hi = linalg::matvec(&h, vecs[i]);
            for v in vecs.iter().take(i) {
                worst = worst.max(linalg::dot(v, &hi).abs());
            }
        }
        (Some(worst), Some(worst <= 1e-8))
    } else {
        (None, None)
    };
    let first_eigfn_nonnegative = if result.self_adjoint && !vecs.is_empty() {
        let d = &result.diagnostics;
        Some(d.first_eigfn_min >= -1e-6 * d.first_eigfn_max.abs())
    } else {
        None
    };
    let holds = monotone
        && [l2_orthogonal, positive_spectrum, qh1_orthogonal, first_eigfn_nonnegative].iter().all(|c| c.unwrap_or(true));
    SpectralClaims {
        monotone,
        l2_orthogonality,
        l2_orthogonal,
        positive_spectrum,
        qh1_orthogonality,
        qh1_orthogonal,
        first_eigfn_nonnegative,
        holds,
    }
}

/// Observed order of a sequence of approximations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    /// Differences below `1e-12`: the value is reproduced exactly.
    Exact,
    Value(f64),
    /// Differences change sign or vanish on one side only.
    Undefined,
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rate::Exact => s.serialize_str("exact"),
            Rate::Value(v) => s.serialize_f64(*v),
            Rate::Undefined => s.serialize_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `rates[j][i]`: order of eigenvalue `j` from resolutions `i, i+1, i+2`.
    pub rates: Vec<Vec<Rate>>,
}

/// Order from three successive approximations on meshes `h0 > h1 > h2`.
pub fn richardson_rate(h: [f64; 3], v: [f64; 3]) -> Rate {
    let d0 = v[0] - v[1];
    let d1 = v[1] - v[2];
    let tol = 1e-12 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if d0.abs() < tol && d1.abs() < tol {
        return Rate::Exact;
    }
    if d0.abs() < tol || d1.abs() < tol || d0.signum() != d1.signum() {
        return Rate::Undefined;
    }
    let hr = h[0] / h[1];
    let hr2 = h[1] / h[2];
    if (hr - hr2).abs() > 1e-12 * hr {
        // non-geometric refinement: use the asymptotic two-ratio estimate
        return Rate::Value((d0 / d1).ln() / hr2.ln());
    }
    Rate::Value((d0 / d1).ln() / hr.ln())
}

/// Smallest `k` eigenvalues at each resolution and their observed orders.
pub fn eigenvalue_convergence(problem: &ProblemSpec, resolutions: &[usize], k: usize) -> Result<ConvergenceTable> {
    if resolutions.len() < 3 {
        return Err(Error::InvalidRequest("at least three resolutions are needed".into()));
    }
    let mut rows = Vec::new();
    for &n in resolutions {
        let spec = Arc::new(problem.with_resolution(n));
        let mesh = Arc::new(spec.domain.build_mesh()?);
        let h = mesh.h();
        let space = Arc::new(build_space(mesh, spec.bc));
        let form = assemble_form(&space, &spec)?;
        let spec_k = k.min(form.dofs());
        rows.push(ConvergenceRow { n, h, eigenvalues: compute_spectrum(&form, spec_k)?.eigenvalues });
    }
    let kk = rows.iter().map(|r| r.eigenvalues.len()).min().unwrap_or(0);
    let rates = (0..kk)
        .map(|j| {
            rows.windows(3)
                .map(|w| richardson_rate([w[0].h, w[1].h, w[2].h], [w[0].eigenvalues[j], w[1].eigenvalues[j], w[2].eigenvalues[j]]))
                .collect()
        })
        .collect();
    Ok(ConvergenceTable { rows, rates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarExpr;
    use crate::fields::{MatrixField, SubunitTuple, VectorField};
    use crate::problem::{BoundaryKind, Data, Domain, Operator};
    use std::f64::consts::PI;

    fn laplace(n: usize, bc: BoundaryKind) -> AssembledForm {
        let spec = ProblemSpec::new(
            Domain::Interval { a: 0.0, b: PI, n },
            bc,
            Operator::principal(MatrixField::identity(1)),
            Data::homogeneous(),
        )
        .shared();
        let space = Arc::new(build_space(Arc::new(spec.domain.build_mesh().unwrap()), bc));
        assemble_form(&space, &spec).unwrap()
    }

    #[test]
    fn neumann_and_dirichlet_laplacian() {
        let form = laplace(100, BoundaryKind::Neumann);
        let s = compute_spectrum(&form, 4).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-10);
        for (l, e) in s.eigenvalues[1..].iter().zip([1.0, 4.0, 9.0]) {
            assert!((l - e).abs() / e < 5e-3);
        }
        assert!(s.diagnostics.normalization_max < 1e-10);
        assert!(s.diagnostics.residual_max < 1e-8);

        let form = laplace(100, BoundaryKind::Dirichlet);
        let r = rayleigh_recursion(&form, 3).unwrap();
        assert!(r.agreement.unwrap() < 1e-8, "{:?}", r.agreement);
        assert!(r.diagnostics.first_eigfn_min >= -1e-6 * r.diagnostics.first_eigfn_max);
        let claims = verify_spectral_claims(&form, &r, None);
        assert!(claims.holds, "{claims:?}");
        assert_eq!(claims.qh1_orthogonal, Some(true));
    }

    #[test]
    fn drift_spectrum_rejects_recursion() {
        let mut spec = ProblemSpec::new(
            Domain::Interval { a: 0.0, b: 1.0, n: 30 },
            BoundaryKind::Dirichlet,
            Operator::principal(MatrixField::identity(1)),
            Data::homogeneous(),
        );
        spec.operator.h = vec![ScalarExpr::constant(1.0)];
        spec.operator.r = SubunitTuple(vec![VectorField(vec![ScalarExpr::constant(1.0)])]);
        let spec = spec.shared();
        let space = Arc::new(build_space(Arc::new(spec.domain.build_mesh().unwrap()), spec.bc));
        let form = assemble_form(&space, &spec).unwrap();
        assert!(matches!(rayleigh_recursion(&form, 2), Err(Error::Precondition(_))));
        let s = compute_spectrum(&form, 3).unwrap();
        assert!(!s.self_adjoint);
        // -u'' + u' on (0,1): lambda_k = k^2 pi^2 + 1/4
        assert!((s.eigenvalues[0] - (PI * PI + 0.25)).abs() / (PI * PI) < 1e-2);
        assert!(s.eigenfunctions[0].is_some());
        assert!(s.diagnostics.residual_max < 1e-8);
    }

    #[test]
    fn rates_and_grouping() {
        match richardson_rate([0.4, 0.2, 0.1], [1.16, 1.04, 1.01]) {
            Rate::Value(r) => assert!((r - 2.0).abs() < 1e-10),
            other => panic!("{other:?}"),
        }
        assert_eq!(richardson_rate([0.4, 0.2, 0.1], [0.0, 0.0, 0.0]), Rate::Exact);
        assert_eq!(group_multiplicities(&[0.0, 0.0, 1.0, 1.0 + 1e-10, 2.0], 0.0), vec![(0.0, 2), (1.0, 2), (2.0, 1)]);
        assert!(k_too_large().is_err());
    }

    fn k_too_large() -> Result<SpectrumResult> {
        compute_spectrum(&laplace(3, BoundaryKind::Dirichlet), 3)
    }
}
