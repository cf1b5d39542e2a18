//! Coefficient fields of the operator and the sampled structural checks on
//! them (subunit condition, comparability of `P` and `Q`).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;

/// Tolerance of the pointwise subunit inequality.
pub const SUBUNIT_TOL: f64 = 1e-10;
/// Quadratic forms below this value count as vanishing.
pub const FORM_ZERO: f64 = 1e-14;

/// Symmetric `n x n` matrix of expressions; only the upper triangle is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    n: usize,
    /// Row-major upper triangle: (0,0), (0,1), .., (1,1), ..
    upper: Vec<ScalarExpr>,
}

impl MatrixField {
    pub fn from_upper(n: usize, upper: Vec<ScalarExpr>) -> Result<Self> {
        if n == 0 || upper.len() != n * (n + 1) / 2 {
            return Err(Error::InvalidData(format!(
                "a symmetric {n}x{n} field needs {} upper-triangle entries, got {}",
                n * (n + 1) / 2,
                upper.len()
            )));
        }
        Ok(Self { n, upper })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal((0..n).map(|_| ScalarExpr::constant(1.0)).collect())
    }

    pub fn diagonal(diag: Vec<ScalarExpr>) -> Self {
        let n = diag.len();
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for (i, d) in diag.into_iter().enumerate() {
            upper.push(d);
            for _ in i + 1..n {
                upper.push(ScalarExpr::zero());
            }
        }
        Self { n, upper }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarExpr {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row i starts after rows 0..i, which hold n, n-1, .. entries
        let off: usize = (0..i).map(|r| self.n - r).sum();
        &self.upper[off + (j - i)]
    }

    pub fn entries_upper(&self) -> &[ScalarExpr] {
        &self.upper
    }

    pub fn uses_y(&self) -> bool {
        self.upper.iter().any(ScalarExpr::uses_y)
    }

    pub fn is_zero(&self) -> bool {
        self.upper.iter().all(ScalarExpr::is_zero)
    }

    /// Evaluates the field; the result is symmetric row-major `n x n`.
    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = self.upper[k].eval(point)?;
                m[i * n + j] = v;
                m[j * n + i] = v;
                k += 1;
            }
        }
        Ok(m)
    }

    /// Scaled copy `s * self` built from expressions.
    pub fn scaled(&self, s: f64) -> Self {
        let upper = self
            .upper
            .iter()
            .map(|e| ScalarExpr::parse(&format!("{} * ({})", crate::expr::format_constant(s), e.source())).unwrap())
            .collect();
        Self { n: self.n, upper }
    }
}

impl Serialize for MatrixField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<&str>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.entry(i, j).source()).collect())
            .collect();
        rows.serialize(s)
    }
}

/// Quadratic form `<xi, A xi>` of a row-major `n x n` matrix.
pub fn quad_form(a: &[f64], xi: &[f64]) -> f64 {
    let n = xi.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += xi[i] * a[i * n + j] * xi[j];
        }
    }
    s
}

/// Bilinear form `<u, A v>`.
pub fn bilinear(a: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += u[i] * a[i * n + j] * v[j];
        }
    }
    s
}

/// A first-order vector field `W = sum_i w_i d/dx_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct VectorField(pub Vec<ScalarExpr>);

impl VectorField {
    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.0.iter().map(|e| e.eval(point)).collect()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// An ordered tuple of vector fields (the `R`, `S` and `T` of the operator).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SubunitTuple(pub Vec<VectorField>);

impl SubunitTuple {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.0
    }
}

/// Outcome of [`check_subunit`].
#[derive(Debug, Clone, Serialize)]
pub struct SubunitReport {
    pub ok: bool,
    pub worst_ratio: f64,
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Unit directions used for quadratic-form sampling: `+-1` in 1D; in 2D 32
/// equally spaced unit vectors plus the coordinate directions.
pub fn sample_directions(n: usize, per_point: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        _ => {
            let count = per_point.max(4);
            let mut dirs: Vec<Vec<f64>> = (0..count)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect();
            dirs.extend([vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]);
            dirs
        }
    }
}

/// Checks `(W . xi)^2 <= <xi, Q xi>` at every sampled point and direction.
pub fn check_subunit(
    w: &VectorField,
    q: &MatrixField,
    sample_points: &[Vec<f64>],
    directions_per_point: usize,
) -> Result<SubunitReport> {
    if sample_points.is_empty() {
        return Err(Error::InvalidRequest("subunit check needs sample points".into()));
    }
    if directions_per_point < 4 {
        return Err(Error::InvalidRequest("subunit check needs at least 4 directions per point".into()));
    }
    let dirs = sample_directions(q.dim(), directions_per_point);
    let mut report = SubunitReport { ok: true, worst_ratio: 0.0, witness: None };
    for p in sample_points {
        let wv = w.eval(p)?;
        let qm = q.eval(p)?;
        for xi in &dirs {
            let wx: f64 = wv.iter().zip(xi).map(|(a, b)| a * b).sum();
            let lhs = wx * wx;
            let rhs = quad_form(&qm, xi);
            let ratio = if lhs < FORM_ZERO && rhs.abs() < FORM_ZERO {
                1.0
            } else if rhs <= 0.0 {
                f64::INFINITY
            } else {
                lhs / rhs
            };
            if ratio > report.worst_ratio {
                report.worst_ratio = ratio;
            }
            if lhs > rhs + SUBUNIT_TOL && report.ok {
                report.ok = false;
                report.witness = Some((p.clone(), xi.clone()));
            }
        }
    }
    Ok(report)
}

/// Result of scanning `<xi,P xi> / <xi,Q xi>` over sample points.
#[derive(Debug)]
pub struct ComparabilityScan {
    pub lower: f64,
    pub upper: f64,
    /// First point where exactly one of the two forms vanishes.
    pub violation: Option<Error>,
}

/// Scans the form ratio; a one-sided degeneracy records a violation and
/// pushes the bounds to `0` or `inf` instead of failing.
pub fn scan_comparability(
    p: &MatrixField,
    q: &MatrixField,
    sample_points: &[Vec<f64>],
    directions_per_point: usize,
) -> Result<ComparabilityScan> {
    if p.dim() != q.dim() {
        return Err(Error::InvalidData("P and Q have different dimensions".into()));
    }
    let dirs = sample_directions(q.dim(), directions_per_point);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut violation = None;
    for x in sample_points {
        let pm = p.eval(x)?;
        let qm = q.eval(x)?;
        for xi in &dirs {
            let pf = quad_form(&pm, xi);
            let qf = quad_form(&qm, xi);
            let ratio = match (pf.abs() < FORM_ZERO, qf.abs() < FORM_ZERO) {
                (true, true) => 1.0,
                (false, false) => pf / qf,
                (p_zero, _) => {
                    if violation.is_none() {
                        violation = Some(Error::Comparability {
                            point: x.clone(),
                            direction: xi.clone(),
                            p_form: pf,
                            q_form: qf,
                        });
                    }
                    if p_zero {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
            };
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    if !lo.is_finite() && violation.is_none() {
        lo = 1.0;
        hi = 1.0;
    }
    Ok(ComparabilityScan { lower: lo, upper: hi, violation })
}

/// Sampled comparability constants `(c1, C1)` with
/// `c1 <xi,Q xi> <= <xi,P xi> <= C1 <xi,Q xi>`.
pub fn estimate_comparability(
    p: &MatrixField,
    q: &MatrixField,
    sample_points: &[Vec<f64>],
    directions_per_point: usize,
) -> Result<(f64, f64)> {
    let scan = scan_comparability(p, q, sample_points, directions_per_point)?;
    match scan.violation {
        Some(e) => Err(e),
        None => Ok((scan.lower, scan.upper)),
    }
}

/// Smallest eigenvalue of a symmetric row-major matrix of size 1 or 2.
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], a[1], a[3]);
            let mean = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            mean - rad
        }
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(n, n, a);
            m.symmetric_eigenvalues().min()
        }
    }
}

/// Seeded low-discrepancy (Halton, bases 2 and 3) points in a box.
pub fn halton_points(bounds: &[(f64, f64)], count: usize, skip: usize) -> Vec<Vec<f64>> {
    const BASES: [u64; 2] = [2, 3];
    (0..count)
        .map(|k| {
            let index = (k + skip + 1) as u64;
            bounds
                .iter()
                .zip(BASES)
                .map(|(&(lo, hi), b)| lo + (hi - lo) * radical_inverse(index, b))
                .collect()
        })
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: &str) -> ScalarExpr {
        ScalarExpr::parse(s).unwrap()
    }

    fn vf(items: &[&str]) -> VectorField {
        VectorField(items.iter().map(|s| e(s)).collect())
    }

    fn grushin() -> MatrixField {
        MatrixField::diagonal(vec![e("1"), e("x^2")])
    }

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let t = |k: usize| lo + (hi - lo) * k as f64 / n as f64;
                pts.push(vec![t(i), t(j)]);
            }
        }
        pts
    }

    #[test]
    fn eval_matrix_examples() {
        assert_eq!(MatrixField::identity(1).eval(&[0.3]).unwrap(), vec![1.0]);
        assert_eq!(grushin().eval(&[0.5, 0.2]).unwrap(), vec![1.0, 0.0, 0.0, 0.25]);
        let singular = MatrixField::from_upper(1, vec![e("1/x")]).unwrap();
        assert!(matches!(singular.eval(&[0.0]), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn packed_entries() {
        let m = MatrixField::from_upper(2, vec![e("1"), e("2"), e("3")]).unwrap();
        assert_eq!(m.entry(0, 1).source(), "2");
        assert_eq!(m.entry(1, 0).source(), "2");
        assert_eq!(m.entry(1, 1).source(), "3");
        assert_eq!(m.eval(&[0.0, 0.0]).unwrap(), vec![1.0, 2.0, 2.0, 3.0]);
        assert!(MatrixField::from_upper(2, vec![e("1")]).is_err());
    }

    #[test]
    fn subunit_examples() {
        let pts = grid(4, -1.0, 1.0);
        let id = MatrixField::identity(2);
        let r = check_subunit(&vf(&["1", "0"]), &id, &pts, 32).unwrap();
        assert!(r.ok && r.worst_ratio <= 1.0 + 1e-15);

        let r = check_subunit(&vf(&["2", "0"]), &id, &pts, 32).unwrap();
        assert!(!r.ok);
        let (_, xi) = r.witness.unwrap();
        assert!((xi[0].abs() - 1.0).abs() < 1e-12 || xi[0].abs() > 0.5);

        let r = check_subunit(&vf(&["0", "x"]), &grushin(), &pts, 32).unwrap();
        assert!(r.ok);
        assert!((r.worst_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn comparability_examples() {
        let pts = grid(3, 0.1, 0.9);
        let id = MatrixField::identity(2);
        assert_eq!(estimate_comparability(&id, &id, &pts, 32).unwrap(), (1.0, 1.0));
        let (c, cc) = estimate_comparability(&id.scaled(2.0), &id, &pts, 32).unwrap();
        assert!((c - 2.0).abs() < 1e-14 && (cc - 2.0).abs() < 1e-14);

        // Grushin P against Q = I: ratios x^2 in direction (0,1), shrinking as samples approach x = 0.
        let coarse = estimate_comparability(&grushin(), &id, &halton_points(&[(0.0, 1.0), (0.0, 1.0)], 16, 0), 32)
            .unwrap();
        let fine = estimate_comparability(&grushin(), &id, &halton_points(&[(0.0, 1.0), (0.0, 1.0)], 512, 0), 32)
            .unwrap();
        assert!(coarse.0 > 0.0 && coarse.1 <= 1.0 + 1e-14);
        assert!(fine.0 < coarse.0);

        // a sample exactly on the degeneracy line exposes the violation
        let err = estimate_comparability(&grushin(), &id, &[vec![0.0, 0.5]], 32).unwrap_err();
        assert!(matches!(err, Error::Comparability { .. }));
    }

    #[test]
    fn min_eigenvalue_2x2() {
        assert!((min_eigenvalue(&[2.0, 1.0, 1.0, 2.0], 2) - 1.0).abs() < 1e-14);
        assert_eq!(min_eigenvalue(&[-3.0], 1), -3.0);
    }

    #[test]
    fn halton_points_in_box() {
        let pts = halton_points(&[(-1.0, 1.0), (2.0, 3.0)], 100, 0);
        assert!(pts.iter().all(|p| p[0] > -1.0 && p[0] < 1.0 && p[1] > 2.0 && p[1] < 3.0));
    }
}
