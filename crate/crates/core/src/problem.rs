//! Problem description: domain, operator coefficients, data, exponents and
//! numerical settings, plus the text format they are read from.
//!
//! The format is TOML with five sections:
//!
//! ```toml
//! [domain]
//! kind = "interval"          # or "rect" with x = ["a","b"], y = ["c","d"], nx, ny
//! a = "0"
//! b = "pi"
//! n = 200
//! bc = "neumann"             # or "dirichlet"
//!
//! [operator]
//! P = [["1"]]                # symmetric matrix: upper-triangle rows or full rows
//! Q = [["1"]]                # defaults to P
//! H = ["1"]                  # paired with R (same length)
//! R = [["1"]]                # list of vector fields
//! G = []                     # paired with S
//! S = []
//! F = "0"
//!
//! [data]
//! f = "cos(x)"
//! g = []                     # paired with T
//! T = []
//! candidate = "x^2 - x"      # optional function for the maximum-principle check
//!
//! [exponents]                # all optional
//! t = 3.0
//! q = 6.0
//! omega = 2.0                # Neumann gain; sigma for Dirichlet
//!
//! [numerics]                 # all optional
//! seed = 42
//! trials = 200
//! negativity_trials = 500
//! tol_rank = 1e-9
//! backend = "auto"
//! k = 4
//! c4 = 1.5
//! beta = 1.0
//! balls = [[0.5, 0.25]]      # [center..., radius]
//! ```
//!
//! Coefficient expressions use the grammar of [`crate::expr`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::fields::{MatrixField, SubunitTuple, VectorField};
use crate::mesh::{build_interval_mesh, build_rect_mesh, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Interval { a: f64, b: f64, n: usize },
    Rect { x: (f64, f64), y: (f64, f64), nx: usize, ny: usize },
}

impl Domain {
    pub fn dimension(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rect { .. } => 2,
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match *self {
            Domain::Interval { a, b, n } => build_interval_mesh(a, b, n),
            Domain::Rect { x, y, nx, ny } => build_rect_mesh(x, y, nx, ny),
        }
    }

    /// Same domain at resolution `n` (`nx = ny = n` for rectangles).
    pub fn with_resolution(&self, n: usize) -> Domain {
        match *self {
            Domain::Interval { a, b, .. } => Domain::Interval { a, b, n },
            Domain::Rect { x, y, .. } => Domain::Rect { x, y, nx: n, ny: n },
        }
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match *self {
            Domain::Interval { a, b, .. } => vec![(a, b)],
            Domain::Rect { x, y, .. } => vec![x, y],
        }
    }
}

/// Coefficients of `X u = -div(P grad u) + H.R u + S'(G u) + F u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Operator {
    #[serde(rename = "P")]
    pub p: MatrixField,
    #[serde(rename = "Q")]
    pub q: MatrixField,
    #[serde(rename = "H")]
    pub h: Vec<ScalarExpr>,
    #[serde(rename = "R")]
    pub r: SubunitTuple,
    #[serde(rename = "G")]
    pub g: Vec<ScalarExpr>,
    #[serde(rename = "S")]
    pub s: SubunitTuple,
    #[serde(rename = "F")]
    pub zeroth: ScalarExpr,
}

impl Operator {
    /// `-div(P grad u)` with `Q = P` and no lower-order terms.
    pub fn principal(p: MatrixField) -> Self {
        Self {
            q: p.clone(),
            p,
            h: Vec::new(),
            r: SubunitTuple::default(),
            g: Vec::new(),
            s: SubunitTuple::default(),
            zeroth: ScalarExpr::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// Tuple length `N` used by the constants of the boundedness estimate.
    pub fn tuple_len(&self) -> usize {
        self.r.len().max(self.s.len())
    }

    /// Effective drift `sum_k H_k R_k(x)`.
    pub fn drift_r(&self, x: &[f64]) -> Result<Vec<f64>> {
        drift(&self.h, &self.r, x, self.dim())
    }

    /// Effective drift `sum_k G_k S_k(x)`.
    pub fn drift_s(&self, x: &[f64]) -> Result<Vec<f64>> {
        drift(&self.g, &self.s, x, self.dim())
    }

    /// Operator of the adjoint problem: `(H, R)` and `(G, S)` exchanged.
    pub fn adjoint(&self) -> Self {
        Self { h: self.g.clone(), r: self.s.clone(), g: self.h.clone(), s: self.r.clone(), ..self.clone() }
    }
}

fn drift(coef: &[ScalarExpr], fields: &SubunitTuple, x: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0.0; n];
    for (c, w) in coef.iter().zip(fields.fields()) {
        let cv = c.eval(x)?;
        if cv == 0.0 {
            continue;
        }
        for (bi, wi) in b.iter_mut().zip(w.eval(x)?) {
            *bi += cv * wi;
        }
    }
    Ok(b)
}

/// Right-hand side `f + T'g` and an optional candidate function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Data {
    pub f: ScalarExpr,
    pub g: Vec<ScalarExpr>,
    #[serde(rename = "T")]
    pub t: SubunitTuple,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<ScalarExpr>,
}

impl Data {
    pub fn source(f: ScalarExpr) -> Self {
        Self { f, g: Vec::new(), t: SubunitTuple::default(), candidate: None }
    }

    pub fn homogeneous() -> Self {
        Self::source(ScalarExpr::zero())
    }

    pub fn is_homogeneous(&self) -> bool {
        self.f.is_zero() && self.g.iter().all(ScalarExpr::is_zero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exponents {
    pub t: f64,
    pub q: f64,
    pub omega: f64,
    pub sigma: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Self { t: 3.0, q: 6.0, omega: 2.0, sigma: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Numerics {
    pub seed: u64,
    pub trials: usize,
    pub negativity_trials: usize,
    pub tol_rank: f64,
    pub backend: String,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    pub beta: f64,
    pub balls: Vec<Vec<f64>>,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 200,
            negativity_trials: 500,
            tol_rank: 1e-9,
            backend: "auto".into(),
            k: 4,
            c4: None,
            beta: 1.0,
            balls: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub bc: BoundaryKind,
    pub operator: Operator,
    pub data: Data,
    pub exponents: Exponents,
    pub numerics: Numerics,
}

impl ProblemSpec {
    pub fn new(domain: Domain, bc: BoundaryKind, operator: Operator, data: Data) -> Self {
        Self { domain, bc, operator, data, exponents: Exponents::default(), numerics: Numerics::default() }
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn with_bc(&self, bc: BoundaryKind) -> Self {
        Self { bc, ..self.clone() }
    }

    pub fn with_data(&self, data: Data) -> Self {
        Self { data, ..self.clone() }
    }

    pub fn with_resolution(&self, n: usize) -> Self {
        Self { domain: self.domain.with_resolution(n), ..self.clone() }
    }

    /// Checks tuple lengths and dimensions.
    pub fn validate(&self) -> Result<()> {
        let n = self.domain.dimension();
        let op = &self.operator;
        if op.p.dim() != n || op.q.dim() != n {
            return Err(Error::InvalidData(format!("P and Q must be {n}x{n}")));
        }
        if op.h.len() != op.r.len() {
            return Err(Error::InvalidData(format!("|H| = {} but |R| = {}", op.h.len(), op.r.len())));
        }
        if op.g.len() != op.s.len() {
            return Err(Error::InvalidData(format!("|G| = {} but |S| = {}", op.g.len(), op.s.len())));
        }
        if self.data.g.len() != self.data.t.len() {
            return Err(Error::InvalidData(format!(
                "|g| = {} but |T| = {}",
                self.data.g.len(),
                self.data.t.len()
            )));
        }
        for (name, tuple) in [("R", &op.r), ("S", &op.s), ("T", &self.data.t)] {
            if let Some(w) = tuple.fields().iter().find(|w| w.dim() != n) {
                return Err(Error::InvalidData(format!("field in {name} has {} components, expected {n}", w.dim())));
            }
        }
        if n == 1 {
            let mut exprs: Vec<&ScalarExpr> = vec![&op.zeroth, &self.data.f];
            exprs.extend(op.p.entries_upper());
            exprs.extend(op.q.entries_upper());
            exprs.extend(op.h.iter().chain(&op.g).chain(&self.data.g));
            for tuple in [&op.r, &op.s, &self.data.t] {
                for w in tuple.fields() {
                    exprs.extend(w.0.iter());
                }
            }
            exprs.extend(self.data.candidate.iter());
            if let Some(e) = exprs.into_iter().find(|e| e.uses_y()) {
                return Err(Error::InvalidData(format!("expression `{e}` uses y in a 1D problem")));
            }
        }
        Ok(())
    }

    /// Warnings for exponents that miss the strict thresholds
    /// `t > w'`, `q > 2w'` (`w = omega` for Neumann, `sigma` for Dirichlet).
    pub fn exponent_warnings(&self) -> Vec<String> {
        let (label, gain) = match self.bc {
            BoundaryKind::Neumann => ("omega", self.exponents.omega),
            BoundaryKind::Dirichlet => ("sigma", self.exponents.sigma),
        };
        let mut out = Vec::new();
        if gain <= 1.0 {
            out.push(format!("gain {label} = {gain} must exceed 1"));
            return out;
        }
        let conj = gain / (gain - 1.0);
        if self.exponents.t <= conj {
            out.push(format!("t = {} does not exceed {label}' = {conj}", self.exponents.t));
        }
        if self.exponents.q <= 2.0 * conj {
            out.push(format!("q = {} does not exceed 2{label}' = {}", self.exponents.q, 2.0 * conj));
        }
        out
    }

    /// Parses the text format described in the module docs.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::Spec { line, column, message: e.message().to_string() }
        })?;
        raw.resolve(text)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Applies the `DEGELL_SEED` environment override.
    pub fn apply_env(&mut self) {
        if let Some(seed) = std::env::var("DEGELL_SEED").ok().and_then(|s| s.trim().parse().ok()) {
            self.numerics.seed = seed;
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map(|p| offset - p).unwrap_or(offset + 1);
    (line, column)
}

type SStr = Spanned<String>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    domain: RawDomain,
    operator: RawOperator,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    exponents: RawExponents,
    #[serde(default)]
    numerics: RawNumerics,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    kind: SStr,
    a: Option<Spanned<toml::Value>>,
    b: Option<Spanned<toml::Value>>,
    n: Option<usize>,
    x: Option<Vec<Spanned<toml::Value>>>,
    y: Option<Vec<Spanned<toml::Value>>>,
    nx: Option<usize>,
    ny: Option<usize>,
    bc: BoundaryKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOperator {
    #[serde(rename = "P")]
    p: Vec<Vec<SStr>>,
    #[serde(rename = "Q")]
    q: Option<Vec<Vec<SStr>>>,
    #[serde(rename = "H", default)]
    h: Vec<SStr>,
    #[serde(rename = "R", default)]
    r: Vec<Vec<SStr>>,
    #[serde(rename = "G", default)]
    g: Vec<SStr>,
    #[serde(rename = "S", default)]
    s: Vec<Vec<SStr>>,
    #[serde(rename = "F")]
    f: Option<SStr>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawData {
    f: Option<SStr>,
    #[serde(default)]
    g: Vec<SStr>,
    #[serde(rename = "T", default)]
    t: Vec<Vec<SStr>>,
    candidate: Option<SStr>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawExponents {
    t: Option<f64>,
    q: Option<f64>,
    omega: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    seed: Option<u64>,
    trials: Option<usize>,
    negativity_trials: Option<usize>,
    tol_rank: Option<f64>,
    backend: Option<String>,
    k: Option<usize>,
    c4: Option<f64>,
    beta: Option<f64>,
    balls: Option<Vec<Vec<f64>>>,
}

struct Resolver<'a> {
    text: &'a str,
}

impl Resolver<'_> {
    fn spec_err(&self, offset: usize, message: String) -> Error {
        let (line, column) = line_col(self.text, offset);
        Error::Spec { line, column, message }
    }

    fn expr(&self, s: &SStr) -> Result<ScalarExpr> {
        ScalarExpr::parse(s.get_ref()).map_err(|e| match e {
            Error::Parse { column, message, expr } => {
                // +1 skips the opening quote of the TOML string
                let (line, col) = line_col(self.text, s.span().start + 1);
                Error::Spec { line, column: col + column - 1, message: format!("in `{expr}`: {message}") }
            }
            other => other,
        })
    }

    fn exprs(&self, items: &[SStr]) -> Result<Vec<ScalarExpr>> {
        items.iter().map(|s| self.expr(s)).collect()
    }

    fn number(&self, v: &Spanned<toml::Value>) -> Result<f64> {
        match v.get_ref() {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            toml::Value::String(s) => {
                let e = self.expr(&Spanned::new(v.span(), s.clone()))?;
                e.as_constant().ok_or_else(|| self.spec_err(v.span().start, format!("`{s}` is not a constant")))
            }
            other => Err(self.spec_err(v.span().start, format!("expected a number, found {}", other.type_str()))),
        }
    }

    fn matrix(&self, rows: &[Vec<SStr>], n: usize, name: &str) -> Result<MatrixField> {
        let lens: Vec<usize> = rows.iter().map(Vec::len).collect();
        let upper_shape: Vec<usize> = (0..n).map(|i| n - i).collect();
        let full_shape = vec![n; n];
        let offset = rows.first().and_then(|r| r.first()).map(|s| s.span().start).unwrap_or(0);
        if lens == upper_shape {
            let upper = rows.iter().flat_map(|r| r.iter()).map(|s| self.expr(s)).collect::<Result<Vec<_>>>()?;
            MatrixField::from_upper(n, upper)
        } else if lens == full_shape {
            let mut upper = Vec::new();
            for (i, row) in rows.iter().enumerate() {
                for j in i..n {
                    let a = self.expr(&row[j])?;
                    let b = self.expr(&rows[j][i])?;
                    if a != b {
                        return Err(self.spec_err(
                            rows[j][i].span().start,
                            format!("{name} is not symmetric: entry ({i},{j}) differs from ({j},{i})"),
                        ));
                    }
                    upper.push(a);
                }
            }
            MatrixField::from_upper(n, upper)
        } else {
            Err(self.spec_err(offset, format!("{name} must have {n} full rows or upper-triangle rows")))
        }
    }

    fn tuple(&self, fields: &[Vec<SStr>]) -> Result<SubunitTuple> {
        Ok(SubunitTuple(fields.iter().map(|w| self.exprs(w).map(VectorField)).collect::<Result<_>>()?))
    }
}

impl RawSpec {
    fn resolve(self, text: &str) -> Result<ProblemSpec> {
        let rs = Resolver { text };
        let d = &self.domain;
        let missing = |what: &str| rs.spec_err(d.kind.span().start, format!("domain is missing `{what}`"));
        let domain = match d.kind.get_ref().as_str() {
            "interval" => Domain::Interval {
                a: rs.number(d.a.as_ref().ok_or_else(|| missing("a"))?)?,
                b: rs.number(d.b.as_ref().ok_or_else(|| missing("b"))?)?,
                n: d.n.ok_or_else(|| missing("n"))?,
            },
            "rect" => {
                let pair = |v: &Option<Vec<Spanned<toml::Value>>>, what: &str| -> Result<(f64, f64)> {
                    let v = v.as_ref().ok_or_else(|| missing(what))?;
                    if v.len() != 2 {
                        return Err(rs.spec_err(d.kind.span().start, format!("`{what}` needs two entries")));
                    }
                    Ok((rs.number(&v[0])?, rs.number(&v[1])?))
                };
                Domain::Rect {
                    x: pair(&d.x, "x")?,
                    y: pair(&d.y, "y")?,
                    nx: d.nx.or(d.n).ok_or_else(|| missing("nx"))?,
                    ny: d.ny.or(d.n).ok_or_else(|| missing("ny"))?,
                }
            }
            other => return Err(rs.spec_err(d.kind.span().start, format!("unknown domain kind `{other}`"))),
        };
        let n = domain.dimension();
        let o = &self.operator;
        let p = rs.matrix(&o.p, n, "P")?;
        let q = match &o.q {
            Some(rows) => rs.matrix(rows, n, "Q")?,
            None => p.clone(),
        };
        let operator = Operator {
            p,
            q,
            h: rs.exprs(&o.h)?,
            r: rs.tuple(&o.r)?,
            g: rs.exprs(&o.g)?,
            s: rs.tuple(&o.s)?,
            zeroth: o.f.as_ref().map(|s| rs.expr(s)).transpose()?.unwrap_or_else(ScalarExpr::zero),
        };
        let data = Data {
            f: self.data.f.as_ref().map(|s| rs.expr(s)).transpose()?.unwrap_or_else(ScalarExpr::zero),
            g: rs.exprs(&self.data.g)?,
            t: rs.tuple(&self.data.t)?,
            candidate: self.data.candidate.as_ref().map(|s| rs.expr(s)).transpose()?,
        };
        let de = Exponents::default();
        let exponents = Exponents {
            t: self.exponents.t.unwrap_or(de.t),
            q: self.exponents.q.unwrap_or(de.q),
            omega: self.exponents.omega.unwrap_or(de.omega),
            sigma: self.exponents.sigma.unwrap_or(de.sigma),
        };
        let dn = Numerics::default();
        let nm = self.numerics;
        let numerics = Numerics {
            seed: nm.seed.unwrap_or(dn.seed),
            trials: nm.trials.unwrap_or(dn.trials),
            negativity_trials: nm.negativity_trials.unwrap_or(dn.negativity_trials),
            tol_rank: nm.tol_rank.unwrap_or(dn.tol_rank),
            backend: nm.backend.unwrap_or(dn.backend),
            k: nm.k.unwrap_or(dn.k),
            c4: nm.c4,
            beta: nm.beta.unwrap_or(dn.beta),
            balls: nm.balls.unwrap_or_default(),
        };
        let spec = ProblemSpec { domain, bc: self.domain.bc, operator, data, exponents, numerics };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXE1: &str = r#"
[domain]
kind = "interval"
a = 0
b = "pi"
n = 16
bc = "neumann"

[operator]
P = [["1"]]

[data]
f = "cos(x)"
"#;

    #[test]
    fn parses_minimal_spec_with_defaults() {
        let spec = ProblemSpec::from_toml_str(EXE1).unwrap();
        assert_eq!(spec.domain, Domain::Interval { a: 0.0, b: std::f64::consts::PI, n: 16 });
        assert_eq!(spec.operator.q, spec.operator.p);
        assert!(spec.operator.zeroth.is_zero());
        assert_eq!(spec.numerics.seed, 42);
        assert!(spec.exponent_warnings().is_empty());
    }

    #[test]
    fn rect_full_and_upper_matrices() {
        let text = r#"
[domain]
kind = "rect"
x = [-1, 1]
y = ["-1", "1"]
n = 4
bc = "dirichlet"
[operator]
P = [["1", "0"], ["x^2"]]
Q = [["1", "0"], ["0", "x^2"]]
"#;
        let spec = ProblemSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.operator.p, spec.operator.q);
        assert_eq!(spec.domain, Domain::Rect { x: (-1.0, 1.0), y: (-1.0, 1.0), nx: 4, ny: 4 });
    }

    #[test]
    fn malformed_expression_reports_line_and_column() {
        let text = EXE1.replace("cos(x)", "si n(x)");
        match ProblemSpec::from_toml_str(&text) {
            Err(Error::Spec { line, column, .. }) => {
                assert_eq!(line, 13);
                assert_eq!(column, 6);
            }
            other => panic!("expected spec error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_tuples_are_rejected() {
        let text = EXE1.replace("P = [[\"1\"]]", "P = [[\"1\"]]\nH = [\"1\", \"2\"]\nR = [[\"1\"]]");
        assert!(matches!(ProblemSpec::from_toml_str(&text), Err(Error::InvalidData(_))));
        let text = EXE1.replace("cos(x)", "y");
        assert!(matches!(ProblemSpec::from_toml_str(&text), Err(Error::InvalidData(_))));
    }

    #[test]
    fn exponent_warnings_fire_below_thresholds() {
        let mut spec = ProblemSpec::from_toml_str(EXE1).unwrap();
        spec.exponents.t = 1.5;
        spec.exponents.q = 3.0;
        assert_eq!(spec.exponent_warnings().len(), 2);
    }

    #[test]
    fn adjoint_swaps_drift_pairs() {
        let mut op = Operator::principal(MatrixField::identity(1));
        op.h = vec![ScalarExpr::constant(2.0)];
        op.r = SubunitTuple(vec![VectorField(vec![ScalarExpr::constant(1.0)])]);
        let adj = op.adjoint();
        assert!(adj.h.is_empty() && adj.g.len() == 1);
        assert_eq!(op.drift_r(&[0.0]).unwrap(), vec![2.0]);
        assert_eq!(adj.drift_s(&[0.0]).unwrap(), vec![2.0]);
    }
}
