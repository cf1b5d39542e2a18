//! Sparse-matrix helpers and the pluggable linear-algebra backends.
//!
//! Two backends are registered: `dense` (nalgebra LU/SVD/eigen on the full
//! matrix) and `banded` (in-house banded LU with shift-invert subspace
//! iteration). `auto` picks dense up to [`DENSE_LIMIT`] dofs.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const DENSE_LIMIT: usize = 2000;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    a.row_iter().map(|row| row.col_indices().iter().zip(row.values()).map(|(&j, v)| v * x[j]).sum()).collect()
}

/// `u^T A v`.
pub fn form(a: &CsrMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    dot(u, &matvec(a, v))
}

pub fn max_abs(a: &CsrMatrix<f64>) -> f64 {
    a.values().iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Max absolute row sum.
pub fn norm_inf_mat(a: &CsrMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += v;
    }
    d
}

pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(n, n);
    for &(i, j, v) in triplets {
        coo.push(i, j, v);
    }
    CsrMatrix::from(&coo)
}

/// `alpha A + beta B`.
pub fn combine(alpha: f64, a: &CsrMatrix<f64>, beta: f64, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let mut trip: Vec<(usize, usize, f64)> = a.triplet_iter().map(|(i, j, v)| (i, j, alpha * v)).collect();
    trip.extend(b.triplet_iter().map(|(i, j, v)| (i, j, beta * v)));
    from_triplets(a.nrows(), &trip)
}

pub fn symmetric_part(a: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    combine(0.5, a, 0.5, &a.transpose())
}

/// `max |B - A^T| / max |A|` (absolute when `A = 0`).
pub fn transpose_mismatch(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> f64 {
    let diff = combine(1.0, b, -1.0, &a.transpose());
    let scale = max_abs(a).max(max_abs(b));
    let d = max_abs(&diff);
    if scale > 0.0 {
        d / scale
    } else {
        d
    }
}

pub fn is_symmetric(a: &CsrMatrix<f64>, rel: f64) -> bool {
    transpose_mismatch(a, a) <= rel
}

/// Coordinate text export: one `i j value` line per stored entry.
pub fn to_coo_text(a: &CsrMatrix<f64>) -> String {
    let mut out = String::new();
    for (i, j, v) in a.triplet_iter() {
        out.push_str(&format!("{i} {j} {v:e}\n"));
    }
    out
}

/// Modified Gram-Schmidt in the `M` inner product (two passes); vectors that
/// collapse below `1e-12` of their input norm are dropped.
pub fn m_orthonormalize(m: &CsrMatrix<f64>, vecs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in vecs {
        let start = form(m, &v, &v).sqrt();
        for _ in 0..2 {
            for q in &out {
                let c = form(m, q, &v);
                axpy(-c, q, &mut v);
            }
        }
        let nv = form(m, &v, &v).sqrt();
        if nv > 1e-12 * start && nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
            out.push(v);
        }
    }
    out
}

/// Removes the `M`-projection onto an `M`-orthonormal basis.
pub fn m_project_out(m: &CsrMatrix<f64>, basis: &[Vec<f64>], v: &mut [f64]) {
    for q in basis {
        let c = form(m, q, v);
        axpy(-c, q, v);
    }
}

pub trait Factorization {
    fn solve(&self, b: &[f64]) -> Vec<f64>;
}

/// Numerical kernels of `A` and `A*`, plus a minimum-norm solver on the
/// complement.
pub trait SingularAnalysis {
    fn kernel(&self) -> &[Vec<f64>];
    fn adjoint_kernel(&self) -> &[Vec<f64>];
    /// Smallest singular values encountered (ascending) and the largest.
    fn singular_values(&self) -> (&[f64], f64);
    fn ambiguous(&self) -> bool;
    /// Least-squares solution of `A u = b` with no component in the kernel.
    fn particular(&self, b: &[f64]) -> Result<Vec<f64>>;
}

pub trait LinearBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn factor(&self, a: &CsrMatrix<f64>) -> Result<Box<dyn Factorization>>;
    fn analyze(
        &self,
        a: &CsrMatrix<f64>,
        a_adj: &CsrMatrix<f64>,
        m: &CsrMatrix<f64>,
        tol_rank: f64,
    ) -> Result<Box<dyn SingularAnalysis>>;
    /// Smallest `k` eigenpairs of the symmetric pencil `(A, M)`, ascending,
    /// eigenvectors `M`-orthonormal.
    fn symmetric_eigs(&self, a: &CsrMatrix<f64>, m: &CsrMatrix<f64>, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
    /// All eigenvalues of the pencil `(A, M)` for general `A`.
    fn general_eigenvalues(&self, a: &CsrMatrix<f64>, m: &CsrMatrix<f64>) -> Result<Vec<Complex64>>;
    /// `sup |u^T A v| / (|u|_H |v|_H)` for SPD `H`, when cheaply available.
    fn sup_ratio(&self, a: &CsrMatrix<f64>, h: &CsrMatrix<f64>) -> Result<Option<f64>>;
}

type Ctor = fn() -> Box<dyn LinearBackend>;

const BACKENDS: &[(&str, Ctor)] = &[("dense", || Box::new(DenseBackend)), ("banded", || Box::new(BandedBackend))];

pub fn backend_names() -> Vec<&'static str> {
    let mut v: Vec<_> = BACKENDS.iter().map(|(n, _)| *n).collect();
    v.push("auto");
    v
}

/// Looks up a backend by name; `auto` chooses by problem size.
pub fn select_backend(name: &str, dofs: usize) -> Result<Box<dyn LinearBackend>> {
    let name = if name == "auto" {
        if dofs <= DENSE_LIMIT {
            "dense"
        } else {
            "banded"
        }
    } else {
        name
    };
    BACKENDS.iter().find(|(n, _)| *n == name).map(|(_, c)| c()).ok_or_else(|| Error::UnknownStrategy {
        kind: "backend",
        name: name.to_string(),
        available: backend_names().join(", "),
    })
}

fn pivot_floor(scale: f64, n: usize) -> f64 {
    (n.max(1) as f64) * f64::EPSILON * scale
}

// ---------------------------------------------------------------- dense

pub struct DenseBackend;

struct DenseLu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);

impl Factorization for DenseLu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let x = self.0.solve(&DVector::from_column_slice(b)).expect("factor checked nonsingular");
        x.as_slice().to_vec()
    }
}

struct DenseSvd {
    kernel: Vec<Vec<f64>>,
    adjoint_kernel: Vec<Vec<f64>>,
    smallest: Vec<f64>,
    sigma_max: f64,
    ambiguous: bool,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    threshold: f64,
}

impl SingularAnalysis for DenseSvd {
    fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }
    fn adjoint_kernel(&self) -> &[Vec<f64>] {
        &self.adjoint_kernel
    }
    fn singular_values(&self) -> (&[f64], f64) {
        (&self.smallest, self.sigma_max)
    }
    fn ambiguous(&self) -> bool {
        self.ambiguous
    }
    fn particular(&self, b: &[f64]) -> Result<Vec<f64>> {
        let u = self.svd.u.as_ref().expect("computed");
        let vt = self.svd.v_t.as_ref().expect("computed");
        let bv = DVector::from_column_slice(b);
        let mut x = DVector::zeros(vt.ncols());
        for (i, &s) in self.svd.singular_values.iter().enumerate() {
            if s > self.threshold {
                let c = u.column(i).dot(&bv) / s;
                x += vt.row(i).transpose() * c;
            }
        }
        Ok(x.as_slice().to_vec())
    }
}

/// Cholesky-reduced standard form `C = L^-1 A L^-T` of the pencil `(A, M)`.
fn reduce_pencil(a: &CsrMatrix<f64>, m: &CsrMatrix<f64>) -> Result<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let chol = nalgebra::Cholesky::new(to_dense(m))
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l.solve_lower_triangular(&to_dense(&a.transpose())).expect("triangular");
    let c = l.solve_lower_triangular(&x.transpose()).expect("triangular");
    Ok((c, chol))
}

fn dense_symmetric_eigs(a: &CsrMatrix<f64>, m: &CsrMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (c, chol) = reduce_pencil(a, m)?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = chol.l().transpose();
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .map(|&i| lt.solve_upper_triangular(&eig.eigenvectors.column(i).into_owned()).expect("triangular").as_slice().to_vec())
        .collect();
    Ok((vals, vecs))
}

impl LinearBackend for DenseBackend {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn factor(&self, a: &CsrMatrix<f64>) -> Result<Box<dyn Factorization>> {
        let n = a.nrows();
        let lu = nalgebra::LU::new(to_dense(a));
        let floor = pivot_floor(max_abs(a), n);
        let u = lu.u();
        if (0..n).any(|i| u[(i, i)].abs() <= floor) {
            return Err(Error::Singular("zero pivot in dense LU".into()));
        }
        Ok(Box::new(DenseLu(lu)))
    }

    fn analyze(
        &self,
        a: &CsrMatrix<f64>,
        _a_adj: &CsrMatrix<f64>,
        m: &CsrMatrix<f64>,
        tol_rank: f64,
    ) -> Result<Box<dyn SingularAnalysis>> {
        // ker(A*) = ker(A^T) is spanned by the left singular vectors of A;
        // the separately assembled adjoint has already been matched against A^T.
        let svd = nalgebra::SVD::new(to_dense(a), true, true);
        let sv = &svd.singular_values;
        let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
        let threshold = tol_rank * sigma_max;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
        let zero: Vec<usize> = order.iter().copied().filter(|&i| sv[i] <= threshold).collect();
        let ambiguous = sigma_max > 0.0 && sv.iter().any(|&s| s > threshold / 10.0 && s < threshold * 10.0);
        let u = svd.u.as_ref().expect("computed");
        let vt = svd.v_t.as_ref().expect("computed");
        let kernel = m_orthonormalize(m, zero.iter().map(|&i| vt.row(i).iter().copied().collect()).collect());
        let adjoint_kernel = m_orthonormalize(m, zero.iter().map(|&i| u.column(i).iter().copied().collect()).collect());
        let smallest = order.iter().take(6).map(|&i| sv[i]).collect();
        Ok(Box::new(DenseSvd { kernel, adjoint_kernel, smallest, sigma_max, ambiguous, threshold, svd }))
    }

    fn symmetric_eigs(&self, a: &CsrMatrix<f64>, m: &CsrMatrix<f64>, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (mut vals, mut vecs) = dense_symmetric_eigs(a, m)?;
        vals.truncate(k);
        vecs.truncate(k);
        Ok((vals, vecs))
    }

    fn general_eigenvalues(&self, a: &CsrMatrix<f64>, m: &CsrMatrix<f64>) -> Result<Vec<Complex64>> {
        let (c, _) = reduce_pencil(a, m)?;
        Ok(c.complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect())
    }

    fn sup_ratio(&self, a: &CsrMatrix<f64>, h: &CsrMatrix<f64>) -> Result<Option<f64>> {
        let (c, _) = reduce_pencil(a, h)?;
        Ok(Some(c.singular_values().iter().cloned().fold(0.0, f64::max)))
    }
}

// ---------------------------------------------------------------- banded

/// One row of a banded factorization; stores columns `start..start+vals.len()`.
#[derive(Clone)]
struct BandRow {
    start: usize,
    vals: Vec<f64>,
}

impl BandRow {
    fn get(&self, c: usize) -> f64 {
        if c < self.start {
            0.0
        } else {
            self.vals.get(c - self.start).copied().unwrap_or(0.0)
        }
    }
    fn end(&self) -> usize {
        self.start + self.vals.len()
    }
}

/// Banded LU with partial pivoting restricted to the band, or without
/// pivoting (used as a positive-definiteness probe).
pub struct BandedLu {
    rows: Vec<BandRow>,
    swaps: Vec<usize>,
    lower: Vec<Vec<f64>>,
}

impl BandedLu {
    pub fn new(a: &CsrMatrix<f64>, pivoting: bool) -> Result<Self> {
        let n = a.nrows();
        let mut kl = 0;
        for (i, j, _) in a.triplet_iter() {
            if j < i {
                kl = kl.max(i - j);
            }
        }
        let floor = pivot_floor(max_abs(a), n);
        let mut rows: Vec<BandRow> = a
            .row_iter()
            .enumerate()
            .map(|(i, r)| {
                let cols = r.col_indices();
                let start = cols.first().copied().unwrap_or(i).min(i);
                let end = cols.last().map_or(i + 1, |&c| c + 1).max(i + 1);
                let mut vals = vec![0.0; end - start];
                for (&c, &v) in cols.iter().zip(r.values()) {
                    vals[c - start] += v;
                }
                BandRow { start, vals }
            })
            .collect();
        let mut swaps = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            if pivoting {
                for r in k + 1..=last {
                    if rows[r].get(k).abs() > rows[p].get(k).abs() {
                        p = r;
                    }
                }
            }
            let pv = rows[p].get(k);
            if (pivoting && pv.abs() <= floor) || (!pivoting && pv <= floor) {
                return Err(Error::Singular(format!("pivot {pv:e} at step {k}")));
            }
            rows.swap(k, p);
            swaps.push(p);
            let (head, tail) = rows.split_at_mut(k + 1);
            let prow = &head[k];
            let pend = prow.end();
            let mut mults = Vec::with_capacity(last - k);
            for row in tail.iter_mut().take(last - k) {
                let l = row.get(k) / pv;
                mults.push(l);
                if l == 0.0 {
                    continue;
                }
                if row.end() < pend {
                    let grow = pend - row.end();
                    row.vals.extend(std::iter::repeat_n(0.0, grow));
                }
                for c in k..pend {
                    let v = prow.vals[c - prow.start];
                    if v != 0.0 {
                        row.vals[c - row.start] -= l * v;
                    }
                }
                row.vals[k - row.start] = 0.0;
            }
            lower.push(mults);
        }
        Ok(Self { rows, swaps, lower })
    }
}

impl Factorization for BandedLu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.swaps[k]);
            let xk = x[k];
            for (j, l) in self.lower[k].iter().enumerate() {
                x[k + 1 + j] -= l * xk;
            }
        }
        for k in (0..n).rev() {
            let row = &self.rows[k];
            let mut s = x[k];
            for c in k + 1..row.end() {
                s -= row.vals[c - row.start] * x[c];
            }
            x[k] = s / row.vals[k - row.start];
        }
        x
    }
}

pub struct BandedBackend;

fn mass_ratio(a: &CsrMatrix<f64>, m: &CsrMatrix<f64>) -> f64 {
    let r = norm_inf_mat(a) / norm_inf_mat(m);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Smallest-`k` symmetric eigenpairs by shift-invert subspace iteration with
/// Rayleigh-Ritz; shared by the banded backend and its tests.
fn subspace_symmetric(a: &CsrMatrix<f64>, m: &CsrMatrix<f64>, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.nrows();
    let ratio = mass_ratio(a, m);
    let mut shift = 1e-6 * ratio;
    let lu = loop {
        match BandedLu::new(&combine(1.0, a, shift, m), false) {
            Ok(lu) => break lu,
            Err(_) if shift < 1e3 * ratio => shift *= 10.0,
            Err(e) => return Err(e),
        }
    };
    let p = (2 * k + 8).min(n);
    let mut rng = seeded_rng(0x5eed);
    let mut x: Vec<Vec<f64>> = (0..p).map(|_| normal_vec(&mut rng, n)).collect();
    let mut prev = vec![f64::INFINITY; k];
    for _ in 0..500 {
        let y: Vec<Vec<f64>> = x.iter().map(|v| lu.solve(&matvec(m, v))).collect();
        let (vals, vecs) = rayleigh_ritz(a, m, &y)?;
        x = vecs;
        let done = vals.iter().zip(&prev).take(k).all(|(v, p)| (v - p).abs() <= 1e-13 * (v.abs() + ratio * 1e-3));
        prev = vals.clone();
        if done {
            let vals: Vec<f64> = prev.into_iter().take(k).collect();
            x.truncate(k);
            return Ok((vals, x));
        }
    }
    Err(Error::NoConvergence("shift-invert subspace iteration".into()))
}

/// Ritz pairs of `(A, M)` on `span(y)`, ascending, `M`-orthonormal.
fn rayleigh_ritz(a: &CsrMatrix<f64>, m: &CsrMatrix<f64>, y: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let q = m_orthonormalize(m, y.to_vec());
    let p = q.len();
    let aq: Vec<Vec<f64>> = q.iter().map(|v| matvec(a, v)).collect();
    let mut small = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            small[(i, j)] = 0.5 * (dot(&q[i], &aq[j]) + dot(&q[j], &aq[i]));
        }
    }
    let eig = nalgebra::SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vecs = order
        .iter()
        .map(|&c| {
            let mut v = vec![0.0; a.nrows()];
            for (r, qr) in q.iter().enumerate() {
                axpy(eig.eigenvectors[(r, c)], qr, &mut v);
            }
            v
        })
        .collect();
    Ok((order.iter().map(|&i| eig.eigenvalues[i]).collect(), vecs))
}

fn orthonormalize(vecs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in vecs {
        let start = norm2(&v);
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &v);
                axpy(-c, q, &mut v);
            }
        }
        let nv = norm2(&v);
        if nv > 1e-12 * start && nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
            out.push(v);
        }
    }
    out
}

/// Largest singular value by power iteration on `A^T A`.
fn sigma_max(a: &CsrMatrix<f64>) -> f64 {
    let at = a.transpose();
    let mut rng = seeded_rng(7);
    let mut v = normal_vec(&mut rng, a.ncols());
    let mut s = 0.0;
    for _ in 0..200 {
        let nv = norm2(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = matvec(&at, &matvec(a, &v));
        let next = dot(&v, &w).max(0.0).sqrt();
        v = w;
        if (next - s).abs() <= 1e-10 * next {
            return next;
        }
        s = next;
    }
    s
}

/// Near-kernel of `A` from shift-invert iteration; returns Euclidean
/// orthonormal candidates with their singular values, ascending.
fn near_kernel(a: &CsrMatrix<f64>, m: &CsrMatrix<f64>, width: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = a.nrows();
    let mut shift = 1e-6 * mass_ratio(a, m);
    let lu = loop {
        match BandedLu::new(&combine(1.0, a, shift, m), true) {
            Ok(lu) => break lu,
            Err(_) if shift < 1e6 => shift *= 10.0,
            Err(e) => return Err(e),
        }
    };
    let mut rng = seeded_rng(0xfeed);
    let mut x = orthonormalize((0..width.min(n)).map(|_| normal_vec(&mut rng, n)).collect());
    for _ in 0..40 {
        x = orthonormalize(x.iter().map(|v| lu.solve(&matvec(m, v))).collect());
    }
    let p = x.len();
    let ax: Vec<Vec<f64>> = x.iter().map(|v| matvec(a, v)).collect();
    let mut small = DMatrix::zeros(n, p);
    for (j, col) in ax.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            small[(i, j)] = *v;
        }
    }
    let svd = nalgebra::SVD::new(small, false, true);
    let vt = svd.v_t.expect("computed");
    let mut out: Vec<(f64, Vec<f64>)> = (0..p)
        .map(|c| {
            let mut v = vec![0.0; n];
            for (r, xr) in x.iter().enumerate() {
                axpy(vt[(c, r)], xr, &mut v);
            }
            (svd.singular_values[c], v)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

struct BandedSingular {
    kernel: Vec<Vec<f64>>,
    adjoint_kernel: Vec<Vec<f64>>,
    smallest: Vec<f64>,
    sigma_max: f64,
    ambiguous: bool,
    a: CsrMatrix<f64>,
    m: CsrMatrix<f64>,
    shifted: BandedLu,
}

impl SingularAnalysis for BandedSingular {
    fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }
    fn adjoint_kernel(&self) -> &[Vec<f64>] {
        &self.adjoint_kernel
    }
    fn singular_values(&self) -> (&[f64], f64) {
        (&self.smallest, self.sigma_max)
    }
    fn ambiguous(&self) -> bool {
        self.ambiguous
    }

    /// Deflated refinement with the shifted factorization; converges for
    /// compatible data. Incompatible data returns the projected iterate.
    fn particular(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut u = vec![0.0; b.len()];
        let an = norm_inf_mat(&self.a);
        for _ in 0..100 {
            let au = matvec(&self.a, &u);
            let r: Vec<f64> = b.iter().zip(&au).map(|(x, y)| x - y).collect();
            if norm_inf(&r) <= 1e-13 * (an * norm_inf(&u) + norm_inf(b)) {
                break;
            }
            let mut d = self.shifted.solve(&r);
            m_project_out(&self.m, &self.kernel, &mut d);
            axpy(1.0, &d, &mut u);
        }
        m_project_out(&self.m, &self.kernel, &mut u);
        Ok(u)
    }
}

impl LinearBackend for BandedBackend {
    fn name(&self) -> &'static str {
        "banded"
    }

    fn factor(&self, a: &CsrMatrix<f64>) -> Result<Box<dyn Factorization>> {
        Ok(Box::new(BandedLu::new(a, true)?))
    }

    fn analyze(
        &self,
        a: &CsrMatrix<f64>,
        a_adj: &CsrMatrix<f64>,
        m: &CsrMatrix<f64>,
        tol_rank: f64,
    ) -> Result<Box<dyn SingularAnalysis>> {
        let smax = sigma_max(a);
        let threshold = tol_rank * smax;
        let width = 8;
        let left = near_kernel(a, m, width)?;
        let right = near_kernel(a_adj, m, width)?;
        let pick = |c: &[(f64, Vec<f64>)]| {
            m_orthonormalize(m, c.iter().filter(|(s, _)| *s <= threshold).map(|(_, v)| v.clone()).collect())
        };
        let kernel = pick(&left);
        let adjoint_kernel = pick(&right);
        let ambiguous =
            smax > 0.0 && left.iter().chain(&right).any(|(s, _)| *s > threshold / 10.0 && *s < threshold * 10.0);
        let mut shift = 1e-6 * mass_ratio(a, m);
        let shifted = loop {
            match BandedLu::new(&combine(1.0, a, shift, m), true) {
                Ok(lu) => break lu,
                Err(_) if shift < 1e6 => shift *= 10.0,
                Err(e) => return Err(e),
            }
        };
        Ok(Box::new(BandedSingular {
            kernel,
            adjoint_kernel,
            smallest: left.iter().map(|(s, _)| *s).collect(),
            sigma_max: smax,
            ambiguous,
            a: a.clone(),
            m: m.clone(),
            shifted,
        }))
    }

    fn symmetric_eigs(&self, a: &CsrMatrix<f64>, m: &CsrMatrix<f64>, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        subspace_symmetric(a, m, k)
    }

    fn general_eigenvalues(&self, _a: &CsrMatrix<f64>, _m: &CsrMatrix<f64>) -> Result<Vec<Complex64>> {
        Err(Error::Unsupported { backend: "banded", what: "non-symmetric eigenvalue problems" })
    }

    fn sup_ratio(&self, _a: &CsrMatrix<f64>, _h: &CsrMatrix<f64>) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        from_triplets(n, &t)
    }

    fn identity(n: usize) -> CsrMatrix<f64> {
        from_triplets(n, &(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn banded_lu_matches_dense_with_pivoting() {
        let n: usize = 30;
        let mut rng = seeded_rng(3);
        let mut t = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 3).min(n) {
                t.push((i, j, normal_vec(&mut rng, 1)[0]));
            }
        }
        let a = from_triplets(n, &t);
        let b = normal_vec(&mut rng, n);
        let x1 = BandedLu::new(&a, true).unwrap().solve(&b);
        let x2 = DenseBackend.factor(&a).unwrap().solve(&b);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn no_pivot_probe_rejects_indefinite() {
        assert!(BandedLu::new(&laplacian_1d(10, 0.0), false).is_ok());
        assert!(BandedLu::new(&laplacian_1d(10, -1.0), false).is_err());
    }

    #[test]
    fn symmetric_eigs_agree_between_backends() {
        let n = 60;
        let a = laplacian_1d(n, 0.0);
        let m = identity(n);
        let (d, _) = DenseBackend.symmetric_eigs(&a, &m, 4).unwrap();
        let (b, vecs) = BandedBackend.symmetric_eigs(&a, &m, 4).unwrap();
        for k in 0..4 {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((d[k] - exact).abs() < 1e-12);
            assert!((b[k] - exact).abs() < 1e-10);
            assert!((norm2(&vecs[k]) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn kernels_of_singular_matrix() {
        // Neumann-type path Laplacian: kernel is the constant vector
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let a = from_triplets(n, &t);
        let m = identity(n);
        for backend in [select_backend("dense", n).unwrap(), select_backend("banded", n).unwrap()] {
            let an = backend.analyze(&a, &a, &m, 1e-9).unwrap();
            assert_eq!(an.kernel().len(), 1, "{}", backend.name());
            assert_eq!(an.adjoint_kernel().len(), 1);
            let k = &an.kernel()[0];
            assert!(k.iter().all(|v| (v.abs() - 1.0 / (n as f64).sqrt()).abs() < 1e-8));
            let b: Vec<f64> = (0..n).map(|i| (i as f64 - 19.5) / 10.0).collect();
            let u = an.particular(&b).unwrap();
            let r: Vec<f64> = matvec(&a, &u).iter().zip(&b).map(|(x, y)| x - y).collect();
            assert!(norm_inf(&r) < 1e-9, "{} residual {}", backend.name(), norm_inf(&r));
            assert!(dot(k, &u).abs() < 1e-9);
        }
    }

    #[test]
    fn registry_rejects_unknown_names() {
        assert_eq!(select_backend("auto", 10).unwrap().name(), "dense");
        assert_eq!(select_backend("auto", 5000).unwrap().name(), "banded");
        assert!(matches!(select_backend("cg", 10), Err(Error::UnknownStrategy { .. })));
    }
}
