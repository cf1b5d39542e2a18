//! Piecewise-linear spaces on a [`Mesh`]: the discrete counterparts of the
//! degenerate Sobolev spaces, with or without boundary constraints.

use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::expr::ScalarExpr;
use crate::mesh::Mesh;
use crate::problem::BoundaryKind;

/// A quadrature node on a cell, with the values of the cell's local basis
/// functions at that node.
#[derive(Debug, Clone)]
pub struct QuadNode {
    pub point: Vec<f64>,
    pub weight: f64,
    pub basis: Vec<f64>,
}

/// Per-cell geometry: local vertex ids, basis gradients and quadrature.
#[derive(Debug, Clone)]
pub struct CellData {
    pub vertices: Vec<usize>,
    pub grads: Vec<Vec<f64>>,
    pub nodes: Vec<QuadNode>,
}

impl CellData {
    /// Gradient of the interpolant with the given vertex values.
    pub fn gradient(&self, values: &[f64]) -> Vec<f64> {
        let n = self.grads[0].len();
        let mut g = vec![0.0; n];
        for (&v, grad) in self.vertices.iter().zip(&self.grads) {
            for (gi, di) in g.iter_mut().zip(grad) {
                *gi += values[v] * di;
            }
        }
        g
    }

    /// Value of the interpolant at quadrature node `q`.
    pub fn value(&self, q: usize, values: &[f64]) -> f64 {
        self.nodes[q].basis.iter().zip(&self.vertices).map(|(b, &v)| b * values[v]).sum()
    }
}

fn gauss3(mesh: &Mesh, cell: &[usize]) -> CellData {
    let (x0, x1) = (mesh.vertices[cell[0]][0], mesh.vertices[cell[1]][0]);
    let h = x1 - x0;
    let r = (0.6f64).sqrt();
    let nodes = [(-r, 5.0 / 9.0), (0.0, 8.0 / 9.0), (r, 5.0 / 9.0)]
        .iter()
        .map(|&(xi, w)| {
            let l1 = 0.5 * (1.0 + xi);
            QuadNode { point: vec![x0 + h * l1], weight: 0.5 * h * w, basis: vec![1.0 - l1, l1] }
        })
        .collect();
    CellData { vertices: cell.to_vec(), grads: vec![vec![-1.0 / h], vec![1.0 / h]], nodes }
}

fn mid_edge(mesh: &Mesh, cell: &[usize], area: f64) -> CellData {
    let (a, b, c) = (&mesh.vertices[cell[0]], &mesh.vertices[cell[1]], &mesh.vertices[cell[2]]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let gb = vec![(c[1] - a[1]) / det, -(c[0] - a[0]) / det];
    let gc = vec![-(b[1] - a[1]) / det, (b[0] - a[0]) / det];
    let ga = vec![-gb[0] - gc[0], -gb[1] - gc[1]];
    let nodes = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
        .iter()
        .map(|bary| QuadNode {
            point: (0..2).map(|d| bary[0] * a[d] + bary[1] * b[d] + bary[2] * c[d]).collect(),
            weight: area / 3.0,
            basis: bary.to_vec(),
        })
        .collect();
    CellData { vertices: cell.to_vec(), grads: vec![ga, gb, gc], nodes }
}

/// P1 finite element space over a mesh.
#[derive(Debug, Clone)]
pub struct DiscreteSpace {
    pub mesh: Arc<Mesh>,
    pub bc: BoundaryKind,
    pub dof_count: usize,
    /// Vertex index to dof index; `None` marks a constrained vertex.
    pub dof_map: Vec<Option<usize>>,
    pub cells: Vec<CellData>,
}

/// Builds the discrete space; Dirichlet spaces constrain every boundary vertex.
pub fn build_space(mesh: Arc<Mesh>, bc: BoundaryKind) -> DiscreteSpace {
    let constrained = match bc {
        BoundaryKind::Neumann => vec![false; mesh.vertex_count()],
        BoundaryKind::Dirichlet => mesh.is_boundary(),
    };
    let mut next = 0;
    let dof_map = constrained
        .iter()
        .map(|&c| {
            if c {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect();
    let cells = mesh
        .cells
        .iter()
        .zip(&mesh.cell_measures)
        .map(|(c, &m)| if mesh.dimension == 1 { gauss3(&mesh, c) } else { mid_edge(&mesh, c, m) })
        .collect();
    DiscreteSpace { mesh, bc, dof_count: next, dof_map, cells }
}

impl DiscreteSpace {
    pub fn dimension(&self) -> usize {
        self.mesh.dimension
    }

    /// The same mesh with the other boundary treatment.
    pub fn with_bc(&self, bc: BoundaryKind) -> DiscreteSpace {
        if bc == self.bc {
            self.clone()
        } else {
            build_space(self.mesh.clone(), bc)
        }
    }

    /// Vertex values of a dof vector (constrained vertices are zero).
    pub fn full_values(&self, coeffs: &[f64]) -> Vec<f64> {
        self.dof_map.iter().map(|d| d.map_or(0.0, |i| coeffs[i])).collect()
    }

    /// Dof vector of vertex values (constrained vertices dropped).
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dof_count];
        for (v, d) in self.dof_map.iter().enumerate() {
            if let Some(i) = d {
                out[*i] = values[v];
            }
        }
        out
    }

    /// Nodal interpolant of an expression as a dof vector.
    pub fn interpolate(&self, f: &ScalarExpr) -> Result<Vec<f64>> {
        let values = self.mesh.vertices.iter().map(|p| f.eval(p)).collect::<Result<Vec<_>>>()?;
        Ok(self.restrict(&values))
    }

    /// Quadrature nodes of all cells.
    pub fn quadrature_points(&self) -> Vec<Vec<f64>> {
        self.cells.iter().flat_map(|c| c.nodes.iter().map(|n| n.point.clone())).collect()
    }

    /// Points used for sampled pointwise checks: quadrature nodes plus a
    /// Halton set in the bounding box.
    pub fn sample_points(&self) -> Vec<Vec<f64>> {
        let mut pts = self.quadrature_points();
        pts.extend(crate::fields::halton_points(&self.mesh.bounds, 64, 0));
        pts
    }

    /// Sum over all quadrature nodes of `weight * f(cell, node)`.
    pub fn integrate<F: FnMut(usize, usize) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (ci, cell) in self.cells.iter().enumerate() {
            for (qi, node) in cell.nodes.iter().enumerate() {
                s += node.weight * f(ci, qi);
            }
        }
        s
    }

    /// `(int |u|^r)^(1/r)` by quadrature, `u` given by vertex values.
    pub fn lp_norm_values(&self, values: &[f64], r: f64) -> f64 {
        self.integrate(|c, q| self.cells[c].value(q, values).abs().powf(r)).powf(1.0 / r)
    }

    /// `(int |f|^r)^(1/r)` of an expression by quadrature.
    pub fn lp_norm_expr(&self, f: &ScalarExpr, r: f64) -> Result<f64> {
        let mut acc = 0.0;
        for cell in &self.cells {
            for node in &cell.nodes {
                acc += node.weight * f.eval(&node.point)?.abs().powf(r);
            }
        }
        Ok(acc.powf(1.0 / r))
    }

    /// `(int (sum_k f_k^2)^(r/2))^(1/r)` of a vector of expressions.
    pub fn lp_norm_vector(&self, fs: &[ScalarExpr], r: f64) -> Result<f64> {
        let mut acc = 0.0;
        for cell in &self.cells {
            for node in &cell.nodes {
                let mut s = 0.0;
                for f in fs {
                    s += f.eval(&node.point)?.powi(2);
                }
                acc += node.weight * s.sqrt().powf(r);
            }
        }
        Ok(acc.powf(1.0 / r))
    }

    /// Mean value `u_Theta` of a function given by vertex values.
    pub fn mean(&self, values: &[f64]) -> f64 {
        self.integrate(|c, q| self.cells[c].value(q, values)) / self.mesh.total_measure()
    }

    pub fn solution(self: &Arc<Self>, coeffs: Vec<f64>) -> WeakSolution {
        WeakSolution::new(self.clone(), coeffs)
    }
}

/// Discrete pair `(u, grad u)`: dof coefficients with the elementwise
/// gradient of the interpolant.
#[derive(Debug, Clone)]
pub struct WeakSolution {
    pub coeffs: Vec<f64>,
    pub gradient: Vec<Vec<f64>>,
    pub space: Arc<DiscreteSpace>,
}

impl Serialize for WeakSolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("WeakSolution", 2)?;
        st.serialize_field("coeffs", &self.coeffs)?;
        st.serialize_field("vertex_values", &self.vertex_values())?;
        st.end()
    }
}

impl WeakSolution {
    pub fn new(space: Arc<DiscreteSpace>, coeffs: Vec<f64>) -> Self {
        let values = space.full_values(&coeffs);
        let gradient = space.cells.iter().map(|c| c.gradient(&values)).collect();
        Self { coeffs, gradient, space }
    }

    pub fn vertex_values(&self) -> Vec<f64> {
        self.space.full_values(&self.coeffs)
    }

    /// CSV rows `x[,y],value` per vertex.
    pub fn to_csv(&self) -> String {
        let values = self.vertex_values();
        let dim = self.space.dimension();
        let mut out = String::from(if dim == 1 { "x,u\n" } else { "x,y,u\n" });
        for (p, v) in self.space.mesh.vertices.iter().zip(values) {
            for c in p {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{v}\n"));
        }
        out
    }
}
