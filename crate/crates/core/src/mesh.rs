//! Interval and structured triangle meshes.

use serde::Serialize;

use crate::error::{Error, Result};

/// A conforming simplicial mesh of an interval or an axis-aligned rectangle.
///
/// Vertices are stored as flat coordinate vectors of length `dimension`.
#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    pub dimension: usize,
    pub vertices: Vec<Vec<f64>>,
    pub cells: Vec<Vec<usize>>,
    pub boundary_vertices: Vec<usize>,
    #[serde(skip)]
    pub cell_measures: Vec<f64>,
    /// Bounding box `[(min, max); dimension]` of the declared domain.
    #[serde(skip)]
    pub bounds: Vec<(f64, f64)>,
    /// Grid counts per axis (`[n]` or `[nx, ny]`).
    #[serde(skip)]
    pub divisions: Vec<usize>,
}

fn check_range(lo: f64, hi: f64, axis: &str) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::InvalidDomain(format!("{axis}-range ({lo}, {hi}) is empty")));
    }
    Ok(())
}

/// Uniform partition of `[a, b]` into `n` segments.
pub fn build_interval_mesh(a: f64, b: f64, n: usize) -> Result<Mesh> {
    check_range(a, b, "x")?;
    if n == 0 {
        return Err(Error::InvalidResolution("interval mesh needs at least one cell".into()));
    }
    let h = (b - a) / n as f64;
    let vertices = (0..=n)
        .map(|i| if i == n { vec![b] } else { vec![a + i as f64 * h] })
        .collect::<Vec<_>>();
    let cells = (0..n).map(|i| vec![i, i + 1]).collect::<Vec<_>>();
    let cell_measures = cells.iter().map(|c| vertices[c[1]][0] - vertices[c[0]][0]).collect();
    Ok(Mesh {
        dimension: 1,
        vertices,
        cells,
        boundary_vertices: vec![0, n],
        cell_measures,
        bounds: vec![(a, b)],
        divisions: vec![n],
    })
}

/// Structured triangulation of a rectangle; each grid box is cut along the
/// lower-left to upper-right diagonal.
pub fn build_rect_mesh(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Result<Mesh> {
    check_range(x_range.0, x_range.1, "x")?;
    check_range(y_range.0, y_range.1, "y")?;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidResolution("rectangle mesh needs nx, ny >= 1".into()));
    }
    let coord = |lo: f64, hi: f64, n: usize, i: usize| {
        if i == n {
            hi
        } else {
            lo + (hi - lo) * i as f64 / n as f64
        }
    };
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary_vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if i == 0 || j == 0 || i == nx || j == ny {
                boundary_vertices.push(vertices.len());
            }
            vertices.push(vec![coord(x_range.0, x_range.1, nx, i), coord(y_range.0, y_range.1, ny, j)]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            cells.push(vec![v00, v10, v11]);
            cells.push(vec![v00, v11, v01]);
        }
    }
    let cell_measures = cells.iter().map(|c| triangle_area(&vertices, c)).collect();
    Ok(Mesh {
        dimension: 2,
        vertices,
        cells,
        boundary_vertices,
        cell_measures,
        bounds: vec![x_range, y_range],
        divisions: vec![nx, ny],
    })
}

fn triangle_area(vertices: &[Vec<f64>], cell: &[usize]) -> f64 {
    let (a, b, c) = (&vertices[cell[0]], &vertices[cell[1]], &vertices[cell[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn total_measure(&self) -> f64 {
        self.cell_measures.iter().sum()
    }

    pub fn domain_measure(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Representative mesh size: the largest cell diameter along the axes.
    pub fn h(&self) -> f64 {
        self.bounds
            .iter()
            .zip(&self.divisions)
            .map(|((lo, hi), n)| (hi - lo) / *n as f64)
            .fold(0.0, f64::max)
    }

    pub fn is_boundary(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertex_count()];
        for &v in &self.boundary_vertices {
            flags[v] = true;
        }
        flags
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
