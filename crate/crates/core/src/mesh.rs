//! Structured meshes of an axis-aligned rectangle.
//!
//! Vertices are numbered lexicographically by `(iy, ix)`. Edges are numbered
//! horizontal first, then vertical, then (simplicial meshes only) the
//! diagonals, each family again lexicographically by `(iy, ix)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Every grid cell is split into two triangles along the
    /// bottom-left to top-right diagonal.
    #[default]
    Simplicial,
    /// Bilinear quadrilaterals.
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    /// `[0, side]²`
    pub fn square(side: f64) -> Self {
        Rect::new(0.0, side, 0.0, side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    bounds: Rect,
    kind: CellKind,
    vertices: Vec<[f64; 2]>,
    cells: Vec<usize>,
    cell_edges: Vec<usize>,
    edges: Vec<[usize; 2]>,
    edge_on_boundary: Vec<bool>,
}

impl Mesh {
    pub fn build(nx: usize, ny: usize, bounds: Rect, kind: CellKind) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh(format!(
                "cell counts must be positive, got {nx}x{ny}"
            )));
        }
        let finite = [bounds.x0, bounds.x1, bounds.y0, bounds.y1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || bounds.width() <= 0.0 || bounds.height() <= 0.0 {
            return Err(Error::InvalidMesh(format!("degenerate bounds {bounds:?}")));
        }

        let hx = bounds.width() / nx as f64;
        let hy = bounds.height() / ny as f64;
        let vid = |ix: usize, iy: usize| iy * (nx + 1) + ix;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for iy in 0..=ny {
            for ix in 0..=nx {
                // Pin the last row/column to the exact bound.
                let x = if ix == nx { bounds.x1 } else { bounds.x0 + ix as f64 * hx };
                let y = if iy == ny { bounds.y1 } else { bounds.y0 + iy as f64 * hy };
                vertices.push([x, y]);
            }
        }

        let n_h = nx * (ny + 1);
        let n_v = (nx + 1) * ny;
        let h_edge = |ix: usize, iy: usize| iy * nx + ix;
        let v_edge = |ix: usize, iy: usize| n_h + iy * (nx + 1) + ix;
        let d_edge = |ix: usize, iy: usize| n_h + n_v + iy * nx + ix;

        let mut edges = Vec::new();
        let mut edge_on_boundary = Vec::new();
        for iy in 0..=ny {
            for ix in 0..nx {
                edges.push([vid(ix, iy), vid(ix + 1, iy)]);
                edge_on_boundary.push(iy == 0 || iy == ny);
            }
        }
        for iy in 0..ny {
            for ix in 0..=nx {
                edges.push([vid(ix, iy), vid(ix, iy + 1)]);
                edge_on_boundary.push(ix == 0 || ix == nx);
            }
        }
        if kind == CellKind::Simplicial {
            for iy in 0..ny {
                for ix in 0..nx {
                    edges.push([vid(ix, iy), vid(ix + 1, iy + 1)]);
                    edge_on_boundary.push(false);
                }
            }
        }

        let mut cells = Vec::new();
        let mut cell_edges = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let (v00, v10, v01, v11) =
                    (vid(ix, iy), vid(ix + 1, iy), vid(ix, iy + 1), vid(ix + 1, iy + 1));
                match kind {
                    CellKind::Simplicial => {
                        // lower triangle, then upper; both counterclockwise
                        cells.extend_from_slice(&[v00, v10, v11]);
                        cell_edges.extend_from_slice(&[
                            h_edge(ix, iy),
                            v_edge(ix + 1, iy),
                            d_edge(ix, iy),
                        ]);
                        cells.extend_from_slice(&[v00, v11, v01]);
                        cell_edges.extend_from_slice(&[
                            d_edge(ix, iy),
                            h_edge(ix, iy + 1),
                            v_edge(ix, iy),
                        ]);
                    }
                    CellKind::Rectangular => {
                        cells.extend_from_slice(&[v00, v10, v11, v01]);
                        // bottom, right, top, left
                        cell_edges.extend_from_slice(&[
                            h_edge(ix, iy),
                            v_edge(ix + 1, iy),
                            h_edge(ix, iy + 1),
                            v_edge(ix, iy),
                        ]);
                    }
                }
            }
        }

        Ok(Mesh {
            nx,
            ny,
            bounds,
            kind,
            vertices,
            cells,
            cell_edges,
            edges,
            edge_on_boundary,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn hx(&self) -> f64 {
        self.bounds.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.bounds.height() / self.ny as f64
    }

    pub fn vertices_per_element(&self) -> usize {
        match self.kind {
            CellKind::Simplicial => 3,
            CellKind::Rectangular => 4,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len() / self.vertices_per_element()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Vertices of element `e`, counterclockwise.
    pub fn element_vertices(&self, e: usize) -> &[usize] {
        let k = self.vertices_per_element();
        &self.cells[e * k..(e + 1) * k]
    }

    /// Edges of element `e`: `(v0v1, v1v2, v2v0)` for triangles and
    /// `(bottom, right, top, left)` for quadrilaterals.
    pub fn element_edges(&self, e: usize) -> &[usize] {
        let k = self.vertices_per_element();
        &self.cell_edges[e * k..(e + 1) * k]
    }

    pub fn edge(&self, edge: usize) -> [usize; 2] {
        self.edges[edge]
    }

    pub fn edge_on_boundary(&self, edge: usize) -> bool {
        self.edge_on_boundary[edge]
    }

    pub fn vertex_on_boundary(&self, v: usize) -> bool {
        let (ix, iy) = (v % (self.nx + 1), v / (self.nx + 1));
        ix == 0 || iy == 0 || ix == self.nx || iy == self.ny
    }

    /// Index of the reference-to-physical map shared by element `e`.
    /// All elements with the same class have identical affine geometry
    /// up to translation.
    pub fn geometry_class(&self, e: usize) -> usize {
        match self.kind {
            CellKind::Simplicial => e % 2,
            CellKind::Rectangular => 0,
        }
    }

    pub fn num_geometry_classes(&self) -> usize {
        match self.kind {
            CellKind::Simplicial => 2,
            CellKind::Rectangular => 1,
        }
    }

    /// Affine map `x = origin + J·ξ` of element `e` from its reference element.
    pub fn element_map(&self, e: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        let origin = self.vertices[self.element_vertices(e)[0]];
        (origin, self.class_jacobian(self.geometry_class(e)))
    }

    pub(crate) fn class_jacobian(&self, class: usize) -> [[f64; 2]; 2] {
        let (hx, hy) = (self.hx(), self.hy());
        match (self.kind, class) {
            (CellKind::Simplicial, 0) => [[hx, hx], [0.0, hy]],
            (CellKind::Simplicial, _) => [[hx, 0.0], [hy, hy]],
            (CellKind::Rectangular, _) => [[hx, 0.0], [0.0, hy]],
        }
    }

    pub fn element_area(&self, _e: usize) -> f64 {
        match self.kind {
            CellKind::Simplicial => 0.5 * self.hx() * self.hy(),
            CellKind::Rectangular => self.hx() * self.hy(),
        }
    }
}
