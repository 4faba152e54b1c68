//! Continuous Lagrange spaces on a structured [`Mesh`].

use std::sync::Arc;

use crate::element::{local_dof_count, reference_nodes};
use crate::error::{Error, Result};
use crate::mesh::{CellKind, Mesh};

/// Marks a local DOF removed by a homogeneous Dirichlet constraint.
pub const CONSTRAINED: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    order: usize,
    dirichlet: bool,
    n_loc: usize,
    dof_count: usize,
    /// Per element, the DOF index of every local node (`CONSTRAINED` for
    /// boundary nodes of a Dirichlet space).
    elem_dofs: Vec<usize>,
    /// Coordinates of each DOF.
    nodes: Vec<[f64; 2]>,
    /// Unconstrained index of each DOF.
    full_index: Vec<usize>,
    n_full: usize,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, order: usize, dirichlet: bool) -> Result<FunctionSpace> {
        if !(1..=2).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        let kind = mesh.kind();
        let nv = mesh.num_vertices();
        let ne = mesh.num_edges();
        let n_loc = local_dof_count(kind, order);

        // Unconstrained numbering: vertices, edges, cell centres.
        let mut full_nodes: Vec<[f64; 2]> = mesh.vertices().to_vec();
        let mut full_boundary: Vec<bool> = (0..nv).map(|v| mesh.vertex_on_boundary(v)).collect();
        if order == 2 {
            for e in 0..ne {
                let [a, b] = mesh.edge(e);
                let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
                full_nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                full_boundary.push(mesh.edge_on_boundary(e));
            }
            if kind == CellKind::Rectangular {
                for c in 0..mesh.num_elements() {
                    let vs = mesh.element_vertices(c);
                    let (p0, p2) = (mesh.vertex(vs[0]), mesh.vertex(vs[2]));
                    full_nodes.push([0.5 * (p0[0] + p2[0]), 0.5 * (p0[1] + p2[1])]);
                    full_boundary.push(false);
                }
            }
        }
        let n_full = full_nodes.len();

        let mut elem_full = Vec::with_capacity(mesh.num_elements() * n_loc);
        for e in 0..mesh.num_elements() {
            let vs = mesh.element_vertices(e);
            let es = mesh.element_edges(e);
            match (kind, order) {
                (CellKind::Simplicial, 1) => elem_full.extend_from_slice(vs),
                (CellKind::Simplicial, _) => {
                    elem_full.extend_from_slice(vs);
                    elem_full.extend(es.iter().map(|ed| nv + ed));
                }
                (CellKind::Rectangular, 1) => {
                    elem_full.extend_from_slice(&[vs[0], vs[1], vs[3], vs[2]]);
                }
                (CellKind::Rectangular, _) => {
                    let (b, r, t, l) = (nv + es[0], nv + es[1], nv + es[2], nv + es[3]);
                    let c = nv + ne + e;
                    elem_full.extend_from_slice(&[vs[0], b, vs[1], l, c, r, vs[3], t, vs[2]]);
                }
            }
        }

        let (elem_dofs, nodes, full_index, dof_count) = if dirichlet {
            let mut free = vec![CONSTRAINED; n_full];
            let mut full_index = Vec::new();
            let mut nodes = Vec::new();
            for i in 0..n_full {
                if !full_boundary[i] {
                    free[i] = full_index.len();
                    full_index.push(i);
                    nodes.push(full_nodes[i]);
                }
            }
            let elem_dofs = elem_full.iter().map(|&i| free[i]).collect();
            let count = full_index.len();
            (elem_dofs, nodes, full_index, count)
        } else {
            (elem_full, full_nodes, (0..n_full).collect(), n_full)
        };

        Ok(FunctionSpace {
            mesh,
            order,
            dirichlet,
            n_loc,
            dof_count,
            elem_dofs,
            nodes,
            full_index,
            n_full,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_dirichlet(&self) -> bool {
        self.dirichlet
    }

    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    /// Number of DOFs before boundary constraints are removed.
    pub fn unconstrained_count(&self) -> usize {
        self.n_full
    }

    pub fn local_count(&self) -> usize {
        self.n_loc
    }

    /// DOF indices of element `e` in local order; [`CONSTRAINED`] marks
    /// removed boundary nodes.
    #[inline]
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        &self.elem_dofs[e * self.n_loc..(e + 1) * self.n_loc]
    }

    pub fn node(&self, dof: usize) -> [f64; 2] {
        self.nodes[dof]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// Index of `dof` in the unconstrained numbering.
    pub fn full_index(&self, dof: usize) -> usize {
        self.full_index[dof]
    }

    /// Elements touching each DOF, in ascending element order.
    pub fn dof_elements(&self) -> Vec<Vec<usize>> {
        let mut star = vec![Vec::new(); self.dof_count];
        for e in 0..self.mesh.num_elements() {
            for &d in self.element_dofs(e) {
                if d != CONSTRAINED {
                    star[d].push(e);
                }
            }
        }
        star
    }

    /// Nodal interpolation of a scalar function.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> CoefficientVector {
        CoefficientVector {
            components: 1,
            dof_count: self.dof_count,
            values: self.nodes.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Nodal interpolation of a 2-vector function into the product space,
    /// component-major.
    pub fn interpolate_vector(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> CoefficientVector {
        let vals: Vec<[f64; 2]> = self.nodes.iter().map(|&x| f(x)).collect();
        let mut values = Vec::with_capacity(2 * self.dof_count);
        values.extend(vals.iter().map(|v| v[0]));
        values.extend(vals.iter().map(|v| v[1]));
        CoefficientVector {
            components: 2,
            dof_count: self.dof_count,
            values,
        }
    }

    /// Reference coordinates of the local nodes, matching [`Self::element_dofs`].
    pub fn local_reference_nodes(&self) -> Vec<[f64; 2]> {
        reference_nodes(self.mesh.kind(), self.order)
    }
}

/// Coefficients of a scalar or vector-valued finite element function.
/// Vector fields store all DOFs of component 0, then component 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    components: usize,
    dof_count: usize,
    values: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(space: &FunctionSpace, components: usize, values: Vec<f64>) -> Result<Self> {
        let expected = components * space.dof_count();
        if values.len() != expected {
            return Err(Error::mismatch("coefficient vector", expected, values.len()));
        }
        Ok(CoefficientVector {
            components,
            dof_count: space.dof_count(),
            values,
        })
    }

    pub fn zeros(space: &FunctionSpace, components: usize) -> Self {
        CoefficientVector {
            components,
            dof_count: space.dof_count(),
            values: vec![0.0; components * space.dof_count()],
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.values[c * self.dof_count..(c + 1) * self.dof_count]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{reference_basis, Tabulation};
    use crate::mesh::Rect;

    fn mesh(nx: usize, ny: usize, kind: CellKind) -> Arc<Mesh> {
        Arc::new(Mesh::build(nx, ny, Rect::new(0.0, 2.0, -1.0, 1.5), kind).unwrap())
    }

    #[test]
    fn dof_counts_on_unit_square() {
        let m = Arc::new(Mesh::build(1, 1, Rect::square(1.0), CellKind::Simplicial).unwrap());
        assert_eq!(FunctionSpace::new(m.clone(), 1, false).unwrap().dof_count(), 4);
        assert_eq!(FunctionSpace::new(m.clone(), 2, false).unwrap().dof_count(), 9);
        assert_eq!(FunctionSpace::new(m.clone(), 1, true).unwrap().dof_count(), 0);
        assert!(matches!(
            FunctionSpace::new(m, 3, false),
            Err(Error::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn dof_count_formulas() {
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            let m = mesh(5, 3, kind);
            let nv = m.num_vertices();
            let ne = m.num_edges();
            let p1 = FunctionSpace::new(m.clone(), 1, false).unwrap();
            assert_eq!(p1.dof_count(), nv);
            let p2 = FunctionSpace::new(m.clone(), 2, false).unwrap();
            let centres = if kind == CellKind::Rectangular { m.num_elements() } else { 0 };
            assert_eq!(p2.dof_count(), nv + ne + centres);
            let boundary = (0..p2.dof_count())
                .filter(|&i| {
                    let [x, y] = p2.node(i);
                    x == 0.0 || x == 2.0 || y == -1.0 || y == 1.5
                })
                .count();
            let p2d = FunctionSpace::new(m, 2, true).unwrap();
            assert_eq!(p2d.dof_count(), p2.dof_count() - boundary);
        }
    }

    #[test]
    fn numbering_is_deterministic() {
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            let a = FunctionSpace::new(mesh(4, 4, kind), 2, true).unwrap();
            let b = FunctionSpace::new(mesh(4, 4, kind), 2, true).unwrap();
            assert_eq!(a.elem_dofs, b.elem_dofs);
            assert_eq!(a.nodes, b.nodes);
        }
    }

    #[test]
    fn local_nodes_agree_with_global_nodes() {
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            for order in [1, 2] {
                let m = mesh(3, 2, kind);
                let s = FunctionSpace::new(m.clone(), order, false).unwrap();
                let refs = s.local_reference_nodes();
                for e in 0..m.num_elements() {
                    let (o, j) = m.element_map(e);
                    for (k, &d) in s.element_dofs(e).iter().enumerate() {
                        let xi = refs[k];
                        let x = [
                            o[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
                            o[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
                        ];
                        let n = s.node(d);
                        assert!((x[0] - n[0]).abs() < 1e-12 && (x[1] - n[1]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn interpolation_of_simple_functions() {
        let m = mesh(3, 3, CellKind::Simplicial);
        let s = FunctionSpace::new(m, 1, false).unwrap();
        assert!(s.interpolate(|_| 1.0).values().iter().all(|&v| v == 1.0));
        let fx = s.interpolate(|x| x[0]);
        for (i, v) in fx.values().iter().enumerate() {
            assert_eq!(*v, s.node(i)[0]);
        }
        let vec = s.interpolate_vector(|x| [x[0], -x[1]]);
        assert_eq!(vec.component(1)[5], -s.node(5)[1]);
    }

    #[test]
    fn order_two_reproduces_quadratics_at_quadrature_points() {
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            let m = mesh(3, 4, kind);
            let s = FunctionSpace::new(m.clone(), 2, false).unwrap();
            let funcs: [fn([f64; 2]) -> f64; 3] = [|x| x[0], |x| x[1], |x| x[0] * x[1]];
            for f in funcs {
                let c = s.interpolate(f);
                for e in 0..m.num_elements() {
                    let (o, j) = m.element_map(e);
                    let tab = Tabulation::new(kind, 2, j);
                    let local: Vec<f64> =
                        s.element_dofs(e).iter().map(|&d| c.values()[d]).collect();
                    for (q, xi) in tab.points.iter().enumerate() {
                        let x = [
                            o[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
                            o[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
                        ];
                        assert!((tab.eval(q, &local) - f(x)).abs() < 1e-12);
                    }
                }
            }
        }
        // keep the reference basis import exercised in this module's tests
        let mut v = [0.0; 3];
        let mut g = [[0.0; 2]; 3];
        reference_basis(CellKind::Simplicial, 1, [0.0, 0.0], &mut v, &mut g);
        assert_eq!(v[0], 1.0);
    }
}
