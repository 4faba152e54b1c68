//! Reference Lagrange elements, quadrature rules and per-element tabulations.
//!
//! Local DOF order:
//! - triangles, order 1: the three vertices in element order;
//! - triangles, order 2: vertices, then midpoints of edges `01, 12, 20`;
//! - quadrilaterals: tensor-product order `j·(k+1) + i` over the reference
//!   square `[0,1]²`, `i` running along x.

use crate::mesh::{CellKind, Mesh};

/// Quadrature rule on a reference element, weights summing to its area.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Seven-point rule on the reference triangle, exact for degree 5.
    pub fn triangle_degree5() -> Self {
        let s15 = 15f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 2400.0;
        let wb = (155.0 + s15) / 2400.0;
        QuadratureRule {
            points: vec![
                [1.0 / 3.0, 1.0 / 3.0],
                [a, a],
                [1.0 - 2.0 * a, a],
                [a, 1.0 - 2.0 * a],
                [b, b],
                [1.0 - 2.0 * b, b],
                [b, 1.0 - 2.0 * b],
            ],
            weights: vec![9.0 / 80.0, wa, wa, wa, wb, wb, wb],
        }
    }

    /// 3×3 Gauss–Legendre on `[0,1]²`, exact for degree 5 in each variable.
    pub fn square_gauss3() -> Self {
        let d = 0.5 * (0.6f64).sqrt();
        let p = [0.5 - d, 0.5, 0.5 + d];
        let w = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        let mut points = Vec::with_capacity(9);
        let mut weights = Vec::with_capacity(9);
        for j in 0..3 {
            for i in 0..3 {
                points.push([p[i], p[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        QuadratureRule { points, weights }
    }

    pub fn for_kind(kind: CellKind) -> Self {
        match kind {
            CellKind::Simplicial => Self::triangle_degree5(),
            CellKind::Rectangular => Self::square_gauss3(),
        }
    }
}

pub fn local_dof_count(kind: CellKind, order: usize) -> usize {
    match (kind, order) {
        (CellKind::Simplicial, 1) => 3,
        (CellKind::Simplicial, 2) => 6,
        (CellKind::Rectangular, 1) => 4,
        (CellKind::Rectangular, 2) => 9,
        _ => panic!("unsupported order {order}"),
    }
}

/// Values and reference gradients of all local basis functions at `xi`.
pub fn reference_basis(
    kind: CellKind,
    order: usize,
    xi: [f64; 2],
    values: &mut [f64],
    grads: &mut [[f64; 2]],
) {
    let [s, t] = xi;
    match (kind, order) {
        (CellKind::Simplicial, 1) => {
            values[..3].copy_from_slice(&[1.0 - s - t, s, t]);
            grads[..3].copy_from_slice(&[[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]);
        }
        (CellKind::Simplicial, 2) => {
            let l = [1.0 - s - t, s, t];
            let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
            for i in 0..3 {
                values[i] = l[i] * (2.0 * l[i] - 1.0);
                let f = 4.0 * l[i] - 1.0;
                grads[i] = [f * dl[i][0], f * dl[i][1]];
            }
            for (k, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                values[3 + k] = 4.0 * l[a] * l[b];
                grads[3 + k] = [
                    4.0 * (l[b] * dl[a][0] + l[a] * dl[b][0]),
                    4.0 * (l[b] * dl[a][1] + l[a] * dl[b][1]),
                ];
            }
        }
        (CellKind::Rectangular, 1) => {
            let (v, d) = (|t: f64| [1.0 - t, t], [-1.0, 1.0]);
            let (vs, vt) = (v(s), v(t));
            for j in 0..2 {
                for i in 0..2 {
                    values[j * 2 + i] = vs[i] * vt[j];
                    grads[j * 2 + i] = [d[i] * vt[j], vs[i] * d[j]];
                }
            }
        }
        (CellKind::Rectangular, 2) => {
            let v = |t: f64| [(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)];
            let d = |t: f64| [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0];
            let (vs, vt, ds, dt) = (v(s), v(t), d(s), d(t));
            for j in 0..3 {
                for i in 0..3 {
                    values[j * 3 + i] = vs[i] * vt[j];
                    grads[j * 3 + i] = [ds[i] * vt[j], vs[i] * dt[j]];
                }
            }
        }
        _ => panic!("unsupported order {order}"),
    }
}

/// Reference coordinates of the local nodes.
pub fn reference_nodes(kind: CellKind, order: usize) -> Vec<[f64; 2]> {
    match (kind, order) {
        (CellKind::Simplicial, 1) => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        (CellKind::Simplicial, 2) => vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.0],
            [0.5, 0.5],
            [0.0, 0.5],
        ],
        (CellKind::Rectangular, k) => {
            let n = k + 1;
            let mut pts = Vec::new();
            for j in 0..n {
                for i in 0..n {
                    pts.push([i as f64 / k as f64, j as f64 / k as f64]);
                }
            }
            pts
        }
        _ => panic!("unsupported order {order}"),
    }
}

/// Shape function values and physical gradients at the quadrature points of
/// one geometry class.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub n_loc: usize,
    /// Quadrature weights already multiplied by `|det J|`.
    pub weights: Vec<f64>,
    /// Reference quadrature points.
    pub points: Vec<[f64; 2]>,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

impl Tabulation {
    pub fn new(kind: CellKind, order: usize, jac: [[f64; 2]; 2]) -> Self {
        let rule = QuadratureRule::for_kind(kind);
        let n_loc = local_dof_count(kind, order);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        // inverse transpose
        let inv_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        let nq = rule.points.len();
        let mut values = vec![0.0; nq * n_loc];
        let mut grads = vec![[0.0; 2]; nq * n_loc];
        let mut ref_grads = vec![[0.0; 2]; n_loc];
        for (q, &xi) in rule.points.iter().enumerate() {
            reference_basis(kind, order, xi, &mut values[q * n_loc..(q + 1) * n_loc], &mut ref_grads);
            for (i, g) in ref_grads.iter().enumerate() {
                grads[q * n_loc + i] = [
                    inv_t[0][0] * g[0] + inv_t[0][1] * g[1],
                    inv_t[1][0] * g[0] + inv_t[1][1] * g[1],
                ];
            }
        }
        Tabulation {
            n_loc,
            weights: rule.weights.iter().map(|w| w * det.abs()).collect(),
            points: rule.points,
            values,
            grads,
        }
    }

    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn values(&self, q: usize) -> &[f64] {
        &self.values[q * self.n_loc..(q + 1) * self.n_loc]
    }

    #[inline]
    pub fn grads(&self, q: usize) -> &[[f64; 2]] {
        &self.grads[q * self.n_loc..(q + 1) * self.n_loc]
    }

    /// Interpolated value of local coefficients at quadrature point `q`.
    #[inline]
    pub fn eval(&self, q: usize, coeffs: &[f64]) -> f64 {
        self.values(q).iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn eval_grad(&self, q: usize, coeffs: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (d, c) in self.grads(q).iter().zip(coeffs) {
            g[0] += d[0] * c;
            g[1] += d[1] * c;
        }
        g
    }
}

/// Tabulations for every geometry class of a mesh, for orders 1 and 2.
#[derive(Debug, Clone)]
pub struct ElementTables {
    order1: Vec<Tabulation>,
    order2: Vec<Tabulation>,
}

impl ElementTables {
    pub fn new(mesh: &Mesh) -> Self {
        let build = |order| {
            (0..mesh.num_geometry_classes())
                .map(|c| Tabulation::new(mesh.kind(), order, mesh.class_jacobian(c)))
                .collect()
        };
        ElementTables {
            order1: build(1),
            order2: build(2),
        }
    }

    pub fn get(&self, order: usize, class: usize) -> &Tabulation {
        match order {
            1 => &self.order1[class],
            2 => &self.order2[class],
            _ => panic!("unsupported order {order}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_monomial(rule: &QuadratureRule, a: i32, b: i32) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[0].powi(a) * p[1].powi(b))
            .sum()
    }

    fn factorial(n: i32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn triangle_rule_is_exact_to_degree_five() {
        let rule = QuadratureRule::triangle_degree5();
        for a in 0..=5 {
            for b in 0..=(5 - a) {
                // ∫_T x^a y^b = a! b! / (a+b+2)!
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let got = integrate_monomial(&rule, a, b);
                assert!((got - exact).abs() < 1e-15, "{a} {b}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn gauss_rule_is_exact_to_degree_five_per_axis() {
        let rule = QuadratureRule::square_gauss3();
        for a in 0..=5 {
            for b in 0..=5 {
                let exact = 1.0 / ((a + 1) * (b + 1)) as f64;
                assert!((integrate_monomial(&rule, a, b) - exact).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn basis_is_nodal_and_partition_of_unity() {
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            for order in [1, 2] {
                let n = local_dof_count(kind, order);
                let nodes = reference_nodes(kind, order);
                let mut v = vec![0.0; n];
                let mut g = vec![[0.0; 2]; n];
                for (i, &x) in nodes.iter().enumerate() {
                    reference_basis(kind, order, x, &mut v, &mut g);
                    for (j, vj) in v.iter().enumerate() {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((vj - want).abs() < 1e-14);
                    }
                }
                reference_basis(kind, order, [0.23, 0.41], &mut v, &mut g);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let gs = g.iter().fold([0.0, 0.0], |a, b| [a[0] + b[0], a[1] + b[1]]);
                assert!(gs[0].abs() < 1e-13 && gs[1].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            for order in [1, 2] {
                let n = local_dof_count(kind, order);
                let (mut v, mut g) = (vec![0.0; n], vec![[0.0; 2]; n]);
                let (mut vp, mut vm, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![[0.0; 2]; n]);
                let x = [0.21, 0.33];
                reference_basis(kind, order, x, &mut v, &mut g);
                for d in 0..2 {
                    let (mut xp, mut xm) = (x, x);
                    xp[d] += h;
                    xm[d] -= h;
                    reference_basis(kind, order, xp, &mut vp, &mut tmp);
                    reference_basis(kind, order, xm, &mut vm, &mut tmp);
                    for i in 0..n {
                        let fd = (vp[i] - vm[i]) / (2.0 * h);
                        assert!((fd - g[i][d]).abs() < 1e-8);
                    }
                }
            }
        }
    }
}
