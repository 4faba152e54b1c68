//! Stage residuals and Jacobians evaluated only on the element patches of
//! the interpolation DOFs, from stored basis rows at the patch DOFs.

use nalgebra::DMatrix;

use super::basis::{row_dot, Basis};
use crate::assembly::{Discretization, Field, Sources};
use crate::fespace::CONSTRAINED;
use crate::params::ModelParameters;

const ABSENT: u32 = u32::MAX;

/// One stage input as seen by a reduced stage.
#[derive(Debug, Clone, Copy)]
pub enum FieldInput<'a> {
    /// Reduced coordinates `x̄`; values are reconstructed as `V x̄`.
    Reduced(&'a [f64]),
    /// A full stage vector.
    Full(&'a [f64]),
}

/// DOFs of one layout touched by the patch, with the basis rows there.
#[derive(Debug, Clone)]
struct PatchRestriction {
    dofs: Vec<usize>,
    /// Position of a global DOF in `dofs`, or `ABSENT`.
    position: Vec<u32>,
    /// `|dofs| × N` rows of the basis, if the field is reduced.
    rows: Option<(usize, Vec<f64>)>,
}

impl PatchRestriction {
    fn row(&self, pos: usize) -> &[f64] {
        let (cols, rows) = self.rows.as_ref().expect("reduced layout");
        &rows[pos * cols..(pos + 1) * cols]
    }

    fn fill(&self, input: FieldInput, buf: &mut [f64]) {
        match input {
            FieldInput::Reduced(c) => {
                for (p, &d) in self.dofs.iter().enumerate() {
                    buf[d] = row_dot(self.row(p), c);
                }
            }
            FieldInput::Full(v) => {
                for &d in &self.dofs {
                    buf[d] = v[d];
                }
            }
        }
    }
}

/// Full-length scratch vectors; only patch entries are ever read or written.
#[derive(Debug, Clone)]
pub struct EvalWorkspace {
    x: Vec<f64>,
    src: [Vec<f64>; 3],
    out: Vec<f64>,
}

impl EvalWorkspace {
    pub fn new(dz: &Discretization, field: Field) -> EvalWorkspace {
        EvalWorkspace {
            x: vec![0.0; dz.dim(field)],
            src: Field::ALL.map(|f| vec![0.0; dz.dim(f)]),
            out: vec![0.0; dz.dim(field)],
        }
    }
}

/// Computes `Zᵀ r(V x̄, …)` and `Zᵀ J(V x̄, …) V` for one stage.
#[derive(Debug, Clone)]
pub struct RestrictedEvaluator {
    field: Field,
    /// Union of the element stars of the selected DOFs, ascending.
    elements: Vec<usize>,
    selected: Vec<usize>,
    /// Row of a global DOF in `selected`, or `ABSENT`.
    selected_position: Vec<u32>,
    /// Own unknowns and the three source layouts.
    own: PatchRestriction,
    sources: [PatchRestriction; 3],
}

/// Elements whose local DOFs of `field` include one of `dofs`, ascending.
pub fn element_patch(dz: &Discretization, field: Field, dofs: &[usize]) -> Vec<usize> {
    let mut marked = vec![false; dz.dim(field)];
    for &d in dofs {
        marked[d] = true;
    }
    let layout = dz.layout(field);
    (0..dz.num_elements())
        .filter(|&e| layout.element(e).iter().any(|&d| d != CONSTRAINED && marked[d]))
        .collect()
}

fn restriction(dz: &Discretization, layout_of: Field, elements: &[usize], basis: Option<&Basis>) -> PatchRestriction {
    let layout = dz.layout(layout_of);
    let mut position = vec![ABSENT; layout.dim()];
    let mut dofs = Vec::new();
    for &e in elements {
        for &d in layout.element(e) {
            if d != CONSTRAINED && position[d] == ABSENT {
                position[d] = 0;
                dofs.push(d);
            }
        }
    }
    dofs.sort_unstable();
    for (p, &d) in dofs.iter().enumerate() {
        position[d] = p as u32;
    }
    let rows = basis.map(|b| {
        let mut rows = Vec::with_capacity(dofs.len() * b.ncols());
        for &d in &dofs {
            rows.extend_from_slice(b.row(d));
        }
        (b.ncols(), rows)
    });
    PatchRestriction { dofs, position, rows }
}

impl RestrictedEvaluator {
    /// `bases[k]` is the basis of field `k` if that field is reduced. The
    /// own field's basis is required. `selected` are the rows `Z`.
    pub fn new(
        dz: &Discretization,
        field: Field,
        selected: &[usize],
        bases: [Option<&Basis>; 3],
        elements: Option<Vec<usize>>,
    ) -> RestrictedEvaluator {
        let own_basis = bases[field.index()].expect("own field must be reduced");
        let elements = elements.unwrap_or_else(|| element_patch(dz, field, selected));
        let mut selected_position = vec![ABSENT; dz.dim(field)];
        for (m, &d) in selected.iter().enumerate() {
            selected_position[d] = m as u32;
        }
        RestrictedEvaluator {
            field,
            own: restriction(dz, field, &elements, Some(own_basis)),
            sources: Field::ALL.map(|f| restriction(dz, f, &elements, bases[f.index()])),
            elements,
            selected: selected.to_vec(),
            selected_position,
        }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    fn load(&self, ws: &mut EvalWorkspace, x: &[f64], inputs: [FieldInput; 3]) {
        self.own.fill(FieldInput::Reduced(x), &mut ws.x);
        let used = self.field.sources_used();
        for k in 0..3 {
            if used[k] {
                self.sources[k].fill(inputs[k], &mut ws.src[k]);
            }
        }
    }

    /// `Zᵀ r(V x̄, inputs)`. `inputs[k]` is the source of layout `k`.
    pub fn residual(
        &self,
        dz: &Discretization,
        ws: &mut EvalWorkspace,
        x: &[f64],
        inputs: [FieldInput; 3],
        params: &ModelParameters,
        dt: f64,
    ) -> Vec<f64> {
        self.load(ws, x, inputs);
        let EvalWorkspace { x: xb, src, out } = ws;
        let s = Sources { pf: &src[0], of: &src[1], st: &src[2] };
        dz.residual_on(self.field, &self.elements, xb, &s, params, dt, out);
        let r = self.selected.iter().map(|&d| out[d]).collect();
        for &d in &self.own.dofs {
            out[d] = 0.0;
        }
        r
    }

    /// `Zᵀ J(V x̄, inputs) V`, an `M × N` matrix.
    pub fn jacobian(
        &self,
        dz: &Discretization,
        ws: &mut EvalWorkspace,
        x: &[f64],
        inputs: [FieldInput; 3],
        params: &ModelParameters,
        dt: f64,
    ) -> DMatrix<f64> {
        self.load(ws, x, inputs);
        let s = Sources { pf: &ws.src[0], of: &ws.src[1], st: &ws.src[2] };
        let layout = dz.layout(self.field);
        let nl = layout.local_len();
        let cols = x.len();
        let mut jz = DMatrix::zeros(self.selected.len(), cols);
        let mut lv = dz.new_local_values(self.field);
        let mut local = vec![0.0; nl * nl];
        for &e in &self.elements {
            dz.gather_local(self.field, e, &ws.x, &s, &mut lv);
            local.iter_mut().for_each(|v| *v = 0.0);
            dz.element_jacobian(self.field, e, &lv, params, dt, &mut local);
            let ed = layout.element(e);
            for (a, &d) in ed.iter().enumerate() {
                if d == CONSTRAINED || self.selected_position[d] == ABSENT {
                    continue;
                }
                let m = self.selected_position[d] as usize;
                for (b, &g) in ed.iter().enumerate() {
                    let k = local[a * nl + b];
                    if g == CONSTRAINED || k == 0.0 {
                        continue;
                    }
                    let row = self.own.row(self.own.position[g] as usize);
                    for (j, v) in row.iter().enumerate() {
                        jz[(m, j)] += k * v;
                    }
                }
            }
        }
        jz
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::{CellKind, Mesh, Rect};
    use crate::pod::{orthonormalize, InnerProduct};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: CellKind) -> Arc<Discretization> {
        let mesh = Arc::new(Mesh::build(6, 5, Rect::new(0.0, 6.0, 0.0, 5.0), kind).unwrap());
        Arc::new(Discretization::new(mesh).unwrap())
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_basis(dz: &Discretization, f: Field, cols: usize, rng: &mut ChaCha8Rng) -> Basis {
        let n = dz.dim(f);
        let mut v: Vec<Vec<f64>> = (0..cols).map(|_| random_vec(rng, n)).collect();
        orthonormalize(&mut v, &InnerProduct::Euclidean);
        Basis::from_columns(n, &v).unwrap()
    }

    fn all_inputs<'a>(f: Field, c: &'a [Vec<f64>; 3], full: &'a [Vec<f64>; 3]) -> [FieldInput<'a>; 3] {
        // own field and orientation reduced, the rest full
        Field::ALL.map(|g| {
            if g == f || g == Field::Orientation {
                FieldInput::Reduced(&c[g.index()])
            } else {
                FieldInput::Full(&full[g.index()])
            }
        })
    }

    #[test]
    fn restricted_residual_is_bit_equal_to_full_assembly() {
        let params = ModelParameters::default();
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            let dz = setup(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for f in Field::ALL {
                let bases: Vec<Basis> = Field::ALL.iter().map(|&g| random_basis(&dz, g, 4, &mut rng)).collect();
                let opt = Field::ALL.map(|g| (g == f || g == Field::Orientation).then(|| &bases[g.index()]));
                let n = dz.dim(f);
                let selected: Vec<usize> = (0..7).map(|i| (i * 37 + 3) % n).collect();
                let ev = RestrictedEvaluator::new(&dz, f, &selected, opt, None);
                let mut ws = EvalWorkspace::new(&dz, f);
                for _ in 0..100 {
                    let c: [Vec<f64>; 3] = std::array::from_fn(|_| random_vec(&mut rng, 4));
                    let full: [Vec<f64>; 3] = Field::ALL.map(|g| random_vec(&mut rng, dz.dim(g)));
                    let inputs = all_inputs(f, &c, &full);
                    let r = ev.residual(&dz, &mut ws, &c[f.index()], inputs, &params, 0.01);
                    let vec_of = |g: Field| match inputs[g.index()] {
                        FieldInput::Reduced(x) => bases[g.index()].reconstruct(x),
                        FieldInput::Full(v) => v.to_vec(),
                    };
                    let (spf, sof, sst) = (vec_of(Field::PhaseField), vec_of(Field::Orientation), vec_of(Field::Stokes));
                    let x = bases[f.index()].reconstruct(&c[f.index()]);
                    let src = Sources { pf: &spf, of: &sof, st: &sst };
                    let fr = dz.residual(f, &x, &src, &params, 0.01).unwrap();
                    for (m, &d) in selected.iter().enumerate() {
                        assert_eq!(r[m].to_bits(), fr[d].to_bits(), "{f} dof {d}");
                    }
                }
                // restricted Jacobian against the assembled one
                let c: [Vec<f64>; 3] = std::array::from_fn(|_| random_vec(&mut rng, 4));
                let full: [Vec<f64>; 3] = Field::ALL.map(|g| random_vec(&mut rng, dz.dim(g)));
                let inputs = all_inputs(f, &c, &full);
                let jz = ev.jacobian(&dz, &mut ws, &c[f.index()], inputs, &params, 0.01);
                let vec_of = |g: Field| match inputs[g.index()] {
                    FieldInput::Reduced(x) => bases[g.index()].reconstruct(x),
                    FieldInput::Full(v) => v.to_vec(),
                };
                let (spf, sof, sst) = (vec_of(Field::PhaseField), vec_of(Field::Orientation), vec_of(Field::Stokes));
                let x = bases[f.index()].reconstruct(&c[f.index()]);
                let src = Sources { pf: &spf, of: &sof, st: &sst };
                let j = dz.jacobian(f, &x, &src, &params, 0.01).unwrap();
                for (m, &d) in selected.iter().enumerate() {
                    for k in 0..4 {
                        let col = bases[f.index()].column(k);
                        let (idx, vals) = j.row(d);
                        let oracle: f64 = idx.iter().zip(vals).map(|(&i, v)| v * col[i]).sum();
                        assert!((jz[(m, k)] - oracle).abs() <= 1e-13 * (1.0 + oracle.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn interior_dof_patch_is_its_star() {
        let dz = setup(CellKind::Simplicial);
        // vertex (3, 2) of the 7×6 vertex grid
        let v = 2 * 7 + 3;
        let patch = element_patch(&dz, Field::PhaseField, &[v]);
        let star: Vec<usize> = (0..dz.num_elements())
            .filter(|&e| dz.mesh().element_vertices(e).contains(&v))
            .collect();
        assert_eq!(patch, star);
        assert!(!patch.is_empty() && patch.len() <= 8);
    }

    #[test]
    fn all_dofs_selected_reproduces_full_residual() {
        let dz = setup(CellKind::Rectangular);
        let params = ModelParameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Field::PhaseField;
        let n = dz.dim(f);
        let id = Basis::identity(n);
        let all: Vec<usize> = (0..n).collect();
        let ev = RestrictedEvaluator::new(&dz, f, &all, [Some(&id), None, None], None);
        assert_eq!(ev.elements().len(), dz.num_elements());
        let x = random_vec(&mut rng, n);
        let full: [Vec<f64>; 3] = Field::ALL.map(|g| random_vec(&mut rng, dz.dim(g)));
        let inputs = [FieldInput::Full(&full[0]), FieldInput::Full(&full[1]), FieldInput::Full(&full[2])];
        let mut ws = EvalWorkspace::new(&dz, f);
        let r = ev.residual(&dz, &mut ws, &x, inputs, &params, 0.02);
        let src = Sources { pf: &full[0], of: &full[1], st: &full[2] };
        assert_eq!(r, dz.residual(f, &x, &src, &params, 0.02).unwrap());
        // the workspace is clean for the next call
        assert_eq!(r, ev.residual(&dz, &mut ws, &x, inputs, &params, 0.02));
    }
}
