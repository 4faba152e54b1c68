//! File output: legacy VTK for fields, CSV for tables, JSON for summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::assembly::Discretization;
use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::mesh::CellKind;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Velocity components at the mesh vertices (zero on the boundary).
pub fn vertex_velocity(dz: &Discretization, st: &[f64]) -> Vec<[f64; 2]> {
    let nv = dz.mesh().num_vertices();
    let n2 = dz.n_velocity();
    let space = dz.velocity_space();
    let mut out = vec![[0.0; 2]; nv];
    for d in 0..n2 {
        let full = space.full_index(d);
        if full < nv {
            out[full] = [st[d], st[n2 + d]];
        }
    }
    out
}

/// Legacy ASCII VTK of `φ`, `μ`, `d`, `u` and `p` at the mesh vertices.
pub fn write_vtk(path: &Path, dz: &Discretization, state: &State, time: f64) -> Result<()> {
    let mesh = dz.mesh();
    let n = dz.n_scalar();
    let mut w = create(path)?;
    writeln!(w, "# vtk DataFile Version 3.0\ncell state at t = {time}\nASCII\nDATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for v in mesh.vertices() {
        writeln!(w, "{} {} 0", v[0], v[1])?;
    }
    let k = mesh.vertices_per_element();
    writeln!(w, "CELLS {} {}", mesh.num_elements(), mesh.num_elements() * (k + 1))?;
    for e in 0..mesh.num_elements() {
        let vs: Vec<String> = mesh.element_vertices(e).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{k} {}", vs.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.num_elements())?;
    let ty = match mesh.kind() {
        CellKind::Simplicial => 5,
        CellKind::Rectangular => 9,
    };
    for _ in 0..mesh.num_elements() {
        writeln!(w, "{ty}")?;
    }
    writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
    let scalars = [("phi", &state.pf[..n]), ("mu", &state.pf[2 * n..3 * n]), ("p", &state.st[2 * dz.n_velocity()..])];
    for (name, vals) in scalars {
        writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
        for x in vals {
            writeln!(w, "{x}")?;
        }
    }
    writeln!(w, "VECTORS d double")?;
    for i in 0..n {
        writeln!(w, "{} {} 0", state.of[i], state.of[n + i])?;
    }
    writeln!(w, "VECTORS u double")?;
    for u in vertex_velocity(dz, &state.st) {
        writeln!(w, "{} {} 0", u[0], u[1])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows` as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("CSV: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(format!("JSON: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
