//! Simulation output writers: per-step summary rows as CSV and field
//! snapshots as legacy ASCII VTK unstructured grids. All floats are printed
//! with 17 significant digits so files re-parse to the exact values.

use std::io;
use std::path::Path;

use crate::fmt_full;
use crate::mesh::Mesh2D;
use crate::stepper::{FieldState, StepStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn stats_of(values: &[f64]) -> FieldStats {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    FieldStats {
        min,
        max,
        mean: sum / values.len() as f64,
    }
}

/// One row of the per-step summary series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRow {
    pub t: f64,
    pub u: FieldStats,
    pub b: Option<FieldStats>,
    pub ue: FieldStats,
    pub p_min: f64,
    pub p_max: f64,
    pub solver_iterations: usize,
}

impl TimeSeriesRow {
    pub fn from_state(state: &FieldState, stats: &StepStats) -> Self {
        let (p_min, p_max) = state.gating.probability_range();
        Self {
            t: state.t,
            u: stats_of(&state.u),
            b: state.b.as_ref().map(|b| stats_of(b)),
            ue: stats_of(&state.ue),
            p_min,
            p_max,
            solver_iterations: stats.solver_iterations,
        }
    }
}

pub const TIMESERIES_HEADER: &str =
    "t,u_min,u_max,u_mean,b_min,b_max,b_mean,ue_min,ue_max,ue_mean,p_min,p_max,solver_iters";

pub fn timeseries_csv_string(rows: &[TimeSeriesRow]) -> String {
    let mut out = String::from(TIMESERIES_HEADER);
    out.push('\n');
    for row in rows {
        let b = match &row.b {
            Some(b) => format!(
                "{},{},{}",
                fmt_full(b.min),
                fmt_full(b.max),
                fmt_full(b.mean)
            ),
            None => ",,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{b},{},{},{},{},{},{}\n",
            fmt_full(row.t),
            fmt_full(row.u.min),
            fmt_full(row.u.max),
            fmt_full(row.u.mean),
            fmt_full(row.ue.min),
            fmt_full(row.ue.max),
            fmt_full(row.ue.mean),
            fmt_full(row.p_min),
            fmt_full(row.p_max),
            row.solver_iterations,
        ));
    }
    out
}

pub fn write_timeseries_csv(rows: &[TimeSeriesRow], path: &Path) -> io::Result<()> {
    if rows.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "no time series rows",
        ));
    }
    debug_assert!(
        rows.windows(2).all(|w| w[0].t < w[1].t),
        "time column must increase"
    );
    std::fs::write(path, timeseries_csv_string(rows))
}

/// Legacy ASCII VTK unstructured grid with one or more point-data scalars.
pub fn vtk_string(mesh: &Mesh2D, scalars: &[(&str, &[f64])], title: &str) -> String {
    let n = mesh.vertex_count();
    let m = mesh.triangle_count();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(title);
    out.push('\n');
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {n} double\n"));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} 0\n", fmt_full(v[0]), fmt_full(v[1])));
    }
    out.push_str(&format!("CELLS {m} {}\n", 4 * m));
    for t in &mesh.triangles {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    out.push_str(&format!("CELL_TYPES {m}\n"));
    for _ in 0..m {
        out.push_str("5\n");
    }
    out.push_str(&format!("POINT_DATA {n}\n"));
    for (name, values) in scalars {
        debug_assert_eq!(values.len(), n);
        out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
        for &v in values.iter() {
            out.push_str(&fmt_full(v));
            out.push('\n');
        }
    }
    out
}

pub fn write_snapshot_vtk(
    mesh: &Mesh2D,
    scalars: &[(&str, &[f64])],
    title: &str,
    path: &Path,
) -> io::Result<()> {
    std::fs::write(path, vtk_string(mesh, scalars, title))
}

/// Write the cytosol and ER snapshots of one state. The cytosol file carries
/// u (plus b when present) and the RyR open probability, nonzero only on
/// interface points; the ER file carries u_e.
pub fn write_state_snapshots(
    state: &FieldState,
    geometry: &crate::stepper::Geometry,
    prefix: &str,
    dir: &Path,
) -> io::Result<()> {
    let mut p_nodal = vec![0.0; geometry.cytosol.vertex_count()];
    let probs = state.gating.open_probabilities();
    for (k, &(c, _)) in geometry.interface.pairs.iter().enumerate() {
        p_nodal[c] = probs[k];
    }
    let title = format!("{prefix} t={}", state.t);
    let mut cyto_scalars: Vec<(&str, &[f64])> = vec![("u", &state.u)];
    if let Some(b) = &state.b {
        cyto_scalars.push(("b", b));
    }
    cyto_scalars.push(("ryr_open_probability", &p_nodal));
    write_snapshot_vtk(
        &geometry.cytosol,
        &cyto_scalars,
        &title,
        &dir.join(format!("{prefix}_cytosol.vtk")),
    )?;
    write_snapshot_vtk(
        &geometry.er,
        &[("u_e", &state.ue)],
        &title,
        &dir.join(format!("{prefix}_er.vtk")),
    )
}
