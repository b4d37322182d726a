//! P1 finite element assembly: consistent mass and stiffness matrices,
//! boundary edge mass, and quadrature-based load vectors.
//!
//! Volume terms use the 3-point midpoint rule (exact through degree 2), edge
//! terms the 2-point Gauss rule (exact through degree 3). Nonlinear
//! integrands receive the quadrature point position, the position along the
//! edge / barycentric weights, and the outward normal, and interpolate their
//! own nodal arguments.

use thiserror::Error;

use crate::mesh::{EdgeMarker, Mesh2D};
use crate::sparse::{SparseBuilder, SparseMatrixSym};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("triangle {index} is degenerate (signed area {area:.3e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("mesh has no edges with marker `{}`", marker.token())]
    MarkerNotPresent { marker: EdgeMarker },
    #[error("boundary flux is not finite on edge {edge:?} at ({x:.4}, {y:.4})")]
    NonFiniteBoundaryFlux { edge: [usize; 2], x: f64, y: f64 },
    #[error("volume source is not finite in triangle {triangle} at ({x:.4}, {y:.4})")]
    NonFiniteSource { triangle: usize, x: f64, y: f64 },
}

/// Quadrature on the reference triangle in barycentric coordinates; weights
/// sum to the reference area 1/2. The midpoint rule is exact through
/// degree 2.
#[derive(Debug, Clone, Copy)]
pub struct TriangleQuadrature {
    pub points: [[f64; 3]; 3],
    pub weights: [f64; 3],
}

pub fn triangle_midpoint_rule() -> TriangleQuadrature {
    TriangleQuadrature {
        points: [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
        weights: [1.0 / 6.0; 3],
    }
}

/// Quadrature on the reference edge [0, 1]; weights sum to 1. Two-point
/// Gauss, exact through degree 3.
#[derive(Debug, Clone, Copy)]
pub struct EdgeQuadrature {
    pub points: [f64; 2],
    pub weights: [f64; 2],
}

pub fn edge_gauss2_rule() -> EdgeQuadrature {
    let d = 1.0 / (2.0 * 3.0f64.sqrt());
    EdgeQuadrature {
        points: [0.5 - d, 0.5 + d],
        weights: [0.5, 0.5],
    }
}

/// Quadrature point on a boundary edge.
#[derive(Debug, Clone, Copy)]
pub struct EdgePoint {
    pub x: f64,
    pub y: f64,
    /// Position along the edge in [0, 1] from `nodes[0]` to `nodes[1]`.
    pub s: f64,
    pub nodes: [usize; 2],
    /// Unit outward normal of the domain on this edge.
    pub normal: [f64; 2],
    pub edge: usize,
}

impl EdgePoint {
    /// Linear interpolation of a nodal field at this point.
    pub fn interp(&self, nodal: &[f64]) -> f64 {
        (1.0 - self.s) * nodal[self.nodes[0]] + self.s * nodal[self.nodes[1]]
    }
}

/// Quadrature point inside a triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriPoint {
    pub x: f64,
    pub y: f64,
    pub bary: [f64; 3],
    pub nodes: [usize; 3],
    pub triangle: usize,
}

impl TriPoint {
    pub fn interp(&self, nodal: &[f64]) -> f64 {
        self.bary[0] * nodal[self.nodes[0]]
            + self.bary[1] * nodal[self.nodes[1]]
            + self.bary[2] * nodal[self.nodes[2]]
    }
}

/// Exact P1 consistent mass matrix; the sum of all entries equals the mesh
/// area.
pub fn assemble_mass(mesh: &Mesh2D) -> SparseMatrixSym {
    let mut builder = SparseBuilder::new(mesh.vertex_count());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        debug_assert!(area > 0.0, "triangle {t} has non-positive area");
        let scale = area / 12.0;
        for i in 0..3 {
            for j in 0..3 {
                let local = if i == j { 2.0 } else { 1.0 };
                builder.push(tri[i], tri[j], scale * local);
            }
        }
    }
    builder.finalize()
}

/// Exact P1 stiffness matrix with unit coefficient; every row sums to zero.
pub fn assemble_stiffness(mesh: &Mesh2D) -> Result<SparseMatrixSym, AssemblyError> {
    let mut builder = SparseBuilder::new(mesh.vertex_count());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        if area <= 0.0 {
            return Err(AssemblyError::DegenerateTriangle { index: t, area });
        }
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        // grad(phi_i) = (b_i, c_i) / (2 A) with cyclic differences.
        let mut b = [0.0; 3];
        let mut c = [0.0; 3];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            b[i] = p[j][1] - p[k][1];
            c[i] = p[k][0] - p[j][0];
        }
        let scale = 1.0 / (4.0 * area);
        for i in 0..3 {
            for j in 0..3 {
                builder.push(tri[i], tri[j], scale * (b[i] * b[j] + c[i] * c[j]));
            }
        }
    }
    Ok(builder.finalize())
}

fn marked_edge_geometry(
    mesh: &Mesh2D,
    marker: EdgeMarker,
) -> Result<Vec<(usize, [usize; 2], f64, [f64; 2])>, AssemblyError> {
    let edges: Vec<(usize, [usize; 2], f64, [f64; 2])> = mesh
        .boundary_edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.marker == marker)
        .map(|(idx, e)| {
            let a = mesh.vertices[e.nodes[0]];
            let b = mesh.vertices[e.nodes[1]];
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            let len = dx.hypot(dy);
            (idx, e.nodes, len, [dy / len, -dx / len])
        })
        .collect();
    if edges.is_empty() {
        return Err(AssemblyError::MarkerNotPresent { marker });
    }
    Ok(edges)
}

/// Consistent 1D P1 mass on the marked polygon; entries sum to its perimeter.
pub fn assemble_boundary_mass(
    mesh: &Mesh2D,
    marker: EdgeMarker,
) -> Result<SparseMatrixSym, AssemblyError> {
    let edges = marked_edge_geometry(mesh, marker)?;
    let mut builder = SparseBuilder::new(mesh.vertex_count());
    for (_, nodes, len, _) in edges {
        let scale = len / 6.0;
        builder.push(nodes[0], nodes[0], 2.0 * scale);
        builder.push(nodes[1], nodes[1], 2.0 * scale);
        builder.push(nodes[0], nodes[1], scale);
        builder.push(nodes[1], nodes[0], scale);
    }
    Ok(builder.finalize())
}

/// Load vector of `integral over marked edges of g * phi_i`, with `g`
/// evaluated at the 2-point Gauss nodes.
pub fn assemble_boundary_load<F>(
    mesh: &Mesh2D,
    marker: EdgeMarker,
    mut g: F,
) -> Result<Vec<f64>, AssemblyError>
where
    F: FnMut(&EdgePoint) -> f64,
{
    let edges = marked_edge_geometry(mesh, marker)?;
    let rule = edge_gauss2_rule();
    let mut load = vec![0.0; mesh.vertex_count()];
    for (edge, nodes, len, normal) in edges {
        let a = mesh.vertices[nodes[0]];
        let b = mesh.vertices[nodes[1]];
        for (s, w) in rule.points.into_iter().zip(rule.weights) {
            let point = EdgePoint {
                x: a[0] + s * (b[0] - a[0]),
                y: a[1] + s * (b[1] - a[1]),
                s,
                nodes,
                normal,
                edge,
            };
            let value = g(&point);
            if !value.is_finite() {
                return Err(AssemblyError::NonFiniteBoundaryFlux {
                    edge: nodes,
                    x: point.x,
                    y: point.y,
                });
            }
            let scaled = len * w * value;
            load[nodes[0]] += scaled * (1.0 - s);
            load[nodes[1]] += scaled * s;
        }
    }
    Ok(load)
}

/// Load vector of `integral of f * phi_i` with the 3-point midpoint rule.
pub fn assemble_volume_load<F>(mesh: &Mesh2D, mut f: F) -> Result<Vec<f64>, AssemblyError>
where
    F: FnMut(&TriPoint) -> f64,
{
    let rule = triangle_midpoint_rule();
    let mut load = vec![0.0; mesh.vertex_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        for (bary, w) in rule.points.into_iter().zip(rule.weights) {
            let point = TriPoint {
                x: bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                y: bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
                bary,
                nodes: *tri,
                triangle: t,
            };
            let value = f(&point);
            if !value.is_finite() {
                return Err(AssemblyError::NonFiniteSource {
                    triangle: t,
                    x: point.x,
                    y: point.y,
                });
            }
            // Reference weights sum to 1/2; scale by 2*area per element.
            let scaled = 2.0 * area * w * value;
            for i in 0..3 {
                load[tri[i]] += scaled * bary[i];
            }
        }
    }
    Ok(load)
}

/// All time-constant operators of one subdomain.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub mass: SparseMatrixSym,
    pub stiffness: SparseMatrixSym,
    pub outer_mass: Option<SparseMatrixSym>,
    pub interface_mass: Option<SparseMatrixSym>,
    pub outer_nodes: Vec<usize>,
    pub interface_nodes: Vec<usize>,
}

pub fn assemble_operators(mesh: &Mesh2D) -> Result<AssembledOperators, AssemblyError> {
    let mass = assemble_mass(mesh);
    let stiffness = assemble_stiffness(mesh)?;
    let outer_nodes = mesh.marked_nodes(EdgeMarker::Outer);
    let interface_nodes = mesh.marked_nodes(EdgeMarker::Interface);
    let outer_mass = if outer_nodes.is_empty() {
        None
    } else {
        Some(assemble_boundary_mass(mesh, EdgeMarker::Outer)?)
    };
    let interface_mass = if interface_nodes.is_empty() {
        None
    } else {
        Some(assemble_boundary_mass(mesh, EdgeMarker::Interface)?)
    };
    Ok(AssembledOperators {
        mass,
        stiffness,
        outer_mass,
        interface_mass,
        outer_nodes,
        interface_nodes,
    })
}
