//! Conforming triangulations of the concentric-circle cell geometry.
//!
//! Both subdomains are meshed by concentric vertex rings: the circle of
//! radius `r` carries `ceil(2*pi*r / h)` equally spaced nodes and adjacent
//! rings are stitched by a two-pointer sweep over their angular positions.
//! The interface ring at `r_inner` is computed once and inserted verbatim
//! into both meshes, so the node pairing of [`InterfaceMap`] is exact by
//! construction rather than by a geometric search.

use std::fmt;
use std::path::Path;

use thiserror::Error;

pub const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Cytosol,
    Er,
}

impl DomainTag {
    pub fn token(self) -> &'static str {
        match self {
            DomainTag::Cytosol => "cytosol",
            DomainTag::Er => "er",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMarker {
    Outer,
    Interface,
}

impl EdgeMarker {
    pub fn token(self) -> &'static str {
        match self {
            EdgeMarker::Outer => "outer",
            EdgeMarker::Interface => "interface",
        }
    }
}

/// Boundary edge, directed to match the orientation of its owning triangle,
/// so the outward normal is the edge vector rotated by -90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub marker: EdgeMarker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub domain: DomainTag,
}

/// Node correspondence between the two meshes along the interface ring,
/// ordered by arc position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterfaceMap {
    /// `(cytosol node index, er node index)` per arc position.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("radii must satisfy 0 < r_inner < r_outer (got {r_inner}, {r_outer})")]
    InvalidRadii { r_inner: f64, r_outer: f64 },
    #[error("mesh size must satisfy 0 < h < r_inner (got h = {h}, r_inner = {r_inner})")]
    InvalidMeshSize { h: f64, r_inner: f64 },
}

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("structural error at line {line}: {message}")]
    Structure { line: usize, message: String },
}

impl Mesh2D {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.triangles[tri];
        let p = self.vertices[a];
        let q = self.vertices[b];
        let r = self.vertices[c];
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn marked_edges(&self, marker: EdgeMarker) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges
            .iter()
            .filter(move |e| e.marker == marker)
    }

    /// Sorted node indices carrying the given marker.
    pub fn marked_nodes(&self, marker: EdgeMarker) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .marked_edges(marker)
            .flat_map(|e| e.nodes.into_iter())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }
}

/// Number of equal arcs a circle of radius `r` is split into. The tiny slack
/// keeps counts stable when `2*pi*r/h` is an integer up to roundoff.
pub fn ring_count(r: f64, h: f64) -> usize {
    (TAU * r / h - 1e-9).ceil().max(1.0) as usize
}

fn ring_vertices(r: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|j| {
            let theta = TAU * (j as f64) / (n as f64);
            [r * theta.cos(), r * theta.sin()]
        })
        .collect()
}

fn layer_count(thickness: f64, h: f64) -> usize {
    (thickness / h - 1e-9).ceil().max(1.0) as usize
}

/// Triangulate the band between two concentric vertex rings by advancing
/// whichever ring has the smaller next angular position. Comparisons are done
/// with integer cross products, so the stitch is exact and deterministic.
fn stitch_band(
    vertices: &[[f64; 2]],
    triangles: &mut Vec<[usize; 3]>,
    inner: &[usize],
    outer: &[usize],
) {
    let m = inner.len() as u64;
    let n = outer.len() as u64;
    let (mut i, mut j) = (0u64, 0u64);
    while i < m || j < n {
        let advance_inner = if i == m {
            false
        } else if j == n {
            true
        } else {
            // next inner angle (i+1)/m <= next outer angle (j+1)/n
            (i + 1) * n <= (j + 1) * m
        };
        let tri = if advance_inner {
            let a = inner[(i % m) as usize];
            let b = inner[((i + 1) % m) as usize];
            let c = outer[(j % n) as usize];
            i += 1;
            [a, b, c]
        } else {
            let a = inner[(i % m) as usize];
            let b = outer[((j + 1) % n) as usize];
            let c = outer[(j % n) as usize];
            j += 1;
            [a, b, c]
        };
        triangles.push(orient_ccw(vertices, tri));
    }
}

fn orient_ccw(vertices: &[[f64; 2]], [a, b, c]: [usize; 3]) -> [usize; 3] {
    let p = vertices[a];
    let q = vertices[b];
    let r = vertices[c];
    let cross = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    debug_assert!(cross != 0.0, "degenerate triangle in ring stitch");
    if cross > 0.0 {
        [a, b, c]
    } else {
        [a, c, b]
    }
}

fn disk_mesh(r: f64, h: f64, interface_ring: &[[f64; 2]]) -> (Mesh2D, Vec<usize>) {
    let layers = layer_count(r, h);
    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(layers);
    for k in 1..=layers {
        let coords = if k == layers {
            interface_ring.to_vec()
        } else {
            let rk = r * (k as f64) / (layers as f64);
            ring_vertices(rk, ring_count(rk, h))
        };
        let base = vertices.len();
        let ids: Vec<usize> = (base..base + coords.len()).collect();
        vertices.extend(coords);
        ring_ids.push(ids);
    }

    let mut triangles = Vec::new();
    let first = &ring_ids[0];
    for j in 0..first.len() {
        triangles.push([0, first[j], first[(j + 1) % first.len()]]);
    }
    for k in 1..layers {
        stitch_band(&vertices, &mut triangles, &ring_ids[k - 1], &ring_ids[k]);
    }

    let rim = ring_ids.last().unwrap().clone();
    let boundary_edges: Vec<BoundaryEdge> = (0..rim.len())
        .map(|j| BoundaryEdge {
            nodes: [rim[j], rim[(j + 1) % rim.len()]],
            marker: EdgeMarker::Interface,
        })
        .collect();

    (
        Mesh2D {
            vertices,
            triangles,
            boundary_edges,
            domain: DomainTag::Er,
        },
        rim,
    )
}

fn annulus_mesh(
    r_inner: f64,
    r_outer: f64,
    h: f64,
    interface_ring: &[[f64; 2]],
) -> (Mesh2D, Vec<usize>) {
    let layers = layer_count(r_outer - r_inner, h);
    let mut vertices: Vec<[f64; 2]> = interface_ring.to_vec();
    let mut ring_ids: Vec<Vec<usize>> = vec![(0..interface_ring.len()).collect()];
    for k in 1..=layers {
        let rk = if k == layers {
            r_outer
        } else {
            r_inner + (r_outer - r_inner) * (k as f64) / (layers as f64)
        };
        let coords = ring_vertices(rk, ring_count(rk, h));
        let base = vertices.len();
        ring_ids.push((base..base + coords.len()).collect());
        vertices.extend(coords);
    }

    let mut triangles = Vec::new();
    for k in 0..layers {
        stitch_band(&vertices, &mut triangles, &ring_ids[k], &ring_ids[k + 1]);
    }

    let inner = &ring_ids[0];
    let outer = ring_ids.last().unwrap();
    let mut boundary_edges = Vec::with_capacity(inner.len() + outer.len());
    // The hole boundary runs clockwise when traversed with the triangles.
    for j in 0..inner.len() {
        boundary_edges.push(BoundaryEdge {
            nodes: [inner[(j + 1) % inner.len()], inner[j]],
            marker: EdgeMarker::Interface,
        });
    }
    for j in 0..outer.len() {
        boundary_edges.push(BoundaryEdge {
            nodes: [outer[j], outer[(j + 1) % outer.len()]],
            marker: EdgeMarker::Outer,
        });
    }

    (
        Mesh2D {
            vertices,
            triangles,
            boundary_edges,
            domain: DomainTag::Cytosol,
        },
        inner.clone(),
    )
}

/// Generate the cytosol annulus, the ER disk and their exact interface node
/// pairing for an ER of radius `r_inner` inside a cell of radius `r_outer`.
pub fn generate_geometry(
    r_inner: f64,
    r_outer: f64,
    h: f64,
) -> Result<(Mesh2D, Mesh2D, InterfaceMap), MeshError> {
    if !(r_inner > 0.0 && r_outer > r_inner && r_inner.is_finite() && r_outer.is_finite()) {
        return Err(MeshError::InvalidRadii { r_inner, r_outer });
    }
    if !(h > 0.0 && h < r_inner) {
        return Err(MeshError::InvalidMeshSize { h, r_inner });
    }
    let interface_ring = ring_vertices(r_inner, ring_count(r_inner, h));
    let (er, er_rim) = disk_mesh(r_inner, h, &interface_ring);
    let (cytosol, cyto_rim) = annulus_mesh(r_inner, r_outer, h, &interface_ring);
    let pairs = cyto_rim.into_iter().zip(er_rim).collect();
    Ok((cytosol, er, InterfaceMap { pairs }))
}

impl InterfaceMap {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Largest coordinate distance between paired nodes (0 by construction).
    pub fn max_pair_distance(&self, cytosol: &Mesh2D, er: &Mesh2D) -> f64 {
        self.pairs
            .iter()
            .map(|&(c, e)| {
                let p = cytosol.vertices[c];
                let q = er.vertices[e];
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Diagnostics produced by [`validate_mesh`]; report-only, never fails.
#[derive(Debug, Clone)]
pub struct MeshReport {
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub min_area: f64,
    pub max_area: f64,
    pub min_angle_deg: f64,
    pub max_edge_len: f64,
    pub orientation_violations: usize,
    pub dangling_boundary_edges: usize,
    /// |sum of triangle areas - area enclosed by the oriented boundary|,
    /// relative; nonzero signals overlaps, gaps or misoriented edges.
    pub tiling_defect: f64,
    pub violations: Vec<String>,
}

impl MeshReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for MeshReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "vertices {}  triangles {}  area [{:.3e}, {:.3e}]  min angle {:.2} deg  max edge {:.4}",
            self.vertex_count,
            self.triangle_count,
            self.min_area,
            self.max_area,
            self.min_angle_deg,
            self.max_edge_len
        )?;
        if self.violations.is_empty() {
            write!(f, "no violations")
        } else {
            write!(f, "{} violation(s):", self.violations.len())?;
            for v in &self.violations {
                write!(f, "\n  - {v}")?;
            }
            Ok(())
        }
    }
}

pub fn validate_mesh(mesh: &Mesh2D) -> MeshReport {
    let mut violations = Vec::new();
    let nv = mesh.vertices.len();

    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().any(|&i| i >= nv) {
            violations.push(format!("triangle {t} references vertex out of range"));
        }
    }
    for (k, e) in mesh.boundary_edges.iter().enumerate() {
        if e.nodes.iter().any(|&i| i >= nv) {
            violations.push(format!("boundary edge {k} references vertex out of range"));
        }
    }
    if !violations.is_empty() {
        return MeshReport {
            vertex_count: nv,
            triangle_count: mesh.triangles.len(),
            min_area: f64::NAN,
            max_area: f64::NAN,
            min_angle_deg: f64::NAN,
            max_edge_len: f64::NAN,
            orientation_violations: 0,
            dangling_boundary_edges: 0,
            tiling_defect: f64::NAN,
            violations,
        };
    }

    let mut min_area = f64::INFINITY;
    let mut max_area = f64::NEG_INFINITY;
    let mut min_angle = f64::INFINITY;
    let mut max_edge = 0.0f64;
    let mut orientation_violations = 0;
    let mut area_sum = 0.0;
    for t in 0..mesh.triangles.len() {
        let area = mesh.signed_area(t);
        area_sum += area;
        if area <= 0.0 {
            orientation_violations += 1;
            violations.push(format!(
                "triangle {t} has non-positive signed area {area:.3e}"
            ));
        }
        min_area = min_area.min(area);
        max_area = max_area.max(area);
        let [a, b, c] = mesh.triangles[t];
        let pts = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
        for i in 0..3 {
            let p = pts[i];
            let q = pts[(i + 1) % 3];
            let r = pts[(i + 2) % 3];
            let v1 = [q[0] - p[0], q[1] - p[1]];
            let v2 = [r[0] - p[0], r[1] - p[1]];
            let l1 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
            let l2 = (v2[0] * v2[0] + v2[1] * v2[1]).sqrt();
            max_edge = max_edge.max(l1);
            let cos = ((v1[0] * v2[0] + v1[1] * v2[1]) / (l1 * l2)).clamp(-1.0, 1.0);
            min_angle = min_angle.min(cos.acos().to_degrees());
        }
    }

    // Every boundary edge must appear, with its stored direction, in exactly
    // one triangle.
    use std::collections::HashMap;
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            *directed.entry((tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut dangling = 0;
    for (k, e) in mesh.boundary_edges.iter().enumerate() {
        let fwd = directed
            .get(&(e.nodes[0], e.nodes[1]))
            .copied()
            .unwrap_or(0);
        let rev = directed
            .get(&(e.nodes[1], e.nodes[0]))
            .copied()
            .unwrap_or(0);
        if fwd != 1 || rev != 0 {
            dangling += 1;
            violations.push(format!(
                "boundary edge {k} ({} -> {}) owned by {fwd} triangle(s) forward, {rev} reverse",
                e.nodes[0], e.nodes[1]
            ));
        }
    }

    for marker in [EdgeMarker::Interface, EdgeMarker::Outer] {
        let edges: Vec<&BoundaryEdge> = mesh.marked_edges(marker).collect();
        if edges.is_empty() {
            continue;
        }
        if let Err(msg) = check_single_closed_loop(&edges) {
            violations.push(format!("{} edges: {msg}", marker.token()));
        }
    }

    // The oriented boundary encloses the domain; the triangles must tile it.
    let boundary_area: f64 = mesh
        .boundary_edges
        .iter()
        .map(|e| {
            let a = mesh.vertices[e.nodes[0]];
            let b = mesh.vertices[e.nodes[1]];
            0.5 * (a[0] * b[1] - b[0] * a[1])
        })
        .sum();
    let tiling_defect = (area_sum - boundary_area).abs() / area_sum.abs().max(f64::MIN_POSITIVE);
    if !mesh.boundary_edges.is_empty() && tiling_defect > 1e-10 {
        violations.push(format!(
            "triangle areas ({area_sum:.12e}) do not tile the boundary-enclosed area ({boundary_area:.12e})"
        ));
    }

    MeshReport {
        vertex_count: nv,
        triangle_count: mesh.triangles.len(),
        min_area,
        max_area,
        min_angle_deg: min_angle,
        max_edge_len: max_edge,
        orientation_violations,
        dangling_boundary_edges: dangling,
        tiling_defect,
        violations,
    }
}

fn check_single_closed_loop(edges: &[&BoundaryEdge]) -> Result<(), String> {
    use std::collections::HashMap;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for e in edges {
        if next.insert(e.nodes[0], e.nodes[1]).is_some() {
            return Err(format!("node {} has two outgoing edges", e.nodes[0]));
        }
    }
    let start = edges[0].nodes[0];
    let mut node = start;
    for _ in 0..edges.len() {
        node = *next
            .get(&node)
            .ok_or_else(|| format!("open polygon: no edge leaves node {node}"))?;
    }
    if node != start {
        return Err("edges do not close into a single loop".into());
    }
    if next.len() != edges.len() {
        return Err("edges form more than one loop".into());
    }
    Ok(())
}

pub fn write_mesh(mesh: &Mesh2D, path: &Path) -> Result<(), MeshIoError> {
    let mut out = String::new();
    out.push_str(&format!("calmesh v1 {}\n", mesh.domain.token()));
    out.push_str(&format!("vertices {}\n", mesh.vertices.len()));
    for v in &mesh.vertices {
        out.push_str(&format!(
            "{} {}\n",
            crate::fmt_full(v[0]),
            crate::fmt_full(v[1])
        ));
    }
    out.push_str(&format!("triangles {}\n", mesh.triangles.len()));
    for t in &mesh.triangles {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    out.push_str(&format!("boundary {}\n", mesh.boundary_edges.len()));
    for e in &mesh.boundary_edges {
        out.push_str(&format!(
            "{} {} {}\n",
            e.nodes[0],
            e.nodes[1],
            e.marker.token()
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<Mesh2D, MeshIoError> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

struct LineCursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> MeshIoError {
        MeshIoError::Parse {
            line: self.pos.max(1),
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, MeshIoError> {
        if self.pos >= self.lines.len() {
            return Err(MeshIoError::Parse {
                line: self.lines.len() + 1,
                message: format!("file ended, expected {what}"),
            });
        }
        self.pos += 1;
        Ok(self.lines[self.pos - 1])
    }

    fn line(&self) -> usize {
        self.pos
    }
}

pub fn parse_mesh(text: &str) -> Result<Mesh2D, MeshIoError> {
    let mut cur = LineCursor::new(text);

    let header = cur.next("`calmesh v1 <domain>` header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("calmesh") || parts.next() != Some("v1") {
        return Err(cur.err("expected `calmesh v1 <domain>` header"));
    }
    let domain = match parts.next() {
        Some("cytosol") => DomainTag::Cytosol,
        Some("er") => DomainTag::Er,
        other => {
            return Err(cur.err(format!(
                "unknown domain tag {other:?}, expected `cytosol` or `er`"
            )))
        }
    };

    fn section_count(cur: &mut LineCursor, name: &str) -> Result<usize, MeshIoError> {
        let line = cur.next(&format!("`{name} N` section"))?;
        let mut p = line.split_whitespace();
        if p.next() != Some(name) {
            return Err(cur.err(format!("expected `{name} N`, got `{line}`")));
        }
        let count: usize = p
            .next()
            .ok_or_else(|| cur.err(format!("missing count after `{name}`")))?
            .parse()
            .map_err(|_| cur.err(format!("invalid count in `{line}`")))?;
        if p.next().is_some() {
            return Err(cur.err(format!("trailing tokens in `{line}`")));
        }
        Ok(count)
    }

    let nv = section_count(&mut cur, "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = cur.next("vertex line")?;
        let mut p = line.split_whitespace();
        let x: f64 = p
            .next()
            .ok_or_else(|| cur.err("missing x coordinate"))?
            .parse()
            .map_err(|_| cur.err("invalid x coordinate"))?;
        let y: f64 = p
            .next()
            .ok_or_else(|| cur.err("missing y coordinate"))?
            .parse()
            .map_err(|_| cur.err("invalid y coordinate"))?;
        if p.next().is_some() {
            return Err(cur.err("trailing tokens on vertex line"));
        }
        vertices.push([x, y]);
    }

    let nt = section_count(&mut cur, "triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = cur.next("triangle line")?;
        let mut tri = [0usize; 3];
        let mut p = line.split_whitespace();
        for slot in &mut tri {
            let idx: usize = p
                .next()
                .ok_or_else(|| cur.err("triangle line needs three indices"))?
                .parse()
                .map_err(|_| cur.err("invalid triangle index"))?;
            if idx >= nv {
                return Err(MeshIoError::Structure {
                    line: cur.line(),
                    message: format!("triangle references vertex {idx} of {nv}"),
                });
            }
            *slot = idx;
        }
        if p.next().is_some() {
            return Err(cur.err("trailing tokens on triangle line"));
        }
        triangles.push(tri);
    }

    let nb = section_count(&mut cur, "boundary")?;
    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let line = cur.next("boundary line")?;
        let mut p = line.split_whitespace();
        let mut nodes = [0usize; 2];
        for slot in &mut nodes {
            let idx: usize = p
                .next()
                .ok_or_else(|| cur.err("boundary line needs `i j marker`"))?
                .parse()
                .map_err(|_| cur.err("invalid boundary index"))?;
            if idx >= nv {
                return Err(MeshIoError::Structure {
                    line: cur.line(),
                    message: format!("boundary edge references vertex {idx} of {nv}"),
                });
            }
            *slot = idx;
        }
        let marker = match p.next() {
            Some("outer") => EdgeMarker::Outer,
            Some("interface") => EdgeMarker::Interface,
            other => return Err(cur.err(format!("unknown boundary marker {other:?}"))),
        };
        if p.next().is_some() {
            return Err(cur.err("trailing tokens on boundary line"));
        }
        boundary_edges.push(BoundaryEdge { nodes, marker });
    }

    while cur.pos < cur.lines.len() {
        let line = cur.next("end of file")?;
        if !line.trim().is_empty() {
            return Err(cur.err(format!("unexpected trailing content `{line}`")));
        }
    }

    Ok(Mesh2D {
        vertices,
        triangles,
        boundary_edges,
        domain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_bad_inputs() {
        assert!(generate_geometry(-1.0, 2.0, 0.1).is_err());
        assert!(generate_geometry(2.0, 1.0, 0.1).is_err());
        assert!(generate_geometry(1.0, 2.0, 0.0).is_err());
        assert!(generate_geometry(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn interface_ring_has_forced_node_count() {
        let (cyto, er, map) = generate_geometry(1.0, 2.0, PI / 8.0).unwrap();
        assert_eq!(map.len(), 16); // ceil(2*pi / (pi/8))
        assert_eq!(cyto.marked_nodes(EdgeMarker::Interface).len(), 16);
        assert_eq!(er.marked_nodes(EdgeMarker::Interface).len(), 16);
    }

    #[test]
    fn interface_pairs_are_coordinate_identical() {
        let (cyto, er, map) = generate_geometry(1.0, 2.0, PI / 8.0).unwrap();
        assert_eq!(map.max_pair_distance(&cyto, &er), 0.0);
        for &(c, e) in &map.pairs {
            assert_eq!(cyto.vertices[c], er.vertices[e]);
        }
    }

    #[test]
    fn every_interface_node_paired_exactly_once() {
        let (cyto, er, map) = generate_geometry(1.2, 2.0, PI / 16.0).unwrap();
        let mut cyto_nodes: Vec<usize> = map.pairs.iter().map(|p| p.0).collect();
        let mut er_nodes: Vec<usize> = map.pairs.iter().map(|p| p.1).collect();
        cyto_nodes.sort_unstable();
        er_nodes.sort_unstable();
        assert_eq!(cyto_nodes, cyto.marked_nodes(EdgeMarker::Interface));
        assert_eq!(er_nodes, er.marked_nodes(EdgeMarker::Interface));
    }

    /// Euler characteristic recomputed combinatorially: V - E + F = 1 for the
    /// disk, 0 for the annulus (counting only triangle faces).
    #[test]
    fn euler_characteristic_oracle() {
        let (cyto, er, _) = generate_geometry(1.0, 2.0, PI / 16.0).unwrap();
        for (mesh, expected) in [(&er, 1i64), (&cyto, 0i64)] {
            let mut edges = std::collections::HashSet::new();
            for t in &mesh.triangles {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            let chi =
                mesh.vertex_count() as i64 - edges.len() as i64 + mesh.triangle_count() as i64;
            assert_eq!(chi, expected, "domain {:?}", mesh.domain);
        }
    }

    #[test]
    fn generated_meshes_validate_cleanly() {
        for h in [PI / 8.0, PI / 16.0, PI / 32.0] {
            let (cyto, er, _) = generate_geometry(1.0, 2.0, h).unwrap();
            for mesh in [&cyto, &er] {
                let report = validate_mesh(mesh);
                assert!(report.is_valid(), "h={h}: {report}");
                // Longest edge stays within twice the nominal mesh size.
                assert!(
                    report.max_edge_len <= 2.0 * h,
                    "h={h}: {}",
                    report.max_edge_len
                );
            }
        }
    }

    /// Regression floor recorded from the generator output at h = pi/32.
    #[test]
    fn min_angle_floor_at_pi_over_32() {
        let (cyto, er, _) = generate_geometry(1.0, 2.0, PI / 32.0).unwrap();
        for mesh in [&cyto, &er] {
            let report = validate_mesh(mesh);
            assert!(
                report.min_angle_deg >= 20.0,
                "{:?}: min angle {}",
                mesh.domain,
                report.min_angle_deg
            );
        }
    }

    #[test]
    fn swapped_triangle_is_one_orientation_violation() {
        let (_, mut er, _) = generate_geometry(1.0, 2.0, PI / 8.0).unwrap();
        er.triangles[3].swap(1, 2);
        let report = validate_mesh(&er);
        assert_eq!(report.orientation_violations, 1);
        assert!(!report.is_valid());
    }

    #[test]
    fn boundary_nodes_sit_on_their_circles() {
        let (cyto, er, _) = generate_geometry(1.0, 2.0, PI / 16.0).unwrap();
        for &n in &cyto.marked_nodes(EdgeMarker::Outer) {
            let v = cyto.vertices[n];
            assert!(((v[0].hypot(v[1])) - 2.0).abs() <= 8.0 * f64::EPSILON);
        }
        for (mesh, r) in [(&cyto, 1.0), (&er, 1.0)] {
            for &n in &mesh.marked_nodes(EdgeMarker::Interface) {
                let v = mesh.vertices[n];
                assert!(((v[0].hypot(v[1])) - r).abs() <= 8.0 * f64::EPSILON);
            }
        }
    }

    /// Halving h doubles the interface ring exactly on the study family,
    /// where 2*pi*r_inner/h is an integer. (With the ceil count formula this
    /// cannot hold for incommensurate radii: ceil(38.4) = 39 but
    /// ceil(76.8) = 77.)
    #[test]
    fn halving_h_doubles_interface_ring() {
        let mut counts = Vec::new();
        for k in 0..4 {
            let h = PI / 8.0 / (1 << k) as f64;
            let (_, _, map) = generate_geometry(1.0, 2.0, h).unwrap();
            counts.push(map.len());
        }
        assert_eq!(counts, vec![16, 32, 64, 128]);
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let (cyto, er, _) = generate_geometry(1.0, 2.0, PI / 8.0).unwrap();
        for mesh in [&cyto, &er] {
            let path = dir.path().join(format!("{}.mesh", mesh.domain.token()));
            write_mesh(mesh, &path).unwrap();
            let back = read_mesh(&path).unwrap();
            assert_eq!(&back, mesh);
        }
    }

    #[test]
    fn read_rejects_out_of_range_index() {
        let text = "calmesh v1 er\nvertices 2\n0 0\n1 0\ntriangles 1\n0 1 1000000000\nboundary 0\n";
        match parse_mesh(text) {
            Err(MeshIoError::Structure { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected structural error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_empty_file() {
        match parse_mesh("") {
            Err(MeshIoError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_reports_line_of_malformed_vertex() {
        let text = "calmesh v1 er\nvertices 2\n0 0\n1 nope\ntriangles 0\nboundary 0\n";
        match parse_mesh(text) {
            Err(MeshIoError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
