//! Native mesh file format: a JSON object
//! `{version, k, vertices, triangles, geom_nodes, boundary_node_flags}`
//! with floats written with 17 significant digits so that coordinates
//! round-trip bit-faithfully.  Global node identity is reconstructed on read
//! by deduplicating bitwise-equal geometry-node coordinates in
//! first-occurrence order, which is exactly the order the writer's global
//! node list (and hence `boundary_node_flags`) is stored in.

use super::{CurvedMesh, StraightTriangulation};
use crate::error::{Error, Result};
use crate::femspace::reference::ReferenceElement;
use crate::vec2::Vec2;

use serde::Deserialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

/// 17 significant digits: enough to reproduce any f64 exactly on parse.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serialize a mesh to the native JSON format.
pub fn mesh_to_json(mesh: &CurvedMesh) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"version\": {FORMAT_VERSION},");
    let _ = writeln!(out, "  \"k\": {},", mesh.k);

    out.push_str("  \"vertices\": [\n");
    for (i, v) in mesh.base.vertices.iter().enumerate() {
        let comma = if i + 1 < mesh.base.vertices.len() { "," } else { "" };
        let _ = writeln!(out, "    [{}, {}]{comma}", fmt_f64(v[0]), fmt_f64(v[1]));
    }
    out.push_str("  ],\n");

    out.push_str("  \"triangles\": [\n");
    for (i, t) in mesh.base.triangles.iter().enumerate() {
        let comma = if i + 1 < mesh.base.triangles.len() { "," } else { "" };
        let _ = writeln!(out, "    [{}, {}, {}]{comma}", t[0], t[1], t[2]);
    }
    out.push_str("  ],\n");

    out.push_str("  \"geom_nodes\": [\n");
    for (t, nodes) in mesh.geom_nodes.iter().enumerate() {
        let pts: Vec<String> = nodes
            .iter()
            .map(|p| format!("[{}, {}]", fmt_f64(p[0]), fmt_f64(p[1])))
            .collect();
        let comma = if t + 1 < mesh.geom_nodes.len() { "," } else { "" };
        let _ = writeln!(out, "    [{}]{comma}", pts.join(", "));
    }
    out.push_str("  ],\n");

    let flags: Vec<&str> = mesh
        .boundary_node
        .iter()
        .map(|&b| if b { "true" } else { "false" })
        .collect();
    let _ = writeln!(out, "  \"boundary_node_flags\": [{}]", flags.join(", "));
    out.push_str("}\n");
    out
}

pub fn write_mesh(mesh: &CurvedMesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_json(mesh))?;
    Ok(())
}

#[derive(Deserialize)]
struct MeshFile {
    version: u32,
    k: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    geom_nodes: Vec<Vec<[f64; 2]>>,
    boundary_node_flags: Vec<bool>,
}

/// Parse a mesh from the native JSON format, validating structure and
/// reconstructing global node identity from bitwise-equal coordinates.
pub fn mesh_from_json(text: &str) -> Result<CurvedMesh> {
    let file: MeshFile = serde_json::from_str(text)?;
    if file.version != FORMAT_VERSION {
        return Err(Error::InvalidFile(format!(
            "unsupported mesh format version {}",
            file.version
        )));
    }
    let reference = ReferenceElement::new(file.k)
        .map_err(|_| Error::InvalidFile(format!("invalid polynomial degree {}", file.k)))?;
    let n_local = reference.n_nodes();
    if file.geom_nodes.len() != file.triangles.len() {
        return Err(Error::InvalidFile(format!(
            "{} geometry-node rows for {} triangles",
            file.geom_nodes.len(),
            file.triangles.len()
        )));
    }
    for (t, tri) in file.triangles.iter().enumerate() {
        if tri.iter().any(|&v| v >= file.vertices.len()) {
            return Err(Error::InvalidFile(format!("triangle {t} references a missing vertex")));
        }
        if file.geom_nodes[t].len() != n_local {
            return Err(Error::InvalidFile(format!(
                "triangle {t} has {} geometry nodes, expected {n_local}",
                file.geom_nodes[t].len()
            )));
        }
    }

    // Rebuild global nodes by first-occurrence bitwise deduplication.
    let mut ids: HashMap<(u64, u64), usize> = HashMap::new();
    let mut global_nodes: Vec<Vec2> = Vec::new();
    let mut node_map: Vec<Vec<usize>> = Vec::with_capacity(file.triangles.len());
    for nodes in &file.geom_nodes {
        let mut row = Vec::with_capacity(n_local);
        for p in nodes {
            let key = (p[0].to_bits(), p[1].to_bits());
            let id = *ids.entry(key).or_insert_with(|| {
                global_nodes.push(*p);
                global_nodes.len() - 1
            });
            row.push(id);
        }
        node_map.push(row);
    }
    if file.boundary_node_flags.len() != global_nodes.len() {
        return Err(Error::InvalidFile(format!(
            "{} boundary flags for {} distinct nodes",
            file.boundary_node_flags.len(),
            global_nodes.len()
        )));
    }

    let mut base = StraightTriangulation {
        vertices: file.vertices,
        triangles: file.triangles,
        boundary_edges: Vec::new(),
        target_h: 0.0,
    };
    for t in 0..base.n_triangles() {
        if base.signed_area(t) <= 0.0 {
            return Err(Error::InvalidFile(format!("triangle {t} is degenerate or inverted")));
        }
    }
    base.boundary_edges = base
        .edge_incidence()
        .map_err(|e| Error::InvalidFile(format!("non-conforming mesh: {e}")))?;
    base.target_h = base.h_max();
    let h = base.h_max();

    Ok(CurvedMesh {
        base,
        k: file.k,
        geom_nodes: file
            .geom_nodes
            .into_iter()
            .map(|row| row.into_iter().collect())
            .collect(),
        global_nodes,
        boundary_node: file.boundary_node_flags,
        node_map,
        h,
        reference,
    })
}

pub fn read_mesh(path: &Path) -> Result<CurvedMesh> {
    mesh_from_json(&std::fs::read_to_string(path)?)
}
