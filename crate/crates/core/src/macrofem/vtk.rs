//! VTK unstructured-grid output, legacy ASCII and XML.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::macrofem::MacroMesh;

/// VTK hexahedron corner order in terms of the local node index.
const VTK_HEX: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

/// Named fields attached to a mesh.
#[derive(Clone, Debug, Default)]
pub struct FieldSet {
    pub point_scalars: Vec<(String, Vec<f64>)>,
    pub point_vectors: Vec<(String, Vec<[f64; 3]>)>,
    pub cell_scalars: Vec<(String, Vec<f64>)>,
    pub cell_vectors: Vec<(String, Vec<[f64; 3]>)>,
}

impl FieldSet {
    pub fn point_scalar(&mut self, name: &str, v: Vec<f64>) -> &mut Self {
        self.point_scalars.push((name.to_string(), v));
        self
    }

    /// Interleaved `3 × nodes` vector field.
    pub fn point_vector(&mut self, name: &str, v: &[f64]) -> &mut Self {
        let vv = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        self.point_vectors.push((name.to_string(), vv));
        self
    }

    pub fn cell_scalar(&mut self, name: &str, v: Vec<f64>) -> &mut Self {
        self.cell_scalars.push((name.to_string(), v));
        self
    }

    pub fn cell_vector(&mut self, name: &str, v: Vec<[f64; 3]>) -> &mut Self {
        self.cell_vectors.push((name.to_string(), v));
        self
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn legacy_string(mesh: &MacroMesh, fields: &FieldSet, title: &str) -> String {
    let nn = mesh.num_nodes();
    let ne = mesh.num_elements();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID",
        title.replace('\n', " ")
    );
    let _ = writeln!(s, "POINTS {nn} double");
    for n in 0..nn {
        let x = mesh.node_coords(n);
        let _ = writeln!(s, "{} {} {}", x[0], x[1], x[2]);
    }
    let _ = writeln!(s, "CELLS {ne} {}", 9 * ne);
    for e in 0..ne {
        let nodes = mesh.element_nodes(e);
        let _ = write!(s, "8");
        for a in VTK_HEX {
            let _ = write!(s, " {}", nodes[a]);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("12\n");
    }
    if !fields.point_scalars.is_empty() || !fields.point_vectors.is_empty() {
        let _ = writeln!(s, "POINT_DATA {nn}");
        for (name, v) in &fields.point_scalars {
            let _ = writeln!(
                s,
                "SCALARS {} double 1\nLOOKUP_TABLE default",
                sanitize(name)
            );
            for x in v {
                let _ = writeln!(s, "{x}");
            }
        }
        for (name, v) in &fields.point_vectors {
            let _ = writeln!(s, "VECTORS {} double", sanitize(name));
            for x in v {
                let _ = writeln!(s, "{} {} {}", x[0], x[1], x[2]);
            }
        }
    }
    if !fields.cell_scalars.is_empty() || !fields.cell_vectors.is_empty() {
        let _ = writeln!(s, "CELL_DATA {ne}");
        for (name, v) in &fields.cell_scalars {
            let _ = writeln!(
                s,
                "SCALARS {} double 1\nLOOKUP_TABLE default",
                sanitize(name)
            );
            for x in v {
                let _ = writeln!(s, "{x}");
            }
        }
        for (name, v) in &fields.cell_vectors {
            let _ = writeln!(s, "VECTORS {} double", sanitize(name));
            for x in v {
                let _ = writeln!(s, "{} {} {}", x[0], x[1], x[2]);
            }
        }
    }
    s
}

fn data_array(s: &mut String, name: &str, comps: usize, values: impl Iterator<Item = f64>) {
    let _ = write!(s, "        <DataArray type=\"Float64\" Name=\"{}\" NumberOfComponents=\"{comps}\" format=\"ascii\">\n          ", sanitize(name));
    for v in values {
        let _ = write!(s, "{v} ");
    }
    s.push_str("\n        </DataArray>\n");
}

pub fn xml_string(mesh: &MacroMesh, fields: &FieldSet) -> String {
    let nn = mesh.num_nodes();
    let ne = mesh.num_elements();
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\"?>\n<VTKFile type=\"UnstructuredGrid\" version=\"1.0\" byte_order=\"LittleEndian\">\n  <UnstructuredGrid>\n");
    let _ = writeln!(
        s,
        "    <Piece NumberOfPoints=\"{nn}\" NumberOfCells=\"{ne}\">"
    );
    s.push_str("      <PointData>\n");
    for (name, v) in &fields.point_scalars {
        data_array(&mut s, name, 1, v.iter().copied());
    }
    for (name, v) in &fields.point_vectors {
        data_array(&mut s, name, 3, v.iter().flatten().copied());
    }
    s.push_str("      </PointData>\n      <CellData>\n");
    for (name, v) in &fields.cell_scalars {
        data_array(&mut s, name, 1, v.iter().copied());
    }
    for (name, v) in &fields.cell_vectors {
        data_array(&mut s, name, 3, v.iter().flatten().copied());
    }
    s.push_str("      </CellData>\n      <Points>\n");
    data_array(
        &mut s,
        "Points",
        3,
        (0..nn).flat_map(|n| mesh.node_coords(n)),
    );
    s.push_str("      </Points>\n      <Cells>\n        <DataArray type=\"Int64\" Name=\"connectivity\" format=\"ascii\">\n          ");
    for e in 0..ne {
        let nodes = mesh.element_nodes(e);
        for a in VTK_HEX {
            let _ = write!(s, "{} ", nodes[a]);
        }
    }
    s.push_str("\n        </DataArray>\n        <DataArray type=\"Int64\" Name=\"offsets\" format=\"ascii\">\n          ");
    for e in 1..=ne {
        let _ = write!(s, "{} ", 8 * e);
    }
    s.push_str("\n        </DataArray>\n        <DataArray type=\"UInt8\" Name=\"types\" format=\"ascii\">\n          ");
    for _ in 0..ne {
        s.push_str("12 ");
    }
    s.push_str(
        "\n        </DataArray>\n      </Cells>\n    </Piece>\n  </UnstructuredGrid>\n</VTKFile>\n",
    );
    s
}

pub fn write_legacy(path: &Path, mesh: &MacroMesh, fields: &FieldSet, title: &str) -> Result<()> {
    std::fs::write(path, legacy_string(mesh, fields, title))?;
    Ok(())
}

pub fn write_xml(path: &Path, mesh: &MacroMesh, fields: &FieldSet) -> Result<()> {
    std::fs::write(path, xml_string(mesh, fields))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macrofem::MeshSpec;

    #[test]
    fn legacy_file_has_consistent_counts() {
        let mesh = MacroMesh::new(MeshSpec {
            nx: 2,
            ny: 1,
            nz: 1,
            h: [1.0; 3],
        })
        .unwrap();
        let mut f = FieldSet::default();
        f.point_scalar("P", vec![1.0; mesh.num_nodes()])
            .cell_scalar("rho m", vec![0.5, 0.6]);
        let s = legacy_string(&mesh, &f, "t");
        assert!(s.contains("POINTS 12 double"));
        assert!(s.contains("CELLS 2 18"));
        assert!(s.contains("SCALARS rho_m double 1"));
        // first hex: nodes (0,0,0),(1,0,0),(1,1,0),(0,1,0),... in VTK order
        let nodes = mesh.element_nodes(0);
        let line = format!("8 {} {} {} {}", nodes[0], nodes[1], nodes[3], nodes[2]);
        assert!(s.contains(&line));
    }

    #[test]
    fn xml_file_is_well_formed_enough() {
        let mesh = MacroMesh::new(MeshSpec {
            nx: 1,
            ny: 1,
            nz: 1,
            h: [1.0; 3],
        })
        .unwrap();
        let mut f = FieldSet::default();
        f.point_vector("u", &[0.0; 24]);
        let s = xml_string(&mesh, &f);
        assert_eq!(
            s.matches("<DataArray").count(),
            s.matches("</DataArray>").count()
        );
        assert!(s.contains("NumberOfPoints=\"8\" NumberOfCells=\"1\""));
    }
}
