//! Indexed triangle mesh with ASCII PLY serialization.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use super::{parse_err, GeometryError, Vec3};

/// Triangles whose area falls at or below this are dropped at construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    normals: Option<Vec<Vec3>>,
    dropped_degenerate: usize,
}

impl TriMesh {
    /// Builds a mesh, validating indices and dropping degenerate triangles
    /// (area <= 1e-12 m^2). The dropped count is retained for inspection.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        let mut kept = Vec::with_capacity(triangles.len());
        let mut dropped = 0usize;
        for tri in triangles {
            for &i in &tri {
                if i >= n {
                    return Err(GeometryError::IndexOutOfBounds {
                        index: i,
                        vertices: n,
                    });
                }
            }
            let area = triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if area > DEGENERATE_AREA {
                kept.push(tri);
            } else {
                dropped += 1;
            }
        }
        Ok(Self {
            vertices,
            triangles: kept,
            normals: None,
            dropped_degenerate: dropped,
        })
    }

    /// Attaches per-vertex normals (must match the vertex count).
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self, GeometryError> {
        if normals.len() != self.vertices.len() {
            return Err(GeometryError::DegenerateConfiguration(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_vertices(&self, i: usize) -> [&Vec3; 3] {
        let t = &self.triangles[i];
        [&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(i);
        triangle_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Axis-aligned bounding box as (min, max); `None` for empty meshes.
    pub fn aabb(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.vertices.iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for v in it {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Some((lo, hi))
    }

    /// Bounding sphere: AABB center and the exact maximum vertex distance
    /// from it.
    pub fn bounding_sphere(&self) -> Option<(Vec3, f64)> {
        let (lo, hi) = self.aabb()?;
        let center = (lo + hi) / 2.0;
        let radius = self
            .vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0f64, f64::max);
        Some((center, radius))
    }

    /// Writes ASCII PLY with `x y z` vertices (plus `nx ny nz` when normals
    /// are present) and `vertex_indices` faces.
    pub fn write_ply<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.vertices.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        if self.normals.is_some() {
            writeln!(w, "property float nx")?;
            writeln!(w, "property float ny")?;
            writeln!(w, "property float nz")?;
        }
        writeln!(w, "element face {}", self.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
        writeln!(w, "end_header")?;
        match &self.normals {
            Some(normals) => {
                for (v, n) in self.vertices.iter().zip(normals) {
                    writeln!(w, "{} {} {} {} {} {}", v.x, v.y, v.z, n.x, n.y, n.z)?;
                }
            }
            None => {
                for v in &self.vertices {
                    writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
                }
            }
        }
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn save_ply(&self, path: &Path) -> Result<(), GeometryError> {
        let file = std::fs::File::create(path)?;
        self.write_ply(BufWriter::new(file))?;
        Ok(())
    }

    pub fn read_ply<R: BufRead>(reader: R, name: &str) -> Result<Self, GeometryError> {
        let mut lines = reader.lines();
        let mut nvert = None;
        let mut nface = None;
        let mut has_normals = false;
        let mut current_element = String::new();

        // Header
        loop {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(name, "unexpected end of header"))??;
            let line = line.trim().to_string();
            if line == "end_header" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["element", "vertex", n] => {
                    current_element = "vertex".into();
                    nvert = Some(n.parse::<usize>().map_err(|e| parse_err(name, e.to_string()))?);
                }
                ["element", "face", n] => {
                    current_element = "face".into();
                    nface = Some(n.parse::<usize>().map_err(|e| parse_err(name, e.to_string()))?);
                }
                ["property", _, "nx"] if current_element == "vertex" => has_normals = true,
                _ => {}
            }
        }
        let nvert = nvert.ok_or_else(|| parse_err(name, "missing vertex element"))?;
        let nface = nface.ok_or_else(|| parse_err(name, "missing face element"))?;

        let mut vertices = Vec::with_capacity(nvert);
        let mut normals = Vec::with_capacity(if has_normals { nvert } else { 0 });
        for _ in 0..nvert {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(name, "missing vertex line"))??;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(name, e.to_string()))?;
            let want = if has_normals { 6 } else { 3 };
            if vals.len() != want {
                return Err(parse_err(name, format!("expected {want} vertex fields")));
            }
            vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
            if has_normals {
                normals.push(Vec3::new(vals[3], vals[4], vals[5]));
            }
        }
        let mut triangles = Vec::with_capacity(nface);
        for _ in 0..nface {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(name, "missing face line"))??;
            let vals: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(name, e.to_string()))?;
            if vals.len() != 4 || vals[0] != 3 {
                return Err(parse_err(name, "only triangle faces are supported"));
            }
            triangles.push([vals[1], vals[2], vals[3]]);
        }
        let mesh = TriMesh::new(vertices, triangles)?;
        if has_normals {
            mesh.with_normals(normals)
        } else {
            Ok(mesh)
        }
    }

    pub fn load_ply(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)?;
        Self::read_ply(std::io::BufReader::new(file), &path.display().to_string())
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn drops_degenerate_triangles() {
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0), // collinear
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        assert_eq!(mesh.triangles().len(), 1);
        assert_eq!(mesh.dropped_degenerate(), 1);
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = TriMesh::new(vec![Vec3::zeros()], vec![[0, 0, 5]]).unwrap_err();
        assert!(matches!(err, GeometryError::IndexOutOfBounds { index: 5, .. }));
    }

    #[test]
    fn ply_roundtrip() {
        let mesh = quad();
        let mut buf = Vec::new();
        mesh.write_ply(&mut buf).unwrap();
        let back = TriMesh::read_ply(std::io::Cursor::new(buf), "mem").unwrap();
        assert_eq!(back.vertices().len(), 4);
        assert_eq!(back.triangles(), mesh.triangles());
    }

    #[test]
    fn ply_roundtrip_with_normals() {
        let mesh = quad()
            .with_normals(vec![Vec3::new(0.0, 0.0, 1.0); 4])
            .unwrap();
        let mut buf = Vec::new();
        mesh.write_ply(&mut buf).unwrap();
        let back = TriMesh::read_ply(std::io::Cursor::new(buf), "mem").unwrap();
        assert!(back.normals().is_some());
    }

    #[test]
    fn bounding_sphere_of_quad() {
        let (center, radius) = quad().bounding_sphere().unwrap();
        assert!((center - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
        assert!((radius - (0.5f64 * 0.5 + 0.5 * 0.5).sqrt()).abs() < 1e-12);
    }
}
