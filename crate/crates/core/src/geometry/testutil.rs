//! Shared fixtures for unit tests.

use super::{TriMesh, Vec3};

/// Icosahedron subdivided once, vertices pushed onto a sphere of `radius`.
pub(crate) fn icosphere(radius: f64) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    let faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let mut new_faces = Vec::new();
    let mut midpoints = std::collections::HashMap::new();
    let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let m = (verts[a] + verts[b]) / 2.0;
            verts.push(m);
            verts.len() - 1
        })
    };
    for f in faces {
        let ab = midpoint(f[0], f[1], &mut verts);
        let bc = midpoint(f[1], f[2], &mut verts);
        let ca = midpoint(f[2], f[0], &mut verts);
        new_faces.extend_from_slice(&[
            [f[0], ab, ca],
            [f[1], bc, ab],
            [f[2], ca, bc],
            [ab, bc, ca],
        ]);
    }
    for v in &mut verts {
        *v = v.normalize() * radius;
    }
    TriMesh::new(verts, new_faces).unwrap()
}
