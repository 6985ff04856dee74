//! Ray-mesh intersection (Moller-Trumbore per triangle).

use super::{GeometryError, TriMesh, Vec3};

/// Minimum ray parameter for a valid hit; filters self-intersections.
pub const MIN_T: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: Vec3,
    pub triangle: usize,
}

/// Nearest intersection of a ray with the mesh, if any.
///
/// `dir` must be unit length (within 1e-9). Hits closer than [`MIN_T`] are
/// ignored; exact ties in `t` resolve to the lowest triangle index because
/// triangles are scanned in index order and only strictly closer hits
/// replace the current best.
pub fn ray_intersect(
    mesh: &TriMesh,
    origin: &Vec3,
    dir: &Vec3,
) -> Result<Option<RayHit>, GeometryError> {
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(GeometryError::NonUnitDirection(n));
    }
    let mut best: Option<RayHit> = None;
    for (idx, _) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = mesh.triangle_vertices(idx);
        if let Some(t) = moller_trumbore(origin, dir, a, b, c) {
            if t > MIN_T && best.map_or(true, |h| t < h.t) {
                best = Some(RayHit {
                    t,
                    point: origin + dir * t,
                    triangle: idx,
                });
            }
        }
    }
    Ok(best)
}

/// Ray parameter of the intersection with triangle (a,b,c), or None.
/// Rays parallel to the triangle plane miss; both winding orders hit.
fn moller_trumbore(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    const EPS: f64 = 1e-14;
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&qvec) * inv_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriMesh;
    use rand::{Rng, SeedableRng};

    fn unit_quad_at_z0() -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(-0.5, -0.5, 0.0),
                Vec3::new(0.5, -0.5, 0.0),
                Vec3::new(0.5, 0.5, 0.0),
                Vec3::new(-0.5, 0.5, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    use crate::geometry::testutil::icosphere;

    #[test]
    fn hits_quad_head_on() {
        let mesh = unit_quad_at_z0();
        let hit = ray_intersect(&mesh, &Vec3::new(0.0, 0.0, -1.0), &Vec3::new(0.0, 0.0, 1.0))
            .unwrap()
            .unwrap();
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!(hit.point.norm() < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let mesh = unit_quad_at_z0();
        let hit = ray_intersect(&mesh, &Vec3::new(0.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(hit.is_none());
    }

    #[test]
    fn non_unit_direction_rejected() {
        let mesh = unit_quad_at_z0();
        let err = ray_intersect(&mesh, &Vec3::zeros(), &Vec3::new(0.0, 0.0, 2.0)).unwrap_err();
        assert!(matches!(err, GeometryError::NonUnitDirection(_)));
    }

    #[test]
    fn matches_bruteforce_on_icosphere() {
        let mesh = icosphere(0.8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let origin = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let target = Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let dir = (target - origin).normalize();
            let fast = ray_intersect(&mesh, &origin, &dir).unwrap();

            // Brute force over all triangles, no early-out logic shared.
            let mut best: Option<(f64, usize)> = None;
            for i in 0..mesh.triangles().len() {
                let [a, b, c] = mesh.triangle_vertices(i);
                if let Some(t) = moller_trumbore(&origin, &dir, a, b, c) {
                    if t > MIN_T && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            match (fast, best) {
                (None, None) => {}
                (Some(h), Some((t, i))) => {
                    assert!((h.t - t).abs() < 1e-12);
                    assert_eq!(h.triangle, i);
                }
                _ => panic!("fast path and brute force disagree"),
            }
        }
    }
}
