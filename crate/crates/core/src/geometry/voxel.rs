//! Occupancy voxel grids and boundary-face surface extraction.

use std::collections::HashMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{parse_err, GeometryError, TriMesh, Vec3};

/// Axis-aligned occupancy grid. Cell `(x, y, z)` spans
/// `origin + cell_size * [x, x+1] x [y, y+1] x [z, z+1]`.
///
/// Occupancy is a real value in [0, 1]; a threshold turns it binary.
/// Serialized as the `VOXL1` format: a text header
/// `VOXL1 <nx> <ny> <nz> <cell> <ox> <oy> <oz>\n` followed by one occupancy
/// byte per cell (0..=255 mapping linearly onto [0, 1]) in x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    res: [usize; 3],
    origin: Vec3,
    cell_size: f64,
    occupancy: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(res: [usize; 3], origin: Vec3, cell_size: f64) -> Result<Self, GeometryError> {
        if res.iter().any(|&r| r < 2) {
            return Err(GeometryError::BadResolution(res[0], res[1], res[2]));
        }
        Ok(Self {
            res,
            origin,
            cell_size,
            occupancy: vec![0.0; res[0] * res[1] * res[2]],
        })
    }

    /// Uniform grid over the cube centered at the origin with given half extent.
    pub fn centered_cube(res: usize, half_extent: f64) -> Result<Self, GeometryError> {
        let cell = 2.0 * half_extent / res as f64;
        Self::new(
            [res, res, res],
            Vec3::new(-half_extent, -half_extent, -half_extent),
            cell,
        )
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.res[0] && y < self.res[1] && z < self.res[2]);
        x + self.res[0] * (y + self.res[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.occupancy[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) -> Result<(), GeometryError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(GeometryError::BadOccupancy(value));
        }
        let i = self.index(x, y, z);
        self.occupancy[i] = value;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.occupancy
    }

    /// Center of cell (x, y, z) in world coordinates.
    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                (x as f64 + 0.5) * self.cell_size,
                (y as f64 + 0.5) * self.cell_size,
                (z as f64 + 0.5) * self.cell_size,
            )
    }

    pub fn occupied(&self, x: usize, y: usize, z: usize, threshold: f64) -> bool {
        self.get(x, y, z) >= threshold
    }

    pub fn count_occupied(&self, threshold: f64) -> usize {
        self.occupancy.iter().filter(|&&v| v >= threshold).count()
    }

    /// Intersection-over-union of thresholded occupancies.
    pub fn iou(&self, other: &VoxelGrid, threshold: f64) -> f64 {
        assert_eq!(self.res, other.res);
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.occupancy.iter().zip(&other.occupancy) {
            let (a, b) = (a >= threshold, b >= threshold);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Number of 6-connected components of the occupied set.
    pub fn connected_components(&self, threshold: f64) -> usize {
        let mut seen = vec![false; self.occupancy.len()];
        let mut components = 0;
        let mut stack = Vec::new();
        for z in 0..self.res[2] {
            for y in 0..self.res[1] {
                for x in 0..self.res[0] {
                    let i = self.index(x, y, z);
                    if seen[i] || !self.occupied(x, y, z, threshold) {
                        continue;
                    }
                    components += 1;
                    seen[i] = true;
                    stack.push((x, y, z));
                    while let Some((cx, cy, cz)) = stack.pop() {
                        for (dx, dy, dz) in NEIGHBORS {
                            let (nx, ny, nz) = (
                                cx as isize + dx,
                                cy as isize + dy,
                                cz as isize + dz,
                            );
                            if nx < 0
                                || ny < 0
                                || nz < 0
                                || nx >= self.res[0] as isize
                                || ny >= self.res[1] as isize
                                || nz >= self.res[2] as isize
                            {
                                continue;
                            }
                            let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                            let ni = self.index(nx, ny, nz);
                            if !seen[ni] && self.occupied(nx, ny, nz, threshold) {
                                seen[ni] = true;
                                stack.push((nx, ny, nz));
                            }
                        }
                    }
                }
            }
        }
        components
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(
            w,
            "VOXL1 {} {} {} {} {} {} {}\n",
            self.res[0],
            self.res[1],
            self.res[2],
            self.cell_size,
            self.origin.x,
            self.origin.y,
            self.origin.z
        )?;
        let bytes: Vec<u8> = self
            .occupancy
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let file = std::fs::File::create(path)?;
        self.write(BufWriter::new(file))?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, name: &str) -> Result<Self, GeometryError> {
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)
                .map_err(|_| parse_err(name, "truncated header"))?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
            if header.len() > 512 {
                return Err(parse_err(name, "header too long"));
            }
        }
        let header = String::from_utf8(header).map_err(|_| parse_err(name, "non-utf8 header"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 8 || parts[0] != "VOXL1" {
            return Err(parse_err(name, format!("bad voxel header {header:?}")));
        }
        let nums: Vec<f64> = parts[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(name, e.to_string()))?;
        let res = [nums[0] as usize, nums[1] as usize, nums[2] as usize];
        let mut grid = VoxelGrid::new(res, Vec3::new(nums[4], nums[5], nums[6]), nums[3])?;
        let mut bytes = vec![0u8; res[0] * res[1] * res[2]];
        r.read_exact(&mut bytes)
            .map_err(|_| parse_err(name, "truncated voxel payload"))?;
        for (dst, &b) in grid.occupancy.iter_mut().zip(&bytes) {
            *dst = b as f64 / 255.0;
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), &path.display().to_string())
    }
}

const NEIGHBORS: [(isize, isize, isize); 6] = [
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
];

/// Extracts the boundary surface of the thresholded occupancy set.
///
/// Every face between an occupied cell (occupancy >= threshold) and an
/// unoccupied neighbor (or the grid boundary) emits two triangles wound so
/// normals point out of the occupied region. Shared corners are merged, so
/// the mesh is watertight whenever the occupied set is interior.
pub fn voxel_surface(grid: &VoxelGrid, threshold: f64) -> Result<TriMesh, GeometryError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GeometryError::BadThreshold(threshold));
    }
    let [nx, ny, nz] = grid.resolution();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut corner_ids: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    let mut corner = |c: (usize, usize, usize), vertices: &mut Vec<Vec3>| -> usize {
        *corner_ids.entry(c).or_insert_with(|| {
            vertices.push(
                grid.origin()
                    + Vec3::new(
                        c.0 as f64 * grid.cell_size(),
                        c.1 as f64 * grid.cell_size(),
                        c.2 as f64 * grid.cell_size(),
                    ),
            );
            vertices.len() - 1
        })
    };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !grid.occupied(x, y, z, threshold) {
                    continue;
                }
                for (face, (dx, dy, dz)) in NEIGHBORS.iter().enumerate() {
                    let (nx_i, ny_i, nz_i) =
                        (x as isize + dx, y as isize + dy, z as isize + dz);
                    let neighbor_occupied = nx_i >= 0
                        && ny_i >= 0
                        && nz_i >= 0
                        && (nx_i as usize) < nx
                        && (ny_i as usize) < ny
                        && (nz_i as usize) < nz
                        && grid.occupied(nx_i as usize, ny_i as usize, nz_i as usize, threshold);
                    if neighbor_occupied {
                        continue;
                    }
                    // The four corners of this face in outward-CCW order.
                    let q = FACE_CORNERS[face];
                    let c: Vec<usize> = q
                        .iter()
                        .map(|&(ox, oy, oz)| corner((x + ox, y + oy, z + oz), &mut vertices))
                        .collect();
                    triangles.push([c[0], c[1], c[2]]);
                    triangles.push([c[0], c[2], c[3]]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Corner offsets per face of [`NEIGHBORS`], wound counterclockwise when
/// viewed from outside the cell (right-handed, normal along the face axis).
const FACE_CORNERS: [[(usize, usize, usize); 4]; 6] = [
    // +x
    [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    // -x
    [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    // +y
    [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    // -y
    [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    // +z
    [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    // -z
    [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn edge_counts(mesh: &TriMesh) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for t in mesh.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn single_voxel_is_a_watertight_cube() {
        let mut grid = VoxelGrid::new([3, 3, 3], Vec3::zeros(), 1.0).unwrap();
        grid.set(1, 1, 1, 1.0).unwrap();
        let mesh = voxel_surface(&grid, 0.5).unwrap();
        assert_eq!(mesh.triangles().len(), 12);
        assert_eq!(mesh.vertices().len(), 8);
        assert!(edge_counts(&mesh).values().all(|&c| c == 2), "watertight");
    }

    #[test]
    fn two_voxel_block_shares_a_face() {
        let mut grid = VoxelGrid::new([4, 3, 3], Vec3::zeros(), 1.0).unwrap();
        grid.set(1, 1, 1, 1.0).unwrap();
        grid.set(2, 1, 1, 1.0).unwrap();
        let mesh = voxel_surface(&grid, 0.5).unwrap();
        // 10 exposed faces, 2 triangles each.
        assert_eq!(mesh.triangles().len(), 20);
        assert!(edge_counts(&mesh).values().all(|&c| c == 2), "watertight");
    }

    #[test]
    fn empty_grid_gives_empty_mesh() {
        let grid = VoxelGrid::new([4, 4, 4], Vec3::zeros(), 0.5).unwrap();
        let mesh = voxel_surface(&grid, 0.5).unwrap();
        assert!(mesh.is_empty());
    }

    #[test]
    fn surface_normals_point_outward() {
        let mut grid = VoxelGrid::new([3, 3, 3], Vec3::new(-1.5, -1.5, -1.5), 1.0).unwrap();
        grid.set(1, 1, 1, 1.0).unwrap();
        let mesh = voxel_surface(&grid, 0.5).unwrap();
        // Cube centered at origin: every face normal must point away from it.
        for i in 0..mesh.triangles().len() {
            let [a, b, c] = mesh.triangle_vertices(i);
            let normal = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0;
            assert!(normal.dot(&centroid) > 0.0, "inward-facing triangle {i}");
        }
    }

    #[test]
    fn rejects_bad_threshold_and_resolution() {
        let grid = VoxelGrid::new([2, 2, 2], Vec3::zeros(), 1.0).unwrap();
        assert!(voxel_surface(&grid, 0.0).is_err());
        assert!(voxel_surface(&grid, 1.0).is_err());
        assert!(VoxelGrid::new([1, 2, 2], Vec3::zeros(), 1.0).is_err());
    }

    #[test]
    fn voxel_io_roundtrip() {
        let mut grid = VoxelGrid::new([3, 4, 5], Vec3::new(-0.5, 0.25, 1.0), 0.125).unwrap();
        grid.set(0, 0, 0, 1.0).unwrap();
        grid.set(2, 3, 4, 1.0).unwrap();
        grid.set(1, 2, 3, 118.0 / 255.0).unwrap();
        let mut buf = Vec::new();
        grid.write(&mut buf).unwrap();
        let back = VoxelGrid::read(std::io::Cursor::new(buf), "mem").unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn connected_components_counts_islands() {
        let mut grid = VoxelGrid::new([4, 4, 4], Vec3::zeros(), 1.0).unwrap();
        grid.set(0, 0, 0, 1.0).unwrap();
        grid.set(1, 0, 0, 1.0).unwrap();
        grid.set(3, 3, 3, 1.0).unwrap();
        assert_eq!(grid.connected_components(0.5), 2);
    }
}
