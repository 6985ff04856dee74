//! Depth and binary mask rasters with their on-disk formats.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{parse_err, GeometryError};

/// Per-pixel camera depth in meters; `+inf` marks empty pixels.
///
/// Stored on disk as one text header line `DEPTH <width> <height>\n`
/// followed by row-major raw 32-bit little-endian floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f64::INFINITY; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        debug_assert!(depth > 0.0, "depths must be positive");
        self.data[y * self.width + x] = depth;
    }

    #[inline]
    pub fn is_empty_at(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_infinite()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    /// Depth at the pixel containing a continuous coordinate, if inside
    /// the image and non-empty.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.get(x, y);
        d.is_finite().then_some(d)
    }

    /// Sub-pixel depth via bilinear interpolation of inverse depth between
    /// the four surrounding pixel centers.
    ///
    /// Inverse depth is linear in screen coordinates across a planar surface,
    /// so this is exact within flat faces. Returns `None` when any of the
    /// four pixels is empty or out of bounds, or when the depths disagree by
    /// more than `rel_tol` relatively (a depth discontinuity).
    pub fn sample_bilinear(&self, u: f64, v: f64, rel_tol: f64) -> Option<f64> {
        let uc = u - 0.5;
        let vc = v - 0.5;
        if uc < 0.0 || vc < 0.0 {
            return None;
        }
        let x0 = uc.floor() as usize;
        let y0 = vc.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        let corners = [
            self.get(x0, y0),
            self.get(x0 + 1, y0),
            self.get(x0, y0 + 1),
            self.get(x0 + 1, y0 + 1),
        ];
        if corners.iter().any(|d| !d.is_finite()) {
            return None;
        }
        let min = corners.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = corners.iter().cloned().fold(0.0f64, f64::max);
        if (max - min) / min > rel_tol {
            return None;
        }
        let fx = uc - x0 as f64;
        let fy = vc - y0 as f64;
        let inv = (1.0 / corners[0]) * (1.0 - fx) * (1.0 - fy)
            + (1.0 / corners[1]) * fx * (1.0 - fy)
            + (1.0 / corners[2]) * (1.0 - fx) * fy
            + (1.0 / corners[3]) * fx * fy;
        Some(1.0 / inv)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "DEPTH {} {}\n", self.width, self.height)?;
        for &d in &self.data {
            w.write_all(&(d as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let file = std::fs::File::create(path)?;
        self.write(BufWriter::new(file))?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, name: &str) -> Result<Self, GeometryError> {
        let header = read_line(&mut r)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "DEPTH" {
            return Err(parse_err(name, format!("bad depth header {header:?}")));
        }
        let width: usize = parts[1]
            .parse()
            .map_err(|e| parse_err(name, format!("width: {e}")))?;
        let height: usize = parts[2]
            .parse()
            .map_err(|e| parse_err(name, format!("height: {e}")))?;
        let mut bytes = vec![0u8; width * height * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| parse_err(name, "truncated depth payload"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), &path.display().to_string())
    }
}

/// Binary image; 1 = foreground. Serialized as binary PGM (P5, maxval 255)
/// with foreground stored as 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MaskImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    /// True if every foreground pixel of `self` is foreground in `other`.
    pub fn subset_of(&self, other: &MaskImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn iou(&self, other: &MaskImage) -> f64 {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a != 0, b != 0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn contains_coord(&self, u: f64, v: f64) -> bool {
        if u < 0.0 || v < 0.0 {
            return false;
        }
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        x < self.width && y < self.height && self.get(x, y)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        w.write_all(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let file = std::fs::File::create(path)?;
        self.write(BufWriter::new(file))?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, name: &str) -> Result<Self, GeometryError> {
        let magic = read_line(&mut r)?;
        if magic.trim() != "P5" {
            return Err(parse_err(name, format!("expected P5, got {magic:?}")));
        }
        let dims = read_line(&mut r)?;
        let parts: Vec<&str> = dims.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_err(name, "bad PGM dimension line"));
        }
        let width: usize = parts[0]
            .parse()
            .map_err(|e| parse_err(name, format!("width: {e}")))?;
        let height: usize = parts[1]
            .parse()
            .map_err(|e| parse_err(name, format!("height: {e}")))?;
        let maxval = read_line(&mut r)?;
        if maxval.trim() != "255" {
            return Err(parse_err(name, "expected maxval 255"));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes)
            .map_err(|_| parse_err(name, "truncated PGM payload"))?;
        let data = bytes.iter().map(|&b| (b >= 128) as u8).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), &path.display().to_string())
    }
}

fn read_line<R: Read>(r: &mut R) -> Result<String, std::io::Error> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 256 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "header line too long",
            ));
        }
    }
    String::from_utf8(line)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "non-utf8 header"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_roundtrip() {
        let mut d = DepthMap::empty(3, 2);
        d.set(0, 0, 1.5);
        d.set(2, 1, 0.25);
        let mut buf = Vec::new();
        d.write(&mut buf).unwrap();
        let back = DepthMap::read(std::io::Cursor::new(buf), "mem").unwrap();
        assert_eq!(back, d);
        assert!(back.is_empty_at(1, 0));
    }

    #[test]
    fn mask_roundtrip_and_subset() {
        let mut a = MaskImage::zeros(4, 4);
        a.set(1, 1, true);
        a.set(2, 3, true);
        let mut b = a.clone();
        b.set(0, 0, true);
        assert!(a.subset_of(&b));
        assert!(!b.subset_of(&a));

        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        let back = MaskImage::read(std::io::Cursor::new(buf), "mem").unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn truncated_depth_is_an_error() {
        let mut buf = Vec::new();
        DepthMap::empty(4, 4).write(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = DepthMap::read(std::io::Cursor::new(buf), "trunc").unwrap_err();
        assert!(err.to_string().contains("trunc"));
    }

    #[test]
    fn iou_of_disjoint_masks_is_zero() {
        let mut a = MaskImage::zeros(2, 2);
        a.set(0, 0, true);
        let mut b = MaskImage::zeros(2, 2);
        b.set(1, 1, true);
        assert_eq!(a.iou(&b), 0.0);
        assert_eq!(a.iou(&a), 1.0);
    }
}
