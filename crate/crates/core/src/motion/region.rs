//! Bed regions over the flow grid and projective warps between viewpoints.
//!
//! Mask files are run-length encoded: 8-byte magic `SLPMASK\0`, then
//! little-endian `u32` version, `u32` name length, the UTF-8 name, `u32`
//! width, `u32` height, `u32` run count and the runs as `u32`. Runs
//! alternate between outside and inside pixels in row-major order, starting
//! with an outside run (possibly empty).

use std::fs;
use std::path::Path;

use crate::signal::io::ByteReader;
use crate::{Error, Result};

pub const MASK_MAGIC: &[u8; 8] = b"SLPMASK\0";
pub const MASK_VERSION: u32 = 1;
pub const MASK_EXTENSION: &str = "mask";

/// Canonical region order: head, body, outer bed.
pub const REGION_ORDER: [&str; 3] = ["H", "B", "O"];

/// A named set of pixels on a `width × height` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Sorted, distinct row-major pixel indices.
    pixels: Vec<usize>,
}

impl RegionMask {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        mut pixels: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.is_empty() {
            return Err(Error::Config(format!("region {name} has no pixels")));
        }
        if let Some(&p) = pixels.last().filter(|&&p| p >= width * height) {
            return Err(Error::Shape(format!(
                "region {name}: pixel {p} outside the {width}x{height} grid"
            )));
        }
        Ok(Self {
            name,
            width,
            height,
            pixels,
        })
    }

    /// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
    pub fn rect(
        name: impl Into<String>,
        width: usize,
        height: usize,
        x: (usize, usize),
        y: (usize, usize),
    ) -> Result<Self> {
        let mut pixels = Vec::new();
        for yy in y.0..y.1.min(height) {
            for xx in x.0..x.1.min(width) {
                pixels.push(yy * width + xx);
            }
        }
        Self::new(name, width, height, pixels)
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width
            && y < self.height
            && self.pixels.binary_search(&(y * self.width + x)).is_ok()
    }

    pub fn overlaps(&self, other: &RegionMask) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.pixels.len() && j < other.pixels.len() {
            match self.pixels[i].cmp(&other.pixels[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Union of several masks on the same grid, named `A+B+…`.
    pub fn union(parts: &[&RegionMask]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("union of no regions".into()))?;
        if parts
            .iter()
            .any(|m| m.width != first.width || m.height != first.height)
        {
            return Err(Error::Shape("region union over different grids".into()));
        }
        let name = parts
            .iter()
            .map(|m| m.name.as_str())
            .collect::<Vec<_>>()
            .join("+");
        let pixels = parts
            .iter()
            .flat_map(|m| m.pixels.iter().copied())
            .collect();
        Self::new(name, first.width, first.height, pixels)
    }

    /// Row-major run lengths, alternating outside/inside, starting outside.
    pub fn runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut pos = 0usize;
        let mut i = 0;
        while i < self.pixels.len() {
            let start = self.pixels[i];
            let mut end = start + 1;
            i += 1;
            while i < self.pixels.len() && self.pixels[i] == end {
                end += 1;
                i += 1;
            }
            runs.push((start - pos) as u32);
            runs.push((end - start) as u32);
            pos = end;
        }
        runs
    }

    pub fn from_runs(
        name: impl Into<String>,
        width: usize,
        height: usize,
        runs: &[u32],
    ) -> Result<Self> {
        let mut pixels = Vec::new();
        let mut pos = 0usize;
        for (k, &r) in runs.iter().enumerate() {
            let end = pos + r as usize;
            if end > width * height {
                return Err(Error::Format("mask runs exceed the grid".into()));
            }
            if k % 2 == 1 {
                pixels.extend(pos..end);
            }
            pos = end;
        }
        Self::new(name, width, height, pixels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&MASK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.name.as_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        let runs = self.runs();
        out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
        for r in runs {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != MASK_MAGIC {
            return Err(Error::Format("not a mask file".into()));
        }
        let version = r.u32()?;
        if version != MASK_VERSION {
            return Err(Error::Format(format!("unsupported mask version {version}")));
        }
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("mask name is not UTF-8".into()))?
            .to_string();
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let n_runs = r.u32()? as usize;
        let runs = (0..n_runs).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::from_runs(name, width, height, &runs)
    }
}

/// Disjoint regions over one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub regions: Vec<RegionMask>,
}

impl MaskSet {
    pub fn new(regions: Vec<RegionMask>) -> Result<Self> {
        let first = regions
            .first()
            .ok_or_else(|| Error::Config("no regions".into()))?;
        for (i, a) in regions.iter().enumerate() {
            if a.width != first.width || a.height != first.height {
                return Err(Error::Shape(format!(
                    "region {} is not on the {}x{} grid",
                    a.name, first.width, first.height
                )));
            }
            for b in &regions[i + 1..] {
                if a.name == b.name {
                    return Err(Error::Config(format!("region {} given twice", a.name)));
                }
                if a.overlaps(b) {
                    return Err(Error::Config(format!(
                        "regions {} and {} overlap",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(Self { regions })
    }

    pub fn width(&self) -> usize {
        self.regions[0].width
    }

    pub fn height(&self) -> usize {
        self.regions[0].height
    }

    pub fn get(&self, name: &str) -> Result<&RegionMask> {
        self.regions
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("no region named {name}")))
    }

    /// Writes one `<name>.mask` file per region.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for m in &self.regions {
            fs::write(
                dir.join(format!("{}.{MASK_EXTENSION}", m.name)),
                m.to_bytes(),
            )?;
        }
        Ok(())
    }

    /// Loads every `.mask` file in `dir`, in canonical order (H, B, O, then
    /// any other names alphabetically).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut regions = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(MASK_EXTENSION) {
                regions.push(RegionMask::from_bytes(&fs::read(&path)?)?);
            }
        }
        let rank = |n: &str| {
            REGION_ORDER
                .iter()
                .position(|&r| r == n)
                .unwrap_or(REGION_ORDER.len())
        };
        regions.sort_by(|a, b| rank(&a.name).cmp(&rank(&b.name)).then(a.name.cmp(&b.name)));
        Self::new(regions)
    }
}

/// A 3×3 projective transform acting on `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub const IDENTITY: Homography =
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    pub fn scale(s: f64) -> Self {
        Homography([[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn compose(&self, then: &Homography) -> Homography {
        let (a, b) = (&then.0, &self.0);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Homography(out)
    }

    fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Homography> {
        let d = self.det();
        if !(d.is_finite() && d.abs() > 1e-12) {
            return Err(Error::Config(format!("homography is singular (det {d})")));
        }
        let m = &self.0;
        let c = |i0: usize, i1: usize, j0: usize, j1: usize| {
            m[i0][j0] * m[i1][j1] - m[i0][j1] * m[i1][j0]
        };
        let adj = [
            [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
            [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
            [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
        ];
        Ok(Homography(adj.map(|row| row.map(|v| v / d))))
    }

    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let m = &self.0;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if !(w.abs() >= 1e-12) {
            return Err(Error::Undefined(format!(
                "point ({x}, {y}) maps to infinity"
            )));
        }
        Ok((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }
}

/// Projective transform of a point set.
pub fn homography_warp(points: &[(f64, f64)], h: &Homography) -> Result<Vec<(f64, f64)>> {
    points.iter().map(|&(x, y)| h.apply(x, y)).collect()
}

/// Maps a mask into another viewpoint: a target pixel belongs to the warped
/// region when its centre, pulled back through `h`, lands in a member pixel.
pub fn warp_mask(
    mask: &RegionMask,
    h: &Homography,
    width: usize,
    height: usize,
) -> Result<RegionMask> {
    let inv = h.inverse()?;
    let mut pixels = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let Ok((sx, sy)) = inv.apply(x as f64 + 0.5, y as f64 + 0.5) else {
                continue;
            };
            let (fx, fy) = (sx.floor(), sy.floor());
            if fx >= 0.0 && fy >= 0.0 && mask.contains(fx as usize, fy as usize) {
                pixels.push(y * width + x);
            }
        }
    }
    RegionMask::new(mask.name.clone(), width, height, pixels)
}
