//! Optical-flow field series and their binary container.
//!
//! Layout: 8-byte magic `SLPFLOW\0`, then little-endian `u32` version,
//! `u32` width, `u32` height, `f64` frame rate and `u64` frame count. Each
//! frame follows as the horizontal plane then the vertical plane, each
//! `width·height` `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::signal::io::ByteReader;
use crate::{Error, Result};

pub const FLOW_MAGIC: &[u8; 8] = b"SLPFLOW\0";
pub const FLOW_VERSION: u32 = 1;
const HEADER_LEN: u64 = 8 + 4 + 4 + 4 + 8 + 8;

/// Frame rate of the flow fields the motion features are defined on.
pub const FLOW_FS: f64 = 4.0;

/// Grid geometry and frame rate shared by every frame of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowGeometry {
    pub width: usize,
    pub height: usize,
    pub fs: f64,
    pub n_frames: usize,
}

impl FlowGeometry {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn duration(&self) -> f64 {
        self.n_frames as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSignal(format!(
                "empty flow grid {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "flow frame rate {} must be positive",
                self.fs
            )));
        }
        Ok(())
    }
}

/// Sequential access to flow frames. Frames are requested in increasing
/// order, so implementations may stream from disk or synthesize on the fly.
pub trait FlowSource {
    fn geometry(&self) -> FlowGeometry;

    /// Writes frame `i` into `u` and `v` (each `width·height`, row-major).
    fn read_frame(&mut self, i: usize, u: &mut [f32], v: &mut [f32]) -> Result<()>;
}

/// A flow series held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFieldSeries {
    pub width: usize,
    pub height: usize,
    pub fs: f64,
    /// Per frame, the horizontal then the vertical plane.
    pub frames: Vec<(Vec<f32>, Vec<f32>)>,
}

impl FlowFieldSeries {
    pub fn new(
        width: usize,
        height: usize,
        fs: f64,
        frames: Vec<(Vec<f32>, Vec<f32>)>,
    ) -> Result<Self> {
        let series = Self {
            width,
            height,
            fs,
            frames,
        };
        series.geometry().validate()?;
        for (i, (u, v)) in series.frames.iter().enumerate() {
            if u.len() != width * height || v.len() != width * height {
                return Err(Error::Shape(format!(
                    "flow frame {i} does not match the {width}x{height} grid"
                )));
            }
            if u.iter().chain(v).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("flow frame {i}")));
            }
        }
        Ok(series)
    }

    /// Reads every frame of `source` into memory.
    pub fn collect(source: &mut dyn FlowSource) -> Result<Self> {
        let g = source.geometry();
        let mut frames = Vec::with_capacity(g.n_frames);
        for i in 0..g.n_frames {
            let mut u = vec![0.0; g.pixels()];
            let mut v = vec![0.0; g.pixels()];
            source.read_frame(i, &mut u, &mut v)?;
            frames.push((u, v));
        }
        Self::new(g.width, g.height, g.fs, frames)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, &self.geometry());
        for (u, v) in &self.frames {
            for x in u.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let g = read_header(&mut r)?;
        let mut frames = Vec::with_capacity(g.n_frames.min(bytes.len()));
        for _ in 0..g.n_frames {
            let mut plane = || {
                (0..g.pixels())
                    .map(|_| r.f32())
                    .collect::<Result<Vec<f32>>>()
            };
            let u = plane()?;
            let v = plane()?;
            frames.push((u, v));
        }
        r.finish()?;
        Self::new(g.width, g.height, g.fs, frames)
    }
}

impl FlowSource for FlowFieldSeries {
    fn geometry(&self) -> FlowGeometry {
        FlowGeometry {
            width: self.width,
            height: self.height,
            fs: self.fs,
            n_frames: self.frames.len(),
        }
    }

    fn read_frame(&mut self, i: usize, u: &mut [f32], v: &mut [f32]) -> Result<()> {
        let (fu, fv) = self
            .frames
            .get(i)
            .ok_or_else(|| Error::Shape(format!("flow frame {i} of {}", self.frames.len())))?;
        u.copy_from_slice(fu);
        v.copy_from_slice(fv);
        Ok(())
    }
}

fn write_header(out: &mut Vec<u8>, g: &FlowGeometry) {
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&FLOW_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&g.fs.to_le_bytes());
    out.extend_from_slice(&(g.n_frames as u64).to_le_bytes());
}

fn read_header(r: &mut ByteReader) -> Result<FlowGeometry> {
    if r.take(8)? != FLOW_MAGIC {
        return Err(Error::Format("not a flow file".into()));
    }
    let version = r.u32()?;
    if version != FLOW_VERSION {
        return Err(Error::Format(format!("unsupported flow version {version}")));
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let fs = r.f64()?;
    let n_frames = r.u64()? as usize;
    let g = FlowGeometry {
        width,
        height,
        fs,
        n_frames,
    };
    g.validate()?;
    Ok(g)
}

/// Flow file read one frame at a time.
pub struct FlowFile {
    reader: BufReader<File>,
    geometry: FlowGeometry,
    next: usize,
    buf: Vec<u8>,
}

impl FlowFile {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|_| {
            Error::Format(format!("{} is too short for a flow header", path.display()))
        })?;
        let geometry = read_header(&mut ByteReader::new(&header))?;
        let expected = HEADER_LEN + (geometry.n_frames * geometry.pixels() * 8) as u64;
        let actual = file.metadata()?.len();
        if actual != expected {
            return Err(Error::Format(format!(
                "{}: {actual} bytes, expected {expected} for {} frames",
                path.display(),
                geometry.n_frames
            )));
        }
        Ok(Self {
            reader: BufReader::with_capacity(1 << 20, file),
            geometry,
            next: 0,
            buf: Vec::new(),
        })
    }
}

impl FlowSource for FlowFile {
    fn geometry(&self) -> FlowGeometry {
        self.geometry
    }

    fn read_frame(&mut self, i: usize, u: &mut [f32], v: &mut [f32]) -> Result<()> {
        let g = self.geometry;
        if i >= g.n_frames {
            return Err(Error::Shape(format!("flow frame {i} of {}", g.n_frames)));
        }
        if i != self.next {
            self.reader
                .seek(SeekFrom::Start(HEADER_LEN + (i * g.pixels() * 8) as u64))?;
        }
        self.buf.resize(g.pixels() * 8, 0);
        self.reader.read_exact(&mut self.buf)?;
        let (bu, bv) = self.buf.split_at(g.pixels() * 4);
        for (dst, src) in u
            .iter_mut()
            .zip(bu.chunks_exact(4))
            .chain(v.iter_mut().zip(bv.chunks_exact(4)))
        {
            *dst = f32::from_le_bytes(src.try_into().unwrap());
            if !dst.is_finite() {
                return Err(Error::NonFinite(format!("flow frame {i}")));
            }
        }
        self.next = i + 1;
        Ok(())
    }
}

/// Streams every frame of `source` into a flow file.
pub fn write_flow(path: &Path, source: &mut dyn FlowSource) -> Result<()> {
    let g = source.geometry();
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    let mut header = Vec::new();
    write_header(&mut header, &g);
    w.write_all(&header)?;
    let mut u = vec![0.0; g.pixels()];
    let mut v = vec![0.0; g.pixels()];
    let mut bytes = Vec::with_capacity(g.pixels() * 8);
    for i in 0..g.n_frames {
        source.read_frame(i, &mut u, &mut v)?;
        bytes.clear();
        for x in u.iter().chain(&v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}
