//! Waveform files.
//!
//! Text form: a header line `#fs=<Hz> label=<name> t0=<s>` followed by one
//! decimal sample per line.
//!
//! Binary form: a 16-byte header (8-byte magic `SLPSIGNL`, little-endian
//! `u32` version, `u32` reserved), then `f64` fs, `f64` t0, `u32` label
//! length, the UTF-8 label, `u64` sample count and the samples as
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use super::SampledSignal;
use crate::{Error, Result};

pub const SIGNAL_MAGIC: &[u8; 8] = b"SLPSIGNL";
pub const SIGNAL_VERSION: u32 = 1;

/// Which on-disk representation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    Text,
    Binary,
}

pub fn to_text(sig: &SampledSignal) -> String {
    let mut out = format!("#fs={} label={} t0={}\n", sig.fs, sig.label, sig.t0);
    for v in &sig.samples {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> Result<SampledSignal> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| Error::Format("signal text must start with a `#fs=` header".into()))?;
    let (mut fs, mut label, mut t0) = (None, String::new(), 0.0);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header field `{field}`")))?;
        match key {
            "fs" => fs = Some(parse_f64(value)?),
            "label" => label = value.to_string(),
            "t0" => t0 = parse_f64(value)?,
            _ => return Err(Error::Format(format!("unknown header key `{key}`"))),
        }
    }
    let fs = fs.ok_or_else(|| Error::Format("header lacks fs".into()))?;
    let samples = lines
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(parse_f64)
        .collect::<Result<Vec<_>>>()?;
    SampledSignal::with_start(samples, fs, label, t0)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("not a number: `{s}`")))
}

pub fn to_bytes(sig: &SampledSignal) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + sig.label.len() + 8 * sig.len());
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&sig.fs.to_le_bytes());
    out.extend_from_slice(&sig.t0.to_le_bytes());
    out.extend_from_slice(&(sig.label.len() as u32).to_le_bytes());
    out.extend_from_slice(sig.label.as_bytes());
    out.extend_from_slice(&(sig.len() as u64).to_le_bytes());
    for v in &sig.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<SampledSignal> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != SIGNAL_MAGIC {
        return Err(Error::Format("not a binary signal file".into()));
    }
    let version = r.u32()?;
    if version != SIGNAL_VERSION {
        return Err(Error::Format(format!(
            "unsupported signal version {version}"
        )));
    }
    r.u32()?;
    let fs = r.f64()?;
    let t0 = r.f64()?;
    let label_len = r.u32()? as usize;
    let label = String::from_utf8(r.take(label_len)?.to_vec())
        .map_err(|_| Error::Format("label is not UTF-8".into()))?;
    let n = r.u64()? as usize;
    let samples = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    SampledSignal::with_start(samples, fs, label, t0)
}

/// Reads either representation, choosing by the leading magic bytes.
pub fn read_signal(path: &Path) -> Result<SampledSignal> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(SIGNAL_MAGIC) {
        from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{} is neither text nor binary", path.display())))?;
        from_text(&text)
    }
}

pub fn write_signal(path: &Path, sig: &SampledSignal, format: SignalFormat) -> Result<()> {
    match format {
        SignalFormat::Text => fs::write(path, to_text(sig))?,
        SignalFormat::Binary => fs::write(path, to_bytes(sig))?,
    }
    Ok(())
}

/// Little-endian cursor over a byte slice, shared by the binary formats.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
