//! Per-epoch motion features from optical flow over bed regions.
//!
//! For a region R the flow magnitude gives two signals at the flow frame
//! rate: the maximum `v(t)` and the mean `s(t)` over R. Four feature
//! families are built from them:
//!
//! * `f1`, `f2`: sum of `v`, `s` over the window `(t − Δ, t]`;
//! * `f3`, `f4`: seconds since `v`, `s` last exceeded a threshold `δ`, or
//!   since the start of the recording if it never has.
//!
//! Each epoch takes the value at its last frame, shifted by `T` seconds and
//! clamped to the recording. Rows of a [`MotionGrid`] are ordered by region,
//! then family, then parameter (`Δ` or `δ`), then shift, and are named
//! `<region>:<family>:<parameter>:<shift>`, e.g. `H:f1:30:-90`. The default
//! selection gives 3 regions × 10 base features × 3 shifts = 90 rows.

mod flow;
mod region;
#[cfg(test)]
mod tests;

use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::config::ConfigFile;
use crate::{Error, Result, EPOCH_SECONDS};

pub use flow::{
    write_flow, FlowFieldSeries, FlowFile, FlowGeometry, FlowSource, FLOW_FS, FLOW_MAGIC,
    FLOW_VERSION,
};
pub use region::{
    homography_warp, warp_mask, Homography, MaskSet, RegionMask, MASK_EXTENSION, MASK_MAGIC,
    MASK_VERSION, REGION_ORDER,
};

/// Maximum and mean flow magnitude over one region, per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSignals {
    pub v: Vec<f64>,
    pub s: Vec<f64>,
}

/// Region signals for several masks in one pass over the frames.
pub fn region_signals_many(
    source: &mut dyn FlowSource,
    masks: &[&RegionMask],
) -> Result<Vec<RegionSignals>> {
    let g = source.geometry();
    g.validate()?;
    for m in masks {
        if m.is_empty() {
            return Err(Error::Config(format!("region {} has no pixels", m.name)));
        }
        if m.width != g.width || m.height != g.height {
            return Err(Error::Shape(format!(
                "region {} is on a {}x{} grid, flow is {}x{}",
                m.name, m.width, m.height, g.width, g.height
            )));
        }
    }
    let mut out: Vec<RegionSignals> = masks
        .iter()
        .map(|_| RegionSignals {
            v: Vec::with_capacity(g.n_frames),
            s: Vec::with_capacity(g.n_frames),
        })
        .collect();
    let mut u = vec![0.0f32; g.pixels()];
    let mut w = vec![0.0f32; g.pixels()];
    let mut mag = vec![0.0f64; g.pixels()];
    for i in 0..g.n_frames {
        source.read_frame(i, &mut u, &mut w)?;
        for ((m, &a), &b) in mag.iter_mut().zip(&u).zip(&w) {
            let (a, b) = (a as f64, b as f64);
            *m = (a * a + b * b).sqrt();
        }
        for (sig, mask) in out.iter_mut().zip(masks) {
            let mut max = 0.0f64;
            let mut sum = 0.0f64;
            for &p in mask.pixels() {
                let m = mag[p];
                if !m.is_finite() {
                    return Err(Error::NonFinite(format!("flow frame {i}")));
                }
                max = max.max(m);
                sum += m;
            }
            // The mean of values bounded by `max` can round above it.
            sig.v.push(max);
            sig.s.push((sum / mask.len() as f64).min(max));
        }
    }
    Ok(out)
}

pub fn region_signals(source: &mut dyn FlowSource, mask: &RegionMask) -> Result<RegionSignals> {
    Ok(region_signals_many(source, &[mask])?.remove(0))
}

fn window_samples(delta_s: f64, fs: f64) -> Result<usize> {
    if !(delta_s > 0.0 && fs > 0.0) {
        return Err(Error::Config(format!("window {delta_s} s at {fs} Hz")));
    }
    Ok(((delta_s * fs).round() as usize).max(1))
}

/// Sum of `sig` over the half-open window `(t − Δ, t]`, i.e. the current
/// sample and the `Δ·fs − 1` before it.
pub fn windowed_activity(sig: &[f64], fs: f64, delta_s: f64) -> Result<Vec<f64>> {
    let k = window_samples(delta_s, fs)?;
    let mut prefix = Vec::with_capacity(sig.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in sig {
        acc += x;
        prefix.push(acc);
    }
    Ok((0..sig.len())
        .map(|i| prefix[i + 1] - prefix[(i + 1).saturating_sub(k)])
        .collect())
}

/// Seconds since `sig` last exceeded `delta` (zero at an exceedance), or
/// the elapsed time since the first sample if it never has.
pub fn time_since_threshold(sig: &[f64], fs: f64, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && fs > 0.0) {
        return Err(Error::Config(format!("threshold {delta} at {fs} Hz")));
    }
    let mut last = 0usize;
    Ok(sig
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > delta {
                last = i;
            }
            (i - last) as f64 / fs
        })
        .collect())
}

/// One of the four feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Windowed sum of the regional maximum.
    F1,
    /// Windowed sum of the regional mean.
    F2,
    /// Time since the regional maximum exceeded a threshold.
    F3,
    /// Time since the regional mean exceeded a threshold.
    F4,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::F1, Family::F2, Family::F3, Family::F4];

    pub fn name(self) -> &'static str {
        match self {
            Family::F1 => "f1",
            Family::F2 => "f2",
            Family::F3 => "f3",
            Family::F4 => "f4",
        }
    }

    fn is_windowed(self) -> bool {
        matches!(self, Family::F1 | Family::F2)
    }

    fn uses_max(self) -> bool {
        matches!(self, Family::F1 | Family::F3)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown feature family `{s}`")))
    }
}

/// Which features to compute. Each region entry is a list of mask names
/// whose union forms the region.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelection {
    pub families: Vec<Family>,
    pub regions: Vec<Vec<String>>,
    pub windows_s: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub shifts_s: Vec<f64>,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            regions: REGION_ORDER.iter().map(|r| vec![r.to_string()]).collect(),
            windows_s: vec![30.0, 300.0],
            thresholds: vec![0.01, 0.1, 1.0],
            shifts_s: vec![-90.0, 0.0, 90.0],
        }
    }
}

/// One row of a feature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub region: usize,
    pub family: Family,
    /// `Δ` in seconds for `f1`/`f2`, `δ` for `f3`/`f4`.
    pub param: f64,
    pub shift_s: f64,
}

const SELECTION_KEYS: [&str; 5] = ["families", "regions", "windows", "thresholds", "shifts"];

fn parse_list<V: FromStr>(text: &str, what: &str) -> Result<Vec<V>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry `{}`", t.trim())))
        })
        .collect()
}

fn join<V: ToString>(items: &[V]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl FeatureSelection {
    /// Feature rows in grid order.
    pub fn rows(&self) -> Vec<FeatureRow> {
        let mut rows = Vec::new();
        for region in 0..self.regions.len() {
            for &family in &self.families {
                let params = if family.is_windowed() {
                    &self.windows_s
                } else {
                    &self.thresholds
                };
                for &param in params {
                    for &shift_s in &self.shifts_s {
                        rows.push(FeatureRow {
                            region,
                            family,
                            param,
                            shift_s,
                        });
                    }
                }
            }
        }
        rows
    }

    pub fn n_rows(&self) -> usize {
        let per_region: usize = self
            .families
            .iter()
            .map(|f| {
                if f.is_windowed() {
                    self.windows_s.len()
                } else {
                    self.thresholds.len()
                }
            })
            .sum();
        self.regions.len() * per_region * self.shifts_s.len()
    }

    pub fn region_name(&self, region: usize) -> String {
        self.regions[region].join("+")
    }

    pub fn row_name(&self, row: &FeatureRow) -> String {
        format!(
            "{}:{}:{}:{}",
            self.region_name(row.region),
            row.family.name(),
            row.param,
            row.shift_s
        )
    }

    pub fn row_names(&self) -> Vec<String> {
        self.rows().iter().map(|r| self.row_name(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.iter().any(|r| r.is_empty()) {
            return Err(Error::Config("empty region union".into()));
        }
        if self
            .windows_s
            .iter()
            .chain(&self.thresholds)
            .any(|&p| !(p.is_finite() && p > 0.0))
        {
            return Err(Error::Config(
                "windows and thresholds must be positive".into(),
            ));
        }
        if self.shifts_s.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("shifts must be finite".into()));
        }
        Ok(())
    }

    /// Reads a selection. Lists are comma separated; a region is one or
    /// more mask names joined by `+`. Missing keys keep the defaults.
    pub fn from_config(cfg: &ConfigFile, section: &str) -> Result<Self> {
        cfg.check_known(section, &SELECTION_KEYS)?;
        let mut sel = Self::default();
        if let Some(t) = cfg.raw(section, "families") {
            sel.families = parse_list(t, "family")?;
        }
        if let Some(t) = cfg.raw(section, "regions") {
            sel.regions = parse_list::<String>(t, "region")?
                .iter()
                .map(|r| r.split('+').map(|p| p.trim().to_string()).collect())
                .collect();
        }
        if let Some(t) = cfg.raw(section, "windows") {
            sel.windows_s = parse_list(t, "window")?;
        }
        if let Some(t) = cfg.raw(section, "thresholds") {
            sel.thresholds = parse_list(t, "threshold")?;
        }
        if let Some(t) = cfg.raw(section, "shifts") {
            sel.shifts_s = parse_list(t, "shift")?;
        }
        sel.validate()?;
        Ok(sel)
    }

    pub fn write_config(&self, cfg: &mut ConfigFile, section: &str) {
        let families: Vec<&str> = self.families.iter().map(|f| f.name()).collect();
        let regions: Vec<String> = (0..self.regions.len())
            .map(|r| self.region_name(r))
            .collect();
        cfg.set(section, "families", families.join(","));
        cfg.set(section, "regions", regions.join(","));
        cfg.set(section, "windows", join(&self.windows_s));
        cfg.set(section, "thresholds", join(&self.thresholds));
        cfg.set(section, "shifts", join(&self.shifts_s));
    }
}

/// Motion features, one row per feature and one column per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionGrid {
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

impl MotionGrid {
    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_epochs(&self) -> usize {
        self.values.ncols()
    }

    /// Rows with the given names, in that order.
    pub fn select(&self, names: &[String]) -> Result<MotionGrid> {
        let mut values = Array2::zeros((names.len(), self.n_epochs()));
        for (i, name) in names.iter().enumerate() {
            let row = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("no motion feature named {name}")))?;
            values.row_mut(i).assign(&self.values.row(row));
        }
        Ok(MotionGrid {
            names: names.to_vec(),
            values,
        })
    }

    /// CSV with an `epoch` column followed by one column per feature.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (e, col) in self.values.columns().into_iter().enumerate() {
            out.push_str(&e.to_string());
            for v in col {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<MotionGrid> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty motion feature file".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("epoch") {
            return Err(Error::Format(
                "motion feature header must start with `epoch`".into(),
            ));
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        let mut data = Vec::new();
        let mut n_epochs = 0;
        for (e, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let idx: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Format(format!("line {}: bad epoch index", e + 2)))?;
            if idx != e {
                return Err(Error::Format(format!(
                    "line {}: epoch {idx} out of order",
                    e + 2
                )));
            }
            let row: Vec<f64> = fields
                .map(|f| {
                    f.parse()
                        .map_err(|_| Error::Format(format!("line {}: bad value `{f}`", e + 2)))
                })
                .collect::<Result<_>>()?;
            if row.len() != names.len() {
                return Err(Error::Format(format!(
                    "line {}: {} values for {} columns",
                    e + 2,
                    row.len(),
                    names.len()
                )));
            }
            data.extend(row);
            n_epochs += 1;
        }
        let values = Array2::from_shape_vec((n_epochs, names.len()), data)
            .expect("row lengths checked")
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        Ok(MotionGrid { names, values })
    }
}

/// Frame index holding the value for epoch `e` shifted by `shift_s`: the
/// last frame at or before the shifted epoch end, clamped to the recording.
pub fn epoch_frame(e: usize, shift_s: f64, fs: f64, n_frames: usize) -> usize {
    let t = (e + 1) as f64 * EPOCH_SECONDS + shift_s;
    let idx = (t * fs).round() as i64 - 1;
    idx.clamp(0, n_frames as i64 - 1) as usize
}

/// Builds the feature grid for `n_epochs` epochs from a flow series. The
/// flow may fall short of the epoch span by less than one epoch; missing
/// frames take the edge value.
pub fn build_feature_grid(
    source: &mut dyn FlowSource,
    masks: &MaskSet,
    n_epochs: usize,
    sel: &FeatureSelection,
) -> Result<MotionGrid> {
    sel.validate()?;
    let g = source.geometry();
    g.validate()?;
    if g.n_frames == 0 {
        return Err(Error::InvalidSignal("flow series has no frames".into()));
    }
    if g.duration() + EPOCH_SECONDS <= n_epochs as f64 * EPOCH_SECONDS {
        return Err(Error::Shape(format!(
            "{:.1} s of flow for {n_epochs} epochs",
            g.duration()
        )));
    }
    let regions = sel
        .regions
        .iter()
        .map(|parts| {
            let members = parts
                .iter()
                .map(|p| masks.get(p))
                .collect::<Result<Vec<_>>>()?;
            if members.len() == 1 {
                Ok(members[0].clone())
            } else {
                RegionMask::union(&members)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let signals = if regions.is_empty() {
        Vec::new()
    } else {
        region_signals_many(source, &regions.iter().collect::<Vec<_>>())?
    };

    let rows = sel.rows();
    let computed: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|row| {
            let sig = &signals[row.region];
            let base = if row.family.uses_max() {
                &sig.v
            } else {
                &sig.s
            };
            let series = if row.family.is_windowed() {
                windowed_activity(base, g.fs, row.param)?
            } else {
                time_since_threshold(base, g.fs, row.param)?
            };
            Ok((0..n_epochs)
                .map(|e| series[epoch_frame(e, row.shift_s, g.fs, g.n_frames)])
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((rows.len(), n_epochs));
    for (i, r) in computed.into_iter().enumerate() {
        values.row_mut(i).assign(&ndarray::Array1::from(r));
    }
    Ok(MotionGrid {
        names: sel.row_names(),
        values,
    })
}
