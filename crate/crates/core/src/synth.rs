//! Stage-conditioned synthetic nights.
//!
//! A night is a five-class hypnogram drawn from a cyclic stage grammar,
//! plus the raw signals a sleep lab would record for it: ECG at 125 Hz,
//! thoracic effort at 25 Hz, per-second heart and breathing rates, and a
//! 4 Hz optical-flow series over three stacked 16×16 bed regions (head,
//! body, outer). Heart rate, heart-rate variability, breathing rate,
//! breathing irregularity and movement-burst rate all depend on the stage.
//! Everything is a deterministic function of the configuration and seed.

use std::f64::consts::TAU;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ConfigFile;
use crate::metrics::{Hypnogram, Strategy};
use crate::motion::{FlowGeometry, FlowSource, MaskSet, RegionMask, FLOW_FS};
use crate::signal::SampledSignal;
use crate::signal::{derive_breathing_waveform, derive_heart_waveform};
use crate::{Error, Result, EPOCH_SECONDS};

pub const ECG_FS: f64 = 125.0;
pub const THOR_FS: f64 = 25.0;
pub const RATE_FS: f64 = 1.0;
/// Side of each square flow region.
pub const REGION_SIZE: usize = 16;

/// Per-stage values in AASM order: W, N1, N2, N3, REM.
pub type PerStage = [f64; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_nights: usize,
    pub night_hours: f64,
    pub seed: u64,
    pub cycle_minutes: f64,
    /// Target share of the night in each stage.
    pub stage_fractions: PerStage,
    pub heart_rate_bpm: PerStage,
    /// Beat-to-beat variability as a fraction of the mean interval.
    pub hrv: PerStage,
    pub breath_rate_bpm: PerStage,
    /// Relative amplitude and rate jitter of breathing.
    pub breath_irregularity: PerStage,
    pub burst_rate_per_hour: PerStage,
    /// Standard deviation of a per-night heart-rate offset (BPM).
    pub night_hr_sd: f64,
    /// Standard deviation of a per-night breathing-rate offset (breaths/min).
    pub night_br_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nights: 20,
            night_hours: 8.0,
            seed: 0,
            cycle_minutes: 100.0,
            stage_fractions: [0.12, 0.08, 0.45, 0.15, 0.20],
            heart_rate_bpm: [76.0, 68.0, 62.0, 54.0, 74.0],
            hrv: [0.085, 0.05, 0.035, 0.015, 0.08],
            breath_rate_bpm: [18.5, 16.0, 14.0, 12.0, 18.0],
            breath_irregularity: [0.32, 0.15, 0.08, 0.03, 0.30],
            burst_rate_per_hour: [60.0, 8.0, 2.0, 0.5, 3.0],
            night_hr_sd: 6.0,
            night_br_sd: 1.5,
        }
    }
}

const KEYS: [&str; 12] = [
    "n_nights",
    "night_hours",
    "seed",
    "cycle_minutes",
    "stage_fractions",
    "heart_rate_bpm",
    "hrv",
    "breath_rate_bpm",
    "breath_irregularity",
    "burst_rate_per_hour",
    "night_hr_sd",
    "night_br_sd",
];

fn parse_per_stage(text: &str, key: &str) -> Result<PerStage> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: bad number `{}`", t.trim())))
        })
        .collect::<Result<_>>()?;
    values.try_into().map_err(|v: Vec<f64>| {
        Error::Config(format!(
            "{key}: expected 5 values (W,N1,N2,N3,REM), got {}",
            v.len()
        ))
    })
}

fn format_per_stage(v: &PerStage) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl SynthConfig {
    pub fn epochs_per_night(&self) -> usize {
        (self.night_hours * 3600.0 / EPOCH_SECONDS).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.night_hours.is_finite() && self.epochs_per_night() >= 4) {
            return bad(format!("night of {} h is too short", self.night_hours));
        }
        if !(self.cycle_minutes >= 10.0 && self.cycle_minutes.is_finite()) {
            return bad(format!("cycle of {} min", self.cycle_minutes));
        }
        let sum: f64 = self.stage_fractions.iter().sum();
        if self.stage_fractions.iter().any(|&f| !(f > 0.0))
            || (sum - 1.0).abs() > 1e-6
            || self.stage_fractions[0] >= 0.5
        {
            return bad(
                "stage_fractions must be positive, sum to 1 and keep Wake below 0.5".into(),
            );
        }
        if self
            .heart_rate_bpm
            .iter()
            .any(|&h| !(40.0..=168.0).contains(&h))
        {
            return bad("heart rates must lie in 40-168 BPM".into());
        }
        if self
            .breath_rate_bpm
            .iter()
            .any(|&b| !(6.0..=30.0).contains(&b))
        {
            return bad("breathing rates must lie in 6-30 breaths/min".into());
        }
        let unit = |v: &PerStage| v.iter().all(|&x| (0.0..=0.5).contains(&x));
        if !unit(&self.hrv) || !unit(&self.breath_irregularity) {
            return bad("hrv and breath_irregularity must lie in [0, 0.5]".into());
        }
        if !((0.0..=20.0).contains(&self.night_hr_sd) && (0.0..=5.0).contains(&self.night_br_sd)) {
            return bad("night_hr_sd must lie in [0, 20] and night_br_sd in [0, 5]".into());
        }
        if self
            .burst_rate_per_hour
            .iter()
            .any(|&r| !(0.0..=600.0).contains(&r))
        {
            return bad("burst rates must lie in [0, 600] per hour".into());
        }
        Ok(())
    }

    pub fn from_config(cfg: &ConfigFile, section: &str) -> Result<Self> {
        cfg.check_known(section, &KEYS)?;
        let mut c = Self::default();
        cfg.read_into(section, "n_nights", &mut c.n_nights)?;
        cfg.read_into(section, "night_hours", &mut c.night_hours)?;
        cfg.read_into(section, "seed", &mut c.seed)?;
        cfg.read_into(section, "cycle_minutes", &mut c.cycle_minutes)?;
        cfg.read_into(section, "night_hr_sd", &mut c.night_hr_sd)?;
        cfg.read_into(section, "night_br_sd", &mut c.night_br_sd)?;
        for (key, slot) in [
            ("stage_fractions", &mut c.stage_fractions),
            ("heart_rate_bpm", &mut c.heart_rate_bpm),
            ("hrv", &mut c.hrv),
            ("breath_rate_bpm", &mut c.breath_rate_bpm),
            ("breath_irregularity", &mut c.breath_irregularity),
            ("burst_rate_per_hour", &mut c.burst_rate_per_hour),
        ] {
            if let Some(t) = cfg.raw(section, key) {
                *slot = parse_per_stage(t, key)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut ConfigFile, section: &str) {
        cfg.set(section, "n_nights", self.n_nights);
        cfg.set(section, "night_hours", self.night_hours);
        cfg.set(section, "seed", self.seed);
        cfg.set(section, "cycle_minutes", self.cycle_minutes);
        cfg.set(section, "night_hr_sd", self.night_hr_sd);
        cfg.set(section, "night_br_sd", self.night_br_sd);
        cfg.set(
            section,
            "stage_fractions",
            format_per_stage(&self.stage_fractions),
        );
        cfg.set(
            section,
            "heart_rate_bpm",
            format_per_stage(&self.heart_rate_bpm),
        );
        cfg.set(section, "hrv", format_per_stage(&self.hrv));
        cfg.set(
            section,
            "breath_rate_bpm",
            format_per_stage(&self.breath_rate_bpm),
        );
        cfg.set(
            section,
            "breath_irregularity",
            format_per_stage(&self.breath_irregularity),
        );
        cfg.set(
            section,
            "burst_rate_per_hour",
            format_per_stage(&self.burst_rate_per_hour),
        );
    }

    /// Seed of night `index`, derived from the configuration seed.
    pub fn night_seed(&self, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng.next_u64()
    }
}

/// Stage sequence (AASM indices) of one night.
///
/// After a sleep-onset latency the night runs through cycles of
/// N1 → N2 → N3 → N2 → REM whose deep-sleep share falls and REM share rises
/// from the first cycle to the last. Brief awakenings then replace sleep at
/// random places, and the night ends with a short wake period. Segment
/// lengths are jittered; in expectation each stage gets its configured share.
pub fn generate_hypnogram(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total = cfg.epochs_per_night();
    let f = &cfg.stage_fractions;
    let wake = (f[0] * total as f64).round() as usize;
    let onset = ((0.4 * wake as f64) * rng.random_range(0.6..1.4)).round() as usize;
    let onset = onset.min(wake);
    let last =
        (((0.1 * wake as f64) * rng.random_range(0.5..1.5)).round() as usize).min(wake - onset);
    let awake_in_sleep = wake - onset - last;
    let span = total - onset - last;

    let cycle_epochs = cfg.cycle_minutes * 60.0 / EPOCH_SECONDS;
    let n_cycles = ((span as f64 / cycle_epochs).round() as usize).max(1);
    let weights: Vec<f64> = (0..n_cycles)
        .map(|_| rng.random_range(0.85..1.15))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let sleep_share = 1.0 - f[0];
    let mut sleep = Vec::with_capacity(span);
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        let end = ((acc / weight_sum) * span as f64).round() as usize;
        let len = end - sleep.len();
        // +1 in the first cycle, −1 in the last.
        let pressure = if n_cycles == 1 {
            0.0
        } else {
            1.0 - 2.0 * k as f64 / (n_cycles - 1) as f64
        };
        let mut share = |s: usize, scale: f64| {
            (len as f64 * f[s] / sleep_share * scale * rng.random_range(0.8..1.2)).round() as usize
        };
        let n1 = share(1, 1.0);
        let n3 = share(3, 1.0 + 0.8 * pressure);
        let rem = share(4, 1.0 - 0.8 * pressure);
        let (n1, n3, rem) = if n1 + n3 + rem > len {
            let scale = len as f64 / (n1 + n3 + rem) as f64;
            let n1 = (n1 as f64 * scale) as usize;
            let n3 = (n3 as f64 * scale) as usize;
            (n1, n3, len - n1 - n3)
        } else {
            (n1, n3, rem)
        };
        let n2 = len - n1 - n3 - rem;
        let n2a = (n2 as f64 * rng.random_range(0.35..0.65)).round() as usize;
        for (stage, n) in [(1, n1), (2, n2a), (3, n3), (2, n2 - n2a), (4, rem)] {
            sleep.extend(std::iter::repeat_n(stage, n));
        }
    }

    let mut placed = 0;
    let mut guard = 0;
    while placed < awake_in_sleep && guard < 100 * span.max(1) {
        guard += 1;
        let start = rng.random_range(0..span);
        let len = rng.random_range(1..=6).min(awake_in_sleep - placed);
        for e in start..(start + len).min(span) {
            if sleep[e] != 0 && placed < awake_in_sleep {
                sleep[e] = 0;
                placed += 1;
            }
        }
    }

    let mut out = vec![0; onset];
    out.extend(sleep);
    out.extend(std::iter::repeat_n(0, last));
    out
}

/// A movement: flow of magnitude `magnitude` px/frame over `[start, end)`
/// seconds in the listed regions (head, body, outer).
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    pub start: f64,
    pub end: f64,
    pub magnitude: f64,
    pub regions: [bool; 3],
    pub direction: f64,
}

fn draw_bursts(cfg: &SynthConfig, stages: &[usize], rng: &mut ChaCha8Rng) -> Vec<Burst> {
    let mut bursts = Vec::new();
    for (e, &s) in stages.iter().enumerate() {
        let near_wake = stages[e.saturating_sub(1)..(e + 2).min(stages.len())].contains(&0);
        let mut rate = cfg.burst_rate_per_hour[s];
        if near_wake {
            rate = rate.max(0.5 * cfg.burst_rate_per_hour[0]);
        }
        // Poisson draw for the epoch by inversion.
        let lambda = rate * EPOCH_SECONDS / 3600.0;
        let u: f64 = rng.random();
        let (mut k, mut p) = (0, (-lambda).exp());
        let mut cdf = p;
        while u > cdf && k < 20 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        for _ in 0..k {
            let start = e as f64 * EPOCH_SECONDS + rng.random_range(0.0..EPOCH_SECONDS);
            let duration = rng.random_range(1.0..8.0);
            bursts.push(Burst {
                start,
                end: start + duration,
                magnitude: rng.random_range(0.5..3.0),
                regions: [rng.random_bool(0.5), true, rng.random_bool(0.3)],
                direction: rng.random_range(0.0..TAU),
            });
        }
    }
    bursts.sort_by(|a, b| a.start.total_cmp(&b.start));
    bursts
}

fn in_burst(bursts: &[Burst], t: f64) -> bool {
    let i = bursts.partition_point(|b| b.start <= t);
    bursts[..i].iter().rev().take(8).any(|b| t < b.end)
}

/// Ornstein-Uhlenbeck step with unit stationary variance.
fn ou_step(x: f64, dt: f64, tau: f64, z: f64) -> f64 {
    let a = (-dt / tau).exp();
    a * x + (1.0 - a * a).sqrt() * z
}

struct Breathing {
    /// Phase in cycles at `THOR_FS`.
    phase: Vec<f64>,
    amplitude: Vec<f64>,
    rate_bpm: Vec<f64>,
}

fn breathing(cfg: &SynthConfig, stages: &[usize], rng: &mut ChaCha8Rng) -> Breathing {
    let n = (stages.len() as f64 * EPOCH_SECONDS * THOR_FS) as usize;
    let dt = 1.0 / THOR_FS;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (mut phase, mut amplitude, mut rate_bpm) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let (mut p, mut rate_noise, mut amp_noise) = (rng.random::<f64>(), 0.0, 0.0);
    for i in 0..n {
        let s = stages[((i as f64 * dt) / EPOCH_SECONDS) as usize];
        let irr = cfg.breath_irregularity[s];
        rate_noise = ou_step(rate_noise, dt, 8.0, normal.sample(rng));
        amp_noise = ou_step(amp_noise, dt, 4.0, normal.sample(rng));
        let rate = (cfg.breath_rate_bpm[s] * (1.0 + irr * rate_noise)).clamp(6.0, 30.0);
        p += rate / 60.0 * dt;
        phase.push(p);
        amplitude.push((1.0 + irr * 1.5 * amp_noise).max(0.1));
        rate_bpm.push(rate);
    }
    Breathing {
        phase,
        amplitude,
        rate_bpm,
    }
}

/// Beat times in seconds. Intervals follow the stage heart rate with a
/// slow drift, respiratory sinus arrhythmia and beat-to-beat noise, all
/// scaled by the stage variability.
fn beat_times(
    cfg: &SynthConfig,
    stages: &[usize],
    breath: &Breathing,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let duration = stages.len() as f64 * EPOCH_SECONDS;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut beats = Vec::new();
    let (mut t, mut drift, mut noise) = (rng.random_range(0.0..0.8), 0.0, 0.0);
    while t < duration {
        beats.push(t);
        let s = stages[(t / EPOCH_SECONDS) as usize];
        let v = cfg.hrv[s];
        let rr = 60.0 / cfg.heart_rate_bpm[s];
        drift = ou_step(drift, rr, 120.0, normal.sample(rng));
        noise = 0.5 * noise + 0.87 * normal.sample(rng);
        let bi = ((t * THOR_FS) as usize).min(breath.phase.len() - 1);
        let rsa = (TAU * breath.phase[bi]).sin();
        let interval = rr * (1.0 + 0.03 * drift + v * (0.8 * rsa + 0.6 * noise));
        t += interval.clamp(60.0 / 168.0, 60.0 / 40.0);
    }
    beats
}

/// Lazily generated flow over the three stacked regions. Frames are a
/// function of the night seed and the frame index only.
#[derive(Debug, Clone)]
pub struct SyntheticFlow {
    seed: u64,
    n_frames: usize,
    /// Breathing phase and amplitude at each frame.
    breath: Vec<(f64, f64)>,
    bursts: Vec<Burst>,
    /// Static per-pixel gain of breathing motion.
    gain: Vec<f32>,
}

impl SyntheticFlow {
    pub const WIDTH: usize = REGION_SIZE;
    pub const HEIGHT: usize = 3 * REGION_SIZE;

    pub fn bursts(&self) -> &[Burst] {
        &self.bursts
    }

    fn frame(&self, i: usize, u: &mut [f32], v: &mut [f32]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        let mut noise = [0u32; 2 * Self::WIDTH * Self::HEIGHT];
        rng.fill(&mut noise[..]);
        let unit = |x: u32| (x as f32 / u32::MAX as f32) * 2.0 - 1.0;
        let (phase, amp) = self.breath[i];
        let chest = (TAU * phase).cos();
        let t = i as f64 / FLOW_FS;
        let active: Vec<&Burst> = {
            let k = self.bursts.partition_point(|b| b.start <= t);
            self.bursts[..k]
                .iter()
                .rev()
                .take(8)
                .filter(|b| t < b.end)
                .collect()
        };
        for p in 0..Self::WIDTH * Self::HEIGHT {
            let region = p / (Self::WIDTH * REGION_SIZE);
            let breathing = match region {
                0 => 0.01,
                1 => 0.05,
                _ => 0.0,
            } * amp
                * chest;
            let mut x = 0.003 * unit(noise[2 * p]) as f64;
            let mut y = 0.003 * unit(noise[2 * p + 1]) as f64 + breathing * self.gain[p] as f64;
            for b in &active {
                if b.regions[region] {
                    let m = b.magnitude * (0.6 + 0.4 * unit(noise[2 * p]).abs() as f64);
                    let scale = if region == 1 { 1.0 } else { 0.6 };
                    x += scale * m * b.direction.cos();
                    y += scale * m * b.direction.sin();
                }
            }
            u[p] = x as f32;
            v[p] = y as f32;
        }
    }
}

impl FlowSource for SyntheticFlow {
    fn geometry(&self) -> FlowGeometry {
        FlowGeometry {
            width: Self::WIDTH,
            height: Self::HEIGHT,
            fs: FLOW_FS,
            n_frames: self.n_frames,
        }
    }

    fn read_frame(&mut self, i: usize, u: &mut [f32], v: &mut [f32]) -> Result<()> {
        if i >= self.n_frames {
            return Err(Error::Shape(format!("flow frame {i} of {}", self.n_frames)));
        }
        self.frame(i, u, v);
        Ok(())
    }
}

/// Head, body and outer regions of the synthetic flow grid.
pub fn synthetic_masks() -> MaskSet {
    let (w, h) = (SyntheticFlow::WIDTH, SyntheticFlow::HEIGHT);
    let band = |name: &str, k: usize| {
        RegionMask::rect(name, w, h, (0, w), (k * REGION_SIZE, (k + 1) * REGION_SIZE))
    };
    MaskSet::new(vec![
        band("H", 0).unwrap(),
        band("B", 1).unwrap(),
        band("O", 2).unwrap(),
    ])
    .expect("bands are disjoint")
}

/// Raw recordings of one synthetic night.
#[derive(Debug, Clone)]
pub struct SyntheticNight {
    pub index: usize,
    pub seed: u64,
    /// Five-class labels.
    pub hypnogram: Hypnogram,
    pub ecg: SampledSignal,
    pub thor: SampledSignal,
    pub hr: SampledSignal,
    pub br: SampledSignal,
    pub flow: SyntheticFlow,
}

impl SyntheticNight {
    pub fn n_epochs(&self) -> usize {
        self.hypnogram.len()
    }

    /// The 10 Hz heart waveform derived from the ECG.
    pub fn heart_waveform(&self) -> Result<SampledSignal> {
        derive_heart_waveform(&self.ecg)
    }

    /// The 5 Hz breathing waveform derived from thoracic effort.
    pub fn breathing_waveform(&self) -> Result<SampledSignal> {
        derive_breathing_waveform(&self.thor)
    }
}

/// Generates night `index` of the configured set.
pub fn generate_night(cfg: &SynthConfig, index: usize) -> Result<SyntheticNight> {
    cfg.validate()?;
    let seed = cfg.night_seed(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = generate_hypnogram(cfg, &mut rng);
    let duration = stages.len() as f64 * EPOCH_SECONDS;
    let bursts = draw_bursts(cfg, &stages, &mut rng);
    let normal = Normal::new(0.0, 1.0).unwrap();
    // Subject-level offsets, clamped so every stage stays in band.
    let mut person = cfg.clone();
    let hr_shift = cfg.night_hr_sd * normal.sample(&mut rng);
    let br_shift = cfg.night_br_sd * normal.sample(&mut rng);
    for s in 0..5 {
        person.heart_rate_bpm[s] = (cfg.heart_rate_bpm[s] + hr_shift).clamp(40.0, 168.0);
        person.breath_rate_bpm[s] = (cfg.breath_rate_bpm[s] + br_shift).clamp(6.0, 30.0);
    }
    let breath = breathing(&person, &stages, &mut rng);
    let beats = beat_times(&person, &stages, &breath, &mut rng);

    let n_ecg = (duration * ECG_FS) as usize;
    let mut ecg = vec![0.0; n_ecg];
    let wander_phase = rng.random_range(0.0..TAU);
    for (i, x) in ecg.iter_mut().enumerate() {
        let t = i as f64 / ECG_FS;
        *x = 0.1 * (TAU * 0.05 * t + wander_phase).sin() + 0.03 * normal.sample(&mut rng);
        if in_burst(&bursts, t) {
            *x += 0.08 * normal.sample(&mut rng);
        }
    }
    // QRS complex plus T wave around each beat.
    let half = (0.45 * ECG_FS) as isize;
    for &b in &beats {
        let centre = (b * ECG_FS).round() as isize;
        for k in -half..=half {
            let i = centre + k;
            if i < 0 || i as usize >= n_ecg {
                continue;
            }
            let dt = i as f64 / ECG_FS - b;
            let qrs = (-0.5 * (dt / 0.012).powi(2)).exp();
            let t_wave = 0.25 * (-0.5 * ((dt - 0.25) / 0.05).powi(2)).exp();
            ecg[i as usize] += qrs + t_wave;
        }
    }

    let mut thor: Vec<f64> = breath
        .phase
        .iter()
        .zip(&breath.amplitude)
        .map(|(p, a)| a * (TAU * p).sin() + 0.05 * normal.sample(&mut rng))
        .collect();
    let mut artefact = 0.0;
    for (i, x) in thor.iter_mut().enumerate() {
        let t = i as f64 / THOR_FS;
        if in_burst(&bursts, t) {
            artefact = ou_step(artefact, 1.0 / THOR_FS, 0.5, normal.sample(&mut rng));
            *x += 0.2 * artefact;
        }
    }

    let n_sec = duration as usize;
    let mut hr = Vec::with_capacity(n_sec);
    let mut k = 0;
    for j in 0..n_sec {
        let t = j as f64 + 0.5;
        while k + 2 < beats.len() && beats[k + 1] <= t {
            k += 1;
        }
        let interval = if beats.len() >= 2 {
            beats[k + 1] - beats[k]
        } else {
            1.0
        };
        hr.push(60.0 / interval);
    }
    let br: Vec<f64> = (0..n_sec)
        .map(|j| breath.rate_bpm[((j as f64 + 0.5) * THOR_FS) as usize])
        .collect();

    let n_frames = (duration * FLOW_FS) as usize;
    let flow_breath = (0..n_frames)
        .map(|i| {
            let bi = ((i as f64 / FLOW_FS * THOR_FS) as usize).min(breath.phase.len() - 1);
            (breath.phase[bi], breath.amplitude[bi])
        })
        .collect();
    let gain = (0..SyntheticFlow::WIDTH * SyntheticFlow::HEIGHT)
        .map(|_| rng.random_range(0.5f32..1.0))
        .collect();
    let flow = SyntheticFlow {
        seed: rng.next_u64(),
        n_frames,
        breath: flow_breath,
        bursts,
        gain,
    };

    Ok(SyntheticNight {
        index,
        seed,
        hypnogram: Hypnogram::new(stages, Strategy::FiveClass)?,
        ecg: SampledSignal::new(ecg, ECG_FS, "ecg")?,
        thor: SampledSignal::new(thor, THOR_FS, "thor")?,
        hr: SampledSignal::new(hr, RATE_FS, "hr")?,
        br: SampledSignal::new(br, RATE_FS, "br")?,
        flow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{build_feature_grid, region_signals_many, Family, FeatureSelection};

    fn short(hours: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            night_hours: hours,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn durations_are_consistent() {
        let night = generate_night(&short(0.5, 1), 0).unwrap();
        assert_eq!(night.n_epochs(), 60);
        assert_eq!(night.ecg.len(), 60 * 30 * 125);
        assert_eq!(night.thor.len(), 60 * 30 * 25);
        assert_eq!((night.hr.len(), night.br.len()), (1800, 1800));
        assert_eq!(night.flow.geometry().n_frames, 1800 * 4);
        assert_eq!(night.heart_waveform().unwrap().len(), 18000);
        assert_eq!(night.breathing_waveform().unwrap().len(), 9000);
        assert_eq!(SynthConfig::default().epochs_per_night(), 960);
        assert_eq!(SynthConfig::default().epochs_per_night() * 30 * 10, 288_000);
    }

    #[test]
    fn same_seed_same_night() {
        let cfg = short(0.5, 3);
        let a = generate_night(&cfg, 2).unwrap();
        let b = generate_night(&cfg, 2).unwrap();
        assert_eq!(a.hypnogram, b.hypnogram);
        assert_eq!(a.ecg, b.ecg);
        assert_eq!(a.thor, b.thor);
        assert_eq!((&a.hr, &a.br), (&b.hr, &b.br));
        let (fa, fb) = (
            crate::motion::FlowFieldSeries::collect(&mut a.flow.clone()).unwrap(),
            crate::motion::FlowFieldSeries::collect(&mut b.flow.clone()).unwrap(),
        );
        assert_eq!(fa.to_bytes(), fb.to_bytes());
        let c = generate_night(&cfg, 3).unwrap();
        assert_ne!(a.ecg, c.ecg);
    }

    #[test]
    fn rates_stay_in_physiological_bands() {
        let night = generate_night(&short(2.0, 4), 0).unwrap();
        assert!(night
            .hr
            .samples
            .iter()
            .all(|&h| (40.0..=168.0).contains(&h)));
        assert!(night.br.samples.iter().all(|&b| (6.0..=30.0).contains(&b)));
    }

    #[test]
    fn heart_rate_follows_the_stage() {
        let night = generate_night(&short(8.0, 5), 0).unwrap();
        let mut sums = [0.0; 5];
        let mut counts = [0usize; 5];
        for (e, &s) in night.hypnogram.stages.iter().enumerate() {
            sums[s] += night.hr.samples[e * 30..(e + 1) * 30].iter().sum::<f64>() / 30.0;
            counts[s] += 1;
        }
        let mean = |s: usize| sums[s] / counts[s] as f64;
        assert!(
            mean(0) > mean(2) && mean(2) > mean(3),
            "{sums:?} {counts:?}"
        );
    }

    #[test]
    fn hypnogram_follows_the_grammar() {
        let cfg = short(8.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = generate_hypnogram(&cfg, &mut rng);
        assert_eq!(h.len(), 960);
        assert_eq!(h[0], 0);
        assert_eq!(*h.last().unwrap(), 0);
        // N3 sits in the first half, REM mostly in the second.
        let half = h.len() / 2;
        let count = |r: std::ops::Range<usize>, s: usize| h[r].iter().filter(|&&x| x == s).count();
        assert!(count(0..half, 3) > count(half..h.len(), 3));
        assert!(count(half..h.len(), 4) > count(0..half, 4));
        // No N3 directly after REM: cycles restart with N1.
        assert!(h.windows(2).all(|w| !(w[0] == 4 && w[1] == 3)));
    }

    #[test]
    fn stage_shares_match_targets() {
        let cfg = short(8.0, 7);
        let mut totals = [0usize; 5];
        for i in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.night_seed(i));
            for s in generate_hypnogram(&cfg, &mut rng) {
                totals[s] += 1;
            }
        }
        let n: usize = totals.iter().sum();
        for s in 0..5 {
            let share = totals[s] as f64 / n as f64;
            let target = cfg.stage_fractions[s];
            assert!(
                (share - target).abs() <= 0.1 * target,
                "stage {s}: {share} vs {target}"
            );
        }
    }

    #[test]
    fn movement_is_concentrated_in_wake() {
        let night = generate_night(&short(4.0, 8), 0).unwrap();
        let sel = FeatureSelection {
            families: vec![Family::F1],
            regions: vec![vec!["B".into()]],
            windows_s: vec![300.0],
            thresholds: vec![],
            shifts_s: vec![0.0],
        };
        let grid = build_feature_grid(
            &mut night.flow.clone(),
            &synthetic_masks(),
            night.n_epochs(),
            &sel,
        )
        .unwrap();
        let mean = |stage: usize| {
            let v: Vec<f64> = night
                .hypnogram
                .stages
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == stage)
                .map(|(e, _)| grid.values[[0, e]])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(0) > mean(3));
    }

    #[test]
    fn body_breathing_separates_max_and_mean() {
        let night = generate_night(&short(0.2, 9), 0).unwrap();
        let masks = synthetic_masks();
        let sig = region_signals_many(&mut night.flow.clone(), &[masks.get("B").unwrap()]).unwrap();
        assert!(sig[0].v.iter().zip(&sig[0].s).any(|(v, s)| v > s));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = SynthConfig {
            n_nights: 3,
            night_hours: 1.5,
            seed: 11,
            ..Default::default()
        };
        let mut file = ConfigFile::default();
        cfg.write_config(&mut file, "synth");
        assert_eq!(SynthConfig::from_config(&file, "synth").unwrap(), cfg);
        file.set("synth", "heart_rate_bpm", "30,60,60,60,60");
        assert!(SynthConfig::from_config(&file, "synth").is_err());
        file.set("synth", "heart_rate_bpm", "60,60");
        assert!(SynthConfig::from_config(&file, "synth").is_err());
        assert!(SynthConfig {
            stage_fractions: [0.2; 5],
            ..cfg.clone()
        }
        .validate()
        .is_ok());
        assert!(SynthConfig {
            stage_fractions: [0.3; 5],
            ..cfg
        }
        .validate()
        .is_err());
    }
}
