//! IIR design, forward-backward filtering, smoothing and resampling.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{FilterSpec, SampledSignal};
use crate::{Error, Result};

/// Cascade of second-order sections, each `[b0, b1, b2, a0, a1, a2]` with
/// `a0 == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<[f64; 6]>,
}

impl BiquadCascade {
    /// Digital Butterworth bandpass of prototype order `order` (the overall
    /// transfer function has order `2 * order`).
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        if order == 0 || !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(Error::InvalidFilter(format!(
                "bandpass {low_hz}-{high_hz} Hz of order {order} at fs {fs}"
            )));
        }
        let w1 = 2.0 * fs * (PI * low_hz / fs).tan();
        let w2 = 2.0 * fs * (PI * high_hz / fs).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let half = p * (bw / 2.0);
            let disc = (half * half - Complex64::new(w0 * w0, 0.0)).sqrt();
            poles.push(half + disc);
            poles.push(half - disc);
        }
        let zpoles: Vec<Complex64> = poles.iter().map(|&s| bilinear(s, fs)).collect();

        // One zero at z = 1 (analog s = 0) and one at z = -1 per section.
        let mut sections = Vec::with_capacity(order);
        for (a1, a2) in pair_poles(&zpoles)? {
            sections.push([1.0, 0.0, -1.0, 1.0, a1, a2]);
        }
        let mut cascade = Self { sections };
        // Unit gain at the digital image of the analog centre frequency.
        let centre = 2.0 * (w0 / (2.0 * fs)).atan();
        cascade.normalize_gain_at(centre);
        cascade.check_stable()?;
        Ok(cascade)
    }

    /// Digital Butterworth lowpass of the given order.
    pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self> {
        if order == 0 || !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
            return Err(Error::InvalidFilter(format!(
                "lowpass {cutoff_hz} Hz of order {order} at fs {fs}"
            )));
        }
        let wc = 2.0 * fs * (PI * cutoff_hz / fs).tan();
        let zpoles: Vec<Complex64> = prototype_poles(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        let mut sections = Vec::new();
        let complex: Vec<Complex64> = zpoles.iter().copied().filter(|p| p.im > 1e-12).collect();
        for p in complex {
            sections.push([1.0, 2.0, 1.0, 1.0, -2.0 * p.re, p.norm_sqr()]);
        }
        for p in zpoles.iter().filter(|p| p.im.abs() <= 1e-12) {
            sections.push([1.0, 1.0, 0.0, 1.0, -p.re, 0.0]);
        }
        let mut cascade = Self { sections };
        cascade.normalize_gain_at(0.0);
        cascade.check_stable()?;
        Ok(cascade)
    }

    /// Complex frequency response at normalised angular frequency `omega`
    /// (radians per sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| {
                let num = z1 * s[1] + z2 * s[2] + s[0];
                let den = z1 * s[4] + z2 * s[5] + s[3];
                acc * num / den
            })
    }

    /// Magnitude response at `freq_hz` for sampling rate `fs`.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(2.0 * PI * freq_hz / fs).norm()
    }

    fn normalize_gain_at(&mut self, omega: f64) {
        let g = self.response(omega).norm();
        if let Some(first) = self.sections.first_mut() {
            for b in &mut first[..3] {
                *b /= g;
            }
        }
    }

    fn check_stable(&self) -> Result<()> {
        for s in &self.sections {
            let (a1, a2) = (s[4], s[5]);
            // Jury conditions for a monic quadratic.
            let stable = a2.abs() < 1.0 && a1.abs() < 1.0 + a2;
            if !stable || s.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidFilter(format!("unstable section {s:?}")));
            }
        }
        Ok(())
    }

    /// Number of samples of odd-extension padding used by [`sosfiltfilt`].
    pub fn padlen(&self) -> usize {
        let n = self.sections.len();
        let zero_b2 = self.sections.iter().filter(|s| s[2] == 0.0).count();
        let zero_a2 = self.sections.iter().filter(|s| s[5] == 0.0).count();
        3 * (2 * n + 1 - zero_b2.min(zero_a2))
    }

    /// Steady-state initial conditions for a unit step.
    fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [b0, b1, b2, _, a1, a2] = *s;
                let (c0, c1) = (b1 - a1 * b0, b2 - a2 * b0);
                let z0 = (c0 + c1) / (1.0 + a1 + a2);
                let z1 = c1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                zi
            })
            .collect()
    }
}

/// Analog Butterworth prototype poles with unit cutoff.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Groups z-plane poles into `(a1, a2)` denominator pairs.
fn pair_poles(poles: &[Complex64]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut reals = Vec::new();
    for p in poles {
        if p.im > 1e-12 {
            out.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= 1e-12 {
            reals.push(p.re);
        }
    }
    if reals.len() % 2 != 0 {
        return Err(Error::InvalidFilter(
            "odd number of real poles in bandpass".into(),
        ));
    }
    for pair in reals.chunks(2) {
        out.push((-(pair[0] + pair[1]), pair[0] * pair[1]));
    }
    Ok(out)
}

/// Direct-form II transposed filtering through the cascade. `zi` holds the
/// per-section state and is updated in place.
fn sosfilt_with_state(cascade: &BiquadCascade, x: &mut [f64], zi: &mut [[f64; 2]]) {
    for (s, z) in cascade.sections.iter().zip(zi.iter_mut()) {
        let [b0, b1, b2, _, a1, a2] = *s;
        let (mut z0, mut z1) = (z[0], z[1]);
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z0;
            z0 = b1 * xin - a1 * y + z1;
            z1 = b2 * xin - a2 * y;
            *v = y;
        }
        *z = [z0, z1];
    }
}

/// Causal filtering from rest.
pub fn sosfilt(cascade: &BiquadCascade, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut zi = vec![[0.0; 2]; cascade.sections.len()];
    sosfilt_with_state(cascade, &mut y, &mut zi);
    y
}

/// Zero-phase forward-backward filtering with odd-extension padding and
/// steady-state initial conditions.
pub fn sosfiltfilt(cascade: &BiquadCascade, x: &[f64]) -> Result<Vec<f64>> {
    let pad = cascade.padlen();
    let n = x.len();
    if n <= pad {
        return Err(Error::InvalidSignal(format!(
            "signal of {n} samples is shorter than the filter warm-up of {} samples",
            pad + 1
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let base = cascade.step_zi();
    let mut zi: Vec<[f64; 2]> = base
        .iter()
        .map(|z| [z[0] * ext[0], z[1] * ext[0]])
        .collect();
    sosfilt_with_state(cascade, &mut ext, &mut zi);

    ext.reverse();
    let y0 = ext[0];
    let mut zi: Vec<[f64; 2]> = base.iter().map(|z| [z[0] * y0, z[1] * y0]).collect();
    sosfilt_with_state(cascade, &mut ext, &mut zi);
    ext.reverse();

    Ok(ext[pad..pad + n].to_vec())
}

/// Zero-phase Butterworth bandpass described by `spec`.
pub fn butterworth_bandpass(x: &SampledSignal, spec: &FilterSpec) -> Result<SampledSignal> {
    let FilterSpec::ButterworthBandpass {
        low_hz,
        high_hz,
        order,
    } = *spec
    else {
        return Err(Error::InvalidFilter(format!("{spec:?} is not a bandpass")));
    };
    spec.validate(x.fs)?;
    let cascade = BiquadCascade::butterworth_bandpass(order, low_hz, high_hz, x.fs)?;
    let y = sosfiltfilt(&cascade, &x.samples)?;
    Ok(x.derived(y, x.fs))
}

/// Gaussian smoothing with standard deviation `sigma_s` seconds.
///
/// The kernel is truncated at four standard deviations and normalised to
/// unit sum; edges are handled by symmetric reflection.
pub fn gaussian_smooth(x: &SampledSignal, sigma_s: f64) -> Result<SampledSignal> {
    FilterSpec::Gaussian { sigma_s }.validate(x.fs)?;
    let sigma = sigma_s * x.fs;
    let radius = (4.0 * sigma).ceil() as usize;
    let len = 2 * radius + 1;
    if len > x.len() {
        return Err(Error::InvalidFilter(format!(
            "Gaussian kernel of {len} samples is longer than the {}-sample signal",
            x.len()
        )));
    }
    let mut kernel: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let n = x.len() as isize;
    let reflect = |i: isize| -> usize {
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let y = (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x.samples[reflect(i + k as isize - radius as isize)])
                .sum()
        })
        .collect();
    Ok(x.derived(y, x.fs))
}

/// Running median over an odd window, replicating edge samples.
pub fn median_filter(x: &SampledSignal, kernel_len: usize) -> Result<SampledSignal> {
    FilterSpec::Median { kernel_len }.validate(x.fs)?;
    if kernel_len > x.len() {
        return Err(Error::InvalidFilter(format!(
            "median kernel of {kernel_len} samples is longer than the {}-sample signal",
            x.len()
        )));
    }
    let half = (kernel_len / 2) as isize;
    let last = x.len() as isize - 1;
    let mut window = vec![0.0; kernel_len];
    let y = (0..=last)
        .map(|i| {
            for (k, w) in window.iter_mut().enumerate() {
                let j = (i + k as isize - half).clamp(0, last) as usize;
                *w = x.samples[j];
            }
            window.sort_by(|a, b| a.total_cmp(b));
            window[kernel_len / 2]
        })
        .collect();
    Ok(x.derived(y, x.fs))
}

/// Resamples to `fs_new` by linear interpolation. When downsampling, a
/// zero-phase fourth-order Butterworth lowpass at `0.45 * fs_new` is applied
/// first.
pub fn resample(x: &SampledSignal, fs_new: f64) -> Result<SampledSignal> {
    if !(fs_new > 0.0 && fs_new.is_finite()) {
        return Err(Error::InvalidFilter(format!(
            "target rate {fs_new} must be > 0"
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidSignal(
            "cannot resample an empty signal".into(),
        ));
    }
    if (fs_new - x.fs).abs() < 1e-12 * x.fs {
        return Ok(x.clone());
    }
    let source = if fs_new < x.fs {
        let lp = BiquadCascade::butterworth_lowpass(4, 0.45 * fs_new, x.fs)?;
        sosfiltfilt(&lp, &x.samples)?
    } else {
        x.samples.clone()
    };
    let ratio = x.fs / fs_new;
    let n_out = ((x.len() as f64) / ratio).round().max(1.0) as usize;
    let last = source.len() - 1;
    let y = (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = pos.floor() as usize;
            if i >= last {
                return source[last];
            }
            let frac = pos - i as f64;
            source[i] + frac * (source[i + 1] - source[i])
        })
        .collect();
    Ok(x.derived(y, fs_new))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
        let n = (fs * seconds) as usize;
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn peak(x: &[f64]) -> f64 {
        x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn bandpass_edges_are_minus_three_db() {
        let c = BiquadCascade::butterworth_bandpass(4, 0.66, 2.8, 10.0).unwrap();
        let edge = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.magnitude(0.66, 10.0) - edge).abs() < 1e-9);
        assert!((c.magnitude(2.8, 10.0) - edge).abs() < 1e-9);
        assert_eq!(c.sections.len(), 4);
    }

    #[test]
    fn lowpass_has_unit_dc_gain_and_half_power_cutoff() {
        for order in 1..=5 {
            let c = BiquadCascade::butterworth_lowpass(order, 2.0, 10.0).unwrap();
            assert!((c.magnitude(0.0, 10.0) - 1.0).abs() < 1e-12);
            assert!((c.magnitude(2.0, 10.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_band_is_rejected() {
        assert!(BiquadCascade::butterworth_bandpass(4, 2.8, 0.66, 10.0).is_err());
        assert!(BiquadCascade::butterworth_bandpass(4, 0.66, 5.0, 10.0).is_err());
        assert!(BiquadCascade::butterworth_bandpass(0, 0.66, 2.8, 10.0).is_err());
    }

    #[test]
    fn filtfilt_passes_constant_through_lowpass() {
        let c = BiquadCascade::butterworth_lowpass(4, 1.0, 10.0).unwrap();
        let y = sosfiltfilt(&c, &vec![2.5; 500]).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn filtfilt_rejects_short_input() {
        let c = BiquadCascade::butterworth_bandpass(4, 0.66, 2.8, 10.0).unwrap();
        assert!(sosfiltfilt(&c, &vec![0.0; c.padlen()]).is_err());
    }

    #[test]
    fn bandpass_steady_state_amplitudes() {
        let spec = FilterSpec::ButterworthBandpass {
            low_hz: 0.66,
            high_hz: 2.8,
            order: 4,
        };
        let pass = SampledSignal::new(sine(1.5, 10.0, 120.0), 10.0, "x").unwrap();
        let y = butterworth_bandpass(&pass, &spec).unwrap();
        let a = peak(&y.samples[300..900]);
        assert!((0.9..=1.0 + 1e-9).contains(&a), "1.5 Hz amplitude {a}");

        let slow = SampledSignal::new(sine(0.1, 10.0, 300.0), 10.0, "x").unwrap();
        let y = butterworth_bandpass(&slow, &spec).unwrap();
        assert!(peak(&y.samples[1000..2000]) < 0.1);
    }

    #[test]
    fn gaussian_of_impulse_is_normalized_kernel() {
        let mut x = vec![0.0; 101];
        x[50] = 1.0;
        let s = SampledSignal::new(x, 10.0, "x").unwrap();
        let y = gaussian_smooth(&s, 0.15).unwrap();
        let total: f64 = y.samples.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        // Closed form, up to the truncation renormalisation.
        let sigma = 1.5_f64;
        let norm: f64 = (-6..=6)
            .map(|d: i32| (-0.5 * (d * d) as f64 / (sigma * sigma)).exp())
            .sum();
        for d in -6_i32..=6 {
            let expect = (-0.5 * (d * d) as f64 / (sigma * sigma)).exp() / norm;
            assert!((y.samples[(50 + d) as usize] - expect).abs() < 1e-12);
        }
        assert_eq!(y.len(), 101);
    }

    #[test]
    fn gaussian_kernel_longer_than_signal_is_error() {
        let s = SampledSignal::new(vec![1.0; 5], 10.0, "x").unwrap();
        assert!(gaussian_smooth(&s, 1.0).is_err());
    }

    #[test]
    fn median_filter_cases() {
        let s = SampledSignal::new(vec![0.0, 0.0, 9.0, 0.0, 0.0], 5.0, "x").unwrap();
        let y = median_filter(&s, 5).unwrap();
        assert_eq!(y.samples[2], 0.0);

        let c = SampledSignal::new(vec![4.0; 12], 5.0, "x").unwrap();
        assert_eq!(median_filter(&c, 5).unwrap().samples, vec![4.0; 12]);

        assert!(median_filter(&c, 4).is_err());
        assert!(median_filter(&c, 13).is_err());
    }

    #[test]
    fn resample_length_follows_duration() {
        let s = SampledSignal::new(sine(0.5, 10.0, 30.0), 10.0, "x").unwrap();
        let y = resample(&s, 5.0).unwrap();
        assert_eq!(y.len(), 150);
        assert!((y.duration() - s.duration()).abs() <= 1.0 / 5.0);
        let up = resample(&s, 20.0).unwrap();
        assert_eq!(up.len(), 600);
    }

    #[test]
    fn zero_maps_to_zero_everywhere() {
        let z = SampledSignal::new(vec![0.0; 1000], 10.0, "z").unwrap();
        let spec = FilterSpec::ButterworthBandpass {
            low_hz: 0.66,
            high_hz: 2.8,
            order: 4,
        };
        assert!(butterworth_bandpass(&z, &spec)
            .unwrap()
            .samples
            .iter()
            .all(|v| *v == 0.0));
        assert!(gaussian_smooth(&z, 0.15)
            .unwrap()
            .samples
            .iter()
            .all(|v| *v == 0.0));
        assert!(median_filter(&z, 5)
            .unwrap()
            .samples
            .iter()
            .all(|v| *v == 0.0));
        assert!(resample(&z, 5.0).unwrap().samples.iter().all(|v| *v == 0.0));
    }
}
