//! IIR filter design and zero-phase filtering.
//!
//! Filters are designed from the analog Butterworth prototype (band
//! transform where needed, bilinear transform with edge prewarping) and
//! realized as cascaded second-order sections for numerical stability.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::{Error, Result};

/// One biquad, a0 normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Bandpass,
    Notch,
}

#[derive(Debug, Clone)]
pub struct DesignMeta {
    pub kind: FilterKind,
    pub order: usize,
    pub edges_hz: Vec<f64>,
    pub fs_hz: f64,
}

#[derive(Debug, Clone)]
pub struct SosFilter {
    sections: Vec<Sos>,
    pub meta: DesignMeta,
}

impl SosFilter {
    pub fn sections(&self) -> &[Sos] {
        &self.sections
    }

    /// Complex response at `f_hz` (single pass; `filtfilt` applies |H|²).
    pub fn response_at(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.meta.fs_hz;
        let z1 = Complex64::from_polar(1.0, -w); // z^-1
        let z2 = z1 * z1;
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
        }
        h
    }

    pub fn magnitude_db(&self, f_hz: f64) -> f64 {
        20.0 * self.response_at(f_hz).norm().log10()
    }

    /// Largest pole magnitude across sections.
    pub fn max_pole_magnitude(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| {
                // roots of z^2 + a1 z + a2
                let disc = Complex64::new(s.a1 * s.a1 - 4.0 * s.a2, 0.0).sqrt();
                let r1 = (-s.a1 + disc.re).hypot(disc.im) / 2.0;
                let r2 = (-s.a1 - disc.re).hypot(-disc.im) / 2.0;
                [r1, r2]
            })
            .fold(0.0, f64::max)
    }

    fn check_stable(self) -> Result<Self> {
        let m = self.max_pole_magnitude();
        if m >= 1.0 - 1e-9 {
            return Err(Error::Numeric(format!(
                "designed filter unstable: pole magnitude {m}"
            )));
        }
        Ok(self)
    }
}

/// Analog Butterworth prototype poles (cutoff 1 rad/s), all n of them.
fn butterworth_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let phi = PI * (2 * k + 1) as f64 / (2 * order) as f64;
            Complex64::new(-phi.sin(), phi.cos())
        })
        .collect()
}

fn prewarp(f_hz: f64, fs_hz: f64) -> f64 {
    2.0 * fs_hz * (PI * f_hz / fs_hz).tan()
}

fn bilinear(s: Complex64, fs_hz: f64) -> Complex64 {
    let k = Complex64::new(2.0 * fs_hz, 0.0);
    (k + s) / (k - s)
}

/// Group digital poles into conjugate (or real) pairs, returning the
/// denominator coefficients (a1, a2) of each section.
fn pair_poles(mut poles: Vec<Complex64>) -> Vec<(f64, f64)> {
    let mut sections = Vec::new();
    while let Some(idx) = poles
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.im.abs().total_cmp(&b.1.im.abs()))
        .map(|(i, _)| i)
    {
        let p = poles.swap_remove(idx);
        if p.im.abs() > 1e-10 {
            // remove the conjugate partner
            let (j, _) = poles
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - p.conj()).norm().total_cmp(&(b.1 - p.conj()).norm()))
                .expect("conjugate pole must exist");
            poles.swap_remove(j);
            sections.push((-2.0 * p.re, p.norm_sqr()));
        } else if let Some(j) = poles.iter().position(|q| q.im.abs() <= 1e-10) {
            let q = poles.swap_remove(j);
            sections.push((-(p.re + q.re), p.re * q.re));
        } else {
            // lone real pole: first-order section
            sections.push((-p.re, 0.0));
        }
    }
    sections
}

/// Digital Butterworth band-pass: analog prototype → band transform →
/// bilinear transform with edge prewarping. Order n yields n sections.
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs_hz: f64,
) -> Result<SosFilter> {
    if order < 1 {
        return Err(Error::Design("band-pass order must be >= 1".into()));
    }
    if !(low_hz > 0.0 && low_hz < high_hz) {
        return Err(Error::Design(format!(
            "band edges must satisfy 0 < low < high, got {low_hz}..{high_hz} Hz"
        )));
    }
    if high_hz >= fs_hz / 2.0 {
        return Err(Error::Design(format!(
            "upper edge {high_hz} Hz must be below Nyquist {} Hz",
            fs_hz / 2.0
        )));
    }
    let w1 = prewarp(low_hz, fs_hz);
    let w2 = prewarp(high_hz, fs_hz);
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    // each prototype pole maps to two band-pass poles
    let mut analog_poles = Vec::with_capacity(2 * order);
    for p in butterworth_prototype(order) {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        analog_poles.push((pb + disc) / 2.0);
        analog_poles.push((pb - disc) / 2.0);
    }
    let digital_poles: Vec<Complex64> =
        analog_poles.into_iter().map(|s| bilinear(s, fs_hz)).collect();

    // n zeros at z = +1 (from s = 0) and n at z = -1 (from s = inf):
    // one of each per section -> numerator z^2 - 1
    let sections: Vec<Sos> = pair_poles(digital_poles)
        .into_iter()
        .map(|(a1, a2)| Sos { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 })
        .collect();
    debug_assert_eq!(sections.len(), order);

    let mut filter = SosFilter {
        sections,
        meta: DesignMeta {
            kind: FilterKind::Bandpass,
            order,
            edges_hz: vec![low_hz, high_hz],
            fs_hz,
        },
    };
    // unit gain at the digital image of the analog center frequency
    let f_center = fs_hz / PI * (w0 / (2.0 * fs_hz)).atan();
    let g = filter.response_at(f_center).norm();
    filter.sections[0].b0 /= g;
    filter.sections[0].b1 /= g;
    filter.sections[0].b2 /= g;
    filter.check_stable()
}

/// Digital Butterworth low-pass (anti-alias stage of [`decimate`]).
pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<SosFilter> {
    if order < 1 {
        return Err(Error::Design("low-pass order must be >= 1".into()));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(Error::Design(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            fs_hz / 2.0
        )));
    }
    let wc = prewarp(cutoff_hz, fs_hz);
    let digital_poles: Vec<Complex64> = butterworth_prototype(order)
        .into_iter()
        .map(|p| bilinear(p * wc, fs_hz))
        .collect();
    // all zeros at z = -1; a first-order tail section gets a single zero
    let sections: Vec<Sos> = pair_poles(digital_poles)
        .into_iter()
        .map(|(a1, a2)| {
            if a2 == 0.0 {
                Sos { b0: 1.0, b1: 1.0, b2: 0.0, a1, a2 }
            } else {
                Sos { b0: 1.0, b1: 2.0, b2: 1.0, a1, a2 }
            }
        })
        .collect();
    let mut filter = SosFilter {
        sections,
        meta: DesignMeta { kind: FilterKind::Lowpass, order, edges_hz: vec![cutoff_hz], fs_hz },
    };
    let g = filter.response_at(0.0).norm();
    filter.sections[0].b0 /= g;
    filter.sections[0].b1 /= g;
    filter.sections[0].b2 /= g;
    filter.check_stable()
}

/// Single-section IIR notch (constrained biquad).
pub fn design_notch(center_hz: f64, q: f64, fs_hz: f64) -> Result<SosFilter> {
    if !(center_hz > 0.0 && center_hz < fs_hz / 2.0) {
        return Err(Error::Design(format!(
            "notch center {center_hz} Hz must lie in (0, {}) Hz",
            fs_hz / 2.0
        )));
    }
    if q <= 0.0 {
        return Err(Error::Design("notch Q must be positive".into()));
    }
    let w0 = 2.0 * PI * center_hz / fs_hz;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let section = Sos {
        b0: 1.0 / a0,
        b1: -2.0 * w0.cos() / a0,
        b2: 1.0 / a0,
        a1: -2.0 * w0.cos() / a0,
        a2: (1.0 - alpha) / a0,
    };
    SosFilter {
        sections: vec![section],
        meta: DesignMeta { kind: FilterKind::Notch, order: 2, edges_hz: vec![center_hz], fs_hz },
    }
    .check_stable()
}

/// Steady-state DF2T state for a unit-step input, per section, with the
/// cumulative DC gain applied so the cascade starts in steady state.
fn steady_state(sections: &[Sos]) -> Vec<(f64, f64)> {
    let mut zi = Vec::with_capacity(sections.len());
    let mut scale = 1.0;
    for s in sections {
        let h = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        let z2 = s.b2 - s.a2 * h;
        let z1 = s.b1 - s.a1 * h + z2;
        zi.push((z1 * scale, z2 * scale));
        scale *= h;
    }
    zi
}

/// Single forward pass through the cascade (direct form II transposed),
/// initial state scaled by the first sample.
fn sosfilt(filter: &SosFilter, signal: &mut [f64]) {
    if signal.is_empty() {
        return;
    }
    let x0 = signal[0];
    let mut states: Vec<(f64, f64)> = steady_state(&filter.sections)
        .into_iter()
        .map(|(z1, z2)| (z1 * x0, z2 * x0))
        .collect();
    for v in signal.iter_mut() {
        let mut x = *v;
        for (s, (z1, z2)) in filter.sections.iter().zip(&mut states) {
            let y = s.b0 * x + *z1;
            *z1 = s.b1 * x - s.a1 * y + *z2;
            *z2 = s.b2 * x - s.a2 * y;
            x = y;
        }
        *v = x;
    }
}

/// Transient length used in the `filtfilt` signal-length precondition.
pub fn transient_len(filter: &SosFilter) -> usize {
    3 * filter.sections.len() * 2
}

/// Zero-phase filtering: forward pass, reverse, backward pass, reverse.
/// Effective magnitude |H|², phase 0. Edges are handled by odd-symmetric
/// reflection padding (length 3 × digital order), trimmed afterwards.
///
/// Both pass orders (forward-first and backward-first) are computed and
/// averaged, which makes the operation exactly time-reversal symmetric
/// rather than symmetric only up to edge transients.
pub fn filtfilt(signal: &[f64], filter: &SosFilter) -> Result<Vec<f64>> {
    let min_len = 3 * transient_len(filter);
    if signal.len() <= min_len {
        return Err(Error::Input(format!(
            "filtfilt needs more than {min_len} samples, got {}",
            signal.len()
        )));
    }
    let pad = 3 * filter.sections.len() * 2;
    let n = signal.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * signal[0] - signal[i]);
    }
    ext.extend_from_slice(signal);
    for i in 1..=pad {
        ext.push(2.0 * signal[n - 1] - signal[n - 1 - i]);
    }

    let mut fwd = ext.clone();
    sosfilt(filter, &mut fwd);
    fwd.reverse();
    sosfilt(filter, &mut fwd);
    fwd.reverse();

    let mut bwd = ext;
    bwd.reverse();
    sosfilt(filter, &mut bwd);
    bwd.reverse();
    sosfilt(filter, &mut bwd);

    Ok(fwd[pad..pad + n]
        .iter()
        .zip(&bwd[pad..pad + n])
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Anti-aliased integer-factor downsampling: zero-phase 4th-order
/// Butterworth low-pass at 0.4 × (fs/factor), then every `factor`-th
/// sample starting at index 0. Output length is ceil(len / factor).
pub fn decimate(signal: &[f64], factor: usize, fs_hz: f64) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::Input("decimation factor must be >= 1".into()));
    }
    if signal.len() < factor {
        return Err(Error::Input(format!(
            "signal length {} shorter than decimation factor {factor}",
            signal.len()
        )));
    }
    let cutoff = 0.4 * fs_hz / factor as f64;
    let lp = design_butterworth_lowpass(4, cutoff, fs_hz)?;
    let filtered = filtfilt(signal, &lp)?;
    Ok(filtered.into_iter().step_by(factor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn bandpass_edges_at_minus_3_db() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        assert_eq!(f.sections().len(), 3, "order-n band-pass has n sections");
        for edge in [4.0, 40.0] {
            let db = f.magnitude_db(edge);
            assert!((-3.1..=-2.9).contains(&db), "|H({edge})| = {db} dB");
        }
        let center = (4.0f64 * 40.0).sqrt();
        let db = f.magnitude_db(center);
        assert!((-0.05..=0.0).contains(&db), "|H(center)| = {db} dB");
    }

    #[test]
    fn inverted_edges_and_nyquist_rejected() {
        assert!(matches!(
            design_butterworth_bandpass(3, 40.0, 4.0, 100.0),
            Err(crate::Error::Design(_))
        ));
        assert!(matches!(
            design_butterworth_bandpass(3, 4.0, 50.0, 100.0),
            Err(crate::Error::Design(_))
        ));
    }

    #[test]
    fn notch_kills_center_and_passes_elsewhere() {
        let f = design_notch(60.0, 30.0, 1000.0).unwrap();
        assert!(f.magnitude_db(60.0) < -30.0);
        assert!(f.magnitude_db(10.0) > -0.1);
        // |H| > -1 dB outside the center/q neighborhood
        for freq in [30.0, 50.0, 70.0, 120.0, 300.0] {
            assert!(f.magnitude_db(freq) > -1.0, "f = {freq}");
        }
        assert!(matches!(design_notch(600.0, 30.0, 1000.0), Err(crate::Error::Design(_))));
    }

    #[test]
    fn all_pipeline_designs_are_stable() {
        for order in 1..=8 {
            for (lo, hi, fs) in [(4.0, 40.0, 100.0), (0.01, 100.0, 1000.0), (4.0, 8.0, 100.0)] {
                let f = design_butterworth_bandpass(order, lo, hi, fs).unwrap();
                assert!(f.max_pole_magnitude() < 1.0 - 1e-9, "order {order} {lo}-{hi}");
            }
            let f = design_butterworth_lowpass(order, 40.0, 1000.0).unwrap();
            assert!(f.max_pole_magnitude() < 1.0 - 1e-9);
        }
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    /// amplitude of the `f` Hz component by quadrature projection
    /// (a sampled tone need not hit its analog peak, so max|y| underreads)
    fn tone_amplitude(y: &[f64], f: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in y.iter().enumerate() {
            let ph = 2.0 * PI * f * i as f64 / fs;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        2.0 * re.hypot(im) / y.len() as f64
    }

    /// lag of the cross-correlation peak between two equal-length series
    fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
        let n = a.len() as i64;
        let mut best = (0i64, f64::NEG_INFINITY);
        for lag in -max_lag..=max_lag {
            let mut acc = 0.0;
            for i in 0..n {
                let j = i + lag;
                if j >= 0 && j < n {
                    acc += a[i as usize] * b[j as usize];
                }
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        best.0
    }

    #[test]
    fn filtfilt_in_band_sinusoid_unit_gain_zero_lag() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        let x = sine(20.0, 100.0, 600);
        let y = filtfilt(&x, &f).unwrap();
        assert_eq!(y.len(), x.len());
        let amp = tone_amplitude(&y[100..500], 20.0, 100.0);
        assert!((0.97..=1.0).contains(&amp), "amplitude {amp}");
        assert_eq!(xcorr_peak_lag(&x[100..500], &y[100..500], 6), 0);
    }

    #[test]
    fn filtfilt_rejects_dc() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        let x = vec![5.0; 600];
        let y = filtfilt(&x, &f).unwrap();
        let peak = y[60..540].iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 1e-3, "residual DC {peak}");
    }

    #[test]
    fn filtfilt_time_reversal_symmetry() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        let mut rng = seed::rng(42, "dsp-rev");
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = filtfilt(&x, &f).unwrap();
        let xr: Vec<f64> = x.iter().rev().cloned().collect();
        let yr = filtfilt(&xr, &f).unwrap();
        for (a, b) in y.iter().zip(yr.iter().rev()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn filtfilt_is_linear() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        let mut rng = seed::rng(43, "dsp-lin");
        let x: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (1.7, -0.4);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = filtfilt(&mixed, &f).unwrap();
        let fx = filtfilt(&x, &f).unwrap();
        let fy = filtfilt(&y, &f).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs[i] - (alpha * fx[i] + beta * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn filtfilt_rejects_short_signals() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        assert!(matches!(filtfilt(&vec![0.0; 20], &f), Err(crate::Error::Input(_))));
    }

    #[test]
    fn decimate_lengths_and_tone_round_trip() {
        let x = sine(5.0, 1000.0, 1000);
        let y = decimate(&x, 10, 1000.0).unwrap();
        assert_eq!(y.len(), 100);

        // factor 1: anti-alias filter only
        let y1 = decimate(&x, 1, 1000.0).unwrap();
        assert_eq!(y1.len(), 1000);

        // 5 Hz tone survives 1000 -> 100 Hz within 2% amplitude
        let expected = sine(5.0, 100.0, 100);
        let amp = y[10..90].iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.02, "amplitude {amp}");
        for i in 10..90 {
            assert!((y[i] - expected[i]).abs() < 0.02, "sample {i}: {} vs {}", y[i], expected[i]);
        }

        assert!(matches!(decimate(&x, 0, 1000.0), Err(crate::Error::Input(_))));
    }

    #[test]
    fn decimate_composes_within_one_percent_rms() {
        // band-limited input: sum of low-frequency tones
        let fs = 1200.0;
        let n = 2400;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 3.0 * t).sin() + 0.5 * (2.0 * PI * 7.0 * t).cos()
            })
            .collect();
        let once = decimate(&x, 6, fs).unwrap();
        let twice = decimate(&decimate(&x, 2, fs).unwrap(), 3, fs / 2.0).unwrap();
        assert_eq!(once.len(), twice.len());
        let core = 20..once.len() - 20;
        let rms_ref: f64 =
            (once[core.clone()].iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt();
        let rms_diff: f64 = (once[core.clone()]
            .iter()
            .zip(&twice[core.clone()])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / core.len() as f64)
            .sqrt();
        assert!(rms_diff / rms_ref < 0.01, "relative RMS {}", rms_diff / rms_ref);
    }

    #[test]
    fn zero_phase_on_band_limited_noise() {
        let f = design_butterworth_bandpass(3, 4.0, 40.0, 100.0).unwrap();
        // seeded random in-band mixture
        let mut rng = seed::rng(44, "dsp-phase");
        let n = 800;
        let mut x = vec![0.0; n];
        for _ in 0..12 {
            let freq = rng.gen_range(6.0..35.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = rng.gen_range(0.3..1.0);
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * freq * i as f64 / 100.0 + phase).sin();
            }
        }
        let y = filtfilt(&x, &f).unwrap();
        assert_eq!(xcorr_peak_lag(&x[100..700], &y[100..700], 8), 0);
    }
}
