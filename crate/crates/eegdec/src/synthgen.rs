//! Seeded synthetic six-class reaching-EEG generator.
//!
//! The class code is classical sensorimotor rhythm modulation: each class
//! attenuates the 10 Hz idle rhythm (ERD) on a pair of adjacent C-row
//! channels and boosts the 22 Hz rhythm (ERS) on the CP-row pair below
//! them. A sub-Hz cue-locked slow potential is also injected; it sits
//! outside the 4–40 Hz analysis band on purpose, so a correct band-pass
//! stage must discard it. Channels beyond the 20 placed motor-strip
//! channels carry noise (and line interference) only.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::dataset::{EventMarker, Recording, CLASS_NAMES, N_CLASSES};
use crate::dsp::{self, SosFilter};
use crate::seed;
use crate::tensorize::MOTOR_CHANNELS;
use crate::{Error, Result};

pub const MU_BAND_HZ: (f64, f64) = (8.0, 12.0);
pub const BETA_BAND_HZ: (f64, f64) = (18.0, 26.0);

const MU_RHYTHM_HZ: f64 = 10.0;
const BETA_RHYTHM_HZ: f64 = 22.0;
const MU_AMP_UV: f64 = 8.0;
const BETA_AMP_UV: f64 = 4.0;
const LINE_HZ: f64 = 60.0;
const LINE_AMP_UV: f64 = 2.0;
const SLOW_HALF_PERIOD_S: f64 = 1.0; // half cycle of a 0.5 Hz cosine
const RAMP_S: f64 = 0.1;
const NOTCH_Q: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Mu,
    Beta,
}

impl Band {
    pub fn range_hz(self) -> (f64, f64) {
        match self {
            Band::Mu => MU_BAND_HZ,
            Band::Beta => BETA_BAND_HZ,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Mu => "mu",
            Band::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SignatureCell {
    pub channel: &'static str,
    pub band: Band,
    /// Rhythm amplitude becomes (1 − erd_depth × multiplier) during the
    /// trial: positive = ERD (attenuation), negative = ERS (boost).
    pub multiplier: f64,
}

#[derive(Debug, Clone)]
pub struct ClassSignature {
    pub class_id: u8,
    pub cells: Vec<SignatureCell>,
    pub slow_amp_uv: f64,
}

const FC_ROW: [&str; 6] = ["FC5", "FC3", "FC1", "FC2", "FC4", "FC6"];
const C_ROW: [&str; 7] = ["C5", "C3", "C1", "Cz", "C2", "C4", "C6"];
const CP_ROW: [&str; 7] = ["CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6"];
const SLOW_AMPS_UV: [f64; N_CLASSES] = [5.0, -5.0, 4.0, -4.0, 3.0, -3.0];

/// The fixed signature table. Class c has a strong focal pair — mu ERD
/// (multiplier 1.0) on C-row columns {c, c+1}, beta ERS (−0.7) on the
/// CP-row columns below — plus a graded multiplier in [0.3, 0.9] on every
/// remaining motor channel, following three phase-shifted cosine profiles
/// of the class angle 2πc/6 (mu over the FC row, mu over the rest of the
/// C row, beta ERS over the rest of the CP row). Adjacent classes keep
/// distinct focal pairs, and the graded profiles give each class a
/// distinct whole-strip mean band-power shift, so the signatures differ
/// both spatially and in spatially-averaged power.
pub fn class_signatures() -> Vec<ClassSignature> {
    (0..N_CLASSES)
        .map(|c| {
            let theta = std::f64::consts::TAU * c as f64 / N_CLASSES as f64;
            let grade = |phase: f64| 0.6 + 0.3 * (theta + phase).cos();
            let mut cells = vec![
                SignatureCell { channel: C_ROW[c], band: Band::Mu, multiplier: 1.0 },
                SignatureCell { channel: C_ROW[c + 1], band: Band::Mu, multiplier: 1.0 },
                SignatureCell { channel: CP_ROW[c], band: Band::Beta, multiplier: -0.7 },
                SignatureCell { channel: CP_ROW[c + 1], band: Band::Beta, multiplier: -0.7 },
            ];
            for ch in FC_ROW {
                cells.push(SignatureCell { channel: ch, band: Band::Mu, multiplier: grade(0.0) });
            }
            let third = std::f64::consts::TAU / 3.0;
            for (col, ch) in C_ROW.iter().enumerate() {
                if col != c && col != c + 1 {
                    cells.push(SignatureCell { channel: ch, band: Band::Mu, multiplier: grade(third) });
                }
            }
            for (col, ch) in CP_ROW.iter().enumerate() {
                if col != c && col != c + 1 {
                    cells.push(SignatureCell {
                        channel: ch,
                        band: Band::Beta,
                        multiplier: -grade(2.0 * third),
                    });
                }
            }
            ClassSignature { class_id: c as u8, cells, slow_amp_uv: SLOW_AMPS_UV[c] }
        })
        .collect()
}

pub fn signature_table_text() -> String {
    let mut s = String::from("# class signatures: channel band multiplier (slow_amp_uv)\n");
    for sig in class_signatures() {
        s.push_str(&format!(
            "class {} {} slow={}\n",
            sig.class_id, CLASS_NAMES[sig.class_id as usize], sig.slow_amp_uv
        ));
        for cell in &sig.cells {
            s.push_str(&format!("  {} {} {}\n", cell.channel, cell.band.name(), cell.multiplier));
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_trials_per_class: usize,
    pub fs_hz: f64,
    pub trial_s: f64,
    pub inter_trial_s: f64,
    pub n_channels: usize,
    /// fractional band-power attenuation of signature rhythms, in [0, 1]
    pub erd_depth: f64,
    pub noise_amp_uv: f64,
    pub noise_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_trials_per_class: 40,
            fs_hz: 1000.0,
            trial_s: 3.0,
            inter_trial_s: 2.0,
            n_channels: 64,
            erd_depth: 0.8,
            noise_amp_uv: 2.0,
            noise_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.erd_depth) {
            return Err(Error::Config(format!("erd_depth {} outside [0, 1]", self.erd_depth)));
        }
        for (name, v) in [
            ("fs_hz", self.fs_hz),
            ("trial_s", self.trial_s),
            ("inter_trial_s", self.inter_trial_s),
            ("noise_amp_uv", self.noise_amp_uv),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_trials_per_class == 0 || self.n_channels == 0 {
            return Err(Error::Config("trial and channel counts must be positive".into()));
        }
        Ok(())
    }
}

pub fn channel_names(n_channels: usize) -> Vec<String> {
    (0..n_channels)
        .map(|i| {
            if i < MOTOR_CHANNELS.len() {
                MOTOR_CHANNELS[i].to_string()
            } else {
                format!("EX{:02}", i - MOTOR_CHANNELS.len() + 1)
            }
        })
        .collect()
}

/// 1/f^exponent noise: Hermitian spectrum of seeded Gaussian phases with
/// k^(−e/2) magnitudes, inverse FFT, then RMS-normalized.
fn shaped_noise(
    n: usize,
    exponent: f64,
    rng: &mut impl Rng,
    fft: &Arc<dyn Fft<f64>>,
) -> Vec<f64> {
    let n_fft = fft.len();
    let mut spec = vec![Complex64::new(0.0, 0.0); n_fft];
    let half = n_fft / 2;
    for (k, s) in spec.iter_mut().enumerate().take(half).skip(1) {
        let mag = (k as f64).powf(-exponent / 2.0);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s = Complex64::new(re * mag, im * mag);
    }
    let re: f64 = rng.sample(StandardNormal);
    spec[half] = Complex64::new(re * (half as f64).powf(-exponent / 2.0), 0.0);
    for k in 1..half {
        spec[n_fft - k] = spec[k].conj();
    }
    fft.process(&mut spec);
    let mut out: Vec<f64> = spec.iter().take(n).map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v /= rms;
        }
    }
    out
}

struct Timeline {
    trial_n: usize,
    total_n: usize,
    onsets: Vec<usize>,
}

fn timeline(config: &SynthConfig, n_trials: usize) -> Timeline {
    let trial_n = (config.trial_s * config.fs_hz).round() as usize;
    let inter_n = (config.inter_trial_s * config.fs_hz).round() as usize;
    let step_n = trial_n + inter_n;
    let lead_n = inter_n;
    let onsets = (0..n_trials).map(|k| lead_n + k * step_n).collect();
    Timeline { trial_n, total_n: lead_n + n_trials * step_n, onsets }
}

/// Rhythm gating envelope: 1 between trials, (1 − erd_depth·mult) inside
/// a trial where this (channel, band) is in the class signature, with
/// raised-cosine ramps just inside the trial window.
fn band_envelope(
    tl: &Timeline,
    labels: &[u8],
    levels_by_class: &[Option<f64>; N_CLASSES],
    ramp_n: usize,
) -> Vec<f64> {
    let mut env = vec![1.0; tl.total_n];
    for (k, &label) in labels.iter().enumerate() {
        let Some(level) = levels_by_class[label as usize] else { continue };
        let on = tl.onsets[k];
        let seg = &mut env[on..on + tl.trial_n];
        seg.fill(level);
        for i in 0..ramp_n.min(tl.trial_n / 2) {
            let frac = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp_n as f64).cos());
            let v = 1.0 + (level - 1.0) * frac;
            seg[i] = v;
            seg[tl.trial_n - 1 - i] = v;
        }
    }
    env
}

/// Continuous session: seeded random class order, 1/f background on all
/// channels, gated idle rhythms + slow potentials on placed channels,
/// 60 Hz line interference, then the acquisition chain (8th-order
/// 0.01–100 Hz Butterworth band-pass and a 60 Hz notch), zero-phase.
pub fn generate_session(config: &SynthConfig) -> Result<Recording> {
    config.validate()?;
    let signatures = class_signatures();
    let n_trials = config.n_trials_per_class * N_CLASSES;

    let mut labels: Vec<u8> = (0..n_trials).map(|k| (k % N_CLASSES) as u8).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(&mut seed::rng(config.seed, "trial-order"));

    let tl = timeline(config, n_trials);
    let ramp_n = (RAMP_S * config.fs_hz).round() as usize;
    let slow_n = ((SLOW_HALF_PERIOD_S * config.fs_hz).round() as usize).min(tl.trial_n);

    let bandpass = dsp::design_butterworth_bandpass(8, 0.01, 100.0, config.fs_hz)?;
    let notch = dsp::design_notch(LINE_HZ, NOTCH_Q, config.fs_hz)?;

    let mut planner = FftPlanner::new();
    let fft: Arc<dyn Fft<f64>> =
        planner.plan_fft_inverse(tl.total_n.next_power_of_two());

    let names = channel_names(config.n_channels);
    let samples: Result<Vec<Vec<f64>>> = (0..config.n_channels)
        .into_par_iter()
        .map(|ch| {
            synth_channel(ch, &names[ch], config, &tl, &labels, &signatures, ramp_n, slow_n, &fft)
                .and_then(|x| acquisition_chain(&x, &bandpass, &notch))
        })
        .collect();

    let events = tl
        .onsets
        .iter()
        .zip(&labels)
        .map(|(&onset_sample, &class_id)| EventMarker { onset_sample, class_id })
        .collect();
    Ok(Recording { fs_hz: config.fs_hz, channels: names, samples: samples?, events })
}

#[allow(clippy::too_many_arguments)]
fn synth_channel(
    ch: usize,
    name: &str,
    config: &SynthConfig,
    tl: &Timeline,
    labels: &[u8],
    signatures: &[ClassSignature],
    ramp_n: usize,
    slow_n: usize,
    fft: &Arc<dyn Fft<f64>>,
) -> Result<Vec<f64>> {
    let mut rng = seed::rng(config.seed, &format!("channel-{ch}"));
    let mut x = shaped_noise(tl.total_n, config.noise_exponent, &mut rng, fft);
    for v in &mut x {
        *v *= config.noise_amp_uv;
    }

    let placed = ch < MOTOR_CHANNELS.len() && ch < config.n_channels;
    if placed {
        for (band, f_hz, amp) in
            [(Band::Mu, MU_RHYTHM_HZ, MU_AMP_UV), (Band::Beta, BETA_RHYTHM_HZ, BETA_AMP_UV)]
        {
            let mut levels: [Option<f64>; N_CLASSES] = [None; N_CLASSES];
            for sig in signatures {
                for cell in &sig.cells {
                    if cell.channel == name && cell.band == band {
                        levels[sig.class_id as usize] =
                            Some(1.0 - config.erd_depth * cell.multiplier);
                    }
                }
            }
            let env = band_envelope(tl, labels, &levels, ramp_n);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU * f_hz / config.fs_hz;
            for (t, v) in x.iter_mut().enumerate() {
                *v += amp * env[t] * (w * t as f64 + phase).sin();
            }
        }
        for (k, &label) in labels.iter().enumerate() {
            let sig = &signatures[label as usize];
            if sig.cells.iter().any(|c| c.channel == name) {
                let on = tl.onsets[k];
                for i in 0..slow_n {
                    x[on + i] += sig.slow_amp_uv
                        * (std::f64::consts::PI * i as f64 / slow_n as f64).sin();
                }
            }
        }
    }

    let line_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let w_line = std::f64::consts::TAU * LINE_HZ / config.fs_hz;
    for (t, v) in x.iter_mut().enumerate() {
        *v += LINE_AMP_UV * (w_line * t as f64 + line_phase).sin();
    }
    Ok(x)
}

fn acquisition_chain(x: &[f64], bandpass: &SosFilter, notch: &SosFilter) -> Result<Vec<f64>> {
    let y = dsp::filtfilt(x, bandpass)?;
    dsp::filtfilt(&y, notch)
}

// ---------------------------------------------------------------------------
// Spectral self-check
// ---------------------------------------------------------------------------

/// Welch PSD: Hann window, 50% overlap. Returns (freqs_hz, psd).
pub fn welch_psd(x: &[f64], fs_hz: f64, nperseg: usize) -> (Vec<f64>, Vec<f64>) {
    let n = nperseg.min(x.len()).max(2);
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()))
        .collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let hop = (n / 2).max(1);
    let fft = FftPlanner::new().plan_fft_forward(n);

    let half = n / 2;
    let mut psd = vec![0.0; half + 1];
    let mut n_segs = 0usize;
    let mut start = 0;
    while start + n <= x.len() {
        let mut buf: Vec<Complex64> = x[start..start + n]
            .iter()
            .zip(&window)
            .map(|(&v, &w)| Complex64::new(v * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            let scale = if k == 0 || (k == half && n % 2 == 0) { 1.0 } else { 2.0 };
            *p += scale * buf[k].norm_sqr() / (fs_hz * u);
        }
        n_segs += 1;
        start += hop;
    }
    if n_segs > 0 {
        for p in &mut psd {
            *p /= n_segs as f64;
        }
    }
    let freqs = (0..=half).map(|k| k as f64 * fs_hz / n as f64).collect();
    (freqs, psd)
}

pub fn band_power(freqs: &[f64], psd: &[f64], lo_hz: f64, hi_hz: f64) -> f64 {
    let df = if freqs.len() > 1 { freqs[1] - freqs[0] } else { 1.0 };
    freqs
        .iter()
        .zip(psd)
        .filter(|(&f, _)| f >= lo_hz && f <= hi_hz)
        .map(|(_, &p)| p * df)
        .sum()
}

#[derive(Debug, Clone)]
pub struct ChannelSpectrum {
    pub name: String,
    /// log-log PSD slope over 1–40 Hz, rhythm bands excluded from the fit
    pub slope: f64,
    /// peak PSD near 60 Hz relative to the 8–12 Hz peak, in dB
    pub line_residual_db: f64,
}

#[derive(Debug, Clone)]
pub struct ErdIndex {
    pub class_id: u8,
    pub channel: String,
    pub band: Band,
    /// trial band power / rest band power − 1
    pub index: f64,
    pub expected_sign: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub channels: Vec<ChannelSpectrum>,
    pub erd: Vec<ErdIndex>,
}

const WELCH_NPERSEG: usize = 1024;

fn psd_slope(freqs: &[f64], psd: &[f64]) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&f, &p) in freqs.iter().zip(psd) {
        let in_fit = f >= 1.0
            && f <= 40.0
            && !(7.0..=13.0).contains(&f)
            && !(17.0..=27.0).contains(&f)
            && p > 0.0;
        if in_fit {
            xs.push(f.log10());
            ys.push(p.log10());
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn peak_in_band(freqs: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    freqs
        .iter()
        .zip(psd)
        .filter(|(&f, _)| f >= lo && f <= hi)
        .map(|(_, &p)| p)
        .fold(0.0, f64::max)
}

/// Mean band power over a set of equal-role windows.
fn mean_window_power(
    x: &[f64],
    fs_hz: f64,
    windows: &[(usize, usize)],
    band: (f64, f64),
) -> f64 {
    let mut total = 0.0;
    for &(a, b) in windows {
        let (freqs, psd) = welch_psd(&x[a..b], fs_hz, WELCH_NPERSEG.min(b - a));
        total += band_power(&freqs, &psd, band.0, band.1);
    }
    total / windows.len() as f64
}

/// Per-channel PSD slope and notch residual, plus per-signature-cell ERD
/// indices (trial vs inter-trial band power). `trial_s` is the epoch
/// length the events refer to.
pub fn spectral_check(rec: &Recording, trial_s: f64) -> Result<SpectralReport> {
    rec.validate()?;
    let trial_n = (trial_s * rec.fs_hz).round() as usize;
    let n = rec.n_samples();

    let channels = rec
        .channels
        .iter()
        .zip(&rec.samples)
        .map(|(name, x)| {
            let (freqs, psd) = welch_psd(x, rec.fs_hz, WELCH_NPERSEG.min(n));
            let p60 = peak_in_band(&freqs, &psd, 59.0, 61.0);
            let p10 = peak_in_band(&freqs, &psd, 8.0, 12.0);
            ChannelSpectrum {
                name: name.clone(),
                slope: psd_slope(&freqs, &psd),
                line_residual_db: 10.0 * (p60 / p10).log10(),
            }
        })
        .collect();

    // rest windows: the gaps between one trial's end and the next onset
    let mut rest = Vec::new();
    for (i, e) in rec.events.iter().enumerate() {
        let a = e.onset_sample + trial_n;
        let b = rec.events.get(i + 1).map_or(n, |next| next.onset_sample);
        if b > a {
            rest.push((a, b));
        }
    }

    let mut erd = Vec::new();
    for sig in class_signatures() {
        let trials: Vec<(usize, usize)> = rec
            .events
            .iter()
            .filter(|e| e.class_id == sig.class_id)
            .map(|e| (e.onset_sample, (e.onset_sample + trial_n).min(n)))
            .collect();
        if trials.is_empty() {
            continue;
        }
        for cell in &sig.cells {
            let Ok(idx) = rec.channel_index(cell.channel) else { continue };
            let x = &rec.samples[idx];
            let band = cell.band.range_hz();
            let p_move = mean_window_power(x, rec.fs_hz, &trials, band);
            let p_rest = mean_window_power(x, rec.fs_hz, &rest, band);
            erd.push(ErdIndex {
                class_id: sig.class_id,
                channel: cell.channel.to_string(),
                band: cell.band,
                index: p_move / p_rest - 1.0,
                expected_sign: -cell.multiplier.signum(),
            });
        }
    }
    Ok(SpectralReport { channels, erd })
}

/// Plain-text ground-truth sidecar: events plus the signature table.
pub fn ground_truth_text(rec: &Recording) -> String {
    let mut s = String::from("# ground truth: onset_sample class_id class_name\n");
    for e in &rec.events {
        s.push_str(&format!(
            "{} {} {}\n",
            e.onset_sample, e.class_id, CLASS_NAMES[e.class_id as usize]
        ));
    }
    s.push('\n');
    s.push_str(&signature_table_text());
    s
}
