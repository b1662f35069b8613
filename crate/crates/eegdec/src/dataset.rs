//! Recordings, trials, the `EEGD` binary container, epoching, channel
//! selection, and stratified splitting.
//!
//! Class ids are fixed: 0=Backward, 1=Up, 2=Down, 3=Left, 4=Right,
//! 5=Forward.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::seed;
use crate::{Error, Result};

pub const N_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["Backward", "Up", "Down", "Left", "Right", "Forward"];

const MAGIC: &[u8; 4] = b"EEGD";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventMarker {
    pub onset_sample: usize,
    pub class_id: u8,
}

/// Continuous multi-channel recording with event markers.
#[derive(Debug, Clone)]
pub struct Recording {
    pub fs_hz: f64,
    pub channels: Vec<String>,
    /// per-channel series, all the same length
    pub samples: Vec<Vec<f64>>,
    pub events: Vec<EventMarker>,
}

impl Recording {
    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.samples.len() {
            return Err(Error::Dimension(format!(
                "{} channel names vs {} sample rows",
                self.channels.len(),
                self.samples.len()
            )));
        }
        for (i, a) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(a) {
                return Err(Error::Input(format!("duplicate channel name '{a}'")));
            }
        }
        let n = self.n_samples();
        if self.samples.iter().any(|s| s.len() != n) {
            return Err(Error::Dimension("ragged channel lengths".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if usize::from(e.class_id) >= N_CLASSES {
                return Err(Error::Input(format!("event {i}: class id {} out of range", e.class_id)));
            }
        }
        Ok(())
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Input(format!("channel '{name}' not present")))
    }
}

/// One epoched, labeled segment (channels × time).
#[derive(Debug, Clone)]
pub struct Trial {
    pub channels: Vec<String>,
    /// per-channel series
    pub data: Vec<Vec<f64>>,
    pub fs_hz: f64,
    pub label: u8,
}

impl Trial {
    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }
}

/// Stratified train/test split parameters. Per-class train counts are
/// floor(train_fraction × class total); the remainder goes to test.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

/// Cut one trial per event: samples [onset + start·fs, onset + end·fs).
pub fn epoch(recording: &Recording, window_s: (f64, f64)) -> Result<Vec<Trial>> {
    let (start, end) = window_s;
    if end <= start {
        return Err(Error::Input(format!("empty epoch window [{start}, {end}] s")));
    }
    let s0 = (start * recording.fs_hz).round() as i64;
    let s1 = (end * recording.fs_hz).round() as i64;
    let n = recording.n_samples() as i64;
    let mut trials = Vec::with_capacity(recording.events.len());
    for (i, ev) in recording.events.iter().enumerate() {
        let lo = ev.onset_sample as i64 + s0;
        let hi = ev.onset_sample as i64 + s1;
        if lo < 0 || hi > n {
            return Err(Error::Input(format!(
                "event {i} (onset {}, class {}): window [{lo}, {hi}) outside recording of {n} samples",
                ev.onset_sample, ev.class_id
            )));
        }
        let data = recording
            .samples
            .iter()
            .map(|ch| ch[lo as usize..hi as usize].to_vec())
            .collect();
        trials.push(Trial {
            channels: recording.channels.clone(),
            data,
            fs_hz: recording.fs_hz,
            label: ev.class_id,
        });
    }
    Ok(trials)
}

fn select_rows(
    channels: &[String],
    rows: &[Vec<f64>],
    names: &[&str],
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut out_names = Vec::with_capacity(names.len());
    let mut out_rows = Vec::with_capacity(names.len());
    for &name in names {
        let idx = channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Input(format!("channel '{name}' not present")))?;
        out_names.push(name.to_string());
        out_rows.push(rows[idx].clone());
    }
    Ok((out_names, out_rows))
}

/// Keep the requested channels, rows reordered to match the request.
pub fn select_channels_trial(trial: &Trial, names: &[&str]) -> Result<Trial> {
    let (channels, data) = select_rows(&trial.channels, &trial.data, names)?;
    Ok(Trial { channels, data, fs_hz: trial.fs_hz, label: trial.label })
}

pub fn select_channels_recording(rec: &Recording, names: &[&str]) -> Result<Recording> {
    let (channels, samples) = select_rows(&rec.channels, &rec.samples, names)?;
    Ok(Recording { fs_hz: rec.fs_hz, channels, samples, events: rec.events.clone() })
}

/// Stratified, seeded split. The union of the outputs is the input,
/// disjoint, with per-class train counts floor(fraction × class total).
pub fn split(trials: &[Trial], spec: &SplitSpec) -> (Vec<Trial>, Vec<Trial>) {
    let mut rng = seed::rng(spec.seed, "split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..N_CLASSES as u8 {
        let mut idx: Vec<usize> = trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.label == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n_train = (spec.train_fraction * idx.len() as f64).floor() as usize;
        for (k, &i) in idx.iter().enumerate() {
            if k < n_train {
                train.push(trials[i].clone());
            } else {
                test.push(trials[i].clone());
            }
        }
    }
    (train, test)
}

// ---------------------------------------------------------------------------
// EEGD binary container
// ---------------------------------------------------------------------------

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn fail(&self, reason: &str) -> Error {
        Error::Format { offset: self.pos as u64, reason: reason.to_string() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(&format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn encode_header(
    fs_hz: f64,
    channels: &[String],
    n_trials: u32,
    samples_per_trial: u32,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(fs_hz as f32).to_le_bytes());
    let n_ch = u16::try_from(channels.len())
        .map_err(|_| Error::Input(format!("too many channels: {}", channels.len())))?;
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&n_trials.to_le_bytes());
    out.extend_from_slice(&samples_per_trial.to_le_bytes());
    for name in channels {
        if !name.is_ascii() || name.len() > 255 {
            return Err(Error::Input(format!("channel name '{name}' not short ASCII")));
        }
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

fn finish(mut bytes: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

/// Serialize trials to the `EEGD` container (f32 samples, channel-major,
/// CRC-32 trailer). All trials must agree on channels, rate, and length.
pub fn encode_trials(trials: &[Trial]) -> Result<Vec<u8>> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Input("cannot write an empty trial set".into()))?;
    let spt = first.n_samples();
    for (i, t) in trials.iter().enumerate() {
        if t.channels != first.channels || t.n_samples() != spt || t.fs_hz != first.fs_hz {
            return Err(Error::Input(format!("trial {i} disagrees with trial 0 on layout")));
        }
        if usize::from(t.label) >= N_CLASSES {
            return Err(Error::Input(format!("trial {i}: label {} out of range", t.label)));
        }
    }
    let mut out = encode_header(
        first.fs_hz,
        &first.channels,
        u32::try_from(trials.len()).expect("trial count fits u32"),
        u32::try_from(spt).expect("trial length fits u32"),
    )?;
    for t in trials {
        out.push(t.label);
        for ch in &t.data {
            for &v in ch {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(finish(out))
}

pub fn decode_trials(bytes: &[u8]) -> Result<Vec<Trial>> {
    if bytes.len() < 4 {
        return Err(Error::Format { offset: 0, reason: "file shorter than magic".into() });
    }
    let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let crc_actual = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if crc_stored != crc_actual {
        return Err(Error::Format {
            offset: (bytes.len() - 4) as u64,
            reason: format!("CRC mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"),
        });
    }
    let mut r = ByteReader::new(&bytes[..bytes.len() - 4]);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, reason: "bad magic, expected \"EEGD\"".into() });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let fs_hz = f64::from(r.f32("fs_hz")?);
    let n_channels = r.u16("n_channels")? as usize;
    let n_trials = r.u32("n_trials")? as usize;
    let spt = r.u32("samples_per_trial")? as usize;
    let mut channels = Vec::with_capacity(n_channels);
    for i in 0..n_channels {
        let len = r.u8("channel name length")? as usize;
        let raw = r.take(len, "channel name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| r.fail(&format!("channel {i} name is not UTF-8")))?;
        channels.push(name.to_string());
    }
    let mut trials = Vec::with_capacity(n_trials);
    for ti in 0..n_trials {
        let label = r.u8("trial label")?;
        if usize::from(label) >= N_CLASSES {
            return Err(r.fail(&format!("trial {ti}: label {label} out of range")));
        }
        let mut data = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let mut ch = Vec::with_capacity(spt);
            for _ in 0..spt {
                ch.push(f64::from(r.f32("sample")?));
            }
            data.push(ch);
        }
        trials.push(Trial { channels: channels.clone(), data, fs_hz, label });
    }
    if r.pos != r.buf.len() {
        return Err(r.fail("trailing bytes after last trial"));
    }
    Ok(trials)
}

pub fn write_trials(trials: &[Trial], path: &Path) -> Result<()> {
    fs::write(path, encode_trials(trials)?)?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    decode_trials(&fs::read(path)?)
}

/// A continuous recording is stored as a single-"trial" container (label
/// 0, full length) plus a plain-text `<path>.events` sidecar of
/// `onset_sample class_id` lines.
pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    rec.validate()?;
    let mut out = encode_header(
        rec.fs_hz,
        &rec.channels,
        1,
        u32::try_from(rec.n_samples()).expect("recording length fits u32"),
    )?;
    out.push(0u8);
    for ch in &rec.samples {
        for &v in ch {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, finish(out))?;

    let mut sidecar = String::new();
    for e in &rec.events {
        sidecar.push_str(&format!("{} {}\n", e.onset_sample, e.class_id));
    }
    fs::write(events_path(path), sidecar)?;
    Ok(())
}

pub fn events_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".events");
    std::path::PathBuf::from(s)
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let trials = read_trials(path)?;
    if trials.len() != 1 {
        return Err(Error::Input(format!(
            "recording container must hold exactly one segment, found {}",
            trials.len()
        )));
    }
    let t = trials.into_iter().next().unwrap();
    let mut events = Vec::new();
    let text = fs::read_to_string(events_path(path))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<u64> {
            tok.and_then(|s| s.parse().ok()).ok_or_else(|| {
                Error::Input(format!("events sidecar line {}: expected 'onset class'", lineno + 1))
            })
        };
        let onset = parse(it.next())? as usize;
        let class = parse(it.next())? as u8;
        events.push(EventMarker { onset_sample: onset, class_id: class });
    }
    let rec =
        Recording { fs_hz: t.fs_hz, channels: t.channels, samples: t.data, events };
    rec.validate()?;
    Ok(rec)
}

/// CSV interoperability export: one file per trial, one row per sample,
/// columns = channels.
pub fn export_csv(trials: &[Trial], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, t) in trials.iter().enumerate() {
        let mut s = String::new();
        s.push_str(&t.channels.join(","));
        s.push('\n');
        for row in 0..t.n_samples() {
            let line: Vec<String> = t.data.iter().map(|ch| format!("{}", ch[row])).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        fs::write(dir.join(format!("trial_{i:04}_class{}.csv", t.label)), s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_trial(label: u8, seed: f64) -> Trial {
        Trial {
            channels: vec!["C3".into(), "Cz".into(), "C4".into()],
            data: (0..3)
                .map(|c| (0..10).map(|t| seed + c as f64 * 10.0 + t as f64).collect())
                .collect(),
            fs_hz: 100.0,
            label,
        }
    }

    fn toy_recording(n: usize, events: Vec<EventMarker>) -> Recording {
        Recording {
            fs_hz: 100.0,
            channels: vec!["C3".into(), "Cz".into(), "C4".into()],
            samples: (0..3).map(|c| (0..n).map(|t| (c * n + t) as f64).collect()).collect(),
            events,
        }
    }

    #[test]
    fn round_trip_is_byte_exact_after_first_write() {
        let trials: Vec<Trial> = (0..6).map(|i| toy_trial(i as u8, i as f64 * 0.25)).collect();
        let bytes1 = encode_trials(&trials).unwrap();
        let decoded = decode_trials(&bytes1).unwrap();
        let bytes2 = encode_trials(&decoded).unwrap();
        assert_eq!(bytes1, bytes2);
        assert_eq!(decoded.len(), 6);
        for (a, b) in decoded.iter().zip(&trials) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.channels, b.channels);
        }
    }

    #[test]
    fn corrupted_magic_and_crc_are_located() {
        let trials = vec![toy_trial(0, 0.0)];
        let good = encode_trials(&trials).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        // CRC covers the magic, so recompute it to isolate the magic check
        let body_len = bad_magic.len() - 4;
        let crc = crc32fast::hash(&bad_magic[..body_len]);
        bad_magic[body_len..].copy_from_slice(&crc.to_le_bytes());
        match decode_trials(&bad_magic) {
            Err(Error::Format { offset: 0, reason }) => assert!(reason.contains("magic")),
            other => panic!("expected located format error, got {other:?}"),
        }

        let mut bad_crc = good.clone();
        let mid = good.len() / 2;
        bad_crc[mid] ^= 0xFF;
        match decode_trials(&bad_crc) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("CRC")),
            other => panic!("expected CRC error, got {other:?}"),
        }

        match decode_trials(&good[..good.len() - 10]) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn epoch_cuts_exact_slices() {
        let events = vec![
            EventMarker { onset_sample: 100, class_id: 0 },
            EventMarker { onset_sample: 400, class_id: 5 },
        ];
        let rec = toy_recording(1000, events);
        let trials = epoch(&rec, (0.0, 3.0)).unwrap();
        assert_eq!(trials.len(), 2);
        assert_eq!(trials[0].n_samples(), 300);
        assert_eq!(trials[0].data[1][0], rec.samples[1][100]);
        assert_eq!(trials[1].data[2][299], rec.samples[2][699]);
        assert_eq!(trials[1].label, 5);

        assert!(epoch(&toy_recording(1000, vec![]), (0.0, 3.0)).unwrap().is_empty());
        assert!(matches!(epoch(&rec, (0.0, 0.0)), Err(Error::Input(_))));
        let late = toy_recording(1000, vec![EventMarker { onset_sample: 900, class_id: 1 }]);
        let err = epoch(&late, (0.0, 3.0)).unwrap_err();
        assert!(err.to_string().contains("event 0"));
    }

    #[test]
    fn select_channels_reorders_exactly() {
        let t = toy_trial(2, 0.0);
        let s = select_channels_trial(&t, &["C4", "C3"]).unwrap();
        assert_eq!(s.channels, vec!["C4", "C3"]);
        assert_eq!(s.data[0], t.data[2]);
        assert_eq!(s.data[1], t.data[0]);

        let id = select_channels_trial(&t, &["C3", "Cz", "C4"]).unwrap();
        assert_eq!(id.data, t.data);

        let err = select_channels_trial(&t, &["XX"]).unwrap_err();
        assert!(err.to_string().contains("XX"));
    }

    #[test]
    fn split_is_a_stratified_partition() {
        let mut trials = Vec::new();
        for class in 0..6u8 {
            for k in 0..40 {
                trials.push(toy_trial(class, k as f64));
            }
        }
        let spec = SplitSpec { train_fraction: 0.8, seed: 7 };
        let (train, test) = split(&trials, &spec);
        assert_eq!(train.len(), 192);
        assert_eq!(test.len(), 48);
        for class in 0..6u8 {
            assert_eq!(train.iter().filter(|t| t.label == class).count(), 32);
            assert_eq!(test.iter().filter(|t| t.label == class).count(), 8);
        }

        let (train2, _) = split(&trials, &spec);
        let key = |ts: &[Trial]| -> Vec<f64> { ts.iter().map(|t| t.data[0][0]).collect() };
        assert_eq!(key(&train), key(&train2), "same seed, same split");

        let (train3, _) = split(&trials, &SplitSpec { train_fraction: 0.8, seed: 8 });
        assert_ne!(key(&train), key(&train3), "different seed, different permutation");
        assert_eq!(train3.len(), 192);
    }

    #[test]
    fn recording_round_trip_with_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.eegd");
        let rec = toy_recording(
            500,
            vec![
                EventMarker { onset_sample: 10, class_id: 3 },
                EventMarker { onset_sample: 200, class_id: 0 },
            ],
        );
        write_recording(&rec, &path).unwrap();
        let back = read_recording(&path).unwrap();
        assert_eq!(back.events, rec.events);
        assert_eq!(back.channels, rec.channels);
        assert_eq!(back.n_samples(), 500);
    }

    #[test]
    fn csv_export_writes_one_file_per_trial() {
        let dir = tempfile::tempdir().unwrap();
        let trials = vec![toy_trial(0, 0.0), toy_trial(4, 1.0)];
        export_csv(&trials, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trial_0000_class0.csv")).unwrap();
        assert!(text.starts_with("C3,Cz,C4\n"));
        assert_eq!(text.lines().count(), 11);
        assert!(dir.path().join("trial_0001_class4.csv").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_preserves_labels_and_values(
            labels in proptest::collection::vec(0u8..6, 1..12),
            base in -100.0f64..100.0,
        ) {
            let trials: Vec<Trial> =
                labels.iter().map(|&l| toy_trial(l, base + l as f64)).collect();
            let bytes = encode_trials(&trials).unwrap();
            let back = decode_trials(&bytes).unwrap();
            prop_assert_eq!(back.len(), trials.len());
            for (a, b) in back.iter().zip(&trials) {
                prop_assert_eq!(a.label, b.label);
                // values narrow to f32 once, then are exact
                for (ra, rb) in a.data.iter().zip(&b.data) {
                    for (va, vb) in ra.iter().zip(rb) {
                        prop_assert_eq!(*va, f64::from(*vb as f32));
                    }
                }
            }
            prop_assert_eq!(encode_trials(&back).unwrap(), bytes);
        }
    }
}
