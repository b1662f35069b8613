//! Python bindings: synthetic session generation, preprocessing, the
//! five decoders, and evaluation metrics.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eegdec::baselines::{
    band_log_variance_features, fbcsp_predict, fbcsp_train, forest_predict, forest_train,
    FbcspModel, FilterBank, ForestConfig, ForestModel,
};
use eegdec::dataset::{self, SplitSpec};
use eegdec::dsp::{decimate, design_butterworth_bandpass, filtfilt};
use eegdec::eval::{accuracy, confusion, roc_ovr};
use eegdec::model::{
    apply_best, build_model, load_checkpoint, predict, save_checkpoint, train_from, Model,
    ModelKind, ModelSpec, TrainConfig, TrainState,
};
use eegdec::synthgen::{generate_session, SynthConfig};
use eegdec::tensorize::{default_layout, fit_normalizer, normalize, to_grid, NormStats, MOTOR_CHANNELS};

fn py_err(e: eegdec::Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// One epoched trial: per-channel series plus the class label.
#[pyclass]
#[derive(Clone)]
struct Trial {
    inner: dataset::Trial,
}

#[pymethods]
impl Trial {
    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner.channels.clone()
    }

    #[getter]
    fn data(&self) -> Vec<Vec<f64>> {
        self.inner.data.clone()
    }

    #[getter]
    fn fs_hz(&self) -> f64 {
        self.inner.fs_hz
    }

    #[getter]
    fn label(&self) -> u8 {
        self.inner.label
    }

    fn __repr__(&self) -> String {
        format!(
            "Trial(label={}, channels={}, samples={}, fs_hz={})",
            self.inner.label,
            self.inner.channels.len(),
            self.inner.n_samples(),
            self.inner.fs_hz
        )
    }
}

/// A continuous multichannel recording with event markers.
#[pyclass]
#[derive(Clone)]
struct Recording {
    inner: dataset::Recording,
}

#[pymethods]
impl Recording {
    #[getter]
    fn fs_hz(&self) -> f64 {
        self.inner.fs_hz
    }

    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner.channels.clone()
    }

    #[getter]
    fn samples(&self) -> Vec<Vec<f64>> {
        self.inner.samples.clone()
    }

    /// (onset_sample, class_id) pairs
    #[getter]
    fn events(&self) -> Vec<(usize, u8)> {
        self.inner.events.iter().map(|e| (e.onset_sample, e.class_id)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Recording(channels={}, samples={}, fs_hz={}, events={})",
            self.inner.channels.len(),
            self.inner.n_samples(),
            self.inner.fs_hz,
            self.inner.events.len()
        )
    }
}

/// Generate a synthetic six-class reaching session.
#[pyfunction]
#[pyo3(signature = (seed=0, trials_per_class=40, fs_hz=1000.0, trial_s=3.0,
                    inter_trial_s=2.0, n_channels=64, erd_depth=0.8,
                    noise_amp_uv=2.0, noise_exponent=1.0))]
#[allow(clippy::too_many_arguments)]
fn synth_session(
    seed: u64,
    trials_per_class: usize,
    fs_hz: f64,
    trial_s: f64,
    inter_trial_s: f64,
    n_channels: usize,
    erd_depth: f64,
    noise_amp_uv: f64,
    noise_exponent: f64,
) -> PyResult<Recording> {
    let config = SynthConfig {
        n_trials_per_class: trials_per_class,
        fs_hz,
        trial_s,
        inter_trial_s,
        n_channels,
        erd_depth,
        noise_amp_uv,
        noise_exponent,
        seed,
    };
    Ok(Recording { inner: generate_session(&config).map_err(py_err)? })
}

/// Decimate, band-pass (zero-phase Butterworth), select the 20 motor
/// channels, and cut epochs.
#[pyfunction]
#[pyo3(signature = (recording, decimate_factor=10, band_lo_hz=4.0, band_hi_hz=40.0,
                    filter_order=3, epoch_start_s=0.0, epoch_end_s=3.0))]
fn preprocess(
    recording: &Recording,
    decimate_factor: usize,
    band_lo_hz: f64,
    band_hi_hz: f64,
    filter_order: usize,
    epoch_start_s: f64,
    epoch_end_s: f64,
) -> PyResult<Vec<Trial>> {
    let rec = &recording.inner;
    if decimate_factor == 0 {
        return Err(PyValueError::new_err("decimate_factor must be >= 1"));
    }
    let decimated = if decimate_factor == 1 {
        rec.clone()
    } else {
        let samples = rec
            .samples
            .iter()
            .map(|ch| decimate(ch, decimate_factor, rec.fs_hz))
            .collect::<eegdec::Result<Vec<_>>>()
            .map_err(py_err)?;
        dataset::Recording {
            fs_hz: rec.fs_hz / decimate_factor as f64,
            channels: rec.channels.clone(),
            samples,
            events: rec
                .events
                .iter()
                .map(|e| dataset::EventMarker {
                    onset_sample: e.onset_sample / decimate_factor,
                    class_id: e.class_id,
                })
                .collect(),
        }
    };
    let bp = design_butterworth_bandpass(filter_order, band_lo_hz, band_hi_hz, decimated.fs_hz)
        .map_err(py_err)?;
    let samples = decimated
        .samples
        .iter()
        .map(|ch| filtfilt(ch, &bp))
        .collect::<eegdec::Result<Vec<_>>>()
        .map_err(py_err)?;
    let filtered = dataset::Recording { samples, ..decimated };
    let selected = dataset::select_channels_recording(&filtered, &MOTOR_CHANNELS).map_err(py_err)?;
    let trials = dataset::epoch(&selected, (epoch_start_s, epoch_end_s)).map_err(py_err)?;
    Ok(trials.into_iter().map(|inner| Trial { inner }).collect())
}

/// Stratified train/test split.
#[pyfunction]
#[pyo3(signature = (trials, train_fraction=0.8, seed=0))]
fn split_trials(
    trials: Vec<Trial>,
    train_fraction: f64,
    seed: u64,
) -> (Vec<Trial>, Vec<Trial>) {
    let inner: Vec<dataset::Trial> = trials.into_iter().map(|t| t.inner).collect();
    let (train, test) = dataset::split(&inner, &SplitSpec { train_fraction, seed });
    (
        train.into_iter().map(|inner| Trial { inner }).collect(),
        test.into_iter().map(|inner| Trial { inner }).collect(),
    )
}

#[pyfunction]
fn write_dataset(trials: Vec<Trial>, path: &str) -> PyResult<()> {
    let inner: Vec<dataset::Trial> = trials.into_iter().map(|t| t.inner).collect();
    dataset::write_trials(&inner, Path::new(path)).map_err(py_err)
}

#[pyfunction]
fn read_dataset(path: &str) -> PyResult<Vec<Trial>> {
    let trials = dataset::read_trials(Path::new(path)).map_err(py_err)?;
    Ok(trials.into_iter().map(|inner| Trial { inner }).collect())
}

enum Fitted {
    Nn { model: Model, stats: NormStats },
    Fbcsp(FbcspModel),
    Forest { model: ForestModel, bank: FilterBank },
}

/// One of the five decoders: inception3d, simple3d, shallow, fbcsp, rf.
#[pyclass]
struct Decoder {
    name: String,
    seed: u64,
    fitted: Option<Fitted>,
}

impl Decoder {
    fn nn_grids(trials: &[dataset::Trial]) -> eegdec::Result<Vec<eegdec::tensorize::GridTrial>> {
        let layout = default_layout();
        trials.iter().map(|t| to_grid(t, &layout)).collect()
    }
}

#[pymethods]
impl Decoder {
    #[new]
    #[pyo3(signature = (name, seed=0))]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        if !["inception3d", "simple3d", "shallow", "fbcsp", "rf"].contains(&name) {
            return Err(PyValueError::new_err(format!("unknown model '{name}'")));
        }
        Ok(Self { name: name.to_string(), seed, fitted: None })
    }

    #[pyo3(signature = (trials, epochs=3, batch_size=16, lr=2e-3, patience=20,
                        val_fraction=0.1, rf_trees=100))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        trials: Vec<Trial>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        patience: usize,
        val_fraction: f64,
        rf_trees: usize,
    ) -> PyResult<()> {
        let inner: Vec<dataset::Trial> = trials.into_iter().map(|t| t.inner).collect();
        self.fitted = Some(match self.name.as_str() {
            "fbcsp" => Fitted::Fbcsp(fbcsp_train(&inner).map_err(py_err)?),
            "rf" => {
                let fs = inner.first().map_or(100.0, |t| t.fs_hz);
                let bank = FilterBank::new(fs).map_err(py_err)?;
                let features = inner
                    .iter()
                    .map(|t| band_log_variance_features(t, &bank))
                    .collect::<eegdec::Result<Vec<_>>>()
                    .map_err(py_err)?;
                let labels: Vec<u8> = inner.iter().map(|t| t.label).collect();
                let model = forest_train(
                    &features,
                    &labels,
                    &ForestConfig { n_trees: rf_trees, seed: self.seed },
                )
                .map_err(py_err)?;
                Fitted::Forest { model, bank }
            }
            name => {
                let kind = ModelKind::parse(name).map_err(py_err)?;
                let grids = Self::nn_grids(&inner).map_err(py_err)?;
                let stats = fit_normalizer(&grids).map_err(py_err)?;
                let grids = normalize(&grids, &stats).map_err(py_err)?;
                let shape = grids[0].data.shape().to_vec();
                let mut spec = ModelSpec::paper(kind);
                spec.rows = shape[1];
                spec.cols = shape[2];
                spec.time = shape[3];
                let mut model = build_model(&spec, self.seed).map_err(py_err)?;
                let config = TrainConfig {
                    epochs,
                    batch_size,
                    lr,
                    seed: self.seed,
                    patience,
                    val_fraction,
                    ..TrainConfig::default()
                };
                let state = train_from(&mut model, &grids, &config, None).map_err(py_err)?;
                apply_best(&mut model, &state).map_err(py_err)?;
                Fitted::Nn { model, stats }
            }
        });
        Ok(())
    }

    /// Per-trial class probabilities (rows sum to 1).
    fn predict_proba(&self, trials: Vec<Trial>) -> PyResult<Vec<Vec<f64>>> {
        let inner: Vec<dataset::Trial> = trials.into_iter().map(|t| t.inner).collect();
        let fitted = self
            .fitted
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("decoder is not fitted; call fit() first"))?;
        match fitted {
            Fitted::Nn { model, stats } => {
                let grids = Self::nn_grids(&inner).map_err(py_err)?;
                let grids = normalize(&grids, stats).map_err(py_err)?;
                predict(model, &grids).map_err(py_err)
            }
            Fitted::Fbcsp(model) => fbcsp_predict(model, &inner).map_err(py_err),
            Fitted::Forest { model, bank } => {
                let features = inner
                    .iter()
                    .map(|t| band_log_variance_features(t, bank))
                    .collect::<eegdec::Result<Vec<_>>>()
                    .map_err(py_err)?;
                forest_predict(model, &features).map_err(py_err)
            }
        }
    }

    /// Write a checkpoint (CNN decoders only).
    fn save(&self, path: &str) -> PyResult<()> {
        match &self.fitted {
            Some(Fitted::Nn { model, .. }) => {
                save_checkpoint(model, &blank_state(), Path::new(path)).map_err(py_err)
            }
            Some(_) => Err(PyValueError::new_err("only CNN decoders support checkpoints")),
            None => Err(PyRuntimeError::new_err("decoder is not fitted")),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Decoder(name='{}', seed={}, fitted={})",
            self.name,
            self.seed,
            self.fitted.is_some()
        )
    }
}

fn blank_state() -> TrainState {
    TrainState {
        epoch_done: 0,
        stopped_early: false,
        adam_t: 0,
        adam_moments: Vec::new(),
        best_monitor: f64::INFINITY,
        since_best: 0,
        best_blocks: None,
        history: Vec::new(),
    }
}

/// Load a CNN decoder from a checkpoint written by `save` or the CLI.
#[pyfunction]
fn load_decoder(path: &str, norm_trials: Vec<Trial>) -> PyResult<Decoder> {
    let (mut model, state) = load_checkpoint(Path::new(path)).map_err(py_err)?;
    apply_best(&mut model, &state).map_err(py_err)?;
    let inner: Vec<dataset::Trial> = norm_trials.into_iter().map(|t| t.inner).collect();
    let grids = Decoder::nn_grids(&inner).map_err(py_err)?;
    let stats = fit_normalizer(&grids).map_err(py_err)?;
    Ok(Decoder {
        name: model.spec.kind.name().to_string(),
        seed: 0,
        fitted: Some(Fitted::Nn { model, stats }),
    })
}

/// Accuracy, per-class AUC/recall, and the confusion-count matrix.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    probs: Vec<Vec<f64>>,
    labels: Vec<u8>,
) -> PyResult<Bound<'py, PyDict>> {
    let acc = accuracy(&probs, &labels).map_err(py_err)?;
    let matrix = confusion(&probs, &labels).map_err(py_err)?;
    let curves = roc_ovr(&probs, &labels).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("accuracy", acc)?;
    out.set_item("confusion", matrix.counts.to_vec())?;
    let auc: Vec<Option<f64>> =
        curves.iter().map(|c| c.defined.then_some(c.auc)).collect();
    out.set_item("auc", auc)?;
    let normalized = matrix.normalized();
    let recall: Vec<Option<f64>> = (0..normalized.len()).map(|c| normalized[c][c]).collect();
    out.set_item("recall", recall)?;
    Ok(out)
}

#[pymodule]
fn eegdec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Recording>()?;
    m.add_class::<Trial>()?;
    m.add_class::<Decoder>()?;
    m.add_function(wrap_pyfunction!(synth_session, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(split_trials, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_decoder, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add("CLASS_NAMES", dataset::CLASS_NAMES.to_vec())?;
    Ok(())
}
