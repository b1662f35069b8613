//! Command-line front end: plain-text `key = value` configs, flag
//! overrides, and the synth → preprocess → train → evaluate pipeline.
//!
//! Every command echoes its effective configuration to the output
//! directory, and all randomness derives from the single `seed` key via
//! named purposes, so runs are reproducible byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;

use crate::baselines::{
    band_log_variance_features, fbcsp_predict, fbcsp_train, forest_predict, forest_train,
    FilterBank, ForestConfig,
};
use crate::dataset::{
    epoch, read_recording, read_trials, select_channels_recording, split, write_recording,
    write_trials, Recording, SplitSpec, Trial,
};
use crate::dsp::{decimate, design_butterworth_bandpass, filtfilt};
use crate::eval::{accuracy, confusion, metrics_text, permutation_test, render_figures, roc_ovr, Metrics};
use crate::model::{
    apply_best, build_model, history_text, load_checkpoint, predict, save_checkpoint, train_from,
    ModelKind, ModelSpec, TrainConfig,
};
use crate::seed;
use crate::synthgen::{generate_session, ground_truth_text, signature_table_text, SynthConfig};
use crate::tensorize::{default_layout, fit_normalizer, normalize, to_grid, GridTrial, NormStats, MOTOR_CHANNELS};
use crate::{Error, Result};

pub const COMPARE_MODELS: [&str; 5] = ["fbcsp", "rf", "shallow", "simple3d", "inception3d"];

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

/// Effective run configuration. Every key has a default; unknown keys in
/// a config file are rejected.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub model: String,
    pub out: String,
    pub dataset: String,
    // synth
    pub trials_per_class: usize,
    pub fs_hz: f64,
    pub trial_s: f64,
    pub inter_trial_s: f64,
    pub n_channels: usize,
    pub erd_depth: f64,
    pub noise_amp_uv: f64,
    pub noise_exponent: f64,
    // preprocess
    pub decimate_factor: usize,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub filter_order: usize,
    pub epoch_start_s: f64,
    pub epoch_end_s: f64,
    // train / evaluate
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_grad_norm: f64,
    pub checkpoint: String,
    pub resume: String,
    pub shuffle_labels: bool,
    pub split: String,
    // baselines / compare
    pub rf_trees: usize,
    pub folds: usize,
    pub permutations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: "inception3d".into(),
            out: "out".into(),
            dataset: "dataset.eegd".into(),
            trials_per_class: 40,
            fs_hz: 1000.0,
            trial_s: 3.0,
            inter_trial_s: 2.0,
            n_channels: 64,
            erd_depth: 0.8,
            noise_amp_uv: 2.0,
            noise_exponent: 1.0,
            decimate_factor: 10,
            band_lo_hz: 4.0,
            band_hi_hz: 40.0,
            filter_order: 3,
            epoch_start_s: 0.0,
            epoch_end_s: 3.0,
            train_fraction: 0.8,
            epochs: 3,
            batch_size: 16,
            lr: 2e-3,
            patience: 20,
            val_fraction: 0.1,
            max_grad_norm: 1.0,
            checkpoint: String::new(),
            resume: String::new(),
            shuffle_labels: false,
            split: "test".into(),
            rf_trees: 100,
            folds: 5,
            permutations: 10_000,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("config key '{key}': cannot parse '{value}'")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "model" => self.model = value.to_string(),
            "out" => self.out = value.to_string(),
            "dataset" => self.dataset = value.to_string(),
            "trials_per_class" => self.trials_per_class = parse_num(key, value)?,
            "fs_hz" => self.fs_hz = parse_num(key, value)?,
            "trial_s" => self.trial_s = parse_num(key, value)?,
            "inter_trial_s" => self.inter_trial_s = parse_num(key, value)?,
            "n_channels" => self.n_channels = parse_num(key, value)?,
            "erd_depth" => self.erd_depth = parse_num(key, value)?,
            "noise_amp_uv" => self.noise_amp_uv = parse_num(key, value)?,
            "noise_exponent" => self.noise_exponent = parse_num(key, value)?,
            "decimate_factor" => self.decimate_factor = parse_num(key, value)?,
            "band_lo_hz" => self.band_lo_hz = parse_num(key, value)?,
            "band_hi_hz" => self.band_hi_hz = parse_num(key, value)?,
            "filter_order" => self.filter_order = parse_num(key, value)?,
            "epoch_start_s" => self.epoch_start_s = parse_num(key, value)?,
            "epoch_end_s" => self.epoch_end_s = parse_num(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse_num(key, value)?,
            "val_fraction" => self.val_fraction = parse_num(key, value)?,
            "checkpoint" => self.checkpoint = value.to_string(),
            "resume" => self.resume = value.to_string(),
            "shuffle_labels" => self.shuffle_labels = parse_num(key, value)?,
            "split" => self.split = value.to_string(),
            "rf_trees" => self.rf_trees = parse_num(key, value)?,
            "folds" => self.folds = parse_num(key, value)?,
            "permutations" => self.permutations = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Echo of the effective configuration; re-running any command from
    /// this text reproduces the run.
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\nmodel = {}\nout = {}\ndataset = {}\n\
             trials_per_class = {}\nfs_hz = {}\ntrial_s = {}\ninter_trial_s = {}\n\
             n_channels = {}\nerd_depth = {}\nnoise_amp_uv = {}\nnoise_exponent = {}\n\
             decimate_factor = {}\nband_lo_hz = {}\nband_hi_hz = {}\nfilter_order = {}\n\
             epoch_start_s = {}\nepoch_end_s = {}\n\
             train_fraction = {}\nepochs = {}\nbatch_size = {}\nlr = {}\npatience = {}\n\
             val_fraction = {}\nmax_grad_norm = {}\ncheckpoint = {}\nresume = {}\nshuffle_labels = {}\nsplit = {}\n\
             rf_trees = {}\nfolds = {}\npermutations = {}\n",
            self.seed,
            self.model,
            self.out,
            self.dataset,
            self.trials_per_class,
            self.fs_hz,
            self.trial_s,
            self.inter_trial_s,
            self.n_channels,
            self.erd_depth,
            self.noise_amp_uv,
            self.noise_exponent,
            self.decimate_factor,
            self.band_lo_hz,
            self.band_hi_hz,
            self.filter_order,
            self.epoch_start_s,
            self.epoch_end_s,
            self.train_fraction,
            self.epochs,
            self.batch_size,
            self.lr,
            self.patience,
            self.val_fraction,
            self.max_grad_norm,
            self.checkpoint,
            self.resume,
            self.shuffle_labels,
            self.split,
            self.rf_trees,
            self.folds,
            self.permutations,
        )
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(&self.out)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_empty() {
            self.out_dir().join("model.ckpt")
        } else {
            PathBuf::from(&self.checkpoint)
        }
    }

    fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_trials_per_class: self.trials_per_class,
            fs_hz: self.fs_hz,
            trial_s: self.trial_s,
            inter_trial_s: self.inter_trial_s,
            n_channels: self.n_channels,
            erd_depth: self.erd_depth,
            noise_amp_uv: self.noise_amp_uv,
            noise_exponent: self.noise_exponent,
            seed: self.seed,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            patience: self.patience,
            val_fraction: self.val_fraction,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "eegdec", about = "Six-class reaching-movement EEG decoding pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// plain-text `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// root random seed (overrides config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// model name: inception3d, simple3d, shallow, fbcsp, rf
    #[arg(long)]
    pub model: Option<String>,
    /// output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// dataset path (input for most commands, output for `synth`)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// extra `key=value` config overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic six-class reaching session
    Synth(CommonArgs),
    /// Decimate, band-pass, select channels, and epoch a recording
    Preprocess(CommonArgs),
    /// Train a decoder and write a checkpoint plus history
    Train(CommonArgs),
    /// Score a trained decoder: metrics.txt, roc.svg, confusion.svg
    Evaluate(CommonArgs),
    /// Train all five models over seeded folds and compare them
    Compare(CommonArgs),
    /// Re-render figures from a saved prediction dump
    Plot(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth(c)
            | Command::Preprocess(c)
            | Command::Train(c)
            | Command::Evaluate(c)
            | Command::Compare(c)
            | Command::Plot(c) => c,
        }
    }
}

/// Config file first, then flags (flags win).
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_text(&text)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(model) = &args.model {
        cfg.model = model.clone();
    }
    if let Some(out) = &args.out {
        cfg.out = out.display().to_string();
    }
    if let Some(dataset) = &args.dataset {
        cfg.dataset = dataset.display().to_string();
    }
    if !COMPARE_MODELS.contains(&cfg.model.as_str()) {
        return Err(Error::Config(format!(
            "unknown model '{}' (expected one of {})",
            cfg.model,
            COMPARE_MODELS.join(", ")
        )));
    }
    Ok(cfg)
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(cfg.out_dir())?;
    std::fs::write(cfg.out_dir().join("config.txt"), cfg.to_text())?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    write_echo(&cfg)?;
    match cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Preprocess(_) => cmd_preprocess(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Evaluate(_) => cmd_evaluate(&cfg),
        Command::Compare(_) => cmd_compare(&cfg),
        Command::Plot(_) => cmd_plot(&cfg),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let synth = cfg.synth_config();
    let rec = generate_session(&synth)?;
    write_recording(&rec, Path::new(&cfg.dataset))?;
    std::fs::write(cfg.out_dir().join("ground_truth.txt"), ground_truth_text(&rec))?;
    std::fs::write(cfg.out_dir().join("signatures.txt"), signature_table_text())?;
    println!(
        "synth: wrote {} ({} trials, {} channels, {} Hz)",
        cfg.dataset,
        rec.events.len(),
        rec.channels.len(),
        rec.fs_hz
    );
    Ok(())
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let rec = read_recording(Path::new(&cfg.dataset))?;
    let factor = cfg.decimate_factor;
    if factor == 0 {
        return Err(Error::Config("decimate_factor must be >= 1".into()));
    }
    let decimated = if factor == 1 {
        rec
    } else {
        let fs_out = rec.fs_hz / factor as f64;
        let samples = rec
            .samples
            .iter()
            .map(|ch| decimate(ch, factor, rec.fs_hz))
            .collect::<Result<Vec<_>>>()?;
        let events = rec
            .events
            .iter()
            .map(|e| crate::dataset::EventMarker {
                onset_sample: e.onset_sample / factor,
                class_id: e.class_id,
            })
            .collect();
        Recording { fs_hz: fs_out, channels: rec.channels, samples, events }
    };

    let bp = design_butterworth_bandpass(cfg.filter_order, cfg.band_lo_hz, cfg.band_hi_hz, decimated.fs_hz)?;
    let samples = decimated
        .samples
        .iter()
        .map(|ch| filtfilt(ch, &bp))
        .collect::<Result<Vec<_>>>()?;
    let filtered = Recording { samples, ..decimated };

    let selected = select_channels_recording(&filtered, &MOTOR_CHANNELS)?;
    let trials = epoch(&selected, (cfg.epoch_start_s, cfg.epoch_end_s))?;
    let out_path = cfg.out_dir().join("epochs.eegd");
    write_trials(&trials, &out_path)?;
    println!(
        "preprocess: wrote {} ({} trials, {} channels, {} samples/trial, {} Hz)",
        out_path.display(),
        trials.len(),
        selected.channels.len(),
        trials.first().map_or(0, Trial::n_samples),
        selected.fs_hz
    );
    Ok(())
}

/// Train/test split with the optional label-shuffling null transform
/// applied to the training half only.
fn load_split(cfg: &RunConfig) -> Result<(Vec<Trial>, Vec<Trial>)> {
    let trials = read_trials(Path::new(&cfg.dataset))?;
    let (mut train, test) =
        split(&trials, &SplitSpec { train_fraction: cfg.train_fraction, seed: cfg.seed });
    if cfg.shuffle_labels {
        let mut labels: Vec<u8> = train.iter().map(|t| t.label).collect();
        labels.shuffle(&mut seed::rng(cfg.seed, "label-shuffle"));
        for (t, l) in train.iter_mut().zip(labels) {
            t.label = l;
        }
    }
    Ok((train, test))
}

fn grids_of(trials: &[Trial]) -> Result<Vec<GridTrial>> {
    let layout = default_layout();
    trials.iter().map(|t| to_grid(t, &layout)).collect()
}

pub fn norm_text(stats: &NormStats) -> String {
    let mut s = format!("{} {}\n", stats.rows, stats.cols);
    for cell in 0..stats.mean.len() {
        let _ = writeln!(s, "{:.17e} {:.17e}", stats.mean[cell], stats.std[cell]);
    }
    s
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (train_trials, test_trials) = load_split(cfg)?;
    match cfg.model.as_str() {
        "fbcsp" | "rf" => {
            let probs = fit_predict_baseline(&cfg.model, &train_trials, &test_trials, cfg)?;
            let labels: Vec<u8> = test_trials.iter().map(|t| t.label).collect();
            let acc = accuracy(&probs, &labels)?;
            let summary = format!("model = {}\ntest_accuracy = {acc:.6}\n", cfg.model);
            std::fs::write(cfg.out_dir().join("history.txt"), summary)?;
            println!("train: {} test accuracy {acc:.4}", cfg.model);
            Ok(())
        }
        name => {
            let kind = ModelKind::parse(name)?;
            let train_grids = grids_of(&train_trials)?;
            let stats = fit_normalizer(&train_grids)?;
            let train_grids = normalize(&train_grids, &stats)?;

            let (mut model, resume_state) = if cfg.resume.is_empty() {
                let spec = spec_for(kind, &train_grids)?;
                (build_model(&spec, cfg.seed)?, None)
            } else {
                let (model, state) = load_checkpoint(Path::new(&cfg.resume))?;
                if model.spec.kind != kind {
                    return Err(Error::Config(format!(
                        "resume checkpoint holds a {} model but --model is {name}",
                        model.spec.kind.name()
                    )));
                }
                (model, Some(state))
            };
            let state = train_from(&mut model, &train_grids, &cfg.train_config(), resume_state)?;
            save_checkpoint(&model, &state, &cfg.checkpoint_path())?;
            std::fs::write(cfg.out_dir().join("history.txt"), history_text(&state.history))?;
            std::fs::write(cfg.out_dir().join("norm.txt"), norm_text(&stats))?;
            std::fs::write(cfg.out_dir().join("layout.txt"), default_layout().to_text())?;
            let last = state.history.last();
            println!(
                "train: {name} {} epochs done{}, checkpoint {}",
                state.epoch_done,
                last.and_then(|h| h.val_acc)
                    .map(|a| format!(", val accuracy {a:.4}"))
                    .unwrap_or_default(),
                cfg.checkpoint_path().display()
            );
            Ok(())
        }
    }
}

fn spec_for(kind: ModelKind, grids: &[GridTrial]) -> Result<ModelSpec> {
    let first = grids.first().ok_or_else(|| Error::Input("empty training set".into()))?;
    let shape = first.data.shape();
    let mut spec = ModelSpec::paper(kind);
    spec.rows = shape[1];
    spec.cols = shape[2];
    spec.time = shape[3];
    Ok(spec)
}

fn fit_predict_baseline(
    name: &str,
    train: &[Trial],
    test: &[Trial],
    cfg: &RunConfig,
) -> Result<Vec<Vec<f64>>> {
    match name {
        "fbcsp" => {
            let model = fbcsp_train(train)?;
            fbcsp_predict(&model, test)
        }
        "rf" => {
            let fs = train.first().map_or(100.0, |t| t.fs_hz);
            let bank = FilterBank::new(fs)?;
            let feats = |trials: &[Trial]| -> Result<Vec<Vec<f64>>> {
                trials.iter().map(|t| band_log_variance_features(t, &bank)).collect()
            };
            let labels: Vec<u8> = train.iter().map(|t| t.label).collect();
            let forest = forest_train(
                &feats(train)?,
                &labels,
                &ForestConfig { n_trees: cfg.rf_trees, seed: seed::derive_seed(cfg.seed, "forest") },
            )?;
            forest_predict(&forest, &feats(test)?)
        }
        other => Err(Error::Config(format!("'{other}' is not a baseline model"))),
    }
}

/// Train a fresh model of any of the five kinds and return test-set
/// class probabilities. Shared by `compare` and baseline evaluation.
pub fn fit_predict(
    name: &str,
    train: &[Trial],
    test: &[Trial],
    cfg: &RunConfig,
) -> Result<Vec<Vec<f64>>> {
    match name {
        "fbcsp" | "rf" => fit_predict_baseline(name, train, test, cfg),
        _ => {
            let kind = ModelKind::parse(name)?;
            let train_grids = grids_of(train)?;
            let stats = fit_normalizer(&train_grids)?;
            let train_grids = normalize(&train_grids, &stats)?;
            let test_grids = normalize(&grids_of(test)?, &stats)?;
            let spec = spec_for(kind, &train_grids)?;
            let mut model = build_model(&spec, cfg.seed)?;
            let state = train_from(&mut model, &train_grids, &cfg.train_config(), None)?;
            apply_best(&mut model, &state)?;
            predict(&model, &test_grids)
        }
    }
}

fn predictions_text(probs: &[Vec<f64>], labels: &[u8]) -> String {
    let mut s = String::from("# label p0 p1 p2 p3 p4 p5\n");
    for (p, &l) in probs.iter().zip(labels) {
        let _ = write!(s, "{l}");
        for v in p {
            let _ = write!(s, " {v:.17e}");
        }
        s.push('\n');
    }
    s
}

pub fn read_predictions(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let text = std::fs::read_to_string(path)?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let mut fields = line.split_whitespace();
        let label: u8 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Input(format!("bad prediction line '{line}'")))?;
        let row: Vec<f64> = fields
            .map(|f| f.parse().map_err(|_| Error::Input(format!("bad probability '{f}'"))))
            .collect::<Result<_>>()?;
        labels.push(label);
        probs.push(row);
    }
    Ok((probs, labels))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (train_trials, test_trials) = load_split(cfg)?;
    let eval_trials = match cfg.split.as_str() {
        "test" => &test_trials,
        "train" => {
            eprintln!(
                "warning: evaluating on the training split — accuracies are leakage-inflated"
            );
            &train_trials
        }
        other => return Err(Error::Config(format!("split must be 'train' or 'test', got '{other}'"))),
    };

    let probs = match cfg.model.as_str() {
        "fbcsp" | "rf" => fit_predict_baseline(&cfg.model, &train_trials, eval_trials, cfg)?,
        name => {
            let kind = ModelKind::parse(name)?;
            let (mut model, state) = load_checkpoint(&cfg.checkpoint_path())?;
            if model.spec.kind != kind {
                return Err(Error::Config(format!(
                    "checkpoint holds a {} model but --model is {name}",
                    model.spec.kind.name()
                )));
            }
            apply_best(&mut model, &state)?;
            let train_grids = grids_of(&train_trials)?;
            let stats = fit_normalizer(&train_grids)?;
            let eval_grids = normalize(&grids_of(eval_trials)?, &stats)?;
            predict(&model, &eval_grids)?
        }
    };

    let labels: Vec<u8> = eval_trials.iter().map(|t| t.label).collect();
    std::fs::write(cfg.out_dir().join("predictions.txt"), predictions_text(&probs, &labels))?;
    write_metrics(cfg, &probs, &labels)
}

fn write_metrics(cfg: &RunConfig, probs: &[Vec<f64>], labels: &[u8]) -> Result<()> {
    let acc = accuracy(probs, labels)?;
    let metrics = Metrics {
        model_accuracies: vec![(cfg.model.clone(), acc)],
        confusion: confusion(probs, labels)?,
        roc: roc_ovr(probs, labels)?,
    };
    render_figures(&metrics, cfg.out_dir())?;
    let mut text = format!(
        "model = {}\nsplit = {}\nn_trials = {}\n",
        cfg.model,
        cfg.split,
        labels.len()
    );
    if cfg.split == "train" {
        text.push_str("warning = train-split evaluation (leakage)\n");
    }
    text.push_str(&metrics_text(&metrics));
    std::fs::write(cfg.out_dir().join("metrics.txt"), text)?;
    println!("evaluate: {} {} accuracy {acc:.4}", cfg.model, cfg.split);
    Ok(())
}

/// Per-fold accuracy grid for all five models on identical fold splits,
/// plus pairwise sign-flip permutation p-values on the fold accuracies.
pub struct Comparison {
    pub fold_accuracies: Vec<(String, Vec<f64>)>,
    pub p_values: Vec<(String, String, f64)>,
}

pub fn compare_models(trials: &[Trial], cfg: &RunConfig) -> Result<Comparison> {
    if cfg.folds < 2 {
        return Err(Error::Config(format!("compare needs >= 2 folds, got {}", cfg.folds)));
    }
    let mut fold_accuracies: Vec<(String, Vec<f64>)> =
        COMPARE_MODELS.iter().map(|m| (m.to_string(), Vec::new())).collect();
    for fold in 0..cfg.folds {
        let fold_seed = seed::derive_seed(cfg.seed, &format!("fold-{fold}"));
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = fold_seed;
        let (mut train, test) =
            split(trials, &SplitSpec { train_fraction: cfg.train_fraction, seed: fold_seed });
        if cfg.shuffle_labels {
            let mut labels: Vec<u8> = train.iter().map(|t| t.label).collect();
            labels.shuffle(&mut seed::rng(fold_seed, "label-shuffle"));
            for (t, l) in train.iter_mut().zip(labels) {
                t.label = l;
            }
        }
        let labels: Vec<u8> = test.iter().map(|t| t.label).collect();
        for (name, accs) in fold_accuracies.iter_mut() {
            let probs = fit_predict(name, &train, &test, &fold_cfg)?;
            accs.push(accuracy(&probs, &labels)?);
        }
    }
    let mut p_values = Vec::new();
    for i in 0..fold_accuracies.len() {
        for j in i + 1..fold_accuracies.len() {
            let (a, accs_a) = &fold_accuracies[i];
            let (b, accs_b) = &fold_accuracies[j];
            let p = permutation_test(accs_a, accs_b, cfg.permutations, cfg.seed)?;
            p_values.push((a.clone(), b.clone(), p));
        }
    }
    Ok(Comparison { fold_accuracies, p_values })
}

pub fn comparison_text(c: &Comparison) -> String {
    let mut s = String::from("# accuracy grid: model, per-fold accuracies, mean\n");
    for (name, accs) in &c.fold_accuracies {
        let _ = write!(s, "{name}");
        for a in accs {
            let _ = write!(s, " {a:.6}");
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let _ = writeln!(s, " | mean {mean:.6}");
    }
    s.push_str("# pairwise permutation p-values (two-sided, sign-flip)\n");
    for (a, b, p) in &c.p_values {
        let _ = writeln!(s, "p.{a}.vs.{b} = {p:.6}");
    }
    s
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let trials = read_trials(Path::new(&cfg.dataset))?;
    let comparison = compare_models(&trials, cfg)?;
    std::fs::write(cfg.out_dir().join("comparison.txt"), comparison_text(&comparison))?;
    let means: Vec<(String, f64)> = comparison
        .fold_accuracies
        .iter()
        .map(|(n, a)| (n.clone(), a.iter().sum::<f64>() / a.len() as f64))
        .collect();
    std::fs::write(cfg.out_dir().join("table.svg"), crate::eval::table_svg(&means))?;
    std::fs::write(cfg.out_dir().join("table.txt"), crate::eval::table_text(&means))?;
    println!("compare: {} models x {} folds", comparison.fold_accuracies.len(), cfg.folds);
    for (name, mean) in &means {
        println!("  {name:12} {mean:.4}");
    }
    Ok(())
}

pub fn cmd_plot(cfg: &RunConfig) -> Result<()> {
    let (probs, labels) = read_predictions(&cfg.out_dir().join("predictions.txt"))?;
    write_metrics(cfg, &probs, &labels)?;
    println!("plot: figures rewritten in {}", cfg.out);
    Ok(())
}
