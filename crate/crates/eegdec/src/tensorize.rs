//! Mapping the channel axis onto a 3×7 scalp grid so trials become
//! (1 × rows × cols × time) model inputs, plus per-cell z-score
//! normalization fitted on training data only.

use crate::autodiff::Tensor;
use crate::dataset::Trial;
use crate::{Error, Result};

pub const GRID_ROWS: usize = 3;
pub const GRID_COLS: usize = 7;

/// The 20 selected motor-strip channels in layout order.
/// The source montage lists 19 names; Cz is included to complete the
/// central row (FCz is the ground electrode and stays absent).
pub const MOTOR_CHANNELS: [&str; 20] = [
    "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", //
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6", //
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
];

/// Channel-name → grid-cell map with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    placement: Vec<(String, usize, usize)>,
    mask: Vec<bool>,
}

impl GridLayout {
    pub fn new(rows: usize, cols: usize, placement: Vec<(String, usize, usize)>) -> Result<Self> {
        let mut mask = vec![false; rows * cols];
        for (i, (name, r, c)) in placement.iter().enumerate() {
            if *r >= rows || *c >= cols {
                return Err(Error::Config(format!("channel '{name}' placed out of bounds at ({r},{c})")));
            }
            if mask[r * cols + c] {
                return Err(Error::Config(format!("cell ({r},{c}) placed twice")));
            }
            if placement[..i].iter().any(|(n, _, _)| n == name) {
                return Err(Error::Config(format!("channel '{name}' placed twice")));
            }
            mask[r * cols + c] = true;
        }
        Ok(Self { rows, cols, placement, mask })
    }

    pub fn placement(&self) -> &[(String, usize, usize)] {
        &self.placement
    }

    pub fn position(&self, name: &str) -> Option<(usize, usize)> {
        self.placement.iter().find(|(n, _, _)| n == name).map(|&(_, r, c)| (r, c))
    }

    pub fn mask_at(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_placed(&self) -> usize {
        self.placement.len()
    }

    /// Plain-text serialization: one `channel row col` line per placement.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, r, c) in &self.placement {
            s.push_str(&format!("{name} {r} {c}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut placement = Vec::new();
        let mut max_r = 0usize;
        let mut max_c = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Input(format!("layout line {}: expected 'channel row col'", lineno + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let r: usize = parts[1].parse().map_err(|_| bad())?;
            let c: usize = parts[2].parse().map_err(|_| bad())?;
            max_r = max_r.max(r);
            max_c = max_c.max(c);
            placement.push((parts[0].to_string(), r, c));
        }
        if placement.is_empty() {
            return Err(Error::Input("empty layout text".into()));
        }
        Self::new(max_r + 1, max_c + 1, placement)
    }
}

/// FC/C/CP rows × lateral position. Col 3 of the FC row stays empty
/// (FCz is the recording ground).
pub fn default_layout() -> GridLayout {
    let mut placement = Vec::with_capacity(20);
    for (i, name) in MOTOR_CHANNELS.iter().enumerate() {
        let (row, col) = match i {
            0..=5 => (0, if i < 3 { i } else { i + 1 }),
            6..=12 => (1, i - 6),
            _ => (2, i - 13),
        };
        placement.push((name.to_string(), row, col));
    }
    GridLayout::new(GRID_ROWS, GRID_COLS, placement).expect("builtin layout is valid")
}

/// Tensorized trial: (1 × rows × cols × time) with masked cells at 0.
#[derive(Debug, Clone)]
pub struct GridTrial {
    pub data: Tensor,
    pub mask: Vec<bool>,
    pub label: u8,
    pub fs_hz: f64,
}

impl GridTrial {
    pub fn n_samples(&self) -> usize {
        self.data.shape()[3]
    }
}

pub fn to_grid(trial: &Trial, layout: &GridLayout) -> Result<GridTrial> {
    let t = trial.n_samples();
    let mut data = vec![0.0; layout.rows * layout.cols * t];
    for (name, r, c) in layout.placement() {
        let idx = trial
            .channels
            .iter()
            .position(|ch| ch == name)
            .ok_or_else(|| Error::Input(format!("trial is missing placed channel '{name}'")))?;
        let base = (r * layout.cols + c) * t;
        data[base..base + t].copy_from_slice(&trial.data[idx]);
    }
    Ok(GridTrial {
        data: Tensor::from_vec(vec![1, layout.rows, layout.cols, t], data)?,
        mask: layout.mask().to_vec(),
        label: trial.label,
        fs_hz: trial.fs_hz,
    })
}

/// Inverse of [`to_grid`] over placed channels.
pub fn from_grid(grid: &GridTrial, layout: &GridLayout) -> Trial {
    let t = grid.n_samples();
    let mut channels = Vec::with_capacity(layout.n_placed());
    let mut data = Vec::with_capacity(layout.n_placed());
    for (name, r, c) in layout.placement() {
        let base = (r * layout.cols + c) * t;
        channels.push(name.clone());
        data.push(grid.data.data()[base..base + t].to_vec());
    }
    Trial { channels, data, fs_hz: grid.fs_hz, label: grid.label }
}

/// Per-cell mean/std over all training trials and samples.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub rows: usize,
    pub cols: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

pub fn fit_normalizer(train: &[GridTrial]) -> Result<NormStats> {
    let first = train.first().ok_or_else(|| Error::Input("no trials to fit normalizer on".into()))?;
    let shape = first.data.shape().to_vec();
    let (rows, cols, t) = (shape[1], shape[2], shape[3]);
    let n_cells = rows * cols;
    let mut sum = vec![0.0; n_cells];
    let mut sumsq = vec![0.0; n_cells];
    for (i, g) in train.iter().enumerate() {
        if g.data.shape() != shape.as_slice() {
            return Err(Error::Input(format!("trial {i} grid shape differs from trial 0")));
        }
        let d = g.data.data();
        for cell in 0..n_cells {
            for &v in &d[cell * t..(cell + 1) * t] {
                sum[cell] += v;
                sumsq[cell] += v * v;
            }
        }
    }
    let count = (train.len() * t) as f64;
    let mut mean = vec![0.0; n_cells];
    let mut std = vec![0.0; n_cells];
    for cell in 0..n_cells {
        mean[cell] = sum[cell] / count;
        let var = (sumsq[cell] / count - mean[cell] * mean[cell]).max(0.0);
        std[cell] = var.sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { rows, cols, mean, std })
}

/// Per-cell z-scoring with stats fitted elsewhere; masked cells stay 0.
pub fn normalize(trials: &[GridTrial], stats: &NormStats) -> Result<Vec<GridTrial>> {
    let mut out = Vec::with_capacity(trials.len());
    for (i, g) in trials.iter().enumerate() {
        let shape = g.data.shape();
        if shape[1] != stats.rows || shape[2] != stats.cols {
            return Err(Error::Input(format!(
                "trial {i}: grid {}×{} does not match stats {}×{}",
                shape[1], shape[2], stats.rows, stats.cols
            )));
        }
        let t = shape[3];
        let mut data = g.data.data().to_vec();
        for cell in 0..stats.rows * stats.cols {
            let seg = &mut data[cell * t..(cell + 1) * t];
            if g.mask[cell] {
                for v in seg {
                    *v = (*v - stats.mean[cell]) / stats.std[cell];
                }
            } else {
                seg.fill(0.0);
            }
        }
        out.push(GridTrial {
            data: Tensor::from_vec(shape.to_vec(), data)?,
            mask: g.mask.clone(),
            label: g.label,
            fs_hz: g.fs_hz,
        });
    }
    Ok(out)
}
