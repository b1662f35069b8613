//! Classical comparators: FBCSP (filter bank + one-vs-rest CSP +
//! softmax regression) and a random forest on band log-variance
//! features.
//!
//! Hyperparameters follow common practice (9 × 4 Hz bands, m = 2 filter
//! pairs, shrinkage γ = 0.05, 100 trees); no mutual-information feature
//! selection is applied.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{Trial, N_CLASSES};
use crate::dsp::{self, SosFilter};
use crate::seed;
use crate::{Error, Result};

pub const CSP_PAIRS: usize = 2;
pub const SHRINKAGE: f64 = 0.05;
pub const LOG_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Generalized symmetric eigenproblem
// ---------------------------------------------------------------------------

/// Solve A v = λ B v for symmetric A and positive-definite B via
/// Cholesky whitening (B = LLᵀ, symmetric eigendecomposition of
/// L⁻¹AL⁻ᵀ, back-substitution). Eigenvalues descending; eigenvectors
/// are the columns of the returned matrix, B-orthonormal.
pub fn eig_sym_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::Dimension(format!(
            "eig_sym_pair: A is {}×{}, B is {}×{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let chol = nalgebra::Cholesky::new(b.clone())
        .ok_or_else(|| Error::Numeric("eig_sym_pair: B is not positive definite".into()))?;
    let l = chol.l();
    // M = L⁻¹ A L⁻ᵀ
    let la = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&la.transpose())
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(m);
    // v = L⁻ᵀ u
    let vecs = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order.iter().map(|&i| vecs.column(i).into_owned()).collect::<Vec<_>>(),
    );
    Ok((values, vectors))
}

// ---------------------------------------------------------------------------
// Filter bank
// ---------------------------------------------------------------------------

/// Nine contiguous 4 Hz bands spanning 4–40 Hz, each a 3rd-order
/// zero-phase Butterworth at the pipeline rate.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub bands_hz: Vec<(f64, f64)>,
    filters: Vec<SosFilter>,
}

impl FilterBank {
    pub fn new(fs_hz: f64) -> Result<Self> {
        let mut bands_hz = Vec::new();
        let mut filters = Vec::new();
        for i in 0..9 {
            let lo = 4.0 + 4.0 * i as f64;
            let hi = lo + 4.0;
            bands_hz.push((lo, hi));
            filters.push(dsp::design_butterworth_bandpass(3, lo, hi, fs_hz)?);
        }
        Ok(Self { bands_hz, filters })
    }

    pub fn n_bands(&self) -> usize {
        self.filters.len()
    }

    pub fn filter_trial(&self, trial: &Trial, band: usize) -> Result<Trial> {
        let data = trial
            .data
            .iter()
            .map(|ch| dsp::filtfilt(ch, &self.filters[band]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trial { channels: trial.channels.clone(), data, fs_hz: trial.fs_hz, label: trial.label })
    }
}

// ---------------------------------------------------------------------------
// CSP
// ---------------------------------------------------------------------------

/// One fitted one-vs-rest CSP cell: 2m spatial filters as rows.
#[derive(Debug, Clone)]
pub struct CspEntry {
    pub w: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

fn trial_covariance(trial: &Trial) -> DMatrix<f64> {
    let n_ch = trial.data.len();
    let t = trial.n_samples();
    let x = DMatrix::from_fn(n_ch, t, |r, c| trial.data[r][c]);
    let mut cov = &x * x.transpose();
    let tr = cov.trace();
    if tr > 0.0 {
        cov /= tr;
    }
    cov
}

fn mean_shrunk_covariance(trials: &[&Trial]) -> DMatrix<f64> {
    let n_ch = trials[0].data.len();
    let mut cov = DMatrix::zeros(n_ch, n_ch);
    for t in trials {
        cov += trial_covariance(t);
    }
    cov /= trials.len() as f64;
    let tr = cov.trace();
    cov * (1.0 - SHRINKAGE) + DMatrix::identity(n_ch, n_ch) * (SHRINKAGE * tr / n_ch as f64)
}

/// Fit one CSP cell: solve C_a w = λ (C_a + C_rest) w on trial-averaged,
/// trace-normalized, shrunk covariances; keep the top-m and bottom-m
/// eigenvectors as filters.
pub fn csp_fit(trials_a: &[&Trial], trials_rest: &[&Trial], m: usize) -> Result<CspEntry> {
    if trials_a.len() < 2 || trials_rest.len() < 2 {
        return Err(Error::Input(format!(
            "CSP needs ≥ 2 trials per side, got {} vs {}",
            trials_a.len(),
            trials_rest.len()
        )));
    }
    let n_ch = trials_a[0].data.len();
    if 2 * m > n_ch {
        return Err(Error::Config(format!("m={m} pairs exceed {n_ch} channels")));
    }
    let c_a = mean_shrunk_covariance(trials_a);
    let c_rest = mean_shrunk_covariance(trials_rest);
    let (values, vectors) = eig_sym_pair(&c_a, &(&c_a + &c_rest))?;

    let mut rows = Vec::with_capacity(2 * m);
    let mut eigenvalues = Vec::with_capacity(2 * m);
    for i in (0..m).chain(n_ch - m..n_ch) {
        rows.push(vectors.column(i).transpose().into_owned());
        eigenvalues.push(values[i]);
    }
    Ok(CspEntry { w: DMatrix::from_rows(&rows), eigenvalues })
}

// ---------------------------------------------------------------------------
// Softmax regression
// ---------------------------------------------------------------------------

/// L2-regularized multinomial logistic regression, full-batch gradient
/// descent with a halving step-size safeguard.
#[derive(Debug, Clone)]
pub struct SoftmaxRegression {
    pub weights: DMatrix<f64>, // n_classes × n_features
    pub bias: DVector<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

const SOFTMAX_LAMBDA: f64 = 1e-3;
const SOFTMAX_MAX_ITERS: usize = 5000;
const SOFTMAX_TOL: f64 = 1e-6;

fn softmax_rows(logits: &mut DMatrix<f64>) {
    for mut row in logits.row_iter_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
}

impl SoftmaxRegression {
    pub fn train(features: &[Vec<f64>], labels: &[u8], n_classes: usize) -> Result<Self> {
        let n = features.len();
        if n == 0 || n != labels.len() {
            return Err(Error::Input("feature/label count mismatch".into()));
        }
        let d = features[0].len();
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature value".into()));
        }
        let x = DMatrix::from_fn(n, d, |r, c| features[r][c]);
        let mut w = DMatrix::<f64>::zeros(n_classes, d);
        let mut b = DVector::<f64>::zeros(n_classes);
        let lambda = SOFTMAX_LAMBDA;

        let loss_and_grad = |w: &DMatrix<f64>, b: &DVector<f64>| {
            let mut p = &x * w.transpose(); // n × k
            for mut row in p.row_iter_mut() {
                row += b.transpose();
            }
            softmax_rows(&mut p);
            let mut loss = 0.0;
            let mut delta = p; // becomes (p − y)/n
            for (i, &y) in labels.iter().enumerate() {
                loss -= delta[(i, y as usize)].max(LOG_FLOOR).ln();
                delta[(i, y as usize)] -= 1.0;
            }
            loss /= n as f64;
            delta /= n as f64;
            let gw = delta.transpose() * &x + w * lambda;
            let gb = delta.row_sum().transpose();
            loss += 0.5 * lambda * w.norm_squared();
            (loss, gw, gb)
        };

        let mut lr = 1.0;
        let (mut loss, mut gw, mut gb) = loss_and_grad(&w, &b);
        let mut iterations = 0;
        let mut grad_norm = (gw.norm_squared() + gb.norm_squared()).sqrt();
        while iterations < SOFTMAX_MAX_ITERS && grad_norm >= SOFTMAX_TOL {
            let w_next = &w - &gw * lr;
            let b_next = &b - &gb * lr;
            let (loss_next, gw_next, gb_next) = loss_and_grad(&w_next, &b_next);
            if loss_next <= loss {
                w = w_next;
                b = b_next;
                loss = loss_next;
                gw = gw_next;
                gb = gb_next;
                grad_norm = (gw.norm_squared() + gb.norm_squared()).sqrt();
                lr *= 1.1;
            } else {
                lr *= 0.5;
                if lr < 1e-12 {
                    break;
                }
            }
            iterations += 1;
        }
        Ok(Self { weights: w, bias: b, lambda, iterations, final_grad_norm: grad_norm })
    }

    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.weights.ncols();
        let mut out = Vec::with_capacity(features.len());
        for f in features {
            if f.len() != d {
                return Err(Error::Input(format!("expected {d} features, got {}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("non-finite feature value".into()));
            }
            let x = DVector::from_column_slice(f);
            let mut logits = DMatrix::from_iterator(1, self.weights.nrows(), {
                let z = &self.weights * &x + &self.bias;
                z.iter().copied().collect::<Vec<_>>()
            });
            softmax_rows(&mut logits);
            out.push(logits.iter().copied().collect());
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// FBCSP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FbcspModel {
    pub bank: FilterBank,
    pub m: usize,
    /// entries[band][class]
    pub entries: Vec<Vec<CspEntry>>,
    pub classifier: SoftmaxRegression,
}

/// log(var / Σvar) features for one band-filtered trial under one CSP cell.
fn csp_cell_features(filtered: &Trial, entry: &CspEntry) -> Vec<f64> {
    let n_ch = filtered.data.len();
    let t = filtered.n_samples();
    let x = DMatrix::from_fn(n_ch, t, |r, c| filtered.data[r][c]);
    let z = &entry.w * x;
    let vars: Vec<f64> = z
        .row_iter()
        .map(|row| {
            let mean = row.sum() / t as f64;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64
        })
        .collect();
    let total: f64 = vars.iter().sum();
    vars.iter()
        .map(|&v| {
            let ratio = if total > 0.0 { v / total } else { 0.0 };
            ratio.max(LOG_FLOOR).ln()
        })
        .collect()
}

/// Feature vector for one trial: per (band, class), the 2m log-variance
/// ratios. Length = n_bands × n_classes × 2m.
pub fn fbcsp_features(
    trial: &Trial,
    bank: &FilterBank,
    entries: &[Vec<CspEntry>],
) -> Result<Vec<f64>> {
    if entries.len() != bank.n_bands() || entries.iter().any(|e| e.is_empty()) {
        return Err(Error::State("CSP entries not fitted for every band".into()));
    }
    let mut features = Vec::with_capacity(bank.n_bands() * entries[0].len() * 2 * CSP_PAIRS);
    for (band, cells) in entries.iter().enumerate() {
        let filtered = bank.filter_trial(trial, band)?;
        for cell in cells {
            features.extend(csp_cell_features(&filtered, cell));
        }
    }
    Ok(features)
}

pub fn fbcsp_train(train: &[Trial]) -> Result<FbcspModel> {
    let first = train.first().ok_or_else(|| Error::Input("no training trials".into()))?;
    let bank = FilterBank::new(first.fs_hz)?;
    let entries: Vec<Vec<CspEntry>> = (0..bank.n_bands())
        .into_par_iter()
        .map(|band| {
            let filtered: Vec<Trial> =
                train.iter().map(|t| bank.filter_trial(t, band)).collect::<Result<_>>()?;
            (0..N_CLASSES as u8)
                .map(|class| {
                    let a: Vec<&Trial> = filtered.iter().filter(|t| t.label == class).collect();
                    let rest: Vec<&Trial> = filtered.iter().filter(|t| t.label != class).collect();
                    csp_fit(&a, &rest, CSP_PAIRS)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let features: Vec<Vec<f64>> = train
        .par_iter()
        .map(|t| fbcsp_features(t, &bank, &entries))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = train.iter().map(|t| t.label).collect();
    let classifier = SoftmaxRegression::train(&features, &labels, N_CLASSES)?;
    Ok(FbcspModel { bank, m: CSP_PAIRS, entries, classifier })
}

pub fn fbcsp_predict(model: &FbcspModel, trials: &[Trial]) -> Result<Vec<Vec<f64>>> {
    let features: Vec<Vec<f64>> = trials
        .par_iter()
        .map(|t| fbcsp_features(t, &model.bank, &model.entries))
        .collect::<Result<_>>()?;
    model.classifier.predict_proba(&features)
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, seed: 0 }
    }
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf { class: u8 },
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<TreeNode>,
    pub n_classes: usize,
    pub n_features: usize,
    pub oob_accuracy: f64,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> u8 {
    let mut best = 0usize;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u8
}

fn class_counts(indices: &[usize], labels: &[u8], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &i in indices {
        counts[labels[i] as usize] += 1;
    }
    counts
}

fn grow_tree(
    features: &[Vec<f64>],
    labels: &[u8],
    indices: &[usize],
    n_classes: usize,
    rng: &mut impl Rng,
) -> TreeNode {
    let counts = class_counts(indices, labels, n_classes);
    let node_gini = gini(&counts, indices.len());
    if node_gini == 0.0 {
        return TreeNode::Leaf { class: majority(&counts) };
    }

    let d = features[0].len();
    let n_candidates = (d as f64).sqrt().ceil() as usize;
    let candidates = rand::seq::index::sample(rng, d, n_candidates.min(d));

    let mut best: Option<(f64, usize, f64)> = None; // (weighted gini, feature, threshold)
    for feature in candidates {
        let mut vals: Vec<(f64, u8)> =
            indices.iter().map(|&i| (features[i][feature], labels[i])).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = vec![0usize; n_classes];
        let mut right = class_counts(indices, labels, n_classes);
        let total = indices.len() as f64;
        for k in 0..vals.len() - 1 {
            left[vals[k].1 as usize] += 1;
            right[vals[k].1 as usize] -= 1;
            if vals[k].0 == vals[k + 1].0 {
                continue;
            }
            let nl = k + 1;
            let nr = vals.len() - nl;
            let weighted = (nl as f64 / total) * gini(&left, nl)
                + (nr as f64 / total) * gini(&right, nr);
            if best.is_none_or(|(g, _, _)| weighted < g) {
                best = Some((weighted, feature, 0.5 * (vals[k].0 + vals[k + 1].0)));
            }
        }
    }

    match best {
        // a split must strictly reduce weighted impurity
        Some((g, feature, threshold)) if g < node_gini - 1e-15 => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                indices.iter().partition(|&&i| features[i][feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(grow_tree(features, labels, &l, n_classes, rng)),
                right: Box::new(grow_tree(features, labels, &r, n_classes, rng)),
            }
        }
        _ => TreeNode::Leaf { class: majority(&counts) },
    }
}

fn tree_predict(node: &TreeNode, x: &[f64]) -> u8 {
    match node {
        TreeNode::Leaf { class } => *class,
        TreeNode::Split { feature, threshold, left, right } => {
            if x[*feature] <= *threshold {
                tree_predict(left, x)
            } else {
                tree_predict(right, x)
            }
        }
    }
}

pub fn forest_train(
    features: &[Vec<f64>],
    labels: &[u8],
    config: &ForestConfig,
) -> Result<ForestModel> {
    let n = features.len();
    if n == 0 || n != labels.len() {
        return Err(Error::Input("feature/label count mismatch".into()));
    }
    let n_classes = N_CLASSES;
    let distinct = {
        let mut seen = [false; N_CLASSES];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Input("forest training needs ≥ 2 classes".into()));
    }

    // per-tree derived seeds keep results worker-count independent
    let grown: Vec<(TreeNode, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(config.seed, &format!("tree-{t}"));
            let bag: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            bag.iter().for_each(|&i| in_bag[i] = true);
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
            (grow_tree(features, labels, &bag, n_classes, &mut rng), oob)
        })
        .collect();

    let mut oob_votes = vec![vec![0usize; n_classes]; n];
    for (tree, oob) in &grown {
        for &i in oob {
            oob_votes[i][tree_predict(tree, &features[i]) as usize] += 1;
        }
    }
    let mut correct = 0usize;
    let mut counted = 0usize;
    for (i, votes) in oob_votes.iter().enumerate() {
        if votes.iter().sum::<usize>() == 0 {
            continue;
        }
        counted += 1;
        if majority(votes) == labels[i] {
            correct += 1;
        }
    }
    let oob_accuracy = if counted > 0 { correct as f64 / counted as f64 } else { 0.0 };
    Ok(ForestModel {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        n_classes,
        n_features: features[0].len(),
        oob_accuracy,
    })
}

/// Per-class vote fractions; argmax with ties to the lowest class id is
/// the majority-vote label.
pub fn forest_predict(model: &ForestModel, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(features.len());
    for x in features {
        if x.len() != model.n_features {
            return Err(Error::Input(format!(
                "expected {} features, got {}",
                model.n_features,
                x.len()
            )));
        }
        let mut votes = vec![0.0; model.n_classes];
        for tree in &model.trees {
            votes[tree_predict(tree, x) as usize] += 1.0;
        }
        let total: f64 = votes.iter().sum();
        out.push(votes.into_iter().map(|v| v / total).collect());
    }
    Ok(out)
}

/// Random-forest input features: per-channel log-variance in each filter
/// bank band (n_channels × n_bands values).
pub fn band_log_variance_features(trial: &Trial, bank: &FilterBank) -> Result<Vec<f64>> {
    let mut features = Vec::with_capacity(trial.data.len() * bank.n_bands());
    for band in 0..bank.n_bands() {
        let filtered = bank.filter_trial(trial, band)?;
        for ch in &filtered.data {
            let t = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / t;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
            features.push(var.max(LOG_FLOOR).ln());
        }
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_trial(label: u8, gen: impl Fn(usize, usize) -> f64) -> Trial {
        Trial {
            channels: (0..4).map(|c| format!("ch{c}")).collect(),
            data: (0..4).map(|c| (0..200).map(|t| gen(c, t)).collect()).collect(),
            fs_hz: 100.0,
            label,
        }
    }

    #[test]
    fn eig_diagonal_against_identity() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 1.0]));
        let b = DMatrix::identity(3, 3);
        let (values, _) = eig_sym_pair(&a, &b).unwrap();
        assert_eq!(values, vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn eig_random_spd_pair_residual() {
        let mut rng = seed::rng(5, "eig-test");
        let m = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&m + m.transpose()) * 0.5;
        let q = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let b = &q * q.transpose() + DMatrix::identity(5, 5) * 0.5;
        let (values, vectors) = eig_sym_pair(&a, &b).unwrap();
        for i in 0..5 {
            let v = vectors.column(i);
            let residual = (&a * v - &b * v * values[i]).norm();
            assert!(residual < 1e-8, "pair {i}: residual {residual}");
            if i > 0 {
                assert!(values[i] <= values[i - 1]);
            }
        }
    }

    #[test]
    fn eig_2x2_matches_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (values, _) = eig_sym_pair(&a, &b).unwrap();
        // det(A − λB) = 0 → (det B)λ² − (a11 b22 + a22 b11 − 2 a12 b12)λ + det A = 0
        let (pa, pb, pc) = (
            b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)],
            -(a[(0, 0)] * b[(1, 1)] + a[(1, 1)] * b[(0, 0)] - 2.0 * a[(0, 1)] * b[(0, 1)]),
            a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        );
        let disc = (pb * pb - 4.0 * pa * pc).sqrt();
        let hi = (-pb + disc) / (2.0 * pa);
        let lo = (-pb - disc) / (2.0 * pa);
        assert!((values[0] - hi).abs() < 1e-10);
        assert!((values[1] - lo).abs() < 1e-10);
    }

    #[test]
    fn eig_rejects_indefinite_b() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(eig_sym_pair(&a, &b), Err(Error::Numeric(_))));
    }

    fn variance_contrast_trials(seed_tag: &str, active: usize) -> Vec<Trial> {
        let mut rng = seed::rng(3, seed_tag);
        (0..10)
            .map(|_| {
                let noise: Vec<Vec<f64>> = (0..2)
                    .map(|c| {
                        (0..200)
                            .map(|_| {
                                let scale = if c == active { 1.0 } else { 0.01 };
                                rng.gen_range(-scale..scale)
                            })
                            .collect()
                    })
                    .collect();
                Trial {
                    channels: vec!["ch0".into(), "ch1".into()],
                    data: noise,
                    fs_hz: 100.0,
                    label: 0,
                }
            })
            .collect()
    }

    #[test]
    fn csp_recovers_the_variance_axis() {
        let a = variance_contrast_trials("csp-a", 0);
        let rest = variance_contrast_trials("csp-rest", 1);
        let ar: Vec<&Trial> = a.iter().collect();
        let rr: Vec<&Trial> = rest.iter().collect();
        let entry = csp_fit(&ar, &rr, 1).unwrap();
        assert_eq!(entry.w.nrows(), 2);
        let first = entry.w.row(0);
        let cos = first[0].abs() / first.norm();
        assert!(cos > 0.99, "first filter not aligned with e1: cosine {cos}");

        // whitening identity on the fitting covariances
        let c_a = mean_shrunk_covariance(&ar);
        let c_rest = mean_shrunk_covariance(&rr);
        let id = &entry.w * (&c_a + &c_rest) * entry.w.transpose();
        let err = (&id - DMatrix::identity(2, 2)).abs().max();
        assert!(err < 1e-6, "whitening deviation {err}");
    }

    #[test]
    fn csp_symmetric_case_and_counting() {
        let a = variance_contrast_trials("csp-sym", 0);
        let ar: Vec<&Trial> = a.iter().collect();
        let entry = csp_fit(&ar, &ar, 1).unwrap();
        for &v in &entry.eigenvalues {
            assert!((v - 0.5).abs() < 1e-9, "eigenvalue {v}");
        }

        let wide: Vec<Trial> = (0..4)
            .map(|i| Trial {
                channels: (0..4).map(|c| format!("ch{c}")).collect(),
                data: (0..4)
                    .map(|c| (0..100).map(|t| ((i + c) * 31 + t) as f64 % 7.0).collect())
                    .collect(),
                fs_hz: 100.0,
                label: 0,
            })
            .collect();
        let wr: Vec<&Trial> = wide.iter().collect();
        assert_eq!(csp_fit(&wr, &wr, 1).unwrap().w.nrows(), 2);
        assert!(csp_fit(&wr[..1], &wr, 1).is_err());
    }

    fn sinusoid_trials(n_per_class: usize) -> Vec<Trial> {
        // class code: classes 0–3 put a strong 10 Hz tone on channel c,
        // classes 4–5 put a 22 Hz tone on channels 0–1
        let mut rng = seed::rng(17, "fbcsp-toy");
        let mut trials = Vec::new();
        for class in 0..6u8 {
            let (active, f_hz) =
                if class < 4 { (class as usize, 10.0) } else { (class as usize - 4, 22.0) };
            for _ in 0..n_per_class {
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                trials.push(toy_trial(class, |c, t| {
                    let x = t as f64 / 100.0;
                    let mut v = 0.2 * (std::f64::consts::TAU * 15.0 * x + phase + c as f64).sin();
                    if c == active {
                        v += 3.0 * (std::f64::consts::TAU * f_hz * x + phase).sin();
                    }
                    v
                }));
            }
        }
        trials
    }

    #[test]
    fn fbcsp_features_length_scale_invariance_and_floor() {
        let trials = sinusoid_trials(6);
        let model = fbcsp_train(&trials).unwrap();
        assert_eq!(model.entries.len(), 9);
        assert_eq!(model.bank.bands_hz[0], (4.0, 8.0));
        assert_eq!(model.bank.bands_hz[8], (36.0, 40.0));

        let f = fbcsp_features(&trials[0], &model.bank, &model.entries).unwrap();
        assert_eq!(f.len(), 9 * 6 * 4);

        let mut scaled = trials[0].clone();
        for ch in &mut scaled.data {
            for v in ch.iter_mut() {
                *v *= 7.5;
            }
        }
        let fs = fbcsp_features(&scaled, &model.bank, &model.entries).unwrap();
        for (a, b) in f.iter().zip(&fs) {
            assert!((a - b).abs() < 1e-9, "scale sensitivity: {a} vs {b}");
        }

        let zero = toy_trial(0, |_, _| 0.0);
        let fz = fbcsp_features(&zero, &model.bank, &model.entries).unwrap();
        assert!(fz.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn fbcsp_separates_the_toy_problem() {
        let trials = sinusoid_trials(8);
        let model = fbcsp_train(&trials).unwrap();
        let proba = fbcsp_predict(&model, &trials).unwrap();
        let correct = proba
            .iter()
            .zip(&trials)
            .filter(|(p, t)| {
                let pred = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                pred == t.label as usize
            })
            .count();
        assert_eq!(correct, trials.len());
        for p in &proba {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_regression_on_random_features_is_chance() {
        let mut rng = seed::rng(23, "softmax-chance");
        let mut gen = |n: usize| -> (Vec<Vec<f64>>, Vec<u8>) {
            let feats = (0..n)
                .map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let labels = (0..n).map(|i| (i % 6) as u8).collect();
            (feats, labels)
        };
        let (train_x, train_y) = gen(240);
        let model = SoftmaxRegression::train(&train_x, &train_y, 6).unwrap();
        let (test_x, test_y) = gen(240);
        let proba = model.predict_proba(&test_x).unwrap();
        let acc = proba
            .iter()
            .zip(&test_y)
            .filter(|(p, &y)| {
                p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == y as usize
            })
            .count() as f64
            / 240.0;
        assert!((acc - 1.0 / 6.0).abs() < 0.08, "accuracy {acc}");
        assert!(SoftmaxRegression::train(&[vec![f64::NAN]], &[0], 6).is_err());
    }

    fn threshold_features(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = seed::rng(29, "forest-toy");
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let v: f64 = rng.gen_range(-1.0..1.0);
            x.push(vec![v, rng.gen_range(-1.0..1.0)]);
            y.push(u8::from(v > 0.0));
        }
        (x, y)
    }

    #[test]
    fn forest_learns_a_threshold_and_is_deterministic() {
        let (x, y) = threshold_features(120);
        let config = ForestConfig { n_trees: 25, seed: 1 };
        let model = forest_train(&x, &y, &config).unwrap();
        let proba = forest_predict(&model, &x).unwrap();
        let correct = proba
            .iter()
            .zip(&y)
            .filter(|(p, &label)| {
                p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == label as usize
            })
            .count();
        assert_eq!(correct, x.len());
        assert!(model.oob_accuracy > 0.9);

        let again = forest_train(&x, &y, &config).unwrap();
        assert_eq!(forest_predict(&again, &x).unwrap(), proba);

        assert!(forest_train(&x, &vec![2u8; x.len()], &config).is_err());
    }

    #[test]
    fn forest_oob_is_chance_on_permuted_labels() {
        let mut rng = seed::rng(31, "forest-chance");
        let x: Vec<Vec<f64>> =
            (0..240).map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<u8> = (0..240).map(|i| (i % 6) as u8).collect();
        let model = forest_train(&x, &y, &ForestConfig { n_trees: 60, seed: 2 }).unwrap();
        assert!(
            (model.oob_accuracy - 1.0 / 6.0).abs() < 0.08,
            "OOB accuracy {}",
            model.oob_accuracy
        );
    }

    #[test]
    fn band_log_variance_feature_count() {
        let trial = toy_trial(0, |c, t| ((c * 31 + t) as f64 * 0.37).sin());
        let bank = FilterBank::new(100.0).unwrap();
        let f = band_log_variance_features(&trial, &bank).unwrap();
        assert_eq!(f.len(), 4 * 9);
        assert!(f.iter().all(|v| v.is_finite()));
    }
}
