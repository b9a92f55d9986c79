//! Multinomial logistic regression and the shared evaluation kit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Genre;
use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};

const ROWS_PER_CHUNK: usize = 32;

fn check_lengths<L>(truth: &[L], pred: &[L]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Input("no labels to evaluate".into()));
    }
    Ok(())
}

fn f1_parts<L: Ord + Clone>(truth: &[L], pred: &[L]) -> BTreeMap<L, (usize, f64)> {
    let classes: BTreeSet<&L> = truth.iter().chain(pred).collect();
    classes
        .into_iter()
        .map(|c| {
            let tp = truth.iter().zip(pred).filter(|(t, p)| *t == c && *p == c).count();
            let support = truth.iter().filter(|t| *t == c).count();
            let predicted = pred.iter().filter(|p| *p == c).count();
            let precision = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (c.clone(), (support, f1))
        })
        .collect()
}

/// Per-class F1 averaged with weights proportional to true-class support.
pub fn weighted_f1<L: Ord + Clone>(truth: &[L], pred: &[L]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let parts = f1_parts(truth, pred);
    let total: f64 = parts.values().map(|(s, f)| *s as f64 * f).sum();
    Ok(total / truth.len() as f64)
}

/// `out[i][j]` counts samples of class `class_order[i]` predicted as
/// `class_order[j]`.
pub fn confusion_matrix<L: Ord + Clone + std::fmt::Debug>(
    truth: &[L],
    pred: &[L],
    class_order: &[L],
) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Input("label lists differ in length".into()));
    }
    let index: BTreeMap<&L, usize> = class_order.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let lookup = |l: &L| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::Input(format!("label {l:?} not in class order")))
    };
    let mut m = vec![vec![0u64; class_order.len()]; class_order.len()];
    for (t, p) in truth.iter().zip(pred) {
        m[lookup(t)?][lookup(p)?] += 1;
    }
    Ok(m)
}

/// Outcome of one classifier run over the ten genres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<Genre>,
    pub weighted_f1: f64,
    pub per_class_f1: BTreeMap<Genre, f64>,
    pub support: BTreeMap<Genre, usize>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[Genre], pred: &[Genre]) -> Result<Self> {
        check_lengths(truth, pred)?;
        let classes = Genre::ALL.to_vec();
        let parts = f1_parts(truth, pred);
        let per_class_f1 = classes
            .iter()
            .map(|g| (*g, parts.get(g).map(|p| p.1).unwrap_or(0.0)))
            .collect();
        let support = classes
            .iter()
            .map(|g| (*g, truth.iter().filter(|t| *t == g).count()))
            .collect();
        Ok(Self {
            weighted_f1: weighted_f1(truth, pred)?,
            confusion: confusion_matrix(truth, pred, &classes)?,
            classes,
            per_class_f1,
            support,
        })
    }

    /// Fraction of all predictions falling in the given predicted columns.
    pub fn predicted_share(&self, genres: &[Genre]) -> f64 {
        let total: u64 = self.confusion.iter().flatten().sum();
        let cols: Vec<usize> = genres.iter().map(|g| g.index()).collect();
        let hit: u64 = self
            .confusion
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).sum::<u64>())
            .sum();
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for g in &self.classes {
            let _ = write!(s, ",{g}");
        }
        s.push('\n');
        for (g, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(s, "{g}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub step: f64,
    /// Stop once an accepted step improves the objective by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            step: 0.1,
            tol: 1e-7,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel<T, L = Genre> {
    /// `classes x features`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    /// Sorted; index `c` matches row `c` of `weights`.
    pub classes: Vec<L>,
    pub iterations: usize,
    pub objective: T,
}

fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let m = z.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in z.iter_mut() {
        *v = *v / s;
    }
}

/// Mean softmax cross-entropy plus `(l2/2)|W|^2`, and its gradient.
///
/// Rows are reduced in fixed chunks summed in order, so the value does not
/// depend on the number of worker threads.
pub fn logreg_loss_and_grad<T: Scalar>(
    weights: &Matrix<T>,
    bias: &[T],
    x: &Matrix<T>,
    y: &[usize],
    l2: T,
) -> (T, Matrix<T>, Vec<T>) {
    let (c, d) = weights.dim();
    let n = x.nrows();
    let rows: Vec<usize> = (0..n).collect();
    let partials: Vec<(T, Matrix<T>, Vec<T>)> = rows
        .par_chunks(ROWS_PER_CHUNK)
        .map(|chunk| {
            let mut loss = T::zero();
            let mut gw = Matrix::zeros((c, d));
            let mut gb = vec![T::zero(); c];
            let mut z = vec![T::zero(); c];
            for &i in chunk {
                let xi = x.row(i);
                for k in 0..c {
                    z[k] = bias[k] + weights.row(k).dot(&xi);
                }
                softmax_in_place(&mut z);
                loss = loss - z[y[i]].max(T::min_positive_value()).ln();
                z[y[i]] = z[y[i]] - T::one();
                for k in 0..c {
                    gb[k] = gb[k] + z[k];
                    let zk = z[k];
                    gw.row_mut(k).zip_mut_with(&xi, |g, &v| *g = *g + zk * v);
                }
            }
            (loss, gw, gb)
        })
        .collect();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut gw: Matrix<T> = Matrix::zeros((c, d));
    let mut gb = vec![T::zero(); c];
    for (l, w, b) in partials {
        loss = loss + l;
        gw = gw + w;
        for (acc, v) in gb.iter_mut().zip(b) {
            *acc = *acc + v;
        }
    }
    let reg: T = weights.iter().map(|&w| w * w).sum();
    let half = T::lit(0.5);
    let total = loss * inv_n + half * l2 * reg;
    let gw = ndarray::Zip::from(&gw)
        .and(weights)
        .map_collect(|&g: &T, &w: &T| g * inv_n + l2 * w);
    let gb = gb.into_iter().map(|g| g * inv_n).collect();
    (total, gw, gb)
}

/// Full-batch gradient descent from zero weights.
///
/// A step that increases the objective is rejected and the step size halved.
pub fn logreg_train<T: Scalar, L: Ord + Clone>(
    features: &Matrix<T>,
    labels: &[L],
    cfg: &LogRegConfig,
) -> Result<LogRegModel<T, L>> {
    if features.nrows() != labels.len() {
        return Err(Error::Input(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite feature value".into()));
    }
    let classes: Vec<L> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Config("logistic regression needs at least 2 classes".into()));
    }
    let index: BTreeMap<&L, usize> = classes.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let y: Vec<usize> = labels.iter().map(|l| index[l]).collect();
    let (c, d) = (classes.len(), features.ncols());
    let l2 = T::lit(cfg.l2);
    let mut step = T::lit(cfg.step);
    let mut weights = Matrix::zeros((c, d));
    let mut bias = vec![T::zero(); c];
    let (mut obj, mut gw, mut gb) = logreg_loss_and_grad(&weights, &bias, features, &y, l2);
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let cand_w = ndarray::Zip::from(&weights).and(&gw).map_collect(|&w, &g| w - step * g);
        let cand_b: Vec<T> = bias.iter().zip(&gb).map(|(&b, &g)| b - step * g).collect();
        let (new_obj, new_gw, new_gb) = logreg_loss_and_grad(&cand_w, &cand_b, features, &y, l2);
        if !new_obj.is_finite() || new_obj > obj {
            step = step * T::lit(0.5);
            if step < T::lit(1e-12) {
                break;
            }
            continue;
        }
        let improvement = obj - new_obj;
        weights = cand_w;
        bias = cand_b;
        obj = new_obj;
        gw = new_gw;
        gb = new_gb;
        if improvement < T::lit(cfg.tol) {
            break;
        }
    }
    Ok(LogRegModel {
        weights,
        bias,
        classes,
        iterations,
        objective: obj,
    })
}

impl<T: Scalar, L: Ord + Clone> LogRegModel<T, L> {
    /// Zero model over the given classes.
    pub fn zeros(mut classes: Vec<L>, features: usize) -> Self {
        classes.sort();
        Self {
            weights: Matrix::zeros((classes.len(), features)),
            bias: vec![T::zero(); classes.len()],
            classes,
            iterations: 0,
            objective: T::zero(),
        }
    }

    pub fn scores(&self, row: ndarray::ArrayView1<T>) -> Vec<T> {
        (0..self.classes.len())
            .map(|k| self.bias[k] + self.weights.row(k).dot(&row))
            .collect()
    }

    pub fn probabilities(&self, row: ndarray::ArrayView1<T>) -> Vec<T> {
        let mut z = self.scores(row);
        softmax_in_place(&mut z);
        z
    }
}

/// Argmax of class scores; ties go to the lexicographically first class.
pub fn logreg_predict<T: Scalar, L: Ord + Clone + Send + Sync>(
    model: &LogRegModel<T, L>,
    features: &Matrix<T>,
) -> Result<Vec<L>> {
    if features.ncols() != model.weights.ncols() {
        return Err(Error::Input(format!(
            "features have {} dims, model expects {}",
            features.ncols(),
            model.weights.ncols()
        )));
    }
    Ok((0..features.nrows())
        .into_par_iter()
        .map(|i| {
            let s = model.scores(features.row(i));
            let mut best = 0;
            for k in 1..s.len() {
                if s[k] > s[best] {
                    best = k;
                }
            }
            model.classes[best].clone()
        })
        .collect())
}

/// Per-dimension standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<T: Scalar>(train: &Matrix<T>) -> Self {
        let n = train.nrows().max(1) as f64;
        let d = train.ncols();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = train.column(j);
            let m = col.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
            let var = col.iter().map(|v| (v.to_f64_lossy() - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Self { mean, std }
    }

    /// Fits on the listed rows of `x` only.
    pub fn fit_rows<T: Scalar>(x: &Matrix<T>, rows: &[usize]) -> Self {
        Self::fit(&x.select(ndarray::Axis(0), rows))
    }

    /// Zero-variance dimensions map to 0.
    pub fn transform<T: Scalar>(&self, x: &Matrix<T>) -> Matrix<T> {
        Matrix::from_shape_fn(x.dim(), |(i, j)| {
            if self.std[j] > 0.0 {
                T::lit((x[[i, j]].to_f64_lossy() - self.mean[j]) / self.std[j])
            } else {
                T::zero()
            }
        })
    }
}

/// Trains one model per candidate `l2`, keeps the one with the best
/// validation weighted F1 (ties: smaller `l2`).
pub fn logreg_select_l2<T: Scalar, L: Ord + Clone + Send + Sync>(
    train_x: &Matrix<T>,
    train_y: &[L],
    valid_x: &Matrix<T>,
    valid_y: &[L],
    base: &LogRegConfig,
    candidates: &[f64],
) -> Result<(LogRegModel<T, L>, f64, Vec<(f64, f64)>)> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(LogRegModel<T, L>, f64)> = None;
    let mut curve = Vec::new();
    for l2 in sorted {
        let cfg = LogRegConfig { l2, ..base.clone() };
        let model = logreg_train(train_x, train_y, &cfg)?;
        let f1 = weighted_f1(valid_y, &logreg_predict(&model, valid_x)?)?;
        curve.push((l2, f1));
        if best.as_ref().is_none_or(|(_, b)| f1 > *b) {
            best = Some((model, f1));
        }
    }
    let (model, _) = best.ok_or_else(|| Error::Config("no l2 candidates".into()))?;
    let l2 = curve
        .iter()
        .fold(
            (f64::NAN, f64::NEG_INFINITY),
            |acc, &(l, f)| if f > acc.1 { (l, f) } else { acc },
        )
        .0;
    Ok((model, l2, curve))
}
