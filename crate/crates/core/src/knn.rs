//! K-nearest-neighbour genre classification over a precomputed distance
//! matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{weighted_f1, EvalReport};
use crate::dataset::{Genre, Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::pairwise::DistanceMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel<L = Genre> {
    pub k: usize,
    pub train_ids: Vec<String>,
    /// Parallel to `train_ids`.
    pub labels: Vec<L>,
    pub metric: MetricKind,
}

impl<L> KnnModel<L> {
    pub fn new(k: usize, train_ids: Vec<String>, labels: Vec<L>, metric: MetricKind) -> Result<Self> {
        if train_ids.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} train ids vs {} labels",
                train_ids.len(),
                labels.len()
            )));
        }
        if k == 0 || k > train_ids.len() {
            return Err(Error::Config(format!("k = {k} is outside 1..={}", train_ids.len())));
        }
        Ok(Self {
            k,
            train_ids,
            labels,
            metric,
        })
    }
}

/// Majority vote over the `k` nearest training items.
///
/// Distance ties keep train order. Vote ties go to the class whose
/// neighbour distances, compared nearest first, are smaller, then to the
/// smallest label. Only comparisons between distances are used, so any
/// strictly increasing transform of the distances gives the same answer.
pub fn knn_predict<L: Ord + Clone>(model: &KnnModel<L>, distances: &[f64]) -> Result<L> {
    let n = model.train_ids.len();
    if distances.len() != n {
        return Err(Error::Input(format!(
            "{} distances for {n} train items",
            distances.len()
        )));
    }
    if model.k == 0 || model.k > n {
        return Err(Error::Config(format!("k = {} is outside 1..={n}", model.k)));
    }
    if let Some(bad) = distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(Error::Input(format!("invalid distance {bad}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let mut votes: BTreeMap<&L, Vec<f64>> = BTreeMap::new();
    for &i in &order[..model.k] {
        votes.entry(&model.labels[i]).or_default().push(distances[i]);
    }
    let closer = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .is_some_and(|o| o.is_lt())
    };
    let mut best: Option<(&L, Vec<f64>)> = None;
    // Labels arrive in ascending order, so strict comparisons keep the
    // smallest label on full ties.
    for (label, d) in votes {
        let better = match &best {
            None => true,
            Some((_, b)) => d.len() > b.len() || (d.len() == b.len() && closer(&d, b)),
        };
        if better {
            best = Some((label, d));
        }
    }
    Ok(best.expect("k >= 1").0.clone())
}

struct Indexed {
    train: Vec<usize>,
    train_labels: Vec<Genre>,
}

fn split_indices(
    dm: &DistanceMatrix,
    splits: &SplitAssignment,
    labels: &BTreeMap<String, Genre>,
    split: Split,
) -> Result<Vec<(usize, Genre)>> {
    let index = dm.index_of();
    splits
        .ids(split)
        .iter()
        .map(|id| {
            let i = *index
                .get(id.as_str())
                .ok_or_else(|| Error::Input(format!("split id {id} is missing from the distance matrix")))?;
            let g = *labels
                .get(id)
                .ok_or_else(|| Error::Input(format!("no genre label for {id}")))?;
            Ok((i, g))
        })
        .collect()
}

fn train_side(dm: &DistanceMatrix, splits: &SplitAssignment, labels: &BTreeMap<String, Genre>) -> Result<Indexed> {
    let train = split_indices(dm, splits, labels, Split::Train)?;
    if train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    Ok(Indexed {
        train: train.iter().map(|p| p.0).collect(),
        train_labels: train.iter().map(|p| p.1).collect(),
    })
}

fn classify(dm: &DistanceMatrix, side: &Indexed, queries: &[(usize, Genre)], k: usize) -> Result<Vec<Genre>> {
    let model = KnnModel::new(
        k,
        side.train.iter().map(|&i| dm.ids[i].clone()).collect(),
        side.train_labels.clone(),
        dm.metric,
    )?;
    queries
        .par_iter()
        .map(|&(q, _)| {
            let d: Vec<f64> = side.train.iter().map(|&t| dm.values[[q, t]]).collect();
            knn_predict(&model, &d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub best_f1: f64,
    /// `(k, validation weighted F1)` for every candidate.
    pub curve: Vec<(usize, f64)>,
}

impl KSelection {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("k,weighted_f1,selected\n");
        for &(k, f1) in &self.curve {
            let _ = writeln!(s, "{k},{f1},{}", u8::from(k == self.k));
        }
        s
    }
}

/// Sweeps `k_range` on the validation split using train-only neighbours.
/// Ties on F1 keep the smallest `k`.
pub fn select_k(
    dm: &DistanceMatrix,
    splits: &SplitAssignment,
    labels: &BTreeMap<String, Genre>,
    k_range: RangeInclusive<usize>,
) -> Result<KSelection> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(Error::Config(format!("invalid k range {k_range:?}")));
    }
    let side = train_side(dm, splits, labels)?;
    if *k_range.end() > side.train.len() {
        return Err(Error::Config(format!(
            "max k {} exceeds train size {}",
            k_range.end(),
            side.train.len()
        )));
    }
    let valid = split_indices(dm, splits, labels, Split::Valid)?;
    if valid.is_empty() {
        return Err(Error::Config("empty validation split".into()));
    }
    let truth: Vec<Genre> = valid.iter().map(|p| p.1).collect();
    let mut curve = Vec::new();
    for k in k_range {
        let pred = classify(dm, &side, &valid, k)?;
        curve.push((k, weighted_f1(&truth, &pred)?));
    }
    let (k, best_f1) = curve.iter().copied().fold(
        (0, f64::NEG_INFINITY),
        |acc, (k, f)| if f > acc.1 { (k, f) } else { acc },
    );
    Ok(KSelection { k, best_f1, curve })
}

/// Classifies the test split against train songs only.
pub fn knn_evaluate(
    dm: &DistanceMatrix,
    splits: &SplitAssignment,
    labels: &BTreeMap<String, Genre>,
    k: usize,
) -> Result<EvalReport> {
    let side = train_side(dm, splits, labels)?;
    let test = split_indices(dm, splits, labels, Split::Test)?;
    if test.is_empty() {
        return Err(Error::Config("empty test split".into()));
    }
    let truth: Vec<Genre> = test.iter().map(|p| p.1).collect();
    let pred = classify(dm, &side, &test, k)?;
    EvalReport::from_predictions(&truth, &pred)
}
