use serde::{Deserialize, Serialize};

use super::Probabilities;
use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};

/// Index of the largest probability; ties go to the lower class.
pub fn argmax(p: &Probabilities) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

/// Classification report over the four rating classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    pub precision: [f64; NUM_CLASSES],
    pub recall: [f64; NUM_CLASSES],
    pub f1: [f64; NUM_CLASSES],
    pub support: [usize; NUM_CLASSES],
    /// One-vs-rest AUC; `None` when the class is absent from the truth (or
    /// is the only class present).
    pub auc: [Option<f64>; NUM_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

/// Per-class precision, recall and F1 of a square confusion matrix (rows =
/// truth). Undefined ratios are reported as 0.
pub fn confusion_scores(confusion: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = confusion.len();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    (precision, recall, f1)
}

/// Mann-Whitney estimate of the one-vs-rest AUC with midranks for ties.
fn one_vs_rest_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&s| positive[s]).count() as f64 * midrank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Scores predictions against ratings in `1..=4`.
///
/// Precision, recall and F1 are macro-averaged over the classes that occur
/// in the truth or the predictions; AUC over classes present in the truth.
pub fn evaluate(probs: &[Probabilities], labels: &[u8]) -> Result<Metrics> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty test set".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            found: probs.len(),
            context: "predictions vs labels",
        });
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (p, &l) in probs.iter().zip(labels) {
        if !(1..=4).contains(&l) {
            return Err(Error::Validation(format!("label {l} outside 1..=4")));
        }
        confusion[usize::from(l) - 1][argmax(p)] += 1;
    }
    let rows: Vec<Vec<usize>> = confusion.iter().map(|r| r.to_vec()).collect();
    let (p, r, f) = confusion_scores(&rows);

    let support: [usize; NUM_CLASSES] = std::array::from_fn(|c| confusion[c].iter().sum());
    let predicted: [usize; NUM_CLASSES] = std::array::from_fn(|c| confusion.iter().map(|row| row[c]).sum());
    let active: Vec<usize> = (0..NUM_CLASSES).filter(|&c| support[c] + predicted[c] > 0).collect();
    let mean_over = |v: &[f64]| active.iter().map(|&c| v[c]).sum::<f64>() / active.len() as f64;

    let auc: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|c| {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| usize::from(l) - 1 == c).collect();
        one_vs_rest_auc(&scores, &positive)
    });
    let defined: Vec<f64> = auc.iter().flatten().copied().collect();
    let trace: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();

    Ok(Metrics {
        samples: labels.len(),
        accuracy: trace as f64 / labels.len() as f64,
        precision: std::array::from_fn(|c| p[c]),
        recall: std::array::from_fn(|c| r[c]),
        f1: std::array::from_fn(|c| f[c]),
        support,
        auc,
        macro_precision: mean_over(&p),
        macro_recall: mean_over(&r),
        macro_f1: mean_over(&f),
        macro_auc: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        confusion,
    })
}
