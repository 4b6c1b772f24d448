//! Reconstruction, abundance and classification figures of merit.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// `sqrt(‖Y − WH‖² / (P L))`.
pub fn reconstruction_error(y: ArrayView2<f64>, w: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<f64> {
    if w.nrows() != y.nrows() || w.ncols() != h.nrows() || h.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "Y {:?}, W {:?}, H {:?}",
            y.dim(),
            w.dim(),
            h.dim()
        )));
    }
    let residual = &y - &w.dot(&h);
    Ok((residual.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt())
}

/// `sqrt(‖H_true − Ĥ‖² / (P R))`.
pub fn abundance_rmse(h_true: ArrayView2<f64>, h_hat: ArrayView2<f64>) -> Result<f64> {
    if h_true.dim() != h_hat.dim() {
        return Err(Error::DimensionMismatch(format!("H_true {:?}, H {:?}", h_true.dim(), h_hat.dim())));
    }
    let sum: f64 = h_true.iter().zip(&h_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / h_true.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationScores {
    pub kappa: f64,
    pub f1_mean: f64,
    pub f1: Vec<f64>,
    /// `confusion[[i, j]]` counts pixels of true class `i` predicted as `j`.
    pub confusion: Array2<usize>,
}

/// Cohen's kappa and per-class F1 from paired 0-based class ids.
pub fn classification_scores(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<ClassificationScores> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} ground-truth pixels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut confusion = Array2::<usize>::zeros((num_classes, num_classes));
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidParameter(format!(
                "class id {} out of range 1..={num_classes}",
                p.max(t) + 1
            )));
        }
        confusion[[t, p]] += 1;
    }

    let total = truth.len() as f64;
    let rows: Vec<f64> = confusion.rows().into_iter().map(|r| r.sum() as f64).collect();
    let cols: Vec<f64> = confusion.columns().into_iter().map(|c| c.sum() as f64).collect();
    let agree = confusion.diag().sum() as f64;
    let p_o = agree / total;
    let p_e: f64 = rows.iter().zip(&cols).map(|(r, c)| r * c).sum::<f64>() / (total * total);
    let kappa = if p_o == 1.0 { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };

    let f1: Vec<f64> = (0..num_classes)
        .map(|i| {
            let tp = confusion[[i, i]] as f64;
            // 2 tp / (2 tp + fp + fn) equals the harmonic mean of precision and recall
            let denom = rows[i] + cols[i];
            if tp == 0.0 || denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect();
    let f1_mean = f1.iter().sum::<f64>() / num_classes as f64;
    Ok(ClassificationScores { kappa, f1_mean, f1, confusion })
}

/// Pairs predictions with ground truth over `mask`, then scores them.
pub fn masked_scores(
    predicted: &[usize],
    truth: &[Option<usize>],
    mask: &[bool],
    num_classes: usize,
) -> Result<ClassificationScores> {
    if predicted.len() != truth.len() || mask.len() != truth.len() {
        return Err(Error::DimensionMismatch("prediction, truth and mask lengths differ".into()));
    }
    let (pred, gt): (Vec<usize>, Vec<usize>) = predicted
        .iter()
        .zip(truth)
        .zip(mask)
        .filter_map(|((&p, t), &m)| if m { t.map(|t| (p, t)) } else { None })
        .unzip();
    classification_scores(&pred, &gt, num_classes)
}
