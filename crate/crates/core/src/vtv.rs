//! Smoothed, weighted vectorial total variation on the pixel grid.
//!
//! For an attribution field `C` (one column per pixel) the regularizer is
//! `Σ_{m,n} β_{m,n} sqrt(‖c_{m+1,n} − c_{m,n}‖² + ‖c_{m,n+1} − c_{m,n}‖² + ε)`.
//! Forward differences that would leave the grid are zero.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::types::SpatialGrid;

fn check_dims(field: &ArrayView2<f64>, grid: &SpatialGrid) -> Result<()> {
    if field.ncols() != grid.num_pixels() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} columns, grid has {} pixels",
            field.ncols(),
            grid.num_pixels()
        )));
    }
    if grid.beta.dim() != (grid.rows, grid.cols) {
        return Err(Error::DimensionMismatch("edge weights do not match the grid".into()));
    }
    Ok(())
}

fn sq_diff(field: &ArrayView2<f64>, p: usize, q: usize) -> f64 {
    field.column(q).iter().zip(field.column(p)).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Per-pixel smoothed gradient magnitudes `sqrt(‖Δh‖² + ‖Δv‖² + ε)`, row-major.
fn magnitudes(field: &ArrayView2<f64>, grid: &SpatialGrid, epsilon: f64) -> Vec<f64> {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut out = Vec::with_capacity(rows * cols);
    for m in 0..rows {
        for n in 0..cols {
            let p = m * cols + n;
            let mut acc = epsilon;
            if m + 1 < rows {
                acc += sq_diff(field, p, p + cols);
            }
            if n + 1 < cols {
                acc += sq_diff(field, p, p + 1);
            }
            out.push(acc.sqrt());
        }
    }
    out
}

pub fn vtv_value(field: ArrayView2<f64>, grid: &SpatialGrid, epsilon: f64) -> Result<f64> {
    check_dims(&field, grid)?;
    if epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!("epsilon_tv must be >= 0, got {epsilon}")));
    }
    let mags = magnitudes(&field, grid, epsilon);
    Ok(grid.beta.iter().zip(&mags).map(|(b, s)| b * s).sum())
}

/// Exact gradient of [`vtv_value`] with respect to every column of `field`.
pub fn vtv_grad(field: ArrayView2<f64>, grid: &SpatialGrid, epsilon: f64) -> Result<Array2<f64>> {
    check_dims(&field, grid)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon_tv must be > 0, got {epsilon}")));
    }
    let (rows, cols) = (grid.rows, grid.cols);
    let mags = magnitudes(&field, grid, epsilon);
    let mut grad = Array2::zeros(field.dim());
    let channels = field.nrows();
    for m in 0..rows {
        for n in 0..cols {
            let p = m * cols + n;
            let w = grid.beta[[m, n]] / mags[p];
            let mut neighbors = [None, None];
            if m + 1 < rows {
                neighbors[0] = Some(p + cols);
            }
            if n + 1 < cols {
                neighbors[1] = Some(p + 1);
            }
            for q in neighbors.into_iter().flatten() {
                for i in 0..channels {
                    let diff = w * (field[[i, q]] - field[[i, p]]);
                    grad[[i, p]] -= diff;
                    grad[[i, q]] += diff;
                }
            }
        }
    }
    Ok(grad)
}

/// Edge-aware weights from the band-averaged image:
/// `β̃ = 1 / (‖∇y_pan‖ + σ)`, normalized to sum to one.
pub fn compute_edge_weights(observations: ArrayView2<f64>, grid: &SpatialGrid, sigma: f64) -> Result<SpatialGrid> {
    if observations.ncols() != grid.num_pixels() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} pixels, grid has {}",
            observations.ncols(),
            grid.num_pixels()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_beta must be > 0, got {sigma}")));
    }
    let (rows, cols) = (grid.rows, grid.cols);
    let pan = observations.mean_axis(ndarray::Axis(0)).ok_or(Error::DimensionMismatch("image has no band".into()))?;
    let mut beta = Array2::zeros((rows, cols));
    for m in 0..rows {
        for n in 0..cols {
            let p = m * cols + n;
            let dh = if m + 1 < rows { pan[p + cols] - pan[p] } else { 0.0 };
            let dv = if n + 1 < cols { pan[p + 1] - pan[p] } else { 0.0 };
            beta[[m, n]] = 1.0 / ((dh * dh + dv * dv).sqrt() + sigma);
        }
    }
    let total = beta.sum();
    beta /= total;
    Ok(SpatialGrid { rows, cols, beta })
}
