//! Proximal operators and projections used by the block updates.

use ndarray::{Array2, ArrayView2, ArrayViewMut1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::parallel;

/// Prox of `ι_{≥0} + τ‖·‖₁`: entrywise `max(0, x − τ)`.
pub fn prox_nonneg_l1(x: ArrayView2<f64>, threshold: f64) -> Array2<f64> {
    debug_assert!(threshold >= 0.0);
    x.mapv(|v| (v - threshold).max(0.0))
}

/// Projection on the nonnegative orthant.
pub fn project_nonneg(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Projects every column of `x` on the unit simplex `{u ≥ 0, Σu = 1}`.
pub fn project_simplex_columns(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    project_simplex_columns_in_place(&mut out)?;
    Ok(out)
}

pub fn project_simplex_columns_in_place(x: &mut Array2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::DimensionMismatch("cannot project on an empty simplex".into()));
    }
    if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteEntry(i, j));
    }
    match parallel::pool() {
        Some(pool) => pool.install(|| {
            x.axis_iter_mut(Axis(1)).into_par_iter().for_each(project_simplex_in_place);
        }),
        None => x.axis_iter_mut(Axis(1)).for_each(project_simplex_in_place),
    }
    Ok(())
}

/// Sort-based exact projection of one finite vector on the simplex.
///
/// The vector is first shifted by its maximum; projection commutes with shifts
/// along the all-ones direction, and the shifted support entries lie in `[-1, 0]`,
/// which keeps the output sum accurate even for inputs of magnitude 1e8.
pub fn project_simplex_in_place(mut v: ArrayViewMut1<f64>) {
    let top = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sorted: Vec<f64> = v.iter().map(|&x| x - top).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    v.mapv_inplace(|x| (x - top - tau).max(0.0));
}
