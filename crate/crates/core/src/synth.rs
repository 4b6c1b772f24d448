//! Synthetic scenes with known endmembers, abundances and class map.
//!
//! The grid is cut into Voronoi patches; each patch carries one class, each
//! class a Dirichlet abundance profile. Abundances vary slightly per patch and
//! per pixel, observations get white Gaussian noise at an exact SNR.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::init::spectral_angle;

const MIN_ENDMEMBER_ANGLE: f64 = 5.0;
/// Minimum angle between a new endmember and the span of the previous ones,
/// which keeps the unmixing well conditioned.
const MIN_SPAN_ANGLE: f64 = 15.0;
const MIN_PROFILE_DISTANCE: f64 = 0.25;
const PIXEL_SPREAD: f64 = 0.02;
const PATCH_SPREAD: f64 = 0.03;
const MAX_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub classes: usize,
    /// `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { rows: 50, cols: 50, bands: 64, endmembers: 6, classes: 4, snr_db: 30.0, train_fraction: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rows: usize,
    pub cols: usize,
    /// `L × P` noisy observations.
    pub y: Array2<f64>,
    pub y_clean: Array2<f64>,
    /// `L × R_true`
    pub w_true: Array2<f64>,
    /// `R_true × P`
    pub h_true: Array2<f64>,
    /// 0-based class of every pixel, row-major.
    pub class_map: Vec<usize>,
    /// Training pixels.
    pub label_mask: Vec<bool>,
    pub snr_db: f64,
    /// Standard deviation of the realized noise.
    pub noise_std: f64,
}

impl SyntheticScene {
    pub fn labels(&self) -> Vec<Option<usize>> {
        self.class_map.iter().zip(&self.label_mask).map(|(&c, &m)| m.then_some(c)).collect()
    }

    /// `10 log10(‖Y_clean‖² / ‖Y − Y_clean‖²)`.
    pub fn measured_snr_db(&self) -> f64 {
        let signal: f64 = self.y_clean.iter().map(|v| v * v).sum();
        let noise: f64 = self.y.iter().zip(&self.y_clean).map(|(a, b)| (a - b) * (a - b)).sum();
        10.0 * (signal / noise).log10()
    }
}

fn bump_curve(rng: &mut ChaCha8Rng, x: &Array1<f64>, width: f64, bumps: usize) -> Array1<f64> {
    let mut curve = Array1::zeros(x.len());
    for _ in 0..bumps {
        let center = rng.random_range(-0.1..1.1);
        let sigma = width * rng.random_range(0.5..1.5);
        let amplitude = rng.random_range(0.2..1.0);
        curve.zip_mut_with(x, |c, &t| *c += amplitude * (-0.5 * ((t - center) / sigma).powi(2)).exp());
    }
    curve
}

/// Smooth positive spectra in `(0, 1]` with pairwise angles of at least 5°,
/// each at least 15° away from the span of the previous ones.
/// `smoothness` is the typical bump width as a fraction of the band range.
pub fn generate_endmembers(bands: usize, count: usize, smoothness: f64, seed: u64) -> Result<Array2<f64>> {
    if bands < 2 || count == 0 {
        return Err(Error::InvalidParameter(format!("need bands >= 2 and endmembers >= 1, got {bands} and {count}")));
    }
    if !(smoothness.is_finite() && smoothness > 0.0) {
        return Err(Error::InvalidParameter(format!("smoothness must be > 0, got {smoothness}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array1::linspace(0.0, 1.0, bands);
    let mut w = Array2::zeros((bands, count));
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    for r in 0..count {
        let mut accepted = false;
        for _ in 0..MAX_TRIES {
            let bumps = rng.random_range(2..=5);
            let mut curve = bump_curve(&mut rng, &x, smoothness, bumps);
            curve += rng.random_range(0.05..0.2);
            let peak = curve.fold(0.0_f64, |m, &v| m.max(v));
            curve *= rng.random_range(0.6..1.0) / peak;
            let far_enough = (0..r).all(|s| {
                spectral_angle(curve.view(), w.column(s)).is_ok_and(|a| a.to_degrees() >= MIN_ENDMEMBER_ANGLE)
            });
            let mut residual = curve.clone();
            for b in &basis {
                residual.scaled_add(-b.dot(&curve), b);
            }
            let sin = residual.dot(&residual).sqrt() / curve.dot(&curve).sqrt();
            if far_enough && (r >= bands || sin >= MIN_SPAN_ANGLE.to_radians().sin()) {
                let norm = residual.dot(&residual).sqrt();
                basis.push(residual / norm);
                w.column_mut(r).assign(&curve);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::InvalidParameter(format!("could not draw {count} distinct endmembers")));
        }
    }
    Ok(w)
}

fn dirichlet_ones(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    let e: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s = e.sum();
    e / s
}

fn class_profiles(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Array2<f64> {
    let mut best = Array2::zeros((dim, classes));
    let mut best_gap = -1.0;
    for _ in 0..MAX_TRIES {
        let mut profiles = Array2::zeros((dim, classes));
        for mut col in profiles.columns_mut() {
            col.assign(&dirichlet_ones(rng, dim));
        }
        let mut gap = f64::INFINITY;
        for a in 0..classes {
            for b in a + 1..classes {
                let d = (&profiles.column(a) - &profiles.column(b)).mapv(|v| v * v).sum().sqrt();
                gap = gap.min(d);
            }
        }
        if gap > best_gap {
            best_gap = gap;
            best = profiles;
        }
        if best_gap >= MIN_PROFILE_DISTANCE {
            break;
        }
    }
    best
}

/// Generates a scene with `SceneParams::endmembers` true endmembers.
pub fn generate_scene(params: &SceneParams) -> Result<SyntheticScene> {
    let SceneParams { rows, cols, bands, endmembers, classes, snr_db, train_fraction, seed } = *params;
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    if classes == 0 || rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter("rows, cols and classes must be >= 1".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("snr_db is NaN".into()));
    }
    let pixels = rows * cols;
    let w_true = generate_endmembers(bands, endmembers, 0.06, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_e5ce_0e5c);

    // Voronoi patches; the first sites cover every class once
    let sites = (pixels / 80).clamp(classes, pixels);
    if sites < classes {
        return Err(Error::InvalidParameter(format!("a {rows}x{cols} grid cannot hold {classes} classes")));
    }
    let mut cells: Vec<usize> = (0..pixels).collect();
    cells.shuffle(&mut rng);
    let centers: Vec<(f64, f64)> = cells[..sites].iter().map(|&p| ((p / cols) as f64, (p % cols) as f64)).collect();
    let site_class: Vec<usize> = (0..sites).map(|s| if s < classes { s } else { rng.random_range(0..classes) }).collect();

    let profiles = class_profiles(&mut rng, classes, endmembers);
    let patch_profiles: Vec<Array1<f64>> = site_class
        .iter()
        .map(|&c| {
            profiles
                .column(c)
                .mapv(|v| (v + PATCH_SPREAD * rng.sample::<f64, _>(StandardNormal)).max(0.0))
        })
        .collect();

    let mut class_map = vec![0; pixels];
    let mut h_true = Array2::zeros((endmembers, pixels));
    for p in 0..pixels {
        let (m, n) = ((p / cols) as f64, (p % cols) as f64);
        let site = centers
            .iter()
            .enumerate()
            .map(|(s, &(a, b))| (s, (a - m).powi(2) + (b - n).powi(2)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        class_map[p] = site_class[site];
        let mut col = h_true.column_mut(p);
        for (h, &base) in col.iter_mut().zip(&patch_profiles[site]) {
            *h = (base + PIXEL_SPREAD * rng.sample::<f64, _>(StandardNormal)).max(0.0);
        }
    }

    let y_clean = w_true.dot(&h_true);
    let (y, noise_std) = if snr_db.is_infinite() {
        (y_clean.clone(), 0.0)
    } else {
        let noise = Array2::from_shape_fn(y_clean.dim(), |_| rng.sample::<f64, _>(StandardNormal));
        let signal: f64 = y_clean.iter().map(|v| v * v).sum();
        let raw: f64 = noise.iter().map(|v| v * v).sum();
        let scale = (signal / raw / 10f64.powf(snr_db / 10.0)).sqrt();
        let noise = noise * scale;
        let std = (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt();
        (&y_clean + &noise, std)
    };

    let mut label_mask = vec![false; pixels];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..pixels).filter(|&p| class_map[p] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let take = ((train_fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        for &p in &members[..take] {
            label_mask[p] = true;
        }
    }

    Ok(SyntheticScene { rows, cols, y, y_clean, w_true, h_true, class_map, label_mask, snr_db, noise_std })
}

fn nearest_column(w: &Array2<f64>, v: ArrayView1<f64>) -> usize {
    w.columns()
        .into_iter()
        .map(|c| spectral_angle(c, v).unwrap_or(f64::INFINITY))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, a)| if a < best.1 { (i, a) } else { best })
        .0
}

/// Appends `extra` confounders: smooth multiplicative perturbations of randomly
/// chosen true endmembers, within `max_angle_deg` of their source and closer to
/// it than to any other true endmember.
pub fn augment_dictionary(w_true: &Array2<f64>, extra: usize, max_angle_deg: f64, seed: u64) -> Result<Array2<f64>> {
    if extra == 0 {
        return Ok(w_true.clone());
    }
    if w_true.ncols() == 0 {
        return Err(Error::InvalidParameter("cannot augment an empty dictionary".into()));
    }
    if !(max_angle_deg > 0.0) {
        return Err(Error::InvalidParameter(format!("max angle must be > 0, got {max_angle_deg}")));
    }
    let (bands, r) = w_true.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11_ce5);
    let x = Array1::linspace(0.0, 1.0, bands);
    let mut columns = Vec::with_capacity(extra);
    for _ in 0..extra {
        let source = rng.random_range(0..r);
        let src = w_true.column(source);
        let mut shape = bump_curve(&mut rng, &x, 0.08, 3);
        shape -= shape.mean().unwrap_or(0.0);
        let peak = shape.fold(0.0_f64, |m, &v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        shape /= peak;
        // start wide, then shrink until every constraint holds
        let mut amplitude = 0.5;
        let mut found = None;
        for _ in 0..200 {
            let candidate = &src * &shape.mapv(|s| 1.0 + amplitude * s);
            let angle = spectral_angle(candidate.view(), src)?.to_degrees();
            let positive = candidate.iter().all(|&v| v > 0.0);
            if positive && angle <= max_angle_deg && nearest_column(w_true, candidate.view()) == source {
                found = Some(candidate);
                break;
            }
            amplitude *= 0.95;
        }
        let mut col = found.ok_or_else(|| Error::InvalidParameter("could not build a confounder".into()))?;
        let top = col.fold(0.0_f64, |m, &v| m.max(v));
        if top > 1.0 {
            col /= top;
        }
        columns.push(col);
    }
    let mut w = Array2::zeros((bands, r + extra));
    w.slice_mut(ndarray::s![.., ..r]).assign(w_true);
    for (i, col) in columns.into_iter().enumerate() {
        w.column_mut(r + i).assign(&col);
    }
    Ok(w)
}

/// `H_true` padded with zero rows for `extra` confounders.
pub fn pad_abundances(h_true: &Array2<f64>, extra: usize) -> Array2<f64> {
    let zeros = Array2::zeros((extra, h_true.ncols()));
    ndarray::concatenate(Axis(0), &[h_true.view(), zeros.view()]).expect("same column count")
}
