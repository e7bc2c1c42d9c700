//! Left-ventricle localisation and fixed-size ROI cropping.
//!
//! The heart is the only structure moving at the cardiac frequency, and each
//! sequence spans exactly one beat, so the magnitude of the first temporal
//! Fourier harmonic lights up the annulus swept by the moving myocardial
//! boundary. Hough circle voting on that activity image proposes candidate
//! centres, a score-weighted Gaussian kernel vote fuses them, and a fixed
//! square window is cropped around the winner.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cine::CineSequence;
use crate::error::{Error, Result};

/// A circle candidate with its accumulator score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCircle {
    /// `(row, col)`
    pub center: (usize, usize),
    pub radius: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiParams {
    pub r_min: usize,
    pub r_max: usize,
    pub top_k: usize,
    /// Edge pixels are those with gradient magnitude above
    /// `edge_threshold_factor * mean gradient magnitude`.
    pub edge_threshold_factor: f64,
    /// Width of the Gaussian voting kernel in pixels.
    pub sigma_px: f64,
    pub crop_size: usize,
}

impl Default for RoiParams {
    fn default() -> Self {
        Self {
            r_min: 8,
            r_max: 30,
            top_k: 10,
            edge_threshold_factor: 2.0,
            sigma_px: 5.0,
            crop_size: 80,
        }
    }
}

/// Magnitude of the first temporal harmonic at every pixel.
///
/// Bin 1 is the heart-beat frequency because one sequence covers one cycle;
/// the unnormalised DFT convention is used, so a pure `cos(2*pi*t/T)` pixel
/// scores `T/2`.
pub fn temporal_activity_image(seq: &CineSequence) -> Array2<f64> {
    let (t, h, w) = seq.dims();
    assert!(t >= 2, "activity image needs T >= 2");
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..t)
        .map(|ti| {
            let phase = 2.0 * std::f64::consts::PI * ti as f64 / t as f64;
            (phase.cos(), phase.sin())
        })
        .unzip();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for ti in 0..t {
                let v = seq.frames[[ti, y, x]] as f64;
                re += v * cos_t[ti];
                im -= v * sin_t[ti];
            }
            out[[y, x]] = (re * re + im * im).sqrt();
        }
    }
    out
}

fn gradients(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut gy = Array2::zeros((h, w));
    let mut gx = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let yp = (y + 1).min(h - 1);
            let ym = y.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let xm = x.saturating_sub(1);
            gy[[y, x]] = (img[[yp, x]] - img[[ym, x]]) / (yp - ym).max(1) as f64;
            gx[[y, x]] = (img[[y, xp]] - img[[y, xm]]) / (xp - xm).max(1) as f64;
        }
    }
    (gy, gx)
}

fn splat(acc: &mut Array2<f64>, y: f64, x: f64, weight: f64) {
    let (h, w) = acc.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let yy = y0 + dy;
            let xx = x0 + dx;
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                acc[[yy as usize, xx as usize]] += weight * wy * wx;
            }
        }
    }
}

/// Gradient-based circular Hough transform.
///
/// Edge pixels vote along +-gradient at every radius in `[r_min, r_max]`;
/// the best accumulator peak is kept per radius and the `top_k` highest
/// scoring circles over all radii are returned, scores non-increasing.
pub fn hough_circles(
    activity: &Array2<f64>,
    r_min: usize,
    r_max: usize,
    top_k: usize,
) -> Vec<ScoredCircle> {
    assert!(r_min < r_max && r_min > 0, "need 0 < r_min < r_max");
    let (h, w) = activity.dim();
    let (gy, gx) = gradients(activity);
    let mag = Array2::from_shape_fn((h, w), |(y, x)| {
        (gy[[y, x]].powi(2) + gx[[y, x]].powi(2)).sqrt()
    });
    let mean_mag = mag.sum() / (h * w) as f64;
    let threshold = 2.0 * mean_mag;
    let edges: Vec<(usize, usize, f64, f64)> = mag
        .indexed_iter()
        .filter(|(_, &m)| m > threshold && m > 0.0)
        .map(|((y, x), &m)| (y, x, gy[[y, x]] / m, gx[[y, x]] / m))
        .collect();
    if edges.is_empty() {
        return Vec::new();
    }

    let mut best_per_radius = Vec::new();
    let mut acc = Array2::zeros((h, w));
    for r in r_min..=r_max {
        acc.fill(0.0);
        let rf = r as f64;
        for &(y, x, dy, dx) in &edges {
            for sign in [1.0, -1.0] {
                splat(
                    &mut acc,
                    y as f64 + sign * rf * dy,
                    x as f64 + sign * rf * dx,
                    1.0,
                );
            }
        }
        let mut best = ScoredCircle {
            center: (0, 0),
            radius: r,
            score: f64::NEG_INFINITY,
        };
        for ((y, x), &v) in acc.indexed_iter() {
            if v > best.score {
                best = ScoredCircle {
                    center: (y, x),
                    radius: r,
                    score: v,
                };
            }
        }
        if best.score > 0.0 {
            best_per_radius.push(best);
        }
    }
    best_per_radius.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.radius.cmp(&b.radius))
            .then(a.center.cmp(&b.center))
    });
    best_per_radius.truncate(top_k);
    best_per_radius
}

/// Fuse circle candidates into a single centre estimate.
///
/// Each centre contributes a Gaussian kernel scaled by its score; the argmax
/// of the summed likelihood surface wins, smallest row-major index on ties.
pub fn vote_center(
    circles: &[ScoredCircle],
    grid: (usize, usize),
    sigma_px: f64,
) -> Result<(usize, usize)> {
    if circles.is_empty() {
        return Err(Error::BadDataset("no circles to vote on".into()));
    }
    let (h, w) = grid;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut best = (0usize, 0usize);
    let mut best_val = f64::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for c in circles {
                let dy = y as f64 - c.center.0 as f64;
                let dx = x as f64 - c.center.1 as f64;
                v += c.score * (-(dy * dy + dx * dx) * inv_two_sigma_sq).exp();
            }
            if v > best_val {
                best_val = v;
                best = (y, x);
            }
        }
    }
    Ok(best)
}

/// Axis-aligned `size x size` crop around `center`, shifted to stay inside
/// the image; all frames cropped identically.
pub fn crop_roi(
    seq: &CineSequence,
    center: (usize, usize),
    size: usize,
) -> Result<CineSequence> {
    let (_, h, w) = seq.dims();
    if size % 2 != 0 {
        return Err(Error::invalid("crop size must be even"));
    }
    if size > h || size > w {
        return Err(Error::invalid(format!(
            "crop size {size} exceeds image extent {h}x{w}"
        )));
    }
    let half = size / 2;
    let top = center.0.saturating_sub(half).min(h - size);
    let left = center.1.saturating_sub(half).min(w - size);
    let frames: Array3<f32> = seq
        .frames
        .slice(s![.., top..top + size, left..left + size])
        .to_owned();
    let mut out = seq.clone();
    out.frames = frames;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiOutcome {
    /// `(row, col)` of the fused centre estimate in the source grid.
    pub center: (usize, usize),
    pub circles: Vec<ScoredCircle>,
}

/// Full localisation pipeline: activity image, Hough voting, kernel fusion,
/// crop. Deterministic; no randomness anywhere in this module.
pub fn extract_roi(seq: &CineSequence, params: &RoiParams) -> Result<(CineSequence, RoiOutcome)> {
    let activity = temporal_activity_image(seq);
    let circles = hough_circles(&activity, params.r_min, params.r_max, params.top_k);
    let center = vote_center(&circles, activity.dim(), params.sigma_px)?;
    let cropped = crop_roi(seq, center, params.crop_size)?;
    Ok((cropped, RoiOutcome { center, circles }))
}
