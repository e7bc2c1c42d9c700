//! Synthetic beating-heart cine sequences with known ground truth.
//!
//! A phantom frame is a bright blood disc inside a darker myocardial
//! annulus on a dark background, with a few dark papillary specks orbiting
//! inside the cavity. The cavity radius follows one cosine contraction
//! cycle over the sequence, so frame 0 is end-diastole and frame T/2 is
//! end-systole. Edges are anti-aliased with a 1 px linear ramp.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cine::CineSequence;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub id: String,
    /// `(H, W)`
    pub grid: (usize, usize),
    pub t: usize,
    /// LV centre `(row, col)` in pixels.
    pub lv_center_px: (f64, f64),
    /// End-diastolic cavity radius `r0`.
    pub cavity_radius_px: f64,
    /// Contraction fraction `c`; minimum radius is `r0 * (1 - c)`.
    pub contraction: f64,
    pub myocardium_thickness_px: f64,
    pub blood_intensity: f32,
    pub myocardium_intensity: f32,
    pub background_intensity: f32,
    pub noise_sigma: f32,
    pub n_papillary: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            id: "phantom".into(),
            grid: (192, 192),
            t: 50,
            lv_center_px: (96.0, 96.0),
            cavity_radius_px: 20.0,
            contraction: 0.3,
            myocardium_thickness_px: 6.0,
            blood_intensity: 1.0,
            myocardium_intensity: 0.3,
            background_intensity: 0.05,
            noise_sigma: 0.02,
            n_papillary: 2,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::invalid("phantom needs T >= 2"));
        }
        if !(0.0..=1.0).contains(&self.contraction) {
            return Err(Error::invalid("contraction must lie in [0, 1]"));
        }
        if self.cavity_radius_px * (1.0 - self.contraction) < 2.0 {
            return Err(Error::invalid("minimum cavity radius below 2 px"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        let margin = self.cavity_radius_px + self.myocardium_thickness_px;
        let (h, w) = self.grid;
        let (cy, cx) = self.lv_center_px;
        if cy < margin
            || cx < margin
            || cy > h as f64 - 1.0 - margin
            || cx > w as f64 - 1.0 - margin
        {
            return Err(Error::invalid(
                "LV centre closer than r0 + thickness to the border",
            ));
        }
        Ok(())
    }

    /// Cavity radius at frame `t`: one cosine contraction cycle.
    pub fn radius_at(&self, t: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / self.t as f64;
        self.cavity_radius_px * (1.0 - self.contraction * (1.0 - phase.cos()) / 2.0)
    }
}

/// Exact geometry the renderer used, for validating localisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGroundTruth {
    pub id: String,
    /// `(row, col)`
    pub center: [f64; 2],
    /// Cavity radius per frame.
    pub radius: Vec<f64>,
}

/// Draws phantom configurations with randomised geometry inside the valid
/// region of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSampler {
    pub grid: (usize, usize),
    pub t: usize,
    pub cavity_radius_px: (f64, f64),
    pub contraction: (f64, f64),
    pub myocardium_thickness_px: (f64, f64),
    pub noise_sigma: f32,
    pub n_papillary: usize,
}

impl Default for PhantomSampler {
    fn default() -> Self {
        Self {
            grid: (192, 192),
            t: 50,
            cavity_radius_px: (16.0, 24.0),
            contraction: (0.2, 0.4),
            myocardium_thickness_px: (5.0, 8.0),
            noise_sigma: 0.02,
            n_papillary: 2,
        }
    }
}

impl PhantomSampler {
    pub fn sample(&self, id: impl Into<String>, stream: &RngStream) -> PhantomConfig {
        let mut rng = stream.rng();
        let r0 = rng.random_range(self.cavity_radius_px.0..=self.cavity_radius_px.1);
        let c = rng.random_range(self.contraction.0..=self.contraction.1);
        let thick =
            rng.random_range(self.myocardium_thickness_px.0..=self.myocardium_thickness_px.1);
        let margin = (r0 + thick).ceil() + 2.0;
        let (h, w) = self.grid;
        let cy = rng.random_range(margin..=(h as f64 - 1.0 - margin));
        let cx = rng.random_range(margin..=(w as f64 - 1.0 - margin));
        PhantomConfig {
            id: id.into(),
            grid: self.grid,
            t: self.t,
            lv_center_px: (cy, cx),
            cavity_radius_px: r0,
            contraction: c,
            myocardium_thickness_px: thick,
            noise_sigma: self.noise_sigma,
            n_papillary: self.n_papillary,
            seed: rng.random(),
            ..PhantomConfig::default()
        }
    }
}

/// Coverage of a disc of radius `r` at distance `d` from its centre, with a
/// 1 px anti-aliasing ramp across the boundary.
fn coverage(r: f64, d: f64) -> f64 {
    (r - d + 0.5).clamp(0.0, 1.0)
}

/// Render a phantom sequence and its exact ground-truth geometry.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(CineSequence, PhantomGroundTruth)> {
    cfg.validate()?;
    let (h, w) = cfg.grid;
    let (cy, cx) = cfg.lv_center_px;
    let outer_radius = cfg.cavity_radius_px + cfg.myocardium_thickness_px;
    let speck_radius = 1.5;
    let mut frames = Array3::zeros((cfg.t, h, w));
    let mut radii = Vec::with_capacity(cfg.t);

    for t in 0..cfg.t {
        let r = cfg.radius_at(t);
        radii.push(r);
        let phase = 2.0 * std::f64::consts::PI * t as f64 / cfg.t as f64;
        // Specks swing with the contraction and ride the cavity radius, so a
        // motionless phantom (c = 0) renders identical frames.
        let swing = cfg.contraction * std::f64::consts::PI * (1.0 - phase.cos()) / 2.0;
        let specks: Vec<(f64, f64)> = (0..cfg.n_papillary)
            .map(|k| {
                let angle =
                    2.0 * std::f64::consts::PI * k as f64 / cfg.n_papillary.max(1) as f64 + swing;
                let orbit = 0.55 * r;
                (cy + orbit * angle.sin(), cx + orbit * angle.cos())
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let mut v = cfg.background_intensity as f64
                    + (cfg.myocardium_intensity - cfg.background_intensity) as f64
                        * coverage(outer_radius, d)
                    + (cfg.blood_intensity - cfg.myocardium_intensity) as f64 * coverage(r, d);
                for &(sy, sx) in &specks {
                    let sd = ((y as f64 - sy).powi(2) + (x as f64 - sx).powi(2)).sqrt();
                    let cov = coverage(speck_radius, sd);
                    v += (cfg.myocardium_intensity as f64 - v) * cov;
                }
                frames[[t, y, x]] = v as f32;
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        let mut rng = RngStream::root(cfg.seed).rng();
        let normal = Normal::new(0.0f64, cfg.noise_sigma as f64)
            .map_err(|e| Error::invalid(format!("noise: {e}")))?;
        frames.mapv_inplace(|v| v + normal.sample(&mut rng) as f32);
    }

    let gt = PhantomGroundTruth {
        id: cfg.id.clone(),
        center: [cy, cx],
        radius: radii,
    };
    Ok((CineSequence::new(cfg.id.clone(), frames), gt))
}
