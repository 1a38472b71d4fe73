//! Synthetic image stacks of freely diffusing particles.
//!
//! Particles start uniformly distributed, take independent Gaussian steps of
//! variance `2D` per axis per frame, and wrap periodically. Each frame renders
//! every particle as a Gaussian blob over a flat background. For such a stack
//! the structure function relaxes as `1 - exp(-D q² t)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ImageStack;

/// Identifies the random stream so stacks can be regenerated bit for bit.
pub const GENERATOR: &str = "ChaCha8Rng::seed_from_u64 (rand_chacha 0.9); steps from rand_distr 0.5 Normal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub particles: usize,
    /// Pixel² per frame.
    pub diffusion: f64,
    pub psf_sigma: f64,
    pub amplitude: f64,
    pub background: f64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub frame_interval: f64,
}

fn default_interval() -> f64 {
    1.0
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            diffusion: 0.5,
            psf_sigma: 2.0,
            amplitude: 2000.0,
            background: 1000.0,
            width: 64,
            height: 64,
            frames: 512,
            seed: 0,
            frame_interval: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad("width, height and frames must be positive".into());
        }
        if !(self.diffusion.is_finite() && self.diffusion >= 0.0) {
            return bad(format!("diffusion must be >= 0, got {}", self.diffusion));
        }
        if !(self.psf_sigma.is_finite() && self.psf_sigma > 0.0) {
            return bad(format!("psf_sigma must be > 0, got {}", self.psf_sigma));
        }
        if !(self.amplitude >= 0.0 && self.background >= 0.0) {
            return bad("amplitude and background must be >= 0".into());
        }
        if self.amplitude + self.background > 65535.0 {
            return bad("amplitude + background exceeds the 16-bit range".into());
        }
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return bad("frame_interval must be positive".into());
        }
        Ok(())
    }

    /// Expected mean frame intensity, ignoring clamping.
    pub fn expected_mean(&self) -> f64 {
        let blob = std::f64::consts::TAU * self.psf_sigma * self.psf_sigma * self.amplitude;
        self.background + self.particles as f64 * blob / (self.width * self.height) as f64
    }
}

/// Particle trajectories, `[frame][particle] -> (x, y)`, drawn serially.
fn trajectories(config: &SynthConfig) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (config.width as f64, config.height as f64);
    let mut pos: Vec<(f64, f64)> = (0..config.particles)
        .map(|_| (rng.random::<f64>() * w, rng.random::<f64>() * h))
        .collect();
    let step = Normal::new(0.0, (2.0 * config.diffusion).sqrt()).expect("diffusion validated");
    let mut frames = Vec::with_capacity(config.frames);
    frames.push(pos.clone());
    for _ in 1..config.frames {
        for p in pos.iter_mut() {
            let dx = step.sample(&mut rng);
            let dy = step.sample(&mut rng);
            p.0 = (p.0 + dx).rem_euclid(w);
            p.1 = (p.1 + dy).rem_euclid(h);
        }
        frames.push(pos.clone());
    }
    frames
}

fn render(config: &SynthConfig, particles: &[(f64, f64)], out: &mut [u16]) {
    let (w, h) = (config.width, config.height);
    let sigma = config.psf_sigma;
    let reach = 4.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut acc = vec![config.background; w * h];
    for &(px, py) in particles {
        let (y0, y1) = ((py - reach).floor() as i64, (py + reach).ceil() as i64);
        let (x0, x1) = ((px - reach).floor() as i64, (px + reach).ceil() as i64);
        for iy in y0..=y1 {
            let dy = iy as f64 - py;
            let row = iy.rem_euclid(h as i64) as usize * w;
            for ix in x0..=x1 {
                let dx = ix as f64 - px;
                let r2 = dx * dx + dy * dy;
                if r2 <= reach * reach {
                    acc[row + ix.rem_euclid(w as i64) as usize] += config.amplitude * (-r2 * inv).exp();
                }
            }
        }
    }
    for (dst, v) in out.iter_mut().zip(acc) {
        *dst = v.round().clamp(0.0, 65535.0) as u16;
    }
}

pub fn generate(config: &SynthConfig) -> Result<ImageStack> {
    config.validate()?;
    let paths = trajectories(config);
    let len = config.width * config.height;
    let mut pixels = vec![0u16; len * config.frames];
    pixels
        .par_chunks_mut(len)
        .zip(paths.par_iter())
        .for_each(|(frame, particles)| render(config, particles, frame));
    ImageStack::new(config.width, config.height, config.frames, pixels, config.frame_interval)
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    config: &'a SynthConfig,
    generator: &'static str,
    version: &'static str,
}

pub fn write_config(config: &SynthConfig, path: &Path) -> Result<()> {
    let record = SynthRecord {
        config,
        generator: GENERATOR,
        version: env!("CARGO_PKG_VERSION"),
    };
    let text = serde_json::to_string_pretty(&record).expect("config serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
