//! Small image regression task with a background-style domain shift.
//!
//! A filled disc is drawn at a random position and scale; the regression
//! targets are `(scale, x, y)` in `[0, 1]`. The source domain uses flat
//! backgrounds and the target domain smooth procedural noise, while both
//! domains share the same label sampler, so only the input distribution moves.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DomainDataset, LabelSection};
use super::derive_seed;
use crate::error::{Error, Result};
use crate::models::InputKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSpec {
    /// Square image side in pixels.
    pub size: usize,
    pub channels: usize,
    pub source_images: usize,
    pub target_images: usize,
    /// Disc radius in pixels at scale 0 and scale 1.
    pub radius: [f64; 2],
    /// Amplitude of the target background noise.
    pub noise_amplitude: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            size: 32,
            channels: 3,
            source_images: 4000,
            target_images: 4000,
            radius: [3.0, 8.0],
            noise_amplitude: 0.6,
        }
    }
}

/// Shape parameters of one image; `x`/`y` are the disc center in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscLabel {
    pub scale: f64,
    pub x: f64,
    pub y: f64,
}

impl ImageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(8) {
            return Err(Error::config("data.size", "must be a positive multiple of 8"));
        }
        if self.channels == 0 {
            return Err(Error::config("data.channels", "must be at least 1"));
        }
        let [r0, r1] = self.radius;
        if !(r0 > 0.0 && r1 >= r0 && 2.0 * r1 < self.size as f64) {
            return Err(Error::config("data.radius", "need 0 < min <= max < size / 2"));
        }
        if self.source_images == 0 || self.target_images == 0 {
            return Err(Error::config("data.source_images", "both domains need images"));
        }
        Ok(())
    }

    pub fn input_kind(&self) -> InputKind {
        InputKind::Image {
            height: self.size,
            width: self.size,
            channels: self.channels,
        }
    }

    pub fn radius_for(&self, scale: f64) -> f64 {
        self.radius[0] + scale * (self.radius[1] - self.radius[0])
    }

    /// Normalized `(scale, x, y)` regression target.
    pub fn encode(&self, label: DiscLabel) -> [f32; 3] {
        let s = self.size as f64;
        [label.scale as f32, (label.x / s) as f32, (label.y / s) as f32]
    }

    fn sample_label(&self, rng: &mut impl Rng) -> DiscLabel {
        let scale = rng.random_range(0.0..=1.0);
        let r = self.radius_for(scale);
        let s = self.size as f64;
        DiscLabel {
            scale,
            x: rng.random_range(r..=s - r),
            y: rng.random_range(r..=s - r),
        }
    }
}

fn inside(label: DiscLabel, r: f64, px: usize, py: usize) -> bool {
    let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
    (cx - label.x).powi(2) + (cy - label.y).powi(2) <= r * r
}

/// Row-major `size x size x channels` pixels of one disc on `background`.
pub fn render(spec: &ImageSpec, label: DiscLabel, background: &[f32], color: &[f32]) -> Vec<f32> {
    let r = spec.radius_for(label.scale);
    let mut img = background.to_vec();
    for py in 0..spec.size {
        for px in 0..spec.size {
            if inside(label, r, px, py) {
                let base = (py * spec.size + px) * spec.channels;
                img[base..base + spec.channels].copy_from_slice(color);
            }
        }
    }
    img
}

fn flat_background(spec: &ImageSpec, rng: &mut impl Rng) -> Vec<f32> {
    let shade: Vec<f32> = (0..spec.channels)
        .map(|_| rng.random_range(0.0..0.3))
        .collect();
    let mut out = Vec::with_capacity(spec.size * spec.size * spec.channels);
    for _ in 0..spec.size * spec.size {
        out.extend_from_slice(&shade);
    }
    out
}

/// Bilinearly interpolated value noise on a coarse 5x5 lattice per channel.
fn noise_background(spec: &ImageSpec, rng: &mut impl Rng) -> Vec<f32> {
    const LATTICE: usize = 5;
    let grids: Vec<Vec<f64>> = (0..spec.channels)
        .map(|_| {
            (0..LATTICE * LATTICE)
                .map(|_| rng.random_range(0.0..spec.noise_amplitude))
                .collect()
        })
        .collect();
    let cell = spec.size as f64 / (LATTICE - 1) as f64;
    let mut out = vec![0f32; spec.size * spec.size * spec.channels];
    for py in 0..spec.size {
        for px in 0..spec.size {
            let gx = px as f64 / cell;
            let gy = py as f64 / cell;
            let (ix, iy) = ((gx as usize).min(LATTICE - 2), (gy as usize).min(LATTICE - 2));
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            for (c, g) in grids.iter().enumerate() {
                let at = |x: usize, y: usize| g[y * LATTICE + x];
                let v = at(ix, iy) * (1.0 - fx) * (1.0 - fy)
                    + at(ix + 1, iy) * fx * (1.0 - fy)
                    + at(ix, iy + 1) * (1.0 - fx) * fy
                    + at(ix + 1, iy + 1) * fx * fy;
                out[(py * spec.size + px) * spec.channels + c] = v as f32;
            }
        }
    }
    out
}

fn build_domain(
    spec: &ImageSpec,
    name: &str,
    count: usize,
    label_seed: u64,
    style_seed: u64,
    noisy: bool,
    section: LabelSection,
) -> Result<DomainDataset> {
    let mut labels_rng = ChaCha8Rng::seed_from_u64(label_seed);
    let mut style_rng = ChaCha8Rng::seed_from_u64(style_seed);
    let len = spec.size * spec.size * spec.channels;
    let mut inputs = Array2::<f32>::zeros((count, len));
    let mut labels = Array2::<f32>::zeros((count, 3));
    for i in 0..count {
        let label = spec.sample_label(&mut labels_rng);
        let background = if noisy {
            noise_background(spec, &mut style_rng)
        } else {
            flat_background(spec, &mut style_rng)
        };
        let color: Vec<f32> = (0..spec.channels)
            .map(|_| style_rng.random_range(0.7..1.0))
            .collect();
        let img = render(spec, label, &background, &color);
        inputs
            .row_mut(i)
            .iter_mut()
            .zip(img)
            .for_each(|(d, v)| *d = v);
        let enc = spec.encode(label);
        for j in 0..3 {
            labels[[i, j]] = enc[j];
        }
    }
    DomainDataset::new(
        name,
        spec.input_kind(),
        vec![1.0; 3],
        inputs,
        Some(labels),
        section,
    )
}

/// Flat-background source and noisy-background target; labels drawn from one shared sampler seed.
pub fn generate_image_task(spec: &ImageSpec, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let label_seed = derive_seed(seed, "image-labels");
    let source = build_domain(
        spec,
        "source_train",
        spec.source_images,
        label_seed,
        derive_seed(seed, "image-source-style"),
        false,
        LabelSection::Supervised,
    )?;
    let target = build_domain(
        spec,
        "target",
        spec.target_images,
        label_seed,
        derive_seed(seed, "image-target-style"),
        true,
        LabelSection::EvalOnly,
    )?;
    Ok((source, target))
}
