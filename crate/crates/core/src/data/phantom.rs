//! Synthetic labeled two-modality volumes.
//!
//! Every foreground class is painted as smooth blobs around the volume centre
//! (class 1 as one large blob, the others as `blobs_per_class` smaller ones),
//! later classes over earlier ones. Each modality maps classes to
//! intensities through its own contrast table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::{Grid, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contrast {
    pub mean: f32,
    pub std: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    /// Indexed by class id, background first.
    pub contrast: Vec<Contrast>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// Foreground class means are reversed (class 1 takes the last class's mean, ...).
    SwapContrast,
    /// Extra Gaussian noise with standard deviation `noise_std`.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Index into `modalities`.
    pub modality: usize,
    pub mode: CorruptionMode,
    /// Box `[start, start + size)` in `[z, y, x]` voxels.
    pub region_start: [usize; 3],
    pub region_size: [usize; 3],
    #[serde(default = "default_noise_std")]
    pub noise_std: f32,
}

fn default_noise_std() -> f32 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// `[z, y, x]` extents.
    pub dims: [usize; 3],
    pub num_classes: usize,
    /// Voxel size along (x, y, z).
    #[serde(default = "unit_spacing")]
    pub spacing: [f32; 3],
    pub modalities: Vec<ModalitySpec>,
    /// Blobs painted for each foreground class after the first.
    #[serde(default = "default_blobs")]
    pub blobs_per_class: usize,
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
}

fn unit_spacing() -> [f32; 3] {
    [1.0; 3]
}

fn default_blobs() -> usize {
    2
}

impl Default for PhantomSpec {
    /// 64³, four foreground classes, two modalities with roughly inverted
    /// contrast; each modality alone confuses one pair of classes.
    fn default() -> Self {
        let table = |means: [f32; 5], std: f32| means.iter().map(|&mean| Contrast { mean, std }).collect();
        Self {
            dims: [64; 3],
            num_classes: 5,
            spacing: unit_spacing(),
            modalities: vec![
                ModalitySpec { name: "modal1".into(), contrast: table([0.0, 0.35, 0.65, 1.0, 1.0], 0.06) },
                ModalitySpec { name: "modal2".into(), contrast: table([0.0, 1.0, 1.0, 0.65, 0.35], 0.06) },
            ],
            blobs_per_class: default_blobs(),
            corruption: None,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom spec: {m}")));
        if self.num_classes < 2 || self.num_classes > 256 {
            return bad(format!("num_classes {} outside [2, 256]", self.num_classes));
        }
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims {:?} must be at least 8 per axis", self.dims));
        }
        if self.modalities.is_empty() {
            return bad("no modalities".into());
        }
        for m in &self.modalities {
            if m.contrast.len() < self.num_classes {
                return bad(format!("contrast table of '{}' has no entry for class {}", m.name, m.contrast.len()));
            }
            if m.contrast.iter().any(|c| !c.mean.is_finite() || !(c.std >= 0.0)) {
                return bad(format!("contrast table of '{}' has a non-finite mean or negative std", m.name));
            }
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad("spacing must be positive".into());
        }
        if let Some(c) = &self.corruption {
            if c.modality >= self.modalities.len() {
                return bad(format!("corruption targets modality {} of {}", c.modality, self.modalities.len()));
            }
            if (0..3).any(|a| c.region_size[a] == 0 || c.region_start[a] + c.region_size[a] > self.dims[a]) {
                return bad("corruption region is empty or leaves the volume".into());
            }
            if !(c.noise_std >= 0.0) {
                return bad("noise_std must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// A generated volume plus the corruption mask (1 inside the region).
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub region: Option<Grid<u8>>,
}

/// Ellipsoid with a smooth low-frequency boundary perturbation.
struct Blob {
    center: [f64; 3],
    radii: [f64; 3],
    waves: Vec<([f64; 3], f64, f64)>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, center: [f64; 3], radii: [f64; 3]) -> Self {
        let waves = (0..4)
            .map(|_| {
                let k = [0, 1, 2].map(|_| rng.random_range(-3.0..3.0));
                (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.03..0.1))
            })
            .collect();
        Self { center, radii, waves }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let u = [0, 1, 2].map(|a| (p[a] - self.center[a]) / self.radii[a]);
        let r = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let wobble: f64 = self.waves.iter().map(|(k, ph, amp)| amp * (k[0] * u[0] + k[1] * u[1] + k[2] * u[2] + ph).sin()).sum();
        r + wobble < 1.0
    }
}

fn paint_labels(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Grid<u8> {
    let dims = spec.dims.map(|d| d as f64);
    let mid = dims.map(|d| (d - 1.0) / 2.0);
    let mut blobs = Vec::new();
    for class in 1..spec.num_classes {
        let (lo, hi, n) = if class == 1 { (0.2, 0.26, 1) } else { (0.1, 0.16, spec.blobs_per_class.max(1)) };
        for _ in 0..n {
            let center = [0, 1, 2].map(|a| mid[a] + rng.random_range(-0.22..0.22) * dims[a]);
            let radii = dims.map(|d| d * rng.random_range(lo..hi));
            blobs.push((class as u8, Blob::random(rng, center, radii)));
        }
    }
    Grid::from_fn(spec.dims, |[z, y, x]| {
        let p = [z as f64, y as f64, x as f64];
        blobs.iter().rev().find(|(_, b)| b.contains(p)).map_or(0, |(c, _)| *c)
    })
}

const MAX_LAYOUT_ATTEMPTS: usize = 64;

/// Deterministic in `(spec, seed)`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = (0..MAX_LAYOUT_ATTEMPTS)
        .map(|_| paint_labels(spec, &mut rng))
        .find(|l| {
            let mut seen = vec![false; spec.num_classes];
            l.data().iter().for_each(|&c| seen[c as usize] = true);
            seen.iter().all(|&s| s)
        })
        .ok_or_else(|| Error::Config(format!("no layout covering all {} classes after {MAX_LAYOUT_ATTEMPTS} attempts", spec.num_classes)))?;

    let region = spec.corruption.as_ref().map(|c| {
        Grid::from_fn(spec.dims, |p| (0..3).all(|a| p[a] >= c.region_start[a] && p[a] < c.region_start[a] + c.region_size[a]) as u8)
    });
    let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
    let fg = spec.num_classes - 1;
    let modalities = spec
        .modalities
        .iter()
        .enumerate()
        .map(|(m, ms)| {
            let corrupt = spec.corruption.as_ref().filter(|c| c.modality == m);
            let mut i = 0;
            Grid::from_fn(spec.dims, |_| {
                let c = label.data()[i] as usize;
                let inside = corrupt.is_some() && region.as_ref().is_some_and(|r| r.data()[i] == 1);
                i += 1;
                let mut mean = ms.contrast[c].mean;
                let mut v = ms.contrast[c].std * unit.sample(&mut rng);
                if let (true, Some(cs)) = (inside, corrupt) {
                    match cs.mode {
                        CorruptionMode::SwapContrast if c > 0 => mean = ms.contrast[fg + 1 - c].mean,
                        CorruptionMode::SwapContrast => {}
                        CorruptionMode::Noise => v += cs.noise_std * unit.sample(&mut rng),
                    }
                }
                mean + v
            })
        })
        .collect();
    let volume = Volume {
        modalities,
        label: Some(label),
        spacing: spec.spacing,
        modality_names: spec.modalities.iter().map(|m| m.name.clone()).collect(),
    };
    Ok(Phantom { volume, region })
}
