use rand::Rng;
use serde::{Deserialize, Serialize};

use super::volume::Grid;
use crate::error::{Error, Result};

/// Patch starts along one axis: `0, s, 2s, ...` with the last start clamped
/// so that the final window ends exactly at `dim`.
pub fn axis_starts(dim: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::Config("patch size and stride must be positive".into()));
    }
    if patch > dim {
        return Err(Error::Config(format!("patch {patch} is larger than the volume extent {dim}")));
    }
    let last = dim - patch;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s < last).collect();
    starts.push(last);
    Ok(starts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub dims: [usize; 3],
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    /// Cartesian product of the per-axis starts, z slowest.
    pub starts: Vec<[usize; 3]>,
}

pub fn build_patch_grid(dims: [usize; 3], patch_size: [usize; 3], stride: [usize; 3]) -> Result<PatchGrid> {
    let axes = (0..3).map(|a| axis_starts(dims[a], patch_size[a], stride[a])).collect::<Result<Vec<_>>>()?;
    let mut starts = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &z in &axes[0] {
        for &y in &axes[1] {
            for &x in &axes[2] {
                starts.push([z, y, x]);
            }
        }
    }
    Ok(PatchGrid { dims, patch_size, stride, starts })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Uniform over patches that contain at least one foreground voxel.
    TargetOnly,
    /// Uniform over dominant foreground classes, then uniform within a class.
    #[default]
    ClassBalanced,
}

/// A kept patch: which volume, where, and its most frequent foreground class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRef {
    pub volume: usize,
    pub start: [usize; 3],
    pub dominant_class: u8,
}

/// Keep mask and dominant class for every start of `grid`.
///
/// Ties in the dominant class go to the lower class id.
pub fn annotate(grid: &PatchGrid, label: &Grid<u8>) -> Vec<Option<u8>> {
    let mut counts = vec![0usize; 256];
    grid.starts
        .iter()
        .map(|&s| {
            counts.iter_mut().for_each(|c| *c = 0);
            for z in s[0]..s[0] + grid.patch_size[0] {
                for y in s[1]..s[1] + grid.patch_size[1] {
                    let row = label.index([z, y, s[2]]);
                    for &c in &label.data()[row..row + grid.patch_size[2]] {
                        counts[c as usize] += 1;
                    }
                }
            }
            let (best, n) = counts.iter().enumerate().skip(1).fold((0, 0), |acc, (c, &n)| if n > acc.1 { (c, n) } else { acc });
            (n > 0).then_some(best as u8)
        })
        .collect()
}

/// Draws training patches from the kept patches of one or more volumes.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    mode: SamplingMode,
    patches: Vec<PatchRef>,
    /// Indices into `patches`, one bucket per foreground class present.
    by_class: Vec<Vec<usize>>,
}

impl PatchSampler {
    /// Fails with [`Error::NoTargetPatches`] when no patch holds foreground.
    pub fn new(mode: SamplingMode, grids: &[(&PatchGrid, &Grid<u8>)]) -> Result<Self> {
        let mut patches = Vec::new();
        for (v, (grid, label)) in grids.iter().enumerate() {
            if grid.dims != label.dims() {
                return Err(Error::dim("patch sampler", format!("grid {:?} vs label {:?}", grid.dims, label.dims())));
            }
            for (&start, dom) in grid.starts.iter().zip(annotate(grid, label)) {
                if let Some(dominant_class) = dom {
                    patches.push(PatchRef { volume: v, start, dominant_class });
                }
            }
        }
        if patches.is_empty() {
            return Err(Error::NoTargetPatches);
        }
        let mut classes: Vec<u8> = patches.iter().map(|p| p.dominant_class).collect();
        classes.sort_unstable();
        classes.dedup();
        let by_class = classes
            .iter()
            .map(|&c| (0..patches.len()).filter(|&i| patches[i].dominant_class == c).collect())
            .collect();
        Ok(Self { mode, patches, by_class })
    }

    pub fn patches(&self) -> &[PatchRef] {
        &self.patches
    }

    pub fn draw(&self, rng: &mut impl Rng) -> PatchRef {
        match self.mode {
            SamplingMode::TargetOnly => self.patches[rng.random_range(0..self.patches.len())],
            SamplingMode::ClassBalanced => {
                let bucket = &self.by_class[rng.random_range(0..self.by_class.len())];
                self.patches[bucket[rng.random_range(0..bucket.len())]]
            }
        }
    }
}
