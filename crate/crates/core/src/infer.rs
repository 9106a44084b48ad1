//! Full-volume sliding-window inference.

use rayon::prelude::*;

use crate::data::{argmax_classes, build_patch_grid, stitch, Grid, Volume};
use crate::error::Result;
use crate::fusion::{compute_uncertainty, FusionNet, StreamId};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Stitched `[C, Z, Y, X]` probability maps for every stream and the fused head.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumePrediction<T> {
    pub streams: Vec<Tensor<T>>,
    pub fused: Tensor<T>,
}

fn to_grid(dims: [usize; 3], labels: Vec<u8>) -> Grid<u8> {
    Grid::new(dims, labels).expect("label count matches dims")
}

impl<T: Real> VolumePrediction<T> {
    fn dims(&self) -> [usize; 3] {
        let s = self.fused.shape();
        [s[1], s[2], s[3]]
    }

    pub fn labels(&self) -> Grid<u8> {
        to_grid(self.dims(), argmax_classes(&self.fused))
    }

    pub fn stream_labels(&self, stream: usize) -> Grid<u8> {
        to_grid(self.dims(), argmax_classes(&self.streams[stream]))
    }

    /// Uncertainty of one stream's stitched probability map.
    pub fn uncertainty(&self, stream: usize) -> Result<Grid<f32>> {
        let u = compute_uncertainty(&self.streams[stream], StreamId(stream))?;
        Grid::new(self.dims(), u.values.data().iter().map(|v| v.to_f32().unwrap()).collect())
    }
}

/// `[1, pz, py, px]` crops of every modality at `start`.
pub fn patch_inputs<T: Real>(vol: &Volume, start: [usize; 3], size: [usize; 3]) -> Result<Vec<Tensor<T>>> {
    vol.modalities
        .iter()
        .map(|m| {
            let c = m.crop(start, size)?;
            Tensor::new(vec![1, size[0], size[1], size[2]], c.data().iter().map(|&v| T::from_f32(v).unwrap()).collect())
        })
        .collect()
}

/// Runs every patch of the full `(patch, stride)` grid and averages overlaps.
///
/// Patches are evaluated in parallel; the result does not depend on the
/// thread count.
pub fn predict_volume<T: Real>(net: &FusionNet<T>, vol: &Volume, patch: [usize; 3], stride: [usize; 3]) -> Result<VolumePrediction<T>> {
    let grid = build_patch_grid(vol.dims(), patch, stride)?;
    let preds = grid
        .starts
        .par_iter()
        .map(|&s| net.predict(&patch_inputs(vol, s, patch)?))
        .collect::<Result<Vec<_>>>()?;
    let classes = net.config.num_classes;
    let streams = (0..net.config.num_modalities)
        .map(|i| stitch(&grid, classes, &preds.iter().map(|p| Some(p.streams[i].clone())).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let fused = stitch(&grid, classes, &preds.into_iter().map(|p| Some(p.fused)).collect::<Vec<_>>())?;
    Ok(VolumePrediction { streams, fused })
}
