use super::patch::PatchGrid;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Averages overlapping `[C, pz, py, px]` patch maps into a `[C, Z, Y, X]` map.
pub fn stitch<T: Real>(grid: &PatchGrid, channels: usize, patches: &[Option<Tensor<T>>]) -> Result<Tensor<T>> {
    if patches.len() != grid.starts.len() {
        return Err(Error::dim("stitch", format!("{} predictions for {} patches", patches.len(), grid.starts.len())));
    }
    let [zd, yd, xd] = grid.dims;
    let [pz, py, px] = grid.patch_size;
    let vol = zd * yd * xd;
    let mut sum = vec![T::zero(); channels * vol];
    let mut count = vec![0u32; vol];
    let expect = [channels, pz, py, px];
    for (i, (start, p)) in grid.starts.iter().zip(patches).enumerate() {
        let p = p.as_ref().ok_or(Error::MissingPatch(i))?;
        if p.shape() != expect {
            return Err(Error::dim("stitch", format!("patch {i} has shape {:?}, expected {expect:?}", p.shape())));
        }
        for z in 0..pz {
            for y in 0..py {
                let dst = ((start[0] + z) * yd + start[1] + y) * xd + start[2];
                count[dst..dst + px].iter_mut().for_each(|c| *c += 1);
                for c in 0..channels {
                    let src = ((c * pz + z) * py + y) * px;
                    let row = &mut sum[c * vol + dst..c * vol + dst + px];
                    for (s, &v) in row.iter_mut().zip(&p.data()[src..src + px]) {
                        *s += v;
                    }
                }
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::dim("stitch", format!("voxel {i} is covered by no patch")));
    }
    for c in 0..channels {
        for (s, &n) in sum[c * vol..(c + 1) * vol].iter_mut().zip(&count) {
            *s /= T::from_u32(n).unwrap();
        }
    }
    Tensor::new(vec![channels, zd, yd, xd], sum)
}

/// Per-voxel argmax over the channel axis of a `[C, Z, Y, X]` map.
/// Ties go to the lower class id.
pub fn argmax_classes<T: Real>(prob: &Tensor<T>) -> Vec<u8> {
    let c = prob.channels();
    let n = prob.spatial_len();
    let d = prob.data();
    (0..n)
        .map(|v| {
            let mut best = 0;
            for k in 1..c {
                if d[k * n + v] > d[best * n + v] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}
