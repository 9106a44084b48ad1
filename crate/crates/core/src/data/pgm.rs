//! 8-bit binary PGM export of axial (constant-z) slices.

use std::path::{Path, PathBuf};

use super::nifti::NiftiData;
use super::volume::Grid;
use crate::error::{Error, Result};

const CLASS_GRAY: [u8; 5] = [0, 64, 128, 192, 255];

/// Fixed gray level for a class id; ids past the table get distinct mid-grays.
pub fn class_gray(c: u8) -> u8 {
    CLASS_GRAY.get(c as usize).copied().unwrap_or((32 + (c as usize * 53) % 192) as u8)
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Maps any supported grid to gray levels: integer grids through the class
/// map, float grids by min-max scaling over the whole volume.
pub fn to_gray(data: &NiftiData) -> Grid<u8> {
    match data {
        NiftiData::U8(g) => g.map(class_gray),
        NiftiData::I16(g) => g.map(|v| class_gray(v.clamp(0, 255) as u8)),
        NiftiData::F32(g) => {
            let (lo, hi) = g.data().iter().filter(|v| v.is_finite()).fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            g.map(|v| if span > 0.0 && v.is_finite() { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        }
    }
}

/// Writes `slice_<z>.pgm` for every z; returns the written paths.
pub fn write_slices(gray: &Grid<u8>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let [zd, yd, xd] = gray.dims();
    let width = zd.to_string().len().max(3);
    (0..zd)
        .map(|z| {
            let path = out_dir.join(format!("slice_{z:0width$}.pgm"));
            let plane = &gray.data()[z * yd * xd..(z + 1) * yd * xd];
            std::fs::write(&path, encode_pgm(xd, yd, plane)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload() {
        let b = encode_pgm(3, 2, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(&b[..11], b"P5\n3 2\n255\n");
        assert_eq!(&b[11..], &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn floats_are_min_max_scaled() {
        let g = Grid::new([1, 1, 3], vec![-1.0f32, 0.0, 1.0]).unwrap();
        assert_eq!(to_gray(&NiftiData::F32(g)).data(), &[0, 128, 255]);
    }

    #[test]
    fn class_map_is_fixed() {
        let g = Grid::new([1, 1, 5], vec![0u8, 1, 2, 3, 4]).unwrap();
        assert_eq!(to_gray(&NiftiData::U8(g)).data(), &CLASS_GRAY);
    }
}
