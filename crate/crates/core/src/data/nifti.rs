//! Single-file NIfTI-1 (`.nii`) subset: 3-D grids of u8, i16 or f32.
//!
//! Files are always written little-endian with `vox_offset = 352` and no
//! extensions. Big-endian files are byte-swapped on read. Intensity scaling
//! (`scl_slope`/`scl_inter`) is not applied.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::volume::Grid;
use crate::error::{Error, NiftiError, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: [u8; 4] = *b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

#[derive(Clone, Debug, PartialEq)]
pub enum NiftiData {
    U8(Grid<u8>),
    I16(Grid<i16>),
    F32(Grid<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiImage {
    pub data: NiftiData,
    /// Voxel size along (x, y, z).
    pub spacing: [f32; 3],
}

impl NiftiData {
    pub fn dims(&self) -> [usize; 3] {
        match self {
            NiftiData::U8(g) => g.dims(),
            NiftiData::I16(g) => g.dims(),
            NiftiData::F32(g) => g.dims(),
        }
    }

    fn datatype(&self) -> (i16, i16) {
        match self {
            NiftiData::U8(_) => (DT_UINT8, 8),
            NiftiData::I16(_) => (DT_INT16, 16),
            NiftiData::F32(_) => (DT_FLOAT32, 32),
        }
    }

    pub fn to_f32(&self) -> Grid<f32> {
        match self {
            NiftiData::U8(g) => g.map(f32::from),
            NiftiData::I16(g) => g.map(f32::from),
            NiftiData::F32(g) => g.clone(),
        }
    }

    /// Integer class ids; floats must be whole numbers in `[0, 255]`.
    pub fn to_labels(&self) -> Result<Grid<u8>> {
        let bad = |v: f64| Error::from(NiftiError::NotALabel(v));
        match self {
            NiftiData::U8(g) => Ok(g.clone()),
            NiftiData::I16(g) => {
                if let Some(&v) = g.data().iter().find(|&&v| !(0..=255).contains(&v)) {
                    return Err(bad(v.into()));
                }
                Ok(g.map(|v| v as u8))
            }
            NiftiData::F32(g) => {
                if let Some(&v) = g.data().iter().find(|&&v| !(0.0..=255.0).contains(&v) || v.fract() != 0.0) {
                    return Err(bad(v.into()));
                }
                Ok(g.map(|v| v as u8))
            }
        }
    }
}

pub fn to_bytes(img: &NiftiImage) -> Vec<u8> {
    let dims = img.data.dims();
    let (datatype, bitpix) = img.data.datatype();
    let mut h = vec![0u8; VOX_OFFSET];
    let le = LittleEndian::write_i16;
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    let dim = [3, dims[2] as i16, dims[1] as i16, dims[0] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        le(&mut h[40 + 2 * i..42 + 2 * i], *d);
    }
    le(&mut h[70..72], datatype);
    le(&mut h[72..74], bitpix);
    let [sx, sy, sz] = img.spacing;
    for (i, p) in [1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0].iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..80 + 4 * i], *p);
    }
    LittleEndian::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    h[123] = 2; // spatial units: mm
    le(&mut h[254..256], 1); // sform_code: scanner
    for (row, s) in [(280, sx), (296, sy), (312, sz)] {
        let axis = (row - 280) / 16;
        LittleEndian::write_f32(&mut h[row + 4 * axis..row + 4 * axis + 4], s);
    }
    h[344..348].copy_from_slice(&MAGIC);
    match &img.data {
        NiftiData::U8(g) => h.extend_from_slice(g.data()),
        NiftiData::I16(g) => g.data().iter().for_each(|v| h.extend_from_slice(&v.to_le_bytes())),
        NiftiData::F32(g) => g.data().iter().for_each(|v| h.extend_from_slice(&v.to_le_bytes())),
    }
    h
}

pub fn from_bytes(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated { expected: HEADER_SIZE, found: bytes.len() }.into());
    }
    let size = LittleEndian::read_i32(&bytes[0..4]);
    if size == HEADER_SIZE as i32 {
        parse::<LittleEndian>(bytes)
    } else if size.swap_bytes() == HEADER_SIZE as i32 {
        parse::<BigEndian>(bytes)
    } else {
        Err(NiftiError::BadHeaderSize(size).into())
    }
}

fn parse<B: ByteOrder>(b: &[u8]) -> Result<NiftiImage> {
    let magic: [u8; 4] = b[344..348].try_into().unwrap();
    if magic != MAGIC {
        return Err(NiftiError::BadMagic(magic).into());
    }
    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&b[40 + 2 * i..42 + 2 * i])).collect();
    if dim[0] != 3 {
        return Err(NiftiError::UnsupportedDimensionality(dim[0]).into());
    }
    if let Some(&d) = dim[1..4].iter().find(|&&d| d <= 0) {
        return Err(NiftiError::BadExtent(d).into());
    }
    let (nx, ny, nz) = (dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let datatype = B::read_i16(&b[70..72]);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(NiftiError::UnsupportedDatatype(other).into()),
    };
    let offset = B::read_f32(&b[108..112]);
    if !(offset >= VOX_OFFSET as f32) || offset.fract() != 0.0 {
        return Err(NiftiError::BadOffset(offset).into());
    }
    let start = offset as usize;
    let n = nx * ny * nz;
    let expected = start + n * width;
    if b.len() < expected {
        return Err(NiftiError::Truncated { expected, found: b.len() }.into());
    }
    let payload = &b[start..expected];
    let dims = [nz, ny, nx];
    let data = match datatype {
        DT_UINT8 => NiftiData::U8(Grid::new(dims, payload.to_vec())?),
        DT_INT16 => {
            let mut v = vec![0i16; n];
            B::read_i16_into(payload, &mut v);
            NiftiData::I16(Grid::new(dims, v)?)
        }
        _ => {
            let mut v = vec![0f32; n];
            B::read_f32_into(payload, &mut v);
            NiftiData::F32(Grid::new(dims, v)?)
        }
    };
    let pix = |i: usize| B::read_f32(&b[76 + 4 * i..80 + 4 * i]);
    Ok(NiftiImage { data, spacing: [pix(1), pix(2), pix(3)] })
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn write_nifti(path: impl AsRef<Path>, img: &NiftiImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(img)).map_err(|e| Error::io(path, e))
}
