//! Direct "same"-padded dilated 3D cross-correlation via per-plane im2col.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Real};

/// Target size (in scalars) of one im2col scratch block.
const COLS_BUDGET: usize = 1 << 19;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub dims: [usize; 3],
    pub k: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], dilation: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::dim("conv3d", format!("input must be [C,Z,Y,X], got {input:?}")));
        }
        if weight.len() != 5 || weight[2] != weight[3] || weight[3] != weight[4] {
            return Err(Error::dim(
                "conv3d",
                format!("weight must be [Cout,Cin,k,k,k], got {weight:?}"),
            ));
        }
        let k = weight[2];
        if k % 2 == 0 {
            return Err(Error::dim("conv3d", format!("kernel size {k} must be odd")));
        }
        if dilation == 0 {
            return Err(Error::dim("conv3d", "dilation must be positive"));
        }
        if weight[1] != input[0] {
            return Err(Error::dim(
                "conv3d",
                format!("input has {} channels, weight expects {}", input[0], weight[1]),
            ));
        }
        if bias != [weight[0]] {
            return Err(Error::dim(
                "conv3d",
                format!("bias shape {bias:?} does not match {} output channels", weight[0]),
            ));
        }
        Ok(Self {
            cin: input[0],
            cout: weight[0],
            dims: [input[1], input[2], input[3]],
            k,
            dilation,
            pad: dilation * (k - 1) / 2,
        })
    }

    fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    fn plane(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn planes_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.rows() * self.plane()).max(1)).clamp(1, self.dims[0])
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1
    }
}

/// Valid output range `[lo, hi)` along an axis of length `n` for a tap offset.
#[inline]
fn valid_range(n: usize, offset: isize) -> (usize, usize) {
    let n = n as isize;
    let lo = (-offset).clamp(0, n);
    let hi = (n - offset).clamp(0, n);
    (lo as usize, hi.max(lo) as usize)
}

/// Fills `cols[K, nz * Y * X]` for output planes `[z0, z0 + nz)`.
///
/// Each (row, plane) pair is one contiguous copy shifted by the tap offset;
/// entries that wrapped across an x-row boundary are zeroed afterwards.
fn im2col<T: Real>(g: &ConvGeom, input: &[T], z0: usize, nz: usize, cols: &mut [T]) {
    let [zd, yd, xd] = g.dims;
    let plane = g.plane();
    let vol = g.voxels();
    let len = nz * plane;
    let d = g.dilation as isize;
    let pad = g.pad as isize;
    let total = input.len() as isize;
    let zero = T::zero();
    let mut r = 0;
    for ci in 0..g.cin {
        for a in 0..g.k {
            let oz = a as isize * d - pad;
            for b in 0..g.k {
                let oy = b as isize * d - pad;
                let (ylo, yhi) = valid_range(yd, oy);
                for c in 0..g.k {
                    let ox = c as isize * d - pad;
                    let (xlo, xhi) = valid_range(xd, ox);
                    let row = &mut cols[r * len..(r + 1) * len];
                    r += 1;
                    for zl in 0..nz {
                        let dst = &mut row[zl * plane..(zl + 1) * plane];
                        let iz = (z0 + zl) as isize + oz;
                        if iz < 0 || iz >= zd as isize || ylo >= yhi || xlo >= xhi {
                            dst.fill(zero);
                            continue;
                        }
                        dst[..ylo * xd].fill(zero);
                        dst[yhi * xd..].fill(zero);
                        let d0 = ylo * xd;
                        let n = ((yhi - ylo) * xd) as isize;
                        let s0 = (ci * vol) as isize + (iz * yd as isize + ylo as isize + oy) * xd as isize + ox;
                        let lo_clip = (-s0).max(0);
                        let hi_clip = (s0 + n - total).max(0);
                        let (c0, c1) = (d0 + lo_clip as usize, d0 + (n - hi_clip) as usize);
                        dst[d0..c0].fill(zero);
                        dst[c1..d0 + n as usize].fill(zero);
                        let src0 = (s0 + lo_clip) as usize;
                        dst[c0..c1].copy_from_slice(&input[src0..src0 + (c1 - c0)]);
                        if xlo > 0 || xhi < xd {
                            for y in ylo..yhi {
                                let line = &mut dst[y * xd..(y + 1) * xd];
                                line[..xlo].fill(zero);
                                line[xhi..].fill(zero);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out += W * im2col(input)` for the geometry `g`.
fn accumulate<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], out: &mut [T]) {
    let vol = g.voxels();
    let w = MatRef::row_major(weight, g.cout, g.rows());
    if g.is_pointwise() {
        gemm(T::one(), w, MatRef::row_major(input, g.cin, vol), T::one(), out, vol);
        return;
    }
    let step = g.planes_per_chunk();
    let mut cols = vec![T::zero(); g.rows() * step * g.plane()];
    let mut z0 = 0;
    while z0 < g.dims[0] {
        let nz = step.min(g.dims[0] - z0);
        let len = nz * g.plane();
        let cols = &mut cols[..g.rows() * len];
        im2col(g, input, z0, nz, cols);
        let v0 = z0 * g.plane();
        gemm(T::one(), w, MatRef::row_major(cols, g.rows(), len), T::one(), &mut out[v0..], vol);
        z0 += nz;
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let vol = g.voxels();
    let mut out = vec![T::zero(); g.cout * vol];
    for (co, row) in out.chunks_mut(vol).enumerate() {
        row.fill(bias[co]);
    }
    accumulate(g, input, weight, &mut out);
    out
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
///
/// The input gradient is itself a "same" convolution of `grad_out` with the
/// spatially flipped, channel-transposed kernel; symmetric padding makes the
/// two exactly equivalent at stride 1.
pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let vol = g.voxels();
    if let Some(gb) = grad_b {
        for (co, row) in grad_out.chunks(vol).enumerate() {
            gb[co] += row.iter().copied().sum::<T>();
        }
    }
    if let Some(gi) = grad_in {
        let taps = g.k * g.k * g.k;
        let mut flipped = vec![T::zero(); weight.len()];
        for co in 0..g.cout {
            for ci in 0..g.cin {
                let src = &weight[(co * g.cin + ci) * taps..][..taps];
                let dst = &mut flipped[(ci * g.cout + co) * taps..][..taps];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = src[taps - 1 - t];
                }
            }
        }
        let tg = ConvGeom { cin: g.cout, cout: g.cin, ..*g };
        accumulate(&tg, grad_out, &flipped, gi);
    }
    let Some(gw) = grad_w else { return };
    let rows = g.rows();
    if g.is_pointwise() {
        let gout = MatRef::row_major(grad_out, g.cout, vol);
        gemm(T::one(), gout, MatRef::row_major(input, g.cin, vol).t(), T::one(), gw, rows);
        return;
    }
    let step = g.planes_per_chunk();
    let mut cols = vec![T::zero(); rows * step * g.plane()];
    let mut z0 = 0;
    while z0 < g.dims[0] {
        let nz = step.min(g.dims[0] - z0);
        let len = nz * g.plane();
        let v0 = z0 * g.plane();
        let gout = MatRef { data: &grad_out[v0..], rows: g.cout, cols: len, rs: vol, cs: 1 };
        let cols = &mut cols[..rows * len];
        im2col(g, input, z0, nz, cols);
        gemm(T::one(), gout, MatRef::row_major(&*cols, rows, len).t(), T::one(), gw, rows);
        z0 += nz;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let [zd, yd, xd] = g.dims;
        let k = g.k;
        let mut out = vec![0.0; g.cout * zd * yd * xd];
        for co in 0..g.cout {
            for z in 0..zd {
                for y in 0..yd {
                    for x in 0..xd {
                        let mut acc = bias[co];
                        for ci in 0..g.cin {
                            for a in 0..k {
                                for b in 0..k {
                                    for c in 0..k {
                                        let iz = z as isize + (a * g.dilation) as isize - g.pad as isize;
                                        let iy = y as isize + (b * g.dilation) as isize - g.pad as isize;
                                        let ix = x as isize + (c * g.dilation) as isize - g.pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= zd || iy >= yd || ix >= xd {
                                            continue;
                                        }
                                        acc += weight[(((co * g.cin + ci) * k + a) * k + b) * k + c]
                                            * input[((ci * zd + iz) * yd + iy) * xd + ix];
                                    }
                                }
                            }
                        }
                        out[((co * zd + z) * yd + y) * xd + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_over_dilations_and_odd_dims() {
        for (dims, dil, k) in [([3, 4, 5], 1, 3), ([5, 3, 6], 2, 3), ([4, 4, 4], 3, 3), ([2, 3, 2], 1, 1), ([6, 5, 4], 1, 5)] {
            let (cin, cout) = (2, 3);
            let inp: Vec<f64> = (0..cin * dims.iter().product::<usize>())
                .map(|i| ((i * 37 % 11) as f64) - 5.0)
                .collect();
            let wn = cout * cin * k * k * k;
            let w: Vec<f64> = (0..wn).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7).collect();
            let b = vec![0.5, -1.0, 2.0];
            let g = ConvGeom::new(&[cin, dims[0], dims[1], dims[2]], &[cout, cin, k, k, k], &[cout], dil)
                .unwrap();
            let got = forward(&g, &inp, &w, &b);
            let want = brute(&g, &inp, &w, &b);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b} dims {dims:?} dil {dil}");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_even_kernels() {
        assert!(ConvGeom::new(&[2, 4, 4, 4], &[1, 3, 3, 3, 3], &[1], 1).is_err());
        assert!(ConvGeom::new(&[2, 4, 4, 4], &[1, 2, 2, 2, 2], &[1], 1).is_err());
        assert!(ConvGeom::new(&[2, 4, 4, 4], &[1, 2, 3, 3, 3], &[2], 1).is_err());
    }
}
