//! Dense kernels for 3×3×3 "same" convolution and 2×2×2 max pooling on
//! `channels × voxels` matrices.

use serde::{Deserialize, Serialize};

/// Spatial extent of a volumetric feature map, row-major `(x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VolumeDims {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn cube(side: usize) -> Self {
        Self::new(side, side, side)
    }

    pub fn voxels(&self) -> usize {
        self.x * self.y * self.z
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.y + y) * self.z + z
    }

    /// Extent after a stride-2 pool (floor division, never below 1).
    pub fn pooled(&self) -> Self {
        Self::new((self.x / 2).max(1), (self.y / 2).max(1), (self.z / 2).max(1))
    }
}

pub(crate) const KERNEL: usize = 27;

/// Unfold `input` (`c_in × V`) into a `(c_in·27) × V` patch matrix with zero
/// padding of one voxel on every face.
pub(crate) fn im2col(input: &[f64], c_in: usize, dims: VolumeDims) -> Vec<f64> {
    let v = dims.voxels();
    let mut cols = vec![0.0; c_in * KERNEL * v];
    for ci in 0..c_in {
        let src = &input[ci * v..(ci + 1) * v];
        for k in 0..KERNEL {
            let (dx, dy, dz) = offset(k);
            let dst = &mut cols[(ci * KERNEL + k) * v..(ci * KERNEL + k + 1) * v];
            for x in 0..dims.x {
                let nx = x as isize + dx;
                if nx < 0 || nx >= dims.x as isize {
                    continue;
                }
                for y in 0..dims.y {
                    let ny = y as isize + dy;
                    if ny < 0 || ny >= dims.y as isize {
                        continue;
                    }
                    let row = dims.index(x, y, 0);
                    let nrow = dims.index(nx as usize, ny as usize, 0);
                    for z in 0..dims.z {
                        let nz = z as isize + dz;
                        if nz < 0 || nz >= dims.z as isize {
                            continue;
                        }
                        dst[row + z] = src[nrow + nz as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], c_in: usize, dims: VolumeDims) -> Vec<f64> {
    let v = dims.voxels();
    let mut out = vec![0.0; c_in * v];
    for ci in 0..c_in {
        let dst = &mut out[ci * v..(ci + 1) * v];
        for k in 0..KERNEL {
            let (dx, dy, dz) = offset(k);
            let src = &cols[(ci * KERNEL + k) * v..(ci * KERNEL + k + 1) * v];
            for x in 0..dims.x {
                let nx = x as isize + dx;
                if nx < 0 || nx >= dims.x as isize {
                    continue;
                }
                for y in 0..dims.y {
                    let ny = y as isize + dy;
                    if ny < 0 || ny >= dims.y as isize {
                        continue;
                    }
                    let row = dims.index(x, y, 0);
                    let nrow = dims.index(nx as usize, ny as usize, 0);
                    for z in 0..dims.z {
                        let nz = z as isize + dz;
                        if nz < 0 || nz >= dims.z as isize {
                            continue;
                        }
                        dst[nrow + nz as usize] += src[row + z];
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn offset(k: usize) -> (isize, isize, isize) {
    ((k / 9) as isize - 1, ((k / 3) % 3) as isize - 1, (k % 3) as isize - 1)
}

/// 2×2×2 stride-2 max pooling. Returns the pooled map and, for every output
/// element, the flat input index that won. Axes of length 1 are not pooled.
pub(crate) fn maxpool(input: &[f64], channels: usize, dims: VolumeDims) -> (Vec<f64>, Vec<usize>) {
    let out_dims = dims.pooled();
    let (sx, sy, sz) = (
        if dims.x > 1 { 2 } else { 1 },
        if dims.y > 1 { 2 } else { 1 },
        if dims.z > 1 { 2 } else { 1 },
    );
    let v_in = dims.voxels();
    let v_out = out_dims.voxels();
    let mut out = vec![0.0; channels * v_out];
    let mut arg = vec![0usize; channels * v_out];
    for c in 0..channels {
        for ox in 0..out_dims.x {
            for oy in 0..out_dims.y {
                for oz in 0..out_dims.z {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ix in ox * sx..ox * sx + sx {
                        for iy in oy * sy..oy * sy + sy {
                            for iz in oz * sz..oz * sz + sz {
                                let idx = c * v_in + dims.index(ix, iy, iz);
                                if input[idx] > best {
                                    best = input[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let o = c * v_out + out_dims.index(ox, oy, oz);
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let dims = VolumeDims::new(3, 4, 2);
        let c_in = 2;
        let x: Vec<f64> = (0..c_in * dims.voxels()).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_len = c_in * KERNEL * dims.voxels();
        let c: Vec<f64> = (0..cols_len).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, c_in, dims).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&c, c_in, dims)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_block_maximum() {
        let dims = VolumeDims::cube(2);
        let input = vec![0.1, 0.5, -1.0, 0.2, 0.3, 0.9, 0.0, 0.4];
        let (out, arg) = maxpool(&input, 1, dims);
        assert_eq!(out, vec![0.9]);
        assert_eq!(arg, vec![5]);
    }
}
