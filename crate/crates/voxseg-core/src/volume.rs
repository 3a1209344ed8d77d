//! 3D scalar volumes and binary masks with physical voxel spacing.
//!
//! Data is stored x-fastest (`index = x + nx*(y + ny*z)`). Volumes are
//! immutable after construction and all operations are pure functions, so
//! any number of readers may share one concurrently.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fm;
use crate::Result;

/// Dense 3D scalar grid with voxel spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    data: Vec<f32>,
}

fn check_geometry(dims: [usize; 3], spacing_mm: [f64; 3], len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(CoreError::InvalidDims(dims));
    }
    if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(CoreError::InvalidSpacing(spacing_mm));
    }
    let expected = dims[0] * dims[1] * dims[2];
    if len != expected {
        return Err(CoreError::LengthMismatch {
            dims,
            expected,
            got: len,
        });
    }
    Ok(())
}

impl Volume {
    /// Build a volume, validating dims, spacing, length and finiteness.
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing_mm, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing_mm,
            data,
        })
    }

    pub fn constant(dims: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing_mm, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn same_geometry(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing_mm == other.spacing_mm
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Replace the payload, keeping geometry. Values must be finite.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing_mm, data)
    }

    /// Mirror the volume along the requested axes.
    pub fn flipped(&self, axes: [bool; 3]) -> Volume {
        Volume {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            data: flip_data(&self.data, self.dims, axes),
        }
    }

    /// Extract the axis-aligned box starting at `origin` with size `size`.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Volume> {
        Ok(Volume {
            dims: size,
            spacing_mm: self.spacing_mm,
            data: crop_data(&self.data, self.dims, origin, size)?,
        })
    }
}

/// Binary grid sharing the geometry of its paired volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    spacing_mm_bits: [u64; 3],
    data: Vec<u8>,
}

impl Mask {
    /// Build a mask from 0/1 bytes.
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing_mm, data.len())?;
        if let Some(index) = data.iter().position(|&v| v > 1) {
            return Err(CoreError::NotBinary {
                index,
                value: data[index] as f32,
            });
        }
        Ok(Self {
            dims,
            spacing_mm_bits: spacing_mm.map(f64::to_bits),
            data,
        })
    }

    /// Strict conversion from a scalar volume holding exactly 0.0/1.0 values.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        let mut data = Vec::with_capacity(v.voxel_count());
        for (index, &x) in v.data().iter().enumerate() {
            if x == 0.0 {
                data.push(0);
            } else if x == 1.0 {
                data.push(1);
            } else {
                return Err(CoreError::NotBinary { index, value: x });
            }
        }
        Mask::new(v.dims(), v.spacing_mm(), data)
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing_mm: self.spacing_mm(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm_bits.map(f64::from_bits)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_geometry_as_volume(&self, v: &Volume) -> bool {
        self.dims == v.dims() && self.spacing_mm() == v.spacing_mm()
    }

    pub fn same_geometry(&self, other: &Mask) -> bool {
        self.dims == other.dims && self.spacing_mm_bits == other.spacing_mm_bits
    }

    pub fn flipped(&self, axes: [bool; 3]) -> Mask {
        Mask {
            dims: self.dims,
            spacing_mm_bits: self.spacing_mm_bits,
            data: flip_data(&self.data, self.dims, axes),
        }
    }

    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Mask> {
        Ok(Mask {
            dims: size,
            spacing_mm_bits: self.spacing_mm_bits,
            data: crop_data(&self.data, self.dims, origin, size)?,
        })
    }
}

/// Multi-channel volume used as network input; channel-major layout
/// (`data[c * nvox + voxel]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVolume {
    channels: usize,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    data: Vec<f32>,
}

impl ChannelVolume {
    pub fn from_channels(parts: &[&Volume]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or(CoreError::EmptyInput("channel list"))?;
        let nvox = first.voxel_count();
        let mut data = Vec::with_capacity(nvox * parts.len());
        for p in parts {
            if !p.same_geometry(first) {
                return Err(CoreError::GeometryMismatch(format!(
                    "channel dims {:?} vs {:?}",
                    p.dims(),
                    first.dims()
                )));
            }
            data.extend_from_slice(p.data());
        }
        Ok(Self {
            channels: parts.len(),
            dims: first.dims(),
            spacing_mm: first.spacing_mm(),
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Binarize a probability volume at `threshold` (foreground when
/// `p >= threshold`).
pub fn threshold_mask(probs: &Volume, threshold: f64) -> Mask {
    Mask {
        dims: probs.dims,
        spacing_mm_bits: probs.spacing_mm.map(f64::to_bits),
        data: probs
            .data
            .iter()
            .map(|&p| (p as f64 >= threshold) as u8)
            .collect(),
    }
}

fn crop_data<T: Copy>(
    data: &[T],
    dims: [usize; 3],
    origin: [usize; 3],
    size: [usize; 3],
) -> Result<Vec<T>> {
    let [nx, ny, _]: [usize; 3] = dims;
    if size.iter().any(|&s| s == 0) {
        return Err(CoreError::InvalidDims(size));
    }
    for a in 0..3 {
        if origin[a] + size[a] > dims[a] {
            return Err(CoreError::GeometryMismatch(format!(
                "crop {origin:?}+{size:?} exceeds dims {dims:?}"
            )));
        }
    }
    let mut out = Vec::with_capacity(size[0] * size[1] * size[2]);
    for z in origin[2]..origin[2] + size[2] {
        for y in origin[1]..origin[1] + size[1] {
            let base = (z * ny + y) * nx + origin[0];
            out.extend_from_slice(&data[base..base + size[0]]);
        }
    }
    Ok(out)
}

pub(crate) fn flip_data<T: Copy>(data: &[T], dims: [usize; 3], axes: [bool; 3]) -> Vec<T> {
    let [nx, ny, nz] = dims;
    let mut out = Vec::with_capacity(data.len());
    for z in 0..nz {
        let sz = if axes[2] { nz - 1 - z } else { z };
        for y in 0..ny {
            let sy = if axes[1] { ny - 1 - y } else { y };
            for x in 0..nx {
                let sx = if axes[0] { nx - 1 - x } else { x };
                out.push(data[sx + nx * (sy + ny * sz)]);
            }
        }
    }
    out
}

/// Resample onto a new grid with the requested spacing using trilinear
/// interpolation.
///
/// Output dims are `round(dim_i * s_i / t_i)` clamped to >= 1. Voxel centers
/// sit at `(i + 0.5) * spacing`; coordinates outside the source grid clamp to
/// the boundary, so output values always stay within the source value range.
pub fn resample_trilinear(v: &Volume, target_spacing_mm: [f64; 3]) -> Result<Volume> {
    if target_spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(CoreError::InvalidSpacing(target_spacing_mm));
    }
    let src_dims = v.dims();
    let src_sp = v.spacing_mm();
    let mut out_dims = [0usize; 3];
    let mut scale = [0f64; 3];
    for a in 0..3 {
        let extent = src_dims[a] as f64 * src_sp[a];
        out_dims[a] = (fm::round(extent / target_spacing_mm[a]) as usize).max(1);
        // t/s == 1.0 exactly when spacings match, which makes the identity
        // case bit-exact below.
        scale[a] = target_spacing_mm[a] / src_sp[a];
    }

    let [nx, ny, nz] = src_dims;
    let mut data = Vec::with_capacity(out_dims[0] * out_dims[1] * out_dims[2]);
    for z in 0..out_dims[2] {
        let (z0, z1, fz) = axis_coord(z, scale[2], nz);
        for y in 0..out_dims[1] {
            let (y0, y1, fy) = axis_coord(y, scale[1], ny);
            for x in 0..out_dims[0] {
                let (x0, x1, fx) = axis_coord(x, scale[0], nx);
                let c000 = v.data[x0 + nx * (y0 + ny * z0)] as f64;
                let c100 = v.data[x1 + nx * (y0 + ny * z0)] as f64;
                let c010 = v.data[x0 + nx * (y1 + ny * z0)] as f64;
                let c110 = v.data[x1 + nx * (y1 + ny * z0)] as f64;
                let c001 = v.data[x0 + nx * (y0 + ny * z1)] as f64;
                let c101 = v.data[x1 + nx * (y0 + ny * z1)] as f64;
                let c011 = v.data[x0 + nx * (y1 + ny * z1)] as f64;
                let c111 = v.data[x1 + nx * (y1 + ny * z1)] as f64;
                let c00 = c000 + (c100 - c000) * fx;
                let c10 = c010 + (c110 - c010) * fx;
                let c01 = c001 + (c101 - c001) * fx;
                let c11 = c011 + (c111 - c011) * fx;
                let c0 = c00 + (c10 - c00) * fy;
                let c1 = c01 + (c11 - c01) * fy;
                data.push((c0 + (c1 - c0) * fz) as f32);
            }
        }
    }
    Volume::new(out_dims, target_spacing_mm, data)
}

/// Map output index `i` to clamped source neighbors and interpolation weight.
#[inline]
fn axis_coord(i: usize, scale: f64, n: usize) -> (usize, usize, f64) {
    // Physical center (i + 0.5) * t expressed in source index space.
    let u = (i as f64 + 0.5) * scale - 0.5;
    let u = u.clamp(0.0, (n - 1) as f64);
    let i0 = (fm::floor(u) as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, u - i0 as f64)
}

/// Shift to zero mean and unit population standard deviation.
///
/// Inputs with std below 1e-8 come back as all zeros.
pub fn zscore_normalize(v: &Volume) -> Volume {
    let n = v.voxel_count() as f64;
    let mut sum = 0.0f64;
    for &x in v.data() {
        sum += x as f64;
    }
    let mean = sum / n;
    let mut ss = 0.0f64;
    for &x in v.data() {
        let d = x as f64 - mean;
        ss += d * d;
    }
    let std = fm::sqrt(ss / n);
    let data = if std < 1e-8 {
        vec![0.0f32; v.voxel_count()]
    } else {
        v.data()
            .iter()
            .map(|&x| ((x as f64 - mean) / std) as f32)
            .collect()
    };
    Volume {
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ramp_volume() -> Volume {
        // data[x,y,z] = x
        let mut data = Vec::new();
        for _z in 0..8 {
            for _y in 0..8 {
                for x in 0..8 {
                    data.push(x as f32);
                }
            }
        }
        Volume::new([8, 8, 8], [1.0, 1.0, 1.0], data).unwrap()
    }

    #[test]
    fn new_rejects_bad_inputs() {
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0, 1.0, 1.0], vec![0.0; 7]),
            Err(CoreError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Volume::new([1, 1, 1], [1.0, 1.0, -2.5], vec![0.0]),
            Err(CoreError::InvalidSpacing(_))
        ));
        assert!(matches!(
            Volume::new([1, 1, 1], [1.0, 1.0, 1.0], vec![f32::NAN]),
            Err(CoreError::NonFinite(0))
        ));
        assert!(matches!(
            Volume::new([0, 1, 1], [1.0; 3], vec![]),
            Err(CoreError::InvalidDims(_))
        ));
    }

    #[test]
    fn mask_requires_binary_values() {
        assert!(Mask::new([1, 1, 2], [1.0; 3], vec![0, 1]).is_ok());
        assert!(matches!(
            Mask::new([1, 1, 2], [1.0; 3], vec![0, 2]),
            Err(CoreError::NotBinary { index: 1, .. })
        ));
        let v = Volume::new([1, 1, 2], [1.0; 3], vec![0.0, 0.5]).unwrap();
        assert!(Mask::from_volume(&v).is_err());
    }

    #[test]
    fn resample_same_spacing_is_identity() {
        let v = ramp_volume();
        let r = resample_trilinear(&v, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v, r);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let v = Volume::constant([8, 8, 8], [1.0, 2.0, 0.5], 3.25).unwrap();
        let r = resample_trilinear(&v, [1.7, 0.9, 1.1]).unwrap();
        assert!(r.data().iter().all(|&x| x == 3.25));
    }

    #[test]
    fn resample_linear_ramp_matches_analytic() {
        // Downsample by 2 along x. Output center j maps to source index
        // u = (j + 0.5) * 2 - 0.5, and the field value equals its x index,
        // so the expected value is exactly u (all interior points).
        let v = ramp_volume();
        let r = resample_trilinear(&v, [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.dims(), [4, 8, 8]);
        for z in 0..8 {
            for y in 0..8 {
                for j in 0..4 {
                    let expected = (j as f64 + 0.5) * 2.0 - 0.5;
                    let got = r.get(j, y, z) as f64;
                    assert!(
                        (got - expected).abs() < 1e-6,
                        "j={j} got {got} expected {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn resample_rejects_bad_spacing() {
        let v = ramp_volume();
        assert!(resample_trilinear(&v, [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn zscore_two_point() {
        let v = Volume::new([2, 1, 1], [1.0; 3], vec![0.0, 2.0]).unwrap();
        let z = zscore_normalize(&v);
        assert_eq!(z.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn zscore_constant_is_all_zero() {
        let v = Volume::constant([3, 3, 3], [1.0; 3], 7.5).unwrap();
        let z = zscore_normalize(&v);
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zscore_statistics_oracle() {
        let mut rng = crate::rng::stream(11, &[crate::rng::STREAM_PHANTOM]);
        let data: Vec<f32> = (0..512).map(|_| rng.gen_range(-3.0f32..9.0)).collect();
        let v = Volume::new([8, 8, 8], [1.0; 3], data).unwrap();
        let z = zscore_normalize(&v);
        let n = 512.0f64;
        let mean: f64 = z.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var: f64 = z.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());

        // idempotence up to 1e-6
        let zz = zscore_normalize(&z);
        for (a, b) in z.data().iter().zip(zz.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn flip_is_involution() {
        let v = ramp_volume();
        let f = v.flipped([true, false, true]);
        assert_ne!(v, f);
        assert_eq!(v, f.flipped([true, false, true]));
    }

    #[test]
    fn channel_volume_layout() {
        let a = Volume::constant([2, 2, 2], [1.0; 3], 1.0).unwrap();
        let b = Volume::constant([2, 2, 2], [1.0; 3], 2.0).unwrap();
        let cv = ChannelVolume::from_channels(&[&a, &b]).unwrap();
        assert_eq!(cv.channels(), 2);
        assert!(cv.channel(0).iter().all(|&x| x == 1.0));
        assert!(cv.channel(1).iter().all(|&x| x == 2.0));
        let c = Volume::constant([2, 2, 1], [1.0; 3], 0.0).unwrap();
        assert!(ChannelVolume::from_channels(&[&a, &c]).is_err());
    }

    proptest! {
        // Trilinear interpolation is convex, so resampling never leaves the
        // source value range.
        #[test]
        fn resample_stays_within_bounds(seed in 0u64..40, tx in 0.3f64..3.0, ty in 0.3f64..3.0, tz in 0.3f64..3.0) {
            let mut rng = crate::rng::stream(seed, &[99]);
            let data: Vec<f32> = (0..5 * 6 * 4).map(|_| rng.gen_range(-2.0f32..5.0)).collect();
            let v = Volume::new([5, 6, 4], [1.0, 0.8, 2.5], data).unwrap();
            let (lo, hi) = v.min_max();
            let r = resample_trilinear(&v, [tx, ty, tz]).unwrap();
            for &x in r.data() {
                prop_assert!(x >= lo - 1e-4 && x <= hi + 1e-4);
            }
        }
    }
}
