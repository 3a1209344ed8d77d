//! Overlap and surface-distance metrics in physical space.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fm;
use crate::volume::Mask;
use crate::Result;

fn check_geometry(a: &Mask, b: &Mask) -> Result<()> {
    if !a.same_geometry(b) {
        return Err(CoreError::GeometryMismatch(alloc::format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Dice overlap `2|A n B| / (|A| + |B|)`; two empty masks score 1.0.
pub fn dice_score(a: &Mask, b: &Mask) -> Result<f64> {
    check_geometry(a, b)?;
    let mut inter = 0usize;
    let mut sum = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        sum += (x + y) as usize;
    }
    if sum == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / sum as f64)
}

/// Foreground voxels with at least one six-connected background or
/// out-of-volume neighbor, as physical centers `(index + 0.5) * spacing`.
pub fn boundary_points(m: &Mask) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = m.dims();
    let sp = m.spacing_mm();
    let data = m.data();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if data[idx(x, y, z)] == 0 {
                    continue;
                }
                let on_surface = x == 0
                    || data[idx(x - 1, y, z)] == 0
                    || x + 1 == nx
                    || data[idx(x + 1, y, z)] == 0
                    || y == 0
                    || data[idx(x, y - 1, z)] == 0
                    || y + 1 == ny
                    || data[idx(x, y + 1, z)] == 0
                    || z == 0
                    || data[idx(x, y, z - 1)] == 0
                    || z + 1 == nz
                    || data[idx(x, y, z + 1)] == 0;
                if on_surface {
                    out.push([
                        (x as f64 + 0.5) * sp[0],
                        (y as f64 + 0.5) * sp[1],
                        (z as f64 + 0.5) * sp[2],
                    ]);
                }
            }
        }
    }
    out
}

fn directed_hausdorff_sq(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut worst = 0.0f64;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d = (p[0] - q[0]) * (p[0] - q[0])
                + (p[1] - q[1]) * (p[1] - q[1])
                + (p[2] - q[2]) * (p[2] - q[2]);
            if d < best {
                best = d;
                // this point can no longer raise the maximum
                if best <= worst {
                    break;
                }
            }
        }
        if best > worst {
            worst = best;
        }
    }
    worst
}

/// Exact symmetric Hausdorff distance between mask boundaries, in
/// millimeters. Errors when either mask is empty.
pub fn hausdorff_mm(a: &Mask, b: &Mask) -> Result<f64> {
    check_geometry(a, b)?;
    let pa = boundary_points(a);
    let pb = boundary_points(b);
    if pa.is_empty() || pb.is_empty() {
        return Err(CoreError::UndefinedDistance);
    }
    let d2 = directed_hausdorff_sq(&pa, &pb).max(directed_hausdorff_sq(&pb, &pa));
    Ok(fm::sqrt(d2))
}
