//! Structural similarity over 3D volumes.
//!
//! Uniform 7x7x7 windows at stride 1, fully inside the volume; when any
//! dimension is smaller than 7 the whole volume forms a single window. The
//! dynamic range is data-derived: `L = max(a.max, b.max) - min(a.min,
//! b.min)` floored at 1e-6, with `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
//! Window statistics come from integral tables (moment sums), so evaluation
//! and gradient are O(n) over voxels.
//!
//! The gradient is exact for the full data-derived expression, including the
//! dependence of `L` on the extreme values of `a`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::volume::Volume;
use crate::Result;

pub const SSIM_WINDOW: usize = 7;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L_FLOOR: f64 = 1e-6;

/// Mean structural similarity of two equally shaped volumes, in [-1, 1].
pub fn ssim3d(a: &Volume, b: &Volume) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(CoreError::GeometryMismatch(alloc::format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let av: Vec<f64> = a.data().iter().map(|&x| x as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&x| x as f64).collect();
    Ok(ssim_value(&av, &bv, a.dims()))
}

/// Prefix-sum table with one layer of zero padding in front of each axis.
struct Integral {
    nx1: usize,
    ny1: usize,
    data: Vec<f64>,
}

impl Integral {
    fn build(values: impl Iterator<Item = f64>, dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        let (nx1, ny1, nz1) = (nx + 1, ny + 1, nz + 1);
        let mut data = vec![0.0; nx1 * ny1 * nz1];
        let mut src = values;
        for z in 1..nz1 {
            for y in 1..ny1 {
                let mut row_acc = 0.0;
                for x in 1..nx1 {
                    row_acc += src.next().expect("length matches dims");
                    // data[x,y,z] = row_acc + data[x,y-1,z] + data[x,y,z-1] - data[x,y-1,z-1]
                    let idx = x + nx1 * (y + ny1 * z);
                    data[idx] = row_acc + data[x + nx1 * ((y - 1) + ny1 * z)]
                        + data[x + nx1 * (y + ny1 * (z - 1))]
                        - data[x + nx1 * ((y - 1) + ny1 * (z - 1))];
                }
            }
        }
        Self { nx1, ny1, data }
    }

    /// Sum over `[x0, x1) x [y0, y1) x [z0, z1)`.
    #[inline]
    fn box_sum(&self, x0: usize, x1: usize, y0: usize, y1: usize, z0: usize, z1: usize) -> f64 {
        let at = |x: usize, y: usize, z: usize| self.data[x + self.nx1 * (y + self.ny1 * z)];
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0)
            + at(x0, y0, z1)
            + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }
}

fn dynamic_range(a: &[f64], b: &[f64]) -> (f64, bool, usize, usize) {
    let mut a_min = f64::INFINITY;
    let mut a_max = f64::NEG_INFINITY;
    let mut arg_min = 0;
    let mut arg_max = 0;
    for (i, &x) in a.iter().enumerate() {
        if x < a_min {
            a_min = x;
            arg_min = i;
        }
        if x > a_max {
            a_max = x;
            arg_max = i;
        }
    }
    let mut b_min = f64::INFINITY;
    let mut b_max = f64::NEG_INFINITY;
    for &x in b {
        b_min = b_min.min(x);
        b_max = b_max.max(x);
    }
    let raw = a_max.max(b_max) - a_min.min(b_min);
    let floored = raw < L_FLOOR;
    (raw.max(L_FLOOR), floored, arg_min, arg_max)
}

struct WindowGeometry {
    wx: usize,
    wy: usize,
    wz: usize,
    ox: usize,
    oy: usize,
    oz: usize,
}

fn window_geometry(dims: [usize; 3]) -> WindowGeometry {
    let [nx, ny, nz] = dims;
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW || nz < SSIM_WINDOW {
        WindowGeometry {
            wx: nx,
            wy: ny,
            wz: nz,
            ox: 1,
            oy: 1,
            oz: 1,
        }
    } else {
        WindowGeometry {
            wx: SSIM_WINDOW,
            wy: SSIM_WINDOW,
            wz: SSIM_WINDOW,
            ox: nx - SSIM_WINDOW + 1,
            oy: ny - SSIM_WINDOW + 1,
            oz: nz - SSIM_WINDOW + 1,
        }
    }
}

struct WindowTerms {
    s: f64,
    // scatter coefficients for the gradient, see ssim_with_grad
    c_const: f64,
    c_a: f64,
    c_b: f64,
    // sensitivity of S to the stabilizer constants
    ds_dc1: f64,
    ds_dc2: f64,
}

#[allow(clippy::too_many_arguments)]
fn window_terms(
    sum_a: f64,
    sum_b: f64,
    sum_aa: f64,
    sum_bb: f64,
    sum_ab: f64,
    n: f64,
    c1: f64,
    c2: f64,
) -> WindowTerms {
    let mu_a = sum_a / n;
    let mu_b = sum_b / n;
    let var_a = sum_aa / n - mu_a * mu_a;
    let var_b = sum_bb / n - mu_b * mu_b;
    let cov = sum_ab / n - mu_a * mu_b;
    let a1 = 2.0 * mu_a * mu_b + c1;
    let a2 = 2.0 * cov + c2;
    let b1 = mu_a * mu_a + mu_b * mu_b + c1;
    let b2 = var_a + var_b + c2;
    let s = (a1 * a2) / (b1 * b2);
    let two_n = 2.0 / n;
    WindowTerms {
        s,
        c_const: two_n * (mu_b * (a2 - a1) / (b1 * b2) - s * mu_a / b1 + s * mu_a / b2),
        c_a: -two_n * s / b2,
        c_b: two_n * a1 / (b1 * b2),
        ds_dc1: a2 * (b1 - a1) / (b1 * b1 * b2),
        ds_dc2: a1 * (b2 - a2) / (b1 * b2 * b2),
    }
}

/// Mean SSIM over sliding windows; `a` and `b` are x-fastest volumes.
pub(crate) fn ssim_value(a: &[f64], b: &[f64], dims: [usize; 3]) -> f64 {
    let (l, _, _, _) = dynamic_range(a, b);
    let c1 = (K1 * l) * (K1 * l);
    let c2 = (K2 * l) * (K2 * l);
    let geo = window_geometry(dims);
    let n = (geo.wx * geo.wy * geo.wz) as f64;

    let ia = Integral::build(a.iter().copied(), dims);
    let ib = Integral::build(b.iter().copied(), dims);
    let iaa = Integral::build(a.iter().map(|&x| x * x), dims);
    let ibb = Integral::build(b.iter().map(|&x| x * x), dims);
    let iab = Integral::build(a.iter().zip(b).map(|(&x, &y)| x * y), dims);

    let mut acc = 0.0;
    for oz in 0..geo.oz {
        for oy in 0..geo.oy {
            for ox in 0..geo.ox {
                let (x1, y1, z1) = (ox + geo.wx, oy + geo.wy, oz + geo.wz);
                let t = window_terms(
                    ia.box_sum(ox, x1, oy, y1, oz, z1),
                    ib.box_sum(ox, x1, oy, y1, oz, z1),
                    iaa.box_sum(ox, x1, oy, y1, oz, z1),
                    ibb.box_sum(ox, x1, oy, y1, oz, z1),
                    iab.box_sum(ox, x1, oy, y1, oz, z1),
                    n,
                    c1,
                    c2,
                );
                acc += t.s;
            }
        }
    }
    acc / (geo.ox * geo.oy * geo.oz) as f64
}

/// SSIM value and gradient with respect to `a`.
pub(crate) fn ssim_with_grad(a: &[f64], b: &[f64], dims: [usize; 3]) -> (f64, Vec<f64>) {
    let (l, floored, arg_min, arg_max) = dynamic_range(a, b);
    let c1 = (K1 * l) * (K1 * l);
    let c2 = (K2 * l) * (K2 * l);
    let geo = window_geometry(dims);
    let n = (geo.wx * geo.wy * geo.wz) as f64;
    let w_count = (geo.ox * geo.oy * geo.oz) as f64;

    let ia = Integral::build(a.iter().copied(), dims);
    let ib = Integral::build(b.iter().copied(), dims);
    let iaa = Integral::build(a.iter().map(|&x| x * x), dims);
    let ibb = Integral::build(b.iter().map(|&x| x * x), dims);
    let iab = Integral::build(a.iter().zip(b).map(|(&x, &y)| x * y), dims);

    let odims = [geo.ox, geo.oy, geo.oz];
    let mut g_const = vec![0.0; geo.ox * geo.oy * geo.oz];
    let mut g_a = vec![0.0; geo.ox * geo.oy * geo.oz];
    let mut g_b = vec![0.0; geo.ox * geo.oy * geo.oz];
    let mut acc = 0.0;
    let mut ds_dl = 0.0;
    for oz in 0..geo.oz {
        for oy in 0..geo.oy {
            for ox in 0..geo.ox {
                let (x1, y1, z1) = (ox + geo.wx, oy + geo.wy, oz + geo.wz);
                let t = window_terms(
                    ia.box_sum(ox, x1, oy, y1, oz, z1),
                    ib.box_sum(ox, x1, oy, y1, oz, z1),
                    iaa.box_sum(ox, x1, oy, y1, oz, z1),
                    ibb.box_sum(ox, x1, oy, y1, oz, z1),
                    iab.box_sum(ox, x1, oy, y1, oz, z1),
                    n,
                    c1,
                    c2,
                );
                acc += t.s;
                let oi = ox + geo.ox * (oy + geo.oy * oz);
                g_const[oi] = t.c_const;
                g_a[oi] = t.c_a;
                g_b[oi] = t.c_b;
                ds_dl += t.ds_dc1 * 2.0 * K1 * K1 * l + t.ds_dc2 * 2.0 * K2 * K2 * l;
            }
        }
    }
    let value = acc / w_count;
    ds_dl /= w_count;

    // Sum window coefficients over all windows containing each voxel via
    // integral tables over the window-origin grid.
    let ic = Integral::build(g_const.iter().copied(), odims);
    let iga = Integral::build(g_a.iter().copied(), odims);
    let igb = Integral::build(g_b.iter().copied(), odims);

    let [nx, ny, nz] = dims;
    let mut grad = vec![0.0; a.len()];
    for z in 0..nz {
        let (z0, z1) = origin_span(z, geo.wz, geo.oz);
        for y in 0..ny {
            let (y0, y1) = origin_span(y, geo.wy, geo.oy);
            for x in 0..nx {
                let (x0, x1) = origin_span(x, geo.wx, geo.ox);
                let i = x + nx * (y + ny * z);
                let s_const = ic.box_sum(x0, x1, y0, y1, z0, z1);
                let s_a = iga.box_sum(x0, x1, y0, y1, z0, z1);
                let s_b = igb.box_sum(x0, x1, y0, y1, z0, z1);
                grad[i] = (s_const + s_a * a[i] + s_b * b[i]) / w_count;
            }
        }
    }

    // Dependence of the dynamic range on the extremes of `a`. Inactive when
    // the floor is hit or `b` alone determines the joint range.
    if !floored {
        let mut b_min = f64::INFINITY;
        let mut b_max = f64::NEG_INFINITY;
        for &x in b {
            b_min = b_min.min(x);
            b_max = b_max.max(x);
        }
        if a[arg_max] >= b_max {
            grad[arg_max] += ds_dl;
        }
        if a[arg_min] <= b_min {
            grad[arg_min] -= ds_dl;
        }
    }

    (value, grad)
}

/// Origins `o` with `o <= c < o + w`, clamped to the valid origin range.
#[inline]
fn origin_span(c: usize, w: usize, o_count: usize) -> (usize, usize) {
    let lo = c.saturating_sub(w - 1).min(o_count - 1);
    let hi = c.min(o_count - 1);
    (lo, hi + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_vol(seed: u64, dims: [usize; 3], lo: f32, hi: f32) -> Volume {
        let mut rng = crate::rng::stream(seed, &[51]);
        let n = dims[0] * dims[1] * dims[2];
        Volume::new(
            dims,
            [1.0; 3],
            (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    /// Direct per-window two-pass oracle.
    fn brute_force_ssim(a: &Volume, b: &Volume) -> f64 {
        let [nx, ny, nz] = a.dims();
        let (amin, amax) = a.min_max();
        let (bmin, bmax) = b.min_max();
        let l = ((amax.max(bmax) - amin.min(bmin)) as f64).max(1e-6);
        let c1 = (0.01 * l) * (0.01 * l);
        let c2 = (0.03 * l) * (0.03 * l);
        let (wx, wy, wz) = if nx < 7 || ny < 7 || nz < 7 {
            (nx, ny, nz)
        } else {
            (7, 7, 7)
        };
        let mut acc = 0.0;
        let mut count = 0;
        for oz in 0..=(nz - wz) {
            for oy in 0..=(ny - wy) {
                for ox in 0..=(nx - wx) {
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for z in oz..oz + wz {
                        for y in oy..oy + wy {
                            for x in ox..ox + wx {
                                xs.push(a.get(x, y, z) as f64);
                                ys.push(b.get(x, y, z) as f64);
                            }
                        }
                    }
                    let n = xs.len() as f64;
                    let mu_a: f64 = xs.iter().sum::<f64>() / n;
                    let mu_b: f64 = ys.iter().sum::<f64>() / n;
                    let var_a: f64 = xs.iter().map(|x| (x - mu_a) * (x - mu_a)).sum::<f64>() / n;
                    let var_b: f64 = ys.iter().map(|y| (y - mu_b) * (y - mu_b)).sum::<f64>() / n;
                    let cov: f64 = xs
                        .iter()
                        .zip(&ys)
                        .map(|(x, y)| (x - mu_a) * (y - mu_b))
                        .sum::<f64>()
                        / n;
                    acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                    count += 1;
                }
            }
        }
        acc / count as f64
    }

    #[test]
    fn self_similarity_is_one() {
        let a = random_vol(1, [9, 8, 7], -1.0, 2.0);
        let s = ssim3d(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "ssim(a,a) = {s}");
    }

    #[test]
    fn constant_volumes_closed_form() {
        // a = 0, b = 1 -> L = 1, single term (2*0*1 + 1e-4) / (0 + 1 + 1e-4)
        let a = Volume::constant([8, 8, 8], [1.0; 3], 0.0).unwrap();
        let b = Volume::constant([8, 8, 8], [1.0; 3], 1.0).unwrap();
        let s = ssim3d(&a, &b).unwrap();
        let expected = 1e-4 / 1.0001;
        assert!((s - expected).abs() < 1e-9, "{s} vs {expected}");
        assert!((s - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn matches_bruteforce_oracle() {
        let a = random_vol(2, [8, 8, 8], 0.0, 1.0);
        let b = random_vol(3, [8, 8, 8], 0.0, 1.0);
        let got = ssim3d(&a, &b).unwrap();
        let oracle = brute_force_ssim(&a, &b);
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn matches_bruteforce_on_small_volume() {
        // any dim < 7 -> single whole-volume window
        let a = random_vol(4, [5, 9, 4], -2.0, 2.0);
        let b = random_vol(5, [5, 9, 4], -1.0, 3.0);
        let got = ssim3d(&a, &b).unwrap();
        let oracle = brute_force_ssim(&a, &b);
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn symmetry() {
        let a = random_vol(6, [10, 9, 8], 0.0, 1.0);
        let b = random_vol(7, [10, 9, 8], 0.5, 1.5);
        let ab = ssim3d(&a, &b).unwrap();
        let ba = ssim3d(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let a = random_vol(8, [4, 4, 4], 0.0, 1.0);
        let b = random_vol(9, [4, 4, 2], 0.0, 1.0);
        assert!(ssim3d(&a, &b).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // `a` deliberately has the wider range so the dynamic-range term of
        // the gradient is exercised.
        let dims = [9, 8, 7];
        let n = dims[0] * dims[1] * dims[2];
        let mut rng = crate::rng::stream(10, &[52]);
        let mut a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // pin unique extremes away from ties
        a[17] = 2.0;
        a[303] = -2.0;

        let (_, grad) = ssim_with_grad(&a, &b, dims);
        let h = 1e-6;
        for k in (0..n).step_by(23).chain([17usize, 303]) {
            let mut ap = a.clone();
            ap[k] += h;
            let mut am = a.clone();
            am[k] -= h;
            let fd = (ssim_value(&ap, &b, dims) - ssim_value(&am, &b, dims)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-6,
                "voxel {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn gradient_on_small_volume_matches_fd() {
        let dims = [4, 4, 3];
        let n = 48;
        let mut rng = crate::rng::stream(11, &[53]);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let (_, grad) = ssim_with_grad(&a, &b, dims);
        let h = 1e-6;
        for k in 0..n {
            let mut ap = a.clone();
            ap[k] += h;
            let mut am = a.clone();
            am[k] -= h;
            let fd = (ssim_value(&ap, &b, dims) - ssim_value(&am, &b, dims)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "voxel {k}");
        }
    }
}
