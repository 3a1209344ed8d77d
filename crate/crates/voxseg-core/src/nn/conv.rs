//! 3D convolution kernels on channel-major flat buffers.
//!
//! The 3x3x3 convolution uses zero padding and is organized as
//! shift-and-accumulate over kernel offsets so the inner loop runs over
//! contiguous x rows.

/// Valid output coordinates `c` such that `c + d` stays inside `[0, n)`.
#[inline]
fn offset_range(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n.saturating_sub(d as usize) } else { n };
    (lo.min(hi), hi)
}

/// out[oc] = bias[oc] + sum_ic conv3(in[ic], w[oc][ic]); zero padding.
pub fn conv3x3_forward(
    input: &[f64],
    dims: [usize; 3],
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let [nx, ny, nz] = dims;
    let nvox = nx * ny * nz;
    debug_assert_eq!(input.len(), in_ch * nvox);
    debug_assert_eq!(out.len(), out_ch * nvox);
    debug_assert_eq!(weights.len(), out_ch * in_ch * 27);
    for oc in 0..out_ch {
        let out_c = &mut out[oc * nvox..(oc + 1) * nvox];
        out_c.fill(bias[oc]);
        for ic in 0..in_ch {
            let in_c = &input[ic * nvox..(ic + 1) * nvox];
            let wbase = (oc * in_ch + ic) * 27;
            for kz in 0..3 {
                let dz = kz as isize - 1;
                let (z0, z1) = offset_range(dz, nz);
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = offset_range(dy, ny);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = offset_range(dx, nx);
                        if x0 >= x1 {
                            continue;
                        }
                        let w = weights[wbase + (kz * 3 + ky) * 3 + kx];
                        let len = x1 - x0;
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let ob = (z * ny + y) * nx;
                                let src =
                                    (((sz * ny + sy) * nx + x0) as isize + dx) as usize;
                                let out_row = &mut out_c[ob + x0..ob + x1];
                                let in_row = &in_c[src..src + len];
                                for (o, &i) in out_row.iter_mut().zip(in_row) {
                                    *o += w * i;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of `conv3x3_forward`.
///
/// Accumulates into `d_weights` / `d_bias` and, when given, `d_input`; the
/// caller provides zeroed (or batch-accumulating) buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    dims: [usize; 3],
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    d_out: &[f64],
    mut d_input: Option<&mut [f64]>,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) {
    let [nx, ny, nz] = dims;
    let nvox = nx * ny * nz;
    for oc in 0..out_ch {
        let dout_c = &d_out[oc * nvox..(oc + 1) * nvox];
        d_bias[oc] += dout_c.iter().sum::<f64>();
        for ic in 0..in_ch {
            let in_c = &input[ic * nvox..(ic + 1) * nvox];
            let wbase = (oc * in_ch + ic) * 27;
            for kz in 0..3 {
                let dz = kz as isize - 1;
                let (z0, z1) = offset_range(dz, nz);
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = offset_range(dy, ny);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = offset_range(dx, nx);
                        if x0 >= x1 {
                            continue;
                        }
                        let w = weights[wbase + (kz * 3 + ky) * 3 + kx];
                        let len = x1 - x0;
                        let mut wgrad = 0.0;
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let ob = (z * ny + y) * nx;
                                let src =
                                    (((sz * ny + sy) * nx + x0) as isize + dx) as usize;
                                let dout_row = &dout_c[ob + x0..ob + x1];
                                let in_row = &in_c[src..src + len];
                                for (&g, &i) in dout_row.iter().zip(in_row) {
                                    wgrad += g * i;
                                }
                                if let Some(di) = d_input.as_deref_mut() {
                                    let di_c = &mut di[ic * nvox..(ic + 1) * nvox];
                                    let din_row = &mut di_c[src..src + len];
                                    for (d, &g) in din_row.iter_mut().zip(dout_row) {
                                        *d += w * g;
                                    }
                                }
                            }
                        }
                        d_weights[wbase + (kz * 3 + ky) * 3 + kx] += wgrad;
                    }
                }
            }
        }
    }
}

/// Pointwise channel mix: out[oc][v] = b[oc] + sum_ic w[oc][ic] * in[ic][v].
pub fn conv1x1_forward(
    input: &[f64],
    nvox: usize,
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    for oc in 0..out_ch {
        let out_c = &mut out[oc * nvox..(oc + 1) * nvox];
        out_c.fill(bias[oc]);
        for ic in 0..in_ch {
            let w = weights[oc * in_ch + ic];
            let in_c = &input[ic * nvox..(ic + 1) * nvox];
            for (o, &i) in out_c.iter_mut().zip(in_c) {
                *o += w * i;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv1x1_backward(
    input: &[f64],
    nvox: usize,
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    d_out: &[f64],
    mut d_input: Option<&mut [f64]>,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) {
    for oc in 0..out_ch {
        let dout_c = &d_out[oc * nvox..(oc + 1) * nvox];
        d_bias[oc] += dout_c.iter().sum::<f64>();
        for ic in 0..in_ch {
            let in_c = &input[ic * nvox..(ic + 1) * nvox];
            let mut wgrad = 0.0;
            for (&g, &i) in dout_c.iter().zip(in_c) {
                wgrad += g * i;
            }
            d_weights[oc * in_ch + ic] += wgrad;
            if let Some(di) = d_input.as_deref_mut() {
                let w = weights[oc * in_ch + ic];
                let di_c = &mut di[ic * nvox..(ic + 1) * nvox];
                for (d, &g) in di_c.iter_mut().zip(dout_c) {
                    *d += w * g;
                }
            }
        }
    }
}

pub fn relu(pre: &[f64]) -> alloc::vec::Vec<f64> {
    pre.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// d_pre = d_act where pre > 0 else 0, in place on `d_act`.
pub fn relu_backward_inplace(pre: &[f64], d_act: &mut [f64]) {
    for (d, &p) in d_act.iter_mut().zip(pre) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + crate::fm::exp(-z))
    } else {
        let e = crate::fm::exp(z);
        e / (1.0 + e)
    }
}
