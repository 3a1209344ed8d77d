//! The `map-v1` contrast mapper: a small conv net with linear output.

use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv1x1_backward, conv1x1_forward, conv3x3_backward, conv3x3_forward, relu, relu_backward_inplace};
use super::{ArchId, ModelParams, HIDDEN_CHANNELS};
use crate::error::CoreError;
use crate::volume::Volume;
use crate::Result;

/// Recorded forward computation of the mapper.
#[derive(Debug, Clone)]
pub struct MapTape {
    dims: [usize; 3],
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    output: Vec<f64>,
}

impl MapTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Smallest |preactivation| feeding a ReLU; see
    /// [`SegTape::min_relu_margin`](super::SegTape::min_relu_margin).
    pub fn min_relu_margin(&self) -> f64 {
        self.pre1.iter().fold(f64::INFINITY, |m, &p| m.min(p.abs()))
    }
}

/// Forward pass over a single-channel volume; linear output.
pub fn map_forward(params: &ModelParams, input: &Volume) -> Result<(Volume, MapTape)> {
    if params.arch() != ArchId::MapV1 {
        return Err(CoreError::ArchMismatch {
            expected: alloc::string::String::from("map-v1"),
            got: alloc::string::String::from(params.arch().as_str()),
        });
    }
    let dims = input.dims();
    let nvox = input.voxel_count();
    let h = HIDDEN_CHANNELS;
    let x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let mut pre1 = vec![0.0; h * nvox];
    conv3x3_forward(
        &x,
        dims,
        1,
        h,
        params.tensor("conv1.weight"),
        params.tensor("conv1.bias"),
        &mut pre1,
    );
    let act1 = relu(&pre1);
    let mut output = vec![0.0; nvox];
    conv1x1_forward(
        &act1,
        nvox,
        h,
        1,
        params.tensor("head.weight"),
        params.tensor("head.bias"),
        &mut output,
    );
    let out = Volume::new(
        dims,
        input.spacing_mm(),
        output.iter().map(|&v| v as f32).collect(),
    )?;
    Ok((
        out,
        MapTape {
            dims,
            input: x,
            pre1,
            act1,
            output,
        },
    ))
}

/// Analytic parameter gradients given the loss gradient with respect to the
/// linear output.
pub fn map_backward(params: &ModelParams, tape: &MapTape, d_out: &[f64]) -> Result<ModelParams> {
    if params.arch() != ArchId::MapV1 {
        return Err(CoreError::ArchMismatch {
            expected: alloc::string::String::from("map-v1"),
            got: alloc::string::String::from(params.arch().as_str()),
        });
    }
    let nvox = tape.output.len();
    if d_out.len() != nvox {
        return Err(CoreError::LengthMismatch {
            dims: tape.dims,
            expected: nvox,
            got: d_out.len(),
        });
    }
    let h = HIDDEN_CHANNELS;
    let mut grads = params.zeros_like();
    let mut d_act1 = vec![0.0; h * nvox];
    {
        let [hw, hb] = grads.two_tensors_mut("head.weight", "head.bias");
        conv1x1_backward(
            &tape.act1,
            nvox,
            h,
            1,
            params.tensor("head.weight"),
            d_out,
            Some(&mut d_act1),
            hw,
            hb,
        );
    }
    relu_backward_inplace(&tape.pre1, &mut d_act1);
    {
        let [w1, b1] = grads.two_tensors_mut("conv1.weight", "conv1.bias");
        conv3x3_backward(
            &tape.input,
            tape.dims,
            1,
            h,
            params.tensor("conv1.weight"),
            &d_act1,
            None,
            w1,
            b1,
        );
    }
    Ok(grads)
}
