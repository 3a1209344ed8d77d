//! A minimal differentiable 3D convolutional backbone.
//!
//! Two fixed architectures are provided: `seg-v1`, a three-layer
//! segmentation network with a sigmoid head, and `map-v1`, a two-layer
//! linear-output mapper used for contrast enhancement. Forward passes record
//! a tape of intermediate activations; backward passes replay the tape and
//! produce analytic parameter gradients that are checked against central
//! finite differences in the test suite.
//!
//! All arithmetic is f64 in memory; checkpoint files store f32.

mod conv;
mod loss;
mod map;
mod seg;

pub use loss::{ce_loss, dice_loss, mse_consistency, LossValue, CE_CLAMP, DICE_EPS};
pub use map::{map_forward, map_backward, MapTape};
pub use seg::{seg_forward, seg_backward, SegTape};

pub(crate) use loss::{ce_with_grad, dice_with_grad, mse_with_grad};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::CoreError;
use crate::fm;
use crate::rng::{stream, STREAM_INIT};
use crate::Result;

/// Hidden width shared by both architectures.
pub const HIDDEN_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchId {
    /// conv3x3x3 (2->8) / ReLU / conv3x3x3 (8->8) / ReLU / conv1x1x1 (8->1) / sigmoid
    SegV1,
    /// conv3x3x3 (1->8) / ReLU / conv1x1x1 (8->1), linear output
    MapV1,
}

struct EntrySpec {
    name: &'static str,
    shape: &'static [usize],
}

const SEG_SPECS: &[EntrySpec] = &[
    EntrySpec { name: "conv1.weight", shape: &[8, 2, 3, 3, 3] },
    EntrySpec { name: "conv1.bias", shape: &[8] },
    EntrySpec { name: "conv2.weight", shape: &[8, 8, 3, 3, 3] },
    EntrySpec { name: "conv2.bias", shape: &[8] },
    EntrySpec { name: "head.weight", shape: &[1, 8] },
    EntrySpec { name: "head.bias", shape: &[1] },
];

const MAP_SPECS: &[EntrySpec] = &[
    EntrySpec { name: "conv1.weight", shape: &[8, 1, 3, 3, 3] },
    EntrySpec { name: "conv1.bias", shape: &[8] },
    EntrySpec { name: "head.weight", shape: &[1, 8] },
    EntrySpec { name: "head.bias", shape: &[1] },
];

impl ArchId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::SegV1 => "seg-v1",
            ArchId::MapV1 => "map-v1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seg-v1" => Ok(ArchId::SegV1),
            "map-v1" => Ok(ArchId::MapV1),
            other => Err(CoreError::ArchMismatch {
                expected: String::from("seg-v1 or map-v1"),
                got: other.to_string(),
            }),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ArchId::SegV1 => 2,
            ArchId::MapV1 => 1,
        }
    }

    fn specs(&self) -> &'static [EntrySpec] {
        match self {
            ArchId::SegV1 => SEG_SPECS,
            ArchId::MapV1 => MAP_SPECS,
        }
    }
}

/// One named dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ParamTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Flat ordered collection of named trainable tensors; also the carrier for
/// gradients, which share names and shapes with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchId,
    entries: Vec<(String, ParamTensor)>,
}

impl ModelParams {
    /// Seeded initialization: weights uniform in +-sqrt(6 / (fan_in +
    /// fan_out)), biases zero.
    pub fn init(arch: ArchId, seed: u64) -> Self {
        let tag = match arch {
            ArchId::SegV1 => 1,
            ArchId::MapV1 => 2,
        };
        let mut rng = stream(seed, &[STREAM_INIT, tag]);
        let entries = arch
            .specs()
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = if spec.shape.len() == 1 {
                    alloc::vec![0.0; n]
                } else {
                    let (fan_in, fan_out) = fan_in_out(spec.shape);
                    let bound = fm::sqrt(6.0 / (fan_in + fan_out) as f64);
                    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                };
                (
                    String::from(spec.name),
                    ParamTensor {
                        shape: spec.shape.to_vec(),
                        data,
                    },
                )
            })
            .collect();
        Self { arch, entries }
    }

    /// Rebuild from raw entries, validating names, shapes, order and
    /// finiteness against the architecture.
    pub fn from_entries(arch: ArchId, raw: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let specs = arch.specs();
        if raw.len() != specs.len() {
            return Err(CoreError::ParamMismatch(alloc::format!(
                "expected {} entries, got {}",
                specs.len(),
                raw.len()
            )));
        }
        let mut entries = Vec::with_capacity(raw.len());
        for (spec, (name, shape, data)) in specs.iter().zip(raw) {
            if name != spec.name || shape != spec.shape {
                return Err(CoreError::ParamMismatch(name));
            }
            let n: usize = shape.iter().product();
            if data.len() != n || data.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::ParamMismatch(name));
            }
            entries.push((name, ParamTensor { shape, data }));
        }
        Ok(Self { arch, entries })
    }

    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn entries(&self) -> &[(String, ParamTensor)] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamTensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub(crate) fn tensor(&self, name: &str) -> &[f64] {
        &self
            .entry(name)
            .expect("architecture guarantees the entry")
            .data
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            arch: self.arch,
            entries: self
                .entries
                .iter()
                .map(|(n, t)| {
                    (
                        n.clone(),
                        ParamTensor {
                            shape: t.shape.clone(),
                            data: alloc::vec![0.0; t.data.len()],
                        },
                    )
                })
                .collect(),
        }
    }

    /// Elementwise `self += a * other`, requiring matching names and shapes.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) -> Result<()> {
        check_compatible(self, other)?;
        for ((_, t), (_, o)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x += a * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for (_, t) in &mut self.entries {
            for x in &mut t.data {
                *x *= a;
            }
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data.len()).sum()
    }

    /// Largest absolute elementwise difference; infinity on layout mismatch.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        if check_compatible(self, other).is_err() {
            return f64::INFINITY;
        }
        let mut m = 0.0f64;
        for ((_, t), (_, o)) in self.entries.iter().zip(&other.entries) {
            for (x, y) in t.data.iter().zip(&o.data) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [(String, ParamTensor)] {
        &mut self.entries
    }
}

pub(crate) fn check_compatible(a: &ModelParams, b: &ModelParams) -> Result<()> {
    if a.arch != b.arch {
        return Err(CoreError::ArchMismatch {
            expected: String::from(a.arch.as_str()),
            got: String::from(b.arch.as_str()),
        });
    }
    for ((na, ta), (nb, tb)) in a.entries.iter().zip(&b.entries) {
        if na != nb || ta.shape != tb.shape {
            return Err(CoreError::ParamMismatch(na.clone()));
        }
    }
    Ok(())
}

fn fan_in_out(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        // conv kernel [oc, ic, kz, ky, kx]
        5 => {
            let k = shape[2] * shape[3] * shape[4];
            (shape[1] * k, shape[0] * k)
        }
        // pointwise [oc, ic]
        2 => (shape[1], shape[0]),
        _ => (1, 1),
    }
}

/// One plain gradient-descent update: `p <- p - lr * g` elementwise.
pub fn sgd_step(params: &ModelParams, grads: &ModelParams, lr: f64) -> Result<ModelParams> {
    check_compatible(params, grads)?;
    let mut out = params.clone();
    out.axpy(-lr, grads)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(ArchId::SegV1, 3);
        let b = ModelParams::init(ArchId::SegV1, 3);
        let c = ModelParams::init(ArchId::SegV1, 4);
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&c) > 0.0);

        let w = a.entry("conv1.weight").unwrap();
        let bound = (6.0f64 / (2.0 * 27.0 + 8.0 * 27.0)).sqrt();
        assert!(w.data().iter().all(|&x| x.abs() <= bound));
        assert!(a.entry("conv1.bias").unwrap().data().iter().all(|&x| x == 0.0));
        assert_eq!(a.scalar_count(), 432 + 8 + 1728 + 8 + 8 + 1);
    }

    #[test]
    fn sgd_arithmetic() {
        let p = ModelParams::init(ArchId::MapV1, 0);
        // lr = 0 leaves parameters unchanged
        let g = {
            let mut g = p.zeros_like();
            g.axpy(0.5, &p).unwrap();
            g
        };
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);

        // single-scalar arithmetic: p=1, g=0.5, lr=0.01 -> 0.995
        let mut one = p.zeros_like();
        one.entries_mut()[0].1.data_mut()[0] = 1.0;
        let mut half = p.zeros_like();
        half.entries_mut()[0].1.data_mut()[0] = 0.5;
        let stepped = sgd_step(&one, &half, 0.01).unwrap();
        assert!((stepped.entries()[0].1.data()[0] - 0.995).abs() < 1e-15);

        // two successive steps equal one step with summed increments
        let s2 = sgd_step(&sgd_step(&p, &g, 0.01).unwrap(), &g, 0.02).unwrap();
        let mut g3 = g.clone();
        g3.scale(3.0);
        let s1 = sgd_step(&p, &g3, 0.01).unwrap();
        assert!(s2.max_abs_diff(&s1) < 1e-15);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let p = ModelParams::init(ArchId::SegV1, 0);
        let g = ModelParams::init(ArchId::MapV1, 0);
        assert!(sgd_step(&p, &g, 0.1).is_err());
    }

    #[test]
    fn from_entries_validates() {
        let p = ModelParams::init(ArchId::MapV1, 1);
        let raw: Vec<_> = p
            .entries()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().to_vec()))
            .collect();
        let q = ModelParams::from_entries(ArchId::MapV1, raw.clone()).unwrap();
        assert_eq!(p, q);

        let mut bad = raw.clone();
        bad[0].2[0] = f64::NAN;
        assert!(ModelParams::from_entries(ArchId::MapV1, bad).is_err());

        let mut reordered = raw;
        reordered.swap(0, 1);
        assert!(ModelParams::from_entries(ArchId::MapV1, reordered).is_err());
    }
}
