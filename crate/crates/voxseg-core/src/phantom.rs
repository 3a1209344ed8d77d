//! Deterministic synthetic multi-domain dataset generator.
//!
//! Each case is a smooth random union of 2-4 overlapping ellipsoids (the
//! "liver") over a textured background, with an aligned post-contrast
//! volume derived as `ged4 = a*t1 + b + boost*mask` before styling. Domains
//! differ by a monotone intensity transform `gain * x^gamma + bias` plus
//! Gaussian noise, which is the covariate shift the pipeline must bridge.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::fm;
use crate::rng::{normal, stream, STREAM_PHANTOM};
use crate::volume::{Mask, Volume};
use crate::Result;

/// Monotone intensity transform plus noise defining one acquisition domain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct DomainStyle {
    pub gain: f64,
    pub gamma: f64,
    pub bias: f64,
    pub noise_sigma: f64,
}

impl Default for DomainStyle {
    fn default() -> Self {
        Self {
            gain: 1.0,
            gamma: 1.0,
            bias: 0.0,
            noise_sigma: 0.0,
        }
    }
}

/// Shape, styling and split layout of the synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub seed: u64,
    /// Source-domain styles; one sub-dataset per entry.
    pub source_domains: Vec<DomainStyle>,
    /// Cases per source domain in the main split.
    pub cases_per_domain: usize,
    /// How many of each domain's cases carry labels, indexed by domain;
    /// domains beyond the list get none. Labels concentrated in a single
    /// domain reproduce the few-center annotation setting.
    pub labeled_by_domain: Vec<usize>,
    /// Extra cases per source domain routed to the pseudo-label pool.
    pub pseudo_per_domain: usize,
    /// Held-out shifted domain.
    pub test_domain: DomainStyle,
    pub test_cases: usize,
    /// Per-case linear contrast model `ged4 = a*t1 + b` sampling ranges.
    pub contrast_a: (f64, f64),
    pub contrast_b: (f64, f64),
    /// Additional enhancement inside the mask, applied before styling.
    pub enh_boost: f64,
    pub fg_level: f64,
    pub bg_level: f64,
    pub texture_amp: f64,
    /// Acceptable foreground fraction; generation retries outside it.
    pub mask_fraction: (f64, f64),
    pub max_retries: u32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 24],
            spacing_mm: [1.0, 1.0, 2.5],
            seed: 0,
            source_domains: alloc::vec![
                DomainStyle {
                    gain: 0.85,
                    gamma: 0.6,
                    bias: 0.0,
                    noise_sigma: 0.02,
                },
                DomainStyle {
                    gain: 1.15,
                    gamma: 1.6,
                    bias: 0.15,
                    noise_sigma: 0.04,
                },
            ],
            cases_per_domain: 10,
            labeled_by_domain: alloc::vec![4, 0],
            pseudo_per_domain: 3,
            test_domain: DomainStyle {
                gain: 1.3,
                gamma: 2.4,
                bias: 0.2,
                noise_sigma: 0.05,
            },
            test_cases: 10,
            contrast_a: (1.6, 2.4),
            contrast_b: (0.05, 0.15),
            enh_boost: 0.3,
            fg_level: 0.75,
            bg_level: 0.25,
            texture_amp: 0.08,
            mask_fraction: (0.05, 0.40),
            max_retries: 10,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidDims(self.dims));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::InvalidSpacing(self.spacing_mm));
        }
        if self.source_domains.is_empty() {
            return Err(CoreError::InvalidConfig(String::from(
                "at least one source domain required",
            )));
        }
        if self
            .labeled_by_domain
            .iter()
            .any(|&l| l > self.cases_per_domain)
        {
            return Err(CoreError::InvalidConfig(String::from(
                "labeled_by_domain entry exceeds cases_per_domain",
            )));
        }
        if self.labeled_by_domain.len() > self.source_domains.len() {
            return Err(CoreError::InvalidConfig(String::from(
                "labeled_by_domain has more entries than source domains",
            )));
        }
        let styles = self.source_domains.iter().chain([&self.test_domain]);
        for s in styles {
            if !(s.noise_sigma >= 0.0)
                || !s.gain.is_finite()
                || !s.gamma.is_finite()
                || !s.bias.is_finite()
            {
                return Err(CoreError::InvalidConfig(String::from(
                    "domain style parameters must be finite with noise_sigma >= 0",
                )));
            }
        }
        Ok(())
    }
}

/// Which pipeline stage a case belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
    PseudoPool,
    Test,
}

/// One synthetic case: aligned pre-/post-contrast volumes plus ground truth.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub id: String,
    pub domain: String,
    pub split: Split,
    pub t1: Volume,
    pub ged4: Volume,
    pub mask: Mask,
}

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

fn rasterize_union(ellipsoids: &[Ellipsoid], dims: [usize; 3]) -> Vec<u8> {
    let [nx, ny, nz] = dims;
    let mut mask = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let inside = ellipsoids.iter().any(|e| {
                    let mut q = 0.0;
                    for a in 0..3 {
                        let d = (p[a] - e.center[a]) / e.semi[a];
                        q += d * d;
                    }
                    q <= 1.0
                });
                mask.push(inside as u8);
            }
        }
    }
    mask
}

fn sample_ellipsoids(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Vec<Ellipsoid> {
    let count = rng.gen_range(2..=4usize);
    (0..count)
        .map(|_| {
            let mut center = [0.0; 3];
            let mut semi = [0.0; 3];
            for a in 0..3 {
                center[a] = rng.gen_range(0.3..0.7) * dims[a] as f64;
                // full axes span 20-60% of the volume extent
                semi[a] = rng.gen_range(0.10..0.30) * dims[a] as f64;
            }
            Ellipsoid { center, semi }
        })
        .collect()
}

fn styled(base: f64, style: &DomainStyle, rng: &mut ChaCha8Rng) -> f32 {
    let v = style.gain * fm::powf(base.max(0.0), style.gamma) + style.bias
        + style.noise_sigma * normal(rng);
    v as f32
}

/// Generate one case for the given domain style. `case_uid` feeds the RNG
/// stream, so cases are independent of generation order.
pub fn generate_phantom_case(
    spec: &PhantomSpec,
    style: &DomainStyle,
    case_uid: u64,
) -> Result<(Volume, Volume, Mask)> {
    spec.validate()?;
    let dims = spec.dims;
    let n = dims[0] * dims[1] * dims[2];
    for retry in 0..=spec.max_retries {
        let mut rng = stream(spec.seed, &[STREAM_PHANTOM, case_uid, retry as u64]);
        let ellipsoids = sample_ellipsoids(dims, &mut rng);
        let mask = rasterize_union(&ellipsoids, dims);
        let fg = mask.iter().filter(|&&v| v == 1).count();
        let frac = fg as f64 / n as f64;
        if frac < spec.mask_fraction.0 || frac > spec.mask_fraction.1 {
            continue;
        }

        // smooth texture: a few random low-frequency cosines
        let waves: Vec<([f64; 3], f64)> = (0..3)
            .map(|_| {
                (
                    [
                        rng.gen_range(0.05..0.35),
                        rng.gen_range(0.05..0.35),
                        rng.gen_range(0.05..0.35),
                    ],
                    rng.gen_range(0.0..core::f64::consts::TAU),
                )
            })
            .collect();
        let a = rng.gen_range(spec.contrast_a.0..=spec.contrast_a.1);
        let b = rng.gen_range(spec.contrast_b.0..=spec.contrast_b.1);

        let mut t1 = Vec::with_capacity(n);
        let mut ged4 = Vec::with_capacity(n);
        let [nx, ny, nz] = dims;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    let mut tex = 0.0;
                    for (k, ph) in &waves {
                        tex += fm::cos(k[0] * x as f64 + k[1] * y as f64 + k[2] * z as f64 + ph);
                    }
                    tex *= spec.texture_amp / 3.0;
                    let inside = mask[i] == 1;
                    let base = if inside { spec.fg_level } else { spec.bg_level };
                    let t1_base = (base + tex).clamp(0.02, 2.0);
                    let ged4_base = a * t1_base + b + if inside { spec.enh_boost } else { 0.0 };
                    t1.push(t1_base);
                    ged4.push(ged4_base);
                }
            }
        }
        let t1_styled: Vec<f32> = t1.iter().map(|&v| styled(v, style, &mut rng)).collect();
        let ged4_styled: Vec<f32> = ged4.iter().map(|&v| styled(v, style, &mut rng)).collect();
        return Ok((
            Volume::new(dims, spec.spacing_mm, t1_styled)?,
            Volume::new(dims, spec.spacing_mm, ged4_styled)?,
            Mask::new(dims, spec.spacing_mm, mask)?,
        ));
    }
    Err(CoreError::PhantomDegenerate {
        min: spec.mask_fraction.0,
        max: spec.mask_fraction.1,
        retries: spec.max_retries,
    })
}

/// Generate the full dataset with labeled/unlabeled/pseudo-pool/test splits.
pub fn generate_phantom_dataset(spec: &PhantomSpec) -> Result<Vec<PhantomCase>> {
    spec.validate()?;
    let mut cases = Vec::new();
    let mut uid = 0u64;
    for (d, style) in spec.source_domains.iter().enumerate() {
        let domain = format!("src{d}");
        let labeled_here = spec.labeled_by_domain.get(d).copied().unwrap_or(0);
        for c in 0..spec.cases_per_domain + spec.pseudo_per_domain {
            let (t1, ged4, mask) = generate_phantom_case(spec, style, uid)?;
            let split = if c < labeled_here {
                Split::Labeled
            } else if c < spec.cases_per_domain {
                Split::Unlabeled
            } else {
                Split::PseudoPool
            };
            cases.push(PhantomCase {
                id: format!("{domain}_c{c:03}"),
                domain: domain.clone(),
                split,
                t1,
                ged4,
                mask,
            });
            uid += 1;
        }
    }
    for c in 0..spec.test_cases {
        let (t1, ged4, mask) = generate_phantom_case(spec, &spec.test_domain, uid)?;
        cases.push(PhantomCase {
            id: format!("test_c{c:03}"),
            domain: String::from("test"),
            split: Split::Test,
            t1,
            ged4,
            mask,
        });
        uid += 1;
    }
    Ok(cases)
}
