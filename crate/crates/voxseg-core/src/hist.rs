//! Appearance translation via histogram matching.
//!
//! Intensities are summarized by 256 uniform bins over the per-volume value
//! range. Matching remaps each source value to the smallest reference bin
//! center whose cumulative fraction reaches the source value's cumulative
//! fraction, the right-continuous inverse of the reference CDF. The
//! randomized variants draw a reference style from a bank and optionally
//! blend, which is the augmentation used to diversify training domains.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::volume::Volume;
use crate::Result;

pub const HIST_BINS: usize = 256;

/// 256-bin intensity histogram with explicit edges.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntensityHistogram {
    /// 257 strictly increasing edges spanning the source value range.
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl IntensityHistogram {
    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_edges[HIST_BINS] - self.bin_edges[0]) / HIST_BINS as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])
    }

    /// Cumulative fraction up to and including bin `k`.
    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0u64;
        self.counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / self.total as f64
            })
            .collect()
    }
}

/// Ordered reference styles for randomized matching.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StyleBank {
    pub references: Vec<IntensityHistogram>,
    pub seed: u64,
}

impl StyleBank {
    pub fn from_volumes<'a>(volumes: impl IntoIterator<Item = &'a Volume>, seed: u64) -> Self {
        Self {
            references: volumes.into_iter().map(compute_histogram).collect(),
            seed,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }
}

/// Histogram over 256 uniform bins spanning [min, max]; the maximum value
/// lands in the last bin. A constant volume puts all mass in bin 0, with the
/// degenerate range widened by an epsilon so the edges stay increasing.
pub fn compute_histogram(v: &Volume) -> IntensityHistogram {
    let (lo, hi) = v.min_max();
    let lo = lo as f64;
    let hi = hi as f64;
    let span = if hi > lo {
        hi - lo
    } else {
        1e-6f64.max(lo.abs() * 1e-6)
    };
    let mut bin_edges = Vec::with_capacity(HIST_BINS + 1);
    for k in 0..=HIST_BINS {
        bin_edges.push(lo + span * k as f64 / HIST_BINS as f64);
    }
    let mut counts = alloc::vec![0u64; HIST_BINS];
    let width = span / HIST_BINS as f64;
    for &x in v.data() {
        let k = (((x as f64 - lo) / width) as usize).min(HIST_BINS - 1);
        counts[k] += 1;
    }
    IntensityHistogram {
        bin_edges,
        counts,
        total: v.voxel_count() as u64,
    }
}

/// Remap `src` intensities so their distribution follows `ref_hist`.
///
/// For each source value the output is the smallest reference bin center
/// whose cumulative fraction reaches the source cumulative fraction. The
/// mapping is monotone non-decreasing and outputs stay within the reference
/// first/last bin centers.
pub fn match_histogram(src: &Volume, ref_hist: &IntensityHistogram) -> Volume {
    let src_hist = compute_histogram(src);
    let src_cdf = src_hist.cdf();
    let ref_cdf = ref_hist.cdf();

    // Per-source-bin lookup: first reference bin reaching the target cdf.
    let mut lut = [0f32; HIST_BINS];
    let mut r = 0usize;
    for (b, &target) in src_cdf.iter().enumerate() {
        while r < HIST_BINS - 1 && ref_cdf[r] < target - 1e-15 {
            r += 1;
        }
        lut[b] = ref_hist.bin_center(r) as f32;
    }

    let (lo, _) = src.min_max();
    let lo = lo as f64;
    let width = src_hist.bin_width();
    let data: Vec<f32> = src
        .data()
        .iter()
        .map(|&x| {
            let k = (((x as f64 - lo) / width) as usize).min(HIST_BINS - 1);
            lut[k]
        })
        .collect();
    src.with_data(data).expect("matched data is finite")
}

/// Sampled decision of one randomized style-transfer application.
#[derive(Debug, Clone, Copy)]
pub struct StyleDraw {
    pub reference: usize,
    /// Blend factor for the matched component; 1.0 means full matching.
    pub lambda: f64,
}

fn draw_style(
    bank: &StyleBank,
    blend_prob: f64,
    blend_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<StyleDraw> {
    if bank.is_empty() {
        return Err(CoreError::EmptyStyleBank);
    }
    let reference = rng.gen_range(0..bank.len());
    let blend = blend_prob > 0.0 && rng.gen_range(0.0..1.0) < blend_prob;
    let lambda = if blend {
        if blend_range.1 > blend_range.0 {
            rng.gen_range(blend_range.0..=blend_range.1)
        } else {
            blend_range.0
        }
    } else {
        1.0
    };
    Ok(StyleDraw { reference, lambda })
}

/// Match against a uniformly drawn bank reference; with probability
/// `blend_prob` the matched volume is blended into the original with a
/// factor drawn from `blend_range`. Deterministic given the generator state.
pub fn random_style_transfer(
    v: &Volume,
    bank: &StyleBank,
    blend_prob: f64,
    blend_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Volume> {
    let draw = draw_style(bank, blend_prob, blend_range, rng)?;
    let matched = match_histogram(v, &bank.references[draw.reference]);
    if draw.lambda >= 1.0 {
        return Ok(matched);
    }
    let data: Vec<f32> = matched
        .data()
        .iter()
        .zip(v.data())
        .map(|(&m, &o)| (draw.lambda * m as f64 + (1.0 - draw.lambda) * o as f64) as f32)
        .collect();
    v.with_data(data)
}

/// One stochastically perturbed copy of a training sample, together with the
/// geometric transform needed to map predictions back to the common frame.
#[derive(Debug, Clone)]
pub struct AugmentedView {
    pub volume: Volume,
    pub flips: [bool; 3],
}

impl AugmentedView {
    /// Map data expressed in this view's frame back to the original frame.
    /// Axis flips are involutions, so applying the same flips again undoes
    /// them.
    pub fn unflip(&self, v: &Volume) -> Volume {
        v.flipped(self.flips)
    }
}

/// Produce one perturbed view: style transfer, then axis flips, then a
/// multiplicative intensity factor.
pub fn augment_view(
    v: &Volume,
    bank: &StyleBank,
    cfg: &crate::config::AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedView> {
    let styled = if cfg.style {
        random_style_transfer(v, bank, cfg.blend_prob, (cfg.blend_min, cfg.blend_max), rng)?
    } else {
        v.clone()
    };
    let flips = if cfg.flips {
        [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)]
    } else {
        [false; 3]
    };
    let factor = if cfg.intensity_max > cfg.intensity_min {
        rng.gen_range(cfg.intensity_min..=cfg.intensity_max)
    } else {
        cfg.intensity_min
    };
    let flipped = styled.flipped(flips);
    let volume = if factor == 1.0 {
        flipped
    } else {
        let data: Vec<f32> = flipped
            .data()
            .iter()
            .map(|&x| (x as f64 * factor) as f32)
            .collect();
        flipped.with_data(data)?
    };
    Ok(AugmentedView { volume, flips })
}

/// Two independently perturbed views of the same sample for consistency
/// training.
pub fn augment_views(
    v: &Volume,
    bank: &StyleBank,
    cfg: &crate::config::AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(AugmentedView, AugmentedView)> {
    let a = augment_view(v, bank, cfg, rng)?;
    let b = augment_view(v, bank, cfg, rng)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AugmentConfig;
    use crate::rng::{stream, STREAM_AUGMENT, STREAM_STYLE};
    use alloc::vec;
    use rand::Rng;

    fn vol(dims: [usize; 3], data: Vec<f32>) -> Volume {
        Volume::new(dims, [1.0, 1.0, 1.0], data).unwrap()
    }

    fn random_vol(seed: u64, n: usize, lo: f32, hi: f32) -> Volume {
        let mut rng = stream(seed, &[STREAM_STYLE, 1]);
        vol(
            [n, n, n],
            (0..n * n * n).map(|_| rng.gen_range(lo..hi)).collect(),
        )
    }

    #[test]
    fn constant_volume_mass_in_bin_zero() {
        let v = Volume::constant([4, 4, 4], [1.0; 3], 2.5).unwrap();
        let h = compute_histogram(&v);
        assert_eq!(h.counts()[0], 64);
        assert!(h.counts()[1..].iter().all(|&c| c == 0));
        assert_eq!(h.total(), 64);
        // widened degenerate edges stay strictly increasing
        for w in h.bin_edges().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn extremes_land_in_first_and_last_bins() {
        let v = vol([2, 1, 1], vec![0.0, 1.0]);
        let h = compute_histogram(&v);
        assert_eq!(h.counts()[0], 1);
        assert_eq!(h.counts()[255], 1);
        assert_eq!(h.counts()[1..255].iter().sum::<u64>(), 0);
    }

    #[test]
    fn histogram_matches_direct_bincount_oracle() {
        let v = random_vol(3, 16, -1.0, 1.0);
        let h = compute_histogram(&v);
        assert_eq!(h.total(), 4096);
        assert_eq!(h.counts().iter().sum::<u64>(), 4096);

        // independent oracle: direct per-value bin search over the edges
        let mut oracle = vec![0u64; HIST_BINS];
        for &x in v.data() {
            let x = x as f64;
            let mut k = HIST_BINS - 1;
            for b in 0..HIST_BINS {
                if x < h.bin_edges()[b + 1] {
                    k = b;
                    break;
                }
            }
            oracle[k] += 1;
        }
        // binning by division vs by edge scan can differ by one bin at the
        // boundary due to rounding; compare totals per bin with slack of the
        // neighboring bins
        let mut moved = 0u64;
        for k in 0..HIST_BINS {
            let a = h.counts()[k] as i64;
            let b = oracle[k] as i64;
            moved += (a - b).unsigned_abs();
        }
        assert!(moved <= 8, "binning disagrees on {moved} samples");

        // chi-square against uniform should not be astronomically extreme
        let expected = 4096.0 / HIST_BINS as f64;
        let chi2: f64 = h
            .counts()
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 600.0, "chi2 {chi2}");
    }

    #[test]
    fn four_level_matching_maps_levels() {
        // equal-mass levels {0,1,2,3} -> {10,20,30,40}
        let mut src_data = Vec::new();
        let mut ref_data = Vec::new();
        for i in 0..64 {
            src_data.push((i % 4) as f32);
            ref_data.push(10.0 * ((i % 4) + 1) as f32);
        }
        let src = vol([4, 4, 4], src_data);
        let reference = vol([4, 4, 4], ref_data);
        let matched = match_histogram(&src, &compute_histogram(&reference));
        let tol = (40.0 - 10.0) / HIST_BINS as f32 + 1e-4;
        for (o, m) in src.data().iter().zip(matched.data()) {
            let expected = 10.0 * (o + 1.0);
            assert!(
                (m - expected).abs() <= tol,
                "{o} mapped to {m}, expected {expected}"
            );
        }
    }

    #[test]
    fn self_matching_stays_within_one_bin_width() {
        let v = random_vol(5, 12, 0.0, 10.0);
        let h = compute_histogram(&v);
        let matched = match_histogram(&v, &h);
        let w = h.bin_width() as f32;
        for (o, m) in v.data().iter().zip(matched.data()) {
            assert!((o - m).abs() <= w, "|{o} - {m}| > bin width {w}");
        }
    }

    #[test]
    fn matching_is_monotone_and_range_contained() {
        let src = random_vol(6, 12, -2.0, 3.0);
        let reference = random_vol(7, 12, 5.0, 9.0);
        let rh = compute_histogram(&reference);
        let out = match_histogram(&src, &rh);

        let first = rh.bin_center(0) as f32;
        let last = rh.bin_center(HIST_BINS - 1) as f32;
        let mut pairs: Vec<(f32, f32)> = src
            .data()
            .iter()
            .copied()
            .zip(out.data().iter().copied())
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1, "mapping not monotone");
        }
        for &(_, m) in &pairs {
            assert!(m >= first && m <= last);
        }
    }

    #[test]
    fn matching_is_robust_to_monotone_transforms() {
        // Strictly increasing affine maps preserve ranks and warp the
        // uniform bin grid onto itself, so the matched output can shift by
        // at most one bin from rounding at bin boundaries. (Strongly warping
        // nonlinear maps redistribute bin occupancy and can move outputs by
        // up to the local distortion ratio in bins.)
        let src = random_vol(8, 12, 0.1, 2.0);
        let reference = random_vol(9, 12, -1.0, 4.0);
        let rh = compute_histogram(&reference);
        let g = src
            .with_data(src.data().iter().map(|&x| 2.5 * x - 7.0).collect())
            .unwrap();
        let a = match_histogram(&src, &rh);
        let b = match_histogram(&g, &rh);
        let w = rh.bin_width() as f32;
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= w + 1e-5, "|{x} - {y}| > {w}");
        }
    }

    #[test]
    fn style_transfer_is_deterministic() {
        let v = random_vol(10, 10, 0.0, 1.0);
        let bank = StyleBank::from_volumes([&random_vol(11, 10, 2.0, 3.0)], 0);
        let mut r1 = stream(42, &[STREAM_STYLE]);
        let mut r2 = stream(42, &[STREAM_STYLE]);
        let a = random_style_transfer(&v, &bank, 0.5, (0.5, 1.0), &mut r1).unwrap();
        let b = random_style_transfer(&v, &bank, 0.5, (0.5, 1.0), &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn style_transfer_self_reference_stays_close() {
        let v = random_vol(12, 10, 0.0, 1.0);
        let bank = StyleBank::from_volumes([&v], 0);
        // blend disabled -> pure matching against own histogram
        let mut rng = stream(1, &[STREAM_STYLE]);
        let out = random_style_transfer(&v, &bank, 0.0, (0.5, 1.0), &mut rng).unwrap();
        let w = bank.references[0].bin_width() as f32;
        for (o, m) in v.data().iter().zip(out.data()) {
            assert!((o - m).abs() <= w);
        }
    }

    #[test]
    fn empty_bank_is_an_error() {
        let v = random_vol(13, 4, 0.0, 1.0);
        let bank = StyleBank {
            references: vec![],
            seed: 0,
        };
        let mut rng = stream(0, &[STREAM_STYLE]);
        assert!(matches!(
            random_style_transfer(&v, &bank, 0.5, (0.5, 1.0), &mut rng),
            Err(CoreError::EmptyStyleBank)
        ));
    }

    #[test]
    fn reference_selection_is_uniform() {
        let v = random_vol(14, 8, 0.0, 1.0);
        let refs: Vec<Volume> = (0..4).map(|i| random_vol(20 + i, 8, i as f32, i as f32 + 1.0)).collect();
        let bank = StyleBank::from_volumes(refs.iter(), 0);
        let mut rng = stream(99, &[STREAM_STYLE]);
        let mut freq = [0u32; 4];
        for _ in 0..1000 {
            let draw = super::draw_style(&bank, 0.5, (0.5, 1.0), &mut rng).unwrap();
            freq[draw.reference] += 1;
        }
        let _ = v;
        for (i, &f) in freq.iter().enumerate() {
            assert!(
                (200..=300).contains(&f),
                "reference {i} drawn {f} times out of 1000"
            );
        }
    }

    #[test]
    fn augment_views_are_reproducible() {
        let v = random_vol(15, 10, 0.0, 1.0);
        let bank = StyleBank::from_volumes([&random_vol(16, 10, 1.0, 2.0)], 0);
        let cfg = AugmentConfig::default();
        let mut r1 = stream(5, &[STREAM_AUGMENT, 0, 7]);
        let mut r2 = stream(5, &[STREAM_AUGMENT, 0, 7]);
        let (a1, b1) = augment_views(&v, &bank, &cfg, &mut r1).unwrap();
        let (a2, b2) = augment_views(&v, &bank, &cfg, &mut r2).unwrap();
        assert_eq!(a1.volume, a2.volume);
        assert_eq!(b1.volume, b2.volume);
        assert_eq!(a1.flips, a2.flips);
        assert_eq!(b1.flips, b2.flips);
    }

    #[test]
    fn identity_config_reproduces_input() {
        let v = random_vol(17, 10, 0.0, 1.0);
        let bank = StyleBank::from_volumes([&v], 0);
        let cfg = AugmentConfig::identity();
        let mut rng = stream(6, &[STREAM_AUGMENT]);
        let (a, b) = augment_views(&v, &bank, &cfg, &mut rng).unwrap();
        assert_eq!(a.volume, v);
        assert_eq!(b.volume, v);
    }

    #[test]
    fn flip_only_view_unflips_to_input() {
        let v = random_vol(18, 10, 0.0, 1.0);
        let bank = StyleBank::from_volumes([&v], 0);
        let cfg = AugmentConfig {
            style: false,
            flips: true,
            intensity_min: 1.0,
            intensity_max: 1.0,
            ..AugmentConfig::default()
        };
        let mut rng = stream(7, &[STREAM_AUGMENT]);
        let view = augment_view(&v, &bank, &cfg, &mut rng).unwrap();
        assert_eq!(view.unflip(&view.volume), v);
    }
}
