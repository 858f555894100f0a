//! Network inputs: per-block beam features, reference-channel features,
//! their normalization, and resolution of a field of view onto the block grid.

use serde::{Deserialize, Serialize};

use crate::beamforming::{BeamformerBank, BlockGrid};
use crate::dsp::{ErbFilterbank, MultichannelSpectrum};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;
const EDGE_TOL: f64 = 1e-9;

/// A field of view resolved to a contiguous arc of blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub start_deg: f64,
    pub end_deg: f64,
    /// Block indices in arc order, starting at the block containing the
    /// counter-clockwise-first edge.
    pub blocks: Vec<usize>,
    pub num_blocks: usize,
}

impl FovSpec {
    pub fn contains(&self, block: usize) -> bool {
        self.blocks.contains(&block)
    }

    /// Membership mask over all `K` blocks.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.num_blocks];
        for &b in &self.blocks {
            m[b] = true;
        }
        m
    }

    /// Block-aligned edges `(start, end)` in degrees after resolution.
    pub fn resolved_edges(&self, grid: &BlockGrid) -> (f64, f64) {
        let first = grid.span(self.blocks[0]).0;
        (first, first + self.blocks.len() as f64 * grid.block_width())
    }

    /// FoV made of an explicit contiguous run of blocks `first..first+len`
    /// (wrapping around the grid).
    pub fn from_block_run(grid: &BlockGrid, first: usize, len: usize) -> Result<Self> {
        if len == 0 || len > grid.num_blocks {
            return Err(Error::InvalidConfig(format!("FoV of {len} blocks")));
        }
        let blocks: Vec<usize> = (0..len).map(|i| (first + i) % grid.num_blocks).collect();
        let start = grid.span(first).0;
        Ok(Self {
            start_deg: start,
            end_deg: start + len as f64 * grid.block_width(),
            blocks,
            num_blocks: grid.num_blocks,
        })
    }

    /// Complementary arc (every block not in this FoV).
    pub fn complement(&self) -> Option<Self> {
        let k = self.num_blocks;
        if self.blocks.len() == k {
            return None;
        }
        let first = (self.blocks[self.blocks.len() - 1] + 1) % k;
        let grid = BlockGrid { num_blocks: k };
        Self::from_block_run(&grid, first, k - self.blocks.len()).ok()
    }
}

/// Resolves the counter-clockwise arc from `start_deg` to `end_deg` to every
/// block it overlaps with nonzero measure. A span that is a nonzero multiple
/// of 360 degrees selects the whole circle.
pub fn fov_to_blocks(grid: &BlockGrid, start_deg: f64, end_deg: f64) -> Result<FovSpec> {
    if !(start_deg.is_finite() && end_deg.is_finite()) {
        return Err(Error::InvalidConfig("FoV angles must be finite".into()));
    }
    let raw = end_deg - start_deg;
    let mut span = raw.rem_euclid(360.0);
    if span.abs() < EDGE_TOL || (360.0 - span).abs() < EDGE_TOL {
        if raw.abs() < EDGE_TOL {
            return Err(Error::EmptyFov {
                start: start_deg,
                end: end_deg,
            });
        }
        span = 360.0;
    }
    let width = grid.block_width();
    let mut hits: Vec<(f64, usize)> = Vec::new();
    for k in 0..grid.num_blocks {
        // block start measured counter-clockwise from the FoV start
        let rel = (grid.span(k).0 - start_deg).rem_euclid(360.0);
        let rel = if 360.0 - rel < EDGE_TOL { 0.0 } else { rel };
        let inside = rel < span - EDGE_TOL;
        let wraps_in = rel + width > 360.0 + EDGE_TOL;
        if inside || wraps_in {
            // blocks that wrap over the start come first in arc order
            let order = if wraps_in { rel - 360.0 } else { rel };
            hits.push((order, k));
        }
    }
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let blocks: Vec<usize> = hits.into_iter().map(|(_, k)| k).collect();
    if blocks.is_empty() {
        return Err(Error::EmptyFov {
            start: start_deg,
            end: end_deg,
        });
    }
    Ok(FovSpec {
        start_deg,
        end_deg,
        blocks,
        num_blocks: grid.num_blocks,
    })
}

/// Parses `"start:end"` in degrees.
pub fn parse_fov(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("FoV `{text}` is not of the form start:end")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("FoV angle `{s}`: {e}")))
    };
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub spatial_mean: Vec<f64>,
    pub spatial_std: Vec<f64>,
    pub ref_mean: Vec<f64>,
    pub ref_std: Vec<f64>,
}

impl NormStats {
    pub fn identity(bands: usize) -> Self {
        Self {
            spatial_mean: vec![0.0; bands],
            spatial_std: vec![1.0; bands],
            ref_mean: vec![0.0; bands],
            ref_std: vec![1.0; bands],
        }
    }

    pub fn bands(&self) -> usize {
        self.spatial_mean.len()
    }
}

/// Normalized features, stored time-major: spatial `[T][K][B]`, reference `[T][B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub spatial: Vec<f64>,
    pub reference: Vec<f64>,
    pub frames: usize,
    pub blocks: usize,
    pub bands: usize,
}

impl FeatureTensor {
    pub fn spatial_at(&self, k: usize, t: usize, b: usize) -> f64 {
        self.spatial[(t * self.blocks + k) * self.bands + b]
    }

    pub fn ref_at(&self, t: usize, b: usize) -> f64 {
        self.reference[t * self.bands + b]
    }

    pub fn spatial_frame(&self, t: usize) -> &[f64] {
        let n = self.blocks * self.bands;
        &self.spatial[t * n..(t + 1) * n]
    }

    pub fn ref_frame(&self, t: usize) -> &[f64] {
        &self.reference[t * self.bands..(t + 1) * self.bands]
    }
}

/// Per-frame feature computation shared by batch extraction and streaming.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<'a> {
    bank: &'a BeamformerBank,
    fb: &'a ErbFilterbank,
    beam: Vec<num_complex::Complex64>,
    refbuf: Vec<num_complex::Complex64>,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(bank: &'a BeamformerBank, fb: &'a ErbFilterbank) -> Result<Self> {
        if bank.num_bins() != fb.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "bank has {} bins, filterbank {}",
                bank.num_bins(),
                fb.num_bins()
            )));
        }
        Ok(Self {
            bank,
            fb,
            beam: vec![Default::default(); bank.num_bins()],
            refbuf: vec![Default::default(); bank.num_bins()],
        })
    }

    /// Raw log-ERB features of one `[F][M]` frame: spatial `[K][B]`, reference `[B]`.
    pub fn raw_frame(&mut self, frame: &[num_complex::Complex64], spatial: &mut [f64], reference: &mut [f64]) {
        let b = self.fb.num_bands();
        for k in 0..self.bank.num_blocks() {
            self.bank.apply_frame(k, frame, &mut self.beam);
            self.fb.analyze_frame(&self.beam, &mut spatial[k * b..(k + 1) * b]);
        }
        let m = self.bank.num_mics();
        let r = self.bank.geometry().reference_channel;
        for (f, v) in self.refbuf.iter_mut().enumerate() {
            *v = frame[f * m + r];
        }
        self.fb.analyze_frame(&self.refbuf, reference);
    }

    /// Normalized features of one frame.
    pub fn frame(
        &mut self,
        frame: &[num_complex::Complex64],
        stats: &NormStats,
        spatial: &mut [f64],
        reference: &mut [f64],
    ) {
        self.raw_frame(frame, spatial, reference);
        normalize_frame(stats, spatial, reference);
    }
}

fn normalize_frame(stats: &NormStats, spatial: &mut [f64], reference: &mut [f64]) {
    let b = stats.bands();
    for row in spatial.chunks_exact_mut(b) {
        for ((v, m), s) in row.iter_mut().zip(&stats.spatial_mean).zip(&stats.spatial_std) {
            *v = (*v - m) / s;
        }
    }
    for ((v, m), s) in reference.iter_mut().zip(&stats.ref_mean).zip(&stats.ref_std) {
        *v = (*v - m) / s;
    }
}

fn check_shapes(x: &MultichannelSpectrum, bank: &BeamformerBank, fb: &ErbFilterbank) -> Result<()> {
    if x.channels() != bank.num_mics() || x.bins() != bank.num_bins() || fb.num_bins() != x.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum {}ch x {} bins vs bank {}ch x {} bins / filterbank {} bins",
            x.channels(),
            x.bins(),
            bank.num_mics(),
            bank.num_bins(),
            fb.num_bins()
        )));
    }
    Ok(())
}

fn raw_features(x: &MultichannelSpectrum, bank: &BeamformerBank, fb: &ErbFilterbank) -> Result<FeatureTensor> {
    check_shapes(x, bank, fb)?;
    let (k, b, t) = (bank.num_blocks(), fb.num_bands(), x.frames());
    let mut out = FeatureTensor {
        spatial: vec![0.0; t * k * b],
        reference: vec![0.0; t * b],
        frames: t,
        blocks: k,
        bands: b,
    };
    let mut ex = FeatureExtractor::new(bank, fb)?;
    for i in 0..t {
        ex.raw_frame(
            x.frame(i),
            &mut out.spatial[i * k * b..(i + 1) * k * b],
            &mut out.reference[i * b..(i + 1) * b],
        );
    }
    Ok(out)
}

pub fn extract_features(
    x: &MultichannelSpectrum,
    bank: &BeamformerBank,
    fb: &ErbFilterbank,
    stats: &NormStats,
) -> Result<FeatureTensor> {
    if stats.bands() != fb.num_bands() {
        return Err(Error::ShapeMismatch("normalization statistics band count".into()));
    }
    let mut out = raw_features(x, bank, fb)?;
    let (k, b) = (out.blocks, out.bands);
    for i in 0..out.frames {
        let (s, r) = (
            &mut out.spatial[i * k * b..(i + 1) * k * b],
            &mut out.reference[i * b..(i + 1) * b],
        );
        normalize_frame(stats, s, r);
    }
    Ok(out)
}

/// Streaming mean/variance accumulator (Chan et al. merge of Welford sums).
#[derive(Debug, Clone)]
struct Moments {
    count: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(bands: usize) -> Self {
        Self {
            count: vec![0.0; bands],
            mean: vec![0.0; bands],
            m2: vec![0.0; bands],
        }
    }

    fn push(&mut self, row: &[f64]) {
        for (b, &v) in row.iter().enumerate() {
            self.count[b] += 1.0;
            let delta = v - self.mean[b];
            self.mean[b] += delta / self.count[b];
            self.m2[b] += delta * (v - self.mean[b]);
        }
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let std = self
            .m2
            .iter()
            .zip(&self.count)
            .map(|(m2, n)| (m2 / n).sqrt().max(STD_FLOOR))
            .collect();
        (self.mean.clone(), std)
    }
}

/// Per-band mean and standard deviation of raw log-ERB features, pooled over
/// time, blocks (spatial) and corpus items.
pub fn compute_norm_stats<'c, I>(corpus: I, bank: &BeamformerBank, fb: &ErbFilterbank) -> Result<NormStats>
where
    I: IntoIterator<Item = &'c MultichannelSpectrum>,
{
    let b = fb.num_bands();
    let (mut spatial, mut reference) = (Moments::new(b), Moments::new(b));
    let mut items = 0usize;
    for x in corpus {
        let raw = raw_features(x, bank, fb)?;
        raw.spatial.chunks_exact(b).for_each(|r| spatial.push(r));
        raw.reference.chunks_exact(b).for_each(|r| reference.push(r));
        items += 1;
    }
    if items == 0 || reference.count[0] == 0.0 {
        return Err(Error::EmptyCorpus);
    }
    let (spatial_mean, spatial_std) = spatial.finish();
    let (ref_mean, ref_std) = reference.finish();
    Ok(NormStats {
        spatial_mean,
        spatial_std,
        ref_mean,
        ref_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::{design_maxdi, ArrayGeometry, DEFAULT_LOADING};
    use crate::dsp::erb::LOG_FLOOR;
    use crate::dsp::{StftConfig, StftProcessor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> BlockGrid {
        BlockGrid::default()
    }

    #[test]
    fn figure_fov_resolves_to_four_blocks() {
        let fov = fov_to_blocks(&grid(), -45.0, 27.0).unwrap();
        assert_eq!(fov.blocks, vec![8, 9, 10, 11]);
        let spans: Vec<(f64, f64)> = fov.blocks.iter().map(|&k| grid().span(k)).collect();
        assert_eq!(spans, vec![(-45.0, -27.0), (-27.0, -9.0), (-9.0, 9.0), (9.0, 27.0)]);
        assert_eq!(fov.resolved_edges(&grid()), (-45.0, 27.0));
    }

    #[test]
    fn unaligned_fov_uses_overlap_rule() {
        let a = fov_to_blocks(&grid(), -44.0, 26.0).unwrap();
        assert_eq!(a.blocks, vec![8, 9, 10, 11]);
        let b = fov_to_blocks(&grid(), -45.5, 27.0).unwrap();
        assert_eq!(b.blocks, vec![7, 8, 9, 10, 11]);
    }

    #[test]
    fn full_circle_and_zero_measure() {
        let all = fov_to_blocks(&grid(), -180.0, 180.0).unwrap();
        assert_eq!(all.blocks.len(), 20);
        assert!(matches!(fov_to_blocks(&grid(), 30.0, 30.0), Err(Error::EmptyFov { .. })));
    }

    #[test]
    fn wrapping_fov_behind_the_user() {
        let fov = fov_to_blocks(&grid(), 160.0, -160.0).unwrap();
        assert_eq!(fov.blocks, vec![19, 0, 1]);
    }

    #[test]
    fn complement_swaps_membership() {
        let fov = fov_to_blocks(&grid(), -45.0, 27.0).unwrap();
        let c = fov.complement().unwrap();
        assert_eq!(c.blocks.len(), 16);
        for k in 0..20 {
            assert_ne!(fov.contains(k), c.contains(k));
        }
    }

    #[test]
    fn parse_fov_text() {
        assert_eq!(parse_fov("-45:27").unwrap(), (-45.0, 27.0));
        assert!(parse_fov("45").is_err());
        assert!(parse_fov("a:b").is_err());
    }

    proptest! {
        #[test]
        fn wraparound_invariance_and_contiguity(start in -180.0f64..180.0, width in 1.0f64..359.0,
                                                 turns in -2i32..3) {
            let end = start + width;
            let a = fov_to_blocks(&grid(), start, end).unwrap();
            let shift = 360.0 * turns as f64;
            let b = fov_to_blocks(&grid(), start + shift, end + shift).unwrap();
            prop_assert_eq!(&a.blocks, &b.blocks);
            for w in a.blocks.windows(2) {
                prop_assert_eq!(w[1], (w[0] + 1) % 20);
            }
        }
    }

    fn setup() -> (BeamformerBank, ErbFilterbank, StftProcessor<f64>) {
        let cfg = StftConfig::default();
        let bank = design_maxdi(&ArrayGeometry::glasses_default(), &grid(), &cfg, DEFAULT_LOADING).unwrap();
        let fb = ErbFilterbank::new(&cfg, 64).unwrap();
        (bank, fb, StftProcessor::new(cfg).unwrap())
    }

    fn noise_scene(seed: u64, len: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_input_features_are_constant() {
        let (bank, fb, stft) = setup();
        let x = MultichannelSpectrum::from_signals(&vec![vec![0.0; 1024]; 5], &stft).unwrap();
        let mut stats = NormStats::identity(64);
        stats.spatial_mean[3] = 2.0;
        stats.spatial_std[3] = 4.0;
        let feat = extract_features(&x, &bank, &fb, &stats).unwrap();
        for t in 0..feat.frames {
            for k in 0..20 {
                for b in 0..64 {
                    let expect = (LOG_FLOOR.ln() - stats.spatial_mean[b]) / stats.spatial_std[b];
                    assert_eq!(feat.spatial_at(k, t, b), expect);
                }
            }
            assert!(feat.ref_frame(t).iter().all(|&v| v == LOG_FLOOR.ln()));
        }
    }

    #[test]
    fn identity_stats_give_raw_log_erb() {
        let (bank, fb, stft) = setup();
        let x = MultichannelSpectrum::from_signals(&noise_scene(1, 2048), &stft).unwrap();
        let feat = extract_features(&x, &bank, &fb, &NormStats::identity(64)).unwrap();
        let raw_ref = crate::dsp::erb_analyze(&x.channel(0), &fb).unwrap();
        assert_eq!(feat.reference, raw_ref);
        let beams = bank.apply(&x).unwrap();
        let raw_b3 = crate::dsp::erb_analyze(&beams[3], &fb).unwrap();
        for t in 0..feat.frames {
            for b in 0..64 {
                assert_eq!(feat.spatial_at(3, t, b), raw_b3[t * 64 + b]);
            }
        }
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let (bank, fb, stft) = setup();
        let x = MultichannelSpectrum::from_signals(&noise_scene(2, 4096), &stft).unwrap();
        let stats = compute_norm_stats([&x], &bank, &fb).unwrap();
        let raw = extract_features(&x, &bank, &fb, &NormStats::identity(64)).unwrap();
        for b in 0..64 {
            let vals: Vec<f64> = raw.spatial.chunks_exact(64).map(|r| r[b]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((stats.spatial_mean[b] - mean).abs() <= 1e-6);
            assert!((stats.spatial_std[b] - var.sqrt().max(STD_FLOOR)).abs() <= 1e-6);
            let vals: Vec<f64> = raw.reference.chunks_exact(64).map(|r| r[b]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((stats.ref_mean[b] - mean).abs() <= 1e-6);
        }
    }

    #[test]
    fn duplicated_corpus_and_constant_items() {
        let (bank, fb, stft) = setup();
        let x = MultichannelSpectrum::from_signals(&noise_scene(3, 2048), &stft).unwrap();
        let once = compute_norm_stats([&x], &bank, &fb).unwrap();
        let twice = compute_norm_stats([&x, &x], &bank, &fb).unwrap();
        for (a, b) in once.spatial_std.iter().zip(&twice.spatial_std) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in once.ref_mean.iter().zip(&twice.ref_mean) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = MultichannelSpectrum::from_signals(&vec![vec![0.0; 1024]; 5], &stft).unwrap();
        let flat = compute_norm_stats([&z, &z], &bank, &fb).unwrap();
        assert!(flat.spatial_std.iter().all(|&s| s == STD_FLOOR));
        assert!(flat.ref_std.iter().all(|&s| s == STD_FLOOR));
        assert!(matches!(
            compute_norm_stats(std::iter::empty(), &bank, &fb),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (bank, fb, stft) = setup();
        let x = MultichannelSpectrum::from_signals(&vec![vec![0.0; 1024]; 3], &stft).unwrap();
        assert!(extract_features(&x, &bank, &fb, &NormStats::identity(64)).is_err());
    }
}
