//! Forward pass (sequence and streaming), backward pass, and gain application.

use num_complex::Complex64;

use super::arch::{ConvLayerShape, SpatialLayerShape};
use super::layers::*;
use super::weights::{BnIds, Gradients, NetworkWeights};
use crate::dsp::{ErbFilterbank, Spectrogram};
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, FovSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm; activations are cached for backward.
    Train,
    /// Running batchnorm statistics; strictly causal.
    Infer,
}

/// Band gains `[T][B]`, each in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ErbGain {
    pub data: Vec<f64>,
    pub frames: usize,
    pub bands: usize,
}

impl ErbGain {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerTrace {
    input: Vec<f64>,
    /// Depthwise output (spatial layers only).
    dw: Vec<f64>,
    bn: Option<BnBatch>,
    /// Batchnorm output before the activation.
    pre: Vec<f64>,
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    fingerprint: u64,
    frames: usize,
    mask: Vec<bool>,
    raw_spatial: Vec<f64>,
    spatial: Vec<LayerTrace>,
    reference: Vec<LayerTrace>,
    gru: Vec<GruTrace>,
    gain: Vec<f64>,
}

impl ForwardCache {
    pub fn frames(&self) -> usize {
        self.frames
    }
}

fn fingerprint(w: &NetworkWeights) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in w.params() {
        for v in &p.data {
            h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn gru_view(w: &NetworkWeights, l: usize) -> GruView<'_> {
    let ids = &w.ids.gru[l];
    GruView {
        w: ids.w.map(|i| w.t(i)),
        u: ids.u.map(|i| w.t(i)),
        b_i: ids.b_i.map(|i| w.t(i)),
        b_h: ids.b_h.map(|i| w.t(i)),
        input: w.arch().gru_input(l),
        hidden: w.arch().gru.hidden,
    }
}

fn check_inputs(w: &NetworkWeights, f: &FeatureTensor, fov: &FovSpec) -> Result<()> {
    let arch = w.arch();
    if f.blocks != arch.input.blocks || fov.num_blocks != arch.input.blocks {
        return Err(Error::ShapeMismatch(format!(
            "network expects {} blocks, features have {} and FoV {}",
            arch.input.blocks, f.blocks, fov.num_blocks
        )));
    }
    if f.bands != arch.input.bands {
        return Err(Error::ShapeMismatch(format!(
            "network expects {} bands, features have {}",
            arch.input.bands, f.bands
        )));
    }
    Ok(())
}

/// FiLM-style conditioning of one `[K][B]` frame.
fn fuse_frame(w: &NetworkWeights, mask: &[bool], s: &[f64], out: &mut [f64]) {
    let ids = &w.ids;
    let b = w.arch().input.bands;
    for (k, &inside) in mask.iter().enumerate() {
        let (mu, sigma) = if inside {
            (w.t(ids.in_mu), w.t(ids.in_sigma))
        } else {
            (w.t(ids.out_mu), w.t(ids.out_sigma))
        };
        for i in 0..b {
            out[k * b + i] = s[k * b + i] * sigma[i] + mu[i];
        }
    }
}

/// Applies the in-FoV or out-of-FoV affine transform to every block's features.
/// Returns `[T][K][B]` like the input.
pub fn fuse_fov(features: &FeatureTensor, fov: &FovSpec, w: &NetworkWeights) -> Result<Vec<f64>> {
    check_inputs(w, features, fov)?;
    let mask = fov.mask();
    let n = features.blocks * features.bands;
    let mut out = vec![0.0; features.spatial.len()];
    for t in 0..features.frames {
        fuse_frame(w, &mask, features.spatial_frame(t), &mut out[t * n..(t + 1) * n]);
    }
    Ok(out)
}

fn history(seq: &[f64], frame_len: usize, t: usize, k: usize) -> Vec<Option<&[f64]>> {
    (0..k)
        .map(|j| (t + j).checked_sub(k - 1).map(|ti| &seq[ti * frame_len..(ti + 1) * frame_len]))
        .collect()
}

fn batchnorm(
    w: &NetworkWeights,
    bn: &BnIds,
    x: &[f64],
    rows: usize,
    ch: usize,
    mode: Mode,
    out: &mut [f64],
) -> Option<BnBatch> {
    let eps = w.arch().norm.bn_eps;
    match mode {
        Mode::Train => Some(bn_train_forward(x, rows, ch, w.t(bn.gamma), w.t(bn.beta), eps, out)),
        Mode::Infer => {
            bn_infer_forward(x, ch, w.t(bn.gamma), w.t(bn.beta), w.t(bn.mean), w.t(bn.var), eps, out);
            None
        }
    }
}

fn spatial_layer(
    w: &NetworkWeights,
    l: usize,
    s: &SpatialLayerShape,
    input: Vec<f64>,
    frames: usize,
    mode: Mode,
) -> (LayerTrace, Vec<f64>) {
    let ids = &w.ids.spatial[l];
    let taps = depthwise_taps(s, w.t(ids.depthwise));
    let fin = s.w_in * s.c_in;
    let fdw = s.w_out * s.c_in;
    let mut dw = vec![0.0; frames * fdw];
    for t in 0..frames {
        depthwise_frame(s, &taps, &history(&input, fin, t, s.kernel_time), &mut dw[t * fdw..(t + 1) * fdw]);
    }
    let rows = frames * s.w_out;
    let mut pw = vec![0.0; rows * s.c_out];
    matmul_acc(&dw, w.t(ids.pointwise), rows, s.c_in, s.c_out, &mut pw);
    let mut pre = vec![0.0; pw.len()];
    let bn = batchnorm(w, &ids.bn, &pw, rows, s.c_out, mode, &mut pre);
    let mut out = pre.clone();
    leaky_inplace(&mut out, w.arch().norm.leaky_slope);
    (LayerTrace { input, dw, bn, pre }, out)
}

fn reference_layer(
    w: &NetworkWeights,
    l: usize,
    s: &ConvLayerShape,
    input: Vec<f64>,
    frames: usize,
    mode: Mode,
) -> (LayerTrace, Vec<f64>) {
    let ids = &w.ids.reference[l];
    let mut conv = vec![0.0; frames * s.c_out];
    for t in 0..frames {
        conv1d_frame(
            s,
            w.t(ids.kernel),
            &history(&input, s.c_in, t, s.kernel),
            &mut conv[t * s.c_out..(t + 1) * s.c_out],
        );
    }
    let mut pre = vec![0.0; conv.len()];
    let bn = batchnorm(w, &ids.bn, &conv, frames, s.c_out, mode, &mut pre);
    let mut out = pre.clone();
    leaky_inplace(&mut out, w.arch().norm.leaky_slope);
    (
        LayerTrace {
            input,
            dw: Vec::new(),
            bn,
            pre,
        },
        out,
    )
}

fn head_row(w: &NetworkWeights, h: &[f64], out: &mut [f64]) {
    let arch = w.arch();
    out.copy_from_slice(w.t(w.ids.head_b));
    matmul_acc(h, w.t(w.ids.head_w), 1, arch.gru.hidden, arch.head.outputs, out);
    out.iter_mut().for_each(|v| *v = sigmoid(*v));
}

/// Runs the network over a whole sequence. The cache is returned in
/// [`Mode::Train`] only.
pub fn forward(
    features: &FeatureTensor,
    fov: &FovSpec,
    w: &NetworkWeights,
    mode: Mode,
) -> Result<(ErbGain, Option<ForwardCache>)> {
    check_inputs(w, features, fov)?;
    let arch = w.arch();
    let frames = features.frames;
    let mask = fov.mask();

    let mut x = fuse_fov(features, fov, w)?;
    let mut spatial = Vec::new();
    for (l, s) in arch.spatial_layers().iter().enumerate() {
        let (trace, out) = spatial_layer(w, l, s, x, frames, mode);
        spatial.push(trace);
        x = out;
    }
    let spatial_out = x;

    let mut r = features.reference.clone();
    let mut reference = Vec::new();
    for (l, s) in arch.reference_layers().iter().enumerate() {
        let (trace, out) = reference_layer(w, l, s, r, frames, mode);
        reference.push(trace);
        r = out;
    }

    let (cs, cr) = (arch.spatial_out(), arch.reference_out());
    let mut seq = vec![0.0; frames * (cs + cr)];
    for t in 0..frames {
        seq[t * (cs + cr)..][..cs].copy_from_slice(&spatial_out[t * cs..(t + 1) * cs]);
        seq[t * (cs + cr) + cs..][..cr].copy_from_slice(&r[t * cr..(t + 1) * cr]);
    }
    let hd = arch.gru.hidden;
    let mut gru = Vec::new();
    for l in 0..arch.gru.layers {
        let trace = gru_sequence(&gru_view(w, l), &seq, frames);
        seq = trace.h[hd..].to_vec();
        gru.push(trace);
    }

    let o = arch.head.outputs;
    let mut gain = vec![0.0; frames * o];
    for t in 0..frames {
        head_row(w, &seq[t * hd..(t + 1) * hd], &mut gain[t * o..(t + 1) * o]);
    }
    let out = ErbGain {
        data: gain.clone(),
        frames,
        bands: o,
    };
    let cache = (mode == Mode::Train).then(|| ForwardCache {
        fingerprint: fingerprint(w),
        frames,
        mask,
        raw_spatial: features.spatial.clone(),
        spatial,
        reference,
        gru,
        gain,
    });
    Ok((out, cache))
}

/// Takes several gradient buffers out at once; [`restore`] puts them back.
fn take<const N: usize>(g: &mut Gradients, ids: [usize; N]) -> [Vec<f64>; N] {
    ids.map(|i| std::mem::take(&mut g.tensors[i]))
}

fn restore<const N: usize>(g: &mut Gradients, ids: [usize; N], bufs: [Vec<f64>; N]) {
    for (i, b) in ids.into_iter().zip(bufs) {
        g.tensors[i] = b;
    }
}

/// Reverse-mode gradients of `sum(d_gain * gain)` accumulated into `grads`.
pub fn backward(w: &NetworkWeights, cache: &ForwardCache, d_gain: &[f64], grads: &mut Gradients) -> Result<()> {
    let arch = w.arch();
    let frames = cache.frames;
    let (hd, o) = (arch.gru.hidden, arch.head.outputs);
    if cache.fingerprint != fingerprint(w) {
        return Err(Error::StaleCache("weights changed since the forward pass".into()));
    }
    if d_gain.len() != frames * o || grads.tensors.len() != w.params().len() {
        return Err(Error::ShapeMismatch(format!(
            "gain gradient has {} entries, expected {}",
            d_gain.len(),
            frames * o
        )));
    }
    let slope = arch.norm.leaky_slope;
    let ids = &w.ids;

    // Head.
    let mut d_pre = vec![0.0; frames * o];
    for ((d, &g), &dg) in d_pre.iter_mut().zip(&cache.gain).zip(d_gain) {
        *d = dg * g * (1.0 - g);
    }
    let top = cache.gru.last().unwrap();
    let mut d_seq = vec![0.0; frames * hd];
    matmul_backward(
        &top.h[hd..],
        w.t(ids.head_w),
        &d_pre,
        frames,
        hd,
        o,
        Some(&mut d_seq),
        &mut grads.tensors[ids.head_w],
    );
    for row in d_pre.chunks_exact(o) {
        for (b, &d) in grads.tensors[ids.head_b].iter_mut().zip(row) {
            *b += d;
        }
    }

    // Recurrent stack.
    for l in (0..arch.gru.layers).rev() {
        let g = &ids.gru[l];
        let all: [usize; 12] = [g.w, g.u, g.b_i, g.b_h].concat().try_into().unwrap();
        let [mut w0, mut w1, mut w2, mut u0, mut u1, mut u2, mut bi0, mut bi1, mut bi2, mut bh0, mut bh1, mut bh2] =
            take(grads, all);
        let mut gg = GruGrads {
            w: [&mut w0[..], &mut w1[..], &mut w2[..]],
            u: [&mut u0[..], &mut u1[..], &mut u2[..]],
            b_i: [&mut bi0[..], &mut bi1[..], &mut bi2[..]],
            b_h: [&mut bh0[..], &mut bh1[..], &mut bh2[..]],
        };
        d_seq = gru_backward(&gru_view(w, l), &cache.gru[l], &d_seq, &mut gg);
        restore(grads, all, [w0, w1, w2, u0, u1, u2, bi0, bi1, bi2, bh0, bh1, bh2]);
    }

    let (cs, cr) = (arch.spatial_out(), arch.reference_out());
    let mut d_out = vec![0.0; frames * cs];
    let mut d_ref = vec![0.0; frames * cr];
    for t in 0..frames {
        d_out[t * cs..(t + 1) * cs].copy_from_slice(&d_seq[t * (cs + cr)..][..cs]);
        d_ref[t * cr..(t + 1) * cr].copy_from_slice(&d_seq[t * (cs + cr) + cs..][..cr]);
    }

    // Spatial branch, down to the fused features.
    let shapes = arch.spatial_layers();
    for l in (0..shapes.len()).rev() {
        let (s, tr, sid) = (&shapes[l], &cache.spatial[l], &ids.spatial[l]);
        let rows = frames * s.w_out;
        let d_pw = bn_layer_backward(w, grads, &sid.bn, tr, &mut d_out, rows, s.c_out, slope)?;
        let mut d_dw = vec![0.0; rows * s.c_in];
        matmul_backward(
            &tr.dw,
            w.t(sid.pointwise),
            &d_pw,
            rows,
            s.c_in,
            s.c_out,
            Some(&mut d_dw),
            &mut grads.tensors[sid.pointwise],
        );
        let mut d_in = vec![0.0; tr.input.len()];
        depthwise_backward(
            s,
            w.t(sid.depthwise),
            &tr.input,
            frames,
            &d_dw,
            &mut grads.tensors[sid.depthwise],
            Some(&mut d_in),
        );
        d_out = d_in;
    }

    // Embeddings.
    let film = [ids.in_mu, ids.in_sigma, ids.out_mu, ids.out_sigma];
    let [mut in_mu, mut in_sigma, mut out_mu, mut out_sigma] = take(grads, film);
    let b = arch.input.bands;
    for t in 0..frames {
        for (k, &inside) in cache.mask.iter().enumerate() {
            let base = (t * cache.mask.len() + k) * b;
            let (mu, sigma) = if inside {
                (&mut in_mu, &mut in_sigma)
            } else {
                (&mut out_mu, &mut out_sigma)
            };
            for i in 0..b {
                let d = d_out[base + i];
                mu[i] += d;
                sigma[i] += d * cache.raw_spatial[base + i];
            }
        }
    }
    restore(grads, film, [in_mu, in_sigma, out_mu, out_sigma]);

    // Reference branch.
    let shapes = arch.reference_layers();
    for l in (0..shapes.len()).rev() {
        let (s, tr, rid) = (&shapes[l], &cache.reference[l], &ids.reference[l]);
        let d_conv = bn_layer_backward(w, grads, &rid.bn, tr, &mut d_ref, frames, s.c_out, slope)?;
        let mut d_in = vec![0.0; if l > 0 { tr.input.len() } else { 0 }];
        conv1d_backward(
            s,
            w.t(rid.kernel),
            &tr.input,
            frames,
            &d_conv,
            &mut grads.tensors[rid.kernel],
            (l > 0).then_some(&mut d_in[..]),
        );
        d_ref = d_in;
    }
    Ok(())
}

/// Activation and batchnorm backward; returns the gradient at the batchnorm input.
#[allow(clippy::too_many_arguments)]
fn bn_layer_backward(
    w: &NetworkWeights,
    grads: &mut Gradients,
    bn: &BnIds,
    tr: &LayerTrace,
    d_out: &mut [f64],
    rows: usize,
    ch: usize,
    slope: f64,
) -> Result<Vec<f64>> {
    let batch = tr
        .bn
        .as_ref()
        .ok_or_else(|| Error::StaleCache("cache was not recorded in training mode".into()))?;
    leaky_backward(&tr.pre, d_out, slope);
    let mut d_x = vec![0.0; rows * ch];
    let [mut dg, mut db] = take(grads, [bn.gamma, bn.beta]);
    bn_backward(batch, ch, w.t(bn.gamma), d_out, &mut dg, &mut db, &mut d_x);
    restore(grads, [bn.gamma, bn.beta], [dg, db]);
    Ok(d_x)
}

/// Folds the batch statistics of a training pass into the running estimates
/// (unbiased variance, momentum from the architecture).
pub fn update_running_stats(w: &mut NetworkWeights, cache: &ForwardCache) {
    let m = w.arch().norm.bn_momentum;
    let pairs: Vec<(BnIds, BnBatch)> = w
        .ids
        .spatial
        .iter()
        .map(|s| s.bn.clone())
        .zip(cache.spatial.iter().map(|t| t.bn.clone().unwrap()))
        .chain(
            w.ids
                .reference
                .iter()
                .map(|r| r.bn.clone())
                .zip(cache.reference.iter().map(|t| t.bn.clone().unwrap())),
        )
        .collect();
    for (ids, batch) in pairs {
        let n = batch.rows as f64;
        let correction = if batch.rows > 1 { n / (n - 1.0) } else { 1.0 };
        for (r, &v) in w.t_mut(ids.mean).iter_mut().zip(&batch.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, &v) in w.t_mut(ids.var).iter_mut().zip(&batch.var) {
            *r = (1.0 - m) * *r + m * v * correction;
        }
    }
}

/// Averages batch statistics over many training-mode passes and installs them
/// as running statistics.
#[derive(Debug, Clone, Default)]
pub struct BnRecalibration {
    sums: Vec<(Vec<f64>, Vec<f64>)>,
    passes: usize,
}

impl BnRecalibration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, cache: &ForwardCache) {
        let batches = cache.spatial.iter().chain(&cache.reference).filter_map(|t| t.bn.as_ref());
        if self.sums.is_empty() {
            self.sums = batches
                .clone()
                .map(|b| (vec![0.0; b.mean.len()], vec![0.0; b.var.len()]))
                .collect();
        }
        for ((m, v), b) in self.sums.iter_mut().zip(batches) {
            let n = b.rows as f64;
            let correction = if b.rows > 1 { n / (n - 1.0) } else { 1.0 };
            m.iter_mut().zip(&b.mean).for_each(|(a, x)| *a += x);
            v.iter_mut().zip(&b.var).for_each(|(a, x)| *a += x * correction);
        }
        self.passes += 1;
    }

    pub fn apply(&self, w: &mut NetworkWeights) {
        if self.passes == 0 {
            return;
        }
        let n = self.passes as f64;
        let ids: Vec<BnIds> = w
            .ids
            .spatial
            .iter()
            .map(|s| s.bn.clone())
            .chain(w.ids.reference.iter().map(|r| r.bn.clone()))
            .collect();
        for (bn, (m, v)) in ids.iter().zip(&self.sums) {
            w.t_mut(bn.mean).iter_mut().zip(m).for_each(|(r, x)| *r = x / n);
            w.t_mut(bn.var).iter_mut().zip(v).for_each(|(r, x)| *r = (x / n).max(1e-12));
        }
    }
}

/// Per-stream recurrent and convolution history for frame-by-frame inference.
#[derive(Debug, Clone)]
pub struct NetState {
    spatial_hist: Vec<Vec<Option<Vec<f64>>>>,
    ref_hist: Vec<Vec<Option<Vec<f64>>>>,
    h: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl NetState {
    pub fn new(w: &NetworkWeights, fov: &FovSpec) -> Result<Self> {
        let arch = w.arch();
        if fov.num_blocks != arch.input.blocks {
            return Err(Error::ShapeMismatch(format!(
                "FoV on {} blocks, network expects {}",
                fov.num_blocks, arch.input.blocks
            )));
        }
        Ok(Self {
            spatial_hist: arch
                .spatial_layers()
                .iter()
                .map(|s| vec![None; s.kernel_time - 1])
                .collect(),
            ref_hist: arch
                .reference_layers()
                .iter()
                .map(|s| vec![None; s.kernel - 1])
                .collect(),
            h: vec![vec![0.0; arch.gru.hidden]; arch.gru.layers],
            mask: fov.mask(),
        })
    }

    /// Changes the FoV without resetting the recurrent state.
    pub fn set_fov(&mut self, fov: &FovSpec) {
        self.mask = fov.mask();
    }

    fn push(hist: &mut [Option<Vec<f64>>], frame: Vec<f64>) {
        if !hist.is_empty() {
            hist.rotate_left(1);
            *hist.last_mut().unwrap() = Some(frame);
        }
    }

    /// One inference frame. `spatial` is `[K][B]`, `reference` is `[B]`;
    /// the band gains are written to `gain`.
    pub fn step(&mut self, w: &NetworkWeights, spatial: &[f64], reference: &[f64], gain: &mut [f64]) {
        let arch = w.arch();
        let slope = arch.norm.leaky_slope;
        let eps = arch.norm.bn_eps;

        let mut x = vec![0.0; spatial.len()];
        fuse_frame(w, &self.mask, spatial, &mut x);
        for (l, s) in arch.spatial_layers().iter().enumerate() {
            let ids = &w.ids.spatial[l];
            let taps = depthwise_taps(s, w.t(ids.depthwise));
            let mut frames: Vec<Option<&[f64]>> = self.spatial_hist[l].iter().map(|h| h.as_deref()).collect();
            frames.push(Some(&x));
            let mut dw = vec![0.0; s.w_out * s.c_in];
            depthwise_frame(s, &taps, &frames, &mut dw);
            let mut pw = vec![0.0; s.w_out * s.c_out];
            matmul_acc(&dw, w.t(ids.pointwise), s.w_out, s.c_in, s.c_out, &mut pw);
            let mut out = vec![0.0; pw.len()];
            let bn = &ids.bn;
            bn_infer_forward(&pw, s.c_out, w.t(bn.gamma), w.t(bn.beta), w.t(bn.mean), w.t(bn.var), eps, &mut out);
            leaky_inplace(&mut out, slope);
            Self::push(&mut self.spatial_hist[l], std::mem::replace(&mut x, out));
        }

        let mut r = reference.to_vec();
        for (l, s) in arch.reference_layers().iter().enumerate() {
            let ids = &w.ids.reference[l];
            let mut frames: Vec<Option<&[f64]>> = self.ref_hist[l].iter().map(|h| h.as_deref()).collect();
            frames.push(Some(&r));
            let mut conv = vec![0.0; s.c_out];
            conv1d_frame(s, w.t(ids.kernel), &frames, &mut conv);
            let mut out = vec![0.0; s.c_out];
            let bn = &ids.bn;
            bn_infer_forward(&conv, s.c_out, w.t(bn.gamma), w.t(bn.beta), w.t(bn.mean), w.t(bn.var), eps, &mut out);
            leaky_inplace(&mut out, slope);
            Self::push(&mut self.ref_hist[l], std::mem::replace(&mut r, out));
        }

        let mut seq = x;
        seq.extend_from_slice(&r);
        let hd = arch.gru.hidden;
        let (mut rg, mut zg, mut ng, mut hn) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]);
        for l in 0..arch.gru.layers {
            let mut h_new = vec![0.0; hd];
            gru_step(
                &gru_view(w, l),
                &seq,
                &self.h[l],
                GruGates {
                    r: &mut rg,
                    z: &mut zg,
                    n: &mut ng,
                    hn: &mut hn,
                },
                &mut h_new,
            );
            self.h[l].copy_from_slice(&h_new);
            seq = h_new;
        }
        head_row(w, &seq, gain);
    }
}

/// Masks the reference-channel spectrum with the expanded band gains.
pub fn apply_gain(gain: &ErbGain, x_ref: &Spectrogram, fb: &ErbFilterbank) -> Result<Spectrogram> {
    if gain.frames != x_ref.frames() || gain.bands != fb.num_bands() || x_ref.bins() != fb.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "gain {}x{} vs spectrogram {}x{}",
            gain.frames,
            gain.bands,
            x_ref.frames(),
            x_ref.bins()
        )));
    }
    let mut out = x_ref.clone();
    let mut mask = vec![0.0; fb.num_bins()];
    for t in 0..gain.frames {
        apply_gain_frame(fb, gain.frame(t), out.frame_mut(t), &mut mask);
    }
    Ok(out)
}

/// In-place masking of one frame; `mask` is scratch of `num_bins` entries.
pub fn apply_gain_frame(fb: &ErbFilterbank, gain: &[f64], frame: &mut [Complex64], mask: &mut [f64]) {
    fb.expand_frame(gain, mask);
    for (x, &m) in frame.iter_mut().zip(mask.iter()) {
        *x *= m;
    }
}
