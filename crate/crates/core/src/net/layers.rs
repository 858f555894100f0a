//! Layer primitives on flat row-major buffers. Per-frame kernels are shared by
//! the sequence forward pass and the streaming step so both give identical bits.

use super::arch::{ConvLayerShape, SpatialLayerShape};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub(crate) fn leaky_inplace(x: &mut [f64], slope: f64) {
    x.iter_mut().for_each(|v| *v = leaky(*v, slope));
}

/// `d *= leaky'(pre)`.
pub(crate) fn leaky_backward(pre: &[f64], d: &mut [f64], slope: f64) {
    for (g, &p) in d.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g *= slope;
        }
    }
}

/// `out[n][o] += sum_i a[n][i] * b[i][o]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize, out: &mut [f64]) {
    for n in 0..rows {
        let o_row = &mut out[n * cols..(n + 1) * cols];
        for (i, &av) in a[n * inner..(n + 1) * inner].iter().enumerate() {
            for (o, &bv) in o_row.iter_mut().zip(&b[i * cols..(i + 1) * cols]) {
                *o += av * bv;
            }
        }
    }
}

/// Backward of [`matmul_acc`]: accumulates `da += d b^T` and `db += a^T d`.
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    d: &[f64],
    rows: usize,
    inner: usize,
    cols: usize,
    mut da: Option<&mut [f64]>,
    db: &mut [f64],
) {
    for n in 0..rows {
        let d_row = &d[n * cols..(n + 1) * cols];
        for i in 0..inner {
            let b_row = &b[i * cols..(i + 1) * cols];
            let av = a[n * inner + i];
            let db_row = &mut db[i * cols..(i + 1) * cols];
            let mut acc = 0.0;
            for o in 0..cols {
                db_row[o] += av * d_row[o];
                acc += b_row[o] * d_row[o];
            }
            if let Some(da) = da.as_deref_mut() {
                da[n * inner + i] += acc;
            }
        }
    }
}

/// Depthwise kernel `[C][kt][ks]` reordered to `[kt][ks][C]`.
pub(crate) fn depthwise_taps(s: &SpatialLayerShape, kernel: &[f64]) -> Vec<f64> {
    let (c_n, kt, ks) = (s.c_in, s.kernel_time, s.kernel_space);
    let mut taps = vec![0.0; kernel.len()];
    for c in 0..c_n {
        for dt in 0..kt {
            for j in 0..ks {
                taps[(dt * ks + j) * c_n + c] = kernel[(c * kt + dt) * ks + j];
            }
        }
    }
    taps
}

#[inline]
fn input_col(s: &SpatialLayerShape, wo: usize, j: usize) -> Option<usize> {
    let wi = (wo * s.stride + j) as isize - s.pad as isize;
    (wi >= 0 && (wi as usize) < s.w_in).then_some(wi as usize)
}

/// One output frame `[W_out][C_in]` of the depthwise stage. `frames[dt]` holds
/// the `[W_in][C_in]` input at time `t - (kt-1) + dt`, `None` before the start.
pub(crate) fn depthwise_frame(s: &SpatialLayerShape, taps: &[f64], frames: &[Option<&[f64]>], out: &mut [f64]) {
    let c_n = s.c_in;
    out.fill(0.0);
    for wo in 0..s.w_out {
        let o = &mut out[wo * c_n..(wo + 1) * c_n];
        for (dt, frame) in frames.iter().enumerate() {
            let Some(x) = frame else { continue };
            for j in 0..s.kernel_space {
                let Some(wi) = input_col(s, wo, j) else { continue };
                let k = &taps[(dt * s.kernel_space + j) * c_n..][..c_n];
                let xi = &x[wi * c_n..(wi + 1) * c_n];
                for c in 0..c_n {
                    o[c] += k[c] * xi[c];
                }
            }
        }
    }
}

/// Sequence backward of the depthwise stage. `input` is `[T][W_in][C]`,
/// `d_out` is `[T][W_out][C]`; `d_kernel` uses the `[C][kt][ks]` layout.
pub(crate) fn depthwise_backward(
    s: &SpatialLayerShape,
    kernel: &[f64],
    input: &[f64],
    frames: usize,
    d_out: &[f64],
    d_kernel: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let (c_n, kt, ks) = (s.c_in, s.kernel_time, s.kernel_space);
    let taps = depthwise_taps(s, kernel);
    let mut d_taps = vec![0.0; taps.len()];
    let in_frame = s.w_in * c_n;
    let out_frame = s.w_out * c_n;
    for t in 0..frames {
        for dt in 0..kt {
            let Some(ti) = (t + dt).checked_sub(kt - 1) else { continue };
            for wo in 0..s.w_out {
                let g = &d_out[t * out_frame + wo * c_n..][..c_n];
                for j in 0..ks {
                    let Some(wi) = input_col(s, wo, j) else { continue };
                    let base = ti * in_frame + wi * c_n;
                    let tap = (dt * ks + j) * c_n;
                    for c in 0..c_n {
                        d_taps[tap + c] += g[c] * input[base + c];
                    }
                    if let Some(dx) = d_input.as_deref_mut() {
                        for c in 0..c_n {
                            dx[base + c] += g[c] * taps[tap + c];
                        }
                    }
                }
            }
        }
    }
    for c in 0..c_n {
        for dt in 0..kt {
            for j in 0..ks {
                d_kernel[(c * kt + dt) * ks + j] += d_taps[(dt * ks + j) * c_n + c];
            }
        }
    }
}

/// One output frame `[C_out]` of a causal conv1d with kernel `[C_in][k][C_out]`.
/// `out` is overwritten.
pub(crate) fn conv1d_frame(s: &ConvLayerShape, kernel: &[f64], frames: &[Option<&[f64]>], out: &mut [f64]) {
    out.fill(0.0);
    for (j, frame) in frames.iter().enumerate() {
        let Some(x) = frame else { continue };
        for (c, &xv) in x.iter().enumerate() {
            let k = &kernel[(c * s.kernel + j) * s.c_out..][..s.c_out];
            for (o, &kv) in out.iter_mut().zip(k) {
                *o += xv * kv;
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    s: &ConvLayerShape,
    kernel: &[f64],
    input: &[f64],
    frames: usize,
    d_out: &[f64],
    d_kernel: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let (ci, co, k) = (s.c_in, s.c_out, s.kernel);
    for t in 0..frames {
        let g = &d_out[t * co..(t + 1) * co];
        for j in 0..k {
            let Some(ti) = (t + j).checked_sub(k - 1) else { continue };
            for c in 0..ci {
                let xv = input[ti * ci + c];
                let kr = &kernel[(c * k + j) * co..][..co];
                let dk = &mut d_kernel[(c * k + j) * co..][..co];
                let mut acc = 0.0;
                for o in 0..co {
                    dk[o] += xv * g[o];
                    acc += kr[o] * g[o];
                }
                if let Some(dx) = d_input.as_deref_mut() {
                    dx[ti * ci + c] += acc;
                }
            }
        }
    }
}

/// Batch statistics kept for the batchnorm backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnBatch {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Vec<f64>,
    pub rows: usize,
}

pub(crate) fn bn_train_forward(
    x: &[f64],
    rows: usize,
    ch: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    out: &mut [f64],
) -> BnBatch {
    let n = rows as f64;
    let mut mean = vec![0.0; ch];
    for r in 0..rows {
        for (m, &v) in mean.iter_mut().zip(&x[r * ch..(r + 1) * ch]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; ch];
    for r in 0..rows {
        for c in 0..ch {
            let d = x[r * ch + c] - mean[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..ch {
            let i = r * ch + c;
            xhat[i] = (x[i] - mean[c]) * inv_std[c];
            out[i] = gamma[c] * xhat[i] + beta[c];
        }
    }
    BnBatch {
        mean,
        var,
        inv_std,
        xhat,
        rows,
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_infer_forward(
    x: &[f64],
    ch: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
    out: &mut [f64],
) {
    for (xr, or) in x.chunks_exact(ch).zip(out.chunks_exact_mut(ch)) {
        for c in 0..ch {
            or[c] = gamma[c] * ((xr[c] - mean[c]) / (var[c] + eps).sqrt()) + beta[c];
        }
    }
}

/// Accumulates parameter gradients and overwrites `d_x`.
pub(crate) fn bn_backward(
    b: &BnBatch,
    ch: usize,
    gamma: &[f64],
    d_out: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
    d_x: &mut [f64],
) {
    let n = b.rows as f64;
    let mut sum_d = vec![0.0; ch];
    let mut sum_dx = vec![0.0; ch];
    for r in 0..b.rows {
        for c in 0..ch {
            let i = r * ch + c;
            d_gamma[c] += d_out[i] * b.xhat[i];
            d_beta[c] += d_out[i];
            let dxh = d_out[i] * gamma[c];
            sum_d[c] += dxh;
            sum_dx[c] += dxh * b.xhat[i];
        }
    }
    for r in 0..b.rows {
        for c in 0..ch {
            let i = r * ch + c;
            let dxh = d_out[i] * gamma[c];
            d_x[i] = b.inv_std[c] / n * (n * dxh - sum_d[c] - b.xhat[i] * sum_dx[c]);
        }
    }
}

/// Borrowed GRU layer tensors; gate order (r, z, h).
#[derive(Debug, Clone, Copy)]
pub(crate) struct GruView<'a> {
    pub w: [&'a [f64]; 3],
    pub u: [&'a [f64]; 3],
    pub b_i: [&'a [f64]; 3],
    pub b_h: [&'a [f64]; 3],
    pub input: usize,
    pub hidden: usize,
}

/// Gate activations of one step, each of length `hidden`.
pub(crate) struct GruGates<'a> {
    pub r: &'a mut [f64],
    pub z: &'a mut [f64],
    pub n: &'a mut [f64],
    pub hn: &'a mut [f64],
}

pub(crate) fn gru_step(v: &GruView, x: &[f64], h: &[f64], g: GruGates, h_out: &mut [f64]) {
    let hd = v.hidden;
    for j in 0..hd {
        g.r[j] = v.b_i[0][j] + v.b_h[0][j];
        g.z[j] = v.b_i[1][j] + v.b_h[1][j];
        g.n[j] = v.b_i[2][j];
        g.hn[j] = v.b_h[2][j];
    }
    matmul_acc(x, v.w[0], 1, v.input, hd, g.r);
    matmul_acc(h, v.u[0], 1, hd, hd, g.r);
    matmul_acc(x, v.w[1], 1, v.input, hd, g.z);
    matmul_acc(h, v.u[1], 1, hd, hd, g.z);
    matmul_acc(x, v.w[2], 1, v.input, hd, g.n);
    matmul_acc(h, v.u[2], 1, hd, hd, g.hn);
    for j in 0..hd {
        g.r[j] = sigmoid(g.r[j]);
        g.z[j] = sigmoid(g.z[j]);
        g.n[j] = (g.n[j] + g.r[j] * g.hn[j]).tanh();
        h_out[j] = (1.0 - g.z[j]) * g.n[j] + g.z[j] * h[j];
    }
}

/// Cached activations of a GRU layer over a sequence.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GruTrace {
    pub x: Vec<f64>,
    /// `[T+1][H]`, row 0 is the initial zero state.
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub hn: Vec<f64>,
    pub frames: usize,
}

pub(crate) fn gru_sequence(v: &GruView, x: &[f64], frames: usize) -> GruTrace {
    let hd = v.hidden;
    let mut tr = GruTrace {
        x: x.to_vec(),
        h: vec![0.0; (frames + 1) * hd],
        r: vec![0.0; frames * hd],
        z: vec![0.0; frames * hd],
        n: vec![0.0; frames * hd],
        hn: vec![0.0; frames * hd],
        frames,
    };
    for t in 0..frames {
        let (prev, next) = tr.h.split_at_mut((t + 1) * hd);
        let s = t * hd..(t + 1) * hd;
        gru_step(
            v,
            &x[t * v.input..(t + 1) * v.input],
            &prev[t * hd..],
            GruGates {
                r: &mut tr.r[s.clone()],
                z: &mut tr.z[s.clone()],
                n: &mut tr.n[s.clone()],
                hn: &mut tr.hn[s],
            },
            &mut next[..hd],
        );
    }
    tr
}

/// Gradient buffers of one GRU layer, same layout as [`GruView`].
pub(crate) struct GruGrads<'a> {
    pub w: [&'a mut [f64]; 3],
    pub u: [&'a mut [f64]; 3],
    pub b_i: [&'a mut [f64]; 3],
    pub b_h: [&'a mut [f64]; 3],
}

/// Backpropagation through time. `d_h` is `[T][H]` (loss gradient w.r.t. each
/// output state); returns the gradient w.r.t. the input sequence.
pub(crate) fn gru_backward(v: &GruView, tr: &GruTrace, d_h: &[f64], g: &mut GruGrads) -> Vec<f64> {
    let (hd, ind) = (v.hidden, v.input);
    let mut d_x = vec![0.0; tr.frames * ind];
    let mut carry = vec![0.0; hd];
    let mut dh = vec![0.0; hd];
    let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
    let mut dhn = vec![0.0; hd];
    for t in (0..tr.frames).rev() {
        let s = t * hd;
        let h_prev = &tr.h[s..s + hd];
        for j in 0..hd {
            dh[j] = d_h[s + j] + carry[j];
        }
        for j in 0..hd {
            let (r, z, n, hn) = (tr.r[s + j], tr.z[s + j], tr.n[s + j], tr.hn[s + j]);
            let dn = dh[j] * (1.0 - z);
            let dz = dh[j] * (h_prev[j] - n);
            carry[j] = dh[j] * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * hn;
            dhn[j] = dan * r;
            da[0][j] = dr * r * (1.0 - r);
            da[1][j] = dz * z * (1.0 - z);
            da[2][j] = dan;
        }
        let x = &tr.x[t * ind..(t + 1) * ind];
        let dx = &mut d_x[t * ind..(t + 1) * ind];
        for q in 0..3 {
            let hid_grad = if q == 2 { &dhn } else { &da[q] };
            for j in 0..hd {
                g.b_i[q][j] += da[q][j];
                g.b_h[q][j] += hid_grad[j];
            }
            matmul_backward(x, v.w[q], &da[q], 1, ind, hd, Some(&mut *dx), g.w[q]);
            matmul_backward(h_prev, v.u[q], hid_grad, 1, hd, hd, Some(&mut carry), g.u[q]);
        }
    }
    d_x
}
