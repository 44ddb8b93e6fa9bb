//! Forward and backward kernels for every layer type.
//!
//! Batch activations are `[N, C, H, W]` row-major. All accumulations run in
//! a fixed order so training is reproducible.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::output_size;
use crate::rng::Stream;
use crate::tensor::Tensor;

fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        other => Err(Error::ShapeMismatch(format!("expected 4-d tensor, got {other:?}"))),
    }
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        other => Err(Error::ShapeMismatch(format!("expected 2-d tensor, got {other:?}"))),
    }
}

/// Channel grouping for batch normalization: `[N, C, ...]` tensors normalize
/// per channel over everything else.
fn bn_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "batch norm needs at least [N, C] input, got {shape:?}"
        )));
    }
    let n = shape[0];
    let c = shape[1];
    let spatial: usize = shape[2..].iter().product();
    Ok((n, c, spatial.max(1)))
}

/// Zero-pad the spatial dimensions of a batch.
pub fn pad_batch(input: &Tensor, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input)?;
    if pad == 0 {
        return Ok(input.clone());
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, hp, wp]);
    let src = input.data();
    let dst = out.data_mut();
    for img in 0..n * c {
        let src_base = img * h * w;
        let dst_base = img * hp * wp;
        for y in 0..h {
            let s = src_base + y * w;
            let d = dst_base + (y + pad) * wp + pad;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

/// Convolution over an already padded batch. `pad` is the padding that was
/// applied, used only to recover the nominal output size.
pub fn conv_forward_padded(
    padded: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    pad: usize,
    stride: usize,
) -> Result<Tensor> {
    let (n_batch, ic, hp, wp) = dims4(padded)?;
    let (oc, w_ic, k, k2) = dims4(weights)?;
    if w_ic != ic || k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "kernel {:?} does not match input channels {ic}",
            weights.shape()
        )));
    }
    if bias.len() != oc {
        return Err(Error::ShapeMismatch(format!(
            "bias length {} does not match {oc} filters",
            bias.len()
        )));
    }
    let oh = output_size(hp - 2 * pad, k, pad, stride)?;
    let ow = output_size(wp - 2 * pad, k, pad, stride)?;
    let mut out = Tensor::zeros(&[n_batch, oc, oh, ow]);
    let x = padded.data();
    let w = weights.data();
    let o = out.data_mut();
    let in_chan = hp * wp;
    let in_img = ic * in_chan;
    let out_chan = oh * ow;
    let out_img = oc * out_chan;

    // one row-stencil pass per (filter, channel, ky) keeps the hot loop
    // over ox with the k taps unrolled
    for n in 0..n_batch {
        for f in 0..oc {
            let out_base = n * out_img + f * out_chan;
            o[out_base..out_base + out_chan].fill(bias[f]);
            for cin in 0..ic {
                let in_base = n * in_img + cin * in_chan;
                let w_base = (f * ic + cin) * k * k;
                for ky in 0..k {
                    let taps = &w[w_base + ky * k..w_base + (ky + 1) * k];
                    for oy in 0..oh {
                        let src_row = in_base + (oy * stride + ky) * wp;
                        let dst_row = out_base + oy * ow;
                        row_stencil_add(
                            &mut o[dst_row..dst_row + ow],
                            &x[src_row..src_row + wp],
                            taps,
                            stride,
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

/// out[ox] += Σ_kx taps[kx] · src[ox·stride + kx]. The tap loop is
/// monomorphized for the kernel widths the architectures use so it unrolls
/// and the ox loop vectorizes.
fn row_stencil_add(out: &mut [f64], src: &[f64], taps: &[f64], stride: usize) {
    fn fixed<const K: usize>(out: &mut [f64], src: &[f64], taps: &[f64]) {
        let taps: &[f64; K] = taps.try_into().expect("tap count");
        for (ox, o) in out.iter_mut().enumerate() {
            let window = &src[ox..ox + K];
            let mut acc = 0.0;
            for kx in 0..K {
                acc += taps[kx] * window[kx];
            }
            *o += acc;
        }
    }
    if stride == 1 {
        match taps.len() {
            1 => fixed::<1>(out, src, taps),
            3 => fixed::<3>(out, src, taps),
            5 => fixed::<5>(out, src, taps),
            7 => fixed::<7>(out, src, taps),
            9 => fixed::<9>(out, src, taps),
            11 => fixed::<11>(out, src, taps),
            _ => {
                for (ox, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (kx, &t) in taps.iter().enumerate() {
                        acc += t * src[ox + kx];
                    }
                    *o += acc;
                }
            }
        }
    } else {
        for (ox, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (kx, &t) in taps.iter().enumerate() {
                acc += t * src[ox * stride + kx];
            }
            *o += acc;
        }
    }
}

/// Convolution of `[N, IC, H, W]` input with `[OC, IC, K, K]` weights.
pub fn conv_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    pad: usize,
    stride: usize,
) -> Result<Tensor> {
    let padded = pad_batch(input, pad)?;
    conv_forward_padded(&padded, weights, bias, pad, stride)
}

/// Gradients of a convolution: input gradient (unpadded), weight gradient,
/// bias gradient.
pub fn conv_backward(
    padded: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    conv_backward_impl(padded, weights, dout, pad, stride, true)
        .map(|(d, dw, db)| (d.expect("input gradient requested"), dw, db))
}

/// Weight and bias gradients only, for the network's first layer where the
/// input gradient is never consumed.
pub fn conv_backward_params(
    padded: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    conv_backward_impl(padded, weights, dout, pad, stride, false).map(|(_, dw, db)| (dw, db))
}

fn conv_backward_impl(
    padded: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    pad: usize,
    stride: usize,
    need_dinput: bool,
) -> Result<(Option<Tensor>, Vec<f64>, Vec<f64>)> {
    let (n_batch, ic, hp, wp) = dims4(padded)?;
    let (oc, _, k, _) = dims4(weights)?;
    let (dn, doc, oh, ow) = dims4(dout)?;
    if dn != n_batch || doc != oc {
        return Err(Error::ShapeMismatch("conv backward batch/filter mismatch".into()));
    }
    let x = padded.data();
    let w = weights.data();
    let g = dout.data();
    let mut dpad = if need_dinput { vec![0.0; padded.numel()] } else { Vec::new() };
    let mut dw = vec![0.0; weights.numel()];
    let mut db = vec![0.0; oc];
    let in_chan = hp * wp;
    let in_img = ic * in_chan;
    let out_chan = oh * ow;
    let out_img = oc * out_chan;

    for n in 0..n_batch {
        for f in 0..oc {
            let out_base = n * out_img + f * out_chan;
            let mut bias_acc = 0.0;
            for &v in &g[out_base..out_base + out_chan] {
                bias_acc += v;
            }
            db[f] += bias_acc;
            for cin in 0..ic {
                let in_base = n * in_img + cin * in_chan;
                let w_base = (f * ic + cin) * k * k;
                for ky in 0..k {
                    let dw_row = &mut dw[w_base + ky * k..w_base + (ky + 1) * k];
                    let taps = &w[w_base + ky * k..w_base + (ky + 1) * k];
                    for oy in 0..oh {
                        let src_row = in_base + (oy * stride + ky) * wp;
                        let g_row = &g[out_base + oy * ow..out_base + (oy + 1) * ow];
                        if stride == 1 {
                            row_backward_taps(dw_row, &x[src_row..src_row + wp], g_row);
                            if need_dinput {
                                let dst = &mut dpad[src_row..src_row + wp];
                                for (kx, &t) in taps.iter().enumerate() {
                                    let shifted = &mut dst[kx..kx + ow];
                                    for (d, &gv) in shifted.iter_mut().zip(g_row) {
                                        *d += t * gv;
                                    }
                                }
                            }
                        } else {
                            for (ox, &gv) in g_row.iter().enumerate() {
                                for kx in 0..k {
                                    dw_row[kx] += x[src_row + ox * stride + kx] * gv;
                                    if need_dinput {
                                        dpad[src_row + ox * stride + kx] += taps[kx] * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if !need_dinput {
        return Ok((None, dw, db));
    }

    // crop padding away
    let (h, w_dim) = (hp - 2 * pad, wp - 2 * pad);
    let mut dinput = Tensor::zeros(&[n_batch, ic, h, w_dim]);
    let di = dinput.data_mut();
    for img in 0..n_batch * ic {
        let src_base = img * in_chan;
        let dst_base = img * h * w_dim;
        for y in 0..h {
            let s = src_base + (y + pad) * wp + pad;
            let d = dst_base + y * w_dim;
            di[d..d + w_dim].copy_from_slice(&dpad[s..s + w_dim]);
        }
    }
    Ok((Some(dinput), dw, db))
}

/// dw[kx] += Σ_ox src[ox + kx] · g[ox] for every tap, one pass over the row.
fn row_backward_taps(dw: &mut [f64], src: &[f64], g: &[f64]) {
    fn fixed<const K: usize>(dw: &mut [f64], src: &[f64], g: &[f64]) {
        let mut acc = [0.0f64; K];
        for (ox, &gv) in g.iter().enumerate() {
            let window = &src[ox..ox + K];
            for kx in 0..K {
                acc[kx] += window[kx] * gv;
            }
        }
        for kx in 0..K {
            dw[kx] += acc[kx];
        }
    }
    match dw.len() {
        1 => fixed::<1>(dw, src, g),
        3 => fixed::<3>(dw, src, g),
        5 => fixed::<5>(dw, src, g),
        7 => fixed::<7>(dw, src, g),
        9 => fixed::<9>(dw, src, g),
        11 => fixed::<11>(dw, src, g),
        k => {
            for (ox, &gv) in g.iter().enumerate() {
                for kx in 0..k {
                    dw[kx] += src[ox + kx] * gv;
                }
            }
        }
    }
}

/// Per-channel batch mean and population variance from a training pass.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Train-mode batch normalization: normalize per channel with the batch
/// statistics, then apply the learnable affine transform.
pub fn batchnorm_forward_train(
    input: &Tensor,
    scale: &[f64],
    shift: &[f64],
    eps: f64,
) -> Result<(Tensor, BnBatchStats)> {
    let (n, c, spatial) = bn_dims(input)?;
    if scale.len() != c || shift.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "batch-norm parameters sized {} for {c} channels",
            scale.len()
        )));
    }
    let m = (n * spatial) as f64;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let o = out.data_mut();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for img in 0..n {
            let base = (img * c + ch) * spatial;
            for &v in &x[base..base + spatial] {
                sum += v;
            }
        }
        let mu = sum / m;
        let mut sq = 0.0;
        for img in 0..n {
            let base = (img * c + ch) * spatial;
            for &v in &x[base..base + spatial] {
                sq += (v - mu) * (v - mu);
            }
        }
        let v = sq / m;
        mean[ch] = mu;
        var[ch] = v;
        let inv_std = 1.0 / (v + eps).sqrt();
        let (a, b) = (scale[ch] * inv_std, shift[ch] - scale[ch] * inv_std * mu);
        for img in 0..n {
            let base = (img * c + ch) * spatial;
            for i in base..base + spatial {
                o[i] = a * x[i] + b;
            }
        }
    }
    Ok((out, BnBatchStats { mean, var }))
}

/// Inference-mode batch normalization using running statistics.
pub fn batchnorm_forward_infer(
    input: &Tensor,
    scale: &[f64],
    shift: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (n, c, spatial) = bn_dims(input)?;
    if [scale.len(), shift.len(), running_mean.len(), running_var.len()] != [c; 4] {
        return Err(Error::ShapeMismatch(format!(
            "batch-norm inference statistics missing or mis-sized for {c} channels"
        )));
    }
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let o = out.data_mut();
    for ch in 0..c {
        let inv_std = 1.0 / (running_var[ch] + eps).sqrt();
        let (a, b) = (
            scale[ch] * inv_std,
            shift[ch] - scale[ch] * inv_std * running_mean[ch],
        );
        for img in 0..n {
            let base = (img * c + ch) * spatial;
            for i in base..base + spatial {
                o[i] = a * x[i] + b;
            }
        }
    }
    Ok(out)
}

/// Gradients of train-mode batch normalization.
pub fn batchnorm_backward(
    input: &Tensor,
    dout: &Tensor,
    scale: &[f64],
    stats: &BnBatchStats,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (n, c, spatial) = bn_dims(input)?;
    let m = (n * spatial) as f64;
    let x = input.data();
    let g = dout.data();
    let mut dinput = Tensor::zeros(input.shape());
    let di = dinput.data_mut();
    let mut dscale = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    for ch in 0..c {
        let mu = stats.mean[ch];
        let inv_std = 1.0 / (stats.var[ch] + eps).sqrt();
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for img in 0..n {
            let base = (img * c + ch) * spatial;
            for i in base..base + spatial {
                let xhat = (x[i] - mu) * inv_std;
                sum_dy += g[i];
                sum_dy_xhat += g[i] * xhat;
            }
        }
        dscale[ch] = sum_dy_xhat;
        dshift[ch] = sum_dy;
        let a = scale[ch] * inv_std;
        for img in 0..n {
            let base = (img * c + ch) * spatial;
            for i in base..base + spatial {
                let xhat = (x[i] - mu) * inv_std;
                di[i] = a * (g[i] - sum_dy / m - xhat * sum_dy_xhat / m);
            }
        }
    }
    Ok((dinput, dscale, dshift))
}

/// Elementwise max(0, z).
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(output: &Tensor, dout: &Tensor) -> Tensor {
    let mut dinput = dout.clone();
    for (d, &o) in dinput.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
    dinput
}

/// Window maxima; also returns the flat input index of each selected
/// element (first hit wins ties, scan order row-major).
pub fn maxpool_forward(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = dims4(input)?;
    let oh = crate::nn::pool_output_size(h, size, stride)?;
    let ow = crate::nn::pool_output_size(w, size, stride)?;
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let o = out.data_mut();
    let mut argmax = vec![0usize; n * c * oh * ow];
    let mut oi = 0;
    for img in 0..n * c {
        let base = img * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..size {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for dx in 0..size {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                o[oi] = best;
                argmax[oi] = best_idx;
                oi += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dinput = Tensor::zeros(input_shape);
    let di = dinput.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        di[idx] += g;
    }
    dinput
}

/// Linear combination h_j = Σ_i x_i w_ij + b_j over flattened samples.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let n = input.shape()[0];
    let features = input.numel() / n;
    let (w_in, w_out) = dims2(weights)?;
    if w_in != features {
        return Err(Error::ShapeMismatch(format!(
            "fully-connected weights expect {w_in} inputs, got {features}"
        )));
    }
    if bias.len() != w_out {
        return Err(Error::ShapeMismatch("fully-connected bias length mismatch".into()));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Tensor::zeros(&[n, w_out]);
    let o = out.data_mut();
    for s in 0..n {
        let xs = &x[s * features..(s + 1) * features];
        let os = &mut o[s * w_out..(s + 1) * w_out];
        os.copy_from_slice(bias);
        for (i, &xi) in xs.iter().enumerate() {
            let wrow = &w[i * w_out..(i + 1) * w_out];
            for (ov, &wv) in os.iter_mut().zip(wrow) {
                *ov += xi * wv;
            }
        }
    }
    Ok(out)
}

pub fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let n = input.shape()[0];
    let features = input.numel() / n;
    let (_, w_out) = dims2(weights)?;
    let x = input.data();
    let w = weights.data();
    let g = dout.data();
    let mut dinput = Tensor::zeros(input.shape());
    let di = dinput.data_mut();
    let mut dw = vec![0.0; weights.numel()];
    let mut db = vec![0.0; w_out];
    for s in 0..n {
        let xs = &x[s * features..(s + 1) * features];
        let gs = &g[s * w_out..(s + 1) * w_out];
        for (j, &gj) in gs.iter().enumerate() {
            db[j] += gj;
        }
        let ds = &mut di[s * features..(s + 1) * features];
        for (i, &xi) in xs.iter().enumerate() {
            let wrow = &w[i * w_out..(i + 1) * w_out];
            let dwrow = &mut dw[i * w_out..(i + 1) * w_out];
            let mut acc = 0.0;
            for j in 0..w_out {
                acc += wrow[j] * gs[j];
                dwrow[j] += xi * gs[j];
            }
            ds[i] = acc;
        }
    }
    Ok((dinput, dw, db))
}

/// Inverted dropout: kept entries scale by 1/(1-rate) so inference needs no
/// special casing. Returns the applied mask of per-element scale factors.
pub fn dropout_forward_train(input: &Tensor, rate: f64, rng: &mut Stream) -> (Tensor, Vec<f64>) {
    if rate == 0.0 {
        return (input.clone(), vec![1.0; input.numel()]);
    }
    let keep = 1.0 - rate;
    let inv = 1.0 / keep;
    let mut out = input.clone();
    let mut mask = vec![0.0; input.numel()];
    for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
        if rng.gen::<f64>() < keep {
            *m = inv;
            *v *= inv;
        } else {
            *m = 0.0;
            *v = 0.0;
        }
    }
    (out, mask)
}

pub fn dropout_backward(mask: &[f64], dout: &Tensor) -> Tensor {
    let mut dinput = dout.clone();
    for (d, &m) in dinput.data_mut().iter_mut().zip(mask) {
        *d *= m;
    }
    dinput
}

/// Max-shifted softmax of one logit vector.
pub fn softmax_vec(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    let (n, k) = dims2(input)?;
    let mut out = Tensor::zeros(&[n, k]);
    let x = input.data();
    let o = out.data_mut();
    for s in 0..n {
        let row = softmax_vec(&x[s * k..(s + 1) * k]);
        o[s * k..(s + 1) * k].copy_from_slice(&row);
    }
    Ok(out)
}

/// Jacobian-vector product of softmax: dz_i = y_i (dy_i - Σ_j dy_j y_j).
pub fn softmax_backward(output: &Tensor, dout: &Tensor) -> Result<Tensor> {
    let (n, k) = dims2(output)?;
    let y = output.data();
    let g = dout.data();
    let mut dinput = Tensor::zeros(&[n, k]);
    let di = dinput.data_mut();
    for s in 0..n {
        let ys = &y[s * k..(s + 1) * k];
        let gs = &g[s * k..(s + 1) * k];
        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
        for j in 0..k {
            di[s * k + j] = ys[j] * (gs[j] - dot);
        }
    }
    Ok(dinput)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, STREAM_DROPOUT};

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    /// Direct transcription of the windowed weighted sum.
    fn conv_oracle(
        x: &[f64],
        (n, ic, h, w): (usize, usize, usize, usize),
        wts: &[f64],
        (oc, k): (usize, usize),
        bias: &[f64],
        pad: usize,
        stride: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * oc * oh * ow];
        for s in 0..n {
            for f in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[f];
                        for cin in 0..ic {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((s * ic + cin) * h + iy as usize) * w + ix as usize];
                                    let wv = wts[((f * ic + cin) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((s * oc + f) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let input = Tensor::from_vec(&[1, 1, 3, 3], rand_vec(9, 3)).unwrap();
        let weights = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv_forward(&input, &weights, &[0.0], 0, 1).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_zero_weights_gives_bias() {
        let input = Tensor::from_vec(&[1, 2, 4, 4], rand_vec(32, 4)).unwrap();
        let weights = Tensor::zeros(&[3, 2, 3, 3]);
        let out = conv_forward(&input, &weights, &[7.0, 7.0, 7.0], 1, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn conv_matches_oracle() {
        let input = Tensor::from_vec(&[1, 1, 6, 6], rand_vec(36, 11)).unwrap();
        let weights = Tensor::from_vec(&[1, 1, 3, 3], rand_vec(9, 12)).unwrap();
        let bias = [0.25];
        let out = conv_forward(&input, &weights, &bias, 1, 1).unwrap();
        let want = conv_oracle(input.data(), (1, 1, 6, 6), weights.data(), (1, 3), &bias, 1, 1);
        assert_eq!(out.shape(), &[1, 1, 6, 6]);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_strided_matches_oracle() {
        let input = Tensor::from_vec(&[2, 3, 7, 7], rand_vec(2 * 3 * 49, 13)).unwrap();
        let weights = Tensor::from_vec(&[4, 3, 3, 3], rand_vec(4 * 27, 14)).unwrap();
        let bias = [0.1, -0.2, 0.3, 0.0];
        let out = conv_forward(&input, &weights, &bias, 0, 2).unwrap();
        let want = conv_oracle(input.data(), (2, 3, 7, 7), weights.data(), (4, 3), &bias, 0, 2);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros(&[1, 3, 4, 4]);
        let weights = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(conv_forward(&input, &weights, &[0.0, 0.0], 1, 1).is_err());
    }

    #[test]
    fn batchnorm_three_sample_example() {
        let input = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let (out, stats) = batchnorm_forward_train(&input, &[1.0], &[0.0], 1e-5).unwrap();
        let expected = 1.0 / (2.0 / 3.0 + 1e-5f64).sqrt();
        assert!((out.data()[0] + expected).abs() < 1e-12);
        assert!(out.data()[1].abs() < 1e-12);
        assert!((out.data()[2] - expected).abs() < 1e-12);
        assert!((expected - 1.22472).abs() < 1e-4);
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        assert!((stats.var[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_constant_batch_is_zero() {
        let input = Tensor::from_vec(&[4, 1], vec![5.0; 4]).unwrap();
        let (out, _) = batchnorm_forward_train(&input, &[1.0], &[0.0], 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn batchnorm_zero_scale_gives_shift() {
        let input = Tensor::from_vec(&[3, 1], vec![-7.0, 0.0, 9.0]).unwrap();
        let (out, _) = batchnorm_forward_train(&input, &[0.0], &[5.0], 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batchnorm_infer_uses_running_stats() {
        let input = Tensor::from_vec(&[2, 1], vec![3.0, 5.0]).unwrap();
        let out =
            batchnorm_forward_infer(&input, &[2.0], &[1.0], &[4.0], &[1.0 - 1e-5], 1e-5).unwrap();
        assert!((out.data()[0] - (2.0 * -1.0 + 1.0)).abs() < 1e-12);
        assert!((out.data()[1] - (2.0 * 1.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_infer_rejects_missing_stats() {
        let input = Tensor::zeros(&[2, 3]);
        assert!(batchnorm_forward_infer(&input, &[1.0; 3], &[0.0; 3], &[0.0; 2], &[1.0; 3], 1e-5)
            .is_err());
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&y).data(), y.data());
    }

    #[test]
    fn maxpool_examples() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = maxpool_forward(&input, 2, 2).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, &[3]);

        let constant = Tensor::from_vec(&[1, 1, 4, 4], vec![2.0; 16]).unwrap();
        let (out, _) = maxpool_forward(&constant, 2, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));

        assert!(maxpool_forward(&input, 3, 1).is_err());
    }

    #[test]
    fn maxpool_matches_window_oracle() {
        let data = rand_vec(64, 21);
        let input = Tensor::from_vec(&[1, 1, 8, 8], data.clone()).unwrap();
        let (out, _) = maxpool_forward(&input, 2, 2).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let mut want = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        want = want.max(data[(oy * 2 + dy) * 8 + ox * 2 + dx]);
                    }
                }
                assert_eq!(out.data()[oy * 4 + ox], want);
            }
        }
    }

    #[test]
    fn fc_identity_and_bias() {
        let input = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let eye = Tensor::from_vec(
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let out = fc_forward(&input, &eye, &[0.0; 3]).unwrap();
        assert_eq!(out.data(), input.data());

        let zeros = Tensor::zeros(&[3, 2]);
        let out = fc_forward(&input, &zeros, &[4.0, -1.0]).unwrap();
        assert_eq!(out.data(), &[4.0, -1.0]);
    }

    #[test]
    fn fc_matches_dot_product_oracle() {
        let x = rand_vec(6, 31);
        let w = rand_vec(24, 32);
        let b = rand_vec(4, 33);
        let input = Tensor::from_vec(&[1, 6], x.clone()).unwrap();
        let weights = Tensor::from_vec(&[6, 4], w.clone()).unwrap();
        let out = fc_forward(&input, &weights, &b).unwrap();
        for j in 0..4 {
            let mut want = b[j];
            for i in 0..6 {
                want += x[i] * w[i * 4 + j];
            }
            assert!((out.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fc_rejects_length_mismatch() {
        let input = Tensor::zeros(&[1, 5]);
        let weights = Tensor::zeros(&[6, 4]);
        assert!(fc_forward(&input, &weights, &[0.0; 4]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let uniform = softmax_vec(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(uniform, vec![0.25; 4]);

        let z = [1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln(), 4.0f64.ln()];
        let probs = softmax_vec(&z);
        for (p, want) in probs.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((p - want).abs() < 1e-12);
        }

        let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
        let probs2 = softmax_vec(&shifted);
        for (a, b) in probs.iter().zip(&probs2) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_overflow_safe() {
        let probs = softmax_vec(&[1e6, 1e6 + 1.0]);
        assert!(probs.iter().all(|p| p.is_finite()));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let input = Tensor::from_vec(&[1, 8], rand_vec(8, 41)).unwrap();
        let mut rng = stream(1, STREAM_DROPOUT, 0);
        let (out, mask) = dropout_forward_train(&input, 0.0, &mut rng);
        assert_eq!(out.data(), input.data());
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_kept_fraction_within_three_sigma() {
        let trials = 10_000usize;
        let rate = 0.5;
        let input = Tensor::from_vec(&[1, trials], vec![1.0; trials]).unwrap();
        let mut rng = stream(7, STREAM_DROPOUT, 0);
        let (_, mask) = dropout_forward_train(&input, rate, &mut rng);
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / trials as f64;
        let sigma = (rate * (1.0 - rate) / trials as f64).sqrt();
        assert!((kept - (1.0 - rate)).abs() < 3.0 * sigma, "kept fraction {kept}");
    }
}
