//! Convolution and pooling ops on the tape.
//!
//! All convolutions operate on single images in CHW layout; there is no batch
//! axis anywhere in this workspace (one frame is processed per step).

use crate::tape::Var;
use crate::tensor::Tensor;

/// 2-D convolution: input [C,H,W], weight [O,C,kh,kw], bias [O].
/// Zero padding `pad`, stride `stride`.
pub fn conv2d<'t>(
    input: Var<'t>,
    weight: Var<'t>,
    bias: Var<'t>,
    stride: usize,
    pad: usize,
) -> Var<'t> {
    let x = input.value();
    let w = weight.value();
    let b = bias.value();
    assert_eq!(x.shape().len(), 3, "conv2d input must be CHW");
    assert_eq!(w.shape().len(), 4, "conv2d weight must be OCKK");
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c_in, wc, "conv2d channel mismatch");
    assert_eq!(b.numel(), c_out);
    assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d kernel larger than input");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;

    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    {
        let od = out.data_mut();
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..c_in {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= wd {
                                    continue;
                                }
                                let ix = ix - pad;
                                acc += x.data()[(c * h + iy) * wd + ix]
                                    * w.data()[((o * c_in + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    od[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }

    let (nx, nw, nb) = (
        input.requires_grad(),
        weight.requires_grad(),
        bias.requires_grad(),
    );
    let (xc, wv) = (x.clone(), w.clone());
    input.tape().custom_op(
        &[input, weight, bias],
        out,
        Box::new(move |g| {
            let mut gx = nx.then(|| Tensor::zeros(&[c_in, h, wd]));
            let mut gw = nw.then(|| Tensor::zeros(&[c_out, c_in, kh, kw]));
            let mut gb = nb.then(|| Tensor::zeros(&[c_out]));
            for o in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g.data()[(o * oh + oy) * ow + ox];
                        if let Some(gb) = gb.as_mut() {
                            gb.data_mut()[o] += gv;
                        }
                        for c in 0..c_in {
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= wd {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    let xi = (c * h + iy) * wd + ix;
                                    let wi = ((o * c_in + c) * kh + ky) * kw + kx;
                                    if let Some(gx) = gx.as_mut() {
                                        gx.data_mut()[xi] += gv * wv.data()[wi];
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        gw.data_mut()[wi] += gv * xc.data()[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![gx, gw, gb]
        }),
    )
}

/// Transposed 2-D convolution: input [C,H,W], weight [C,O,kh,kw], bias [O].
/// Output is [O, (H-1)*stride + kh, (W-1)*stride + kw].
pub fn conv_transpose2d<'t>(
    input: Var<'t>,
    weight: Var<'t>,
    bias: Var<'t>,
    stride: usize,
) -> Var<'t> {
    let x = input.value();
    let w = weight.value();
    let b = bias.value();
    assert_eq!(x.shape().len(), 3);
    assert_eq!(w.shape().len(), 4);
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (wc, c_out, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c_in, wc, "conv_transpose2d channel mismatch");
    assert_eq!(b.numel(), c_out);
    let oh = (h - 1) * stride + kh;
    let ow = (wd - 1) * stride + kw;

    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    {
        let od = out.data_mut();
        for o in 0..c_out {
            for v in od[o * oh * ow..(o + 1) * oh * ow].iter_mut() {
                *v = b.data()[o];
            }
        }
        for c in 0..c_in {
            for y in 0..h {
                for xx in 0..wd {
                    let xv = x.data()[(c * h + y) * wd + xx];
                    for o in 0..c_out {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                od[(o * oh + y * stride + ky) * ow + xx * stride + kx] +=
                                    xv * w.data()[((c * c_out + o) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    let (nx, nw, nb) = (
        input.requires_grad(),
        weight.requires_grad(),
        bias.requires_grad(),
    );
    let (xc, wv) = (x.clone(), w.clone());
    input.tape().custom_op(
        &[input, weight, bias],
        out,
        Box::new(move |g| {
            let mut gx = nx.then(|| Tensor::zeros(&[c_in, h, wd]));
            let mut gw = nw.then(|| Tensor::zeros(&[c_in, c_out, kh, kw]));
            let gb = nb.then(|| {
                let mut gb = Tensor::zeros(&[c_out]);
                for o in 0..c_out {
                    gb.data_mut()[o] = g.data()[o * oh * ow..(o + 1) * oh * ow].iter().sum();
                }
                gb
            });
            for c in 0..c_in {
                for y in 0..h {
                    for xx in 0..wd {
                        let xi = (c * h + y) * wd + xx;
                        for o in 0..c_out {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let gi = (o * oh + y * stride + ky) * ow + xx * stride + kx;
                                    let wi = ((c * c_out + o) * kh + ky) * kw + kx;
                                    if let Some(gx) = gx.as_mut() {
                                        gx.data_mut()[xi] += g.data()[gi] * wv.data()[wi];
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        gw.data_mut()[wi] += g.data()[gi] * xc.data()[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![gx, gw, gb]
        }),
    )
}

/// Valid-mode correlation of a single [H,W] plane with a [kh,kw] kernel.
pub fn conv2d_plane<'t>(input: Var<'t>, kernel: Var<'t>) -> Var<'t> {
    let x = input.value();
    let k = kernel.value();
    assert_eq!(x.shape().len(), 2);
    assert_eq!(k.shape().len(), 2);
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    assert!(h >= kh && w >= kw, "plane smaller than kernel");
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(&[oh, ow]);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..kh {
                for kx in 0..kw {
                    acc += x.data()[(oy + ky) * w + ox + kx] * k.data()[ky * kw + kx];
                }
            }
            out.data_mut()[oy * ow + ox] = acc;
        }
    }
    let (nx, nk) = (input.requires_grad(), kernel.requires_grad());
    let (xc, kc) = (x.clone(), k.clone());
    input.tape().custom_op(
        &[input, kernel],
        out,
        Box::new(move |g| {
            let gx = nx.then(|| {
                let mut gx = Tensor::zeros(&[h, w]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g.data()[oy * ow + ox];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                gx.data_mut()[(oy + ky) * w + ox + kx] +=
                                    gv * kc.data()[ky * kw + kx];
                            }
                        }
                    }
                }
                gx
            });
            let gk = nk.then(|| {
                let mut gk = Tensor::zeros(&[kh, kw]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g.data()[oy * ow + ox];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                gk.data_mut()[ky * kw + kx] +=
                                    gv * xc.data()[(oy + ky) * w + ox + kx];
                            }
                        }
                    }
                }
                gk
            });
            vec![gx, gk]
        }),
    )
}

/// Mean over the spatial axes of a [C,H,W] tensor -> [C] vector.
pub fn global_avg_pool(input: Var<'_>) -> Var<'_> {
    let x = input.value();
    assert_eq!(x.shape().len(), 3);
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hw = (h * w) as f64;
    let mut out = Tensor::zeros(&[c]);
    for ch in 0..c {
        out.data_mut()[ch] = x.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw;
    }
    input.tape().custom_op(
        &[input],
        out,
        Box::new(move |g| {
            let mut gx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                let gv = g.data()[ch] / hw;
                for v in gx.data_mut()[ch * h * w..(ch + 1) * h * w].iter_mut() {
                    *v = gv;
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Rectangular crop [y0,y1) x [x0,x1) of a [H,W] plane.
pub fn crop2d(input: Var<'_>, y0: usize, y1: usize, x0: usize, x1: usize) -> Var<'_> {
    let x = input.value();
    assert_eq!(x.shape().len(), 2);
    let (h, w) = (x.shape()[0], x.shape()[1]);
    assert!(y0 <= y1 && y1 <= h && x0 <= x1 && x1 <= w);
    let (oh, ow) = (y1 - y0, x1 - x0);
    let mut out = Tensor::zeros(&[oh, ow]);
    for y in 0..oh {
        for xx in 0..ow {
            out.data_mut()[y * ow + xx] = x.data()[(y0 + y) * w + x0 + xx];
        }
    }
    input.tape().custom_op(
        &[input],
        out,
        Box::new(move |g| {
            let mut gx = Tensor::zeros(&[h, w]);
            for y in 0..oh {
                for xx in 0..ow {
                    gx.data_mut()[(y0 + y) * w + x0 + xx] = g.data()[y * ow + xx];
                }
            }
            vec![Some(gx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn conv2d_identity_kernel() {
        let tape = Tape::new();
        let x = tape.leaf_param(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf_param(Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]));
        let b = tape.leaf_param(Tensor::from_vec(&[1], vec![0.5]));
        let y = conv2d(x, w, b, 1, 0);
        assert_eq!(y.value().data(), &[2.5, 4.5, 6.5, 8.5]);
        let grads = tape.backward(y.sum());
        assert_eq!(grads.get(w).unwrap().data(), &[10.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[4.0]);
    }

    #[test]
    fn conv_transpose_doubles_spatial_size() {
        let tape = Tape::new();
        let x = tape.leaf_param(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf_param(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.leaf_param(Tensor::zeros(&[1]));
        let y = conv_transpose2d(x, w, b, 2);
        assert_eq!(y.shape(), vec![1, 4, 4]);
        // each input value is copied into its own 2x2 block
        assert_eq!(y.value().data()[0], 1.0);
        assert_eq!(y.value().data()[5], 1.0);
        assert_eq!(y.value().data()[15], 4.0);
    }

    #[test]
    fn global_pool_mean() {
        let tape = Tape::new();
        let x = tape.leaf_param(Tensor::from_vec(&[2, 1, 2], vec![1.0, 3.0, 10.0, 20.0]));
        let y = global_avg_pool(x);
        assert_eq!(y.value().data(), &[2.0, 15.0]);
    }
}
