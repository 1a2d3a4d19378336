//! Per-sample 3x3 / stride 2 / padding 1 convolution and pooling kernels on
//! channel-major (`C x H x W`) buffers.

/// Output extent of one stride-2 stage: `ceil(n / 2)`.
pub fn conv_output_size(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        conv_output_size(self.h)
    }

    pub fn out_w(&self) -> usize {
        conv_output_size(self.w)
    }
}

/// Convolution followed by ReLU. Returns the activated output.
pub(crate) fn conv_relu_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    s: &ConvShape,
) -> Vec<f64> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let mut out = vec![0.0; s.cout * oh * ow];
    for co in 0..s.cout {
        let wco = &weight[co * s.cin * 9..(co + 1) * s.cin * 9];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                for ci in 0..s.cin {
                    let plane = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
                    let k = &wco[ci * 9..ci * 9 + 9];
                    for ky in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy as usize >= s.h {
                            continue;
                        }
                        let row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix as usize >= s.w {
                                continue;
                            }
                            acc += k[ky * 3 + kx] * row[ix as usize];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc.max(0.0);
            }
        }
    }
    out
}

/// Reverse of [`conv_relu_forward`]. `out` is the cached activated output and
/// `grad_out` the gradient at it. Accumulates into `grad_w` and `grad_b` and
/// returns the gradient at the input when `want_input_grad` is set.
#[allow(clippy::too_many_arguments)]
#[allow(clippy::needless_range_loop)]
pub(crate) fn conv_relu_backward(
    x: &[f64],
    weight: &[f64],
    out: &[f64],
    grad_out: &[f64],
    s: &ConvShape,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let mut grad_x = want_input_grad.then(|| vec![0.0; s.cin * s.h * s.w]);
    for co in 0..s.cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (co * oh + oy) * ow + ox;
                if out[o] <= 0.0 {
                    continue;
                }
                let g = grad_out[o];
                if g == 0.0 {
                    continue;
                }
                grad_b[co] += g;
                for ci in 0..s.cin {
                    let base_w = (co * s.cin + ci) * 9;
                    let plane = ci * s.h * s.w;
                    for ky in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy as usize >= s.h {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix as usize >= s.w {
                                continue;
                            }
                            let xi = plane + iy as usize * s.w + ix as usize;
                            grad_w[base_w + ky * 3 + kx] += g * x[xi];
                            if let Some(gx) = grad_x.as_mut() {
                                gx[xi] += g * weight[base_w + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    grad_x
}

/// Mean over the spatial extent of each channel.
pub fn global_average_pool(act: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let area = (h * w) as f64;
    act.chunks(h * w)
        .take(channels)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect()
}
