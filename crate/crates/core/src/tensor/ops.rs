//! Raw kernels behind the graph ops. Layouts: images are `[C, H, W]`,
//! convolution kernels `[O, C, K, K]`, dense weights `[out, in]`.

pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Returns `(dx, dw, db)`.
pub(crate) fn dense_backward(g: &[f64], x: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; w.len()];
    for (o, &go) in g.iter().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        for (d, r) in dx.iter_mut().zip(row) {
            *d += go * r;
        }
        for (d, xv) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *d = go * xv;
        }
    }
    (dx, dw, g.to_vec())
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvDims {
    /// Row/column ranges of output positions whose shifted input index stays
    /// inside the image for kernel offset `(ky, kx)`.
    fn valid(&self, ky: usize, kx: usize) -> (isize, isize, std::ops::Range<usize>, std::ops::Range<usize>) {
        let pad = (self.kernel / 2) as isize;
        let dy = ky as isize - pad;
        let dx = kx as isize - pad;
        let h = self.height as isize;
        let w = self.width as isize;
        let ys = (0.max(-dy) as usize)..((h.min(h - dy)).max(0) as usize);
        let xs = (0.max(-dx) as usize)..((w.min(w - dx)).max(0) as usize);
        (dy, dx, ys, xs)
    }
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let plane = d.height * d.width;
    let mut out = vec![0.0; d.out_ch * plane];
    for o in 0..d.out_ch {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..d.in_ch {
            let inp = &x[c * plane..(c + 1) * plane];
            for ky in 0..d.kernel {
                for kx in 0..d.kernel {
                    let wv = k[((o * d.in_ch + c) * d.kernel + ky) * d.kernel + kx];
                    let (dy, dx, ys, xs) = d.valid(ky, kx);
                    if xs.is_empty() {
                        continue;
                    }
                    for y in ys {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (xs.start as isize + dx) as usize;
                        let src = &inp[sy * d.width + sx0..sy * d.width + sx0 + xs.len()];
                        let dst = &mut out_o[y * d.width + xs.start..y * d.width + xs.end];
                        for (a, s) in dst.iter_mut().zip(src) {
                            *a += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dk, db)`.
pub(crate) fn conv2d_backward(
    g: &[f64],
    x: &[f64],
    k: &[f64],
    d: ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = d.height * d.width;
    let mut dx_out = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; d.out_ch];
    for o in 0..d.out_ch {
        let g_o = &g[o * plane..(o + 1) * plane];
        db[o] = g_o.iter().sum();
        for c in 0..d.in_ch {
            let inp = &x[c * plane..(c + 1) * plane];
            let dinp = &mut dx_out[c * plane..(c + 1) * plane];
            for ky in 0..d.kernel {
                for kx in 0..d.kernel {
                    let kidx = ((o * d.in_ch + c) * d.kernel + ky) * d.kernel + kx;
                    let wv = k[kidx];
                    let (dy, dx, ys, xs) = d.valid(ky, kx);
                    if xs.is_empty() {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in ys {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (xs.start as isize + dx) as usize;
                        let grow = &g_o[y * d.width + xs.start..y * d.width + xs.end];
                        let src = &inp[sy * d.width + sx0..sy * d.width + sx0 + xs.len()];
                        acc += grow.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        let dst = &mut dinp[sy * d.width + sx0..sy * d.width + sx0 + xs.len()];
                        for (t, gv) in dst.iter_mut().zip(grow) {
                            *t += wv * gv;
                        }
                    }
                    dk[kidx] = acc;
                }
            }
        }
    }
    (dx_out, dk, db)
}

/// Index (into `x`) of the first maximal element of each 2×2 window.
fn pool_argmax(x: &[f64], channels: usize, height: usize, width: usize) -> Vec<usize> {
    let (oh, ow) = (height / 2, width / 2);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * width + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * width + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(crate) fn maxpool2_forward(x: &[f64], channels: usize, height: usize, width: usize) -> Vec<f64> {
    pool_argmax(x, channels, height, width)
        .into_iter()
        .map(|i| x[i])
        .collect()
}

pub(crate) fn maxpool2_backward(
    g: &[f64],
    x: &[f64],
    channels: usize,
    height: usize,
    width: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (gv, i) in g.iter().zip(pool_argmax(x, channels, height, width)) {
        dx[i] += gv;
    }
    dx
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

pub(crate) fn softmax_xent_forward(z: &[f64], t: &[f64]) -> f64 {
    let lse = log_sum_exp(z);
    z.iter().zip(t).map(|(zi, ti)| -ti * (zi - lse)).sum()
}

/// Returns `(dz, dt)` scaled by the upstream scalar gradient `g`.
pub(crate) fn softmax_xent_backward(g: f64, z: &[f64], t: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lse = log_sum_exp(z);
    let mass: f64 = t.iter().sum();
    let dz = z
        .iter()
        .zip(t)
        .map(|(zi, ti)| g * ((zi - lse).exp() * mass - ti))
        .collect();
    let dt = z.iter().map(|zi| -g * (zi - lse)).collect();
    (dz, dt)
}
