//! Raw slice kernels shared by the forward and backward passes.

/// Number of temporal steps produced by a window of `window` frames sliding
/// over `frames` frames with symmetric zero padding.
///
/// Returns `None` when no complete window fits.
pub fn conv_output_len(frames: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let span = frames + 2 * padding + 1;
    if span <= window {
        return None;
    }
    Some((span - window).div_ceil(stride))
}

/// `C[m×n] = A[m×k] · B[k×n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `C[m×n] = A[m×k] · B[n×k]ᵀ`.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `C[k×n] = A[m×k]ᵀ · B[m×n]`.
pub(crate) fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

#[cfg(test)]
fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Interpolation taps for align-corners linear resizing of `src` samples to `dst`.
///
/// Each output position is `(lo, hi, w_lo, w_hi)`.
pub(crate) fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 1.0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let frac = pos - lo as f64;
            if lo == src - 1 || frac == 0.0 {
                (lo, lo, 1.0, 0.0)
            } else {
                (lo, lo + 1, 1.0 - frac, frac)
            }
        })
        .collect()
}

/// Geometry of a temporal convolution whose kernel spans the full spatial width.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub frames: usize,
    pub width: usize,
    pub channels: usize,
    pub out_channels: usize,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
    pub steps: usize,
}

impl ConvGeom {
    fn window_frames(&self, step: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let start = (step * self.stride) as isize - self.padding as isize;
        (0..self.window).filter_map(move |u| {
            let t = start + u as isize;
            (t >= 0 && (t as usize) < self.frames).then_some((u, t as usize))
        })
    }

    fn frame_len(&self) -> usize {
        self.width * self.channels
    }

    fn kernel_len(&self) -> usize {
        self.window * self.width * self.channels
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let fl = g.frame_len();
    let kl = g.kernel_len();
    let mut out = vec![0.0; g.steps * g.out_channels];
    for l in 0..g.steps {
        for o in 0..g.out_channels {
            let k = &kernel[o * kl..(o + 1) * kl];
            let mut acc = bias[o];
            for (u, t) in g.window_frames(l) {
                let xs = &x[t * fl..(t + 1) * fl];
                let ks = &k[u * fl..(u + 1) * fl];
                acc += xs.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>();
            }
            out[l * g.out_channels + o] = acc;
        }
    }
    out
}

/// Returns `(dx, dkernel, dbias)`.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    kernel: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let fl = g.frame_len();
    let kl = g.kernel_len();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; g.out_channels];
    for l in 0..g.steps {
        for o in 0..g.out_channels {
            let go = dy[l * g.out_channels + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            for (u, t) in g.window_frames(l) {
                let koff = o * kl + u * fl;
                for i in 0..fl {
                    dk[koff + i] += go * x[t * fl + i];
                    dx[t * fl + i] += go * kernel[koff + i];
                }
            }
        }
    }
    (dx, dk, db)
}
