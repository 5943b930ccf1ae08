//! Numeric kernels behind the graph ops. Every batched kernel processes each
//! leading-axis row with the same loop order, so a row evaluated alone and the
//! same row evaluated inside a batch give bitwise-identical results.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let src_row = (c * g.height + oy * g.stride + ki) * g.width + kj;
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = x[src_row + ox * g.stride];
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let dst_row = (c * g.height + oy * g.stride + ki) * g.width + kj;
                    for ox in 0..g.out_w {
                        dx[dst_row + ox * g.stride] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

/// Valid-padding strided convolution. `x`: [N,C,H,W], `w`: [F,C,K,K], `b`: [F].
pub(crate) fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    filters: usize,
    g: &ConvGeom,
) -> Vec<f64> {
    let p = g.positions();
    let k = g.patch();
    let mut out = vec![0.0; batch * filters * p];
    let mut cols = vec![0.0; k * p];
    for n in 0..batch {
        im2col(&x[n * g.input_len()..(n + 1) * g.input_len()], g, &mut cols);
        let out_n = &mut out[n * filters * p..(n + 1) * filters * p];
        for f in 0..filters {
            let dst = &mut out_n[f * p..(f + 1) * p];
            dst.fill(b[f]);
            let wf = &w[f * k..(f + 1) * k];
            for (kk, &wv) in wf.iter().enumerate() {
                axpy(wv, &cols[kk * p..(kk + 1) * p], dst);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    batch: usize,
    filters: usize,
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads {
    let p = g.positions();
    let k = g.patch();
    let mut dx = need[0].then(|| vec![0.0; batch * g.input_len()]);
    let mut dw = need[1].then(|| vec![0.0; filters * k]);
    let mut db = need[2].then(|| vec![0.0; filters]);
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    for n in 0..batch {
        let dout_n = &dout[n * filters * p..(n + 1) * filters * p];
        if let Some(db) = db.as_mut() {
            for f in 0..filters {
                db[f] += dout_n[f * p..(f + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * g.input_len()..(n + 1) * g.input_len()], g, &mut cols);
            for f in 0..filters {
                let df = &dout_n[f * p..(f + 1) * p];
                for kk in 0..k {
                    dw[f * k + kk] += dot(df, &cols[kk * p..(kk + 1) * p]);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.fill(0.0);
            for f in 0..filters {
                let df = &dout_n[f * p..(f + 1) * p];
                for kk in 0..k {
                    axpy(w[f * k + kk], df, &mut dcols[kk * p..(kk + 1) * p]);
                }
            }
            col2im_add(
                &dcols,
                g,
                &mut dx[n * g.input_len()..(n + 1) * g.input_len()],
            );
        }
    }
    ConvGrads { dx, dw, db }
}

/// Max pooling over [N,C,H,W]; returns the output and the flat argmax index
/// of every window (first maximal element in row-major order).
pub(crate) fn maxpool_forward(x: &[f64], planes: usize, g: &ConvGeom) -> (Vec<f64>, Vec<usize>) {
    let plane_in = g.height * g.width;
    let plane_out = g.positions();
    let mut out = vec![0.0; planes * plane_out];
    let mut arg = vec![0usize; planes * plane_out];
    for pl in 0..planes {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let idx =
                            pl * plane_in + (oy * g.stride + ki) * g.width + ox * g.stride + kj;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = pl * plane_out + oy * g.out_w + ox;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

/// `x`: [N,D], `w`: [D,O], `b`: [O] -> [N,O].
pub(crate) fn dense_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * d_out];
    for n in 0..batch {
        let row = &mut out[n * d_out..(n + 1) * d_out];
        row.copy_from_slice(b);
        let xn = &x[n * d_in..(n + 1) * d_in];
        for (d, &xv) in xn.iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, &w[d * d_out..(d + 1) * d_out], row);
            }
        }
    }
    out
}

pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    batch: usize,
    d_in: usize,
    d_out: usize,
    need: [bool; 3],
) -> ConvGrads {
    let mut dx = need[0].then(|| vec![0.0; batch * d_in]);
    let mut dw = need[1].then(|| vec![0.0; d_in * d_out]);
    let mut db = need[2].then(|| vec![0.0; d_out]);
    for n in 0..batch {
        let dn = &dout[n * d_out..(n + 1) * d_out];
        if let Some(db) = db.as_mut() {
            for (a, b) in db.iter_mut().zip(dn) {
                *a += b;
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * d_in..(n + 1) * d_in];
            for (d, &xv) in xn.iter().enumerate() {
                if xv != 0.0 {
                    axpy(xv, dn, &mut dw[d * d_out..(d + 1) * d_out]);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * d_in..(n + 1) * d_in];
            for (d, v) in dxn.iter_mut().enumerate() {
                *v = dot(dn, &w[d * d_out..(d + 1) * d_out]);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Row-wise softmax with max subtraction. `rows` rows of length `k`.
pub(crate) fn softmax_rows(z: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (zr, or) in z.chunks(k).zip(out.chunks_mut(k)) {
        let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, &v) in or.iter_mut().zip(zr) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in or.iter_mut() {
            *o /= s;
        }
    }
    out
}

/// Log-sum-exp of one row, computed with max subtraction.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
