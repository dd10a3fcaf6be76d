//! Image-shaped operations: convolution, pooling, upsampling, patch
//! extraction and differentiable bilinear sampling.
//!
//! Feature maps are rank-3 `(channels, height, width)`; convolution weights
//! are rank-4 `(out_ch, in_ch, kh, kw)`. Normalized coordinates map pixel
//! centers into `[-1,1]^2` with x rightward and y downward: pixel `(r, c)`
//! sits at `x = -1 + (c + 0.5) * 2/W`, `y = -1 + (r + 0.5) * 2/H`.

use super::{Result, Tensor, TensorError};

fn expect_rank3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(TensorError::InvalidArg {
            op,
            msg: format!("expected (C,H,W) tensor, got {:?}", s),
        });
    }
    Ok((s[0], s[1], s[2]))
}

impl Tensor {
    /// 2-D convolution with zero padding. `self` is `(C,H,W)`, `weight` is
    /// `(O,C,kh,kw)`, `bias` is `(O)`.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (c_in, h, w) = expect_rank3("conv2d", self)?;
        let ws = weight.shape();
        if ws.len() != 4 || ws[1] != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape(),
                rhs: ws,
            });
        }
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        if bias.shape() != vec![c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![c_out],
                rhs: bias.shape(),
            });
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::InvalidArg {
                op: "conv2d",
                msg: format!("kernel {}x{} stride {} pad {} on {}x{}", kh, kw, stride, pad, h, w),
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;

        let mut data = vec![0.0; c_out * ho * wo];
        {
            let xd = self.data_ref();
            let wd = weight.data_ref();
            let bd = bias.data_ref();
            for o in 0..c_out {
                data[o * ho * wo..(o + 1) * ho * wo].fill(bd[o]);
                for c in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wd[((o * c_in + c) * kh + ky) * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xd[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                                let orow = &mut data[(o * ho + oy) * wo..(o * ho + oy + 1) * wo];
                                for ox in 0..wo {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    orow[ox] += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }

        let xp = self.clone();
        let wp = weight.clone();
        let bp = bias.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; c_in * h * w];
            let mut gw = vec![0.0; c_out * c_in * kh * kw];
            let mut gb = vec![0.0; c_out];
            {
                let xd = xp.data_ref();
                let wd = wp.data_ref();
                for o in 0..c_out {
                    let gplane = &g[o * ho * wo..(o + 1) * ho * wo];
                    gb[o] += gplane.iter().sum::<f64>();
                    for c in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let widx = ((o * c_in + c) * kh + ky) * kw + kx;
                                let wv = wd[widx];
                                let mut wacc = 0.0;
                                for oy in 0..ho {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let xrow =
                                        &xd[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                                    let gxrow =
                                        &mut gx[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                                    let grow = &gplane[oy * wo..(oy + 1) * wo];
                                    for ox in 0..wo {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let gv = grow[ox];
                                        wacc += gv * xrow[ix as usize];
                                        gxrow[ix as usize] += gv * wv;
                                    }
                                }
                                gw[widx] += wacc;
                            }
                        }
                    }
                }
            }
            xp.add_grad(&gx);
            wp.add_grad(&gw);
            bp.add_grad(&gb);
        };
        Tensor::make(
            "conv2d",
            vec![c_out, ho, wo],
            data,
            vec![self.clone(), weight.clone(), bias.clone()],
            back,
        )
    }

    /// Max pooling with square kernel == stride. Gradient flows to the first
    /// maximal element of each window, which keeps reruns bit-identical.
    pub fn maxpool2d(&self, k: usize) -> Result<Tensor> {
        let (c, h, w) = expect_rank3("maxpool2d", self)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(TensorError::InvalidArg {
                op: "maxpool2d",
                msg: format!("kernel {} does not divide {}x{}", k, h, w),
            });
        }
        let (ho, wo) = (h / k, w / k);
        let mut data = vec![0.0; c * ho * wo];
        let mut argmax = vec![0usize; c * ho * wo];
        {
            let xd = self.data_ref();
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for dy in 0..k {
                            let iy = oy * k + dy;
                            for dx in 0..k {
                                let ix = ox * k + dx;
                                let idx = (ci * h + iy) * w + ix;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = (ci * ho + oy) * wo + ox;
                        data[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                }
            }
        }
        let xp = self.clone();
        let n_in = c * h * w;
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; n_in];
            for (i, &src) in argmax.iter().enumerate() {
                gx[src] += g[i];
            }
            xp.add_grad(&gx);
        };
        Tensor::make("maxpool2d", vec![c, ho, wo], data, vec![self.clone()], back)
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = expect_rank3("upsample_nearest", self)?;
        if factor == 0 {
            return Err(TensorError::InvalidArg {
                op: "upsample_nearest",
                msg: "factor must be positive".into(),
            });
        }
        let (ho, wo) = (h * factor, w * factor);
        let mut data = vec![0.0; c * ho * wo];
        {
            let xd = self.data_ref();
            for ci in 0..c {
                for oy in 0..ho {
                    let iy = oy / factor;
                    let xrow = &xd[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                    let orow = &mut data[(ci * ho + oy) * wo..(ci * ho + oy + 1) * wo];
                    for (ox, ov) in orow.iter_mut().enumerate() {
                        *ov = xrow[ox / factor];
                    }
                }
            }
        }
        let xp = self.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; c * h * w];
            for ci in 0..c {
                for oy in 0..ho {
                    let iy = oy / factor;
                    let grow = &g[(ci * ho + oy) * wo..(ci * ho + oy + 1) * wo];
                    let gxrow = &mut gx[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                    for (ox, &gv) in grow.iter().enumerate() {
                        gxrow[ox / factor] += gv;
                    }
                }
            }
            xp.add_grad(&gx);
        };
        Tensor::make("upsample_nearest", vec![c, ho, wo], data, vec![self.clone()], back)
    }

    /// Cut a `(C,H,W)` map into non-overlapping `P x P` patches, flattened
    /// row-major over the patch grid into `(L, C*P*P)` with channel-major
    /// values inside each row.
    pub fn extract_patches(&self, p: usize) -> Result<Tensor> {
        let (c, h, w) = expect_rank3("extract_patches", self)?;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(TensorError::InvalidArg {
                op: "extract_patches",
                msg: format!("patch size {} does not divide {}x{}", p, h, w),
            });
        }
        let (gh, gw) = (h / p, w / p);
        let tokens = gh * gw;
        let row = c * p * p;
        let mut data = vec![0.0; tokens * row];
        {
            let xd = self.data_ref();
            for gy in 0..gh {
                for gx in 0..gw {
                    let t = gy * gw + gx;
                    for ci in 0..c {
                        for py in 0..p {
                            let iy = gy * p + py;
                            for px in 0..p {
                                let ix = gx * p + px;
                                data[t * row + (ci * p + py) * p + px] = xd[(ci * h + iy) * w + ix];
                            }
                        }
                    }
                }
            }
        }
        let xp = self.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; c * h * w];
            for gy in 0..gh {
                for gx_ in 0..gw {
                    let t = gy * gw + gx_;
                    for ci in 0..c {
                        for py in 0..p {
                            let iy = gy * p + py;
                            for px in 0..p {
                                let ix = gx_ * p + px;
                                gx[(ci * h + iy) * w + ix] += g[t * row + (ci * p + py) * p + px];
                            }
                        }
                    }
                }
            }
            xp.add_grad(&gx);
        };
        Tensor::make("extract_patches", vec![tokens, row], data, vec![self.clone()], back)
    }

    /// Bilinear sampling of a `(C,H,W)` map at `(N,2)` normalized points,
    /// producing `(N,C)`. Points outside `[-1,1]^2` are clamped to the
    /// border; the result is differentiable w.r.t. both the map values and
    /// the point coordinates (coordinate gradient is zero where clamped).
    pub fn bilinear_sample(&self, points: &Tensor) -> Result<Tensor> {
        let (c, h, w) = expect_rank3("bilinear_sample", self)?;
        let ps = points.shape();
        if ps.len() != 2 || ps[1] != 2 {
            return Err(TensorError::InvalidArg {
                op: "bilinear_sample",
                msg: format!("points must be (N,2), got {:?}", ps),
            });
        }
        let n = ps[0];
        if n == 0 {
            return Err(TensorError::InvalidArg {
                op: "bilinear_sample",
                msg: "empty point list".into(),
            });
        }

        // Per-point sampling geometry reused by the backward pass.
        struct Sampled {
            x0: usize,
            x1: usize,
            y0: usize,
            y1: usize,
            fx: f64,
            fy: f64,
            dx_scale: f64,
            dy_scale: f64,
        }
        let resolve = |coord: f64, extent: usize| -> (usize, usize, f64, f64) {
            let cont = (coord + 1.0) * extent as f64 / 2.0 - 0.5;
            let max = (extent - 1) as f64;
            let clamped = cont.clamp(0.0, max);
            let scale = if cont > 0.0 && cont < max {
                extent as f64 / 2.0
            } else {
                0.0
            };
            let i0 = clamped.floor().min(max) as usize;
            let i1 = (i0 + 1).min(extent - 1);
            let f = clamped - i0 as f64;
            (i0, i1, f, scale)
        };

        let mut data = vec![0.0; n * c];
        let mut geo = Vec::with_capacity(n);
        {
            let fm = self.data_ref();
            let pd = points.data_ref();
            for i in 0..n {
                let (x0, x1, fx, dx_scale) = resolve(pd[i * 2], w);
                let (y0, y1, fy, dy_scale) = resolve(pd[i * 2 + 1], h);
                for ci in 0..c {
                    let base = ci * h * w;
                    let v00 = fm[base + y0 * w + x0];
                    let v01 = fm[base + y0 * w + x1];
                    let v10 = fm[base + y1 * w + x0];
                    let v11 = fm[base + y1 * w + x1];
                    data[i * c + ci] =
                        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
                }
                geo.push(Sampled { x0, x1, y0, y1, fx, fy, dx_scale, dy_scale });
            }
        }

        let fmp = self.clone();
        let ptp = points.clone();
        let back = move |g: &[f64]| {
            let mut gfm = vec![0.0; c * h * w];
            let mut gpt = vec![0.0; n * 2];
            {
                let fm = fmp.data_ref();
                for (i, s) in geo.iter().enumerate() {
                    for ci in 0..c {
                        let gv = g[i * c + ci];
                        let base = ci * h * w;
                        let (i00, i01) = (base + s.y0 * w + s.x0, base + s.y0 * w + s.x1);
                        let (i10, i11) = (base + s.y1 * w + s.x0, base + s.y1 * w + s.x1);
                        gfm[i00] += gv * (1.0 - s.fy) * (1.0 - s.fx);
                        gfm[i01] += gv * (1.0 - s.fy) * s.fx;
                        gfm[i10] += gv * s.fy * (1.0 - s.fx);
                        gfm[i11] += gv * s.fy * s.fx;
                        let dfx = (1.0 - s.fy) * (fm[i01] - fm[i00]) + s.fy * (fm[i11] - fm[i10]);
                        let dfy = (1.0 - s.fx) * (fm[i10] - fm[i00]) + s.fx * (fm[i11] - fm[i01]);
                        gpt[i * 2] += gv * dfx * s.dx_scale;
                        gpt[i * 2 + 1] += gv * dfy * s.dy_scale;
                    }
                }
            }
            fmp.add_grad(&gfm);
            ptp.add_grad(&gpt);
        };
        Tensor::make(
            "bilinear_sample",
            vec![n, c],
            data,
            vec![self.clone(), points.clone()],
            back,
        )
    }
}

/// Normalized x coordinate of a pixel-column center.
pub fn pixel_center_x(col: usize, width: usize) -> f64 {
    -1.0 + (col as f64 + 0.5) * 2.0 / width as f64
}

/// Normalized y coordinate of a pixel-row center.
pub fn pixel_center_y(row: usize, height: usize) -> f64 {
    -1.0 + (row as f64 + 0.5) * 2.0 / height as f64
}
