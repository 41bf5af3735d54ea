//! Pure numeric kernels shared by the graph ops and their backward passes.
//!
//! Everything is plain slices in row-major order. Inner loops are written as
//! contiguous slice walks so they vectorize; on the single-core boxes this
//! code targets, these loops are the training-time budget.

use crate::tensor::Real;

/// Output index range [lo, hi) such that 0 <= o*stride + off < len_in.
#[inline]
pub fn conv_span(len_in: usize, len_out: usize, off: isize, stride: usize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize + stride - 1) / stride
    };
    let max_i = len_in as isize - 1 - off;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = (max_i as usize / stride + 1).min(len_out);
    (lo.min(hi), hi)
}

#[inline]
pub fn conv_out_len(len_in: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len_in + 2 * pad - k) / stride + 1
}

/// out[co,oy,ox] += sum_{ci,ky,kx} w[co,ci,ky,kx] * x[ci, oy*s+ky-p, ox*s+kx-p]
/// Caller pre-fills `out` (zeros or broadcast bias).
/// Dot product over eight independent partial accumulators; the split breaks
/// the serial FP dependency chain so the loop pipelines and vectorizes.
#[inline]
pub fn dot(a: &[Real], b: &[Real]) -> Real {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        s += xa * xb;
    }
    s
}

/// One output row of a 3x3 stride-1 pad-1 stencil: out[i] += sum of the
/// nine taps over rows (top, mid, bot); missing border rows are all-zero.
#[inline]
fn stencil3_row(out: &mut [Real], top: &[Real], mid: &[Real], bot: &[Real], w9: &[Real]) {
    let w = out.len();
    if w == 0 {
        return;
    }
    // Pin the lengths so the interior loop is provably in bounds.
    assert!(top.len() == w && mid.len() == w && bot.len() == w);
    let (w00, w01, w02) = (w9[0], w9[1], w9[2]);
    let (w10, w11, w12) = (w9[3], w9[4], w9[5]);
    let (w20, w21, w22) = (w9[6], w9[7], w9[8]);
    if w == 1 {
        out[0] += w01 * top[0] + w11 * mid[0] + w21 * bot[0];
        return;
    }
    // Left border: the kx = 0 taps fall outside.
    out[0] += w01 * top[0] + w02 * top[1] + w11 * mid[0] + w12 * mid[1] + w21 * bot[0]
        + w22 * bot[1];
    for i in 1..w - 1 {
        out[i] += w00 * top[i - 1]
            + w01 * top[i]
            + w02 * top[i + 1]
            + w10 * mid[i - 1]
            + w11 * mid[i]
            + w12 * mid[i + 1]
            + w20 * bot[i - 1]
            + w21 * bot[i]
            + w22 * bot[i + 1];
    }
    let i = w - 1;
    out[i] += w00 * top[i - 1] + w01 * top[i] + w10 * mid[i - 1] + w11 * mid[i]
        + w20 * bot[i - 1]
        + w21 * bot[i];
}

/// Even/odd column phases of every row of a CHW block, so stride-2 taps
/// become contiguous. Returns (even, odd, even_width, odd_width).
fn phase_split(x: &[Real], cin: usize, h: usize, w: usize) -> (Vec<Real>, Vec<Real>, usize, usize) {
    let we = w.div_ceil(2);
    let wo = w / 2;
    let mut ep = vec![0.0; cin * h * we];
    let mut op = vec![0.0; cin * h * wo.max(1)];
    for r in 0..cin * h {
        let xr = &x[r * w..(r + 1) * w];
        let er = &mut ep[r * we..(r + 1) * we];
        for j in 0..we {
            er[j] = xr[2 * j];
        }
        let or = &mut op[r * wo.max(1)..r * wo.max(1) + wo];
        for j in 0..wo {
            or[j] = xr[2 * j + 1];
        }
    }
    (ep, op, we, wo)
}

pub fn conv2d_fwd(
    x: &[Real],
    (cin, h, w): (usize, usize, usize),
    wgt: &[Real],
    (cout, k): (usize, usize),
    stride: usize,
    pad: usize,
    out: &mut [Real],
    (oh, ow): (usize, usize),
) {
    if stride == 1 && k == 3 && pad == 1 && oh == h && ow == w {
        // Dominant shape in the model: fused nine-tap stencil per row.
        let zero = vec![0.0; w];
        for co in 0..cout {
            let obase = co * oh * ow;
            for ci in 0..cin {
                let w9 = &wgt[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                let xbase = ci * h * w;
                for oy in 0..oh {
                    let top: &[Real] = if oy == 0 {
                        &zero
                    } else {
                        &x[xbase + (oy - 1) * w..xbase + oy * w]
                    };
                    let mid = &x[xbase + oy * w..xbase + (oy + 1) * w];
                    let bot: &[Real] = if oy + 1 == h {
                        &zero
                    } else {
                        &x[xbase + (oy + 1) * w..xbase + (oy + 2) * w]
                    };
                    stencil3_row(&mut out[obase + oy * ow..obase + (oy + 1) * ow], top, mid, bot, w9);
                }
            }
        }
        return;
    }
    if stride == 1 {
        // Keep each output row hot: apply all k*k taps of one (co, ci)
        // pair per row pass instead of streaming the image once per tap.
        for co in 0..cout {
            for ci in 0..cin {
                let wk = &wgt[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for oy in 0..oh {
                    let os = &mut out[co * oh * ow + oy * ow..co * oh * ow + oy * ow + ow];
                    for ky in 0..k {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xr = &x[ci * h * w + iy as usize * w..ci * h * w + iy as usize * w + w];
                        for kx in 0..k {
                            let wv = wk[ky * k + kx];
                            let dx = kx as isize - pad as isize;
                            let lo = (-dx).max(0) as usize;
                            let hi = (w as isize - dx).min(ow as isize).max(0) as usize;
                            if lo >= hi {
                                continue;
                            }
                            let xs = &xr[(lo as isize + dx) as usize..(hi as isize + dx) as usize];
                            let od = &mut os[lo..hi];
                            for i in 0..od.len() {
                                od[i] += wv * xs[i];
                            }
                        }
                    }
                }
            }
        }
        return;
    }
    if stride == 2 && k == 3 && pad == 1 && oh == h.div_ceil(2) && ow == w.div_ceil(2) {
        // Split each input row into even/odd phases once, turning the
        // strided taps into contiguous axpys shared across all co.
        let (ep, op, we, wo) = phase_split(x, cin, h, w);
        let m2 = ow.min(wo); // taps at ix = 2*ox + 1
        for co in 0..cout {
            for ci in 0..cin {
                let wk = &wgt[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                for oy in 0..oh {
                    let os = &mut out[co * oh * ow + oy * ow..co * oh * ow + (oy + 1) * ow];
                    for ky in 0..3 {
                        let iy = 2 * oy as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let er = &ep[(ci * h + iy as usize) * we..][..we];
                        let or = &op[(ci * h + iy as usize) * wo.max(1)..][..wo];
                        let (wl, wc, wr) = (wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                        // ix = 2*ox - 1 -> odd phase j = ox - 1.
                        for ox in 1..ow {
                            os[ox] += wl * or[ox - 1];
                        }
                        // ix = 2*ox -> even phase j = ox.
                        for ox in 0..ow {
                            os[ox] += wc * er[ox];
                        }
                        // ix = 2*ox + 1 -> odd phase j = ox.
                        for ox in 0..m2 {
                            os[ox] += wr * or[ox];
                        }
                    }
                }
            }
        }
        return;
    }
    for co in 0..cout {
        for ci in 0..cin {
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let (oy_lo, oy_hi) = conv_span(h, oh, dy, stride);
                for kx in 0..k {
                    let wv = wgt[wbase + ky * k + kx];
                    let dx = kx as isize - pad as isize;
                    let (ox_lo, ox_hi) = conv_span(w, ow, dx, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * stride) as isize + dy;
                        let irow = ci * h * w + iy as usize * w;
                        let orow = co * oh * ow + oy * ow;
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as isize + dx;
                            out[orow + ox] += wv * x[irow + ix as usize];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_bwd_x(
    dout: &[Real],
    (cin, h, w): (usize, usize, usize),
    wgt: &[Real],
    (cout, k): (usize, usize),
    stride: usize,
    pad: usize,
    dx_acc: &mut [Real],
    (oh, ow): (usize, usize),
) {
    if stride == 1 && k == 3 && pad == 1 && oh == h && ow == w {
        // Input gradient of the nine-tap stencil is the same stencil over
        // dout with the tap order fully reversed.
        let zero = vec![0.0; ow];
        for ci in 0..cin {
            let dbase = ci * h * w;
            for co in 0..cout {
                let wk = &wgt[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                let wflip = [
                    wk[8], wk[7], wk[6], wk[5], wk[4], wk[3], wk[2], wk[1], wk[0],
                ];
                let gbase = co * oh * ow;
                for iy in 0..h {
                    let top: &[Real] = if iy == 0 {
                        &zero
                    } else {
                        &dout[gbase + (iy - 1) * ow..gbase + iy * ow]
                    };
                    let mid = &dout[gbase + iy * ow..gbase + (iy + 1) * ow];
                    let bot: &[Real] = if iy + 1 == oh {
                        &zero
                    } else {
                        &dout[gbase + (iy + 1) * ow..gbase + (iy + 2) * ow]
                    };
                    stencil3_row(&mut dx_acc[dbase + iy * w..dbase + (iy + 1) * w], top, mid, bot, &wflip);
                }
            }
        }
        return;
    }
    if stride == 1 {
        // Mirror of the forward fast path: keep each dx row hot and pull
        // from the k contributing dout rows per (ci, co) pass.
        for ci in 0..cin {
            for co in 0..cout {
                let wk = &wgt[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for iy in 0..h {
                    let ds = &mut dx_acc[ci * h * w + iy * w..ci * h * w + iy * w + w];
                    for ky in 0..k {
                        let oy = iy as isize - (ky as isize - pad as isize);
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let gr = &dout
                            [co * oh * ow + oy as usize * ow..co * oh * ow + oy as usize * ow + ow];
                        for kx in 0..k {
                            let wv = wk[ky * k + kx];
                            let dxo = kx as isize - pad as isize;
                            // ix = ox + dxo for ox in the valid span.
                            let lo = (-dxo).max(0) as usize;
                            let hi = (w as isize - dxo).min(ow as isize).max(0) as usize;
                            if lo >= hi {
                                continue;
                            }
                            let gs = &gr[lo..hi];
                            let dd = &mut ds[(lo as isize + dxo) as usize..(hi as isize + dxo) as usize];
                            for i in 0..dd.len() {
                                dd[i] += wv * gs[i];
                            }
                        }
                    }
                }
            }
        }
        return;
    }
    if stride == 2 && k == 3 && pad == 1 && oh == h.div_ceil(2) && ow == w.div_ceil(2) {
        // Accumulate into per-phase planes with contiguous axpys, then
        // interleave back into dx rows.
        let we = w.div_ceil(2);
        let wo = w / 2;
        let m2 = ow.min(wo);
        let mut dep = vec![0.0; h * we];
        let mut dop = vec![0.0; h * wo.max(1)];
        for ci in 0..cin {
            dep.iter_mut().for_each(|v| *v = 0.0);
            dop.iter_mut().for_each(|v| *v = 0.0);
            for co in 0..cout {
                let wk = &wgt[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                for oy in 0..oh {
                    let gr = &dout[co * oh * ow + oy * ow..co * oh * ow + (oy + 1) * ow];
                    for ky in 0..3 {
                        let iy = 2 * oy as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let de = &mut dep[iy as usize * we..(iy as usize + 1) * we];
                        let (wl, wc, wr) = (wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                        for ox in 0..ow {
                            de[ox] += wc * gr[ox];
                        }
                        let dor = &mut dop[iy as usize * wo.max(1)..][..wo];
                        for ox in 1..ow {
                            dor[ox - 1] += wl * gr[ox];
                        }
                        for ox in 0..m2 {
                            dor[ox] += wr * gr[ox];
                        }
                    }
                }
            }
            for iy in 0..h {
                let dr = &mut dx_acc[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                let de = &dep[iy * we..(iy + 1) * we];
                let dor = &dop[iy * wo.max(1)..][..wo];
                for j in 0..we {
                    dr[2 * j] += de[j];
                }
                for j in 0..wo {
                    dr[2 * j + 1] += dor[j];
                }
            }
        }
        return;
    }
    for co in 0..cout {
        for ci in 0..cin {
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let (oy_lo, oy_hi) = conv_span(h, oh, dy, stride);
                for kx in 0..k {
                    let wv = wgt[wbase + ky * k + kx];
                    let dxo = kx as isize - pad as isize;
                    let (ox_lo, ox_hi) = conv_span(w, ow, dxo, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * stride) as isize + dy;
                        let irow = ci * h * w + iy as usize * w;
                        let orow = co * oh * ow + oy * ow;
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as isize + dxo;
                            dx_acc[irow + ix as usize] += wv * dout[orow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_bwd_w(
    dout: &[Real],
    x: &[Real],
    (cin, h, w): (usize, usize, usize),
    (cout, k): (usize, usize),
    stride: usize,
    pad: usize,
    dw_acc: &mut [Real],
    (oh, ow): (usize, usize),
) {
    if stride == 1 && k == 3 && pad == 1 && oh == h && ow == w && w >= 2 {
        // Nine independent reductions per row pair; one fused interior pass.
        let zero = vec![0.0; w];
        for co in 0..cout {
            let gbase = co * oh * ow;
            for ci in 0..cin {
                let wbase = (co * cin + ci) * 9;
                let xbase = ci * h * w;
                let mut acc = [0.0; 9];
                for oy in 0..oh {
                    let gr = &dout[gbase + oy * ow..gbase + (oy + 1) * ow];
                    let top: &[Real] = if oy == 0 {
                        &zero
                    } else {
                        &x[xbase + (oy - 1) * w..xbase + oy * w]
                    };
                    let mid = &x[xbase + oy * w..xbase + (oy + 1) * w];
                    let bot: &[Real] = if oy + 1 == h {
                        &zero
                    } else {
                        &x[xbase + (oy + 1) * w..xbase + (oy + 2) * w]
                    };
                    assert!(top.len() == w && mid.len() == w && bot.len() == w && gr.len() == w);
                    for i in 1..w - 1 {
                        let gv = gr[i];
                        acc[0] += gv * top[i - 1];
                        acc[1] += gv * top[i];
                        acc[2] += gv * top[i + 1];
                        acc[3] += gv * mid[i - 1];
                        acc[4] += gv * mid[i];
                        acc[5] += gv * mid[i + 1];
                        acc[6] += gv * bot[i - 1];
                        acc[7] += gv * bot[i];
                        acc[8] += gv * bot[i + 1];
                    }
                    let (g0, gl) = (gr[0], gr[w - 1]);
                    acc[1] += g0 * top[0];
                    acc[2] += g0 * top[1];
                    acc[4] += g0 * mid[0];
                    acc[5] += g0 * mid[1];
                    acc[7] += g0 * bot[0];
                    acc[8] += g0 * bot[1];
                    acc[0] += gl * top[w - 2];
                    acc[1] += gl * top[w - 1];
                    acc[3] += gl * mid[w - 2];
                    acc[4] += gl * mid[w - 1];
                    acc[6] += gl * bot[w - 2];
                    acc[7] += gl * bot[w - 1];
                }
                for (t, a) in acc.into_iter().enumerate() {
                    dw_acc[wbase + t] += a;
                }
            }
        }
        return;
    }
    if stride == 1 {
        // One pass over the dout rows per (co, ci) accumulating all k*k
        // tap sums, instead of one image pass per tap.
        for co in 0..cout {
            for ci in 0..cin {
                let wbase = (co * cin + ci) * k * k;
                let mut acc = vec![0.0; k * k];
                for oy in 0..oh {
                    let gr = &dout[co * oh * ow + oy * ow..co * oh * ow + oy * ow + ow];
                    for ky in 0..k {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xr = &x[ci * h * w + iy as usize * w..ci * h * w + iy as usize * w + w];
                        for kx in 0..k {
                            let dxo = kx as isize - pad as isize;
                            let lo = (-dxo).max(0) as usize;
                            let hi = (w as isize - dxo).min(ow as isize).max(0) as usize;
                            if lo >= hi {
                                continue;
                            }
                            let gs = &gr[lo..hi];
                            let xs = &xr[(lo as isize + dxo) as usize..(hi as isize + dxo) as usize];
                            acc[ky * k + kx] += dot(gs, xs);
                        }
                    }
                }
                for (t, a) in acc.into_iter().enumerate() {
                    dw_acc[wbase + t] += a;
                }
            }
        }
        return;
    }
    if stride == 2 && k == 3 && pad == 1 && oh == h.div_ceil(2) && ow == w.div_ceil(2) {
        // Column-phase split turns each tap sum into a contiguous dot.
        let (ep, op, we, wo) = phase_split(x, cin, h, w);
        let m2 = ow.min(wo);
        for ci in 0..cin {
            for co in 0..cout {
                let mut acc = [0.0; 9];
                for oy in 0..oh {
                    let gr = &dout[co * oh * ow + oy * ow..co * oh * ow + (oy + 1) * ow];
                    for ky in 0..3 {
                        let iy = 2 * oy as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let r = ci * h + iy as usize;
                        let er = &ep[r * we..r * we + ow];
                        let or = &op[r * wo.max(1)..r * wo.max(1) + wo];
                        if ow > 1 {
                            acc[ky * 3] += dot(&gr[1..], &or[..ow - 1]);
                        }
                        acc[ky * 3 + 1] += dot(gr, er);
                        acc[ky * 3 + 2] += dot(&gr[..m2], &or[..m2]);
                    }
                }
                let wbase = (co * cin + ci) * 9;
                for (t, a) in acc.into_iter().enumerate() {
                    dw_acc[wbase + t] += a;
                }
            }
        }
        return;
    }
    for co in 0..cout {
        for ci in 0..cin {
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let (oy_lo, oy_hi) = conv_span(h, oh, dy, stride);
                for kx in 0..k {
                    let dxo = kx as isize - pad as isize;
                    let (ox_lo, ox_hi) = conv_span(w, ow, dxo, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * stride) as isize + dy;
                        let irow = ci * h * w + iy as usize * w;
                        let orow = co * oh * ow + oy * ow;
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as isize + dxo;
                            acc += dout[orow + ox] * x[irow + ix as usize];
                        }
                    }
                    dw_acc[wbase + ky * k + kx] += acc;
                }
            }
        }
    }
}

/// Depthwise: one k x k kernel per channel, stride 1.
pub fn depthwise_fwd(
    x: &[Real],
    (c, h, w): (usize, usize, usize),
    wgt: &[Real],
    k: usize,
    pad: usize,
    out: &mut [Real],
    (oh, ow): (usize, usize),
) {
    for ci in 0..c {
        let xs = &x[ci * h * w..(ci + 1) * h * w];
        let os = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        let ws = &wgt[ci * k * k..(ci + 1) * k * k];
        conv2d_fwd(xs, (1, h, w), ws, (1, k), 1, pad, os, (oh, ow));
    }
}

pub fn depthwise_bwd(
    dout: &[Real],
    x: &[Real],
    (c, h, w): (usize, usize, usize),
    wgt: &[Real],
    k: usize,
    pad: usize,
    dx_acc: Option<&mut [Real]>,
    dw_acc: Option<&mut [Real]>,
    (oh, ow): (usize, usize),
) {
    if let Some(dx) = dx_acc {
        for ci in 0..c {
            conv2d_bwd_x(
                &dout[ci * oh * ow..(ci + 1) * oh * ow],
                (1, h, w),
                &wgt[ci * k * k..(ci + 1) * k * k],
                (1, k),
                1,
                pad,
                &mut dx[ci * h * w..(ci + 1) * h * w],
                (oh, ow),
            );
        }
    }
    if let Some(dw) = dw_acc {
        for ci in 0..c {
            conv2d_bwd_w(
                &dout[ci * oh * ow..(ci + 1) * oh * ow],
                &x[ci * h * w..(ci + 1) * h * w],
                (1, h, w),
                (1, k),
                1,
                pad,
                &mut dw[ci * k * k..(ci + 1) * k * k],
                (oh, ow),
            );
        }
    }
}

/// out(m x n) += a(m x k) * b(k x n)
pub fn matmul_fwd(a: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// da += dout * b^T, db += a^T * dout
pub fn matmul_bwd(
    dout: &[Real],
    a: &[Real],
    b: &[Real],
    da_acc: Option<&mut [Real]>,
    db_acc: Option<&mut [Real]>,
    m: usize,
    k: usize,
    n: usize,
) {
    if let Some(da) = da_acc {
        // Four dots per pass share each dout row load; this amortizes loop
        // overhead when n is small (attention-sized matrices). Long rows
        // use the wide single-dot path instead.
        let k4 = if n < 256 { k / 4 * 4 } else { 0 };
        for i in 0..m {
            let grow = &dout[i * n..(i + 1) * n];
            let darow = &mut da[i * k..(i + 1) * k];
            for kk in (0..k4).step_by(4) {
                let b0 = &b[kk * n..(kk + 1) * n];
                let b1 = &b[(kk + 1) * n..(kk + 2) * n];
                let b2 = &b[(kk + 2) * n..(kk + 3) * n];
                let b3 = &b[(kk + 3) * n..(kk + 4) * n];
                let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                for j in 0..n {
                    let g = grow[j];
                    s0 += g * b0[j];
                    s1 += g * b1[j];
                    s2 += g * b2[j];
                    s3 += g * b3[j];
                }
                darow[kk] += s0;
                darow[kk + 1] += s1;
                darow[kk + 2] += s2;
                darow[kk + 3] += s3;
            }
            for kk in k4..k {
                darow[kk] += dot(grow, &b[kk * n..(kk + 1) * n]);
            }
        }
    }
    if let Some(db) = db_acc {
        for i in 0..m {
            let grow = &dout[i * n..(i + 1) * n];
            let arow = &a[i * k..(i + 1) * k];
            for (kk, &av) in arow.iter().enumerate() {
                let dbrow = &mut db[kk * n..(kk + 1) * n];
                for j in 0..n {
                    dbrow[j] += av * grow[j];
                }
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows_fwd(x: &[Real], out: &mut [Real], rows: usize, cols: usize) {
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        let m = xr.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut s = 0.0;
        for j in 0..cols {
            let e = (xr[j] - m).exp();
            or[j] = e;
            s += e;
        }
        let inv = 1.0 / s;
        for v in or.iter_mut() {
            *v *= inv;
        }
    }
}

/// dx += y ⊙ (dy − <dy, y>) per row, where y is the softmax output.
pub fn softmax_rows_bwd(dout: &[Real], y: &[Real], dx_acc: &mut [Real], rows: usize, cols: usize) {
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &dout[r * cols..(r + 1) * cols];
        let dr = &mut dx_acc[r * cols..(r + 1) * cols];
        let d = dot(gr, yr);
        for j in 0..cols {
            dr[j] += yr[j] * (gr[j] - d);
        }
    }
}

/// Per-axis bilinear sampling table: (i0, i1, frac) per output index,
/// half-pixel centers, clamped to the border. Same-size maps are exact
/// identity (frac = 0, i0 = i1 = index).
pub fn bilinear_axis(len_in: usize, len_out: usize) -> Vec<(usize, usize, Real)> {
    let scale = len_in as Real / len_out as Real;
    (0..len_out)
        .map(|o| {
            let s = ((o as Real + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            let f = s - i0 as Real;
            (i0, i1, f)
        })
        .collect()
}

pub fn bilinear_fwd(
    x: &[Real],
    (c, h, w): (usize, usize, usize),
    out: &mut [Real],
    (oh, ow): (usize, usize),
) {
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    for ci in 0..c {
        let xin = &x[ci * h * w..(ci + 1) * h * w];
        let xout = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = &xin[y0 * w..y0 * w + w];
            let r1 = &xin[y1 * w..y1 * w + w];
            let orow = &mut xout[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                orow[ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
}

pub fn bilinear_bwd(
    dout: &[Real],
    (c, h, w): (usize, usize, usize),
    dx_acc: &mut [Real],
    (oh, ow): (usize, usize),
) {
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    for ci in 0..c {
        let dxc = &mut dx_acc[ci * h * w..(ci + 1) * h * w];
        let gc = &dout[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let g = gc[oy * ow + ox];
                dxc[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dxc[y0 * w + x1] += g * (1.0 - fy) * fx;
                dxc[y1 * w + x0] += g * fy * (1.0 - fx);
                dxc[y1 * w + x1] += g * fy * fx;
            }
        }
    }
}
