//! Direct convolution and dense kernels for a single example.
//!
//! All `*_backward_*` functions accumulate into their output buffers.

use super::layer::LayerGeom;

/// Output columns `ox` whose input column `ox·s + k − p` lies inside `[0, len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// `out = conv(w, input) + b`; channels with `keep[o] == false` are left at zero.
pub(crate) fn conv_forward(w: &[f32], b: &[f32], g: &LayerGeom, input: &[f32], out: &mut [f32], keep: Option<&[bool]>) {
    let plane = g.out_plane();
    let ksz = g.kh * g.kw;
    for o in 0..g.out_c {
        let ob = &mut out[o * plane..(o + 1) * plane];
        if keep.is_some_and(|k| !k[o]) {
            ob.fill(0.0);
            continue;
        }
        ob.fill(b[o]);
        for i in 0..g.in_c {
            let ib = &input[i * g.in_h * g.in_w..(i + 1) * g.in_h * g.in_w];
            let wk = &w[(o * g.in_c + i) * ksz..(o * g.in_c + i + 1) * ksz];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let irow = &ib[iy * g.in_w..(iy + 1) * g.in_w];
                        let orow = &mut ob[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in xlo..xhi {
                            orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_backward_input(w: &[f32], g: &LayerGeom, dout: &[f32], din: &mut [f32]) {
    let plane = g.out_plane();
    let ksz = g.kh * g.kw;
    for o in 0..g.out_c {
        let db = &dout[o * plane..(o + 1) * plane];
        if db.iter().all(|&d| d == 0.0) {
            continue;
        }
        for i in 0..g.in_c {
            let ib = &mut din[i * g.in_h * g.in_w..(i + 1) * g.in_h * g.in_w];
            let wk = &w[(o * g.in_c + i) * ksz..(o * g.in_c + i + 1) * ksz];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let drow = &db[oy * g.out_w..(oy + 1) * g.out_w];
                        let irow = &mut ib[iy * g.in_w..(iy + 1) * g.in_w];
                        for ox in xlo..xhi {
                            irow[ox * g.stride + kx - g.pad] += wv * drow[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_backward_params(g: &LayerGeom, input: &[f32], dout: &[f32], dw: &mut [f32], dbias: &mut [f32]) {
    let plane = g.out_plane();
    let ksz = g.kh * g.kw;
    for o in 0..g.out_c {
        let db = &dout[o * plane..(o + 1) * plane];
        if db.iter().all(|&d| d == 0.0) {
            continue;
        }
        dbias[o] += db.iter().sum::<f32>();
        for i in 0..g.in_c {
            let ib = &input[i * g.in_h * g.in_w..(i + 1) * g.in_h * g.in_w];
            let wk = &mut dw[(o * g.in_c + i) * ksz..(o * g.in_c + i + 1) * ksz];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kw {
                    let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    let mut acc = 0.0f32;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let drow = &db[oy * g.out_w..(oy + 1) * g.out_w];
                        let irow = &ib[iy * g.in_w..(iy + 1) * g.in_w];
                        for ox in xlo..xhi {
                            acc += drow[ox] * irow[ox * g.stride + kx - g.pad];
                        }
                    }
                    wk[ky * g.kw + kx] += acc;
                }
            }
        }
    }
}

pub(crate) fn dense_forward(w: &[f32], b: &[f32], n_in: usize, input: &[f32], out: &mut [f32]) {
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f32>();
    }
}

pub(crate) fn dense_backward_input(w: &[f32], n_in: usize, dout: &[f32], din: &mut [f32]) {
    for (o, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        for (x, a) in din.iter_mut().zip(row) {
            *x += a * d;
        }
    }
}

pub(crate) fn dense_backward_params(n_in: usize, input: &[f32], dout: &[f32], dw: &mut [f32], dbias: &mut [f32]) {
    for (o, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        dbias[o] += d;
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (g, x) in row.iter_mut().zip(input) {
            *g += d * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(in_c: usize, in_h: usize, in_w: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> LayerGeom {
        LayerGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h: (in_h + 2 * pad - k) / stride + 1,
            out_w: (in_w + 2 * pad - k) / stride + 1,
            kh: k,
            kw: k,
            stride,
            pad,
        }
    }

    // Naive reference with explicit bounds checks.
    fn naive(w: &[f32], b: &[f32], g: &LayerGeom, input: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; g.out_len()];
        for o in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b[o];
                    for i in 0..g.in_c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                acc += w[((o * g.in_c + i) * g.kh + ky) * g.kw + kx]
                                    * input[(i * g.in_h + iy as usize) * g.in_w + ix as usize];
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                (s >> 8) as f32 / (1u32 << 24) as f32 - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_across_geometries() {
        for &(ic, h, w, oc, k, s, p) in &[
            (1, 5, 5, 2, 3, 1, 0),
            (2, 6, 7, 3, 3, 2, 1),
            (3, 4, 4, 2, 1, 1, 0),
            (1, 7, 5, 2, 5, 2, 2),
            (2, 3, 3, 1, 3, 3, 1),
        ] {
            let g = geom(ic, h, w, oc, k, s, p);
            let wt = pseudo(oc * ic * k * k, 1);
            let b = pseudo(oc, 2);
            let x = pseudo(ic * h * w, 3);
            let mut out = vec![0.0; g.out_len()];
            conv_forward(&wt, &b, &g, &x, &mut out, None);
            let r = naive(&wt, &b, &g, &x);
            for (a, e) in out.iter().zip(&r) {
                assert!((a - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), d> == <x, conv^T(d)> and <dW, w'> consistent with linearity in w.
        let g = geom(2, 6, 5, 3, 3, 2, 1);
        let w = pseudo(3 * 2 * 9, 4);
        let zero_b = vec![0.0; 3];
        let x = pseudo(g.in_len(), 5);
        let d = pseudo(g.out_len(), 6);
        let mut y = vec![0.0; g.out_len()];
        conv_forward(&w, &zero_b, &g, &x, &mut y, None);
        let mut dx = vec![0.0; g.in_len()];
        conv_backward_input(&w, &g, &d, &mut dx);
        let lhs: f32 = y.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        conv_backward_params(&g, &x, &d, &mut dw, &mut db);
        let rhs_w: f32 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-4);
        assert!((db.iter().sum::<f32>() - d.iter().sum::<f32>()).abs() < 1e-5);
    }

    #[test]
    fn masked_channels_stay_zero() {
        let g = geom(1, 4, 4, 2, 3, 1, 1);
        let w = pseudo(18, 7);
        let b = vec![0.3, 0.3];
        let x = pseudo(16, 8);
        let mut out = vec![1.0; g.out_len()];
        conv_forward(&w, &b, &g, &x, &mut out, Some(&[true, false]));
        assert!(out[16..].iter().all(|&v| v == 0.0));
        assert!(out[..16].iter().any(|&v| v != 0.0));
    }
}
