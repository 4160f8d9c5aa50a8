//! Raw numeric kernels over row-major slices. Shapes are validated by the
//! callers in `graph.rs`.

/// `c = op(a) * op(b)` (or `c += ...` when `accumulate`), where `a` is
/// stored row-major as `[m, k]` (or `[k, m]` when `a_t`) and `b` as `[k, n]`
/// (or `[n, k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the slices, whose lengths are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one sliding-window pass: a `[channels, height, width]`
/// image scanned by a `kernel × kernel` window with `stride` and zero
/// `pad`, producing `out_h × out_w` positions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(col_row, col_index, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let cols = self.cols();
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let img_row = (c * self.height + iy as usize) * self.width;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(row * cols, oy * self.out_w + ox, img_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds an image into a `[rows, cols]` patch matrix.
    pub fn im2col(&self, image: &[f64], cols_out: &mut [f64]) {
        cols_out.fill(0.0);
        self.for_each_tap(|row_off, col, idx| cols_out[row_off + col] = image[idx]);
    }

    /// Folds a patch matrix back, summing overlapping taps into `image`.
    pub fn col2im_add(&self, cols_in: &[f64], image: &mut [f64]) {
        self.for_each_tap(|row_off, col, idx| image[idx] += cols_in[row_off + col]);
    }
}

pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

pub(crate) fn deconv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (input - 1) * stride + kernel;
    if full <= 2 * pad {
        None
    } else {
        Some(full - 2 * pad)
    }
}

/// Shapes for a convolution: input `[n, c, h, w]`, weight `[f, c, kh, kw]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub f: usize,
    pub win: Window,
}

pub(crate) fn conv2d_forward(dims: ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let win = dims.win;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = win.channels * win.height * win.width;
    let out_len = dims.f * cols;
    let mut out = vec![0.0; dims.n * out_len];
    let mut patches = vec![0.0; rows * cols];
    for s in 0..dims.n {
        win.im2col(&x[s * in_len..(s + 1) * in_len], &mut patches);
        let o = &mut out[s * out_len..(s + 1) * out_len];
        gemm(dims.f, rows, cols, w, false, &patches, false, o, false);
        for (f, chunk) in o.chunks_mut(cols).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[f]);
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub(crate) fn conv2d_backward(
    dims: ConvDims,
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let win = dims.win;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = win.channels * win.height * win.width;
    let out_len = dims.f * cols;
    let mut dw = vec![0.0; dims.f * rows];
    let mut db = vec![0.0; dims.f];
    let mut dx = need_dx.then(|| vec![0.0; dims.n * in_len]);
    let mut patches = vec![0.0; rows * cols];
    let mut dpatches = vec![0.0; rows * cols];
    for s in 0..dims.n {
        let g = &grad[s * out_len..(s + 1) * out_len];
        for (f, chunk) in g.chunks(cols).enumerate() {
            db[f] += chunk.iter().sum::<f64>();
        }
        win.im2col(&x[s * in_len..(s + 1) * in_len], &mut patches);
        gemm(dims.f, cols, rows, g, false, &patches, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            gemm(rows, dims.f, cols, w, true, g, false, &mut dpatches, false);
            win.col2im_add(&dpatches, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    (dx, dw, db)
}

/// Shapes for a transposed convolution: input `[n, c_in, h, w]`, weight
/// `[c_in, c_out, kh, kw]`. `win` describes the *output* image scanned by
/// the kernel, so that `win.out_h/out_w` equal the input spatial size.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DeconvDims {
    pub n: usize,
    pub c_in: usize,
    pub win: Window,
}

pub(crate) fn deconv2d_forward(dims: DeconvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let win = dims.win;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = dims.c_in * cols;
    let plane = win.height * win.width;
    let out_len = win.channels * plane;
    let mut out = vec![0.0; dims.n * out_len];
    let mut patches = vec![0.0; rows * cols];
    for s in 0..dims.n {
        gemm(rows, dims.c_in, cols, w, true, &x[s * in_len..(s + 1) * in_len], false, &mut patches, false);
        let o = &mut out[s * out_len..(s + 1) * out_len];
        win.col2im_add(&patches, o);
        for (c, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[c]);
        }
    }
    out
}

pub(crate) fn deconv2d_backward(
    dims: DeconvDims,
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let win = dims.win;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = dims.c_in * cols;
    let plane = win.height * win.width;
    let out_len = win.channels * plane;
    let mut dw = vec![0.0; dims.c_in * rows];
    let mut db = vec![0.0; win.channels];
    let mut dx = need_dx.then(|| vec![0.0; dims.n * in_len]);
    let mut patches = vec![0.0; rows * cols];
    for s in 0..dims.n {
        let g = &grad[s * out_len..(s + 1) * out_len];
        for (c, chunk) in g.chunks(plane).enumerate() {
            db[c] += chunk.iter().sum::<f64>();
        }
        win.im2col(g, &mut patches);
        let xs = &x[s * in_len..(s + 1) * in_len];
        gemm(dims.c_in, cols, rows, xs, false, &patches, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            gemm(dims.c_in, rows, cols, w, false, &patches, false, &mut dx[s * in_len..(s + 1) * in_len], false);
        }
    }
    (dx, dw, db)
}
