//! Thin safe wrappers over `matrixmultiply::dgemm` plus im2col helpers.

/// Strided view of a row-major buffer as a matrix.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = a * b + beta * c` where `c` is row-major with row stride `rsc` and column stride `csc`.
pub(crate) fn gemm(a: Mat, b: Mat, beta: f64, c: &mut [f64], rsc: usize, csc: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm output out of bounds");
    // SAFETY: every index touched by dgemm is within the bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unrolls 3x3 neighbourhoods (zero padding 1) of one `[c, h, w]` image into
/// rows of length `c * 9`, one row per output pixel.
pub(crate) fn im2col3(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let width = c * 9;
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * width..(y * w + xx + 1) * width];
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        let sx = xx as isize + kx as isize - 1;
                        row[ci * 9 + ky * 3 + kx] =
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                x[ci * h * w + sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatters column gradients back onto the image.
pub(crate) fn col2im3(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let width = c * 9;
    for y in 0..h {
        for xx in 0..w {
            let row = &cols[(y * w + xx) * width..(y * w + xx + 1) * width];
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        let sx = xx as isize + kx as isize - 1;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            dx[ci * h * w + sy as usize * w + sx as usize] += row[ci * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}
