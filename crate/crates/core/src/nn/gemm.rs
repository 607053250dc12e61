//! Strided matrix multiply on slices, backed by `matrixmultiply`.

/// A strided matrix view: element `(i, j)` lives at `off + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            off: 0,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn rows_t(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            off: 0,
            rs: 1,
            cs: cols,
        }
    }
}

impl<'a> ViewMut<'a> {
    pub fn rows(data: &'a mut [f64], cols: usize) -> Self {
        Self {
            data,
            off: 0,
            rs: cols,
            cs: 1,
        }
    }
}

fn span(off: usize, r: usize, c: usize, rs: usize, cs: usize) -> usize {
    if r == 0 || c == 0 {
        off
    } else {
        off + (r - 1) * rs + (c - 1) * cs + 1
    }
}

/// `c ← alpha·a·b + beta·c` with `a` m×k, `b` k×n, `c` m×n.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: ViewMut<'_>,
) {
    assert!(
        span(a.off, m, k, a.rs, a.cs) <= a.data.len(),
        "gemm: a out of bounds"
    );
    assert!(
        span(b.off, k, n, b.rs, b.cs) <= b.data.len(),
        "gemm: b out of bounds"
    );
    assert!(
        span(c.off, m, n, c.rs, c.cs) <= c.data.len(),
        "gemm: c out of bounds"
    );
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every addressed element inside its slice,
    // and `c` is a unique borrow that cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
