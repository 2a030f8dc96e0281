//! Shared dense kernels.
//!
//! Both the tape ops and the tape-free model forward call into these, so
//! the two paths produce bitwise-identical values.

/// y = W x, with W row-major (rows x cols), x of length cols.
pub(crate) fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

pub(crate) fn add(a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..a.len() {
        out[i] = a[i] + b[i];
    }
}

pub(crate) fn tanh(a: &[f64], out: &mut [f64]) {
    for i in 0..a.len() {
        out[i] = a[i].tanh();
    }
}

pub(crate) fn sq_l2(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in a {
        acc += v * v;
    }
    acc
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    sq_l2(a).sqrt()
}

pub(crate) fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}
