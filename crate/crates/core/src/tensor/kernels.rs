//! Raw numeric kernels shared by forward and backward passes.

use super::numel;

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` laid over `out`; broadcast dimensions get stride 0.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - src.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    strides
}

/// `src` (leading ones stripped) is a suffix of `out`, so element `i` of the
/// output maps to `i % numel(src)`.
fn is_suffix(src: &[usize], out: &[usize]) -> bool {
    let trimmed: Vec<usize> = src.iter().copied().skip_while(|&d| d == 1).collect();
    trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..]
}

/// Walk every multi-index of `out`, yielding source offsets for each strided view.
fn walk<const K: usize>(out: &[usize], strides: [&[usize]; K], mut f: impl FnMut(usize, [usize; K])) {
    let n = numel(out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut offs = [0usize; K];
    for lin in 0..n {
        f(lin, offs);
        for d in (0..rank).rev() {
            idx[d] += 1;
            for k in 0..K {
                offs[k] += strides[k][d];
            }
            if idx[d] < out[d] {
                break;
            }
            for k in 0..K {
                offs[k] -= strides[k][d] * out[d];
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    a: &[f64],
    sa: &[usize],
    b: &[f64],
    sb: &[usize],
    out: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if sa == out && sb == out {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if sa == out && is_suffix(sb, out) {
        let m = b.len();
        return a.iter().enumerate().map(|(i, &x)| f(x, b[i % m])).collect();
    }
    if sb == out && is_suffix(sa, out) {
        let m = a.len();
        return b.iter().enumerate().map(|(i, &y)| f(a[i % m], y)).collect();
    }
    let st_a = broadcast_strides(sa, out);
    let st_b = broadcast_strides(sb, out);
    let mut res = vec![0.0; numel(out)];
    walk(out, [&st_a, &st_b], |lin, [oa, ob]| res[lin] = f(a[oa], b[ob]));
    res
}

/// Expand `src` of shape `ss` to shape `out`.
pub(crate) fn broadcast_to(src: &[f64], ss: &[usize], out: &[usize]) -> Vec<f64> {
    if ss == out {
        return src.to_vec();
    }
    if is_suffix(ss, out) {
        let m = src.len();
        return (0..numel(out)).map(|i| src[i % m]).collect();
    }
    let st = broadcast_strides(ss, out);
    let mut res = vec![0.0; numel(out)];
    walk(out, [&st], |lin, [o]| res[lin] = src[o]);
    res
}

/// Sum `src` of shape `ss` down to `target`, the adjoint of [`broadcast_to`].
pub(crate) fn sum_to(src: &[f64], ss: &[usize], target: &[usize]) -> Vec<f64> {
    if ss == target {
        return src.to_vec();
    }
    let mut res = vec![0.0; numel(target)];
    if is_suffix(target, ss) {
        let m = res.len();
        for (i, &v) in src.iter().enumerate() {
            res[i % m] += v;
        }
        return res;
    }
    let st = broadcast_strides(target, ss);
    walk(ss, [&st], |lin, [o]| res[o] += src[lin]);
    res
}

/// `out[m×n] = op(a) · op(b)` where `op` optionally transposes a row-major operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: slice lengths are checked above against the logical dimensions and
    // the strides describe row-major (or transposed row-major) layouts of them.
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
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax over the trailing axis of length `cols`.
pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xi, oi) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &v) in oi.iter_mut().zip(xi) {
            *o = (v - max).exp();
            z += *o;
        }
        for o in oi.iter_mut() {
            *o /= z;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xi, oi) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xi.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (o, &v) in oi.iter_mut().zip(xi) {
            *o = v - lse;
        }
    }
    out
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}
