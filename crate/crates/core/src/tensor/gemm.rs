use rayon::prelude::*;

use super::Element;

/// Whether a gemm operand is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GemmOp {
    N,
    T,
}

/// `c[m×n] = op(a)[m×k] · op(b)[k×n]`, or `c += …` when `accumulate`.
///
/// With `GemmOp::N` the operand is stored row-major in its logical shape; with
/// `GemmOp::T` it is stored as the transpose (`a` as k×m, `b` as n×k).
/// Products are accumulated in `f64` and rounded once into `c`.
///
/// When `parallel` is set the rows of `c` are split across rayon workers. The
/// reduction over `k` for any single output element runs in the same order in
/// both modes.
///
/// Panics if a slice length disagrees with the stated dimensions.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    op_a: GemmOp,
    b: &[T],
    op_b: GemmOp,
    c: &mut [T],
    accumulate: bool,
    parallel: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }

    let mut out: Vec<f64> = if accumulate {
        c.iter().map(|v| v.to_f64()).collect()
    } else {
        vec![0.0; m * n]
    };

    if k > 0 {
        let a64 = T::widen(a);
        let b64 = T::widen(b);
        let (rsa, csa) = match op_a {
            GemmOp::N => (k, 1),
            GemmOp::T => (1, m),
        };
        let (rsb, csb) = match op_b {
            GemmOp::N => (n, 1),
            GemmOp::T => (1, k),
        };
        let beta = if accumulate { 1.0 } else { 0.0 };

        let run = |row0: usize, chunk: &mut [f64]| {
            let rows = chunk.len() / n;
            let a_rows = &a64[row0 * rsa..];
            // SAFETY: strides describe in-bounds views of `a64`, `b64` and
            // `chunk`, whose lengths were checked above.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    a_rows.as_ptr(),
                    rsa as isize,
                    csa as isize,
                    b64.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    beta,
                    chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        };

        let workers = rayon::current_num_threads();
        if parallel && workers > 1 && m >= 2 * workers {
            let rows_per = m.div_ceil(workers);
            out.par_chunks_mut(rows_per * n)
                .enumerate()
                .for_each(|(i, chunk)| run(i * rows_per, chunk));
        } else {
            run(0, &mut out);
        }
    }

    for (dst, src) in c.iter_mut().zip(&out) {
        *dst = T::from_f64(*src);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn all_transpose_combinations_match_naive() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (op_a, aa) in [(GemmOp::N, &a), (GemmOp::T, &at)] {
            for (op_b, bb) in [(GemmOp::N, &b), (GemmOp::T, &bt)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, op_a, bb, op_b, &mut c, false, false);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12, "{op_a:?}{op_b:?}");
                }
            }
        }
    }

    #[test]
    fn accumulate_adds_into_output() {
        let mut c = vec![1.0f32];
        gemm(1, 1, 1, &[2.0], GemmOp::N, &[3.0], GemmOp::N, &mut c, true, false);
        assert_eq!(c, vec![7.0]);
    }

    #[test]
    fn empty_inner_dimension_gives_zero() {
        let mut c = vec![5.0f32; 4];
        gemm(2, 0, 2, &[], GemmOp::N, &[], GemmOp::N, &mut c, false, false);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn parallel_rows_agree_with_serial() {
        let (m, k, n) = (64, 33, 17);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 97) as f32 / 97.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104729) % 89) as f32 / 89.0 - 0.5).collect();
        let mut s = vec![0.0f32; m * n];
        let mut p = vec![0.0f32; m * n];
        gemm(m, k, n, &a, GemmOp::N, &b, GemmOp::N, &mut s, false, false);
        gemm(m, k, n, &a, GemmOp::N, &b, GemmOp::N, &mut p, false, true);
        for (x, y) in s.iter().zip(&p) {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
        }
    }
}
