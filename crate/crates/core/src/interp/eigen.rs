//! Symmetric eigendecomposition.
//!
//! Two independent solvers: Householder tridiagonalization followed by
//! implicit-shift QL (the default, O(n³) with a small constant), and cyclic
//! Jacobi rotations (slower, used as a cross-check). Both return eigenpairs
//! sorted by descending signed eigenvalue with each eigenvector oriented so its
//! largest-magnitude component is positive.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EigenSolver {
    #[default]
    TridiagonalQl,
    Jacobi,
}

/// Eigenvalues with unit eigenvectors stored row-wise (`vector(i)` pairs with `values[i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl EigenBasis {
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    /// `V Λ Vᵀ` as a dense row-major matrix.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for (k, &lam) in self.values.iter().enumerate() {
            let v = self.vector(k);
            for i in 0..n {
                let s = lam * v[i];
                let row = &mut out[i * n..(i + 1) * n];
                for (o, &vj) in row.iter_mut().zip(v) {
                    *o += s * vj;
                }
            }
        }
        out
    }

    /// Sort by descending signed eigenvalue and orient each vector.
    fn finish(mut values: Vec<f64>, cols: Vec<Vec<f64>>) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let mut vectors = Vec::with_capacity(n * n);
        for &i in &order {
            let mut v = cols[i].clone();
            orient(&mut v);
            vectors.extend(v);
        }
        values = order.iter().map(|&i| values[i]).collect();
        EigenBasis { n, values, vectors }
    }
}

/// Flip `v` so that its largest-|·| component (first on ties) is positive.
pub fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Largest `|A − Aᵀ|` entry.
pub fn asymmetry(a: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_input(a: &[f64], n: usize) -> Result<()> {
    if a.len() != n * n {
        return Err(Error::dims("symmetric_eigendecompose", &[n, n], &[a.len()]));
    }
    if let Some(i) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite matrix entry at {i}")));
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asym = asymmetry(a, n);
    if asym > 1e-6 * scale {
        return Err(Error::Contract(format!("matrix is not symmetric (max |A−Aᵀ| = {asym:e})")));
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric row-major `n×n` matrix.
pub fn symmetric_eigendecompose(a: &[f64], n: usize, solver: EigenSolver) -> Result<EigenBasis> {
    check_input(a, n)?;
    if n == 0 {
        return Ok(EigenBasis {
            n,
            values: vec![],
            vectors: vec![],
        });
    }
    // Work on the exactly symmetric part.
    let mut sym = a.to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            sym[i * n + j] = m;
            sym[j * n + i] = m;
        }
    }
    match solver {
        EigenSolver::TridiagonalQl => tridiagonal_ql(sym, n),
        EigenSolver::Jacobi => jacobi(sym, n),
    }
}

/// Householder reduction (tred2) then implicit QL (tql2), after the
/// EISPACK/JAMA formulation.
fn tridiagonal_ql(a: Vec<f64>, n: usize) -> Result<EigenBasis> {
    let mut v = a;
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    let idx = |r: usize, c: usize| r * n + c;

    // --- tred2 ---
    d.copy_from_slice(&v[idx(n - 1, 0)..idx(n - 1, 0) + n]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);

            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in j + 1..i {
                    let vkj = v[idx(k, j)];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;

    // Eigenvectors are the columns of v; keep them as rows so the QL
    // rotations below touch contiguous memory.
    let mut vt = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            vt[c * n + r] = v[r * n + c];
        }
    }
    drop(v);

    // --- tql2 ---
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    const MAX_ITER: usize = 60;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_ITER {
                    return Err(Error::Numerical(format!(
                        "QL iteration did not converge for eigenvalue {l} (residual {:e})",
                        e[l].abs()
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = vt.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    let cols = vt.chunks(n).map(<[f64]>::to_vec).collect();
    Ok(EigenBasis::finish(d, cols))
}

/// Cyclic Jacobi: sweep all (p, q) pairs until the off-diagonal Frobenius
/// norm falls below `1e-10·‖A‖_F`.
fn jacobi(mut a: Vec<f64>, n: usize) -> Result<EigenBasis> {
    const MAX_SWEEPS: usize = 100;
    let norm = frobenius(&a);
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    // rows of `vt` are eigenvectors
    let mut vt = vec![0.0f64; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }
    let mut converged = norm == 0.0;
    let mut residual = off(&a);
    for _ in 0..MAX_SWEEPS {
        if converged || residual <= 1e-10 * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J on rows/cols p, q
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vp = vt[p * n + k];
                    let vq = vt[q * n + k];
                    vt[p * n + k] = c * vp - s * vq;
                    vt[q * n + k] = s * vp + c * vq;
                }
            }
        }
        residual = off(&a);
    }
    if !converged && residual > 1e-10 * norm {
        return Err(Error::Numerical(format!(
            "Jacobi did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {residual:e})"
        )));
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    let cols = vt.chunks(n).map(<[f64]>::to_vec).collect();
    Ok(EigenBasis::finish(values, cols))
}
