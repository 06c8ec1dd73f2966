use std::io::Write;

use super::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::fmt::format_exact;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(basis: &EigenBasis, x: &[f64], op: &'static str) -> Result<()> {
    if x.len() != basis.n {
        return Err(Error::dims(op, &[basis.n], &[x.len()]));
    }
    Ok(())
}

/// `Σ_i λ_i (v_i·x)²`.
pub fn quadratic_form_logit(basis: &EigenBasis, x: &[f64]) -> Result<f64> {
    check_dim(basis, x, "quadratic_form_logit")?;
    Ok((0..basis.n)
        .map(|i| {
            let p = dot(basis.vector(i), x);
            basis.values[i] * p * p
        })
        .sum())
}

/// Eigenvalue magnitudes in importance order with the cumulative mass curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub class_id: usize,
    /// Signed eigenvalues reordered by descending `|λ|`.
    pub eigenvalues: Vec<f64>,
    pub abs_values: Vec<f64>,
    pub cum_mass: Vec<f64>,
}

impl SpectrumReport {
    pub fn largest(&self) -> f64 {
        self.abs_values.first().copied().unwrap_or(0.0)
    }

    pub fn median(&self) -> f64 {
        let n = self.abs_values.len();
        if n == 0 {
            return 0.0;
        }
        // abs_values is descending
        if n % 2 == 1 {
            self.abs_values[n / 2]
        } else {
            0.5 * (self.abs_values[n / 2 - 1] + self.abs_values[n / 2])
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rank,eigenvalue,abs_value,cum_mass")?;
        for i in 0..self.abs_values.len() {
            writeln!(
                out,
                "{},{},{},{}",
                i + 1,
                format_exact(self.eigenvalues[i]),
                format_exact(self.abs_values[i]),
                format_exact(self.cum_mass[i])
            )?;
        }
        Ok(())
    }
}

pub fn eigen_spectrum(class_id: usize, basis: &EigenBasis) -> SpectrumReport {
    let mut order: Vec<usize> = (0..basis.values.len()).collect();
    order.sort_by(|&a, &b| basis.values[b].abs().total_cmp(&basis.values[a].abs()));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| basis.values[i]).collect();
    let abs_values: Vec<f64> = eigenvalues.iter().map(|v| v.abs()).collect();
    let total: f64 = abs_values.iter().sum();
    let n = abs_values.len();
    let mut cum_mass = Vec::with_capacity(n);
    let mut run = 0.0;
    for (i, a) in abs_values.iter().enumerate() {
        run += a;
        cum_mass.push(if total > 0.0 { run / total } else { (i + 1) as f64 / n as f64 });
    }
    if let Some(last) = cum_mass.last_mut() {
        *last = 1.0;
    }
    SpectrumReport {
        class_id,
        eigenvalues,
        abs_values,
        cum_mass,
    }
}

/// `|v_i^a · v_j^b|` for the top-`k` eigenvectors (signed order) of two bases.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub k: usize,
    /// Row-major `k×k`.
    pub matrix: Vec<f64>,
    pub diagonal: Vec<f64>,
}

impl SimilarityReport {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.k + j]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,abs_cos")?;
        for i in 0..self.k {
            for j in 0..self.k {
                writeln!(out, "{},{},{}", i + 1, j + 1, format_exact(self.get(i, j)))?;
            }
        }
        Ok(())
    }
}

pub fn aligned_cosine_similarity(a: &EigenBasis, b: &EigenBasis, k: usize) -> Result<SimilarityReport> {
    if a.n != b.n {
        return Err(Error::dims("aligned_cosine_similarity", &[a.n], &[b.n]));
    }
    if k > a.n {
        return Err(Error::Index {
            what: "top count",
            index: k,
            bound: a.n + 1,
        });
    }
    let mut matrix = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            // vectors are unit already; normalise anyway against drift
            let va = a.vector(i);
            let vb = b.vector(j);
            let denom = (dot(va, va) * dot(vb, vb)).sqrt();
            matrix[i * k + j] = if denom > 0.0 { dot(va, vb).abs() / denom } else { 0.0 };
        }
    }
    let diagonal = (0..k).map(|i| matrix[i * k + i]).collect();
    Ok(SimilarityReport { k, matrix, diagonal })
}

/// One eigenfeature's share of a logit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Position of the eigenpair in the signed order.
    pub index: usize,
    pub eigenvalue: f64,
    pub projection_sq: f64,
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    /// Top contributions by `|contribution|`.
    pub terms: Vec<Contribution>,
    /// Sum over all `n` contributions.
    pub total: f64,
}

impl Attribution {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rank,index,eigenvalue,projection_sq,contribution")?;
        for (r, c) in self.terms.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                r + 1,
                c.index,
                format_exact(c.eigenvalue),
                format_exact(c.projection_sq),
                format_exact(c.contribution)
            )?;
        }
        Ok(())
    }
}

pub fn attribution(basis: &EigenBasis, x: &[f64], top_m: usize) -> Result<Attribution> {
    check_dim(basis, x, "attribution")?;
    if top_m > basis.n {
        return Err(Error::Index {
            what: "top count",
            index: top_m,
            bound: basis.n + 1,
        });
    }
    let mut all: Vec<Contribution> = (0..basis.n)
        .map(|i| {
            let p = dot(basis.vector(i), x);
            Contribution {
                index: i,
                eigenvalue: basis.values[i],
                projection_sq: p * p,
                contribution: basis.values[i] * p * p,
            }
        })
        .collect();
    let total = all.iter().map(|c| c.contribution).sum();
    all.sort_by(|a, b| b.contribution.abs().total_cmp(&a.contribution.abs()));
    all.truncate(top_m);
    Ok(Attribution { terms: all, total })
}

#[cfg(test)]
mod tests {
    use super::super::eigen::{symmetric_eigendecompose, EigenSolver};
    use super::*;
    use proptest::prelude::*;

    fn basis_of(a: &[f64], n: usize) -> EigenBasis {
        symmetric_eigendecompose(a, n, EigenSolver::TridiagonalQl).unwrap()
    }

    fn sym_from(raw: &[f64], n: usize) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
            }
        }
        a
    }

    fn qf(a: &[f64], x: &[f64]) -> f64 {
        let n = x.len();
        (0..n).map(|i| x[i] * (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>()).sum()
    }

    #[test]
    fn quadratic_form_examples() {
        let b = basis_of(&[2.0, 1.0, 1.0, 3.0], 2);
        let v0 = b.vector(0).to_vec();
        assert!((quadratic_form_logit(&b, &v0).unwrap() - b.values[0]).abs() < 1e-12);
        assert_eq!(quadratic_form_logit(&b, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(quadratic_form_logit(&b, &[1.0]).is_err());
    }

    #[test]
    fn spectrum_examples() {
        let b = basis_of(&[3.0, 0.0, 0.0, -1.0], 2);
        let s = eigen_spectrum(0, &b);
        assert_eq!(s.abs_values, vec![3.0, 1.0]);
        assert_eq!(s.cum_mass, vec![0.75, 1.0]);
        assert_eq!(s.eigenvalues, vec![3.0, -1.0]);

        let eq = basis_of(&[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0], 3);
        let s = eigen_spectrum(0, &eq);
        for (i, c) in s.cum_mass.iter().enumerate() {
            assert!((c - (i + 1) as f64 / 3.0).abs() < 1e-15);
        }
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("rank,eigenvalue,abs_value,cum_mass\n1,"));
    }

    #[test]
    fn spectrum_median_and_zero_matrix() {
        let b = basis_of(&[5.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0], 3);
        let s = eigen_spectrum(2, &b);
        assert_eq!(s.largest(), 5.0);
        assert_eq!(s.median(), 2.0);
        let z = eigen_spectrum(0, &basis_of(&[0.0; 4], 2));
        assert_eq!(z.cum_mass.last(), Some(&1.0));
    }

    #[test]
    fn similarity_identical_and_flipped() {
        let a = sym_from(&[1.0, 2.0, 0.5, -1.0, 0.3, 0.7, 0.2, 0.1, -2.0], 3);
        let b = basis_of(&a, 3);
        let same = aligned_cosine_similarity(&b, &b, 3).unwrap();
        assert!(same.diagonal.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let mut flipped = b.clone();
        flipped.vectors.iter_mut().for_each(|v| *v = -*v);
        let f = aligned_cosine_similarity(&b, &flipped, 2).unwrap();
        assert!(f.diagonal.iter().all(|d| (d - 1.0).abs() < 1e-12));
        assert!(f.get(0, 1) < 1e-10);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);

        let small = basis_of(&[1.0], 1);
        assert!(aligned_cosine_similarity(&b, &small, 1).is_err());
        assert!(aligned_cosine_similarity(&b, &b, 4).is_err());
    }

    #[test]
    fn attribution_orthogonal_input() {
        let b = basis_of(&[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0], 3);
        // x along e₃, orthogonal to the two leading eigenvectors
        let at = attribution(&b, &[0.0, 0.0, 2.0], 3).unwrap();
        assert_eq!(at.terms[0].index, 2);
        assert_eq!(at.terms[0].contribution, 4.0);
        assert_eq!(at.terms[1].contribution, 0.0);
        assert_eq!(at.total, 4.0);
        let mut buf = Vec::new();
        at.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("rank,index,eigenvalue,projection_sq,contribution\n1,2,1.0,4.0,4.0"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn symmetrization_preserves_quadratic_form(
            raw in prop::collection::vec(-3.0f64..3.0, 36),
            x in prop::collection::vec(-2.0f64..2.0, 6),
        ) {
            let lhs = qf(&raw, &x);
            let rhs = qf(&sym_from(&raw, 6), &x);
            prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0));
        }

        #[test]
        fn attribution_total_is_quadratic_form(
            raw in prop::collection::vec(-3.0f64..3.0, 49),
            x in prop::collection::vec(-2.0f64..2.0, 7),
        ) {
            let a = sym_from(&raw, 7);
            let b = basis_of(&a, 7);
            let q = quadratic_form_logit(&b, &x).unwrap();
            let at = attribution(&b, &x, 3).unwrap();
            prop_assert!((at.total - q).abs() <= 1e-5 * q.abs().max(1e-12));
            prop_assert!((q - qf(&a, &x)).abs() <= 1e-9 * q.abs().max(1.0));
            prop_assert!(at.terms.windows(2).all(|w| w[0].contribution.abs() >= w[1].contribution.abs()));
        }

        #[test]
        fn rotating_a_degenerate_block_keeps_the_form(
            theta in 0.0f64..std::f64::consts::TAU,
            x in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            // eigenvalue 2 has a 2-d eigenspace; any orthonormal basis of it is valid
            let b = basis_of(&[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0], 3);
            let mut rot = b.clone();
            let (c, s) = (theta.cos(), theta.sin());
            for k in 0..3 {
                let (p, q) = (b.vector(0)[k], b.vector(1)[k]);
                rot.vectors[k] = c * p - s * q;
                rot.vectors[3 + k] = s * p + c * q;
            }
            let q0 = quadratic_form_logit(&b, &x).unwrap();
            let q1 = quadratic_form_logit(&rot, &x).unwrap();
            prop_assert!((q0 - q1).abs() <= 1e-10 * q0.abs().max(1.0));
        }

        #[test]
        fn similarity_invariant_to_readout_scaling(
            raw in prop::collection::vec(-3.0f64..3.0, 25),
            scale in 0.1f64..10.0,
        ) {
            let a = sym_from(&raw, 5);
            let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
            let ba = basis_of(&a, 5);
            let bs = basis_of(&scaled, 5);
            let r = aligned_cosine_similarity(&ba, &bs, 5).unwrap();
            // distinct eigenvalues almost surely; tolerance covers near-ties
            prop_assert!(r.diagonal.iter().all(|d| *d > 1.0 - 1e-6));
        }
    }

    #[test]
    fn reconstruction_up_to_200() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for n in [1usize, 2, 17, 64, 200] {
            let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = sym_from(&raw, n);
            let b = basis_of(&a, n);
            let rec = b.reconstruct();
            let err: f64 = rec.iter().zip(&a).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * super::super::frobenius(&a), "n={n}: {err:e}");
        }
    }
}
