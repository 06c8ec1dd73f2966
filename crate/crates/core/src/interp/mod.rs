//! Weight-based interpretability for one-layer GLU classifiers.
//!
//! For a bilinear layer each class logit is a quadratic form `xᵀ A_a x`; the
//! eigenvectors of `A_a` are input-space features whose contribution to the
//! logit is `λ_i (v_i·x)²`. For gated models the same construction is applied
//! to the raw weights and the gate is ignored.

mod analysis;
mod eigen;
mod image;

pub use analysis::{
    aligned_cosine_similarity, attribution, eigen_spectrum, quadratic_form_logit, Attribution, Contribution,
    SimilarityReport, SpectrumReport,
};
pub use eigen::{asymmetry, frobenius, orient, symmetric_eigendecompose, EigenBasis, EigenSolver};
pub use image::{eigenvector_pgm, export_eigenvector_image};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::GluMlpModel;
use crate::tensor::{gemm, GemmOp};

/// Symmetric `n×n` matrix for one class, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub class_id: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl InteractionMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `xᵀ A x` computed directly from the matrix.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::dims("quadratic_form", &[self.n], &[x.len()]));
        }
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            total += xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(total)
    }

    pub fn eigen(&self, solver: EigenSolver) -> Result<EigenBasis> {
        symmetric_eigendecompose(&self.data, self.n, solver)
    }
}

/// Rows of `W·E` and `V·E`: the GLU's two projections pulled back into input space.
struct PulledBack {
    n: usize,
    h: usize,
    w: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
    classes: usize,
}

fn pull_back(model: &GluMlpModel) -> Result<PulledBack> {
    if !model.is_interpretable() {
        return Err(Error::Unsupported(format!(
            "interaction matrices need exactly one GLU layer without biases (model has {} layer(s), biases {})",
            model.layers.len(),
            if model.config.biases { "on" } else { "off" }
        )));
    }
    let layer = &model.layers[0];
    let (d, n) = model.embed.dims2()?;
    let (h, d_w) = layer.w.dims2()?;
    let (classes, h_u) = model.out_proj.dims2()?;
    if d_w != d || h_u != h {
        return Err(Error::dims("interaction_matrix", &[h, d_w], &[d, n]));
    }
    let embed: Vec<f64> = model.embed.data().iter().map(|&v| v as f64).collect();
    let project = |m: &[f32]| {
        let m64: Vec<f64> = m.iter().map(|&v| v as f64).collect();
        let mut out = vec![0.0f64; h * n];
        gemm(h, d, n, &m64, GemmOp::N, &embed, GemmOp::N, &mut out, false, false);
        out
    };
    Ok(PulledBack {
        n,
        h,
        w: project(layer.w.data()),
        v: project(layer.v.data()),
        u: model.out_proj.data().iter().map(|&v| v as f64).collect(),
        classes,
    })
}

impl PulledBack {
    fn matrix(&self, class: usize) -> InteractionMatrix {
        let (n, h) = (self.n, self.h);
        let urow = &self.u[class * h..(class + 1) * h];
        let mut scaled = self.v.clone();
        for (k, &uk) in urow.iter().enumerate() {
            scaled[k * n..(k + 1) * n].iter_mut().for_each(|x| *x *= uk);
        }
        // B = W'ᵀ diag(U_a) V'
        let mut b = vec![0.0f64; n * n];
        gemm(n, h, n, &self.w, GemmOp::T, &scaled, GemmOp::N, &mut b, false, false);
        for i in 0..n {
            for j in i + 1..n {
                let m = 0.5 * (b[i * n + j] + b[j * n + i]);
                b[i * n + j] = m;
                b[j * n + i] = m;
            }
        }
        InteractionMatrix {
            class_id: class,
            n,
            data: b,
        }
    }
}

/// `A_a = (B_a + B_aᵀ)/2` with `B_a = Σ_k U[a,k] (Eᵀw_k)(Eᵀv_k)ᵀ`.
pub fn build_interaction_matrix(model: &GluMlpModel, class: usize) -> Result<InteractionMatrix> {
    let pb = pull_back(model)?;
    if class >= pb.classes {
        return Err(Error::Index {
            what: "class",
            index: class,
            bound: pb.classes,
        });
    }
    Ok(pb.matrix(class))
}

/// Every class's interaction matrix, sharing the pulled-back projections.
pub fn build_all_interaction_matrices(model: &GluMlpModel) -> Result<Vec<InteractionMatrix>> {
    let pb = pull_back(model)?;
    Ok((0..pb.classes).map(|a| pb.matrix(a)).collect())
}

/// Matrices and eigenbases for all classes, decomposed in parallel.
pub fn decompose_all(model: &GluMlpModel, solver: EigenSolver) -> Result<Vec<(InteractionMatrix, EigenBasis)>> {
    build_all_interaction_matrices(model)?
        .into_par_iter()
        .map(|m| {
            let b = m.eigen(solver)?;
            Ok((m, b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::GateSpec;
    use crate::model::{init_model, GluLayer, ModelConfig};
    use crate::tensor::Tensor;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn hand_model(u: &[f32]) -> GluMlpModel {
        let config = ModelConfig {
            input_dim: 2,
            model_dim: 2,
            hidden_dims: vec![1],
            class_count: 1,
            gate: GateSpec::of(crate::GateKind::Identity),
            biases: false,
            seed: 0,
        };
        let layer = GluLayer::new(t(&[1, 2], &[1.0, 0.0]), t(&[1, 2], &[0.0, 1.0]), None, None, config.gate).unwrap();
        GluMlpModel {
            config,
            embed: t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            layers: vec![layer],
            out_proj: t(&[1, 1], u),
        }
    }

    #[test]
    fn single_neuron_example() {
        let m = build_interaction_matrix(&hand_model(&[1.0]), 0).unwrap();
        assert_eq!(m.data, vec![0.0, 0.5, 0.5, 0.0]);
        assert_eq!(m.quadratic_form(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn zero_readout_row_gives_zero_matrix() {
        let m = build_interaction_matrix(&hand_model(&[0.0]), 0).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_multi_layer_and_biases() {
        let perf = init_model(&ModelConfig::perf(GateSpec::sqs_default(), 1)).unwrap();
        assert!(matches!(build_interaction_matrix(&perf, 0), Err(Error::Unsupported(_))));
        let mut cfg = ModelConfig::interp(GateSpec::sqs_default(), 1);
        cfg.biases = true;
        let biased = init_model(&cfg).unwrap();
        assert!(matches!(build_interaction_matrix(&biased, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bilinear_logits_match_quadratic_form() {
        let cfg = ModelConfig {
            input_dim: 12,
            model_dim: 7,
            hidden_dims: vec![9],
            class_count: 4,
            gate: GateSpec::of(crate::GateKind::Identity),
            biases: false,
            seed: 11,
        };
        let model = init_model(&cfg).unwrap();
        let x: Vec<f32> = (0..12).map(|i| ((i * 7 % 5) as f32 - 2.0) * 0.3).collect();
        let logits = model.forward(&t(&[1, 12], &x)).unwrap();
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let all = decompose_all(&model, EigenSolver::TridiagonalQl).unwrap();
        assert_eq!(all.len(), 4);
        for (a, (m, basis)) in all.iter().enumerate() {
            assert_eq!(asymmetry(&m.data, m.n), 0.0);
            let direct = m.quadratic_form(&x64).unwrap();
            let eig = quadratic_form_logit(basis, &x64).unwrap();
            let want = logits.data()[a] as f64;
            assert!((direct - want).abs() < 1e-5, "class {a}: {direct} vs {want}");
            assert!((eig - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn class_out_of_range() {
        assert!(matches!(build_interaction_matrix(&hand_model(&[1.0]), 3), Err(Error::Index { .. })));
    }
}
