use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqsglu::interp::{build_interaction_matrix, decompose_all, quadratic_form_logit, EigenSolver};
use sqsglu::{init_model, GateKind, GateSpec, ModelConfig, Tensor};

#[test]
fn untrained_bilinear_logits_are_quadratic_forms() {
    let model = init_model(&ModelConfig::interp(GateSpec::of(GateKind::Identity), 4)).unwrap();
    let all = decompose_all(&model, EigenSolver::TridiagonalQl).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = 20;
    let x: Vec<f32> = (0..batch * 784).map(|_| rng.random_range(0.0..1.0)).collect();
    let logits = model.forward(&Tensor::new(vec![batch, 784], x.clone()).unwrap()).unwrap();
    for s in 0..batch {
        let xs: Vec<f64> = x[s * 784..(s + 1) * 784].iter().map(|&v| v as f64).collect();
        for (a, (mat, basis)) in all.iter().enumerate() {
            let want = logits.data()[s * 10 + a] as f64;
            let eig = quadratic_form_logit(basis, &xs).unwrap();
            let direct = mat.quadratic_form(&xs).unwrap();
            assert!((eig - want).abs() <= 1e-4, "sample {s} class {a}: {eig} vs {want}");
            assert!((direct - eig).abs() <= 1e-8 * direct.abs().max(1.0));
        }
    }
}

#[test]
fn gate_is_ignored_when_building_matrices() {
    let sqs = init_model(&ModelConfig::interp(GateSpec::sqs_default(), 4)).unwrap();
    let bil = init_model(&ModelConfig::interp(GateSpec::of(GateKind::Identity), 4)).unwrap();
    // same seed, same weights
    assert_eq!(
        build_interaction_matrix(&sqs, 3).unwrap().data,
        build_interaction_matrix(&bil, 3).unwrap().data
    );
}
