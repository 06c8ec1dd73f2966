use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqsglu::tensor::grad_check_coords;
use sqsglu::{init_model, GateKind, GateSpec, GluMlpModel, ModelConfig, Tensor};

fn small(gate: GateSpec, biases: bool, hidden: Vec<usize>) -> GluMlpModel {
    let mut m = init_model(&ModelConfig {
        input_dim: 10,
        model_dim: 8,
        hidden_dims: hidden,
        class_count: 4,
        gate,
        biases,
        seed: 21,
    })
    .unwrap();
    // non-zero biases so their gradients are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for layer in &mut m.layers {
        for b in [&mut layer.b, &mut layer.c_bias].into_iter().flatten() {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    m
}

/// Finite differences on ~50 sampled weights spread over every parameter tensor.
fn check(model: &GluMlpModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f32> = (0..6 * 10).map(|_| rng.random_range(0.0..1.0)).collect();
    let input = Tensor::new(vec![6, 10], x).unwrap();
    let labels = vec![0usize, 1, 2, 3, 1, 2];
    let params = model.params();
    let per = 50usize.div_ceil(params.len());
    for (pi, (name, t)) in params.iter().enumerate() {
        let coords = sample(&mut rng, t.len(), per.min(t.len())).into_vec();
        let f = |g: &mut sqsglu::Graph, probe: sqsglu::Var| {
            let mut vars = model.bind(g, false);
            let mut slots: Vec<&mut sqsglu::Var> = vec![&mut vars.embed];
            for l in &mut vars.layers {
                slots.push(&mut l.w);
                slots.push(&mut l.v);
                slots.extend(l.b.as_mut());
                slots.extend(l.c_bias.as_mut());
            }
            slots.push(&mut vars.out_proj);
            *slots[pi] = probe;
            let xin = g.constant(input.clone());
            let logits = model.forward_graph(g, &vars, xin)?;
            g.softmax_cross_entropy(logits, &labels)
        };
        // SQS jumps by 2c at 0: h must stay below the smallest |pre-activation| for this seed
        let report = grad_check_coords(f, t, 1e-3, &coords).unwrap();
        assert!(
            report.passed(1e-3),
            "{} gate, {name}: {report:?}",
            model.config.gate.kind.name()
        );
    }
}

#[test]
fn every_gate_two_layers_with_biases() {
    for kind in GateKind::ALL {
        check(&small(GateSpec::of(kind), true, vec![7, 5]));
    }
}

#[test]
fn one_layer_without_biases() {
    check(&small(GateSpec::sqs_default(), false, vec![6]));
    check(&small(GateSpec::of(GateKind::Identity), false, vec![6]));
}

#[test]
fn sqs_general_power() {
    check(&small(GateSpec::sqs(0.01, 0.5, 2.0), true, vec![6]));
}
