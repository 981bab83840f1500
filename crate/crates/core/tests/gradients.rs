use userhan::graph::Graph;
use userhan::han::{forward_graph, HanVars};
use userhan::nn::ParamSet;
use userhan::tensor::Tensor;
use userhan::verify::{gradient_checks, toy_han, GRAD_CHECK_EPS};

#[test]
fn every_layer_matches_finite_differences() {
    let start = std::time::Instant::now();
    let reports = gradient_checks(11, GRAD_CHECK_EPS).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.name).collect();
    assert_eq!(
        names,
        ["embedding", "gru_cell", "bigru_encode", "attention_pool", "dense", "bce_loss", "han_two_posts"]
    );
    for r in &reports {
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
        assert!(r.num_params > 0);
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn layer_checks_hold_across_seeds() {
    for seed in 1..=10 {
        for r in gradient_checks(seed, GRAD_CHECK_EPS).unwrap().iter().filter(|r| r.name != "han_two_posts") {
            assert!(r.max_rel_error <= 1e-6, "seed {seed}: {r:?}");
        }
    }
}

fn toy_gradients<S: userhan::Scalar>(params: Vec<Tensor<S>>, user: &userhan::han::EncodedUser) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let leaves: Vec<_> = params.into_iter().map(|t| g.param_owned(t)).collect();
    let vars = HanVars::from_leaves(&mut g, leaves.clone()).unwrap();
    let fwd = forward_graph(&mut g, &vars, &[user]).unwrap();
    let loss = g.bce_logits(fwd.logits, &[S::one()], &[S::one()]).unwrap();
    g.backward(loss).unwrap();
    leaves
        .iter()
        .map(|&v| g.grad(v).unwrap().iter().map(|x| x.to_f64().unwrap()).collect())
        .collect()
}

#[test]
fn f32_gradients_track_f64_gradients() {
    let (han, user) = toy_han(11).unwrap();
    let g64 = toy_gradients(han.tensors().into_iter().cloned().collect::<Vec<Tensor<f64>>>(), &user);
    let g32 = toy_gradients(han.tensors().into_iter().map(|t| t.cast::<f32>()).collect(), &user);
    let scale = g64.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for (a, b) in g64.iter().flatten().zip(g32.iter().flatten()) {
        assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
    }
}

#[test]
fn frozen_embedding_receives_no_gradient() {
    let (mut han, user) = toy_han(3).unwrap();
    han.embedding.trainable = false;
    let mut g = Graph::new();
    let vars = han.bind(&mut g).unwrap();
    let fwd = forward_graph(&mut g, &vars, &[&user]).unwrap();
    let loss = g.bce_logits(fwd.logits, &[0.0], &[1.0]).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(vars.embedding).is_none());
    assert!(g.grad(vars.leaves[1]).is_some());
}
