use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use userhan::baselines::TfidfVectorizer;
use userhan::corpus::{binomial_upper_tails, generate_synthetic, tokenize, Label, SyntheticConfig, Vocabulary};
use userhan::experiment::{adam_step, AdamConfig, AdamState};
use userhan::graph::Graph;
use userhan::han::{EncodedUser, HanConfig, HanModel};
use userhan::metrics::{f1, Confusion};
use userhan::nn::{bigru_encode, AttentionParams, DenseParams, GruParams};
use userhan::tensor::Tensor;
use userhan::verify::{reference_bigru, reference_gru_step};

fn random_gru(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruParams<f64> {
    let mut p = GruParams::new(input, hidden, 0.7, rng);
    for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
        *b = Tensor::uniform(&[hidden], 0.7, rng);
    }
    p
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn gru_cell_matches_scalar_formulas_in_three_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_gru(3, 3, &mut rng);
    let x = [0.3, -0.8, 0.5];
    let h = [0.1, 0.4, -0.6];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    // Written per output unit with explicit indices, independent of row_times.
    let w = |t: &Tensor<f64>, i: usize, j: usize| t.data()[i * 3 + j];
    let mut expected = [0.0; 3];
    let mut r = [0.0; 3];
    let mut z = [0.0; 3];
    for k in 0..3 {
        let mut az = p.b_z.data()[k];
        let mut ar = p.b_r.data()[k];
        for i in 0..3 {
            az += x[i] * w(&p.w_z, i, k) + h[i] * w(&p.u_z, i, k);
            ar += x[i] * w(&p.w_r, i, k) + h[i] * w(&p.u_r, i, k);
        }
        z[k] = sig(az);
        r[k] = sig(ar);
    }
    for k in 0..3 {
        let mut a = p.b_h.data()[k];
        for i in 0..3 {
            a += x[i] * w(&p.w_h, i, k) + r[i] * h[i] * w(&p.u_h, i, k);
        }
        expected[k] = (1.0 - z[k]) * h[k] + z[k] * a.tanh();
    }
    let mut g = Graph::new();
    let pv = p.bind(&mut g);
    let xv = g.constant(Tensor::new(vec![1, 3], x.to_vec()).unwrap());
    let hv = g.constant(Tensor::new(vec![1, 3], h.to_vec()).unwrap());
    let out = userhan::nn::gru_cell(&mut g, xv, hv, &pv).unwrap();
    assert!(max_abs_diff(g.value(out).data(), &expected) <= 1e-14);
    assert!(max_abs_diff(&reference_gru_step(&x, &h, &p), &expected) <= 1e-14);
}

#[test]
fn bigru_matches_loop_oracle() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 1 + seed as usize % 6;
        let (fwd, bwd) = (random_gru(4, 3, &mut rng), random_gru(4, 3, &mut rng));
        let xs: Vec<Vec<f64>> = (0..t).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&xs).unwrap());
        let (fv, bv) = (fwd.bind(&mut g), bwd.bind(&mut g));
        let out = bigru_encode(&mut g, x, &fv, &bv).unwrap();
        let expected: Vec<f64> = reference_bigru(&xs, &fwd, &bwd).concat();
        assert!(max_abs_diff(g.value(out).data(), &expected) <= 1e-12, "seed {seed}");
    }
}

/// Scalar additive attention: returns (context, weights).
fn reference_attention(hs: &[Vec<f64>], p: &AttentionParams<f64>) -> (Vec<f64>, Vec<f64>) {
    let (d, a) = (p.w_a.shape()[0], p.w_a.shape()[1]);
    let scores: Vec<f64> = hs
        .iter()
        .map(|h| {
            (0..a)
                .map(|j| {
                    let pre: f64 = (0..d).map(|i| h[i] * p.w_a.data()[i * a + j]).sum::<f64>() + p.b_a.data()[j];
                    pre.tanh() * p.u_ctx.data()[j]
                })
                .sum()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / z).collect();
    let ctx = (0..d).map(|i| hs.iter().zip(&w).map(|(h, wt)| wt * h[i]).sum()).collect();
    (ctx, w)
}

fn reference_dense(x: &[f64], p: &DenseParams<f64>) -> Vec<f64> {
    let (rows, cols) = (p.weight.shape()[0], p.weight.shape()[1]);
    (0..cols).map(|j| (0..rows).map(|i| x[i] * p.weight.data()[i * cols + j]).sum::<f64>() + p.bias.data()[j]).collect()
}

fn small_model(seed: u64) -> HanModel<f64> {
    let tokens = ["<pad>", "<unk>", "w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"];
    let vocab = Vocabulary::from_tokens(tokens.map(String::from).to_vec(), 1);
    let cfg = HanConfig {
        embed_dim: 5,
        gru_hidden: 4,
        attn_dim: 3,
        penultimate_dim: 4,
        min_freq: 1,
        init_scale: 0.5,
        ..HanConfig::default()
    };
    let mut m = HanModel::new(cfg, vocab, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for b in [&mut m.params.word_attn.b_a, &mut m.params.post_attn.b_a, &mut m.params.hidden.bias, &mut m.params.output.bias] {
        *b = Tensor::uniform(b.shape(), 0.5, &mut rng);
    }
    m
}

fn random_user(id: usize, rng: &mut ChaCha8Rng) -> EncodedUser {
    let n_posts = rng.random_range(1..6);
    let posts: Vec<Vec<usize>> =
        (0..n_posts).map(|_| (0..rng.random_range(1..7)).map(|_| rng.random_range(1..10)).collect()).collect();
    let tokens = posts.iter().map(|p| p.iter().map(|i| format!("t{i}")).collect()).collect();
    EncodedUser { user_id: format!("u{id}"), label: None, posts, tokens }
}

fn reference_user(m: &HanModel<f64>, user: &EncodedUser) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let p = &m.params;
    let dim = p.embedding.dim();
    let mut post_vecs = Vec::new();
    let mut word_weights = Vec::new();
    for post in &user.posts {
        let xs: Vec<Vec<f64>> = post.iter().map(|&i| p.embedding.matrix.data()[i * dim..(i + 1) * dim].to_vec()).collect();
        let hs = reference_bigru(&xs, &p.word_fwd, &p.word_bwd);
        let (ctx, w) = reference_attention(&hs, &p.word_attn);
        post_vecs.push(ctx);
        word_weights.push(w);
    }
    let hs = reference_bigru(&post_vecs, &p.post_fwd, &p.post_bwd);
    let (ctx, post_weights) = reference_attention(&hs, &p.post_attn);
    let hidden: Vec<f64> = reference_dense(&ctx, &p.hidden).into_iter().map(f64::tanh).collect();
    (reference_dense(&hidden, &p.output)[0], post_weights, word_weights)
}

#[test]
fn encode_user_matches_layer_oracle_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..5 {
        let m = small_model(seed);
        for i in 0..6 {
            let user = random_user(i, &mut rng);
            let out = m.encode_user(&user).unwrap();
            let (logit, post_w, word_w) = reference_user(&m, &user);
            assert!((out.logit - logit).abs() <= 1e-12, "{} vs {logit}", out.logit);
            assert!(max_abs_diff(&out.trace.post_weights, &post_w) <= 1e-12);
            for (pt, w) in out.trace.posts.iter().zip(&word_w) {
                assert!(max_abs_diff(&pt.word_weights, w) <= 1e-12);
            }
        }
    }
}

#[test]
fn encode_post_matches_composition_on_three_tokens() {
    let m = small_model(9);
    let user = EncodedUser { user_id: "x".into(), label: None, posts: vec![vec![3, 7, 2]], tokens: vec![vec![]] };
    let (vec, weights) = m.encode_post(&user.posts[0]).unwrap();
    let dim = m.params.embedding.dim();
    let xs: Vec<Vec<f64>> =
        user.posts[0].iter().map(|&i| m.params.embedding.matrix.data()[i * dim..(i + 1) * dim].to_vec()).collect();
    let hs = reference_bigru(&xs, &m.params.word_fwd, &m.params.word_bwd);
    let (ctx, w) = reference_attention(&hs, &m.params.word_attn);
    assert!(max_abs_diff(vec.data(), &ctx) <= 1e-12);
    assert!(max_abs_diff(&weights, &w) <= 1e-12);
}

#[test]
fn forward_batch_matches_single_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = small_model(4);
    let users: Vec<EncodedUser> = (0..40).map(|i| random_user(i, &mut rng)).collect();
    let refs: Vec<&EncodedUser> = users.iter().collect();
    let batch = m.forward_batch(&refs).unwrap();
    for (u, b) in users.iter().zip(&batch) {
        let single = m.encode_user(u).unwrap();
        assert!((single.logit - b.logit).abs() <= 1e-9);
        assert_eq!(single.trace.user_id, b.trace.user_id);
        assert!(max_abs_diff(&single.trace.post_weights, &b.trace.post_weights) <= 1e-9);
    }
    assert!(m.forward_batch(&[]).is_err());
}

fn brute_force(pred: &[Label], gold: &[Label]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        match (p, g) {
            (Label::Diagnosed, Label::Diagnosed) => c.0 += 1,
            (Label::Diagnosed, Label::Control) => c.1 += 1,
            (Label::Control, Label::Diagnosed) => c.2 += 1,
            (Label::Control, Label::Control) => c.3 += 1,
        }
    }
    c
}

#[test]
fn f1_agrees_with_brute_force_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lab = |b: bool| Label::from_positive(b);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let bias = rng.random_range(0.0..1.0);
        let pred: Vec<Label> = (0..n).map(|_| lab(rng.random_bool(bias))).collect();
        let gold: Vec<Label> = (0..n).map(|_| lab(rng.random_bool(0.3))).collect();
        let (tp, fp, fn_, tn) = brute_force(&pred, &gold);
        let c = Confusion::count(&pred, &gold).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        let s = f1(&pred, &gold).unwrap();
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        assert_eq!((s.precision, s.recall), (p, r));
        assert!((s.f1 - f).abs() <= 1e-15);
        assert!((0.0..=1.0).contains(&s.f1));
    }
}

#[test]
fn worked_confusion_example() {
    let c = Confusion { tp: 3, fp: 1, fn_: 2, tn: 10 };
    let s = c.scores();
    assert_eq!(s.precision, 0.75);
    assert!((s.recall - 0.6).abs() < 1e-15);
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn adam_matches_scalar_recurrence() {
    let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let x0: f64 = rng.random_range(-2.0..2.0);
        let grads: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut t = Tensor::from_vec(vec![x0]).unwrap();
        let mut state = AdamState::new(&[&t]);
        for (step, &gv) in grads.iter().enumerate() {
            let g = Tensor::from_vec(vec![gv]).unwrap();
            adam_step(&mut [&mut t], &[&g], &mut state, step as u64 + 1, &cfg).unwrap();
        }
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for (step, &gv) in grads.iter().enumerate() {
            let k = step as i32 + 1;
            m = 0.9 * m + 0.1 * gv;
            v = 0.999 * v + 0.001 * gv * gv;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((t.data()[0] - x).abs() <= 1e-12);
    }
}

#[test]
fn tfidf_two_document_example() {
    let docs: Vec<Vec<String>> = ["a a b", "a c"].iter().map(|d| tokenize(d)).collect();
    let mut v = TfidfVectorizer::new();
    let rows = v.fit_transform(&docs).unwrap();
    let dense = rows[0].to_dense(v.num_features());
    let idf_b = 1.5f64.ln() + 1.0;
    let norm = (4.0 + idf_b * idf_b).sqrt();
    let a = dense[v.column("a").unwrap()];
    let b = dense[v.column("b").unwrap()];
    assert!((a - 2.0 / norm).abs() <= 1e-9);
    assert!((b - idf_b / norm).abs() <= 1e-9);
    assert_eq!(format!("{a:.4}/{b:.4}"), "0.8182/0.5750");
    assert_eq!(dense[v.column("c").unwrap()], 0.0);
}

#[test]
fn binomial_tails_match_direct_sums() {
    let (n, q) = (7, 0.3);
    let tails = binomial_upper_tails(n, q);
    let choose = |n: u64, k: u64| (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64);
    for (k, tail) in tails.iter().enumerate() {
        let direct: f64 = (k..=n).map(|j| choose(n as u64, j as u64) * q.powi(j as i32) * (1.0 - q).powi((n - j) as i32)).sum();
        assert!((tail - direct).abs() < 1e-12);
    }
    assert!((tails[0] - 1.0).abs() < 1e-12);
}

#[test]
fn bayes_f1_of_a_one_token_model_by_hand() {
    // One token per user: the rule "K ≥ 1" is the only non-trivial one.
    let cfg = SyntheticConfig { signal_strength: 0.5, signal_base_mass: 0.1, ..SyntheticConfig::default() };
    let (qd, qc, pi) = (0.55, 0.1, 0.1);
    let by_rule = 2.0 * pi * qd / (pi * qd + (1.0 - pi) * qc + pi);
    let all_positive = 2.0 * pi / (1.0 + pi);
    let expected = f64::max(by_rule, all_positive);
    assert!((cfg.bayes_optimal_f1(1, pi) - expected).abs() < 1e-12);
}

#[test]
fn bayes_f1_agrees_with_generated_corpus() {
    // Empirical best-threshold F1 on lexicon counts of a generated corpus.
    let cfg = SyntheticConfig {
        n_diagnosed: 300,
        posts_per_user_mean: 4.0,
        posts_per_user_std: 0.0,
        post_len_mean: 10.0,
        post_len_std: 0.0,
        signal_strength: 0.05,
        vocab_size: 500,
        ..SyntheticConfig::default()
    };
    let users = generate_synthetic(&cfg, 21).unwrap();
    let lexicon: std::collections::HashSet<&str> = cfg.signal_lexicon.iter().map(String::as_str).collect();
    let mut counts = Vec::new();
    for u in &users {
        let toks: Vec<String> = u.posts.iter().flat_map(|p| tokenize(p)).collect();
        assert_eq!(toks.len(), 40);
        counts.push((toks.iter().filter(|t| lexicon.contains(t.as_str())).count(), u.label.is_positive()));
    }
    let best = (0..=40)
        .map(|k| {
            let pred: Vec<Label> = counts.iter().map(|&(c, _)| Label::from_positive(c >= k)).collect();
            let gold: Vec<Label> = counts.iter().map(|&(_, y)| Label::from_positive(y)).collect();
            f1(&pred, &gold).unwrap().f1
        })
        .fold(0.0, f64::max);
    let analytic = cfg.bayes_optimal_f1(40, 0.1);
    assert!((best - analytic).abs() < 0.08, "empirical {best}, analytic {analytic}");
}
