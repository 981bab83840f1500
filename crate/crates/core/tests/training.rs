use std::collections::HashSet;

use userhan::baselines::{grid_search, LossKind, TfidfVectorizer};
use userhan::corpus::{generate_synthetic, tokenize, user_document, Split, SplitRatios, SyntheticConfig, UserRecord};
use userhan::experiment::{
    mean_std, prepare, random_baseline_f1, run_ablation, run_protocol, summarize, train_model, ExperimentConfig,
    ModelKind, RunData, RunReport, TrainedModel,
};
use userhan::metrics::f1;

fn corpus(delta: f64, n_diag: usize, seed: u64) -> (SyntheticConfig, Vec<UserRecord>) {
    let cfg = SyntheticConfig {
        n_diagnosed: n_diag,
        posts_per_user_mean: 6.0,
        posts_per_user_std: 0.0,
        post_len_mean: 10.0,
        post_len_std: 0.0,
        vocab_size: 300,
        signal_strength: delta,
        ..SyntheticConfig::default()
    };
    let users = generate_synthetic(&cfg, seed).unwrap();
    (cfg, users)
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::parse(
        "embed_dim = 8\ngru_hidden = 4\nattn_dim = 4\npenultimate_dim = 4\nepochs = 3\nlearning_rate = 0.01\n\
         buckets = 2000\nngram_dim = 8\nngram_epochs = 20\nmax_iter = 200\n",
    )
    .unwrap()
}

fn data(users: &[UserRecord], seed: u64) -> RunData {
    let manifest = prepare(users, "depression", seed, SplitRatios::default()).unwrap();
    RunData::resolve(&manifest, users).unwrap()
}

fn without_time(mut r: RunReport) -> RunReport {
    r.wall_time_secs = 0.0;
    r
}

#[test]
fn same_seed_gives_identical_reports() {
    let (_, users) = corpus(0.3, 30, 1);
    let d = data(&users, 2);
    let cfg = small_config();
    for kind in ModelKind::ALL {
        let (_, a) = train_model(kind, &d, &cfg).unwrap();
        let (_, b) = train_model(kind, &d, &cfg).unwrap();
        assert_eq!(without_time(a), without_time(b), "{kind}");
    }
}

#[test]
fn selected_epoch_has_the_best_dev_f1() {
    let (_, users) = corpus(0.3, 30, 3);
    let (_, r) = train_model(ModelKind::Han, &data(&users, 1), &small_config()).unwrap();
    let sel = r.selected_epoch.unwrap();
    let best = r.history.iter().map(|e| e.dev.f1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.history[sel - 1].dev.f1, best);
    assert!(r.history[sel - 1].dev.f1 >= r.history[0].dev.f1);
    // Ties keep the earliest epoch.
    assert!(r.history[..sel - 1].iter().all(|e| e.dev.f1 < best));
}

#[test]
fn zero_epochs_are_rejected() {
    assert!(ExperimentConfig::parse("epochs = 0\n").is_err());
}

#[test]
fn checkpoints_round_trip_for_every_model() {
    let (_, users) = corpus(0.3, 20, 4);
    let d = data(&users, 1);
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let (model, _) = train_model(kind, &d, &cfg).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(loaded.kind(), kind);
        let a = model.predict(&d.test, 0.5).unwrap();
        let b = loaded.predict(&d.test, 0.5).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.to_bits(), y.1.to_bits(), "{kind}");
        }
    }
}

#[test]
fn protocol_with_one_resampling_has_zero_std() {
    let (_, users) = corpus(0.3, 20, 5);
    let cfg = small_config();
    let report = run_protocol(&users, "depression", &[ModelKind::LogReg], 1, SplitRatios::default(), &cfg).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.summary.len(), 1);
    assert_eq!(report.summary[0].mean_f1, report.runs[0].test.f1);
    assert_eq!(report.summary[0].std_f1, 0.0);
}

#[test]
fn protocol_runs_every_model_on_every_seed() {
    let (_, users) = corpus(0.3, 20, 6);
    let cfg = small_config();
    let kinds = [ModelKind::LogReg, ModelKind::CharNgram];
    let report = run_protocol(&users, "depression", &kinds, 3, SplitRatios::default(), &cfg).unwrap();
    assert_eq!(report.runs.len(), 6);
    for k in kinds {
        let seeds: Vec<u64> = report.runs.iter().filter(|r| r.model == k).map(|r| r.control_seed).collect();
        assert_eq!(seeds, [1, 2, 3]);
    }
    for row in &report.summary {
        let f: Vec<f64> = report.runs.iter().filter(|r| r.model == row.model).map(|r| r.test.f1).collect();
        let (m, s) = mean_std(&f).unwrap();
        assert_eq!((row.runs, row.mean_f1, row.std_f1), (3, m, s));
    }
    let again = run_protocol(&users, "depression", &kinds, 3, SplitRatios::default(), &cfg).unwrap();
    assert_eq!(again.summary, report.summary);
}

#[test]
fn protocol_fails_loudly_when_the_pool_is_too_small() {
    let (_, mut users) = corpus(0.3, 10, 7);
    users.truncate(50);
    let err = run_protocol(&users, "depression", &[ModelKind::LogReg], 1, SplitRatios::default(), &small_config());
    assert!(err.is_err());
}

#[test]
fn worked_aggregation_example() {
    let (m, s) = mean_std(&[68.0, 69.0, 67.0, 68.5, 68.0]).unwrap();
    assert!((m - 68.1).abs() < 1e-12);
    assert!((s - 0.663_324_958_071_08).abs() < 1e-12);
    assert_eq!(format!("{s:.3}"), "0.663");
    assert!(summarize(&[]).unwrap().is_empty());
}

#[test]
fn ablation_grid_and_oversized_cap() {
    let (_, users) = corpus(0.3, 15, 8);
    let cfg = small_config();
    let report = run_ablation(&users, "depression", &[2, 4, 100], 2, SplitRatios::default(), &cfg).unwrap();
    assert_eq!(report.runs.len(), 6);
    let caps: Vec<Option<usize>> = report.summary.iter().map(|s| s.post_cap).collect();
    assert_eq!(caps, [Some(2), Some(4), Some(100)]);
    assert!(report.summary.iter().all(|s| s.runs == 2));
    // Every user has 6 posts, so a cap of 100 changes nothing.
    let (_, plain) = train_model(ModelKind::Han, &data(&users, 1), &cfg).unwrap();
    let capped = report.runs.iter().find(|r| r.post_cap == Some(100) && r.control_seed == 1).unwrap().clone();
    assert_eq!(capped.test, plain.test);
    assert_eq!(capped.history, plain.history);
}

#[test]
fn grid_search_picks_the_best_evaluated_c() {
    let (_, users) = corpus(0.1, 30, 9);
    let d = data(&users, 1);
    let docs: Vec<Vec<String>> = d.train.iter().map(user_document).collect();
    let mut v = TfidfVectorizer::new();
    let x = v.fit_transform(&docs).unwrap();
    let xd: Vec<_> = d.dev.iter().map(|u| v.transform(&user_document(u)).unwrap()).collect();
    let y: Vec<bool> = d.train.iter().map(|u| u.label.is_positive()).collect();
    let yd: Vec<bool> = d.dev.iter().map(|u| u.label.is_positive()).collect();
    let cfg = small_config().linear;
    for loss in [LossKind::Logistic, LossKind::Hinge] {
        let r = grid_search((&x, &y), (&xd, &yd), v.num_features(), loss, &cfg).unwrap();
        assert_eq!(r.scores.len(), cfg.c_grid.len());
        let best = r.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let first_best = r.scores.iter().find(|s| s.1 == best).unwrap().0;
        assert_eq!(r.best_c, first_best);
        let preds: Vec<_> = xd.iter().map(|xi| r.model.predict(xi)).collect();
        let labels: Vec<_> = d.dev.iter().map(|u| u.label).collect();
        assert_eq!(f1(&preds, &labels).unwrap().f1, best);
    }
}

#[test]
fn char_ngram_beats_the_random_baseline_on_dev() {
    let (_, users) = corpus(0.3, 40, 10);
    let d = data(&users, 1);
    let (model, _) = train_model(ModelKind::CharNgram, &d, &small_config()).unwrap();
    let dev = model.evaluate(&d.dev, 0.5).unwrap();
    assert!(dev.f1 > random_baseline_f1(0.1, 0.5), "{}", dev.f1);
}

fn signal_rates(cfg: &SyntheticConfig, users: &[UserRecord]) -> (f64, f64) {
    let lexicon: HashSet<&str> = cfg.signal_lexicon.iter().map(String::as_str).collect();
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for u in users {
        let k = usize::from(u.label.is_positive());
        for p in &u.posts {
            for t in tokenize(p) {
                totals[k] += 1;
                hits[k] += usize::from(lexicon.contains(t.as_str()));
            }
        }
    }
    (hits[1] as f64 / totals[1] as f64, hits[0] as f64 / totals[0] as f64)
}

#[test]
fn null_generator_has_no_class_difference() {
    let diffs: Vec<f64> = (0..10)
        .map(|seed| {
            let (cfg, users) = corpus(0.0, 40, 100 + seed);
            let (d, c) = signal_rates(&cfg, &users);
            d - c
        })
        .collect();
    let (mean, std) = mean_std(&diffs).unwrap();
    let se = std / (diffs.len() as f64 - 1.0).sqrt();
    assert!(mean.abs() <= 3.0 * se.max(1e-6), "mean {mean}, se {se}");
}

#[test]
fn planted_signal_is_more_frequent_in_diagnosed_text() {
    let (cfg, users) = corpus(0.3, 40, 11);
    let (d, c) = signal_rates(&cfg, &users);
    assert!(d > c);
    assert!((d - cfg.diagnosed_signal_rate()).abs() < 0.03);
    assert!((c - cfg.control_signal_rate()).abs() < 0.01);
}

#[test]
fn generator_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = corpus(0.3, 10, 12);
    let (_, b) = corpus(0.3, 10, 12);
    userhan::corpus::save_corpus(&dir.path().join("a.jsonl"), &a).unwrap();
    userhan::corpus::save_corpus(&dir.path().join("b.jsonl"), &b).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a.jsonl")).unwrap(), std::fs::read(dir.path().join("b.jsonl")).unwrap());
}

#[test]
fn manifest_splits_are_disjoint_and_stratified() {
    let (_, users) = corpus(0.0, 20, 13);
    let m = prepare(&users, "depression", 4, SplitRatios::default()).unwrap();
    let ids: HashSet<&str> = m.users.iter().map(|e| e.user_id.as_str()).collect();
    assert_eq!(ids.len(), 200);
    for s in [Split::Train, Split::Dev, Split::Test] {
        let d = m.count(s, userhan::corpus::Label::Diagnosed);
        let c = m.count(s, userhan::corpus::Label::Control);
        assert_eq!(c, 9 * d, "{s}");
    }
}
