use zsl_core::autodiff::Tensor;
use zsl_core::data::{make_toy_dataset, Dataset, ToySpec};
use zsl_core::episode::{EpisodeConfig, EpisodeSampler};
use zsl_core::losses::LossReport;
use zsl_core::meta::{
    inner_adapt, meta_gradient, outer_update, train, InnerRates, Objective, Side, Stage, TaskGradient, TaskObjective,
    TrainConfig, Trainer, OuterOptimizer,
};
use zsl_core::networks::{Architecture, Checkpoint, Group};
use zsl_core::rng::{self, Purpose};

fn toy() -> Dataset {
    make_toy_dataset(&ToySpec { n_seen: 8, n_unseen: 2, attr_dim: 5, feat_dim: 7, per_class: 12, noise_sigma: 0.05, seed: 3 })
        .unwrap()
}

fn small_arch() -> Architecture {
    Architecture {
        g_hidden: vec![9],
        d_hidden: vec![8],
        ad_hidden: vec![6],
        ap_hidden: vec![6],
        embed_dim: 5,
        am_hidden: 6,
        ..Architecture::new(5, 7, 8)
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        episode: EpisodeConfig { n_way: 3, k_sup: 4, k_qry: 2, tasks_per_batch: 3 },
        epochs: 4,
        alpha1: 0.01,
        alpha2: 0.01,
        alpha3: 0.01,
        beta1: 0.01,
        beta2: 0.01,
        beta3: 0.01,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initial_state() {
    let ds = toy();
    let cfg = TrainConfig { epochs: 0, ..small_config() };
    let init = Trainer::new(&ds, small_arch(), cfg.clone()).unwrap().into_state();
    let (state, logs) = train(&ds, small_arch(), cfg).unwrap();
    assert!(logs.is_empty());
    assert_eq!(state, init);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let ds = toy();
    let (a, la) = train(&ds, small_arch(), small_config()).unwrap();
    let (b, lb) = train(&ds, small_arch(), small_config()).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let losses = |l: &[zsl_core::meta::EpochLog]| l.iter().map(|e| e.losses).collect::<Vec<_>>();
    assert_eq!(losses(&la), losses(&lb));
    let (c, _) = train(&ds, small_arch(), TrainConfig { seed: 12, ..small_config() }).unwrap();
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn resumed_training_follows_the_same_trajectory() {
    let ds = toy();
    let dir = tempfile::tempdir().unwrap();
    for opt in [OuterOptimizer::Sgd, OuterOptimizer::Adam] {
        let cfg = TrainConfig { outer_optimizer: opt, ..small_config() };
        let (full, _) = train(&ds, small_arch(), cfg.clone()).unwrap();

        let path = dir.path().join("half.ckpt");
        let mut first = Trainer::new(&ds, small_arch(), TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        first.run(Some(&path), |_| {}).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.epoch, 2);
        let mut second = Trainer::resume(&ds, cfg, &ck).unwrap();
        second.run(None, |_| {}).unwrap();
        assert_eq!(second.state().checksum(), full.checksum(), "{opt:?}");
    }
}

#[test]
fn critic_weights_stay_clipped() {
    let ds = toy();
    let cfg = TrainConfig { alpha1: 5.0, beta1: 5.0, clip_c: 0.02, ..small_config() };
    let mut t = Trainer::new(&ds, small_arch(), cfg).unwrap();
    for _ in 0..3 {
        t.step().unwrap();
        for i in t.state().group_indices(Group::Discriminator) {
            assert!(t.state().params[i].max_abs() <= 0.02);
        }
    }
}

fn one_task(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> zsl_core::episode::Task {
    let sampler = EpisodeSampler::new(ds, cfg.episode).unwrap();
    sampler.sample_task(&mut rng::stream(seed, Purpose::Test, 0, 0))
}

#[test]
fn inner_adaptation_leaves_meta_untouched_and_lowers_support_loss() {
    let ds = toy();
    let cfg = small_config();
    let state = Trainer::new(&ds, small_arch(), cfg.clone()).unwrap().into_state();
    let groups: Vec<Group> = state.layout.specs.iter().map(|s| s.group).collect();
    let task = one_task(&ds, &cfg, 1);
    let obj = TaskObjective::new(&state, &task, cfg.loss_weights, cfg.sigma_train, &mut rng::stream(1, Purpose::Noise, 0, 0))
        .unwrap();
    let before = state.checksum();
    let rates = InnerRates { critic: 1e-3, reconstruction: 1e-3, gen_class: 1e-3, clip: Some(0.01), steps: 1 };
    let adapted = inner_adapt(&obj, &state.params, &groups, &rates, false).unwrap();
    assert_eq!(state.checksum(), before);

    // generator-classifier loss on the support set, before and after
    let gc_loss = |params: &[Tensor]| {
        let mut tape = zsl_core::autodiff::Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let r = obj.record(&mut tape, &vars, Stage::GenClass, Side::Support).unwrap();
        tape.value(r.loss).item()
    };
    // only the generator-classifier group moves in the comparison
    let mut gc_only = state.params.clone();
    for i in state.group_indices(Group::GenClass) {
        gc_only[i] = adapted.params[i].clone();
    }
    assert!(gc_loss(&gc_only) < gc_loss(&state.params));
}

#[test]
fn second_order_meta_gradient_matches_finite_differences() {
    let ds = toy();
    let cfg = TrainConfig { clip_c: 100.0, ..small_config() };
    let state = Trainer::new(&ds, small_arch(), cfg.clone()).unwrap().into_state();
    let groups: Vec<Group> = state.layout.specs.iter().map(|s| s.group).collect();
    let task = one_task(&ds, &cfg, 2);
    let obj = TaskObjective::new(&state, &task, cfg.loss_weights, cfg.sigma_train, &mut rng::stream(2, Purpose::Noise, 0, 0))
        .unwrap();
    let rates = InnerRates { critic: 0.05, reconstruction: 0.05, gen_class: 0.05, clip: Some(100.0), steps: 1 };
    let adapted = inner_adapt(&obj, &state.params, &groups, &rates, true).unwrap();
    let exact = meta_gradient(&obj, &adapted, &groups, &rates, false).unwrap();
    let first = meta_gradient(&obj, &adapted, &groups, &rates, true).unwrap();

    let query_loss = |params: &[Tensor], stage: Stage| {
        let ad = inner_adapt(&obj, params, &groups, &rates, false).unwrap();
        let mut tape = zsl_core::autodiff::Tape::new();
        let vars: Vec<_> = ad.params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let r = obj.record(&mut tape, &vars, stage, Side::Query).unwrap();
        tape.value(r.loss).item()
    };
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for stage in Stage::ORDER {
        for &i in state.group_indices(stage.group()).iter().step_by(3) {
            let k = state.params[i].len() / 2;
            let mut up = state.params.clone();
            up[i].data_mut()[k] += h;
            let mut down = state.params.clone();
            down[i].data_mut()[k] -= h;
            let numeric = (query_loss(&up, stage) - query_loss(&down, stage)) / (2.0 * h);
            let analytic = exact.grads[i].data()[k];
            max_rel = max_rel.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0));
            max_gap = max_gap.max((first.grads[i].data()[k] - analytic).abs());
        }
    }
    assert!(max_rel < 1e-5, "max relative error {max_rel}");
    // the correction is real, not a relabelled first-order gradient
    assert!(max_gap > 1e-8);
}

#[test]
fn outer_update_sums_tasks_and_respects_directions() {
    let ds = toy();
    let cfg = TrainConfig { clip_c: 100.0, ..small_config() };
    let state = Trainer::new(&ds, small_arch(), cfg.clone()).unwrap().into_state();
    let ones = TaskGradient {
        grads: state.params.iter().map(|p| Tensor::full(p.rows(), p.cols(), 1.0)).collect(),
        report: LossReport::default(),
        stats: Vec::new(),
    };
    let mut one = state.clone();
    outer_update(&mut one, std::slice::from_ref(&ones), &cfg, None).unwrap();
    let mut two = state.clone();
    outer_update(&mut two, &[ones.clone(), ones.clone()], &cfg, None).unwrap();
    for (i, spec) in state.layout.specs.iter().enumerate() {
        for ((&p0, &p1), &p2) in state.params[i].data().iter().zip(one.params[i].data()).zip(two.params[i].data()) {
            match spec.group {
                Group::Discriminator => assert!(p1 > p0),
                _ => assert!(p1 < p0),
            }
            assert!(((p2 - p0) - 2.0 * (p1 - p0)).abs() < 1e-12);
        }
    }
    let zeros = TaskGradient {
        grads: state.params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
        report: LossReport::default(),
        stats: Vec::new(),
    };
    let mut same = state.clone();
    outer_update(&mut same, &[zeros], &cfg, None).unwrap();
    assert_eq!(same, state);
    assert!(outer_update(&mut same, &[], &cfg, None).is_err());
}

#[test]
fn second_order_training_runs() {
    let ds = toy();
    let cfg = TrainConfig { first_order: false, epochs: 2, ..small_config() };
    let (state, logs) = train(&ds, small_arch(), cfg).unwrap();
    assert_eq!(logs.len(), 2);
    assert!(state.params.iter().all(|p| p.all_finite()));
}
