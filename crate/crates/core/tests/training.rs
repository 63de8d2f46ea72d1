use trajgen::embedding::StubProvider;
use trajgen::io::LossToggles;
use trajgen::model::Checkpoint;
use trajgen::training::{
    prepare_items, train_items, train_step, BatchItem, StepRecord, TrainItem, TrainOptions, TrainState,
};
use trajgen::traj::{synth_corpus, MotionClass, SynthOptions};
use trajgen::{Error, Model, ModelConfig, RunConfig};

fn tiny() -> RunConfig {
    RunConfig {
        grid_rows: 2,
        grid_cols: 2,
        num_frames: 6,
        latent_dim: 16,
        encoder_layers: 1,
        encoder_heads: 2,
        feedforward_dim: 32,
        decoder_hidden: 32,
        batch_size: 4,
        epochs: 3,
        learning_rate: 1e-3,
        seed: 21,
        ..RunConfig::default()
    }
}

fn items(cfg: &RunConfig) -> Vec<TrainItem> {
    let opts = SynthOptions { grid_rows: 2, grid_cols: 2, num_frames: 6, ..SynthOptions::default() };
    let corpus = synth_corpus(1, &MotionClass::ALL, 2, &opts).unwrap();
    prepare_items(&corpus, cfg, &StubProvider::new(cfg.latent_dim, 0).unwrap()).unwrap()
}

fn run(cfg: &RunConfig, items: &[TrainItem], resume: Option<Checkpoint>) -> Checkpoint {
    train_items(items, cfg, TrainOptions { resume, ..Default::default() }).unwrap().checkpoint
}

fn bytes(c: &Checkpoint) -> Vec<u8> {
    c.to_bytes().unwrap()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = RunConfig { learning_rate: 0.0, ..tiny() };
    let out = run(&cfg, &items(&cfg), None);
    let init = Model::<f32>::init(&ModelConfig::from_run(&cfg).unwrap(), cfg.seed).unwrap();
    assert_eq!(out.model, init);
    assert_eq!(out.step, 9);
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = RunConfig { epochs: 0, ..tiny() };
    let out = train_items(&items(&cfg), &cfg, TrainOptions::default()).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.checkpoint.step, 0);
    assert_eq!(out.checkpoint.model, Model::init(&ModelConfig::from_run(&cfg).unwrap(), cfg.seed).unwrap());
}

#[test]
fn same_seed_same_checkpoint() {
    let cfg = tiny();
    let it = items(&cfg);
    assert_eq!(bytes(&run(&cfg, &it, None)), bytes(&run(&cfg, &it, None)));
    let other = RunConfig { seed: 22, ..tiny() };
    assert_ne!(bytes(&run(&cfg, &it, None)), bytes(&run(&other, &it, None)));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let cfg = RunConfig { epochs: 4, ..tiny() };
    let it = items(&cfg);
    let straight = run(&cfg, &it, None);
    let half = run(&RunConfig { epochs: 2, ..cfg.clone() }, &it, None);
    assert_eq!(half.epoch, 2);
    let resumed = run(&cfg, &it, Some(half));
    assert_eq!(bytes(&resumed), bytes(&straight));
}

#[test]
fn resume_rejects_a_different_architecture() {
    let cfg = tiny();
    let it = items(&cfg);
    let ckpt = run(&RunConfig { epochs: 1, ..cfg.clone() }, &it, None);
    let wider = RunConfig { decoder_hidden: 48, ..cfg };
    let err = train_items(&it, &wider, TrainOptions { resume: Some(ckpt), ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn text_recon_alone_leaves_the_encoder_untouched() {
    let mut cfg = tiny();
    cfg.set_toggles(LossToggles {
        recon: false,
        vel: false,
        range: false,
        text: false,
        image: false,
        text_recon: true,
    });
    let out = run(&cfg, &items(&cfg), None);
    let init = Model::<f32>::init(&ModelConfig::from_run(&cfg).unwrap(), cfg.seed).unwrap();
    let mut decoder_moved = false;
    for (name, t) in out.model.params().iter() {
        let before = init.params().get(name).unwrap();
        if name.starts_with("enc.") {
            assert_eq!(t, before, "{name} changed");
        } else {
            decoder_moved |= t != before;
        }
    }
    assert!(decoder_moved);
}

#[test]
fn small_steps_do_not_increase_the_batch_loss() {
    for seed in 0..20 {
        let cfg = RunConfig { seed, learning_rate: 1e-4, weight_decay: 0.0, ..tiny() };
        let it = items(&cfg);
        let batch: Vec<BatchItem> =
            it.iter().take(4).map(|item| BatchItem { item, caption: 0, use_overlay: seed % 2 == 0 }).collect();
        let mut state = TrainState::new(&cfg).unwrap();
        let first = train_step(&mut state, &batch, &cfg).unwrap().total;
        let second = train_step(&mut state, &batch, &cfg).unwrap().total;
        assert!(second <= first, "seed {seed}: {first} -> {second}");
    }
}

#[test]
fn non_finite_input_is_reported() {
    let cfg = tiny();
    let mut it = items(&cfg);
    it[0].traj[[1, 0]] = f32::NAN;
    let batch = [BatchItem { item: &it[0], caption: 0, use_overlay: false }];
    let mut state = TrainState::new(&cfg).unwrap();
    let before = state.model.clone();
    let err = train_step(&mut state, &batch, &cfg).unwrap_err();
    assert!(matches!(err, Error::NonFinite { step: 0, .. }), "{err}");
    assert_eq!(state.model, before);
    assert_eq!(state.step, 0);
}

#[test]
fn checkpoints_and_log_lines() {
    let cfg = RunConfig { checkpoint_every: 1, ..tiny() };
    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    let out = train_items(
        &items(&cfg),
        &cfg,
        TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), log: Some(&mut log), resume: None },
    )
    .unwrap();
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["epoch-0001.l2mc", "epoch-0002.l2mc", "final.l2mc"]);
    let mid = trajgen::model::load_checkpoint(dir.path().join("epoch-0002.l2mc")).unwrap();
    assert_eq!((mid.epoch, mid.step), (2, 6));

    let records: Vec<StepRecord> =
        String::from_utf8(log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records, out.history);
    assert_eq!(records.len(), 9);
    assert!(records.iter().enumerate().all(|(i, r)| r.step == i as u64 + 1 && r.epoch == i / 3));
}
