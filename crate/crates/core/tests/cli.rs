use std::path::Path;
use std::process::{Command, Output};

use trajgen::io::{read_corpus, read_embedding_cache, write_embedding_cache, EmbeddingCache};
use trajgen::model::{save_checkpoint, Checkpoint};
use trajgen::{Model, ModelConfig, RunConfig};

const SMALL: [&str; 9] = [
    "grid_rows=2",
    "grid_cols=2",
    "num_frames=8",
    "latent_dim=16",
    "encoder_layers=1",
    "encoder_heads=2",
    "feedforward_dim=32",
    "decoder_hidden=32",
    "batch_size=8",
];

fn trajgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajgen")).args(args).output().unwrap()
}

fn with_small(mut args: Vec<String>) -> Vec<String> {
    for s in SMALL {
        args.push("--set".into());
        args.push(s.into());
    }
    args
}

fn run_ok(args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = trajgen(&refs);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn synth(dir: &Path, name: &str, seed: u64) -> String {
    let path = s(&dir.join(name));
    run_ok(&[
        "synth-data", "--per-class", "2", "--seed", &seed.to_string(), "--frames", "8", "--grid-rows", "2",
        "--grid-cols", "2", "--out", &path,
    ]
    .map(String::from));
    path
}

fn small_config() -> RunConfig {
    let text: String = SMALL.iter().map(|kv| format!("{kv}\n")).collect();
    RunConfig::from_toml_str(&text).unwrap()
}

#[test]
fn pipeline_emits_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "corpus.l2m", 1);
    let cache = s(&dir.path().join("cache.l2me"));
    run_ok(&with_small(
        ["embed-cache", "--corpus", &corpus, "--dim", "16", "--out", &cache].map(String::from).to_vec(),
    ));
    let run_dir = dir.path().join("run");
    let out = run_ok(&with_small(
        ["train", "--corpus", &corpus, "--cache", &cache, "--out", &s(&run_dir), "--seed", "4", "--epochs", "2"]
            .map(String::from)
            .to_vec(),
    ));
    assert!(out.contains("trained"));
    for f in ["final.l2mc", "config.toml", "train_log.jsonl"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let saved = RunConfig::load(run_dir.join("config.toml")).unwrap();
    assert_eq!((saved.seed, saved.epochs, saved.latent_dim), (4, 2, 16));
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let ckpt = s(&run_dir.join("final.l2mc"));
    let report = dir.path().join("report");
    run_ok(&["evaluate", "--ckpt", &ckpt, "--corpus", &corpus, "--out", &s(&report), "--cache", &cache].map(String::from));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 20);
    assert!(json["aggregates"]["ade"]["mean"].as_f64().unwrap().is_finite());
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);

    let single = run_ok(&["retrieve", "--ckpt", &ckpt, "--corpus", &corpus, "--k", "1", "--cache", &cache].map(String::from));
    let pct: f64 = single.trim().parse().unwrap();
    assert!((0.0..=100.0).contains(&pct));
    let table = run_ok(&["retrieve", "--ckpt", &ckpt, "--corpus", &corpus, "--cache", &cache].map(String::from));
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().last().unwrap().starts_with("R@10\t"));

    let cls = run_ok(&["classify", "--ckpt", &ckpt, "--corpus", &corpus].map(String::from));
    assert!(cls.starts_with("top1\t") && cls.contains("\ntop5\t"));

    let interp = s(&dir.path().join("interp.l2m"));
    run_ok(&[
        "interpolate", "--ckpt", &ckpt, "--text-a", "moving left", "--text-b", "moving right", "--alphas", "0,0.5,1",
        "--bbox", "100,100,140,140", "--frame", "256x256", "--out", &interp,
    ]
    .map(String::from));
    let seqs = read_corpus(&interp).unwrap();
    assert_eq!(seqs.iter().map(|q| q.id.as_str()).collect::<Vec<_>>(), ["alpha=0", "alpha=0.5", "alpha=1"]);

    let again = dir.path().join("run2");
    run_ok(&with_small(
        ["train", "--corpus", &corpus, "--cache", &cache, "--out", &s(&again), "--seed", "4", "--epochs", "2"]
            .map(String::from)
            .to_vec(),
    ));
    assert_eq!(std::fs::read(again.join("final.l2mc")).unwrap(), std::fs::read(run_dir.join("final.l2mc")).unwrap());
}

#[test]
fn synth_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.l2m", 3);
    let b = synth(dir.path(), "b.l2m", 3);
    let c = synth(dir.path(), "c.l2m", 4);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn zero_head_generates_a_static_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let mut model = Model::<f32>::init(&ModelConfig::from_run(&cfg).unwrap(), 0).unwrap();
    model.zero_final_layer();
    let ckpt = dir.path().join("zero.l2mc");
    save_checkpoint(&Checkpoint { config: cfg, model, step: 0, epoch: 0, optimizer: None }, &ckpt).unwrap();
    let out = dir.path().join("gen.l2m");
    let frames = dir.path().join("frames");
    run_ok(&[
        "generate", "--ckpt", &s(&ckpt), "--text", "object moving left", "--bbox", "60,80,120,130", "--frame",
        "256x192", "--mode", "ar", "--out", &s(&out), "--render", &s(&frames),
    ]
    .map(String::from));
    let seq = read_corpus(&out).unwrap().remove(0);
    assert_eq!((seq.width_px, seq.height_px, seq.num_frames(), seq.num_points()), (256, 192, 8, 4));
    let first = seq.points_px.index_axis(ndarray::Axis(0), 0).to_owned();
    for t in 1..8 {
        let d = (&seq.points_px.index_axis(ndarray::Axis(0), t) - &first).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(d < 1e-6, "frame {t} moved {d}");
    }
    let xs: Vec<f64> = first.column(0).to_vec();
    assert_eq!(xs.iter().cloned().fold(f64::INFINITY, f64::min), 60.0);
    assert_eq!(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 120.0);
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 8);

    let wrong_mode = trajgen(&[
        "generate", "--ckpt", &s(&ckpt), "--text", "x", "--bbox", "60,80,120,130", "--frame", "256x192", "--mode",
        "direct", "--out", &s(&out),
    ]);
    assert_eq!(wrong_mode.status.code(), Some(2));
}

#[test]
fn render_writes_one_png_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.l2m", 1);
    let one = dir.path().join("one.l2m");
    trajgen::io::write_corpus(&read_corpus(&corpus).unwrap()[..1], &one).unwrap();
    let out = dir.path().join("png");
    run_ok(&["render", "--traj", &s(&one), "--style", "color=255,0,0,opacity=1", "--out", &s(&out)].map(String::from));
    let mut names: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    assert_eq!(names[0], "frame-000.png");
    let bytes = std::fs::read(out.join("frame-007.png")).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn exit_codes() {
    assert_eq!(trajgen(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(trajgen(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(trajgen(&["train", "--corpus", "x.l2m", "--out", "o"]).status.code(), Some(1), "missing --seed");
    let missing = trajgen(&["retrieve", "--ckpt", "/nonexistent/model.l2mc", "--corpus", "c.l2m"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/model.l2mc"));
    let bad_style = trajgen(&["render", "--traj", "t.l2m", "--style", "color=1,2", "--out", "o"]);
    assert_eq!(bad_style.status.code(), Some(2));

    let version = trajgen(&["--version"]);
    assert_eq!(version.status.code(), Some(0));
    assert_eq!(String::from_utf8(version.stdout).unwrap().trim(), format!("trajgen {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn help_lists_every_flag() {
    let expected: [(&str, &[&str]); 10] = [
        ("synth-data", &["--classes", "--per-class", "--seed", "--out", "--frames", "--frame", "--jitter"]),
        ("embed-cache", &["--corpus", "--provider", "--from", "--dim", "--text", "--config", "--set", "--out"]),
        ("train", &["--config", "--set", "--corpus", "--cache", "--stub-seed", "--out", "--seed", "--epochs", "--resume"]),
        ("generate", &["--ckpt", "--text", "--overlay-from", "--bbox", "--frame", "--mode", "--out", "--render"]),
        ("retrieve", &["--ckpt", "--corpus", "--k", "--with-overlay", "--cache"]),
        ("evaluate", &["--ckpt", "--corpus", "--out", "--normalized", "--k"]),
        ("interpolate", &["--ckpt", "--text-a", "--text-b", "--alphas", "--slerp", "--bbox", "--frame", "--out"]),
        ("classify", &["--ckpt", "--corpus", "--classes"]),
        ("render", &["--traj", "--style", "--out"]),
        ("ablate", &["--config", "--corpus", "--test-corpus", "--train-frac", "--study", "--seed", "--out"]),
    ];
    for (cmd, flags) in expected {
        let out = trajgen(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        for f in flags {
            assert!(text.contains(f), "`{cmd} --help` does not mention {f}");
        }
    }
}

#[test]
fn resume_with_another_architecture_fails() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.l2m", 1);
    let run_dir = dir.path().join("run");
    run_ok(&with_small(
        ["train", "--corpus", &corpus, "--out", &s(&run_dir), "--seed", "1", "--epochs", "1"].map(String::from).to_vec(),
    ));
    let mut args = with_small(
        ["train", "--corpus", &corpus, "--out", &s(&dir.path().join("run2")), "--seed", "1", "--epochs", "2"]
            .map(String::from)
            .to_vec(),
    );
    args.extend(["--set", "decoder_hidden=48", "--resume"].map(String::from));
    args.push(s(&run_dir.join("final.l2mc")));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = trajgen(&refs);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn overflowing_embeddings_exit_with_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.l2m", 1);
    let cache = dir.path().join("cache.l2me");
    run_ok(&with_small(
        ["embed-cache", "--corpus", &corpus, "--dim", "16", "--out", &s(&cache)].map(String::from).to_vec(),
    ));
    let src = read_embedding_cache(&cache).unwrap();
    let mut huge = EmbeddingCache::new(16);
    for (k, _) in src.iter() {
        huge.insert(k, vec![f32::MAX; 16]).unwrap();
    }
    write_embedding_cache(&huge, &cache).unwrap();
    let args = with_small(
        ["train", "--corpus", &corpus, "--cache", &s(&cache), "--out", &s(&dir.path().join("run")), "--seed", "1"]
            .map(String::from)
            .to_vec(),
    );
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = trajgen(&refs);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}
