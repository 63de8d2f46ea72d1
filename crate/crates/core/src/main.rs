use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajgen::ablation::{run_study, Study};
use trajgen::embedding::{image_key, text_key, CachedProvider, EmbeddingProvider, StubProvider};
use trajgen::evalkit::{evaluate_generation, retrieval_recall, Units};
use trajgen::inference::{
    condition_from_text, generate, interpolate, overlay_condition, rank_classes, encode_sequence, slerp,
};
use trajgen::io::{read_corpus, read_embedding_cache, split_corpus, write_corpus, write_embedding_cache, EmbeddingCache};
use trajgen::model::{load_checkpoint, load_checkpoint_for, Checkpoint};
use trajgen::overlay::{render_sequence, Backgrounds, OverlayStyle};
use trajgen::training::{train_with, TrainOptions};
use trajgen::traj::{class_from_id, synth_corpus, GridSpec, MotionClass, SynthOptions};
use trajgen::{DecodeMode, Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "trajgen", version, about = "Text-conditioned point-trajectory generation, retrieval and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled trajectory corpus.
    SynthData(SynthArgs),
    /// Precompute caption and overlay-frame embeddings into a cache file.
    EmbedCache(EmbedCacheArgs),
    /// Train a model; writes final.l2mc, config.toml and train_log.jsonl.
    Train(TrainArgs),
    /// Generate a trajectory from text or from another trajectory's overlay.
    Generate(GenerateArgs),
    /// Text-to-trajectory Recall@K over a corpus.
    Retrieve(RetrieveArgs),
    /// Generate every corpus item from its caption and score it.
    Evaluate(EvaluateArgs),
    /// Decode trajectories along a line between two text conditions.
    Interpolate(InterpolateArgs),
    /// Zero-shot classification of corpus items by class-name similarity.
    Classify(ClassifyArgs),
    /// Render overlay frames of a trajectory file as PNGs.
    Render(RenderArgs),
    /// Train and compare configuration variants (loss terms, L1/L2, decoding).
    Ablate(AblateArgs),
}

#[derive(Args)]
struct ProviderArgs {
    /// Serve embeddings from this cache instead of the built-in stub.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Seed of the stub provider.
    #[arg(long, default_value_t = 0)]
    stub_seed: u64,
}

impl ProviderArgs {
    fn build(&self, dim: usize) -> Result<Box<dyn EmbeddingProvider>> {
        match &self.cache {
            Some(path) => Ok(Box::new(CachedProvider::new(read_embedding_cache(path)?, dim)?)),
            None => Ok(Box::new(StubProvider::new(dim, self.stub_seed)?)),
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set latent_dim=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Format(format!("config: {e}")))?;
        for item in &self.overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{item}` is not KEY=VALUE")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.trim().to_string(), value);
        }
        let merged = toml::to_string(&table).map_err(|e| Error::Format(e.to_string()))?;
        RunConfig::from_toml_str(&merged)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated class names, or `all`.
    #[arg(long, default_value = "all")]
    classes: String,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    grid_rows: usize,
    #[arg(long, default_value_t = 6)]
    grid_cols: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Frame size as WxH.
    #[arg(long, default_value = "256x256")]
    frame: String,
    /// Standard deviation of per-point jitter in pixels.
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
}

#[derive(Args)]
struct EmbedCacheArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// `stub` computes embeddings; `file` copies them from `--from`.
    #[arg(long, default_value = "stub")]
    provider: String,
    /// Source cache for `--provider file`.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    stub_seed: u64,
    /// Extra texts to embed (class names, prompts). Repeatable.
    #[arg(long = "text")]
    texts: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Text condition.
    #[arg(long, conflicts_with = "overlay_from")]
    text: Option<String>,
    /// Condition on the overlay rendering of the first sequence in this file.
    #[arg(long)]
    overlay_from: Option<PathBuf>,
    /// Start box x0,y0,x1,y1 in pixels.
    #[arg(long)]
    bbox: String,
    /// Frame size as WxH.
    #[arg(long)]
    frame: String,
    /// `ar` or `direct`; defaults to the checkpoint's decoder.
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write overlay PNGs to this directory.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "1,3,5,10")]
    k: String,
    /// Feed overlay features to the encoder as well.
    #[arg(long)]
    with_overlay: bool,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Report path stem; writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Report distances in normalized units instead of pixels.
    #[arg(long)]
    normalized: bool,
    /// Retrieval cutoffs included in the report.
    #[arg(long, default_value = "1,3,5,10")]
    k: String,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    text_a: String,
    #[arg(long)]
    text_b: String,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    alphas: String,
    /// Spherical instead of linear interpolation.
    #[arg(long)]
    slerp: bool,
    #[arg(long)]
    bbox: String,
    #[arg(long)]
    frame: String,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Corpus file with one trajectory per alpha.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated class names, or `all` for the synthetic classes.
    #[arg(long, default_value = "all")]
    classes: String,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value = "color=0,255,255,opacity=0.5")]
    style: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus; if absent, `--corpus` is split with `--train-frac`.
    #[arg(long)]
    test_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// `loss`, `recon`, `decoding` or `all`.
    #[arg(long, default_value = "all")]
    study: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Markdown output; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::invalid(format!("bad {what} `{v}`"))))
        .collect()
}

fn parse_frame(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| Error::invalid(format!("frame `{s}` is not WxH")))?;
    let w: u32 = w.parse().map_err(|_| Error::invalid(format!("bad frame width `{w}`")))?;
    let h: u32 = h.parse().map_err(|_| Error::invalid(format!("bad frame height `{h}`")))?;
    if w == 0 || h == 0 {
        return Err(Error::invalid("frame dimensions must be positive"));
    }
    Ok((w, h))
}

fn parse_bbox(s: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = parse_list(s, "bbox coordinate")?;
    v.try_into().map_err(|_| Error::invalid("bbox needs four values x0,y0,x1,y1"))
}

fn parse_classes(s: &str) -> Result<Vec<MotionClass>> {
    if s == "all" {
        return Ok(MotionClass::ALL.to_vec());
    }
    s.split(',').map(|c| c.trim().parse()).collect()
}

fn parse_mode(s: Option<&str>, ckpt: &Checkpoint) -> Result<DecodeMode> {
    match s {
        Some(m) => m.parse(),
        None => Ok(ckpt.model.config().decode_mode),
    }
}

fn write_pngs(seq: &trajgen::TrajectorySequence, style: &OverlayStyle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in render_sequence(seq, Backgrounds::Solid([255, 255, 255]), style)?.iter().enumerate() {
        frame.write_png(dir.join(format!("frame-{t:03}.png")))?;
    }
    Ok(())
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let (width_px, height_px) = parse_frame(&a.frame)?;
    let opts = SynthOptions {
        grid_rows: a.grid_rows,
        grid_cols: a.grid_cols,
        num_frames: a.frames,
        width_px,
        height_px,
        jitter_px: a.jitter,
    };
    let corpus = synth_corpus(a.per_class, &parse_classes(&a.classes)?, a.seed, &opts)?;
    write_corpus(&corpus, &a.out)?;
    println!("wrote {} sequences to {}", corpus.len(), a.out.display());
    Ok(())
}

fn embed_cache(a: EmbedCacheArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let cfg = a.config.load()?;
    let style = cfg.overlay_style();
    let source: Box<dyn EmbeddingProvider> = match a.provider.as_str() {
        "stub" => Box::new(StubProvider::new(a.dim, a.stub_seed)?),
        "file" => {
            let from = a.from.as_ref().ok_or_else(|| Error::invalid("--provider file needs --from"))?;
            Box::new(CachedProvider::new(read_embedding_cache(from)?, a.dim)?)
        }
        other => return Err(Error::invalid(format!("unknown provider `{other}`"))),
    };
    let mut cache = EmbeddingCache::new(a.dim);
    let add_text = |cache: &mut EmbeddingCache, text: &str| -> Result<()> {
        let key = text_key(text);
        if !cache.contains(&key) {
            cache.insert(key, source.embed_text(text)?.into_vec())?;
        }
        Ok(())
    };
    for text in &a.texts {
        add_text(&mut cache, text)?;
    }
    for seq in &corpus {
        for c in &seq.captions {
            add_text(&mut cache, c)?;
        }
        for frame in render_sequence(seq, Backgrounds::Solid([255, 255, 255]), &style)? {
            let key = image_key(&frame);
            if !cache.contains(&key) {
                cache.insert(key, source.embed_image(&frame)?.into_vec())?;
            }
        }
    }
    write_embedding_cache(&cache, &a.out)?;
    println!("wrote {} embeddings to {}", cache.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let provider = a.provider.build(cfg.latent_dim)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let cfg_path = a.out.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let log_path = a.out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let resume = a.resume.as_ref().map(|p| load_checkpoint_for(p, &cfg)).transpose()?;
    let out = train_with(
        &corpus,
        &cfg,
        provider.as_ref(),
        TrainOptions { checkpoint_dir: Some(a.out.clone()), log: Some(&mut log), resume },
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    match out.history.last() {
        Some(last) => println!(
            "trained {} steps ({} epochs); final total loss {:.6}",
            out.checkpoint.step, out.checkpoint.epoch, last.losses.total
        ),
        None => println!("no training steps run; wrote initial checkpoint"),
    }
    println!("checkpoint: {}", a.out.join("final.l2mc").display());
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let provider = a.provider.build(ckpt.config.latent_dim)?;
    let (w, h) = parse_frame(&a.frame)?;
    let bbox = parse_bbox(&a.bbox)?;
    let mcfg = ckpt.model.config();
    let grid = GridSpec { rows: mcfg.grid_rows, cols: mcfg.grid_cols, bbox_px: bbox };
    let style = ckpt.config.overlay_style();
    let (cond, description) = match (&a.text, &a.overlay_from) {
        (Some(text), _) => (condition_from_text(provider.as_ref(), text)?, text.clone()),
        (None, Some(path)) => {
            let src = read_corpus(path)?;
            let first = src.first().ok_or_else(|| Error::invalid("overlay source corpus is empty"))?;
            (overlay_condition(provider.as_ref(), first, &style)?, format!("overlay of {}", first.id))
        }
        (None, None) => return Err(Error::invalid("give --text or --overlay-from")),
    };
    let mode = parse_mode(a.mode.as_deref(), &ckpt)?;
    let seq = generate(&ckpt.model, &cond, &grid, w, h, mode, Some(&description))?;
    write_corpus(std::slice::from_ref(&seq), &a.out)?;
    if let Some(dir) = &a.render {
        write_pngs(&seq, &style, dir)?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let provider = a.provider.build(ckpt.config.latent_dim)?;
    let corpus = read_corpus(&a.corpus)?;
    let ks: Vec<usize> = parse_list(&a.k, "K")?;
    let style = ckpt.config.overlay_style();
    let table = retrieval_recall(&ckpt.model, provider.as_ref(), &corpus, &ks, a.with_overlay.then_some(&style))?;
    if let [only] = table.entries.as_slice() {
        println!("{:.2}", only.recall);
    } else {
        for e in &table.entries {
            println!("R@{}\t{:.2}", e.k, e.recall);
        }
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let provider = a.provider.build(ckpt.config.latent_dim)?;
    let corpus = read_corpus(&a.corpus)?;
    let units = if a.normalized { Units::Normalized } else { Units::Pixels };
    let mut report = evaluate_generation(&ckpt.model, provider.as_ref(), &corpus, ckpt.model.config().decode_mode, units)?;
    let ks: Vec<usize> = parse_list(&a.k, "K")?;
    report.retrieval = Some(retrieval_recall(&ckpt.model, provider.as_ref(), &corpus, &ks, None)?);
    report.write(&a.out)?;
    let agg = &report.aggregates;
    println!(
        "ADE {:.3}  FDE {:.3}  smoothness {:.4}  clip sim {:.4}  static ADE {:.3}  gen {:.4}s/seq",
        agg.ade.mean, agg.fde.mean, agg.smoothness.mean, agg.clip_sim.mean, agg.static_ade.mean, agg.gen_seconds.mean
    );
    if let Some(r) = &report.retrieval {
        let cells: Vec<String> = r.entries.iter().map(|e| format!("R@{} {:.2}", e.k, e.recall)).collect();
        println!("{}", cells.join("  "));
    }
    println!("report: {}", a.out.with_extension("json").display());
    Ok(())
}

fn interpolate_cmd(a: InterpolateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let provider = a.provider.build(ckpt.config.latent_dim)?;
    let (w, h) = parse_frame(&a.frame)?;
    let mcfg = ckpt.model.config();
    let grid = GridSpec { rows: mcfg.grid_rows, cols: mcfg.grid_cols, bbox_px: parse_bbox(&a.bbox)? };
    let za = provider.embed_text(&a.text_a)?;
    let zb = provider.embed_text(&a.text_b)?;
    let alphas: Vec<f64> = parse_list(&a.alphas, "alpha")?;
    let mut out = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let z = if a.slerp { slerp(&za, &zb, alpha)? } else { interpolate(&za, &zb, alpha)? };
        let desc = format!("{} -> {} @ {alpha}", a.text_a, a.text_b);
        let mut seq = generate(&ckpt.model, &z, &grid, w, h, mcfg.decode_mode, Some(&desc))?;
        seq.id = format!("alpha={alpha}");
        out.push(seq);
    }
    write_corpus(&out, &a.out)?;
    println!("wrote {} trajectories to {}", out.len(), a.out.display());
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let provider = a.provider.build(ckpt.config.latent_dim)?;
    let corpus = read_corpus(&a.corpus)?;
    let names: Vec<String> = if a.classes == "all" {
        MotionClass::ALL.iter().map(|c| c.name().to_string()).collect()
    } else {
        a.classes.split(',').map(|s| s.trim().to_string()).collect()
    };
    let (mut top1, mut top5, mut total) = (0usize, 0usize, 0usize);
    for seq in &corpus {
        let Some(truth) = class_from_id(&seq.id) else {
            log::warn!("skipping `{}`: no class prefix in id", seq.id);
            continue;
        };
        let z = encode_sequence(&ckpt.model, seq, None)?;
        let ranked = rank_classes(&z, provider.as_ref(), &names)?;
        let pos = ranked.iter().position(|(n, _)| n == truth.name());
        total += 1;
        top1 += usize::from(pos == Some(0));
        top5 += usize::from(pos.is_some_and(|p| p < 5));
    }
    if total == 0 {
        return Err(Error::invalid("no labeled sequences (ids of the form <class>/<index>)"));
    }
    println!("top1\t{:.2}", 100.0 * top1 as f64 / total as f64);
    println!("top5\t{:.2}", 100.0 * top5 as f64 / total as f64);
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let style = OverlayStyle::parse(&a.style)?;
    let corpus = read_corpus(&a.traj)?;
    for (i, seq) in corpus.iter().enumerate() {
        let dir = if corpus.len() == 1 { a.out.clone() } else { a.out.join(format!("{i:04}")) };
        write_pngs(seq, &style, &dir)?;
    }
    println!("rendered {} sequences to {}", corpus.len(), a.out.display());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let (train, test) = match &a.test_corpus {
        Some(p) => (corpus, read_corpus(p)?),
        None => split_corpus(&corpus, a.train_frac, a.seed)?,
    };
    let provider = a.provider.build(cfg.latent_dim)?;
    let studies = if a.study == "all" { Study::ALL.to_vec() } else { vec![a.study.parse()?] };
    let mut md = String::new();
    for study in studies {
        let table = run_study(study, &cfg, &train, &test, provider.as_ref())?;
        md.push_str(&table.to_markdown());
        md.push('\n');
    }
    print!("{md}");
    if let Some(path) = &a.out {
        fs::write(path, &md).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::EmbedCache(a) => embed_cache(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Interpolate(a) => interpolate_cmd(a),
        Command::Classify(a) => classify(a),
        Command::Render(a) => render(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
