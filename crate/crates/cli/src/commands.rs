use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use scfa_core::encoder::Model;
use scfa_core::frame_pipeline::{aggregate_view, load_dataset, FrameSequence};
use scfa_core::gradcheck::run_gradcheck;
use scfa_core::seed::derive_seed;
use scfa_core::training::{
    export_features, extract_features, import_features, prepare_dataset, probe_feature_matrix,
    repeated_finetune, repeated_linear_probe, split_videos, train_contrastive, AccuracyReport,
};
use scfa_core::{
    coverage_probability, gen_synthetic_dataset, monte_carlo_coverage, Error, SynthConfig,
    TrainConfig,
};

use crate::{
    AggregateArgs, Cli, Command, CoverageArgs, FinetuneArgs, GenSynthArgs, MontageArgs, ProbeArgs,
    TrainArgs, TrainFlags,
};

/// Tolerance reported as PASS by `gradcheck`.
const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// A failed invocation: error category, exit status and one-line message.
#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn check(message: impl Into<String>) -> Self {
        Self {
            kind: "check-failed".into(),
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = e.kind();
        let code = match kind {
            "io" | "image" | "empty-directory" | "frame-dimensions" | "frame-name" | "manifest"
            | "config" | "invalid-argument" => 2,
            _ => 1,
        };
        // keep the prefix line single-line even if a message embeds newlines
        Self {
            kind: kind.into(),
            code,
            message: e.to_string().replace('\n', " "),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn config_error(message: impl Into<String>) -> Failure {
    Error::Config(message.into()).into()
}

pub fn run(cli: Cli) -> CmdResult {
    let ctx = Context {
        config: cli.config,
        seed: cli.seed,
        overrides: cli.overrides,
    };
    match cli.command {
        Command::GenSynth(args) => gen_synth(&ctx, args),
        Command::Aggregate(args) => aggregate(&ctx, args),
        Command::Train(args) => train(&ctx, args),
        Command::Probe(args) => probe(&ctx, args),
        Command::Finetune(args) => finetune(&ctx, args),
        Command::Coverage(args) => coverage(&ctx, args),
        Command::Gradcheck => gradcheck(&ctx),
        Command::Montage(args) => montage(&ctx, args),
    }
}

/// Global options shared by every subcommand.
struct Context {
    config: Option<PathBuf>,
    seed: Option<u64>,
    overrides: Vec<String>,
}

impl Context {
    fn config_text(&self) -> std::result::Result<String, Failure> {
        match &self.config {
            Some(path) => fs::read_to_string(path).map_err(|e| Error::io(path, e).into()),
            None => Ok(String::new()),
        }
    }

    fn overrides(&self) -> std::result::Result<Vec<(&str, &str)>, Failure> {
        self.overrides
            .iter()
            .map(|o| {
                o.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got {o:?}")))
            })
            .collect()
    }

    /// Defaults, then the config file, then `--set`, then dedicated flags, then `--seed`.
    fn train_config(&self, flags: &TrainFlags) -> std::result::Result<TrainConfig, Failure> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&self.config_text()?)?;
        for (k, v) in self.overrides()? {
            cfg.set(k, v)?;
        }
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = &flags.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        flag!(frames_per_view);
        flag!(grid_rows);
        flag!(grid_cols);
        flag!(cell_h);
        flag!(cell_w);
        flag!(batch_size);
        flag!(epochs);
        flag!(lr_max);
        flag!(lr_min);
        flag!(tau);
        flag!(proj_dim);
        flag!(split_seed);
        flag!(eval_seeds);
        flag!(probe_epochs);
        flag!(probe_views);
        flag!(finetune_epochs);
        if let Some(m) = &flags.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(mode) = &flags.sampling_mode {
            cfg.sampling_mode = mode.parse()?;
        }
        if flags.linear_projection {
            cfg.linear_projection = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn echo(command: &str, kv: &str) {
    println!("# scfa {command} effective config");
    print!("{kv}");
    println!("# end config");
}

fn require_manifest(cfg: &TrainConfig) -> std::result::Result<&Path, Failure> {
    cfg.manifest.as_deref().ok_or_else(|| {
        config_error("no manifest given (use --manifest or manifest=... in the config file)")
    })
}

fn num_classes(videos: &[FrameSequence]) -> usize {
    videos.iter().map(|v| v.label + 1).max().unwrap_or(0)
}

/// Load and resize the manifest's videos; returns them with the class count.
fn load_prepared(cfg: &TrainConfig) -> std::result::Result<(Vec<FrameSequence>, usize), Failure> {
    let manifest = require_manifest(cfg)?;
    let videos = load_dataset(manifest)?;
    let classes = num_classes(&videos);
    if classes < 2 {
        return Err(config_error(format!(
            "{} has fewer than two classes",
            manifest.display()
        )));
    }
    Ok((prepare_dataset(&videos, &cfg.layout()?)?, classes))
}

fn print_report(what: &str, report: &AccuracyReport) {
    for (k, a) in report.per_seed.iter().enumerate() {
        println!("{what} seed {k}: accuracy {a:.4}");
    }
    println!("{what} accuracy: {report}");
    println!(
        "accuracy_mean={:.6} accuracy_std={:.6}",
        report.mean(),
        report.std()
    );
}

fn gen_synth(ctx: &Context, args: GenSynthArgs) -> CmdResult {
    let mut cfg = SynthConfig::default();
    for line in ctx.config_text()?.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_error(format!("expected key=value, got {line:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in ctx.overrides()? {
        cfg.set(k, v)?;
    }
    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        };
    }
    flag!(num_classes);
    flag!(videos_per_class);
    flag!(frames);
    flag!(height);
    flag!(width);
    flag!(noise);
    flag!(speed_jitter);
    flag!(shape_scale);
    flag!(color_jitter);
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    echo(
        "gen-synth",
        &format!("{}out={}\n", cfg.to_kv(), args.out.display()),
    );
    let entries = gen_synthetic_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} videos and {}",
        entries.len(),
        args.out.join("manifest.csv").display()
    );
    Ok(())
}

fn aggregate(ctx: &Context, args: AggregateArgs) -> CmdResult {
    let cfg = ctx.train_config(&args.train)?;
    echo(
        "aggregate",
        &format!(
            "{}views={}\nout={}\n",
            cfg.to_kv(),
            args.views,
            args.out.display()
        ),
    );
    let videos = load_dataset(require_manifest(&cfg)?)?;
    let (layout, plan) = (cfg.layout()?, cfg.plan());
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut written = 0;
    for video in &videos {
        for k in 0..args.views {
            let draw = derive_seed(
                cfg.seed,
                &[
                    b"aggregate",
                    video.video_id.as_bytes(),
                    &(k as u64).to_le_bytes(),
                ],
            );
            let view = aggregate_view(video, &plan, &layout, draw)?;
            let path = args.out.join(view.file_name());
            view.pixels.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                source: e,
            })?;
            written += 1;
        }
    }
    println!("wrote {written} grid images to {}", args.out.display());
    Ok(())
}

fn train(ctx: &Context, args: TrainArgs) -> CmdResult {
    let mut cfg = ctx.train_config(&args.train)?;
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| config_error("no output directory given (use --out or out_dir=...)"))?;
    echo("train", &cfg.to_kv());
    let (videos, classes) = load_prepared(&cfg)?;
    let (train_refs, test_refs) = split_videos(&videos, &cfg)?;
    println!(
        "{} videos, {classes} classes: {} for pretraining, {} held out",
        videos.len(),
        train_refs.len(),
        test_refs.len()
    );
    let train_set: Vec<FrameSequence> = train_refs.into_iter().cloned().collect();
    let outcome = train_contrastive(&train_set, classes, &cfg, Some(&out))?;
    let first = outcome.history.first().map_or(f64::NAN, |r| r.mean_loss);
    let last = outcome.history.last().map_or(f64::NAN, |r| r.mean_loss);
    println!(
        "loss {first:.6} -> {last:.6} over {} steps; best epoch {}",
        outcome.steps, outcome.best_epoch
    );
    for name in [
        "final.ckpt",
        "best.ckpt",
        "metrics.csv",
        "timing.csv",
        "config.txt",
    ] {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

/// The encoder to evaluate: a checkpoint, or a fresh initialisation.
fn resolve_model(
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    random_init: bool,
    classes: usize,
) -> std::result::Result<Model, Failure> {
    let model = match (checkpoint, random_init) {
        (Some(path), _) => Model::load(
            path,
            (cfg.grid_rows * cfg.cell_h) as usize,
            (cfg.grid_cols * cfg.cell_w) as usize,
        )?,
        (None, true) => Model::new(cfg.encoder_config(classes), cfg.seed)?,
        (None, false) => return Err(config_error("give --checkpoint or --random-init")),
    };
    if model.config.num_classes < classes {
        return Err(Error::shape(
            "classifier outputs",
            classes.to_string(),
            model.config.num_classes.to_string(),
        )
        .into());
    }
    Ok(model)
}

fn probe(ctx: &Context, args: ProbeArgs) -> CmdResult {
    let cfg = ctx.train_config(&args.train)?;
    let mut kv = cfg.to_kv();
    for (key, value) in [
        ("checkpoint", &args.checkpoint),
        ("features", &args.features),
        ("export_features", &args.export_features),
    ] {
        if let Some(p) = value {
            kv.push_str(&format!("{key}={}\n", p.display()));
        }
    }
    kv.push_str(&format!("random_init={}\n", args.random_init));
    echo("probe", &kv);

    if let Some(path) = &args.features {
        let dim = cfg.encoder_config(2).feature_dim();
        let (x, labels) = import_features(path, Some(dim))?;
        let classes = args
            .num_classes
            .unwrap_or_else(|| labels.iter().map(|l| l + 1).max().unwrap_or(0));
        let report = probe_feature_matrix(&x, &labels, classes, &cfg)?;
        print_report("probe", &report);
        return Ok(());
    }
    let (videos, classes) = load_prepared(&cfg)?;
    let model = resolve_model(&cfg, args.checkpoint.as_deref(), args.random_init, classes)?;
    if let Some(path) = &args.export_features {
        let refs: Vec<&FrameSequence> = videos.iter().collect();
        let x = extract_features(&model, &refs, &cfg, 1, "export")?;
        let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
        export_features(path, &x, &labels)?;
        println!("wrote features {:?} to {}", x.dim(), path.display());
    }
    let report = repeated_linear_probe(&model, &videos, &cfg)?;
    print_report("probe", &report);
    Ok(())
}

fn finetune(ctx: &Context, args: FinetuneArgs) -> CmdResult {
    let cfg = ctx.train_config(&args.train)?;
    let mut kv = cfg.to_kv();
    if let Some(p) = &args.checkpoint {
        kv.push_str(&format!("checkpoint={}\n", p.display()));
    }
    kv.push_str(&format!("random_init={}\n", args.random_init));
    echo("finetune", &kv);
    let (videos, classes) = load_prepared(&cfg)?;
    let model = resolve_model(&cfg, args.checkpoint.as_deref(), args.random_init, classes)?;
    let report = repeated_finetune(&model, &videos, &cfg)?;
    print_report("finetune", &report);
    Ok(())
}

fn coverage(ctx: &Context, args: CoverageArgs) -> CmdResult {
    let seed = ctx.seed.unwrap_or(0);
    let rows: Vec<(usize, usize, usize)> =
        match (args.frame_count, args.frames_per_view, args.batches) {
            (Some(t), Some(y), Some(b)) => vec![(t, y, b)],
            (None, None, None) => {
                let mut grid = Vec::new();
                for t in [2, 4, 16] {
                    for y in [1, 4, 16] {
                        for b in [1, 5, 10] {
                            grid.push((t, y, b));
                        }
                    }
                }
                grid
            }
            _ => {
                return Err(config_error(
                    "give all of --T, --y and --B, or none for the default grid",
                ))
            }
        };
    let grid = rows
        .iter()
        .map(|(t, y, b)| format!("{t}/{y}/{b}"))
        .collect::<Vec<_>>()
        .join(",");
    echo(
        "coverage",
        &format!(
            "grid_T/y/B={grid}\ntrials={}\nk={}\nseed={seed}\nsampling_mode=with_replacement\n",
            args.trials, args.k
        ),
    );
    println!(
        "{:>4} {:>4} {:>4} {:>14} {:>14} {:>12} {:>8}  status",
        "T", "y", "B", "closed_form", "monte_carlo", "std_err", "z"
    );
    let mut failures = 0;
    for &(t, y, b) in &rows {
        let closed = coverage_probability(t, y, b);
        let row_seed = derive_seed(
            seed,
            &[
                b"coverage",
                &(t as u64).to_le_bytes(),
                &(y as u64).to_le_bytes(),
                &(b as u64).to_le_bytes(),
            ],
        );
        let mc = monte_carlo_coverage(t, y, b, args.trials, row_seed)?;
        let se = mc
            .std_err
            .max((closed * (1.0 - closed) / mc.trials as f64).sqrt());
        let z = if se > 0.0 {
            (mc.estimate - closed).abs() / se
        } else {
            0.0
        };
        let ok = mc.agrees_with(closed, args.k);
        failures += usize::from(!ok);
        println!(
            "{t:>4} {y:>4} {b:>4} {closed:>14.6e} {:>14.6e} {:>12.3e} {z:>8.3}  {}",
            mc.estimate,
            mc.std_err,
            if ok { "ok" } else { "DISAGREE" }
        );
    }
    if failures > 0 {
        return Err(Failure::check(format!(
            "{failures} of {} rows outside {} standard errors",
            rows.len(),
            args.k
        )));
    }
    println!("all {} rows within {} standard errors", rows.len(), args.k);
    Ok(())
}

fn gradcheck(ctx: &Context) -> CmdResult {
    let seed = ctx.seed.unwrap_or(0);
    echo(
        "gradcheck",
        &format!(
            "seed={seed}\ntolerance={GRADCHECK_TOLERANCE:e}\nstep={:e}\n",
            scfa_core::gradcheck::FD_STEP
        ),
    );
    let report = run_gradcheck(seed)?;
    for (name, err) in &report.per_tensor {
        println!("{name}: rel_err={err:.3e}");
    }
    println!("loss_grad: rel_err={:.3e}", report.loss_grad_rel_err);
    let max = report.max_rel_err();
    if max <= GRADCHECK_TOLERANCE {
        println!("max_rel_err={max:.3e} PASS");
        Ok(())
    } else {
        println!("max_rel_err={max:.3e} FAIL");
        Err(Failure::check(format!(
            "max_rel_err={max:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

/// Gap in pixels between the two views of a montage.
const MONTAGE_GAP: u32 = 4;

fn montage(ctx: &Context, args: MontageArgs) -> CmdResult {
    let cfg = ctx.train_config(&args.train)?;
    echo(
        "montage",
        &format!(
            "{}video={}\nout={}\n",
            cfg.to_kv(),
            args.video.as_deref().unwrap_or("<first>"),
            args.out.display()
        ),
    );
    let videos = load_dataset(require_manifest(&cfg)?)?;
    let video = match &args.video {
        Some(id) => videos.iter().find(|v| &v.video_id == id).ok_or_else(|| {
            Failure::from(Error::InvalidArgument(format!(
                "video {id:?} not in manifest"
            )))
        })?,
        None => videos
            .first()
            .ok_or_else(|| config_error("manifest lists no videos"))?,
    };
    let (layout, plan) = (cfg.layout()?, cfg.plan());
    let views = (0..2u64)
        .map(|k| {
            let draw = derive_seed(
                cfg.seed,
                &[b"montage", video.video_id.as_bytes(), &k.to_le_bytes()],
            );
            aggregate_view(video, &plan, &layout, draw)
        })
        .collect::<scfa_core::Result<Vec<_>>>()?;
    let (w, h) = (layout.canvas_w(), layout.canvas_h());
    let mut canvas = RgbImage::from_pixel(2 * w + MONTAGE_GAP, h, image::Rgb([255; 3]));
    for (k, v) in views.iter().enumerate() {
        image::imageops::replace(
            &mut canvas,
            &v.pixels,
            (k as u32 * (w + MONTAGE_GAP)) as i64,
            0,
        );
        println!("view {k}: frames {:?}", v.source_indices);
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    canvas.save(&args.out).map_err(|e| Error::Image {
        path: args.out.clone(),
        source: e,
    })?;
    println!("wrote {}", args.out.display());
    Ok(())
}
