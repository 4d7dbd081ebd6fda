//! Subcommand implementations.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sparsesplat::cpg::coprune_mask;
use sparsesplat::fadp::detect_edges;
use sparsesplat::io::{
    load_cameras, load_ply, ply_bytes, save_cameras, save_ply, synth_scene, write_depth_f32, write_mask_png,
    write_png_rgb, CameraRecord, SynthConfig, SyntheticScene,
};
use sparsesplat::pose::build_track;
use sparsesplat::render::render;
use sparsesplat::train::{
    edge_spawn_view, evaluate, patch_control_view, FrameSource, TrainConfig, TrainSet, Trainer,
};
use sparsesplat::{Camera, Error, GaussianField};

use crate::error::CliError;
use crate::manifest::Manifest;
use crate::{Cli, Command, CopruneArgs, EvalArgs, FadpArgs, FadpMode, InterpArgs, RenderArgs, ReplayArgs, Split, SynthArgs, TrainArgs};

/// Every config key with its default, for `--help`.
pub fn config_help() -> String {
    let mut s = String::from("Config keys (set with --config FILE or --set KEY=VALUE), shown with defaults:\n");
    for line in TrainConfig::default().to_text().lines() {
        s.push_str("  ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

/// Drops `--threads` and `--out` (with their values) from the arguments.
pub fn recorded_argv(args: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.iter().map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = it.next() {
        if a == "--threads" || a == "--out" {
            it.next();
        } else if !(a.starts_with("--threads=") || a.starts_with("--out=")) {
            out.push(a);
        }
    }
    out
}

pub fn dispatch(cmd: Command, argv: Vec<String>) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Render(a) => render_cmd(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::InterpPoses(a) => interp(a, argv),
        Command::Coprune(a) => coprune(a, argv),
        Command::FadpRun(a) => fadp_run(a, argv),
        Command::Replay(a) => replay(a),
    }
}

fn usage(e: Error) -> CliError {
    match e {
        Error::InvalidConfig(_) | Error::Parse { .. } => CliError::Usage(e.to_string()),
        other => CliError::Core(other),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn view_name(i: usize) -> String {
    format!("view_{i:02}")
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    holdout: Vec<usize>,
}

fn synth(a: SynthArgs, argv: Vec<String>) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_splats: a.splats,
        n_cameras: a.cameras,
        resolution: a.resolution,
        seed: a.seed,
        train_views: a.train_views,
        arc_degrees: a.arc,
        ..SynthConfig::default()
    };
    let scene = synth_scene(&cfg).map_err(usage)?;
    let out = &a.out;
    create_dir(&out.join("images"))?;
    create_dir(&out.join("depths"))?;
    write(&out.join("scene.json"), &(serde_json::to_string_pretty(&cfg).map_err(CliError::json)? + "\n"))?;
    save_ply(&scene.gt, out.join("gt.ply"))?;
    save_cameras(&scene.cameras, out.join("cameras.json"))?;
    let split = SplitFile {
        train: scene.train.clone(),
        holdout: scene.holdout.clone(),
    };
    write(&out.join("split.json"), &(serde_json::to_string_pretty(&split).map_err(CliError::json)? + "\n"))?;
    for (i, (img, d)) in scene.images.iter().zip(&scene.depths).enumerate() {
        write_png_rgb(out.join("images").join(view_name(i) + ".png"), img)?;
        write_depth_f32(out.join("depths").join(view_name(i) + ".f32"), d)?;
    }
    let mut m = Manifest::new("synth", argv);
    m.seed = Some(a.seed);
    m.config = serde_json::to_value(&cfg).map_err(CliError::json)?;
    m.finish(out)?;
    println!("scene: {} splats, {} cameras ({} train)", cfg.n_splats, cfg.n_cameras, cfg.train_views);
    Ok(())
}

/// Regenerates the scene described by `dir/scene.json` and checks it against `dir/gt.ply`.
pub fn load_scene(dir: &Path) -> Result<SyntheticScene, CliError> {
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let cfg: SynthConfig = serde_json::from_str(&text).map_err(CliError::json)?;
    let scene = synth_scene(&cfg)?;
    let ply = dir.join("gt.ply");
    let stored = fs::read(&ply).map_err(|e| CliError::io(&ply, e))?;
    if stored != ply_bytes(&scene.gt) {
        return Err(CliError::Runtime(format!("{} does not match {}", ply.display(), path.display())));
    }
    Ok(scene)
}

fn apply_sets(cfg: &mut TrainConfig, sets: &[String]) -> Result<(), CliError> {
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    Ok(())
}

fn train(a: TrainArgs, argv: Vec<String>) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let mut cfg = TrainConfig {
        background: scene.config.background,
        ..TrainConfig::default()
    };
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        cfg.apply_text(&text).map_err(usage)?;
    }
    apply_sets(&mut cfg, &a.set)?;
    if let Some(n) = a.iterations {
        cfg.total_iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(list) = &a.ablate {
        cfg.ablate(list).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    let frames = match a.frames.as_str() {
        "gt" => FrameSource::GroundTruth,
        "crossfade" => FrameSource::CrossFade,
        dir => FrameSource::Directory(PathBuf::from(dir)),
    };
    let set = TrainSet::from_synthetic(&scene, cfg.interp_factor, frames.clone(), cfg.seed)?;
    let out = &a.out;
    create_dir(out)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let mut trainer = Trainer::new(set, cfg.clone())?.with_output(out);
    let mut shown = 0;
    let result = loop {
        let next = (trainer.iteration() + cfg.log_every).min(cfg.total_iterations);
        if let Err(e) = trainer.run_until(next) {
            break Err(e);
        }
        if !a.quiet {
            for r in &trainer.log()[shown..] {
                eprintln!(
                    "iter {:>6}  loss {:.5}  L_r {:.5}  L_g {:.5}  splats {:?}  probe {:.3} dB",
                    r.iteration, r.total, r.reconstruction, r.guidance, r.counts, r.probe_psnr
                );
            }
        }
        shown = trainer.log().len();
        if trainer.iteration() >= cfg.total_iterations {
            break Ok(());
        }
    };
    write(&out.join("log.tsv"), &trainer.log_tsv())?;
    write(&out.join("events.tsv"), &trainer.events_tsv())?;
    result?;
    trainer.save_checkpoint(&out.join("final"))?;
    let mut m = Manifest::new("train", argv);
    match trainer.evaluate() {
        Ok(table) => {
            write(&out.join("metrics.tsv"), &table.to_tsv())?;
            println!("holdout PSNR {:.4} dB  SSIM {:.4}", table.mean_psnr, table.mean_ssim);
        }
        Err(Error::NothingToEvaluate) => eprintln!("note: scene has no holdout views"),
        Err(e) => return Err(e.into()),
    }
    if let Some(intact) = trainer.ensemble().freeze_intact() {
        println!("auxiliary shapes unchanged since freeze: {intact}");
    }
    m.seed = Some(cfg.seed);
    m.config = serde_json::to_value(&cfg).map_err(CliError::json)?;
    m.input(&a.scene)?;
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    if let FrameSource::Directory(d) = &frames {
        m.input(d)?;
    }
    m.finish(out)
}

fn parse_background(s: &str) -> Result<[f64; 3], CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--background expects r,g,b, got {s:?}")))?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(CliError::Usage(format!("--background expects three values in [0, 1], got {s:?}"))),
    }
}

fn render_cmd(a: RenderArgs, argv: Vec<String>) -> Result<(), CliError> {
    let bg = parse_background(&a.background)?;
    let field = load_ply(&a.ply)?;
    let cams = load_cameras(&a.cameras)?;
    create_dir(&a.out)?;
    for (i, c) in cams.iter().enumerate() {
        let out = render(&field, c, bg);
        write_png_rgb(a.out.join(view_name(i) + ".png"), &out.rgb)?;
        if a.depth {
            write_depth_f32(a.out.join(view_name(i) + ".f32"), &out.depth)?;
        }
    }
    let mut m = Manifest::new("render", argv);
    m.input(&a.ply)?;
    m.input(&a.cameras)?;
    m.finish(&a.out)?;
    println!("rendered {} views", cams.len());
    Ok(())
}

fn split_views(scene: &SyntheticScene, split: Split) -> Vec<usize> {
    match split {
        Split::Train => scene.train.clone(),
        Split::Holdout => scene.holdout.clone(),
        Split::All => (0..scene.cameras.len()).collect(),
    }
}

fn eval(a: EvalArgs, argv: Vec<String>) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let field = load_ply(&a.ply)?;
    let views = split_views(&scene, a.split);
    let cams: Vec<Camera> = views.iter().map(|&i| scene.cameras[i].clone()).collect();
    let imgs: Vec<_> = views.iter().map(|&i| scene.images[i].clone()).collect();
    let mut table = evaluate(&field, &cams, &imgs, scene.config.background)?;
    for (r, &v) in table.rows.iter_mut().zip(&views) {
        r.view = v;
    }
    print!("{}", table.to_tsv());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write(&out.join("metrics.tsv"), &table.to_tsv())?;
        let mut m = Manifest::new("eval", argv);
        m.input(&a.ply)?;
        m.input(&a.scene)?;
        m.finish(out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrackRecord {
    pair: usize,
    step: usize,
    factor: usize,
    alpha: f64,
    camera: CameraRecord,
}

fn interp(a: InterpArgs, argv: Vec<String>) -> Result<(), CliError> {
    let all = load_cameras(&a.cameras)?;
    let cams: Vec<Camera> = match &a.views {
        None => all,
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| all.get(i).cloned())
                    .ok_or_else(|| CliError::Usage(format!("--views: no camera {s:?}")))
            })
            .collect::<Result<_, _>>()?,
    };
    let track = build_track(&cams, a.factor).map_err(|e| match e {
        Error::InvalidInterpolationFactor(_) | Error::InsufficientViews(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    let records: Vec<TrackRecord> = track
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| TrackRecord {
            pair: p.pair,
            step: p.step,
            factor: p.factor,
            alpha: p.alpha,
            camera: CameraRecord::from_camera(i, &p.camera),
        })
        .collect();
    create_dir(&a.out)?;
    write(&a.out.join("track.json"), &(serde_json::to_string_pretty(&records).map_err(CliError::json)? + "\n"))?;
    let mut m = Manifest::new("interp-poses", argv);
    m.input(&a.cameras)?;
    m.finish(&a.out)?;
    println!("{} interpolated poses", records.len());
    Ok(())
}

fn mask_text(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { "1\n" } else { "0\n" }).collect()
}

fn coprune(a: CopruneArgs, argv: Vec<String>) -> Result<(), CliError> {
    if !(a.delta >= 0.0 && a.delta.is_finite()) {
        return Err(CliError::Usage("--delta must be a finite non-negative number".into()));
    }
    let fa = load_ply(&a.a)?;
    let fb = load_ply(&a.b)?;
    create_dir(&a.out)?;
    let prune = |src: &GaussianField, target: &GaussianField, name: &str| -> Result<(), CliError> {
        let mask = coprune_mask(src, target, a.delta)?;
        let keep: Vec<bool> = mask.iter().map(|&m| !m).collect();
        let mut kept = src.clone();
        kept.retain_mask(&keep);
        save_ply(&kept, a.out.join(format!("{name}_pruned.ply")))?;
        write(&a.out.join(format!("{name}_mask.txt")), &mask_text(&mask))?;
        println!("{name}: removed {} of {}", mask.iter().filter(|&&m| m).count(), src.len());
        Ok(())
    };
    prune(&fa, &fb, "a")?;
    if a.both {
        prune(&fb, &fa, "b")?;
    }
    let mut m = Manifest::new("coprune", argv);
    m.input(&a.a)?;
    m.input(&a.b)?;
    m.finish(&a.out)
}

fn fadp_run(a: FadpArgs, argv: Vec<String>) -> Result<(), CliError> {
    let scene = load_scene(&a.scene)?;
    let mut cfg = TrainConfig {
        background: scene.config.background,
        ..TrainConfig::default()
    };
    apply_sets(&mut cfg, &a.set)?;
    cfg.validate().map_err(usage)?;
    let mut field = load_ply(&a.ply)?;
    let cams = scene.train_cameras();
    let images: Vec<_> = scene.train.iter().map(|&i| scene.images[i].clone()).collect();
    create_dir(&a.out)?;
    let mut report = String::from("stage\tview\tsplats\tdetail\n");
    if matches!(a.mode, FadpMode::Patch | FadpMode::Both) {
        for (v, (c, img)) in cams.iter().zip(&images).enumerate() {
            let e = patch_control_view(&mut field, c, img, &cfg, a.seed.wrapping_add(v as u64))?;
            let stage = if e.applied { "patch" } else { "patch_skipped" };
            report.push_str(&format!("{stage}\t{}\t{}\t{}\n", scene.train[v], field.len(), e.detail));
        }
    }
    if matches!(a.mode, FadpMode::Edge | FadpMode::Both) {
        let budget = (cfg.edge_budget_fraction * field.len() as f64).floor() as usize;
        for (v, (c, img)) in cams.iter().zip(&images).enumerate() {
            let seed = a.seed.wrapping_add(1 << 32).wrapping_add(v as u64);
            let e = edge_spawn_view(&mut field, c, img, budget, &cfg, seed)?;
            report.push_str(&format!("edge\t{}\t{}\t{}\n", scene.train[v], field.len(), e.detail));
        }
    }
    if a.edges_png {
        create_dir(&a.out.join("edges"))?;
        for (v, img) in images.iter().enumerate() {
            let e = detect_edges(img);
            write_mask_png(a.out.join("edges").join(view_name(scene.train[v]) + ".png"), &e.mask, e.width, e.height)?;
        }
    }
    save_ply(&field, a.out.join("fadp.ply"))?;
    write(&a.out.join("report.tsv"), &report)?;
    let mut m = Manifest::new("fadp-run", argv);
    m.seed = Some(a.seed);
    m.config = serde_json::to_value(&cfg).map_err(CliError::json)?;
    m.input(&a.ply)?;
    m.input(&a.scene)?;
    m.finish(&a.out)?;
    println!("{} splats after density control", field.len());
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<(), CliError> {
    use clap::Parser;
    let m = Manifest::load(&a.manifest)?;
    let mut args: Vec<OsString> = vec!["sparsesplat".into()];
    args.extend(m.argv.iter().map(OsString::from));
    args.push("--out".into());
    args.push(a.out.clone().into_os_string());
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::Usage(format!("manifest arguments rejected: {}", e.kind())))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay manifest cannot itself be replayed".into()));
    }
    dispatch(cli.command, m.argv)
}
