use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use groundseg::cloud::{load_kitti_bin_with, DEFAULT_NUM_RINGS};
use groundseg::eval::{EvalReport, ScoreTally, DEFAULT_TARGET_PRECISION, DEFAULT_TARGET_RECALL};
use groundseg::manifest::{RunManifest, Split, DEFAULT_SPLIT_RATIO};
use groundseg::nn::train_with_progress;
use groundseg::synth::{generate_frame, SensorModel};
use groundseg::{
    auto_label, build_topology, derive_rings, encode_normalized, load_model, predict_points, range_mask, save_model,
    training_sample, AutoLabelConfig, EncoderConfig, Label, Layout, PointCloud, PointLabels, Topology, TrainConfig,
};
use groundseg_server::{AppState, ServerConfig};

use crate::config::{Config, RangeLimit};
use crate::error::CliError;
use crate::{Command, EncoderFlags};

pub struct Context {
    pub cfg: Config,
    pub pool: rayon::ThreadPool,
    pub seed: u64,
}

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(ctx: &Context, cmd: Command) -> Result<()> {
    match cmd {
        Command::Encode { input, output, encoder } => encode(ctx, input, output, &encoder),
        Command::Autolabel { input, output, layout, cell_size, max_height_mean, max_height_spread, max_height_stddev } => {
            let c = &ctx.cfg;
            let d = AutoLabelConfig::default();
            let al = AutoLabelConfig {
                cell_size: c.pick_or(cell_size, "cell_size", d.cell_size)?,
                max_height_mean: c.pick_or(max_height_mean, "max_height_mean", d.max_height_mean)?,
                max_height_spread: c.pick_or(max_height_spread, "max_height_spread", d.max_height_spread)?,
                max_height_stddev: c.pick_or(max_height_stddev, "max_height_stddev", d.max_height_stddev)?,
            };
            al.validate()?;
            let layout = c.pick_or(layout, "layout", Layout::Xyzi)?;
            autolabel(ctx, required(c, input, "input")?, required(c, output, "output")?, layout, &al)
        }
        Command::Split { dataset, output, split_ratio } => {
            let c = &ctx.cfg;
            let ratio = c.pick_or(split_ratio, "split_ratio", DEFAULT_SPLIT_RATIO)?;
            split(ctx, required(c, dataset, "dataset")?, required(c, output, "output")?, ratio)
        }
        Command::Train {
            manifest,
            topology,
            labels,
            pretrain,
            output,
            iterations,
            learning_rate,
            momentum,
            batch_size,
            lr_decay,
            decay_step,
            log_every,
            encoder,
        } => {
            let c = &ctx.cfg;
            let d = TrainConfig::default();
            let tc = TrainConfig {
                learning_rate: c.pick_or(learning_rate, "learning_rate", d.learning_rate)?,
                momentum: c.pick_or(momentum, "momentum", d.momentum)?,
                batch_size: c.pick_or(batch_size, "batch_size", d.batch_size)?,
                iterations: c.pick_or(iterations, "iterations", d.iterations)?,
                lr_decay: c.pick_or(lr_decay, "lr_decay", d.lr_decay)?,
                decay_step: c.pick(decay_step, "decay_step")?,
                rng_seed: ctx.seed,
            };
            tc.validate()?;
            let job = TrainJob {
                manifest: required(c, manifest, "manifest")?,
                topology: c.pick(topology, "topology")?.ok_or_else(|| missing("topology"))?,
                labels: required(c, labels, "labels")?,
                pretrain: c.pick(pretrain, "pretrain")?,
                output: required(c, output, "output")?,
                log_every: c.pick_or(log_every, "log_every", 50usize)?.max(1),
                train: tc,
            };
            let (layout, enc) = encoder_config(c, &encoder)?;
            train(ctx, &job, layout, &enc)
        }
        Command::Infer { model, input, output, threshold, scores, encoder } => {
            let c = &ctx.cfg;
            let threshold = c.pick_or(threshold, "threshold", 0.5)?;
            let scores = scores || c.pick_or(None, "scores", false)?;
            let (layout, enc) = encoder_config(c, &encoder)?;
            infer(
                ctx,
                &required(c, model, "model")?,
                required(c, input, "input")?,
                required(c, output, "output")?,
                threshold,
                scores,
                layout,
                &enc,
            )
        }
        Command::Eval { pred, truth, clouds, max_range, layout, report, curve, target_recall, target_precision } => {
            let c = &ctx.cfg;
            let job = EvalJob {
                pred: required(c, pred, "pred")?,
                truth: required(c, truth, "truth")?,
                clouds: c.pick(clouds, "clouds")?,
                max_range: c.pick_or(max_range, "max_range", RangeLimit(Some(60.0)))?.0,
                layout: c.pick_or(layout, "layout", Layout::Xyzi)?,
                report: c.pick(report, "report")?,
                curve: c.pick(curve, "curve")?,
                target_recall: c.pick_or(target_recall, "target_recall", DEFAULT_TARGET_RECALL)?,
                target_precision: c.pick_or(target_precision, "target_precision", DEFAULT_TARGET_PRECISION)?,
            };
            eval(ctx, &job)
        }
        Command::Serve { data, host, port, encoder } => {
            let c = &ctx.cfg;
            let (layout, enc) = encoder_config(c, &encoder)?;
            let host = c.pick_or(host, "host", "127.0.0.1".to_string())?;
            let port = c.pick_or(port, "port", 8080u16)?;
            serve(required(c, data, "data")?, &host, port, layout, enc)
        }
        Command::Synth { output, labels, count, azimuth_step } => {
            let c = &ctx.cfg;
            let output = required(c, output, "output")?;
            let labels = c.pick(labels, "labels")?.unwrap_or_else(|| output.clone());
            let count = c.pick_or(count, "count", 10usize)?;
            let step = c.pick_or(azimuth_step, "azimuth_step", 0.16)?;
            synth(ctx, &output, &labels, count, step)
        }
    }
}

fn missing(key: &str) -> CliError {
    CliError::input(format!("--{} is required (flag or config key `{}`)", key.replace('_', "-"), key))
}

fn required(c: &Config, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    c.pick(flag, key)?.ok_or_else(|| missing(key))
}

fn encoder_config(c: &Config, f: &EncoderFlags) -> Result<(Layout, EncoderConfig)> {
    let d = EncoderConfig::default();
    let enc = EncoderConfig {
        bin_width_deg: c.pick_or(f.bin_width, "bin_width", d.bin_width_deg)?,
        num_rings: c.pick_or(f.num_rings, "num_rings", d.num_rings)?,
        height_norm: c.pick_or(f.height_norm, "height_norm", d.height_norm)?,
        max_range: d.max_range,
    };
    enc.validate()?;
    Ok((c.pick_or(f.layout, "layout", Layout::Xyzi)?, enc))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Files under `input` (or `input` itself) with the given extension, keyed
/// by basename stem.
fn files_by_stem(input: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned());
    let mut out = BTreeMap::new();
    if input.is_file() {
        if let Some(s) = stem(input) {
            out.insert(s, input.to_path_buf());
        }
        return Ok(out);
    }
    for entry in std::fs::read_dir(input).map_err(|e| io_err(input, e))? {
        let path = entry.map_err(|e| io_err(input, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            if let Some(s) = stem(&path) {
                out.insert(s, path);
            }
        }
    }
    Ok(out)
}

fn load_cloud(path: &Path, layout: Layout, num_rings: usize) -> groundseg::Result<PointCloud> {
    load_kitti_bin_with(path, layout, num_rings)
}

/// Run `f` over every frame on the pool and report failures by file. Any
/// failure makes the command fail with the worst exit code seen.
fn for_each_frame<F>(ctx: &Context, frames: &BTreeMap<String, PathBuf>, what: &str, f: F) -> Result<()>
where
    F: Fn(&str, &Path) -> Result<()> + Sync,
{
    if frames.is_empty() {
        log::warn!("0 frames to {what}");
        return Ok(());
    }
    let items: Vec<(&String, &PathBuf)> = frames.iter().collect();
    let results: Vec<Result<()>> = ctx.pool.install(|| items.par_iter().map(|(id, p)| f(id, p)).collect());
    let mut worst: Option<CliError> = None;
    let mut failed = 0;
    for ((_, path), r) in items.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("{}: {e}", path.display());
            failed += 1;
            if worst.as_ref().is_none_or(|w| e.code() > w.code()) {
                worst = Some(e);
            }
        }
    }
    log::info!("{what}: {} of {} frames done", items.len() - failed, items.len());
    match worst {
        None => Ok(()),
        Some(e) => Err(match e {
            CliError::Input(_) => CliError::input(format!("{failed} of {} frames failed", items.len())),
            CliError::Internal(m) => CliError::internal(m),
        }),
    }
}

fn encode(ctx: &Context, input: Option<PathBuf>, output: Option<PathBuf>, flags: &EncoderFlags) -> Result<()> {
    let input = required(&ctx.cfg, input, "input")?;
    let output = required(&ctx.cfg, output, "output")?;
    let (layout, enc) = encoder_config(&ctx.cfg, flags)?;
    let frames = files_by_stem(&input, "bin")?;
    create_dir(&output)?;
    for_each_frame(ctx, &frames, "encode", |id, path| {
        let cloud = load_cloud(path, layout, enc.num_rings)?;
        let (frame, _) = encode_normalized(&cloud, &enc)?;
        frame.save(output.join(format!("{id}.gsf")))?;
        Ok(())
    })
}

fn autolabel(ctx: &Context, input: PathBuf, output: PathBuf, layout: Layout, cfg: &AutoLabelConfig) -> Result<()> {
    let frames = files_by_stem(&input, "bin")?;
    create_dir(&output)?;
    for_each_frame(ctx, &frames, "autolabel", |id, path| {
        let cloud = load_cloud(path, layout, DEFAULT_NUM_RINGS)?;
        auto_label(&cloud, cfg)?.save(output.join(format!("{id}.gsl")))?;
        Ok(())
    })
}

fn split(ctx: &Context, dataset: PathBuf, output: PathBuf, ratio: f64) -> Result<()> {
    let ids: Vec<String> = files_by_stem(&dataset, "bin")?.into_keys().collect();
    if ids.is_empty() {
        return Err(CliError::input(format!("no .bin frames in {}", dataset.display())));
    }
    let manifest = RunManifest::new(&dataset, &ids, ctx.seed, ratio)?;
    manifest.save(&output)?;
    println!(
        "{} frames: {} train, {} eval",
        ids.len(),
        manifest.ids(Split::Train).len(),
        manifest.ids(Split::Eval).len()
    );
    Ok(())
}

struct TrainJob {
    manifest: PathBuf,
    topology: Topology,
    labels: PathBuf,
    pretrain: Option<PathBuf>,
    output: PathBuf,
    log_every: usize,
    train: TrainConfig,
}

/// A relative dataset root in a manifest is taken relative to the manifest.
fn dataset_root(manifest_path: &Path, m: &RunManifest) -> PathBuf {
    if m.dataset_root.is_absolute() {
        m.dataset_root.clone()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&m.dataset_root)
    }
}

fn train(ctx: &Context, job: &TrainJob, layout: Layout, enc: &EncoderConfig) -> Result<()> {
    let manifest = RunManifest::load(&job.manifest)?;
    let root = dataset_root(&job.manifest, &manifest);
    let ids = manifest.ids(Split::Train);
    if ids.is_empty() {
        return Err(CliError::input(format!("{} has no TRAIN frames", job.manifest.display())));
    }
    let label_path = |id: &str| job.labels.join(format!("{id}.gsl"));
    let missing: Vec<&str> = ids.iter().copied().filter(|id| !label_path(id).is_file()).collect();
    if !missing.is_empty() {
        return Err(CliError::input(format!(
            "missing labels in {} for {} frame(s): {}",
            job.labels.display(),
            missing.len(),
            missing.join(", ")
        )));
    }
    let init = job.pretrain.as_ref().map(load_model).transpose()?;

    let samples: Vec<Result<_>> = ctx.pool.install(|| {
        ids.par_iter()
            .map(|id| -> Result<_> {
                let cloud = derive_rings(&load_cloud(&root.join(format!("{id}.bin")), layout, enc.num_rings)?)?;
                let labels = PointLabels::load(label_path(id))?;
                if labels.len() != cloud.len() {
                    return Err(CliError::input(format!(
                        "{}: {} labels for {} points",
                        label_path(id).display(),
                        labels.len(),
                        cloud.len()
                    )));
                }
                Ok(training_sample(&cloud, &labels, enc)?)
            })
            .collect()
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    log::info!("training {} on {} frames for {} iterations", job.topology, samples.len(), job.train.iterations);

    let fresh = build_topology(job.topology, ctx.seed);
    let every = job.log_every;
    let (net, history) = train_with_progress(&fresh, &samples, &job.train, init.as_ref(), |s| {
        if s.iteration % every == 0 || s.iteration + 1 == job.train.iterations {
            println!(
                "iteration {:>6}  loss {:.6}  accuracy {:.4}  lr {:.2e}",
                s.iteration, s.loss, s.accuracy, s.learning_rate
            );
        }
    })?;
    if let Some(parent) = job.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_model(&net, &job.output)?;
    match history.last() {
        Some(l) => println!("final loss {l:.6}; model written to {}", job.output.display()),
        None => println!("0 iterations; initial model written to {}", job.output.display()),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer(
    ctx: &Context,
    model: &Path,
    input: PathBuf,
    output: PathBuf,
    threshold: f64,
    write_scores: bool,
    layout: Layout,
    enc: &EncoderConfig,
) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::input(format!("threshold {threshold} outside [0, 1]")));
    }
    let net = load_model(model)?;
    let frames = files_by_stem(&input, "bin")?;
    create_dir(&output)?;
    for_each_frame(ctx, &frames, "infer", |id, path| {
        let cloud = load_cloud(path, layout, enc.num_rings)?;
        let scores = predict_points(&net, &cloud, enc)?;
        let labels = PointLabels {
            labels: scores.iter().map(|&s| if s >= threshold { Label::Ground } else { Label::NonGround }).collect(),
            frame_id: id.to_string(),
        };
        labels.save(output.join(format!("{id}.gsl")))?;
        if write_scores {
            let mut csv = String::with_capacity(scores.len() * 10);
            for s in &scores {
                let _ = writeln!(csv, "{s:.9}");
            }
            let p = output.join(format!("{id}.csv"));
            std::fs::write(&p, csv).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    })
}

struct EvalJob {
    pred: PathBuf,
    truth: PathBuf,
    clouds: Option<PathBuf>,
    max_range: Option<f64>,
    layout: Layout,
    report: Option<PathBuf>,
    curve: Option<PathBuf>,
    target_recall: f64,
    target_precision: f64,
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Scores from `<id>.csv` when present, else 0/1 from `<id>.gsl`.
fn prediction_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = files_by_stem(dir, "gsl")?;
    out.extend(files_by_stem(dir, "csv")?);
    Ok(out)
}

fn eval(ctx: &Context, job: &EvalJob) -> Result<()> {
    let preds = prediction_files(&job.pred)?;
    let truths = files_by_stem(&job.truth, "gsl")?;
    if preds.is_empty() && truths.is_empty() {
        return Err(CliError::input("no frames to evaluate"));
    }
    let only_pred: Vec<&str> = preds.keys().filter(|k| !truths.contains_key(*k)).map(String::as_str).collect();
    let only_truth: Vec<&str> = truths.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    if !only_pred.is_empty() || !only_truth.is_empty() {
        return Err(CliError::input(format!(
            "prediction and truth frames differ; without truth: [{}]; without prediction: [{}]",
            only_pred.join(", "),
            only_truth.join(", ")
        )));
    }
    if job.max_range.is_some() && job.clouds.is_none() {
        return Err(CliError::input("a range limit needs --clouds (or pass --max-range none)"));
    }

    let ids: Vec<&String> = truths.keys().collect();
    let tallies: Vec<Result<ScoreTally>> = ctx.pool.install(|| {
        ids.par_iter()
            .map(|id| -> Result<ScoreTally> {
                let truth = PointLabels::load(&truths[*id])?.binarize();
                let pred_path = &preds[*id];
                let scores = if pred_path.extension().is_some_and(|x| x == "csv") {
                    read_scores(pred_path)?
                } else {
                    PointLabels::load(pred_path)?.binarize().iter().map(|&g| if g { 1.0 } else { 0.0 }).collect()
                };
                if scores.len() != truth.len() {
                    return Err(CliError::input(format!(
                        "frame {id}: {} predictions for {} truth labels",
                        scores.len(),
                        truth.len()
                    )));
                }
                let mask = match (job.max_range, &job.clouds) {
                    (Some(r), Some(dir)) => {
                        let bin = dir.join(format!("{id}.bin"));
                        let cloud = load_cloud(&bin, job.layout, DEFAULT_NUM_RINGS)?;
                        if cloud.len() != truth.len() {
                            return Err(CliError::input(format!(
                                "{}: {} points for {} truth labels",
                                bin.display(),
                                cloud.len(),
                                truth.len()
                            )));
                        }
                        Some(range_mask(&cloud, Some(r)))
                    }
                    _ => None,
                };
                Ok(ScoreTally::from_points(&scores, &truth, mask.as_deref())?)
            })
            .collect()
    });
    // Merged in frame order; the tally is a sum of integer counts anyway.
    let mut tally = ScoreTally::new();
    for t in tallies {
        tally.merge(&t?);
    }
    let curve = tally.curve()?;
    let report = EvalReport::from_curve(&curve, job.target_recall, job.target_precision).to_text();
    print!("{report}");
    if let Some(p) = &job.report {
        std::fs::write(p, &report).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = &job.curve {
        std::fs::write(p, curve.to_csv()).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

fn serve(data: PathBuf, host: &str, port: u16, layout: Layout, encoder: EncoderConfig) -> Result<()> {
    if !data.is_dir() {
        return Err(CliError::input(format!("data directory {} does not exist", data.display())));
    }
    let state = Arc::new(AppState::open(ServerConfig { data_dir: data, layout, encoder })?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::input(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::internal(e.to_string()))?;
        println!("listening on http://{addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
        groundseg_server::serve(listener, state).await.map_err(|e| CliError::internal(e.to_string()))
    })
}

fn synth(ctx: &Context, output: &Path, labels: &Path, count: usize, azimuth_step: f64) -> Result<()> {
    if !(azimuth_step > 0.0 && azimuth_step <= 10.0) {
        return Err(CliError::input(format!("azimuth step {azimuth_step} outside (0, 10]")));
    }
    create_dir(output)?;
    create_dir(labels)?;
    let sensor = SensorModel::hdl64(azimuth_step);
    let results: Vec<Result<()>> = ctx.pool.install(|| {
        (0..count as u64)
            .into_par_iter()
            .map(|i| -> Result<()> {
                let id = format!("{i:06}");
                let f = generate_frame(ctx.seed.wrapping_add(i), &sensor);
                let bin = output.join(format!("{id}.bin"));
                std::fs::write(&bin, f.cloud.to_xyzi_bytes()).map_err(|e| io_err(&bin, e))?;
                PointLabels::from_binary(&f.truth, id.as_str()).save(labels.join(format!("{id}.gsl")))?;
                Ok(())
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    println!("{count} synthetic frames written to {}", output.display());
    Ok(())
}
