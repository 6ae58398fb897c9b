//! Command-line front end. [`dispatch`] maps argv to an exit code: 0 on
//! success, 1 on runtime or data errors, 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::dataset::{self, read_split, write_dataset, Split};
use super::preprocess::{crop_volume, embed, normalize_volume};
use super::volume_file::{load_volume, save_volume, CropInfo, VolumeFile};
use crate::error::{Error, Result};
use crate::fbm::synth_fbm;
use crate::fractal::{estimate_hurst, fd_map, fd_scalar_map, FdMapParams, Scales};
use crate::metrics::{format_table, region_report, summarize, CaseReport};
use crate::segnet::{
    brats_to_class, class_to_brats, forward, load_checkpoint, save_checkpoint, train_prepared, NetworkParams, Sample,
};
use crate::uncertainty::{combined_uq, ensemble_predict, mc_dropout_predict, tta_predict, Transform, UqMethod};
use crate::volume::Volume;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "mfdnn",
    version,
    about = "Fractal texture analysis and wavelet/FD segmentation networks",
    arg_required_else_help = true
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and human-readable output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print a JSON result on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize an fBm field.
    Synth(SynthArgs),
    /// Estimate the Hurst exponent and fractal dimension of a volume.
    Hurst(HurstArgs),
    /// Sliding-window fractal-dimension map.
    Fdmap(FdmapArgs),
    /// Write the synthetic two-texture dataset.
    Dataset(DatasetArgs),
    /// Train a segmentation network.
    Train(TrainArgs),
    /// Predict label maps.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Predictive mean and variance maps.
    Uq(UqArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    hurst: Option<f64>,
    /// Grid dims, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct HurstArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long)]
    j_min: Option<usize>,
    #[arg(long)]
    j_max: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args, Debug)]
struct FdmapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// One global FD broadcast over the grid.
    #[arg(long)]
    scalar: bool,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory; without it the synthetic cases are generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint file.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Image volume or dataset directory (its test split is used).
    #[arg(long)]
    input: PathBuf,
    /// Also write per-class probabilities.
    #[arg(long)]
    probs: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Predicted label volume or directory of `<case>_pred.vol` files.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label volume, or a directory of `<case>_label.vol` files.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args, Debug)]
struct UqArgs {
    /// Checkpoint(s); several form an ensemble.
    #[arg(long)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Option<UqMethod>,
    #[arg(long)]
    samples: Option<usize>,
    /// TTA transforms (`identity`, `flip<axis>`, `rot90`, `rot180`, `rot270`).
    #[arg(long = "transform")]
    transforms: Vec<String>,
}

fn parse_method(s: &str) -> std::result::Result<UqMethod, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown method {s:?} (mcdo, ensemble, tta, combined)"))
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
    json: bool,
}

impl Ctx {
    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn emit(&self, command: &str, mut payload: Value, text: String) {
        if self.json {
            if let Value::Object(m) = &mut payload {
                m.insert("format_version".into(), json!(REPORT_FORMAT_VERSION));
                m.insert("command".into(), json!(command));
            }
            println!("{payload}");
        } else if !self.quiet {
            print!("{text}");
        }
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<PathBuf> {
        let path = self.out.join(name);
        let bytes = serde_json::to_vec_pretty(v).map_err(|e| Error::data(format!("{name}: {e}")))?;
        crate::io::write_atomic(&path, &bytes)?;
        Ok(path)
    }

    fn checkpoints(&self, given: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
        let list = if given.is_empty() {
            self.cfg.paths.checkpoints.clone()
        } else {
            given
        };
        if list.is_empty() {
            return Err(Error::param("no checkpoint given (--ckpt or paths.checkpoints)"));
        }
        Ok(list)
    }
}

/// Runs one command; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx {
        cfg,
        out,
        quiet: cli.quiet,
        json: cli.json,
    };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Hurst(a) => hurst(&ctx, a),
        Command::Fdmap(a) => fdmap(&ctx, a),
        Command::Dataset(a) => make_dataset(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Uq(a) => uq(&ctx, a),
    }
}

fn channel(v: &Volume, c: usize, path: &Path) -> Result<Volume> {
    if c >= v.channels() {
        return Err(Error::param(format!(
            "{}: channel {c} requested, volume has {}",
            path.display(),
            v.channels()
        )));
    }
    Ok(v.channel_volume(c))
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut spec = ctx.cfg.fbm.clone();
    if let Some(h) = a.hurst {
        spec.hurst = h;
    }
    if let Some(d) = a.dims {
        spec.dims = d;
    }
    let v = synth_fbm(&spec)?;
    let path = ctx.out.join("fbm.vol");
    save_volume(&VolumeFile::image(v), &path)?;
    ctx.emit(
        "synth",
        json!({"path": path, "hurst": spec.hurst, "dims": spec.dims, "seed": spec.seed}),
        format!("wrote {} (H = {}, dims {:?})\n", path.display(), spec.hurst, spec.dims),
    );
    Ok(())
}

fn hurst(ctx: &Ctx, a: HurstArgs) -> Result<()> {
    let s = &ctx.cfg.hurst;
    let x = channel(&load_volume(&a.input)?.volume, a.channel, &a.input)?;
    let scales = Scales::new(a.j_min.unwrap_or(s.j_min), a.j_max.unwrap_or(s.j_max));
    let est = estimate_hurst(&x, &s.wavelet, scales, a.q.unwrap_or(s.q))?;
    let text = format!(
        "H = {:.6}  FD = {:.6}  (stderr {:.2e}, scales {}..={})\n",
        est.hurst, est.fd, est.slope_stderr, est.scales_used.0, est.scales_used.1
    );
    let payload = json!({"input": a.input, "estimate": est});
    ctx.emit("hurst", payload, text);
    Ok(())
}

fn fdmap(ctx: &Ctx, a: FdmapArgs) -> Result<()> {
    let s = &ctx.cfg.fdmap;
    let x = channel(&load_volume(&a.input)?.volume, a.channel, &a.input)?;
    let window = a.window.unwrap_or(s.window);
    let mut params = FdMapParams::new(window, a.stride.unwrap_or(s.stride), s.wavelet);
    params.q = s.q;
    let map = if a.scalar {
        fd_scalar_map(&x, &params)?
    } else {
        fd_map(&x, &params)?
    };
    let path = ctx.out.join("fdmap.vol");
    save_volume(&VolumeFile::image(map.map.clone()).with_names(vec!["fd".into()]), &path)?;
    let mean = map.map.data().iter().sum::<f64>() / map.map.len() as f64;
    ctx.emit(
        "fdmap",
        json!({"path": path, "mean_fd": mean, "fallback_windows": map.fallback_windows, "sentinel": map.sentinel}),
        format!(
            "wrote {} (mean FD {mean:.4}, {} fallback windows)\n",
            path.display(),
            map.fallback_windows
        ),
    );
    Ok(())
}

fn make_dataset(ctx: &Ctx, a: DatasetArgs) -> Result<()> {
    let mut spec = ctx.cfg.dataset.clone();
    spec.n_train = a.n_train.unwrap_or(spec.n_train);
    spec.n_test = a.n_test.unwrap_or(spec.n_test);
    ctx.log(&format!("generating {} + {} cases", spec.n_train, spec.n_test));
    let m = write_dataset(&spec, &ctx.out)?;
    ctx.emit(
        "dataset",
        json!({"path": ctx.out, "train": m.train.len(), "test": m.test.len(), "seed": spec.seed}),
        format!("wrote {} train and {} test cases to {}\n", m.train.len(), m.test.len(), ctx.out.display()),
    );
    Ok(())
}

/// Normalization and cropping from the config.
fn preprocess(ctx: &Ctx, x: &Volume) -> Result<(Volume, Option<CropInfo>)> {
    let p = &ctx.cfg.preprocess;
    let x = if p.normalize { normalize_volume(x)? } else { x.clone() };
    match &p.crop {
        Some(t) => crop_volume(&x, t).map(|(v, info)| (v, Some(info))),
        None => Ok((x, None)),
    }
}

/// BraTS-valued label volume to class indices.
fn to_classes(labels: &Volume, path: &Path) -> Result<Volume> {
    let mapped = labels
        .data()
        .iter()
        .map(|&v| {
            let class = if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                brats_to_class(v as u8).ok()
            } else {
                None
            };
            class
                .map(|c| c as f64)
                .ok_or_else(|| Error::data(format!("{}: label value {v} outside {{0, 1, 2, 4}}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::from_vec(labels.dims(), 1, mapped)?.with_spacing(labels.spacing())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let arch = &cfg.arch;
    let mut tc = cfg.train.clone();
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    let data_dir = a.data.or_else(|| cfg.paths.dataset.clone());
    let cases: Vec<(String, Volume, Volume)> = match &data_dir {
        Some(dir) => read_split(dir, Split::Train)?
            .into_iter()
            .map(|(name, x, y)| {
                let path = dataset::label_path(dir, Split::Train, &name);
                let y = to_classes(&y, &path)?;
                Ok((name, x, y))
            })
            .collect::<Result<_>>()?,
        None => dataset::generate(&cfg.dataset, Split::Train)?
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("case_{i:04}"), c.image, c.mask))
            .collect(),
    };
    ctx.log(&format!("preparing {} training cases", cases.len()));
    let samples = cases
        .par_iter()
        .map(|(name, x, y)| {
            let (x, crop) = preprocess(ctx, x)?;
            let y = match crop {
                Some(_) => crop_volume(y, x.dims())?.0,
                None => y.clone(),
            };
            Sample::new(arch, &x, &y).map_err(|e| match e {
                Error::Structure(m) => Error::structure(format!("{name}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.log(&format!("training {} epochs", tc.epochs));
    let (params, log) = train_prepared(&tc, arch, &samples)?;
    if !ctx.quiet {
        for e in &log.epochs {
            eprintln!("epoch {:>3}  loss {:.5}", e.epoch, e.mean_loss);
        }
    }
    let ckpt = ctx.out.join("model.ckpt");
    save_checkpoint(&params, &ckpt)?;
    let log_path = ctx.write_json("train_log.json", &json!({"format_version": REPORT_FORMAT_VERSION, "log": log}))?;
    let last = log.epochs.last().map(|e| e.mean_loss);
    ctx.emit(
        "train",
        json!({"checkpoint": ckpt, "log": log_path, "steps": log.steps, "final_loss": last,
               "parameters": params.parameter_count()}),
        format!(
            "wrote {} ({} steps, final loss {})\n",
            ckpt.display(),
            log.steps,
            last.map_or("n/a".into(), |l| format!("{l:.5}"))
        ),
    );
    Ok(())
}

/// Input images for `predict`/`uq`: a single file, or the test split of a
/// dataset directory.
fn inputs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let m = dataset::read_manifest(path)?;
        Ok(m.test
            .into_iter()
            .map(|n| {
                let p = dataset::image_path(path, Split::Test, &n);
                (n, p)
            })
            .collect())
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches("_image").to_string())
            .unwrap_or_else(|| "case".into());
        Ok(vec![(stem, path.to_path_buf())])
    }
}

fn argmax_labels(probs: &Volume) -> Result<Volume> {
    let plane = probs.spatial_len();
    let labels = (0..plane)
        .map(|p| {
            let best = (1..probs.channels()).fold(0, |b, c| if probs.channel(c)[p] > probs.channel(b)[p] { c } else { b });
            class_to_brats(best).map(f64::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::from_vec(probs.dims(), 1, labels)?.with_spacing(probs.spacing())
}

fn restore(v: Volume, crop: &Option<CropInfo>) -> Result<Volume> {
    match crop {
        Some(info) => embed(&v, info),
        None => Ok(v),
    }
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let ckpts = ctx.checkpoints(a.ckpt.into_iter().collect())?;
    let params = load_checkpoint(&ckpts[0])?;
    let cases = inputs(&a.input)?;
    let written = cases
        .par_iter()
        .map(|(name, path)| {
            let vf = load_volume(path)?;
            let (x, crop) = preprocess(ctx, &vf.volume)?;
            let (probs, _) = forward(&params, &x, false, 0)?;
            let labels = restore(argmax_labels(&probs)?, &crop)?;
            let out = ctx.out.join(format!("{name}_pred.vol"));
            save_volume(&VolumeFile::labels(labels)?, &out)?;
            if a.probs {
                let p = restore(probs, &crop)?;
                let names = (0..p.channels()).map(|c| format!("class{c}")).collect();
                save_volume(
                    &VolumeFile::image(p).with_names(names),
                    &ctx.out.join(format!("{name}_probs.vol")),
                )?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.emit(
        "predict",
        json!({"checkpoint": ckpts[0], "predictions": written}),
        format!("wrote {} prediction(s) to {}\n", written.len(), ctx.out.display()),
    );
    Ok(())
}

fn gt_for(gt: &Path, case: &str) -> Result<PathBuf> {
    let candidates = [
        gt.join(format!("{case}_label.vol")),
        dataset::label_path(gt, Split::Test, case),
        dataset::label_path(gt, Split::Train, case),
    ];
    candidates
        .iter()
        .find(|p| p.exists())
        .cloned()
        .ok_or_else(|| Error::data(format!("no ground truth for case {case} under {}", gt.display())))
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.pred.is_dir() {
        let mut preds: Vec<PathBuf> = std::fs::read_dir(&a.pred)
            .map_err(|e| Error::io(&a.pred, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with("_pred.vol"))
            .collect();
        preds.sort();
        if preds.is_empty() {
            return Err(Error::data(format!("{}: no *_pred.vol files", a.pred.display())));
        }
        preds
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("file").to_string_lossy().trim_end_matches("_pred.vol").to_string();
                let g = gt_for(&a.gt, &name)?;
                Ok((name, p, g))
            })
            .collect::<Result<_>>()?
    } else {
        let name = a.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![(name, a.pred.clone(), a.gt.clone())]
    };
    let reports = pairs
        .par_iter()
        .map(|(name, p, g)| {
            let pred = load_volume(p)?.volume;
            let gt = load_volume(g)?.volume;
            let mut r: CaseReport = region_report(&pred, &gt, gt.spacing()).map_err(|e| match e {
                Error::Data(m) => Error::data(format!("{} / {}: {m}", p.display(), g.display())),
                other => other,
            })?;
            r.case_id = Some(name.clone());
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&reports)?;
    let report = json!({"format_version": REPORT_FORMAT_VERSION, "cases": reports, "summary": summary});
    if ctx.out != Path::new(".") || ctx.cfg.out.is_some() {
        ctx.write_json("report.json", &report)?;
    }
    ctx.emit(
        "evaluate",
        json!({"cases": reports, "summary": summary}),
        format!("{} case(s)\n{}", summary.cases, format_table(&summary)),
    );
    Ok(())
}

fn uq(ctx: &Ctx, a: UqArgs) -> Result<()> {
    let s = &ctx.cfg.uq;
    let method = a.method.unwrap_or(s.method);
    let n = a.samples.unwrap_or(s.n_samples);
    let ckpts = ctx.checkpoints(a.ckpt)?;
    let members = ckpts.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<NetworkParams>>>()?;
    let names = if a.transforms.is_empty() { s.transforms.clone() } else { a.transforms };
    let vf = load_volume(&a.input)?;
    let (x, crop) = preprocess(ctx, &vf.volume)?;
    let transforms = if names.is_empty() {
        Transform::default_set(x.ndim())
    } else {
        names.iter().map(|t| t.parse()).collect::<Result<Vec<Transform>>>()?
    };
    let seed = ctx.cfg.seed;
    let r = match method {
        UqMethod::Mcdo => mc_dropout_predict(&members[0], &x, n, seed)?,
        UqMethod::Ensemble => ensemble_predict(&members, &x)?,
        UqMethod::Tta => tta_predict(&members[0], &x, &transforms)?,
        UqMethod::Combined => combined_uq(&members[0], &x, &transforms, n, seed)?,
    };
    let summary = r.summary();
    let class_names: Vec<String> = (0..r.mean_prob.channels()).map(|c| format!("class{c}")).collect();
    let mean_path = ctx.out.join("mean_prob.vol");
    let var_path = ctx.out.join("variance.vol");
    save_volume(
        &VolumeFile::image(restore(r.mean_prob, &crop)?).with_names(class_names.clone()),
        &mean_path,
    )?;
    save_volume(&VolumeFile::image(restore(r.variance, &crop)?).with_names(class_names), &var_path)?;
    let payload = json!({"mean_prob": mean_path, "variance": var_path, "summary": summary});
    ctx.write_json("uq_summary.json", &payload)?;
    ctx.emit(
        "uq",
        payload,
        format!(
            "{:?}: {} sample(s), mean variance {:.3e}, mean entropy {:.4}\n",
            method, summary.n_samples, summary.mean_variance, summary.mean_entropy
        ),
    );
    Ok(())
}
