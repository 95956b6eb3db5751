use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use depthfield::fixture::{make_fixture, FixtureKind};
use depthfield::hfmask::build_hf_mask;
use depthfield::io::{
    read_params, read_pfm, read_pgm, read_pyramid, write_params, write_pfm, write_pfm_image, write_pgm, write_ply,
    write_pyramid, PfmImage, PlyFormat,
};
use depthfield::metrics::{evaluate, AlignSpace, LogNormalization, Threshold};
use depthfield::sampler::{sample_per_pixel, sample_surface};
use depthfield::training::{evaluate_fit, toy_problem, train_toy, TrainConfig, TOY_LEARNING_RATE, TOY_SIZE};
use depthfield::{surface_normal, CameraIntrinsics, DepthField, DepthMap};

/// Worker-thread count for parallel decoding, sampling and training.
const THREADS_ENV: &str = "IDF_THREADS";

#[derive(Parser)]
#[command(
    name = "depthfield",
    version,
    about = "Query, sample and evaluate implicit depth fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a depth map at any output resolution.
    Decode(DecodeArgs),
    /// Area-uniform surface sampling to a PLY point cloud.
    Sample(SampleArgs),
    /// Surface normal map as a 3-channel PFM.
    Normals(NormalsArgs),
    /// High-frequency evaluation mask from a depth map.
    Hfmask(HfmaskArgs),
    /// δ accuracy of a predicted depth map.
    Eval(EvalArgs),
    /// Overfit a freshly initialized decoder on a fixture scene.
    TrainToy(TrainToyArgs),
    /// Write a synthetic fixture: pyramid, routed weights and ground truth.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct FieldArgs {
    /// Feature pyramid (.idfp).
    #[arg(long)]
    pyramid: PathBuf,
    /// Decoder weights (.idfw).
    #[arg(long)]
    params: PathBuf,
}

impl FieldArgs {
    fn load(&self) -> Result<DepthField> {
        let pyramid = read_pyramid(&self.pyramid).with_context(|| format!("reading {}", self.pyramid.display()))?;
        let params = read_params(&self.params).with_context(|| format!("reading {}", self.params.display()))?;
        Ok(DepthField::new(pyramid, params)?)
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long)]
    out: PathBuf,
    /// Output width; defaults to the pyramid's image width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Map normalized output back to depth with this log-depth range.
    #[arg(long, value_name = "LOG_MIN,LOG_MAX")]
    denormalize: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long, value_name = "FX,FY,CX,CY")]
    intrinsics: String,
    #[arg(long, default_value_t = 65_536)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One point per pixel center instead of area-uniform sampling.
    #[arg(long)]
    per_pixel: bool,
    /// Per-pixel grid as WxH; defaults to the image size.
    #[arg(long, value_name = "WxH")]
    grid: Option<String>,
    #[arg(long, value_enum, default_value_t = Encoding::Binary)]
    format: Encoding,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Binary,
    Ascii,
}

#[derive(Args)]
struct NormalsArgs {
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long, value_name = "FX,FY,CX,CY")]
    intrinsics: String,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HfmaskArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, default_value = "0,1,2,4", value_delimiter = ',')]
    scales: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Pixels to select; defaults to 1% of the image.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Binary PGM; scores are also reported inside the mask.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "depth", value_parser = ["depth", "disparity", "none"])]
    align: String,
    #[arg(long, default_value = "1.25^0.5,1.25,1.25^2")]
    thresholds: String,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct TrainToyArgs {
    /// constant[:d], ramp[:slope], slanted[:deg], two-plane or step-edge.
    #[arg(long, default_value = "slanted:30")]
    fixture: String,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TOY_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Trained decoder weights (.idfw).
    #[arg(long)]
    out: PathBuf,
    /// Also write the fixture pyramid the weights were trained on.
    #[arg(long)]
    pyramid_out: Option<PathBuf>,
    /// Fit summary and normalization range as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value_t = TOY_SIZE)]
    width: usize,
    #[arg(long, default_value_t = TOY_SIZE)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground truth resolution as a multiple of the nominal size.
    #[arg(long, default_value_t = 1)]
    gt_scale: usize,
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad {what} '{s}'"))?;
    parts
        .try_into()
        .map_err(|_| anyhow::anyhow!("{what} needs {N} comma-separated numbers, got '{s}'"))
}

fn parse_intrinsics(s: &str) -> Result<CameraIntrinsics> {
    let [fx, fy, cx, cy] = parse_floats::<4>(s, "intrinsics")?;
    Ok(CameraIntrinsics::new(fx, fy, cx, cy)?)
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once('x').with_context(|| format!("grid '{s}' is not WxH"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn print_config(command: &str, config: serde_json::Value) {
    eprintln!("depthfield {command} {config}");
}

fn with_extension_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn decode(a: DecodeArgs) -> Result<()> {
    let field = a.field.load()?;
    let w = a.width.unwrap_or(field.image_width() as usize);
    let h = a.height.unwrap_or(field.image_height() as usize);
    let range = a
        .denormalize
        .as_deref()
        .map(|s| {
            let [log_min, log_max] = parse_floats::<2>(s, "log-depth range")?;
            let r = LogNormalization { log_min, log_max };
            r.validate()?;
            Ok::<_, anyhow::Error>(r)
        })
        .transpose()?;
    print_config(
        "decode",
        json!({
            "pyramid": a.field.pyramid, "params": a.field.params, "out": a.out,
            "width": w, "height": h, "denormalize": range,
        }),
    );
    let mut map = field.decode_grid(w, h)?;
    if let Some(r) = range {
        map = DepthMap::from_raw(w, h, map.values().iter().map(|&v| r.denormalize(v)).collect())?;
    }
    write_pfm(&map, &a.out)?;
    println!("wrote {w}x{h} depth map to {}", a.out.display());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let field = a.field.load()?;
    let k = parse_intrinsics(&a.intrinsics)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => (field.image_width() as usize, field.image_height() as usize),
    };
    let format = match a.format {
        Encoding::Binary => PlyFormat::BinaryLittleEndian,
        Encoding::Ascii => PlyFormat::Ascii,
    };
    print_config(
        "sample",
        json!({
            "pyramid": a.field.pyramid, "params": a.field.params, "out": a.out,
            "intrinsics": [k.fx, k.fy, k.cx, k.cy],
            "mode": if a.per_pixel { "per-pixel" } else { "area-uniform" },
            "n": if a.per_pixel { grid.0 * grid.1 } else { a.n },
            "seed": a.seed, "grid": [grid.0, grid.1],
            "format": match a.format { Encoding::Binary => "binary_little_endian", Encoding::Ascii => "ascii" },
        }),
    );
    let pc = if a.per_pixel {
        sample_per_pixel(&field, &k, grid.0, grid.1)?
    } else {
        sample_surface(&field, &k, a.n, a.seed)?
    };
    write_ply(&pc, &a.out, format)?;
    println!("wrote {} points to {}", pc.len(), a.out.display());
    Ok(())
}

fn normals(a: NormalsArgs) -> Result<()> {
    use rayon::prelude::*;
    let field = a.field.load()?;
    let k = parse_intrinsics(&a.intrinsics)?;
    let w = a.width.unwrap_or(field.image_width() as usize);
    let h = a.height.unwrap_or(field.image_height() as usize);
    if w == 0 || h == 0 {
        bail!("output grid {w}x{h}");
    }
    print_config(
        "normals",
        json!({
            "pyramid": a.field.pyramid, "params": a.field.params, "out": a.out,
            "intrinsics": [k.fx, k.fy, k.cx, k.cy], "width": w, "height": h,
        }),
    );
    // pixels without a well-defined normal are written as zero vectors
    let normals: Vec<[f64; 3]> = (0..w * h)
        .into_par_iter()
        .map(|idx| surface_normal(&field, field.pixel_center(idx % w, idx / w, w, h), &k).unwrap_or([0.0; 3]))
        .collect();
    let undefined = normals.iter().filter(|n| **n == [0.0; 3]).count();
    let data = normals.iter().flat_map(|n| n.map(|c| c as f32)).collect();
    write_pfm_image(
        &PfmImage {
            width: w,
            height: h,
            channels: 3,
            data,
        },
        &a.out,
    )?;
    println!(
        "wrote {w}x{h} normal map to {} ({undefined} undefined)",
        a.out.display()
    );
    Ok(())
}

fn hfmask(a: HfmaskArgs) -> Result<()> {
    let depth = read_pfm(&a.depth).with_context(|| format!("reading {}", a.depth.display()))?;
    let n = a.n.unwrap_or((depth.len() / 100).max(1));
    print_config(
        "hfmask",
        json!({
            "depth": a.depth, "out": a.out, "scales": a.scales, "tau": a.tau, "n": n, "seed": a.seed,
        }),
    );
    let mask = build_hf_mask(&depth, &a.scales, a.tau, n, a.seed)?;
    write_pgm(mask.width, mask.height, &mask.mask, &a.out)?;
    println!(
        "selected {} of {} pixels, wrote {}",
        mask.count(),
        depth.len(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = read_pfm(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let gt = read_pfm(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    let space = AlignSpace::parse(&a.align)?;
    let thresholds = Threshold::parse_list(&a.thresholds)?;
    let mask = match &a.mask {
        Some(path) => {
            let (w, h, m) = read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
            if (w, h) != (gt.width(), gt.height()) {
                bail!("mask is {w}x{h}, ground truth is {}x{}", gt.width(), gt.height());
            }
            Some(m)
        }
        None => None,
    };
    print_config(
        "eval",
        json!({
            "pred": a.pred, "gt": a.gt, "mask": a.mask, "align": space.name(),
            "thresholds": thresholds.iter().map(|t| &t.label).collect::<Vec<_>>(), "json": a.json,
        }),
    );
    let report = evaluate(&pred, &gt, mask.as_deref(), space, &thresholds)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.json {
        depthfield::io::write_atomic(path, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn train(a: TrainToyArgs) -> Result<()> {
    let kind = FixtureKind::parse(&a.fixture)?;
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainConfig::toy()
    };
    cfg.validate()?;
    print_config(
        "train-toy",
        json!({
            "fixture": format!("{kind:?}"), "size": TOY_SIZE, "out": a.out,
            "pyramid_out": a.pyramid_out, "report": a.report, "train": cfg,
        }),
    );
    let (field, sup) = toy_problem(kind, a.seed, cfg.init_scale)?;
    let batch = sup.field_batch(field.image_width(), field.image_height());
    let start = Instant::now();
    let outcome = train_toy(&field, &batch, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let trained = field.with_params(outcome.params)?;
    let fit = evaluate_fit(&trained, &batch, &sup.range, 1.01)?;
    write_params(trained.params(), &a.out)?;
    if let Some(path) = &a.pyramid_out {
        write_pyramid(trained.pyramid(), path)?;
    }
    let summary = json!({
        "pairs": batch.len(), "steps": cfg.steps, "seconds": elapsed,
        "initial_loss": outcome.losses.first(), "final_loss": fit.loss,
        "delta_1.01": fit.delta,
        "log_min": sup.range.log_min, "log_max": sup.range.log_max,
    });
    if let Some(path) = &a.report {
        depthfield::io::write_atomic(path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    println!("loss={:.6}", fit.loss);
    println!("delta_1.01={:.4}", fit.delta);
    println!("denormalize={},{}", sup.range.log_min, sup.range.log_max);
    println!("seconds={elapsed:.2}");
    Ok(())
}

fn fixture(a: FixtureArgs) -> Result<()> {
    let kind = FixtureKind::parse(&a.kind)?;
    if a.gt_scale == 0 {
        bail!("gt scale must be positive");
    }
    let paths = [".idfp", ".idfw", "_gt.pfm"].map(|s| with_extension_suffix(&a.out_prefix, s));
    print_config(
        "fixture",
        json!({
            "kind": format!("{kind:?}"), "width": a.width, "height": a.height, "seed": a.seed,
            "gt_scale": a.gt_scale, "outputs": paths,
        }),
    );
    let fx = make_fixture(kind, a.width, a.height, a.seed)?;
    let gt = fx.render_gt(a.width * a.gt_scale, a.height * a.gt_scale)?;
    write_pyramid(&fx.pyramid, &paths[0])?;
    write_params(&fx.params, &paths[1])?;
    write_pfm(&gt, &paths[2])?;
    let k = fx.intrinsics;
    println!("intrinsics={},{},{},{}", k.fx, k.fy, k.cx, k.cy);
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}='{v}' is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Decode(a) => decode(a),
        Command::Sample(a) => sample(a),
        Command::Normals(a) => normals(a),
        Command::Hfmask(a) => hfmask(a),
        Command::Eval(a) => eval(a),
        Command::TrainToy(a) => train(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
