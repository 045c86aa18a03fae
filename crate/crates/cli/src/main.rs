use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use radsr::autodiff::gradcheck::{op_suite, GradCheckConfig};
use radsr::dataset::{self, SplitProfile};
use radsr::degrade::{degrade_pair, DegradationConfig};
use radsr::image::{load_image, save_image};
use radsr::metrics::{evaluate_set_in, format_table, ColorSpace, TableEntry};
use radsr::models::{network_suite, ModelSpec, ModelState};
use radsr::training::{
    evaluate_on, train_denoise, train_joint, train_sr, EvalInput, EvalSet, LogRecord, PatchSampler, TrainConfig,
};

const CONFIG_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "radsr", version, about = "Radiograph super-resolution toolkit")]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file merged over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named degradation profile.
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(SplitProfile::NAMES))]
    profile: Option<String>,
    /// Color space for PSNR/SSIM.
    #[arg(long, global = true, value_enum)]
    space: Option<Space>,
    /// Upscaling factor (overrides the profile).
    #[arg(long, global = true)]
    scale: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Luma,
    Rgb,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputKind {
    Noisy,
    Clean,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic radiograph-like fixture images.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = dataset::FIXTURE_COUNT)]
        count: usize,
        #[arg(long, default_value_t = dataset::FIXTURE_SIZE)]
        size: usize,
    },
    /// Synthesize an HR/LRnoisy/LRclean dataset with a manifest.
    Synth {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade one image and print the sampled parameters.
    Degrade {
        input: PathBuf,
        #[arg(long)]
        out_noisy: PathBuf,
        #[arg(long)]
        out_clean: Option<PathBuf>,
    },
    /// PSNR/SSIM between two images or two directories.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Train the denoiser on HR images.
    TrainDenoise(TrainArgs),
    /// Train the SR network on HR images.
    TrainSr(TrainArgs),
    /// Fine-tune both networks end to end.
    TrainJoint {
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        sr: PathBuf,
        #[command(flatten)]
        common: CommonTrain,
    },
    /// Score a model and the bicubic baseline on a synthesized set.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to evaluate; a freshly initialized model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "noisy")]
        input: InputKind,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Replay a manifest and report any mismatching file.
    Verify { manifest: PathBuf },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Start from this checkpoint instead of a fresh init.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    common: CommonTrain,
}

#[derive(clap::Args)]
struct CommonTrain {
    /// Directory of HR training images.
    #[arg(long)]
    hr: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines log file (stdout when omitted).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Manifest of a held-out set for periodic evaluation.
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
}

/// A bad flag or config value; maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    version: u32,
    profile: String,
    seed: u64,
    space: ColorSpace,
    crop_border: usize,
    degradation: DegradationConfig,
    model: ModelSpec,
    train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let profile = SplitProfile::named("mura-sr").expect("built-in profile");
        let degradation = profile.config();
        RunConfig {
            version: CONFIG_VERSION,
            profile: profile.name.to_string(),
            seed: 0,
            space: ColorSpace::Luma,
            crop_border: 0,
            model: ModelSpec::with_scale(degradation.scale),
            degradation,
            train: TrainConfig::default(),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then profile, then the config file, then flags.
fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let file: Option<Value> = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let file_profile = file
        .as_ref()
        .and_then(|v| v.get("profile"))
        .and_then(Value::as_str)
        .map(str::to_string);
    let profile_name = cli.profile.clone().or(file_profile).unwrap_or_else(|| "mura-sr".into());
    let profile = SplitProfile::named(&profile_name).map_err(|e| usage(e.to_string()))?;

    let mut cfg = RunConfig::default();
    profile.apply(&mut cfg.degradation);
    cfg.profile = profile.name.to_string();
    if let Some(file) = file {
        let mut v = serde_json::to_value(&cfg)?;
        merge(&mut v, file);
        cfg = serde_json::from_value(v).map_err(|e| usage(format!("config: {e}")))?;
    }
    if cli.profile.is_some() {
        profile.apply(&mut cfg.degradation);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(space) = cli.space {
        cfg.space = match space {
            Space::Luma => ColorSpace::Luma,
            Space::Rgb => ColorSpace::Rgb,
        };
    }
    if let Some(scale) = cli.scale {
        cfg.degradation.scale = scale;
    }
    cfg.model.sr.scale = cfg.degradation.scale;
    if cfg.version != CONFIG_VERSION {
        return Err(usage(format!("unsupported config version {}", cfg.version)));
    }
    cfg.degradation.validate()?;
    cfg.model.validate()?;
    cfg.train.validate(cfg.degradation.scale)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<radsr::Error>(), Some(radsr::Error::Argument(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = resolve(cli)?;
    eprintln!("{}", serde_json::to_string_pretty(&cfg)?);
    match &cli.command {
        Command::Fixture { out, count, size } => {
            let files = dataset::write_fixture(out, *count, *size, cfg.seed)?;
            println!("wrote {} images to {}", files.len(), out.display());
        }
        Command::Synth { hr, out } => {
            let manifest = dataset::synth_dataset(hr, out, &cfg.degradation, cfg.seed)?;
            println!(
                "wrote {} entries to {}",
                manifest.entries.len(),
                out.join(dataset::MANIFEST_FILE).display()
            );
        }
        Command::Degrade { input, out_noisy, out_clean } => {
            let img = load_image(input)?.center_crop_to_multiple(cfg.degradation.scale)?;
            let pair = degrade_pair(&img, &cfg.degradation, cfg.seed)?;
            save_image(&pair.y, out_noisy)?;
            if let Some(p) = out_clean {
                save_image(&pair.y_clean, p)?;
            }
            println!("{}", serde_json::to_string_pretty(&pair.params)?);
        }
        Command::Metrics { a, b, crop, json } => metrics(&cfg, a, b, crop.unwrap_or(cfg.crop_border), *json)?,
        Command::TrainDenoise(args) | Command::TrainSr(args) => {
            let sr = matches!(cli.command, Command::TrainSr(_));
            let mut state = match &args.init {
                Some(p) => ModelState::<f32>::load(p)?,
                None => ModelState::<f32>::init(&cfg.model, cfg.seed)?,
            };
            let (data, eval, tcfg) = training_inputs(&cfg, &args.common)?;
            let log = if sr {
                train_sr(&mut state, &data, &tcfg, eval.as_ref())?
            } else {
                train_denoise(&mut state, &data, &tcfg, eval.as_ref())?
            };
            write_log(args.common.log.as_deref(), &log)?;
            state.save(&args.common.out, serde_json::to_value(&cfg)?)?;
        }
        Command::TrainJoint { denoiser, sr, common } => {
            let den = ModelState::<f32>::load(denoiser)?;
            let srs = ModelState::<f32>::load(sr)?;
            let (data, eval, tcfg) = training_inputs(&cfg, common)?;
            let (state, log) = train_joint(Some(&den), Some(&srs), &data, &tcfg, eval.as_ref())?;
            write_log(common.log.as_deref(), &log)?;
            state.save(&common.out, serde_json::to_value(&cfg)?)?;
        }
        Command::Eval { manifest, model, input, crop, json } => {
            let set = dataset::load_eval_set(manifest)?;
            let state = match model {
                Some(p) => ModelState::<f64>::load(p)?,
                None => {
                    let mut spec = cfg.model.clone();
                    spec.sr.scale = dataset::DatasetManifest::load(manifest)?.config.scale;
                    ModelState::<f64>::init(&spec, cfg.seed)?
                }
            };
            let input = match input {
                InputKind::Noisy => EvalInput::Noisy,
                InputKind::Clean => EvalInput::Clean,
            };
            let result = evaluate_on(&state, &set, input, crop.unwrap_or(cfg.crop_border))?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                let name = manifest
                    .parent()
                    .and_then(Path::file_name)
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "test".into());
                let scale = state.spec.sr.scale;
                print!(
                    "{}",
                    format_table(&[
                        TableEntry { method: "bicubic", dataset: &name, scale, report: &result.bicubic },
                        TableEntry { method: "model", dataset: &name, scale, report: &result.model },
                    ])
                );
            }
        }
        Command::Verify { manifest } => {
            let report = dataset::verify_manifest(manifest)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Gradcheck { json } => {
            let gc = GradCheckConfig { seed: cfg.seed, ..GradCheckConfig::default() };
            let mut reports = op_suite(&gc)?;
            reports.extend(network_suite(&gc)?);
            if *json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            } else {
                for r in &reports {
                    println!(
                        "{:<4} {:<28} max_rel {:.3e} checked {} skipped {}",
                        if r.passed { "ok" } else { "FAIL" },
                        r.name,
                        r.max_rel_error,
                        r.checked,
                        r.skipped_kinks
                    );
                }
            }
            if reports.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn training_inputs(cfg: &RunConfig, args: &CommonTrain) -> anyhow::Result<(PatchSampler, Option<EvalSet>, TrainConfig)> {
    let hr: Vec<_> = dataset::load_dir(&args.hr)?.into_iter().map(|(_, img)| img).collect();
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    if let Some(steps) = args.steps {
        tcfg.steps_separate = steps;
        tcfg.steps_joint = steps;
    }
    let data = PatchSampler::new(hr, cfg.degradation.clone(), tcfg.patch_size, tcfg.batch_size, tcfg.seed, tcfg.sampling)?;
    let eval = args.eval_manifest.as_deref().map(dataset::load_eval_set).transpose()?;
    if eval.is_some() && tcfg.eval_every == 0 {
        tcfg.eval_every = 100;
    }
    Ok((data, eval, tcfg))
}

fn write_log(path: Option<&Path>, log: &[LogRecord]) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn metrics(cfg: &RunConfig, a: &Path, b: &Path, crop: usize, json: bool) -> anyhow::Result<()> {
    let pairs = if a.is_dir() && b.is_dir() {
        let left = dataset::load_dir(a)?;
        let right = dataset::load_dir(b)?;
        let mut pairs = Vec::new();
        for (id, img) in left {
            match right.iter().find(|(rid, _)| *rid == id) {
                Some((_, other)) => pairs.push((id, img, other.clone())),
                None => bail!("{} has no counterpart for {id}", b.display()),
            }
        }
        pairs
    } else if a.is_dir() || b.is_dir() {
        return Err(usage("metrics needs two files or two directories"));
    } else {
        let (ia, ib) = (load_image(a)?, load_image(b)?);
        let id = a.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        vec![(id, ia, ib)]
    };
    let refs: Vec<_> = pairs.iter().map(|(id, x, y)| (id.as_str(), x, y)).collect();
    let report = evaluate_set_in(&refs, crop, cfg.space)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let fmt = |p: f64| if p.is_infinite() { "inf".to_string() } else { format!("{p:.4}") };
    if report.per_image.len() > 1 {
        for s in &report.per_image {
            println!("{}: PSNR {} dB / SSIM {:.6}", s.id, fmt(s.psnr_db), s.ssim);
        }
        println!("mean ({} images): PSNR {} dB / SSIM {:.6}", report.per_image.len(), fmt(report.mean_psnr_db), report.mean_ssim);
    } else {
        println!("PSNR {} dB / SSIM {:.6}", fmt(report.mean_psnr_db), report.mean_ssim);
    }
    Ok(())
}
