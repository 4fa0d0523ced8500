use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pnp_core::agent::train_policy;
use pnp_core::denoiser::{extract_patches, DenoiserTrainer};
use pnp_core::env::Environment;
use pnp_core::forward::{acceleration_to_rate, KSpaceMask};
use pnp_core::harness::eval::{read_csv, read_traces, write_csv, RESULTS_FILE, TRACES_FILE};
use pnp_core::harness::{
    evaluate_policy, ingest_dataset, load_image, write_curves, write_evaluation, write_phantoms, write_png,
    write_table, ExperimentConfig, ReportKind, ResultRecord,
};
use pnp_core::task::{ModelFactory, ProblemSampler, Task};

#[derive(Parser)]
#[command(name = "pnp", version, about = "Plug-and-play ADMM with learned parameter schedules")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set agent.iterations=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        for o in &self.overrides {
            config.set(o)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the k-space masks of every configured acceleration.
    MakeMasks {
        #[command(flatten)]
        config: ConfigArgs,
        /// Mask side length; defaults to the configured image size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Write procedural test images as PNGs.
    MakePhantoms {
        #[arg(long, default_value = "data/desk")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the conditional denoiser on patches of `data.denoiser_dir`.
    TrainDenoiser {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the parameter policy on `data.train_dir`.
    TrainPolicy {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate every configured policy on `data.test_dir`.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarize an evaluation directory.
    Report {
        /// Directory written by `eval`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: ReportKind,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct a single image with one policy and setting.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        /// Index into the configured policies.
        #[arg(long, default_value_t = 0)]
        policy: usize,
        /// Index into the configured problem settings.
        #[arg(long, default_value_t = 0)]
        setting: usize,
        /// Measurement seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `<output_dir>/run/<image>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ReportKind, String> {
    s.parse().map_err(|e: pnp_core::Error| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::MakeMasks { config, size } => make_masks(&config.load()?, size),
        Command::MakePhantoms { out, count, size, seed } => {
            for p in write_phantoms(&out, count, size, seed)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::TrainDenoiser { config, resume } => train_denoiser(&config.load()?, resume.as_deref()),
        Command::TrainPolicy { config } => train(&config.load()?),
        Command::Eval { config } => eval(&config.load()?),
        Command::Report { input, kind, out } => report(&input, kind, out.as_deref().unwrap_or(&input)),
        Command::Run {
            config,
            image,
            policy,
            setting,
            seed,
            out,
        } => run(&config.load()?, &image, policy, setting, seed, out),
    }
}

fn require<'a>(dir: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    dir.as_deref().with_context(|| format!("config key `{key}` is required for this command"))
}

fn make_masks(config: &ExperimentConfig, size: Option<usize>) -> Result<()> {
    if config.task != Task::Csmri {
        bail!("masks exist for the csmri task only");
    }
    let side = size.or(config.data.image_size).context("give --size or data.image_size")?;
    let dir = config.resolved_output_dir().join("masks");
    std::fs::create_dir_all(&dir)?;
    for &accel in &config.problem.accelerations {
        let mask = KSpaceMask::generate(
            (side, side),
            config.problem.pattern,
            acceleration_to_rate(accel),
            config.problem.mask_seed,
        )?;
        let stem = format!("mask_{}_x{accel}_{side}", config.problem.pattern.as_str());
        mask.save(&dir.join(format!("{stem}.safetensors")))?;
        write_png(mask.grid(), &dir.join(format!("{stem}.png")))?;
        println!("x{accel}: rate {:.4} -> {}", mask.rate()?, dir.join(stem).display());
    }
    Ok(())
}

fn train_denoiser(config: &ExperimentConfig, resume: Option<&Path>) -> Result<()> {
    let data = ingest_dataset(require(&config.data.denoiser_dir, "data.denoiser_dir")?, config.data.image_size)?;
    let tc = &config.denoiser_training;
    let patches = extract_patches(&data.tensors(), tc.patch_size, tc.patch_stride)?;
    if patches.is_empty() {
        bail!("no {0}x{0} patches fit the training images", tc.patch_size);
    }
    let out = config.resolved_output_dir();
    config.echo(&out)?;
    let mut trainer = match resume {
        Some(path) => DenoiserTrainer::resume(path)?,
        None => {
            let mut tc = tc.clone();
            tc.checkpoint_dir.get_or_insert_with(|| out.join("checkpoints"));
            DenoiserTrainer::new(tc)?
        }
    };
    log::info!("{} patches from {} images", patches.len(), data.images.len());
    let history = trainer.train(&patches)?;
    let path = out.join("denoiser.safetensors");
    trainer.save_checkpoint(&path)?;
    write_csv(&out.join("denoiser_history.csv"), &history)?;
    println!("{}", path.display());
    Ok(())
}

fn train(config: &ExperimentConfig) -> Result<()> {
    let data = ingest_dataset(require(&config.data.train_dir, "data.train_dir")?, config.data.image_size)?;
    let out = config.resolved_output_dir();
    config.echo(&out)?;
    let mut agent = config.agent.clone();
    agent.checkpoint_dir.get_or_insert_with(|| out.join("checkpoints"));
    let env = Environment::new(agent.env.clone(), config.prior()?)?;
    let mut sampler = ProblemSampler::new(data.tensors(), config.settings(), config.factory())?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let snap = train_policy(&env, &mut sampler, &agent, Some(&mut log))?;
    let path = out.join("policy.safetensors");
    snap.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn eval(config: &ExperimentConfig) -> Result<()> {
    let data = ingest_dataset(require(&config.data.test_dir, "data.test_dir")?, config.data.image_size)?;
    let prior = config.prior()?;
    let mut factory = config.factory();
    let result = evaluate_policy(
        &data.images,
        &config.settings(),
        &config.policies,
        &config.seeds,
        prior,
        &mut factory,
        &config.eval_options(false),
    )?;
    let out = config.resolved_output_dir();
    config.echo(&out)?;
    write_evaluation(&out, &result)?;
    println!("{} records -> {}", result.records.len(), out.join(RESULTS_FILE).display());
    Ok(())
}

fn report(input: &Path, kind: ReportKind, out: &Path) -> Result<()> {
    let written = match kind {
        ReportKind::Table => {
            let records: Vec<ResultRecord> = read_csv(&input.join(RESULTS_FILE))?;
            write_table(out, &records)?
        }
        ReportKind::Curves => write_curves(out, &read_traces(&input.join(TRACES_FILE))?)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(
    config: &ExperimentConfig,
    image: &Path,
    policy: usize,
    setting: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = config
        .policies
        .get(policy)
        .with_context(|| format!("policy index {policy} out of range ({} configured)", config.policies.len()))?;
    let settings = config.settings();
    let s = settings
        .get(setting)
        .with_context(|| format!("setting index {setting} out of range ({} configured)", settings.len()))?;
    let seed = seed.unwrap_or(config.seeds[0]);
    let item = load_image(image, config.data.image_size)?;
    let prior = config.prior()?;
    let mut factory: ModelFactory = config.factory();
    let result = evaluate_policy(
        std::slice::from_ref(&item),
        std::slice::from_ref(s),
        std::slice::from_ref(spec),
        &[seed],
        prior,
        &mut factory,
        &config.eval_options(true),
    )?;
    let out = out.unwrap_or_else(|| config.resolved_output_dir().join("run").join(&item.0));
    std::fs::create_dir_all(&out)?;
    write_png(&result.images[0].abs()?.squeeze(0)?, &out.join("reconstruction.png"))?;
    write_csv(&out.join(RESULTS_FILE), &result.records[..1])?;
    let r = &result.records[0];
    println!(
        "{} {} {}: {:.4} dB after {} iterations",
        r.image_id,
        s.label(),
        r.policy,
        r.psnr_db,
        r.iterations
    );
    Ok(())
}
