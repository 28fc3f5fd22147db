//! `synthmeter`: command-line front end for the evaluation toolkit.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use synthmeter::fidelity::{self, FidelityConfig};
use synthmeter::generators::{gmm_generate, memorizer_generate, GeneratorKind, GeneratorMetadata, MemorizerConfig, SamplingMode};
use synthmeter::gmm::FitConfig;
use synthmeter::poisoning::{inject, make_attack_registry, OutlierRegistry, OutlierSpec};
use synthmeter::privacy::{mia_plain, mia_poisoned, reconstruction_ks, reconstruction_poisoned, MiaConfig, ReconstructionConfig};
use synthmeter::profile::{ingest, load_wide, save_wide, split_households};
use synthmeter::report::{load_config, run_full_evaluation, threshold_policy_check, Manifest};
use synthmeter::utility::{overlapping_years, tstr_classify, tstr_forecast_mean, tstr_forecast_quantile, TstrConfig, TstrResult};
use synthmeter::{Error, Horizon, ProfileSet, Result, Role, SplitSpec};

#[derive(Parser)]
#[command(name = "synthmeter", version, about = "Evaluate synthetic smart meter load profiles")]
struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. The default of 1 gives bit-identical reruns.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory for reports and side tables.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn long-format readings into wide daily or weekly profiles.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "daily")]
        horizon: Horizon,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split profiles into train and holdout by household.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        holdout_out: PathBuf,
    },
    /// Inject Gaussian outlier profiles into a training set.
    InjectOutliers {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 6.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Mean of the unseen, differently distributed attack rows.
        #[arg(long, default_value_t = 12.0)]
        diff_mu: f64,
        #[arg(long, default_value_t = 1.0)]
        diff_sigma: f64,
        #[arg(long)]
        poisoned_out: PathBuf,
        #[arg(long)]
        registry_out: PathBuf,
    },
    /// Produce a synthetic set with a reference generator.
    Generate {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0.01, conflicts_with = "k")]
        jitter: f64,
        #[arg(long, default_value_t = 25)]
        k: usize,
        #[arg(long, value_enum, default_value = "uniform")]
        mode: Mode,
        #[arg(long)]
        output: PathBuf,
        /// Privacy budget claimed by the generator, echoed into reports.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Fidelity metrics of a synthetic set against real data.
    Fidelity {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruction and membership inference attacks.
    #[command(subcommand)]
    Privacy(PrivacyCommand),
    /// Train-on-synthetic, test-on-real tasks.
    #[command(subcommand)]
    Utility(UtilityCommand),
    /// Run every suite named in a manifest (`demo` selects the built-in one).
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Memorizer,
    Gmm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uniform,
    Sequential,
}

#[derive(Args)]
struct Triple {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
}

#[derive(Args)]
struct MiaArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PrivacyCommand {
    /// Distance-based KS reconstruction test.
    Recon {
        #[command(flatten)]
        sets: Triple,
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruction of injected outliers.
    ReconPoisoned {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        /// `start:end:step` or a comma-separated list.
        #[arg(long, default_value = "0.05:1.0:0.05")]
        ratios: String,
        #[arg(long, default_value_t = 0.3)]
        policy_ratio: f64,
        #[arg(long, default_value_t = 0.0)]
        max_fraction: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Discriminator membership inference on train vs holdout.
    Mia {
        #[command(flatten)]
        sets: Triple,
        #[command(flatten)]
        opts: MiaArgs,
    },
    /// Membership inference on the outlier registry.
    MiaPoisoned {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        holdout: PathBuf,
        #[command(flatten)]
        opts: MiaArgs,
    },
}

#[derive(Args)]
struct TstrArgs {
    #[arg(long)]
    real_fit: PathBuf,
    #[arg(long)]
    synthetic_fit: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Evaluate even when fit and eval sets share calendar years.
    #[arg(long)]
    allow_overlap: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ForecastKind {
    Mean,
    Q95,
}

#[derive(Subcommand)]
enum UtilityCommand {
    /// Season classification.
    TstrClassify(TstrArgs),
    /// Last-slot forecasting, by mean or 95th percentile.
    TstrForecast {
        #[arg(long, value_enum, default_value = "mean")]
        kind: ForecastKind,
        #[command(flatten)]
        args: TstrArgs,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::InvalidConfig(format!("{}: {e}", parent.display())))?;
    }
    let file = File::create(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects a NaN step
fn parse_ratios(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse ratios `{spec}`"));
    let parts: Vec<f64> = spec
        .split([':', ','])
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if spec.contains(':') {
        let [start, end, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step).round() as usize;
        // snap to 12 decimals so that e.g. 0.05 + 5 * 0.05 is exactly 0.3
        Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
    } else {
        Ok(parts)
    }
}

struct Ctx {
    seed: u64,
    explicit_seed: Option<u64>,
    output_dir: PathBuf,
}

impl Ctx {
    fn report_path(&self, given: Option<PathBuf>, default: &str) -> PathBuf {
        given.unwrap_or_else(|| self.output_dir.join(default))
    }
}

fn load(path: &Path, role: Role) -> Result<ProfileSet> {
    load_wide(path, role, None)
}

fn tstr(
    args: &TstrArgs,
    ctx: &Ctx,
    run: impl FnOnce(&ProfileSet, &ProfileSet, &ProfileSet, &TstrConfig) -> Result<TstrResult>,
    stem: &str,
) -> Result<bool> {
    let real_fit = load(&args.real_fit, Role::Train)?;
    let synthetic_fit = load(&args.synthetic_fit, Role::Synthetic)?;
    let eval = load(&args.eval, Role::Holdout)?;
    if !args.allow_overlap {
        for (name, set) in [("real fit", &real_fit), ("synthetic fit", &synthetic_fit)] {
            let shared = overlapping_years(set, &eval);
            if !shared.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{name} set shares years {shared:?} with the eval set; pass --allow-overlap to continue"
                )));
            }
        }
    }
    let cfg = TstrConfig {
        epochs: args.epochs,
        seed: ctx.seed,
        ..TstrConfig::default()
    };
    let result = run(&real_fit, &synthetic_fit, &eval, &cfg)?;
    result.write_trace(create(&ctx.output_dir.join(format!("{stem}_epochs.csv")))?)?;
    write_json(&ctx.report_path(args.report.clone(), &format!("{stem}_report.json")), &result)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(true)
}

/// Runs one command; `Ok(false)` means it completed with failed sections.
fn run(command: Command, ctx: &Ctx) -> Result<bool> {
    match command {
        Command::Ingest { input, horizon, output } => {
            let (set, stats) = ingest(&input, horizon)?;
            save_wide(&output, &set)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Split {
            input,
            holdout_fraction,
            train_out,
            holdout_out,
        } => {
            let data = load(&input, Role::Train)?;
            let spec = SplitSpec {
                holdout_fraction,
                seed: ctx.seed,
                ..SplitSpec::default()
            };
            let (train, holdout) = split_households(&data, &spec)?;
            save_wide(&train_out, &train)?;
            save_wide(&holdout_out, &holdout)?;
            println!("train {} profiles, holdout {} profiles", train.len(), holdout.len());
        }
        Command::InjectOutliers {
            train,
            count,
            mu,
            sigma,
            diff_mu,
            diff_sigma,
            poisoned_out,
            registry_out,
        } => {
            let train = load(&train, Role::Train)?;
            let spec = OutlierSpec {
                count,
                mu,
                sigma,
                seed: ctx.seed,
            };
            let diff = OutlierSpec {
                count,
                mu: diff_mu,
                sigma: diff_sigma,
                seed: ctx.seed.wrapping_add(1),
            };
            let registry = make_attack_registry(&spec, train.horizon(), &diff)?;
            let poisoned = inject(&train, &registry.seen, ctx.seed.wrapping_add(2))?;
            save_wide(&poisoned_out, &poisoned)?;
            registry.save(&registry_out)?;
            println!("injected {} outliers into {} profiles", registry.seen.len(), train.len());
        }
        Command::Generate {
            kind,
            train,
            n,
            jitter,
            k,
            mode,
            output,
            epsilon,
        } => {
            let train = load(&train, Role::Train)?;
            let n = n.unwrap_or(train.len());
            let (synthetic, mut meta) = match kind {
                GenKind::Memorizer => {
                    let mode = match mode {
                        Mode::Uniform => SamplingMode::Uniform,
                        Mode::Sequential => SamplingMode::Sequential,
                    };
                    let cfg = MemorizerConfig {
                        jitter_sigma: jitter,
                        seed: ctx.seed,
                        mode,
                    };
                    let mut meta = GeneratorMetadata::new("memorizer", GeneratorKind::Memorizer);
                    meta.notes = format!("jitter_sigma={jitter}");
                    (memorizer_generate(&train, n, &cfg)?, meta)
                }
                GenKind::Gmm => {
                    let out = gmm_generate(&train, n, &FitConfig::with_k(k, ctx.seed))?;
                    let mut meta = GeneratorMetadata::new("gmm-sampler", GeneratorKind::GmmSampler);
                    meta.notes = format!("k={k}, clamped_values={}", out.clamped);
                    (out.synthetic, meta)
                }
            };
            meta.claimed_epsilon = epsilon;
            save_wide(&output, &synthetic)?;
            meta.save_sidecar(&output)?;
            println!("wrote {} synthetic profiles", synthetic.len());
        }
        Command::Fidelity {
            real,
            synthetic,
            config,
            report,
        } => {
            let mut cfg: FidelityConfig = match config {
                Some(path) => load_config(path)?,
                None => FidelityConfig::default(),
            };
            if let Some(seed) = ctx.explicit_seed {
                cfg.seed = seed;
            }
            let real = load(&real, Role::Train)?;
            let synthetic = load(&synthetic, Role::Synthetic)?;
            let result = fidelity::evaluate(&real, &synthetic, &cfg)?;
            fidelity::write_slot_table(create(&ctx.output_dir.join("fidelity_slots.csv"))?, &real, &synthetic, &cfg.quantiles)?;
            write_json(&ctx.report_path(report, "fidelity_report.json"), &result)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Privacy(cmd) => return privacy(cmd, ctx),
        Command::Utility(UtilityCommand::TstrClassify(args)) => return tstr(&args, ctx, tstr_classify, "tstr_classify"),
        Command::Utility(UtilityCommand::TstrForecast { kind, args }) => {
            return match kind {
                ForecastKind::Mean => tstr(&args, ctx, tstr_forecast_mean, "tstr_forecast_mean"),
                ForecastKind::Q95 => tstr(&args, ctx, |a, b, c, cfg| tstr_forecast_quantile(a, b, c, 0.95, cfg), "tstr_forecast_q95"),
            }
        }
        Command::Evaluate { manifest } => {
            let (mut m, base) = Manifest::load(&manifest)?;
            if let Some(seed) = ctx.explicit_seed {
                m.seed = seed;
            }
            let run = run_full_evaluation(&m, &base, &ctx.output_dir)?;
            println!("{}", ctx.output_dir.join("report.json").display());
            return Ok(run.report.all_ok());
        }
    }
    Ok(true)
}

fn mia_config(opts: &MiaArgs, seed: u64) -> MiaConfig {
    MiaConfig {
        epochs: opts.epochs,
        seed,
        ..MiaConfig::default()
    }
}

fn privacy(cmd: PrivacyCommand, ctx: &Ctx) -> Result<bool> {
    match cmd {
        PrivacyCommand::Recon { sets, sample_size, report } => {
            let ks = reconstruction_ks(
                &load(&sets.train, Role::Train)?,
                &load(&sets.holdout, Role::Holdout)?,
                &load(&sets.synthetic, Role::Synthetic)?,
                sample_size,
                ctx.seed,
            )?;
            write_json(&ctx.report_path(report, "recon_report.json"), &ks)?;
            println!("{}", serde_json::to_string_pretty(&ks)?);
        }
        PrivacyCommand::ReconPoisoned {
            registry,
            synthetic,
            ratios,
            policy_ratio,
            max_fraction,
            report,
        } => {
            let registry = OutlierRegistry::load(&registry, None)?;
            let synthetic = load_wide(&synthetic, Role::Synthetic, Some(registry.horizon()))?;
            let cfg = ReconstructionConfig {
                threshold_ratios: parse_ratios(&ratios)?,
                seed: ctx.seed,
                ..ReconstructionConfig::default()
            };
            let result = reconstruction_poisoned(&registry, &synthetic, &cfg)?;
            result.write_curve(create(&ctx.output_dir.join("reconstruction_curve.csv"))?)?;
            let policy = threshold_policy_check(&result, policy_ratio, max_fraction).ok();
            let body = serde_json::json!({ "reconstruction": result, "policy": policy });
            write_json(&ctx.report_path(report, "recon_poisoned_report.json"), &body)?;
            println!("{}", serde_json::to_string_pretty(&body)?);
        }
        PrivacyCommand::Mia { sets, opts } => {
            let result = mia_plain(
                &load(&sets.train, Role::Train)?,
                &load(&sets.holdout, Role::Holdout)?,
                &load(&sets.synthetic, Role::Synthetic)?,
                &mia_config(&opts, ctx.seed),
            )?;
            write_json(&ctx.report_path(opts.report.clone(), "mia_report.json"), &result)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        PrivacyCommand::MiaPoisoned {
            registry,
            synthetic,
            holdout,
            opts,
        } => {
            let registry = OutlierRegistry::load(&registry, None)?;
            let horizon = Some(registry.horizon());
            let result = mia_poisoned(
                &registry,
                &load_wide(&synthetic, Role::Synthetic, horizon)?,
                &load_wide(&holdout, Role::Holdout, horizon)?,
                &mia_config(&opts, ctx.seed),
            )?;
            write_json(&ctx.report_path(opts.report.clone(), "mia_poisoned_report.json"), &result)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(2);
    }
    if let Err(e) = std::fs::create_dir_all(&cli.output_dir) {
        eprintln!("error: {}: {e}", cli.output_dir.display());
        return ExitCode::from(2);
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        explicit_seed: cli.seed,
        output_dir: cli.output_dir,
    };
    match run(cli.command, &ctx) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more suites failed; see report.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_ranges_hit_the_policy_point() {
        let r = parse_ratios("0.05:1.0:0.05").unwrap();
        assert_eq!(r.len(), 20);
        assert!(r.contains(&0.3));
        assert_eq!(r, synthmeter::privacy::default_ratios());
        assert_eq!(parse_ratios("0.1,0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_ratios("0.1:0.2").is_err());
        assert!(parse_ratios("a").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
