use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pairwhiten::artifact::StandaloneWhitener;
use pairwhiten::config::RunConfig;
use pairwhiten::manifest::{derive_manifest_from_naming, NamingConvention, PairManifest};
use pairwhiten::metrics::TTestMode;
use pairwhiten::results::{execute, load_results, render_summary, write_results};
use pairwhiten::synth::{default_bd_like_spec, generate, CohortSpec};
use pairwhiten::table::{FeatureTable, TableSchema};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Pairwise ZCA-cor whitening for paired brain features.
#[derive(Parser)]
#[command(name = "pairwhiten", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort table and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Cross-validate the whitened and baseline pipelines.
    Run(RunArgs),
    /// Render the summary of a results directory.
    Report {
        /// Results directory written by `run`.
        dir: PathBuf,
    },
    /// Fit or apply a standalone standardize-and-whiten transform.
    #[command(subcommand)]
    Whiten(WhitenCommand),
}

#[derive(Args)]
struct SynthArgs {
    /// Cohort specification (TOML); unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output table; the sidecar is written next to it as `<stem>.truth.json`.
    #[arg(long, default_value = "cohort.csv")]
    out: PathBuf,
    #[arg(long)]
    n_subjects: Option<usize>,
    #[arg(long)]
    prevalence: Option<f64>,
    #[arg(long)]
    r_lr: Option<f64>,
    #[arg(long)]
    r_gmcsf: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestMode {
    Paired,
    TwoSample,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, required_unless_present = "input")]
    config: Option<PathBuf>,
    /// Input table, for runs without a configuration file. Confounds then
    /// default to age, sex and site.
    #[arg(long, conflicts_with = "config")]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, overrides_with = "no_baseline")]
    baseline: bool,
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    alpha_lr: Option<f64>,
    #[arg(long)]
    alpha_gmcsf: Option<f64>,
    #[arg(long, value_enum)]
    t_test: Option<TestMode>,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "diagnosis")]
    label: String,
    /// Numeric non-feature columns.
    #[arg(long, value_delimiter = ',', default_value = "age")]
    numeric: Vec<String>,
    /// Categorical non-feature columns.
    #[arg(long, value_delimiter = ',', default_value = "sex,site")]
    categorical: Vec<String>,
}

impl TableArgs {
    fn read(&self) -> Result<FeatureTable> {
        let schema = TableSchema {
            label: self.label.clone(),
            numeric: self.numeric.clone(),
            categorical: self.categorical.clone(),
        };
        Ok(FeatureTable::read_csv(&self.input, &schema)?)
    }
}

#[derive(Subcommand)]
enum WhitenCommand {
    /// Fit on a table and save the transform.
    Fit {
        #[command(flatten)]
        table: TableArgs,
        /// Pair manifest (TOML); pairs are derived from column names otherwise.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        alpha_lr: Option<f64>,
        #[arg(long)]
        alpha_gmcsf: Option<f64>,
        #[arg(long, default_value = "whitener.json")]
        out: PathBuf,
    },
    /// Transform a table with a saved transform.
    Apply {
        #[command(flatten)]
        table: TableArgs,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .chain()
                .find_map(|c| c.downcast_ref::<pairwhiten::Error>())
                .is_some_and(|pe| pe.is_config_error());
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => synth(args),
        Command::Run(args) => run(args),
        Command::Report { dir } => {
            let loaded = load_results(&dir)?;
            let text = render_summary(&loaded);
            let path = dir.join("summary.txt");
            std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            print!("{text}");
            Ok(())
        }
        Command::Whiten(cmd) => whiten(cmd),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: CohortSpec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            CohortSpec::from_toml(&text)?
        }
        None => default_bd_like_spec(),
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.n_subjects {
        spec.n_subjects = v;
    }
    if let Some(v) = args.prevalence {
        spec.prevalence = v;
    }
    if let Some(v) = args.r_lr {
        spec.r_lr = v;
    }
    if let Some(v) = args.r_gmcsf {
        spec.r_gmcsf = v;
    }
    let cohort = generate(&spec)?;
    cohort.write(&args.out)?;
    eprintln!(
        "wrote {} ({} subjects, {} features)",
        args.out.display(),
        cohort.table.n_rows(),
        cohort.table.n_features()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match (&args.config, &args.input) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(input)) => {
            let mut cfg = RunConfig::for_input(input);
            cfg.confounds.continuous = vec!["age".into()];
            cfg.confounds.categorical = vec!["sex".into(), "site".into()];
            cfg
        }
        (None, None) => unreachable!("clap requires one of --config and --input"),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.out {
        cfg.out = v;
    }
    if args.no_baseline {
        cfg.baseline = false;
    } else if args.baseline {
        cfg.baseline = true;
    }
    if let Some(v) = args.folds {
        cfg.folds = v;
    }
    if let Some(mode) = args.t_test {
        cfg.t_test = match mode {
            TestMode::Paired => TTestMode::Paired,
            TestMode::TwoSample => TTestMode::TwoSample,
        };
    }
    let (lr, gmcsf) = cfg.hemisphere_and_tissue_labels();
    if let Some(a) = args.alpha_lr {
        cfg.alpha.insert(lr, a);
    }
    if let Some(a) = args.alpha_gmcsf {
        cfg.alpha.insert(gmcsf, a);
    }

    let outcome = execute(&cfg)?;
    write_results(&cfg.out, &outcome)?;
    let loaded = load_results(&cfg.out)?;
    print!("{}", render_summary(&loaded));
    eprintln!("results in {}", cfg.out.display());
    Ok(())
}

fn whiten(cmd: WhitenCommand) -> Result<()> {
    match cmd {
        WhitenCommand::Fit {
            table,
            manifest,
            alpha_lr,
            alpha_gmcsf,
            out,
        } => {
            let t = table.read()?;
            let convention = NamingConvention::default();
            let mut m = match &manifest {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    PairManifest::parse(&text, t.feature_names())?
                }
                None => derive_manifest_from_naming(t.feature_names(), &convention)?.manifest,
            };
            for (label, alpha) in [
                (&convention.hemisphere_label, alpha_lr),
                (&convention.tissue_label, alpha_gmcsf),
            ] {
                if let Some(a) = alpha {
                    if m.set_alpha(label, a)? == 0 {
                        return Err(pairwhiten::Error::Config(format!(
                            "no manifest stage is labelled `{label}`"
                        ))
                        .into());
                    }
                }
            }
            let w = StandaloneWhitener::fit(&t, &m)?;
            w.save(&out)?;
            eprintln!("wrote {} ({} pairs)", out.display(), m.pair_count());
            Ok(())
        }
        WhitenCommand::Apply {
            table,
            artifact,
            out,
        } => {
            let w = StandaloneWhitener::load(&artifact)?;
            let t = table.read()?;
            w.apply(&t)?.write_csv(&out)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}
