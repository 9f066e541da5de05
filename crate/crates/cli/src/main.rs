use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rarebound::bayes::{credible_bound, default_grid, CredibleConfig};
use rarebound::blackbox::serve_toy;
use rarebound::bounds::{crude_mc_bound, REPORT_SCHEMA_VERSION};
use rarebound::campaign::{
    build_design, classify_point, oracle_pi, run_toy_study, CampaignConfig, ObjectiveSpec, StudyMethod, Synthetic,
    CAMPAIGN_SCHEMA_VERSION,
};
use rarebound::design::{lhs, lhs_maximin, scale_to_box, Design};
use rarebound::error::{Error, ErrorClass};
use rarebound::kriging::{fit_mle, loo_residuals, GpModel, LooScaling};
use rarebound::mbis::{run_mbis, KappaRule, MbisConfig};
use rarebound::sampling::substream;

#[derive(Parser)]
#[command(name = "rarebound", version, about = "Upper confidence bounds on rare-event probabilities")]
struct Cli {
    /// TOML file with campaign settings; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Total black-box evaluation budget (overrides the config file).
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a space-filling design as CSV.
    Design(DesignArgs),
    /// Evaluate a design and fit the Kriging model.
    Fit(FitArgs),
    /// Leave-one-out residuals of a fitted model.
    Crossval(CrossvalArgs),
    /// Upper bound on the failure probability.
    Bound {
        #[command(subcommand)]
        method: BoundCommand,
    },
    /// Two-stage safety verdict for the configured objective.
    Classify,
    /// Repeated toy-example study with coverage summaries.
    Study(StudyArgs),
    /// Reference failure probability by direct Monte Carlo (no budget).
    Oracle(OracleArgs),
    /// Serve the toy function over the line protocol on stdin/stdout.
    #[command(hide = true)]
    ToyServer,
}

#[derive(Args)]
struct DesignArgs {
    /// Number of points (defaults to the config's `n`).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = DesignKind::LhsMaximin)]
    kind: DesignKind,
    /// Also evaluate the objective at every point.
    #[arg(long)]
    evaluate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignKind {
    Lhs,
    LhsMaximin,
}

#[derive(Args)]
struct FitArgs {
    /// Design CSV with an output column; built and evaluated when absent.
    #[arg(long)]
    design: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Scaling::StdDev)]
    scaling: Scaling,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    StdDev,
    Variance,
}

#[derive(Subcommand)]
enum BoundCommand {
    /// Exact binomial bound from `N` plain Monte Carlo evaluations.
    Crude {
        /// Number of evaluations (defaults to the whole budget).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Credible bound from conditional simulations of the model.
    Bayes {
        /// Fitted model; otherwise `bayes_n` points are evaluated and fitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Importance sampling in the critical region of the model.
    Mbis {
        /// Fitted model; otherwise `n` points are evaluated and fitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Pick kappa so that `m` of `m_region` draws fall in the region.
        #[arg(long)]
        tuned: bool,
    },
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Mbis, Method::Bayes])]
    methods: Vec<Method>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Mbis,
    Bayes,
}

#[derive(Args)]
struct OracleArgs {
    /// Monte Carlo sample size (defaults to the config's `oracle_samples`).
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Config(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Precondition => 2,
                ErrorClass::Budget => 3,
                ErrorClass::Numerical => 4,
                ErrorClass::External => 1,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

struct Ctx {
    config: CampaignConfig,
    seed: u64,
    out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes pretty JSON to the output directory and echoes it on stdout.
    fn emit(&self, name: &str, value: &impl serde::Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.path(name), &text)?;
        echo(&text)
    }

    fn load_model(&self, path: &Path) -> CliResult<GpModel> {
        let model = GpModel::load_json(path)?;
        let d = self.config.objective.distribution()?.dim();
        if model.dim() != d {
            return Err(Error::InvalidInput(format!("model has dimension {}, objective has {d}", model.dim())).into());
        }
        Ok(model)
    }
}

/// Prints to stdout; a reader that went away (`| head`) is not an error.
fn echo(text: &str) -> CliResult<()> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_config(cli: &Cli) -> CliResult<CampaignConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<CampaignConfig>(&text)
                .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?
        }
        None => CampaignConfig::default(),
    };
    if let Some(b) = cli.budget {
        config.budget = b;
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::ToyServer = cli.command {
        let stdin = io::stdin();
        serve_toy(stdin.lock(), io::stdout().lock())?;
        return Ok(());
    }
    let config = load_config(&cli)?;
    fs::create_dir_all(&cli.out_dir)?;
    let ctx = Ctx { config, seed: cli.seed, out_dir: cli.out_dir };
    match cli.command {
        Command::Design(a) => design(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Crossval(a) => crossval(&ctx, a),
        Command::Bound { method } => bound(&ctx, method),
        Command::Classify => classify(&ctx),
        Command::Study(a) => study(&ctx, a),
        Command::Oracle(a) => oracle(&ctx, a),
        Command::ToyServer => unreachable!(),
    }
}

fn design(ctx: &Ctx, a: DesignArgs) -> CliResult<()> {
    let c = &ctx.config;
    let n = a.n.unwrap_or(c.n);
    let dist = c.objective.distribution()?;
    let seed = substream(ctx.seed, "design");
    let unit = match a.kind {
        DesignKind::Lhs => lhs(n, dist.dim(), seed)?,
        DesignKind::LhsMaximin => lhs_maximin(n, dist.dim(), c.anneal_iterations, seed)?,
    };
    let mut design = scale_to_box(&unit, dist.domain())?;
    if a.evaluate {
        let obj = c.objective.build(c.budget)?;
        design.outputs = Some(obj.eval_many(&design.points)?);
    }
    let path = ctx.path("design.csv");
    design.save_csv(&path)?;
    eprintln!("wrote {} points to {}", design.len(), path.display());
    Ok(())
}

fn fit(ctx: &Ctx, a: FitArgs) -> CliResult<()> {
    let c = &ctx.config;
    let model = match a.design {
        Some(p) => {
            let d = Design::load_csv(&p)?;
            if d.outputs.is_none() {
                return Err(Error::InvalidInput(format!("{} has no output column", p.display())).into());
            }
            fit_mle(&d, c.trend, &c.fit, substream(ctx.seed, "fit"))?
        }
        None => {
            let obj = c.objective.build(c.budget)?;
            build_design(&obj, &c.objective.distribution()?, c, c.n, ctx.seed)?
        }
    };
    let path = ctx.path("model.json");
    model.save_json(&path)?;
    echo(&fs::read_to_string(&path)?)
}

fn crossval(ctx: &Ctx, a: CrossvalArgs) -> CliResult<()> {
    let model = ctx.load_model(&a.model)?;
    let scaling = match a.scaling {
        Scaling::StdDev => LooScaling::StdDev,
        Scaling::Variance => LooScaling::Variance,
    };
    let rep = loo_residuals(&model, scaling)?;
    let mut value = serde_json::to_value(&rep)?;
    value["schema_version"] = json!(REPORT_SCHEMA_VERSION);
    ctx.emit("crossval.json", &value)
}

fn bound(ctx: &Ctx, method: BoundCommand) -> CliResult<()> {
    let c = &ctx.config;
    let dist = c.objective.distribution()?;
    match method {
        BoundCommand::Crude { n } => {
            let n = n.unwrap_or(c.budget);
            let obj = c.objective.build(c.budget)?;
            let rep = crude_mc_bound(&obj, &dist, n, c.rho, c.alpha, ctx.seed)?;
            ctx.emit("bound.json", &rep)
        }
        BoundCommand::Bayes { model } => {
            let model = match model {
                Some(p) => ctx.load_model(&p)?,
                None => {
                    let obj = c.objective.build(c.budget)?;
                    build_design(&obj, &dist, c, c.bayes_n, ctx.seed)?
                }
            };
            let grid = default_grid(&model, dist.domain(), c.grid_points, substream(ctx.seed, "grid"))?;
            let cc = CredibleConfig {
                realizations: c.realizations,
                m_int: c.m_int,
                alpha: c.credible_alpha,
                ..CredibleConfig::default()
            };
            let res = credible_bound(&model, &dist, &grid, c.rho, &cc, substream(ctx.seed, "credible"))?;
            res.write_sample_csv(BufWriter::new(fs::File::create(ctx.path("pi_sample.csv"))?))?;
            ctx.emit("bound.json", &res.report)
        }
        BoundCommand::Mbis { model, tuned } => {
            let (model, obj) = match model {
                Some(p) => {
                    let model = ctx.load_model(&p)?;
                    // the design evaluations already count against the budget
                    let left = c.budget.checked_sub(model.n()).ok_or(Error::BudgetExhausted {
                        used: model.n(),
                        total: c.budget,
                    })?;
                    (model, c.objective.build(left)?)
                }
                None => {
                    let obj = c.objective.build(c.budget)?;
                    (build_design(&obj, &dist, c, c.n, ctx.seed)?, obj)
                }
            };
            let mc = MbisConfig {
                m: c.m,
                m_region: c.m_region,
                kappa: if tuned { KappaRule::Tuned } else { KappaRule::Fixed { kappa: c.kappa } },
                source: c.source,
                alpha: c.alpha,
                beta: c.beta,
                ..MbisConfig::default()
            };
            let res = run_mbis(&model, &obj, &dist, c.rho, &mc, substream(ctx.seed, "mbis"))?;
            fs::write(ctx.path("mbis.json"), res.to_json()?)?;
            ctx.emit("bound.json", &res.to_report())
        }
    }
}

fn classify(ctx: &Ctx) -> CliResult<()> {
    let c = &ctx.config;
    let obj = c.objective.build(c.budget)?;
    let out = classify_point(&obj, &c.objective.distribution()?, c, ctx.seed)?;
    ctx.emit("classification.json", &out)
}

fn study(ctx: &Ctx, a: StudyArgs) -> CliResult<()> {
    if ctx.config.objective != ObjectiveSpec::Toy {
        return Err(CliError::Config("the repetition study runs on the toy objective only".into()));
    }
    let methods: Vec<StudyMethod> = a
        .methods
        .iter()
        .map(|m| match m {
            Method::Mbis => StudyMethod::Mbis,
            Method::Bayes => StudyMethod::Bayes,
        })
        .collect();
    let res = run_toy_study(&ctx.config, &methods, a.repetitions, ctx.seed)?;
    res.write_rows_csv(BufWriter::new(fs::File::create(ctx.path("study_rows.csv"))?))?;
    res.write_summary_csv(BufWriter::new(fs::File::create(ctx.path("study_summary.csv"))?))?;
    fs::write(ctx.path("study.json"), serde_json::to_string_pretty(&res)?)?;
    let summary = json!({
        "schema_version": res.schema_version,
        "repetitions": res.repetitions,
        "seed": res.seed,
        "oracle_pi": res.oracle_pi,
        "oracle_std_error": res.oracle_std_error,
        "summaries": res.summaries,
    });
    echo(&serde_json::to_string_pretty(&summary)?)
}

fn oracle(ctx: &Ctx, a: OracleArgs) -> CliResult<()> {
    let c = &ctx.config;
    let m = a.samples.unwrap_or(c.oracle_samples);
    let dist = c.objective.distribution()?;
    let seed = substream(ctx.seed, "oracle");
    let (pi, se) = match &c.objective {
        ObjectiveSpec::Toy => oracle_pi(|x| rarebound::blackbox::toy_f(x[0], x[1]), &dist, c.rho, m, seed)?,
        ObjectiveSpec::Synthetic { dim, shift, seed: s } => {
            let f = Synthetic::new(*dim, *shift, *s)?;
            oracle_pi(|x| f.eval(x), &dist, c.rho, m, seed)?
        }
        ObjectiveSpec::External { .. } => {
            return Err(CliError::Config("no oracle for an external objective".into()));
        }
    };
    let value = json!({
        "schema_version": CAMPAIGN_SCHEMA_VERSION,
        "rho": c.rho,
        "pi": pi,
        "std_error": se,
        "samples": m,
        "seed": ctx.seed,
    });
    ctx.emit("oracle.json", &value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
