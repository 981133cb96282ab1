use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use waxkit::{
    check_block_rank, check_row_rank, ones_lower_bound, plan_dimensions, run_experiment, t_opt,
    validate_combiner, wax_decompose, wax_decompose_panels, CMatrix, Dims, ExperimentConfig,
    ExperimentKind, PlanQuery, RngSpec, Sweep, WaxError, DEFAULT_MAX_ATTEMPTS, DEFAULT_SUBSET_CAP,
};

/// Exit code for a well-formed problem that has no solution.
const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "waxkit",
    version,
    about = "WAX decomposition and combiner design tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factor a channel as H = W·A·X for a fixed combiner A.
    Decompose(DecomposeArgs),
    /// Run a batch experiment and write a CSV table.
    Experiment(ExperimentArgs),
    /// Solve the existence bound for the missing one of M, L, T.
    Plan(PlanArgs),
    /// Lower bound on the number of ones in a valid {0,1} combiner.
    Bound(BoundArgs),
    /// Test whether a combiner admits decompositions for random channels.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct DecomposeArgs {
    /// Channel matrix (JSON matrix file).
    #[arg(long)]
    h: PathBuf,
    /// Combiner matrix; with --n smaller than --l this is the unexpanded combiner.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    l: usize,
    /// Antennas per panel (defaults to L).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: usize,
    /// Write the factors here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Validate,
    SparseSearch,
    RateCurve,
    BoundTable,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Validate => ExperimentKind::Validate,
            Kind::SparseSearch => ExperimentKind::SparseSearch,
            Kind::RateCurve => ExperimentKind::RateCurve,
            Kind::BoundTable => ExperimentKind::BoundTable,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    kind: Kind,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// Sweep as axis:lo:hi with axis T, L or ones_fraction (percent).
    #[arg(long)]
    sweep: Option<Sweep>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    l: usize,
    /// Defaults to the smallest T admitting decompositions.
    #[arg(long)]
    t: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    l: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Also run the block-rank and row-rank checks.
    #[arg(long)]
    checks: bool,
    #[arg(long, default_value_t = DEFAULT_SUBSET_CAP)]
    subset_cap: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Experiment(a) => experiment(a),
        Command::Plan(a) => plan(a),
        Command::Bound(a) => bound(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("WAXKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("WAXKIT_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn read_matrix(path: &Path) -> anyhow::Result<CMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CMatrix::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(json: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn decompose(args: DecomposeArgs) -> anyhow::Result<ExitCode> {
    let h = read_matrix(&args.h)?;
    let a = read_matrix(&args.a)?;
    let dims = Dims::new(args.m, args.k, args.l, args.n.unwrap_or(args.l), args.t)?;
    let rng = RngSpec::new(args.seed, 0);
    let result = if dims.is_square() {
        wax_decompose(&h, &a, &dims, rng, args.max_attempts)
    } else {
        wax_decompose_panels(&h, &a, &dims, rng, args.max_attempts)
    };
    match result {
        Ok(f) => {
            println!("residual {:.2e}", f.residual);
            emit(&serde_json::to_string(&f)?, args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Err(WaxError::Infeasible(report)) => {
            let diag = json!({ "status": "infeasible", "report": report });
            println!("{diag}");
            Ok(ExitCode::from(EXIT_INFEASIBLE))
        }
        Err(e) => Err(e.into()),
    }
}

fn experiment(args: ExperimentArgs) -> anyhow::Result<ExitCode> {
    let base: Option<ExperimentConfig> = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let dims = {
        let d = base.as_ref().map(|c| c.dims);
        let pick = |flag: Option<usize>, from: Option<usize>, name: &str| {
            flag.or(from)
                .ok_or_else(|| anyhow!("--{name} is required without --config"))
        };
        let m = pick(args.m, d.map(|d| d.m), "m")?;
        let k = pick(args.k, d.map(|d| d.k), "k")?;
        let l = pick(args.l, d.map(|d| d.l), "l")?;
        let n = args.n.or(d.map(|d| d.n)).unwrap_or(l);
        let t = pick(args.t, d.map(|d| d.t), "t")?;
        Dims::new(m, k, l, n, t)?
    };
    let out_path = match (args.out, base.as_ref()) {
        (Some(p), _) => p,
        (None, Some(c)) => c.out_path.clone(),
        (None, None) => bail!("--out is required without --config"),
    };
    let cfg = ExperimentConfig {
        dims,
        seed: args.seed.or(base.as_ref().map(|c| c.seed)).unwrap_or(0),
        trials: args.trials.or(base.as_ref().map(|c| c.trials)).unwrap_or(1),
        snr_db: args
            .snr_db
            .or(base.as_ref().map(|c| c.snr_db))
            .unwrap_or(10.0),
        sweep: args.sweep.or(base.as_ref().and_then(|c| c.sweep)),
        out_path,
    };
    let outcome = run_experiment(args.kind.into(), &cfg)?;
    println!("{}", serde_json::to_string(&outcome)?);
    if outcome.all_failed() {
        eprintln!("error: every row failed; see the error column");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn plan(args: PlanArgs) -> anyhow::Result<ExitCode> {
    let q = PlanQuery {
        m: args.m,
        k: args.k,
        l: args.l,
        t: args.t,
    };
    match plan_dimensions(&q) {
        Ok(p) => {
            println!("{}", serde_json::to_string(&p)?);
            Ok(ExitCode::SUCCESS)
        }
        Err(WaxError::NoFeasiblePlan(msg)) => {
            println!("{}", json!({ "status": "infeasible", "reason": msg }));
            Ok(ExitCode::from(EXIT_INFEASIBLE))
        }
        Err(e) => Err(e.into()),
    }
}

fn bound(args: BoundArgs) -> anyhow::Result<ExitCode> {
    let t = args.t.unwrap_or_else(|| t_opt(args.m, args.k, args.l));
    let b = ones_lower_bound(args.m, args.k, args.l, t)?;
    println!(
        "{}",
        json!({ "M": args.m, "K": args.k, "L": args.l, "T": t, "bound": b })
    );
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> anyhow::Result<ExitCode> {
    let a = read_matrix(&args.a)?;
    let dims = Dims::square(args.m, args.k, args.l, args.t)?;
    let rng = RngSpec::new(args.seed, 0);
    let verdict = validate_combiner(&a, &dims, rng, args.trials)?;
    let mut report = json!({ "verdict": verdict });
    if args.checks {
        report["block_rank"] =
            serde_json::to_value(check_block_rank(&a, &dims, args.subset_cap, rng.child(1))?)?;
        report["row_rank"] =
            serde_json::to_value(check_row_rank(&a, &dims, args.subset_cap, rng.child(2))?)?;
    }
    println!("{report}");
    Ok(if verdict.valid {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INFEASIBLE)
    })
}
