use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ergorank::gallery::{gallery, CATALOG, TEMPLATES};
use ergorank::nse::{check_certificate_json, search_nse, Strategy};
use ergorank::probe::DEFAULT_SEED;
use ergorank::report::{analyze_cached, cache_dir, certificate_bytes, report_bytes, write_atomic, AnalysisConfig};
use ergorank::tree::MarginTable;
use ergorank::{OperatorSpec, ProbeSet};

const EXIT_REJECT: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "ergorank", version, about = "Ergodic-type classification and entropy-tree ranks of linear operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify an operator, estimate its entropy rank and search for NSE certificates.
    Analyze(AnalyzeArgs),
    /// Search for one NSE certificate.
    Certify(CertifyArgs),
    /// Re-verify a certificate file.
    Check {
        cert: PathBuf,
    },
    /// Dump a truncation of the entropy tree.
    Tree(TreeArgs),
    /// List or emit built-in operators.
    Gallery {
        /// Print templates and catalog entries (the default).
        #[arg(long, conflicts_with = "emit")]
        list: bool,
        #[arg(long, value_name = "NAME")]
        emit: Option<String>,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Operator spec file, or a gallery expression such as `left_shift_l1(256)`.
    spec: String,
    #[arg(long, default_value_t = 10_000)]
    horizon: usize,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[arg(long, default_value_t = 100.0)]
    bound_cap: f64,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 32)]
    index_bound: usize,
    /// Comma-separated k values; the grid is ε = 1/k.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
    eps_grid: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "doubling")]
    strategy: Strategy,
    /// Node budget per truncation; exceeding it yields a partial report.
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Report path; certificates are written next to it. Prints to stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct CertifyArgs {
    spec: String,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    depth: usize,
    #[arg(long, default_value = "doubling")]
    strategy: Strategy,
    #[arg(long, default_value_t = 64)]
    index_bound: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Probe with the first `d` basis vectors only.
    #[arg(long)]
    basis_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TreeFormat {
    Json,
    Dot,
}

#[derive(Args)]
struct TreeArgs {
    spec: String,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 8)]
    index_bound: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: TreeFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with a chosen exit code.
struct Exit(u8, String);

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        Exit(EXIT_INVALID, format!("{e:#}"))
    }
}

fn load_spec(arg: &str) -> anyhow::Result<OperatorSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        return serde_json::from_str(&text).with_context(|| format!("invalid operator spec in {arg}"));
    }
    gallery(arg).with_context(|| format!("`{arg}` is neither a spec file nor a gallery entry"))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<(), Exit> {
    let spec = load_spec(&a.spec)?;
    let defaults = AnalysisConfig::default();
    let config = AnalysisConfig {
        horizon: a.horizon,
        tolerance: a.tol,
        bound_cap: a.bound_cap,
        depth: a.depth,
        index_bound: a.index_bound,
        eps_grid: a.eps_grid,
        seed: a.seed,
        strategy: a.strategy,
        max_nodes: a.max_nodes.unwrap_or(defaults.max_nodes),
        ..defaults
    };
    let dir = (!a.no_cache).then(cache_dir);
    let mut analysis = analyze_cached(&spec, &config, dir.as_deref()).map_err(anyhow::Error::from)?;
    match &a.out {
        Some(out) => analysis
            .write(out)
            .with_context(|| format!("writing {}", out.display()))?,
        None => emit(None, &report_bytes(&analysis.report).map_err(anyhow::Error::from)?)?,
    }
    if analysis.report.partial {
        return Err(Exit(EXIT_PARTIAL, "node budget exceeded; report is partial".into()));
    }
    Ok(())
}

fn certify_cmd(a: CertifyArgs) -> Result<(), Exit> {
    let spec = load_spec(&a.spec)?;
    let probes = if a.basis_only {
        ProbeSet::basis(spec.dim(), spec.dim(), spec.norm())
    } else {
        AnalysisConfig { seed: a.seed, ..AnalysisConfig::default() }.probes_for(&spec)
    };
    let found = search_nse(&spec, a.epsilon, a.depth, a.strategy, &probes, a.index_bound)
        .map_err(anyhow::Error::from)?;
    let Some(r) = found else {
        return Err(Exit(EXIT_REJECT, "none found".into()));
    };
    if !r.complete {
        eprintln!(
            "partial: deepest certificate has depth {} < {}",
            r.certificate.depth, a.depth
        );
    }
    emit(a.out.as_deref(), &certificate_bytes(&r.certificate).map_err(anyhow::Error::from)?)?;
    Ok(())
}

fn check_cmd(cert: &Path) -> Result<(), Exit> {
    let text = std::fs::read_to_string(cert)
        .with_context(|| format!("reading {}", cert.display()))?;
    match check_certificate_json(&text) {
        Ok(_) => {
            println!("accept");
            Ok(())
        }
        Err(reason) => Err(Exit(EXIT_REJECT, format!("reject: {reason}"))),
    }
}

fn tree_cmd(a: TreeArgs) -> Result<(), Exit> {
    let spec = load_spec(&a.spec)?;
    let probes = AnalysisConfig { seed: a.seed, ..AnalysisConfig::default() }.probes_for(&spec);
    let max_nodes = a.max_nodes.unwrap_or(AnalysisConfig::default().max_nodes);
    let tr = MarginTable::build(&spec, &probes, a.index_bound)
        .and_then(|t| t.truncation(a.epsilon, a.depth, max_nodes))
        .map_err(anyhow::Error::from)?;
    let bytes = match a.format {
        TreeFormat::Json => {
            let mut v = serde_json::to_vec_pretty(&tr).map_err(anyhow::Error::from)?;
            v.push(b'\n');
            v
        }
        TreeFormat::Dot => tr.to_dot().into_bytes(),
    };
    emit(a.out.as_deref(), &bytes)?;
    if tr.partial {
        return Err(Exit(EXIT_PARTIAL, "node budget exceeded; truncation is partial".into()));
    }
    Ok(())
}

fn gallery_cmd(name: Option<String>) -> Result<(), Exit> {
    match name {
        Some(name) => {
            let spec = gallery(&name).map_err(anyhow::Error::from)?;
            let mut v = serde_json::to_vec_pretty(&spec).map_err(anyhow::Error::from)?;
            v.push(b'\n');
            emit(None, &v)?;
        }
        None => {
            println!("templates:");
            for t in TEMPLATES {
                println!("  {t}");
            }
            println!("catalog:");
            for c in CATALOG {
                println!("  {c}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Check { cert } => check_cmd(&cert),
        Command::Tree(a) => tree_cmd(a),
        Command::Gallery { emit, .. } => gallery_cmd(emit),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, msg)) => {
            eprintln!("ergorank: {msg}");
            ExitCode::from(code)
        }
    }
}
