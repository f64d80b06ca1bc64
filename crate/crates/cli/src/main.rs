use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use driftivf::bench::{report_emit, run_streams, ProtocolConfig};
use driftivf::dedrift::UpdateStrategy;
use driftivf::driftlab::{entropy_matrix, nn_provenance, similarity_matrix};
use driftivf::index::{IndexConfig, IvfIndex, SearchBudget};
use driftivf::vecstore::{generate_drift_stream, read_tds, write_tds, DriftStreamConfig, Granularity};

#[derive(Parser)]
#[command(name = "driftivf", version, about = "IVF search with drift-adaptive index updates")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drifting stream as a .tds file.
    Gen {
        /// Stream parameters (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the sliding-window protocol and write steps.csv and summary.json.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drift diagnostics written as CSV.
    Analyze(AnalyzeArgs),
    /// Ad-hoc index operations.
    #[command(subcommand)]
    Index(IndexCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeOp {
    Simmatrix,
    Entropy,
    Provenance,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Day,
    Week,
    Month,
    CalendarMonth,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Day => Granularity::Day,
            GranularityArg::Week => Granularity::Week,
            GranularityArg::Month => Granularity::Month,
            GranularityArg::CalendarMonth => Granularity::CalendarMonth,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    op: AnalyzeOp,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "month")]
    granularity: GranularityArg,
    /// Points sampled per period.
    #[arg(long, default_value_t = 10_000)]
    sample_n: usize,
    /// Neighbors averaged in the similarity measure.
    #[arg(long, default_value_t = 100)]
    l_nn: usize,
    /// Clusters for the entropy matrix.
    #[arg(long, default_value_t = 1024)]
    clusters: usize,
    /// Query period for provenance (defaults to the last one).
    #[arg(long)]
    query_period: Option<i64>,
    #[arg(long, default_value_t = 6)]
    lookback: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Train an index on a dataset and optionally fill it.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        /// Index configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train on at most this many evenly spaced rows.
        #[arg(long)]
        train_sample: Option<usize>,
        /// Also insert every vector of the dataset.
        #[arg(long)]
        fill: bool,
    },
    /// Insert the vectors of a dataset into an index.
    Add {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to overwriting the input index.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search an index; writes query_id,rank,id,distance rows.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        dcs: usize,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Data(String),
}

impl From<driftivf::Error> for Failure {
    fn from(e: driftivf::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// A bench file holding either a protocol, or
/// `{"protocol": ..., "strategies": [...]}` to compare several strategies.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Comparison {
    protocol: ProtocolConfig,
    strategies: Vec<UpdateStrategy>,
}

fn bench(config: &Path, out: &Path) -> CliResult {
    let value: serde_json::Value = read_json(config)?;
    let bad = |e: serde_json::Error| Failure::Config(format!("{}: {e}", config.display()));
    let (protocol, strategies) = if value.get("protocol").is_some() {
        let c: Comparison = serde_json::from_value(value).map_err(bad)?;
        (c.protocol, c.strategies)
    } else {
        let p: ProtocolConfig = serde_json::from_value(value).map_err(bad)?;
        let s = p.strategy;
        (p, vec![s])
    };
    if strategies.is_empty() {
        return Err(Failure::Config("strategies must not be empty".into()));
    }
    let reports = run_streams(&protocol, &strategies)?;
    let files = report_emit(&reports, out)?;
    let summary = driftivf::bench::summarize(&reports);
    for run in &summary.runs {
        let recalls: Vec<String> = run.mean_recall.iter().map(|r| format!("{r:.4}")).collect();
        println!(
            "{:<12} every {:<2} recall [{}]  update {:.3}s",
            run.label,
            run.update_every,
            recalls.join(", "),
            run.mean_update_time
        );
    }
    for g in &summary.max_gap {
        println!("largest gap {} vs {}: {:+.4} at step {} (window {})", g.label, g.baseline, g.gap, g.step, g.window);
    }
    println!("wrote {} and {}", files.csv.display(), files.summary.display());
    Ok(())
}

fn matrix_csv(periods: &[i64], values: &[Vec<f64>]) -> String {
    let mut s = String::from("period");
    for p in periods {
        write!(s, ",{p}").unwrap();
    }
    s.push('\n');
    for (p, row) in periods.iter().zip(values) {
        write!(s, "{p}").unwrap();
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn analyze(a: &AnalyzeArgs) -> CliResult {
    let ds = read_tds(&a.dataset)?;
    let g: Granularity = a.granularity.into();
    let csv = match a.op {
        AnalyzeOp::Simmatrix => {
            let m = similarity_matrix(&ds, g, a.sample_n, a.l_nn, a.seed)?;
            matrix_csv(&m.periods, &m.values)
        }
        AnalyzeOp::Entropy => {
            let m = entropy_matrix(&ds, g, a.clusters, a.sample_n, a.seed)?;
            matrix_csv(&m.periods, &m.values)
        }
        AnalyzeOp::Provenance => {
            let last = ds.timestamps().last().map(|&t| g.period_of(t));
            let q = a
                .query_period
                .or(last)
                .ok_or_else(|| Failure::Data("empty dataset".into()))?;
            let h = nn_provenance(&ds, g, q, a.lookback, a.k, a.sample_n, a.seed)?;
            let mut s = String::from("source_period,count\n");
            for (p, c) in h.source_periods.iter().zip(&h.counts) {
                writeln!(s, "{p},{c}").unwrap();
            }
            s
        }
    };
    write_text(&a.out, &csv)
}

fn index_cmd(cmd: &IndexCommand) -> CliResult {
    match cmd {
        IndexCommand::Build {
            dataset,
            config,
            out,
            train_sample,
            fill,
        } => {
            let cfg: IndexConfig = read_json(config)?;
            let ds = read_tds(dataset)?;
            let data = ds.to_f32();
            let dim = ds.dim();
            let n = ds.len();
            let take = train_sample.unwrap_or(n).min(n).max(1);
            let train: Vec<f32> = (0..take)
                .flat_map(|i| {
                    let r = i * n / take;
                    data[r * dim..(r + 1) * dim].iter().copied()
                })
                .collect();
            let mut index = IvfIndex::build(&train, dim, cfg)?;
            if *fill {
                index.add(ds.ids(), &data)?;
            }
            index.save(out)?;
            println!("{} cells, {} postings", index.n_lists(), index.len());
        }
        IndexCommand::Add { index, dataset, out } => {
            let mut idx = IvfIndex::load(index)?;
            let ds = read_tds(dataset)?;
            let added = idx.add(ds.ids(), &ds.to_f32())?;
            idx.save(out.as_ref().unwrap_or(index))?;
            println!("added {added}, {} postings", idx.len());
        }
        IndexCommand::Search {
            index,
            queries,
            k,
            dcs,
            out,
        } => {
            let idx = IvfIndex::load(index)?;
            let qs = read_tds(queries)?;
            let data = qs.to_f32();
            let mut s = String::from("query_id,rank,id,distance\n");
            for (qid, q) in qs.ids().iter().zip(data.chunks_exact(qs.dim().max(1))) {
                for (rank, n) in idx.search(q, SearchBudget::new(*dcs, *k))?.iter().enumerate() {
                    writeln!(s, "{qid},{rank},{},{}", n.id, n.distance).unwrap();
                }
            }
            match out {
                Some(path) => write_text(path, &s)?,
                None => print!("{s}"),
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg: DriftStreamConfig = read_json(&config)?;
            let ds = generate_drift_stream(&cfg)?;
            write_tds(&out, &ds)?;
            println!("wrote {} vectors of dimension {} to {}", ds.len(), ds.dim(), out.display());
            Ok(())
        }
        Command::Bench { config, out } => bench(&config, &out),
        Command::Analyze(a) => analyze(&a),
        Command::Index(cmd) => index_cmd(&cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
