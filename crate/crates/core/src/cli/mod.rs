//! Command-line front end: table and figure reproduction, single bounds,
//! oracle checks and the `k` suggestion rule.

pub mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bound::{alpha_bar, optimize_q, BoundResult, Refinement, SearchConfig};
use crate::combfactor::{ConstraintSystem, OverlapMode};
use crate::core::ClusterSequence;
use crate::error::{Error, Result};
use crate::probfactor::{QuadratureConfig, QuadratureMode};
use crate::rdtlink::{self, sha256_hex};
use crate::Spec;

pub(crate) const TABLE_FIXTURE_TEXT: &str = include_str!("../../data/union_bound_tables.txt");
const TABLE_FIXTURE_SHA256: &str = "3d2b6dd8471b84314d6bfc81afb877147eb7076a053643b3d77938fdc8570374";

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "OGPB_THREADS";

const CSV_HELP: &str = "\
CSV columns (vectors are ';'-separated):
  table        source table id, empty for ad-hoc runs
  k            cluster sizes k_0..k_s
  q            overlaps q_1..q_s at the reported point
  kappa        margin
  mode         overlap-parameter mode
  h            combinatorial factor in bits
  log_p        natural log of the probabilistic factor
  alpha_bar    union-bound threshold
  printed      threshold listed in the source table, if any
  delta        alpha_bar - printed
  evaluations  objective evaluations spent by the search
Lines starting with '#' carry the run manifest as JSON.";

#[derive(Debug, Parser)]
#[command(name = "ogp-bounds", version, about = "Union-bound thresholds for ultrametric overlap gap properties", after_help = CSV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Machine-readable output instead of the console table.
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Write machine-readable output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PaperLiteral,
    LevelConsistent,
}

impl From<ModeArg> for OverlapMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PaperLiteral => OverlapMode::PaperLiteral,
            ModeArg::LevelConsistent => OverlapMode::LevelConsistent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuadArg {
    Grid,
    Hermite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineArg {
    None,
    NelderMead,
    Coordinate,
}

impl From<RefineArg> for Refinement {
    fn from(r: RefineArg) -> Self {
        match r {
            RefineArg::None => Refinement::None,
            RefineArg::NelderMead => Refinement::NelderMead,
            RefineArg::Coordinate => Refinement::Coordinate,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NumericArgs {
    /// How vector 3 of the base triple overlaps vectors 1 and 2.
    #[arg(long, value_enum, default_value = "level-consistent")]
    pub mode: ModeArg,
    /// Quadrature nodes per level (grid points per sigma / 16 for the grid rule).
    #[arg(long, default_value_t = 80)]
    pub nodes: usize,
    /// Integration rule for the probabilistic factor.
    #[arg(long, value_enum, default_value = "grid")]
    pub quadrature: QuadArg,
}

impl NumericArgs {
    fn quad(&self) -> QuadratureConfig {
        QuadratureConfig {
            nodes_per_level: self.nodes,
            mode: match self.quadrature {
                QuadArg::Grid => QuadratureMode::Adaptive,
                QuadArg::Hermite => QuadratureMode::GaussHermite,
            },
            ..QuadratureConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Grid points per overlap coordinate.
    #[arg(long, default_value_t = 9)]
    pub grid: usize,
    /// Local search started from the best grid point.
    #[arg(long, value_enum, default_value = "nelder-mead")]
    pub refine: RefineArg,
    /// Objective evaluations allowed for refinement.
    #[arg(long, default_value_t = 400)]
    pub max_evals: usize,
}

impl SearchArgs {
    fn config(&self, quad: QuadratureConfig) -> SearchConfig {
        SearchConfig {
            resolution: self.grid,
            refine: self.refine.into(),
            max_evals: self.max_evals,
            quad,
            ..SearchConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Quadrature,
    Entropy,
    Enumeration,
    Fixtures,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recompute a printed table (ids 2-18) at margin 1.
    Table {
        /// Table id, 2 to 18.
        id: u32,
        /// Evaluate at the printed overlaps instead of optimizing them.
        #[arg(long)]
        printed_q: bool,
        #[command(flatten)]
        numeric: NumericArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// One bound at given cluster sizes and overlaps.
    Bound {
        /// Cluster sizes k_0..k_s, starting at 1, each dividing the next.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Overlaps q_1..q_s.
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
        /// Margin.
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        /// Write the constraint system as 1-based sparse triplets, then the right-hand side.
        #[arg(long)]
        dump_constraints: Option<PathBuf>,
        #[command(flatten)]
        numeric: NumericArgs,
    },
    /// Data points behind a figure (1: first level, 2: second level, 3: all levels).
    Figure {
        /// Figure id, 1 to 3.
        id: u32,
        #[command(flatten)]
        numeric: NumericArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run oracle checks.
    Verify {
        #[arg(value_enum, default_value = "all")]
        scope: Scope,
        /// Seed for the random specs and Monte Carlo draws.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Monte Carlo samples per spec.
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[command(flatten)]
        numeric: NumericArgs,
    },
    /// Cluster sizes suggested by a lifting-level `c` sequence.
    SuggestK {
        /// Lifting-level c values, starting at 1.
        #[arg(long, value_delimiter = ',', required = true)]
        c: Vec<f64>,
    },
}

/// Everything needed to regenerate an output file. Wall time is reported on
/// stderr only, so files are bit-identical across reruns.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub mode: Option<OverlapMode>,
    pub quadrature: Option<QuadratureConfig>,
    pub search: Option<SearchConfig>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub table: Option<u32>,
    pub k: Vec<usize>,
    pub q: Vec<f64>,
    pub kappa: f64,
    pub mode: OverlapMode,
    pub h: f64,
    pub log_p: f64,
    pub alpha_bar: f64,
    pub printed: Option<f64>,
    pub delta: Option<f64>,
    pub evaluations: Option<usize>,
}

impl Record {
    fn new(table: Option<u32>, r: &BoundResult, printed: Option<f64>, evaluations: Option<usize>) -> Self {
        Self {
            table,
            k: r.spec.k().as_slice().to_vec(),
            q: r.q(),
            kappa: r.spec.kappa(),
            mode: r.mode,
            h: r.h,
            log_p: r.log_p,
            alpha_bar: r.alpha_bar,
            printed,
            delta: printed.map(|p| r.alpha_bar - p),
            evaluations,
        }
    }
}

/// One printed table entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub table: u32,
    pub k: Vec<usize>,
    pub q: Vec<f64>,
    pub alpha_bar: f64,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.parse().map_err(|_| Error::Parse(format!("list entry {v:?}"))))
        .collect()
}

pub fn parse_table_fixtures(text: &str) -> Result<Vec<TableEntry>> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') || line == "format 1" {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [table, k, q, alpha] = f.as_slice() else {
            return Err(Error::Parse(format!("table line {line:?}")));
        };
        out.push(TableEntry {
            table: table.parse().map_err(|_| Error::Parse(format!("table id {table:?}")))?,
            k: parse_list(k)?,
            q: parse_list(q)?,
            alpha_bar: alpha.parse().map_err(|_| Error::Parse(format!("alpha {alpha:?}")))?,
        });
    }
    Ok(out)
}

/// The embedded table fixtures, hash-checked.
pub fn table_fixtures_verified() -> Result<Vec<TableEntry>> {
    let digest = sha256_hex(TABLE_FIXTURE_TEXT.as_bytes());
    if digest != TABLE_FIXTURE_SHA256 {
        return Err(Error::FixtureMismatch(format!("table fixture hash {digest}")));
    }
    parse_table_fixtures(TABLE_FIXTURE_TEXT)
}

pub fn table_entries(id: u32) -> Result<Vec<TableEntry>> {
    let rows: Vec<TableEntry> = table_fixtures_verified()?
        .into_iter()
        .filter(|e| e.table == id)
        .collect();
    if rows.is_empty() {
        return Err(Error::UnknownTable(id));
    }
    Ok(rows)
}

/// Cluster sequences plotted in a figure, with their printed values.
pub fn figure_entries(id: u32) -> Result<Vec<TableEntry>> {
    let tables: &[u32] = match id {
        1 => &[6],
        2 => &[9, 12, 14],
        3 => &[6, 9, 12, 14, 18],
        _ => {
            return Err(Error::OutOfRange {
                name: "figure",
                value: id as f64,
            })
        }
    };
    let mut out = Vec::new();
    for &t in tables {
        out.extend(table_entries(t)?);
    }
    Ok(out)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mode_name(m: OverlapMode) -> &'static str {
    match m {
        OverlapMode::PaperLiteral => "paper-literal",
        OverlapMode::LevelConsistent => "level-consistent",
    }
}

pub fn write_csv<W: Write>(mut w: W, manifest: &RunManifest, records: &[Record]) -> Result<()> {
    let m = serde_json::to_string(manifest).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w, "# manifest {m}")?;
    writeln!(w, "table,k,q,kappa,mode,h,log_p,alpha_bar,printed,delta,evaluations")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            opt(r.table),
            join(&r.k),
            join(&r.q),
            r.kappa,
            mode_name(r.mode),
            r.h,
            r.log_p,
            r.alpha_bar,
            opt(r.printed),
            opt(r.delta),
            opt(r.evaluations)
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct WithManifest<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    record: &'a T,
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, manifest: &RunManifest, records: &[T]) -> Result<()> {
    let wrapped: Vec<WithManifest<T>> = records.iter().map(|record| WithManifest { manifest, record }).collect();
    serde_json::to_writer_pretty(&mut w, &wrapped).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn print_records(records: &[Record]) {
    println!(
        "{:>5}  {:<14} {:<26} {:>9} {:>10} {:>9} {:>8} {:>8}",
        "table", "k", "q", "h", "log p", "alpha", "printed", "delta"
    );
    for r in records {
        let q: Vec<String> = r.q.iter().map(|x| format!("{x:.4}")).collect();
        println!(
            "{:>5}  {:<14} {:<26} {:>9.6} {:>10.6} {:>9.5} {:>8} {:>8}",
            opt(r.table),
            format!("{:?}", r.k).replace(' ', ""),
            format!("[{}]", q.join(",")),
            r.h,
            r.log_p,
            r.alpha_bar,
            r.printed.map(|p| format!("{p:.4}")).unwrap_or_default(),
            r.delta.map(|d| format!("{d:+.4}")).unwrap_or_default(),
        );
    }
}

struct Output<'a> {
    format: Option<Format>,
    out: Option<&'a Path>,
}

impl Output<'_> {
    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn records(&self, manifest: &RunManifest, records: &[Record]) -> Result<()> {
        match self.format {
            None => {
                print_records(records);
                if self.out.is_some() {
                    write_json(self.sink()?, manifest, records)?;
                }
            }
            Some(Format::Csv) => write_csv(self.sink()?, manifest, records)?,
            Some(Format::Json) => write_json(self.sink()?, manifest, records)?,
        }
        Ok(())
    }
}

fn manifest(
    argv: &[String],
    mode: Option<OverlapMode>,
    quad: Option<QuadratureConfig>,
    search: Option<SearchConfig>,
    seed: Option<u64>,
) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: argv.to_vec(),
        mode,
        quadrature: quad,
        search,
        seed,
    }
}

fn dump_constraints(path: &Path, spec: &Spec, mode: OverlapMode) -> Result<()> {
    let sys = if spec.k().total() >= 4 {
        ConstraintSystem::build(spec, mode)?
    } else {
        ConstraintSystem::pairwise(spec, mode)?
    };
    let mut w = BufWriter::new(File::create(path)?);
    sys.a.write_triplets(&mut w)?;
    writeln!(w, "# rhs {}", sys.b.len())?;
    for b in &sys.b {
        writeln!(w, "{b}")?;
    }
    w.flush()?;
    Ok(())
}

fn run_entries(
    entries: &[TableEntry],
    printed_q: bool,
    mode: OverlapMode,
    search: &SearchConfig,
) -> Result<Vec<Record>> {
    entries
        .iter()
        .map(|e| {
            if printed_q {
                let spec = Spec::from_parts(&e.k, &e.q, 1.0)?;
                let r = alpha_bar(&spec, mode, &search.quad)?;
                Ok(Record::new(Some(e.table), &r, Some(e.alpha_bar), None))
            } else {
                let k = ClusterSequence::new(e.k.clone())?;
                let o = optimize_q(&k, 1.0, search, mode)?;
                Ok(Record::new(
                    Some(e.table),
                    &o.best,
                    Some(e.alpha_bar),
                    Some(o.evaluations),
                ))
            }
        })
        .collect()
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, e.g. when called twice in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let output = Output {
        format: cli.format,
        out: cli.out.as_deref(),
    };
    let start = Instant::now();
    match cli.command {
        Command::Table {
            id,
            printed_q,
            numeric,
            search,
        } => {
            let entries = table_entries(id)?;
            let cfg = search.config(numeric.quad());
            let mode = numeric.mode.into();
            let records = run_entries(&entries, printed_q, mode, &cfg)?;
            let m = manifest(argv, Some(mode), Some(cfg.quad), (!printed_q).then_some(cfg), None);
            output.records(&m, &records)?;
        }
        Command::Bound {
            k,
            q,
            kappa,
            dump_constraints: dump,
            numeric,
        } => {
            let spec = Spec::from_parts(&k, &q, kappa)?;
            let mode = numeric.mode.into();
            let quad = numeric.quad();
            if let Some(path) = dump {
                dump_constraints(&path, &spec, mode)?;
            }
            let r = alpha_bar(&spec, mode, &quad)?;
            let m = manifest(argv, Some(mode), Some(quad), None, None);
            output.records(&m, &[Record::new(None, &r, None, None)])?;
        }
        Command::Figure { id, numeric, search } => {
            let entries = figure_entries(id)?;
            let cfg = search.config(numeric.quad());
            let mode = numeric.mode.into();
            let records = run_entries(&entries, false, mode, &cfg)?;
            if output.format.is_none() {
                if let Some(best) = records.iter().min_by(|a, b| a.alpha_bar.total_cmp(&b.alpha_bar)) {
                    println!("minimum at k = {:?}", best.k);
                }
            }
            let m = manifest(argv, Some(mode), Some(cfg.quad), Some(cfg), None);
            output.records(&m, &records)?;
        }
        Command::Verify {
            scope,
            seed,
            samples,
            numeric,
        } => {
            let quad = numeric.quad();
            let mut checks = Vec::new();
            if matches!(scope, Scope::Fixtures | Scope::All) {
                checks.extend(verify::fixtures());
            }
            if matches!(scope, Scope::Entropy | Scope::All) {
                checks.extend(verify::entropy()?);
            }
            if matches!(scope, Scope::Enumeration | Scope::All) {
                checks.extend(verify::enumeration()?);
            }
            if matches!(scope, Scope::Quadrature | Scope::All) {
                checks.extend(verify::quadrature(samples, seed, &quad)?);
            }
            let m = manifest(argv, None, Some(quad), None, Some(seed));
            match output.format {
                Some(Format::Json) => write_json(output.sink()?, &m, &checks)?,
                Some(Format::Csv) => {
                    let mut w = output.sink()?;
                    let ms = serde_json::to_string(&m).map_err(|e| Error::Io(e.to_string()))?;
                    writeln!(w, "# manifest {ms}")?;
                    writeln!(w, "scope,name,passed,detail")?;
                    for c in &checks {
                        writeln!(w, "{},\"{}\",{},\"{}\"", c.scope, c.name, c.passed, c.detail)?;
                    }
                }
                None => {
                    for c in &checks {
                        let tag = if c.passed { "PASS" } else { "FAIL" };
                        println!("{tag} {:<12} {:<40} {}", c.scope, c.name, c.detail);
                    }
                }
            }
            verify::outcome(&checks)?;
        }
        Command::SuggestK { c } => {
            let k = rdtlink::suggest_k_from_c(&c)?;
            match output.format {
                None => println!("{k}"),
                Some(_) => {
                    let m = manifest(argv, None, None, None, None);
                    write_json(output.sink()?, &m, &[serde_json::json!({ "c_hat": c, "k": k })])?;
                }
            }
        }
    }
    eprintln!("wall time {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, &argv[1..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
