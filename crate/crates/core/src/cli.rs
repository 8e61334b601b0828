//! Command-line front end.
//!
//! Exit codes: 0 success (all safe / nothing found), 1 a negative finding
//! (unsafe operator, no witness for a safe operator, constants found,
//! incomplete closure), 2 usage errors, 3 I/O and resource failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::closure::{
    close, count_footnote_tables_factored, dump_closure, footnote_conditions, count_tables,
    ClosureLimits, Conditions, SeedSet,
};
use crate::error::{Error, Result};
use crate::expr::{search_constants, SampleOptions, SearchLimits, DEFAULT_SAMPLES, DEFAULT_SEED};
use crate::optable::{load_operator, save_operator, Builtin, OpSet, Operator, Width};
use crate::safety::{analyze_with, patch, witness, SafetyReport, Witness};

pub const THREADS_ENV: &str = "ALUSAFE_THREADS";
pub const DEFAULT_WIDTH: u32 = 8;

/// Closure size and operator count quoted for the 2-bit {mul, add2} experiment.
pub const REPORTED_CLOSURE_SIZE: u64 = 1282;
pub const REPORTED_CANDIDATES: u64 = 4096;

#[derive(Debug, Parser)]
#[command(name = "alusafe", version, about = "Safety analysis of n-bit arithmetic operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the zero and odd conditions for each operator.
    Analyze(AnalyzeArgs),
    /// Write a safe variant of an operator.
    Patch(PatchArgs),
    /// Build a verified constant-producing formula for an unsafe operator.
    Witness(WitnessArgs),
    /// Closure of a generator set over k-variable functions.
    Closure(ClosureArgs),
    /// Count operator tables satisfying conditions i, ii, iii.
    Count(CountArgs),
    /// Enumerate formulas by size looking for constant functions.
    Search(SearchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Builtin name or operator file; repeatable.
    #[arg(long = "op", required = true)]
    pub ops: Vec<String>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub op: String,
    #[arg(long)]
    pub width: Option<u32>,
    /// Destination operator file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct WitnessArgs {
    #[arg(long)]
    pub op: String,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ClosureArgs {
    /// Comma-separated generators; may be empty.
    #[arg(long, default_value = "")]
    pub ops: String,
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub vars: usize,
    /// projections | projections+zero | projections+one | projections+constants
    #[arg(long = "closure-seed", default_value = "projections")]
    pub closure_seed: String,
    #[arg(long, default_value_t = ClosureLimits::default().max_members)]
    pub max_members: usize,
    /// Write member codes here, one per line.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Also check the five 2-bit table conditions on every member (w = 2, k = 2).
    #[arg(long)]
    pub footnote: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Comma-separated subset of i, ii, iii.
    #[arg(long, default_value = "")]
    pub conditions: String,
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub arity: usize,
    /// Enumerate every table (only when the table space is at most 2^32).
    #[arg(long)]
    pub brute: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub ops: String,
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub vars: usize,
    /// Largest formula size in nodes; without it the search runs to closure.
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long, default_value_t = SearchLimits::default().max_functions)]
    pub max_functions: usize,
    #[command(flatten)]
    pub output: Output,
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(stderr, "alusafe: {e}");
        return 2;
    }
    match execute(&cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "alusafe: {e}");
            match e {
                Error::Io(_) | Error::Resource(_) => 3,
                _ => 2,
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::usage(format!("{THREADS_ENV} must be an integer >= 1, got `{value}`")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn execute(command: &Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Analyze(a) => cmd_analyze(a, stdout),
        Command::Patch(a) => cmd_patch(a, stdout),
        Command::Witness(a) => cmd_witness(a, stdout),
        Command::Closure(a) => cmd_closure(a, stdout),
        Command::Count(a) => cmd_count(a, stdout),
        Command::Search(a) => cmd_search(a, stdout),
    }
}

/// Builtin name at `width` (default 8), or an operator file whose width must
/// match `width` when one is given.
pub fn resolve_operator(source: &str, width: Option<u32>) -> Result<Operator> {
    if Builtin::from_name(source).is_some() {
        return Operator::builtin(source, Width::new(width.unwrap_or(DEFAULT_WIDTH))?);
    }
    let path = Path::new(source);
    if !path.is_file() {
        return Err(Error::usage(format!(
            "`{source}` is neither a builtin operator nor an operator file"
        )));
    }
    let op = load_operator(path)?;
    if let Some(w) = width {
        if op.width().bits() != w {
            return Err(Error::usage(format!(
                "{source} has width {}, but --width {w} was given",
                op.width()
            )));
        }
    }
    Ok(op)
}

fn resolve_set(list: &str, width: u32) -> Result<OpSet> {
    let mut set = OpSet::new(Width::new(width)?);
    for source in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        set.insert(resolve_operator(source, Some(width))?)?;
    }
    Ok(set)
}

fn emit(output: &Output, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match &output.out {
        Some(path) => fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn no_csv(what: &str) -> Error {
    Error::usage(format!("csv output is only available for counts and closure sizes, not {what}"))
}

fn render_report(r: &SafetyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}@w={}: {}", r.op_name, r.width, r.verdict);
    match &r.condition_zero.violation {
        None => {
            let _ = writeln!(s, "  (i)  zero inputs -> 0: pass");
        }
        Some(v) => {
            let _ = writeln!(s, "  (i)  zero inputs -> 0: FAIL, {:?} -> {}", v.inputs, v.output);
        }
    }
    match &r.condition_odd.violation {
        None => {
            let _ = writeln!(s, "  (ii) odd inputs -> odd: pass [{}]", r.odd_coverage);
        }
        Some(v) => {
            let _ = writeln!(
                s,
                "  (ii) odd inputs -> odd: FAIL, {:?} -> {} [{}]",
                v.inputs, v.output, r.odd_coverage
            );
        }
    }
    s
}

pub fn cmd_analyze(args: &AnalyzeArgs, stdout: &mut dyn Write) -> Result<i32> {
    let sampling = SampleOptions {
        seed: args.seed,
        samples: args.samples,
    };
    let ops = args
        .ops
        .iter()
        .map(|source| resolve_operator(source, args.width))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<SafetyReport> = ops.iter().map(|op| analyze_with(op, &sampling)).collect();
    let text = match args.output.format {
        Format::Json => to_json(&json!({ "seed": args.seed, "reports": reports })),
        Format::Text => {
            let mut s: String = reports.iter().map(render_report).collect();
            let _ = writeln!(s, "seed {}", args.seed);
            s
        }
        Format::Csv => return Err(no_csv("safety reports")),
    };
    emit(&args.output, &text, stdout)?;
    Ok(if reports.iter().all(SafetyReport::is_safe) { 0 } else { 1 })
}

pub fn cmd_patch(args: &PatchArgs, stdout: &mut dyn Write) -> Result<i32> {
    let op = resolve_operator(&args.op, args.width)?;
    let patched = patch(&op)?;
    save_operator(&patched.op, &args.out)?;
    let text = match args.format {
        Format::Json => to_json(&json!({
            "source": op.name(),
            "name": patched.op.name(),
            "width": op.width().bits(),
            "changed_entries": patched.changed_entries,
            "zero_point_forced": patched.zero_point_forced,
            "out": args.out.display().to_string(),
        })),
        Format::Text => format!(
            "patched {op} -> {}: {} entries changed{}, written to {}\n",
            patched.op.name(),
            patched.changed_entries,
            if patched.zero_point_forced { " (zero point forced to 0)" } else { "" },
            args.out.display()
        ),
        Format::Csv => return Err(no_csv("patch summaries")),
    };
    stdout.write_all(text.as_bytes())?;
    Ok(0)
}

fn render_witness(w: &Witness) -> String {
    let kind = match w.kind {
        crate::safety::WitnessKind::ConstantFormula => "constant formula",
        crate::safety::WitnessKind::ParityCoverageComputation => {
            "computation over inputs of both parities"
        }
    };
    let mut s = format!("witness for {}@w={} ({kind})\n", w.op_name, w.width);
    let _ = writeln!(s, "formula: {}", w.formula);
    if w.target_name != w.op_name {
        let _ = writeln!(s, "  where `{}` denotes {}", w.target_name, w.op_name);
    }
    let _ = writeln!(s, "constant {}, {}", w.claimed_constant, w.verification);
    s
}

pub fn cmd_witness(args: &WitnessArgs, stdout: &mut dyn Write) -> Result<i32> {
    let op = resolve_operator(&args.op, args.width)?;
    let sampling = SampleOptions {
        seed: args.seed,
        samples: args.samples,
    };
    let report = analyze_with(&op, &sampling);
    if report.is_safe() {
        let text = match args.output.format {
            Format::Json => to_json(&json!({ "seed": args.seed, "report": report, "witness": null })),
            Format::Text => format!("{op} is SAFE: no constant-producing formula exists\n"),
            Format::Csv => return Err(no_csv("witnesses")),
        };
        emit(&args.output, &text, stdout)?;
        return Ok(1);
    }
    let wit = witness(&op, &sampling)?;
    let text = match args.output.format {
        Format::Json => to_json(&json!({ "seed": args.seed, "report": report, "witness": wit })),
        Format::Text => render_witness(&wit),
        Format::Csv => return Err(no_csv("witnesses")),
    };
    emit(&args.output, &text, stdout)?;
    Ok(0)
}

pub fn cmd_closure(args: &ClosureArgs, stdout: &mut dyn Write) -> Result<i32> {
    let ops = resolve_set(&args.ops, args.width)?;
    let seed: SeedSet = args.closure_seed.parse()?;
    let limits = ClosureLimits {
        max_members: args.max_members,
    };
    let result = close(&ops, args.vars, seed, &limits)?;
    if let Some(path) = &args.dump {
        dump_closure(&result, path)?;
    }
    let summary = result.summary();

    let footnote = if args.footnote {
        let mut passing = 0usize;
        for m in &result.members {
            if footnote_conditions(m)?.all() {
                passing += 1;
            }
        }
        Some(json!({
            "members_passing_all": passing,
            "members_failing": result.size() - passing,
            "tables_satisfying_all": count_footnote_tables_factored(),
            "reported_closure_size": REPORTED_CLOSURE_SIZE,
            "reported_candidates": REPORTED_CANDIDATES,
        }))
    } else {
        None
    };

    let text = match args.output.format {
        Format::Json => {
            let mut v = serde_json::to_value(&summary).expect("summary serializes");
            if let Some(f) = &footnote {
                v["footnote"] = f.clone();
            }
            to_json(&v)
        }
        Format::Csv => format!(
            "generators,seed,width,vars,size,iterations,contains_constant,complete\n{},{},{},{},{},{},{},{}\n",
            summary.generators.join(";"),
            summary.seed,
            summary.width,
            summary.vars,
            summary.size,
            summary.iterations,
            summary.contains_constant,
            summary.complete
        ),
        Format::Text => {
            let mut s = format!(
                "closure of {{{}}} at w={}, k={} from {}: size {}{}\n",
                summary.generators.join(", "),
                summary.width,
                summary.vars,
                summary.seed,
                summary.size,
                if summary.complete { "" } else { " (INCOMPLETE: member bound reached)" }
            );
            let _ = writeln!(s, "iterations {}, contains constant: {}", summary.iterations, summary.contains_constant);
            if let Some(f) = &footnote {
                let _ = writeln!(
                    s,
                    "footnote conditions: {} members pass all five, {} fail; {} tables satisfy all five (reported: {} of {})",
                    f["members_passing_all"], f["members_failing"], f["tables_satisfying_all"],
                    REPORTED_CLOSURE_SIZE, REPORTED_CANDIDATES
                );
            }
            s
        }
    };
    emit(&args.output, &text, stdout)?;
    Ok(if result.complete { 0 } else { 1 })
}

pub fn cmd_count(args: &CountArgs, stdout: &mut dyn Write) -> Result<i32> {
    let conditions: Conditions = args.conditions.parse()?;
    let count = count_tables(Width::new(args.width)?, args.arity, conditions, args.brute)?;
    let brute = count.brute.map_or("skipped".to_string(), |b| b.to_string());
    let text = match args.output.format {
        Format::Json => to_json(&count),
        Format::Csv => format!(
            "width,arity,conditions,analytic,brute\n{},{},{},{},{}\n",
            count.width,
            count.arity,
            count.conditions.join(";"),
            count.analytic,
            brute
        ),
        Format::Text => {
            let mut s = format!(
                "tables at w={}, arity {} satisfying {{{}}}: analytic {}, brute {}\n",
                count.width,
                count.arity,
                count.conditions.join(", "),
                count.analytic,
                brute
            );
            if count.brute.is_some_and(|b| num_bigint::BigUint::from(b) != count.analytic) {
                s.push_str("MISMATCH between analytic and brute counts\n");
            }
            s
        }
    };
    emit(&args.output, &text, stdout)?;
    Ok(0)
}

pub fn cmd_search(args: &SearchArgs, stdout: &mut dyn Write) -> Result<i32> {
    let ops = resolve_set(&args.ops, args.width)?;
    let limits = SearchLimits {
        max_functions: args.max_functions,
    };
    let outcome = search_constants(&ops, args.vars, args.max_nodes, &limits)?;
    let text = match args.output.format {
        Format::Json => to_json(&json!({
            "generators": ops.names(),
            "width": args.width,
            "vars": args.vars,
            "max_nodes": args.max_nodes,
            "outcome": outcome,
        })),
        Format::Text => {
            let mut s = String::new();
            if outcome.findings.is_empty() {
                let _ = writeln!(s, "no constant formulas found");
            }
            for f in &outcome.findings {
                let _ = writeln!(s, "constant {}: {} [{}]", f.constant, f.formula, f.coverage);
            }
            let _ = writeln!(
                s,
                "{} distinct functions, formulas up to {} nodes{}",
                outcome.distinct_functions,
                outcome.max_nodes_reached,
                if outcome.complete { "" } else { " (INCOMPLETE: function bound reached)" }
            );
            s
        }
        Format::Csv => return Err(no_csv("search findings")),
    };
    emit(&args.output, &text, stdout)?;
    Ok(if outcome.findings.is_empty() { 0 } else { 1 })
}
