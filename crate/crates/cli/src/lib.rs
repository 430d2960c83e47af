//! Batch workflows around `intsplit-core`: split a formula into sub-problem
//! files, run them, merge the results, and inspect annotations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Command as Process, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use wait_timeout::ChildExt;

use intsplit_core::evaluator::{Correctness, EvalBudget, EvalError, Evaluator};
use intsplit_core::generate::correct_for_every_plan;
use intsplit_core::merger::{self, MergeError, ResultCode, TimeModel};
use intsplit_core::qdimacs::{self, ParseOptions, ReadError};
use intsplit_core::splitter::{self, SplitMode, SplitPlan, MANIFEST_NAME};
use intsplit_core::{AnnotatedQuantifier, Formula};

pub const INFO_NAME: &str = "split.info";
pub const RESULTS_NAME: &str = "results.csv";
pub const CERTIFICATE_NAME: &str = "certificate.txt";
pub const REPORT_NAME: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(
    name = "intsplit",
    version,
    about = "Int-split aware divide and conquer for QBF"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the accounted sub-problems of a formula and their manifest.
    Split(SplitArgs),
    /// Solve every sub-problem of a split directory.
    Run(RunArgs),
    /// Combine sub-problem results into a verdict for the original formula.
    Merge(MergeArgs),
    /// Show per-annotation expansion counts and a plan preview.
    Stats(StatsArgs),
    /// Evaluate a small formula by brute force.
    Eval(EvalArgs),
    /// Check that the int-splits do not change the truth value.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Formula in (Q)DIMACS format with optional `cs int` lines.
    pub input: PathBuf,
    /// Reject comments after the problem line and free variables.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    /// Refuse formulas with more quantified variables than this.
    #[arg(long, default_value_t = 25)]
    pub max_variables: usize,
    /// Wall-clock limit in seconds.
    #[arg(long, value_parser = positive_seconds)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Maximal number of expanded variables.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=63))]
    pub depth: u64,
    /// Expand the leading variables bit by bit, ignoring annotations.
    #[arg(long)]
    pub no_intsplits: bool,
    /// Output directory (default: `<input>.split`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Directory written by `split`.
    pub dir: PathBuf,
    /// Number of concurrent tasks (default: number of CPUs).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Per-task limit in seconds; exceeded tasks are recorded as UNKNOWN.
    #[arg(long, value_parser = positive_seconds)]
    pub timeout: Option<f64>,
    /// External solver command, `{file}` is replaced by the sub-problem path.
    /// Exit code 10 means TRUE, 20 means FALSE.
    #[arg(long)]
    pub solver: Option<String>,
    /// Variable budget of the built-in evaluator.
    #[arg(long, default_value_t = 25)]
    pub max_variables: usize,
    /// Results file (default: `<dir>/results.csv`).
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory written by `split`.
    pub dir: PathBuf,
    /// Results as CSV or as a directory of logs (default: `<dir>/results.csv`).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Where to write the certificate and report (default: `<dir>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sequential solving time in seconds, for the speed-up.
    #[arg(long, value_parser = non_negative_seconds)]
    pub sequential_time: Option<f64>,
    #[arg(long, default_value = "paper")]
    pub time_model: TimeModel,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Also preview the plan for this depth.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=63))]
    pub depth: Option<u64>,
    #[arg(long)]
    pub no_intsplits: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Let annotated quantifiers range over their accounted values only.
    #[arg(long)]
    pub with_intsplits: bool,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

fn positive_seconds(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(t) if t.is_finite() && t > 0.0 => Ok(t),
        _ => Err(format!("expected a positive number of seconds, got `{s}`")),
    }
}

fn non_negative_seconds(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
        _ => Err(format!(
            "expected a non-negative number of seconds, got `{s}`"
        )),
    }
}

/// Exit statuses. Usage errors exit with 2 (clap's convention).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Failure = 1,
    InvalidInput = 3,
    BudgetExceeded = 4,
    Incomplete = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub error: anyhow::Error,
}

impl CliError {
    fn new(status: Status, error: impl Into<anyhow::Error>) -> Self {
        CliError {
            status,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Several core errors already embed their cause in the message.
        let mut message = self.error.to_string();
        for cause in self.error.chain().skip(1) {
            let cause = cause.to_string();
            if !message.contains(&cause) {
                message.push_str(": ");
                message.push_str(&cause);
            }
        }
        f.write_str(&message)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        CliError::new(Status::Failure, error)
    }
}

impl From<io::Error> for CliError {
    fn from(error: io::Error) -> Self {
        CliError::new(Status::Failure, error)
    }
}

impl From<ReadError> for CliError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Parse { .. } => CliError::new(Status::InvalidInput, e),
            ReadError::Io { .. } => CliError::new(Status::Failure, e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new(Status::BudgetExceeded, e)
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        let status = match e {
            MergeError::MissingResult(_) => Status::Incomplete,
            MergeError::Io { .. } => Status::Failure,
            _ => Status::InvalidInput,
        };
        CliError::new(status, e)
    }
}

pub type CliResult = Result<(), CliError>;

/// Runs one parsed command line; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Split(a) => cmd_split(a, &mut out),
        Command::Run(a) => cmd_run(a, &mut out),
        Command::Merge(a) => cmd_merge(a, &mut out),
        Command::Stats(a) => cmd_stats(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Check(a) => cmd_check(a, &mut out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("intsplit: {e}");
            e.status as i32
        }
    }
}

fn read_formula(args: &InputArgs) -> Result<Formula, CliError> {
    Ok(qdimacs::read_file(
        &args.input,
        ParseOptions {
            strict: args.strict,
        },
    )?)
}

fn mode(no_intsplits: bool) -> SplitMode {
    if no_intsplits {
        SplitMode::Plain
    } else {
        SplitMode::IntSplit
    }
}

fn file_name(path: &Path) -> Result<String, CliError> {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| anyhow!("{} has no file name", path.display()).into())
}

/// Tab-separated `kind vars width s u eta` rows.
fn quantifier_table<'a>(
    rows: impl IntoIterator<Item = (String, &'a AnnotatedQuantifier)>,
) -> String {
    let mut out = String::from("quantifier\tkind\tvars\twidth\ts\tu\teta\n");
    for (label, aq) in rows {
        let vars: Vec<String> = aq
            .bitvector()
            .variables()
            .iter()
            .map(|v| v.to_string())
            .collect();
        out.push_str(&format!(
            "{label}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            aq.kind(),
            vars.join(" "),
            aq.width(),
            aq.s(),
            aq.u(),
            aq.efficiency()
        ));
    }
    out
}

fn plan_table(plan: &SplitPlan) -> String {
    quantifier_table(plan.quantifiers().iter().map(|q| {
        let label = match q.annotation {
            Some(i) => format!("annotation {i}"),
            None => "variable".to_string(),
        };
        (label, &q.quantifier)
    }))
}

fn plan_summary(plan: &SplitPlan) -> String {
    let with = plan.count_subproblems();
    let without = plan.full_expansion_count();
    format!(
        "mode={}\nrequested_depth={}\neffective_depth={}\nsubproblems_with={with}\nsubproblems_without={without}\nratio={}\n",
        mode_name(plan.mode()),
        plan.requested_depth(),
        plan.effective_depth(),
        with as f64 / without as f64
    )
}

fn mode_name(mode: SplitMode) -> &'static str {
    match mode {
        SplitMode::IntSplit => "intsplit",
        SplitMode::Plain => "plain",
    }
}

/// What `split` records about itself for `run` and `merge`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitInfo {
    pub name: String,
    pub depth: usize,
    pub mode: SplitMode,
    pub index_width: usize,
    pub subproblems: u64,
}

impl SplitInfo {
    fn to_text(&self) -> String {
        format!(
            "name={}\ndepth={}\nmode={}\nindex_width={}\nsubproblems={}\n",
            self.name,
            self.depth,
            mode_name(self.mode),
            self.index_width,
            self.subproblems
        )
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(INFO_NAME);
        let text = fs::read_to_string(&path).with_context(|| {
            format!(
                "cannot read {} (is this a split directory?)",
                path.display()
            )
        })?;
        let fields: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| anyhow!("{}: missing `{key}`", path.display()))
        };
        let number = |key: &str| -> anyhow::Result<u64> {
            get(key)?
                .parse()
                .map_err(|_| anyhow!("{}: bad `{key}`", path.display()))
        };
        let mode = match get("mode")? {
            "intsplit" => SplitMode::IntSplit,
            "plain" => SplitMode::Plain,
            other => return Err(anyhow!("{}: unknown mode `{other}`", path.display()).into()),
        };
        Ok(SplitInfo {
            name: get("name")?.to_string(),
            depth: number("depth")? as usize,
            mode,
            index_width: number("index_width")? as usize,
            subproblems: number("subproblems")?,
        })
    }

    pub fn file_name(&self, index: u64) -> String {
        format!("{index:0width$}-{}", self.name, width = self.index_width)
    }
}

pub fn cmd_split(args: &SplitArgs, out: &mut dyn Write) -> CliResult {
    let formula = read_formula(&args.input)?;
    let plan = splitter::plan(&formula, args.depth as usize, mode(args.no_intsplits))
        .map_err(|e| CliError::new(Status::InvalidInput, e))?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => {
            let mut p = args.input.input.clone().into_os_string();
            p.push(".split");
            PathBuf::from(p)
        }
    };
    let name = file_name(&args.input.input)?;
    let summary = splitter::split_to_directory(&formula, &plan, &name, &dir, args.force)
        .map_err(|e| CliError::new(Status::Failure, e))?;
    let info = SplitInfo {
        name,
        depth: plan.requested_depth(),
        mode: plan.mode(),
        index_width: plan.index_width(),
        subproblems: plan.count_subproblems(),
    };
    fs::write(dir.join(INFO_NAME), info.to_text())
        .with_context(|| format!("cannot write {}", dir.join(INFO_NAME).display()))?;
    write!(out, "{}", plan_summary(&plan))?;
    writeln!(out, "files={}", summary.files.len())?;
    writeln!(out, "directory={}", dir.display())?;
    write!(out, "{}", plan_table(&plan))?;
    Ok(())
}

/// Outcome of one task.
fn solve_builtin(path: &Path, timeout: Option<f64>, max_variables: usize) -> (ResultCode, f64) {
    let start = Instant::now();
    let budget = EvalBudget {
        max_variables,
        max_nodes: None,
        deadline: timeout.map(|t| start + Duration::from_secs_f64(t)),
    };
    let result = qdimacs::read_file(path, ParseOptions::default())
        .map_err(|e| e.to_string())
        .and_then(|f| Evaluator::new(budget).eval(&f).map_err(|e| e.to_string()));
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok(true) => (ResultCode::True, elapsed),
        Ok(false) => (ResultCode::False, elapsed),
        Err(e) => {
            eprintln!("intsplit: {}: {e}", path.display());
            let timed_out = timeout.is_some_and(|t| elapsed >= t);
            (
                ResultCode::Unknown,
                if timed_out { timeout.unwrap() } else { elapsed },
            )
        }
    }
}

/// Splits the template on whitespace and substitutes `{file}`; the path is
/// appended when no token mentions it.
pub fn solver_command(template: &str, file: &Path) -> Vec<String> {
    let file = file.display().to_string();
    let mut argv: Vec<String> = template
        .split_whitespace()
        .map(|t| t.replace("{file}", &file))
        .collect();
    if !template.contains("{file}") {
        argv.push(file);
    }
    argv
}

fn solve_external(template: &str, path: &Path, timeout: Option<f64>) -> (ResultCode, f64) {
    let argv = solver_command(template, path);
    let start = Instant::now();
    let child = Process::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn();
    let mut child = match child {
        Ok(c) => c,
        Err(e) => {
            eprintln!("intsplit: cannot start `{}`: {e}", argv[0]);
            return (ResultCode::Unknown, start.elapsed().as_secs_f64());
        }
    };
    let status = match timeout {
        Some(t) => child.wait_timeout(Duration::from_secs_f64(t)),
        None => child.wait().map(Some),
    };
    match status {
        Ok(Some(status)) => {
            let code = status
                .code()
                .map(ResultCode::from_exit_code)
                .unwrap_or(ResultCode::Unknown);
            (code, start.elapsed().as_secs_f64())
        }
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            (ResultCode::Unknown, timeout.unwrap())
        }
        Err(e) => {
            eprintln!("intsplit: waiting for `{}`: {e}", argv[0]);
            let _ = child.kill();
            (ResultCode::Unknown, start.elapsed().as_secs_f64())
        }
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CliResult {
    let info = SplitInfo::read(&args.dir)?;
    let manifest = splitter::read_manifest(&args.dir.join(MANIFEST_NAME))
        .map_err(|e| CliError::new(Status::InvalidInput, e))?;
    let results = args
        .results
        .clone()
        .unwrap_or_else(|| args.dir.join(RESULTS_NAME));

    let existing = match fs::read_to_string(&results) {
        Ok(text) => merger::parse_results_csv(&text)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(CliError::new(Status::Failure, e)),
    };
    let done: HashSet<u64> = existing.iter().map(|&(i, _)| i).collect();
    let todo: Vec<u64> = manifest
        .iter()
        .map(|e| e.index)
        .filter(|i| !done.contains(i))
        .collect();
    for &i in &todo {
        let path = args.dir.join(info.file_name(i));
        if !path.is_file() {
            return Err(anyhow!("sub-problem file {} is missing", path.display()).into());
        }
    }

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results)
        .with_context(|| format!("cannot open {}", results.display()))?;
    if file.metadata()?.len() == 0 {
        file.write_all(b"index,result,time_seconds\n")?;
    }
    let appender = Mutex::new(file);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| anyhow!("cannot start workers: {e}"))?;
    pool.install(|| {
        todo.par_iter().try_for_each(|&index| -> io::Result<()> {
            let path = args.dir.join(info.file_name(index));
            let (code, time) = match &args.solver {
                Some(template) => solve_external(template, &path, args.timeout),
                None => solve_builtin(&path, args.timeout, args.max_variables),
            };
            let mut f = appender.lock().unwrap();
            writeln!(f, "{index},{code},{time}")?;
            f.flush()
        })
    })
    .with_context(|| format!("cannot write {}", results.display()))?;

    writeln!(out, "tasks_run={}", todo.len())?;
    writeln!(out, "tasks_skipped={}", done.len())?;
    writeln!(out, "results={}", results.display())?;
    Ok(())
}

pub fn cmd_merge(args: &MergeArgs, out: &mut dyn Write) -> CliResult {
    let formula = read_formula(&args.input)?;
    let info = SplitInfo::read(&args.dir)?;
    let plan = splitter::plan(&formula, info.depth, info.mode)
        .map_err(|e| CliError::new(Status::InvalidInput, e))?;
    let results = args
        .results
        .clone()
        .unwrap_or_else(|| args.dir.join(RESULTS_NAME));
    let table = merger::ingest(&results, &args.dir.join(MANIFEST_NAME), &plan)?;
    let merged = merger::merge(&table, args.time_model)?;
    let report = merger::speedup_report(&table, &merged, args.sequential_time);

    let report_dir = args.out.clone().unwrap_or_else(|| args.dir.clone());
    fs::create_dir_all(&report_dir)?;
    let mut text = report.to_key_values();
    text.push_str(&format!(
        "time_model={}\n",
        time_model_name(args.time_model)
    ));
    for (name, contents) in [
        (CERTIFICATE_NAME, merged.certificate()),
        (REPORT_NAME, text.clone()),
    ] {
        let path = report_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    }
    write!(out, "{text}")?;
    Ok(())
}

fn time_model_name(model: TimeModel) -> &'static str {
    match model {
        TimeModel::MinMax => "paper",
        TimeModel::Refined => "refined",
    }
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> CliResult {
    let formula = read_formula(&args.input)?;
    write!(
        out,
        "{}",
        quantifier_table(
            formula
                .annotations()
                .iter()
                .enumerate()
                .map(|(i, a)| (format!("annotation {i}"), a))
        )
    )?;
    if let Some(depth) = args.depth {
        let plan = splitter::plan(&formula, depth as usize, mode(args.no_intsplits))
            .map_err(|e| CliError::new(Status::InvalidInput, e))?;
        writeln!(out)?;
        write!(out, "{}", plan_summary(&plan))?;
        write!(out, "{}", plan_table(&plan))?;
    }
    Ok(())
}

fn budget(args: &BudgetArgs) -> EvalBudget {
    EvalBudget {
        max_variables: args.max_variables,
        max_nodes: None,
        deadline: args
            .timeout
            .map(|t| Instant::now() + Duration::from_secs_f64(t)),
    }
}

fn truth(b: bool) -> &'static str {
    if b {
        "TRUE"
    } else {
        "FALSE"
    }
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let formula = read_formula(&args.input)?;
    let mut e = Evaluator::new(budget(&args.budget));
    let value = if args.with_intsplits {
        e.eval_with_intsplits(&formula)?
    } else {
        e.eval(&formula)?
    };
    writeln!(out, "{}", truth(value))?;
    Ok(())
}

pub fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> CliResult {
    let formula = read_formula(&args.input)?;
    let budget = budget(&args.budget);
    match Evaluator::new(budget).check_correctness(&formula)? {
        Correctness::Correct => {
            writeln!(out, "CORRECT")?;
            let every = correct_for_every_plan(&formula, budget)?;
            writeln!(out, "every_plan_sound={every}")?;
        }
        Correctness::Incorrect {
            restricted,
            unrestricted,
            culprits,
        } => {
            writeln!(out, "INCORRECT")?;
            writeln!(out, "restricted={}", truth(restricted))?;
            writeln!(out, "unrestricted={}", truth(unrestricted))?;
            if culprits.is_empty() {
                writeln!(out, "witness=combination of annotations")?;
            }
            for i in culprits {
                let aq = &formula.annotations()[i];
                let constraints: Vec<String> =
                    aq.constraints().iter().map(|c| c.to_string()).collect();
                writeln!(
                    out,
                    "witness=annotation {i} {} {} {}",
                    aq.kind(),
                    aq.bitvector(),
                    constraints.join(";")
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_template_substitution() {
        let file = Path::new("/tmp/s/07-f.qdimacs");
        assert_eq!(
            solver_command("caqe --qdo {file}", file),
            ["caqe", "--qdo", "/tmp/s/07-f.qdimacs"]
        );
        assert_eq!(
            solver_command("depqbf", file),
            ["depqbf", "/tmp/s/07-f.qdimacs"]
        );
        assert_eq!(
            solver_command("solve --in={file}", file),
            ["solve", "--in=/tmp/s/07-f.qdimacs"]
        );
    }

    #[test]
    fn split_info_round_trip() {
        let info = SplitInfo {
            name: "f.qdimacs".into(),
            depth: 15,
            mode: SplitMode::Plain,
            index_width: 5,
            subproblems: 32768,
        };
        let dir = std::env::temp_dir().join(format!("intsplit-info-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(INFO_NAME), info.to_text()).unwrap();
        assert_eq!(SplitInfo::read(&dir).unwrap(), info);
        assert_eq!(info.file_name(42), "00042-f.qdimacs");
        fs::remove_dir_all(&dir).unwrap();
    }
}
