//! Reduction of per-sub-problem results to a verdict for the original formula.
//!
//! Leaves are ordered like [`crate::splitter::enumerate_accounted`], so the
//! `s_n` siblings of the innermost expanded quantifier are consecutive. Each
//! level takes the best code for `exists` and the worst for `forall`; the
//! final time is the wall-clock of a virtual machine with one processor per
//! sub-problem.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::formula::QuantifierKind;
use crate::splitter::{self, SplitPlan};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("missing results for indices {}", join(.0))]
    MissingResult(Vec<u64>),
    #[error("duplicate result for index {0}")]
    DuplicateResult(u64),
    #[error("result for index {0}, which is not in the plan")]
    UnknownIndex(u64),
    #[error("unparsable row at line {line}: {reason}")]
    UnparsableRow { line: usize, reason: String },
    #[error("unparsable log {}: {reason}", path.display())]
    UnparsableLog { path: PathBuf, reason: String },
    #[error("level of {len} tuples cannot be grouped by {group}")]
    GroupSizeMismatch { len: usize, group: u64 },
    #[error("manifest does not match the plan: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Split(#[from] splitter::SplitError),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn join(v: &[u64]) -> String {
    v.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
}

/// Three-valued solver outcome, ordered `False < Unknown < True`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResultCode {
    False = 0,
    Unknown = 1,
    True = 2,
}

impl ResultCode {
    /// Conventional solver exit code: 10 satisfiable, 20 unsatisfiable, 0 otherwise.
    pub fn exit_code(self) -> i32 {
        match self {
            ResultCode::True => 10,
            ResultCode::False => 20,
            ResultCode::Unknown => 0,
        }
    }

    pub fn from_exit_code(code: i32) -> Self {
        match code {
            10 => ResultCode::True,
            20 => ResultCode::False,
            _ => ResultCode::Unknown,
        }
    }
}

impl FromStr for ResultCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SAT" | "TRUE" | "10" => Ok(ResultCode::True),
            "UNSAT" | "FALSE" | "20" => Ok(ResultCode::False),
            "UNKNOWN" | "TIMEOUT" | "0" => Ok(ResultCode::Unknown),
            other => Err(format!("unknown result `{other}`")),
        }
    }
}

impl fmt::Display for ResultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResultCode::True => "TRUE",
            ResultCode::False => "FALSE",
            ResultCode::Unknown => "UNKNOWN",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultTuple {
    pub code: ResultCode,
    /// Seconds. Timeouts carry the time budget.
    pub time: f64,
}

impl ResultTuple {
    pub fn new(code: ResultCode, time: f64) -> Self {
        ResultTuple { code, time }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeModel {
    /// `exists`: minimal time, `forall`: maximal time, regardless of the result.
    #[default]
    MinMax,
    /// Minimal time only over the children that decide the node
    /// (a true child of `exists`, a false child of `forall`), maximal otherwise.
    Refined,
}

impl FromStr for TimeModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" | "minmax" => Ok(TimeModel::MinMax),
            "refined" => Ok(TimeModel::Refined),
            other => Err(format!(
                "unknown time model `{other}` (paper, minmax or refined)"
            )),
        }
    }
}

/// Leaf results of one split, keyed by expansion index.
#[derive(Debug, Clone)]
pub struct ResultTable {
    plan: SplitPlan,
    results: BTreeMap<u64, ResultTuple>,
}

impl ResultTable {
    /// Builds a table holding exactly one tuple per sub-problem of `plan`.
    pub fn new(
        plan: SplitPlan,
        rows: impl IntoIterator<Item = (u64, ResultTuple)>,
    ) -> Result<Self, MergeError> {
        let total = plan.count_subproblems();
        let mut results = BTreeMap::new();
        for (index, tuple) in rows {
            if index >= total {
                return Err(MergeError::UnknownIndex(index));
            }
            if results.insert(index, tuple).is_some() {
                return Err(MergeError::DuplicateResult(index));
            }
        }
        let missing: Vec<u64> = (0..total).filter(|i| !results.contains_key(i)).collect();
        if !missing.is_empty() {
            return Err(MergeError::MissingResult(missing));
        }
        Ok(ResultTable { plan, results })
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    pub fn get(&self, index: u64) -> Option<&ResultTuple> {
        self.results.get(&index)
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Leaf tuples in index order.
    pub fn leaves(&self) -> Vec<ResultTuple> {
        self.results.values().copied().collect()
    }

    pub fn total_cpu_time(&self) -> f64 {
        self.results.values().map(|t| t.time).sum()
    }
}

fn reduce_group(group: &[ResultTuple], kind: QuantifierKind, model: TimeModel) -> ResultTuple {
    let (decisive, code) = match kind {
        QuantifierKind::Exists => (
            ResultCode::True,
            group.iter().map(|t| t.code).max().unwrap(),
        ),
        QuantifierKind::Forall => (
            ResultCode::False,
            group.iter().map(|t| t.code).min().unwrap(),
        ),
    };
    let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    let time = match (model, kind) {
        (TimeModel::MinMax, QuantifierKind::Exists) => min(&mut group.iter().map(|t| t.time)),
        (TimeModel::MinMax, QuantifierKind::Forall) => max(&mut group.iter().map(|t| t.time)),
        (TimeModel::Refined, _) if code == decisive => {
            min(&mut group.iter().filter(|t| t.code == decisive).map(|t| t.time))
        }
        (TimeModel::Refined, _) => max(&mut group.iter().map(|t| t.time)),
    };
    ResultTuple { code, time }
}

/// Reduces consecutive groups of `group_size` tuples to one tuple each.
pub fn reduce_level(
    tuples: &[ResultTuple],
    group_size: u64,
    kind: QuantifierKind,
    model: TimeModel,
) -> Result<Vec<ResultTuple>, MergeError> {
    if group_size == 0 || !(tuples.len() as u64).is_multiple_of(group_size) {
        return Err(MergeError::GroupSizeMismatch {
            len: tuples.len(),
            group: group_size,
        });
    }
    Ok(tuples
        .chunks(group_size as usize)
        .map(|g| reduce_group(g, kind, model))
        .collect())
}

/// One reduction step of the certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeLevel {
    pub kind: QuantifierKind,
    pub group_size: u64,
    /// Input tuples of this step, in index order.
    pub inputs: Vec<ResultTuple>,
    /// One tuple per group of `group_size` inputs.
    pub outputs: Vec<ResultTuple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeReport {
    pub result: ResultTuple,
    pub time_model: TimeModel,
    /// Innermost level first; `levels[0].inputs` are the leaves.
    pub levels: Vec<MergeLevel>,
}

impl MergeReport {
    /// Human-readable certificate of the virtual parallel run.
    pub fn certificate(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "final {} {}\n",
            self.result.code, self.result.time
        ));
        for (depth, level) in self.levels.iter().enumerate() {
            out.push_str(&format!(
                "level {depth} {} groups of {}\n",
                level.kind, level.group_size
            ));
            for (g, (chunk, out_t)) in level
                .inputs
                .chunks(level.group_size as usize)
                .zip(&level.outputs)
                .enumerate()
            {
                let members: Vec<String> = chunk
                    .iter()
                    .map(|t| format!("{}:{}", t.code, t.time))
                    .collect();
                out.push_str(&format!(
                    "  {g}: [{}] -> {}:{}\n",
                    members.join(" "),
                    out_t.code,
                    out_t.time
                ));
            }
        }
        out
    }
}

/// Folds the table from the innermost expanded quantifier outward.
pub fn merge(table: &ResultTable, model: TimeModel) -> Result<MergeReport, MergeError> {
    let mut current = table.leaves();
    let mut levels = Vec::new();
    for (kind, s) in table.plan().levels().into_iter().rev() {
        let outputs = reduce_level(&current, s, kind, model)?;
        levels.push(MergeLevel {
            kind,
            group_size: s,
            inputs: current,
            outputs: outputs.clone(),
        });
        current = outputs;
    }
    debug_assert_eq!(current.len(), 1);
    Ok(MergeReport {
        result: current[0],
        time_model: model,
        levels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupReport {
    pub final_result: ResultCode,
    pub parallel_time: f64,
    pub total_cpu_time: f64,
    pub subproblems_with: u64,
    pub subproblems_without: u64,
    pub sequential_time: Option<f64>,
    /// `sequential_time / parallel_time`, when both are known and the latter is positive.
    pub speedup: Option<f64>,
}

impl SpeedupReport {
    pub fn ratio(&self) -> f64 {
        self.subproblems_with as f64 / self.subproblems_without as f64
    }

    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "final_result={}\nparallel_time_s={}\ntotal_cpu_time_s={}\nsubproblems_with={}\nsubproblems_without={}\nratio={}\n",
            self.final_result,
            self.parallel_time,
            self.total_cpu_time,
            self.subproblems_with,
            self.subproblems_without,
            self.ratio()
        );
        if let Some(s) = self.speedup {
            out.push_str(&format!("speedup={s}\n"));
        }
        out
    }
}

pub fn speedup_report(
    table: &ResultTable,
    merged: &MergeReport,
    sequential_time: Option<f64>,
) -> SpeedupReport {
    let parallel_time = merged.result.time;
    SpeedupReport {
        final_result: merged.result.code,
        parallel_time,
        total_cpu_time: table.total_cpu_time(),
        subproblems_with: table.plan().count_subproblems(),
        subproblems_without: table.plan().full_expansion_count(),
        sequential_time,
        speedup: sequential_time
            .filter(|_| parallel_time > 0.0)
            .map(|seq| seq / parallel_time),
    }
}

fn parse_time(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
        _ => Err(format!("bad time `{}`", s.trim())),
    }
}

/// Parses `index,result,time_seconds` rows. A leading header row is skipped.
pub fn parse_results_csv(text: &str) -> Result<Vec<(u64, ResultTuple)>, MergeError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let bad = |reason: String| MergeError::UnparsableRow {
            line: n + 1,
            reason,
        };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(n + 1);
        let bad = |reason: String| MergeError::UnparsableRow { line, reason };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", record.len())));
        }
        let Ok(index) = record[0].parse::<u64>() else {
            if rows.is_empty() && record[0].eq_ignore_ascii_case("index") {
                continue;
            }
            return Err(bad(format!("bad index `{}`", &record[0])));
        };
        let code = record[1].parse::<ResultCode>().map_err(bad)?;
        let time = parse_time(&record[2]).map_err(bad)?;
        rows.push((index, ResultTuple { code, time }));
    }
    Ok(rows)
}

/// Reads a directory of logs named `<index>-...` whose last non-empty line is
/// `RESULT <code> TIME <seconds>`.
pub fn read_log_directory(dir: &Path) -> Result<Vec<(u64, ResultTuple)>, MergeError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MergeError::Io { path, source }
    };
    let mut rows = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let entry = entry.map_err(io(dir))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((idx, _)) = name.split_once('-') else {
            continue;
        };
        let Ok(index) = idx.parse::<u64>() else {
            continue;
        };
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let bad = |reason: &str| MergeError::UnparsableLog {
            path: path.clone(),
            reason: reason.to_string(),
        };
        let last = text
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| bad("empty log"))?;
        let toks: Vec<&str> = last.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "RESULT" || toks[2] != "TIME" {
            return Err(bad("last line is not `RESULT <code> TIME <seconds>`"));
        }
        let code = toks[1].parse::<ResultCode>().map_err(|e| bad(&e))?;
        let time = parse_time(toks[3]).map_err(|e| bad(&e))?;
        rows.push((index, ResultTuple { code, time }));
    }
    rows.sort_by_key(|&(i, _)| i);
    Ok(rows)
}

/// Loads results (a CSV file or a log directory) and checks them against the
/// plan and its manifest.
pub fn ingest(
    results: &Path,
    manifest: &Path,
    plan: &SplitPlan,
) -> Result<ResultTable, MergeError> {
    let entries = splitter::read_manifest(manifest)?;
    splitter::verify_manifest(plan, &entries).map_err(MergeError::ManifestMismatch)?;
    let rows = if results.is_dir() {
        read_log_directory(results)?
    } else {
        let text = fs::read_to_string(results).map_err(|source| MergeError::Io {
            path: results.to_path_buf(),
            source,
        })?;
        parse_results_csv(&text)?
    };
    ResultTable::new(plan.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qdimacs;
    use crate::splitter::{plan, SplitMode};
    use ResultCode::*;

    fn t(code: ResultCode, time: f64) -> ResultTuple {
        ResultTuple::new(code, time)
    }

    fn nine_of_sixteen_plan() -> SplitPlan {
        let f = qdimacs::parse("cs int <3\ncs int <3\np cnf 4 0\na 1 2 0\ne 3 4 0\n").unwrap();
        plan(&f, 4, SplitMode::IntSplit).unwrap()
    }

    #[test]
    fn code_order() {
        assert!(False < Unknown && Unknown < True);
        assert_eq!("SAT".parse::<ResultCode>(), Ok(True));
        assert_eq!("20".parse::<ResultCode>(), Ok(False));
        assert_eq!("timeout".parse::<ResultCode>(), Ok(Unknown));
        assert!("maybe".parse::<ResultCode>().is_err());
    }

    #[test]
    fn reduce_examples() {
        let r = reduce_level(
            &[t(False, 10.0), t(True, 5.0), t(True, 8.0)],
            3,
            QuantifierKind::Exists,
            TimeModel::MinMax,
        )
        .unwrap();
        assert_eq!(r, vec![t(True, 5.0)]);
        let r = reduce_level(
            &[t(True, 5.0), t(Unknown, 3700.0)],
            2,
            QuantifierKind::Forall,
            TimeModel::MinMax,
        )
        .unwrap();
        assert_eq!(r, vec![t(Unknown, 3700.0)]);
        let r = reduce_level(
            &[t(True, 5.0), t(False, 2.0)],
            2,
            QuantifierKind::Forall,
            TimeModel::MinMax,
        )
        .unwrap();
        assert_eq!(r, vec![t(False, 5.0)]);
        assert!(matches!(
            reduce_level(
                &[t(True, 1.0); 3],
                2,
                QuantifierKind::Exists,
                TimeModel::MinMax
            ),
            Err(MergeError::GroupSizeMismatch { len: 3, group: 2 })
        ));
    }

    #[test]
    fn refined_time_model() {
        let g = [t(False, 10.0), t(True, 5.0), t(True, 8.0), t(False, 1.0)];
        let r = reduce_level(&g, 4, QuantifierKind::Exists, TimeModel::Refined).unwrap();
        assert_eq!(r, vec![t(True, 5.0)]);
        let g = [t(False, 10.0), t(False, 1.0)];
        let paper = reduce_level(&g, 2, QuantifierKind::Exists, TimeModel::MinMax).unwrap();
        let refined = reduce_level(&g, 2, QuantifierKind::Exists, TimeModel::Refined).unwrap();
        assert_eq!(paper, vec![t(False, 1.0)]);
        assert_eq!(refined, vec![t(False, 10.0)]);
        let g = [t(True, 10.0), t(False, 3.0), t(False, 7.0)];
        let refined = reduce_level(&g, 3, QuantifierKind::Forall, TimeModel::Refined).unwrap();
        assert_eq!(refined, vec![t(False, 3.0)]);
    }

    #[test]
    fn merge_nine_of_sixteen() {
        let p = nine_of_sixteen_plan();
        let table = ResultTable::new(p.clone(), (0..9).map(|i| (i, t(True, 1.0)))).unwrap();
        let report = merge(&table, TimeModel::MinMax).unwrap();
        assert_eq!(report.result, t(True, 1.0));
        assert_eq!(report.levels.len(), 2);
        assert_eq!(report.levels[0].inputs.len(), 9);
        assert_eq!(report.levels[0].outputs.len(), 3);

        // second inner group all false: the forall level takes the minimum
        let rows = (0..9).map(|i| (i, t(if (3..6).contains(&i) { False } else { True }, 1.0)));
        let table = ResultTable::new(p, rows).unwrap();
        assert_eq!(merge(&table, TimeModel::MinMax).unwrap().result.code, False);
    }

    #[test]
    fn table_completeness() {
        let p = nine_of_sixteen_plan();
        match ResultTable::new(
            p.clone(),
            (0..9).filter(|&i| i != 5).map(|i| (i, t(True, 1.0))),
        ) {
            Err(MergeError::MissingResult(m)) => assert_eq!(m, vec![5]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ResultTable::new(p.clone(), (0..9).chain([3]).map(|i| (i, t(True, 1.0)))),
            Err(MergeError::DuplicateResult(3))
        ));
        assert!(matches!(
            ResultTable::new(p, (0..10).map(|i| (i, t(True, 1.0)))),
            Err(MergeError::UnknownIndex(9))
        ));
    }

    #[test]
    fn csv_rows() {
        let rows = parse_results_csv("index,result,time_seconds\n3,SAT,12.5\n7,20,3700\n").unwrap();
        assert_eq!(rows, vec![(3, t(True, 12.5)), (7, t(False, 3700.0))]);
        assert!(matches!(
            parse_results_csv("1,SAT,1\n2,SAT\n"),
            Err(MergeError::UnparsableRow { line: 2, .. })
        ));
        assert!(matches!(
            parse_results_csv("1,SAT,-4\n"),
            Err(MergeError::UnparsableRow { line: 1, .. })
        ));
    }

    #[test]
    fn speedup() {
        let p = nine_of_sixteen_plan();
        let table = ResultTable::new(p, (0..9).map(|i| (i, t(True, 1.0)))).unwrap();
        let merged = merge(&table, TimeModel::MinMax).unwrap();
        let report = speedup_report(&table, &merged, Some(9.0));
        assert_eq!(report.speedup, Some(9.0));
        assert_eq!(report.total_cpu_time, 9.0);
        assert_eq!(report.subproblems_with, 9);
        assert_eq!(report.subproblems_without, 16);
        let kv = report.to_key_values();
        assert!(kv.contains("final_result=TRUE\n"));
        assert!(kv.contains("speedup=9\n"));
        assert!(!speedup_report(&table, &merged, None)
            .to_key_values()
            .contains("speedup"));
    }

    #[test]
    fn log_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("0-f.log"), "solving\nRESULT SAT TIME 1.5\n").unwrap();
        fs::write(dir.path().join("1-f.log"), "RESULT 20 TIME 2\n\n").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let rows = read_log_directory(dir.path()).unwrap();
        assert_eq!(rows, vec![(0, t(True, 1.5)), (1, t(False, 2.0))]);
        fs::write(dir.path().join("2-f.log"), "crashed\n").unwrap();
        assert!(matches!(
            read_log_directory(dir.path()),
            Err(MergeError::UnparsableLog { .. })
        ));
    }
}
