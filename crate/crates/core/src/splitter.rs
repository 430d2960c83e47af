//! Offline divide-and-conquer splitting along annotated quantifiers.
//!
//! A [`SplitPlan`] picks whole bit-vectors from the front of the prefix until
//! the depth budget is used up. Its accounted expansions are enumerated in
//! lexicographic order (plan order, MSB first) and each one becomes a copy of
//! the formula with the assignment appended as unit clauses.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::formula::{
    AnnotatedQuantifier, Assignment, BitVector, Clause, Formula, FormulaError, Literal, Matrix,
    QuantifierBlock, QuantifierKind, Var, MAX_WIDTH,
};
use crate::qdimacs;

/// Name of the manifest written next to the sub-problems.
pub const MANIFEST_NAME: &str = "plan.csv";

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("splitting depth must be between 1 and {MAX_WIDTH}, got {0}")]
    InvalidDepth(usize),
    #[error("empty plan: {0}")]
    EmptyPlan(String),
    #[error("{} already exists (use force to overwrite)", .0.display())]
    AlreadyExists(PathBuf),
    #[error("expansion {index} does not belong to this plan")]
    ForeignExpansion { index: u64 },
    #[error("sub-problem is not a valid formula: {0}")]
    InvalidCopy(#[from] FormulaError),
    #[error("malformed manifest {}: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SplitError + '_ {
    move |source| SplitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Expand whole annotated quantifiers, skipping unaccounted expansions.
    IntSplit,
    /// Expand the first `d` prefix variables bit by bit.
    Plain,
}

/// One quantifier selected for expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedQuantifier {
    pub quantifier: AnnotatedQuantifier,
    /// Index into `Formula::annotations` when the quantifier came from an annotation.
    pub annotation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    mode: SplitMode,
    requested_depth: usize,
    effective_depth: usize,
    quantifiers: Vec<PlannedQuantifier>,
}

impl SplitPlan {
    pub fn mode(&self) -> SplitMode {
        self.mode
    }

    pub fn requested_depth(&self) -> usize {
        self.requested_depth
    }

    /// Sum of the widths of the selected quantifiers.
    pub fn effective_depth(&self) -> usize {
        self.effective_depth
    }

    pub fn quantifiers(&self) -> &[PlannedQuantifier] {
        &self.quantifiers
    }

    pub fn is_empty(&self) -> bool {
        self.quantifiers.is_empty()
    }

    /// All expanded variables in plan order.
    pub fn variables(&self) -> Vec<Var> {
        self.quantifiers
            .iter()
            .flat_map(|q| q.quantifier.bitvector().variables().iter().copied())
            .collect()
    }

    /// Product of the accounted-expansion counts.
    pub fn count_subproblems(&self) -> u64 {
        self.quantifiers.iter().map(|q| q.quantifier.s()).product()
    }

    /// Sub-problems a plain split of the same depth would produce.
    pub fn full_expansion_count(&self) -> u64 {
        1u64 << self.effective_depth
    }

    /// `(kind, s)` per expanded quantifier, outermost first.
    pub fn levels(&self) -> Vec<(QuantifierKind, u64)> {
        self.quantifiers
            .iter()
            .map(|q| (q.quantifier.kind(), q.quantifier.s()))
            .collect()
    }

    /// Width of the zero-padded index in sub-problem file names.
    pub fn index_width(&self) -> usize {
        let last = self.count_subproblems().saturating_sub(1);
        last.to_string().len()
    }

    /// Assignment of expansion number `index`, if it exists.
    pub fn expansion(&self, index: u64) -> Option<ExpansionIndex> {
        if index >= self.count_subproblems() {
            return None;
        }
        let mut rest = index;
        let mut values = vec![0; self.quantifiers.len()];
        for (i, q) in self.quantifiers.iter().enumerate().rev() {
            let s = q.quantifier.s();
            values[i] = nth_accounted(&q.quantifier, rest % s);
            rest /= s;
        }
        Some(ExpansionIndex::new(self, index, values))
    }
}

fn nth_accounted(q: &AnnotatedQuantifier, mut n: u64) -> u64 {
    for r in q.accounted_ranges() {
        let len = r.end - r.start;
        if n < len {
            return r.start + n;
        }
        n -= len;
    }
    unreachable!("n < s")
}

/// An accounted expansion together with its position in enumeration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionIndex {
    pub index: u64,
    /// Integer value of each planned bit-vector.
    pub values: Vec<u64>,
    /// `(variable, bit)` pairs in plan order.
    pub bits: Vec<(Var, bool)>,
}

impl ExpansionIndex {
    fn new(plan: &SplitPlan, index: u64, values: Vec<u64>) -> Self {
        let bits = plan
            .quantifiers
            .iter()
            .zip(&values)
            .flat_map(|(q, &v)| q.quantifier.bitvector().assign(v).collect::<Vec<_>>())
            .collect();
        ExpansionIndex {
            index,
            values,
            bits,
        }
    }

    pub fn assignment(&self) -> Assignment {
        self.bits.iter().copied().collect()
    }

    /// `var=bit` pairs joined by `;`, as stored in the manifest.
    pub fn manifest_entry(&self) -> String {
        self.bits
            .iter()
            .map(|&(v, b)| format!("{v}={}", b as u8))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Existential variables fixed by a unit clause. Their position in the prefix
/// does not matter, so they never block expansion of later quantifiers.
fn fixed_existentials(formula: &Formula, closed: &[QuantifierBlock]) -> HashSet<Var> {
    let units: HashSet<Var> = formula
        .matrix()
        .clauses()
        .iter()
        .filter(|c| c.len() == 1)
        .map(|c| c.literals()[0].var())
        .collect();
    closed
        .iter()
        .filter(|b| b.kind() == QuantifierKind::Exists)
        .flat_map(|b| b.variables().iter().copied())
        .filter(|v| units.contains(v))
        .collect()
}

/// Alternation run of each block. Blocks made only of fixed existentials do
/// not start a new run.
fn block_runs(closed: &[QuantifierBlock], fixed: &HashSet<Var>) -> Vec<usize> {
    let mut runs = Vec::with_capacity(closed.len());
    let mut run = 0usize;
    let mut kind: Option<QuantifierKind> = None;
    for b in closed {
        let transparent =
            b.kind() == QuantifierKind::Exists && b.variables().iter().all(|v| fixed.contains(v));
        if !transparent {
            match kind {
                Some(k) if k != b.kind() => run += 1,
                _ => {}
            }
            kind = Some(b.kind());
        }
        runs.push(run);
    }
    runs
}

/// Annotation indices in expansion order: decreasing efficiency, stable,
/// within each maximal run of same-kind quantifiers.
pub fn expansion_order(formula: &Formula) -> Vec<usize> {
    let closed = formula.closed_prefix();
    let fixed = fixed_existentials(formula, &closed);
    let runs = block_runs(&closed, &fixed);
    let run_of = |aq: &AnnotatedQuantifier| {
        let v = aq.bitvector().variables()[0];
        closed
            .iter()
            .position(|b| b.variables().contains(&v))
            .map(|b| runs[b])
            .unwrap_or(0)
    };
    let mut order: Vec<usize> = (0..formula.annotations().len()).collect();
    let annotations = formula.annotations();
    let mut start = 0;
    while start < order.len() {
        let run = run_of(&annotations[order[start]]);
        let mut end = start + 1;
        while end < order.len() && run_of(&annotations[order[end]]) == run {
            end += 1;
        }
        order[start..end].sort_by(|&a, &b| {
            annotations[b]
                .efficiency()
                .cmp(&annotations[a].efficiency())
        });
        start = end;
    }
    order
}

/// Chooses the quantifiers to expand under depth budget `depth`.
pub fn plan(formula: &Formula, depth: usize, mode: SplitMode) -> Result<SplitPlan, SplitError> {
    if depth == 0 || depth > MAX_WIDTH {
        return Err(SplitError::InvalidDepth(depth));
    }
    let closed = formula.closed_prefix();
    let fixed = fixed_existentials(formula, &closed);

    let quantifiers = match mode {
        SplitMode::Plain => closed
            .iter()
            .flat_map(|b| b.variables().iter().map(move |&v| (b.kind(), v)))
            .filter(|(_, v)| !fixed.contains(v))
            .take(depth)
            .map(|(kind, v)| PlannedQuantifier {
                quantifier: AnnotatedQuantifier::top(
                    kind,
                    BitVector::new(vec![v]).expect("single variable"),
                ),
                annotation: None,
            })
            .collect::<Vec<_>>(),
        SplitMode::IntSplit => {
            if formula.annotations().is_empty() {
                return Err(SplitError::EmptyPlan(
                    "formula has no int-split annotations".into(),
                ));
            }
            let runs = block_runs(&closed, &fixed);
            let block_of = |v: Var| closed.iter().position(|b| b.variables().contains(&v));
            let mut selected: HashSet<Var> = HashSet::new();
            let mut width = 0usize;
            let mut out = Vec::new();
            for idx in expansion_order(formula) {
                let aq = &formula.annotations()[idx];
                if width + aq.width() > depth {
                    break;
                }
                let run = block_of(aq.bitvector().variables()[0])
                    .map(|b| runs[b])
                    .unwrap_or(0);
                // Everything quantified before this run must already be expanded.
                let blocked = closed.iter().zip(&runs).any(|(b, &r)| {
                    r < run
                        && b.variables()
                            .iter()
                            .any(|v| !fixed.contains(v) && !selected.contains(v))
                });
                if blocked {
                    break;
                }
                width += aq.width();
                selected.extend(aq.bitvector().variables().iter().copied());
                out.push(PlannedQuantifier {
                    quantifier: aq.clone(),
                    annotation: Some(idx),
                });
            }
            if out.is_empty() {
                return Err(SplitError::EmptyPlan(format!(
                    "no annotated quantifier fits into depth {depth}"
                )));
            }
            out
        }
    };

    let effective_depth = quantifiers.iter().map(|q| q.quantifier.width()).sum();
    Ok(SplitPlan {
        mode,
        requested_depth: depth,
        effective_depth,
        quantifiers,
    })
}

/// Accounted expansions of a plan in lexicographic order.
#[derive(Debug, Clone)]
pub struct Expansions<'a> {
    plan: &'a SplitPlan,
    // (range index, value) per quantifier
    digits: Vec<(usize, u64)>,
    next: u64,
    done: bool,
}

impl Iterator for Expansions<'_> {
    type Item = ExpansionIndex;

    fn next(&mut self) -> Option<ExpansionIndex> {
        if self.done {
            return None;
        }
        let values = self.digits.iter().map(|&(_, v)| v).collect();
        let item = ExpansionIndex::new(self.plan, self.next, values);
        self.next += 1;

        // odometer step, last quantifier fastest
        let mut i = self.digits.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            let ranges = self.plan.quantifiers[i].quantifier.accounted_ranges();
            let (ri, v) = self.digits[i];
            if v + 1 < ranges[ri].end {
                self.digits[i] = (ri, v + 1);
                break;
            }
            if ri + 1 < ranges.len() {
                self.digits[i] = (ri + 1, ranges[ri + 1].start);
                break;
            }
            self.digits[i] = (0, ranges[0].start);
        }
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.done {
            return (0, Some(0));
        }
        let left = self.plan.count_subproblems() - self.next;
        (left as usize, Some(left as usize))
    }
}

pub fn enumerate_accounted(plan: &SplitPlan) -> Expansions<'_> {
    Expansions {
        plan,
        digits: plan
            .quantifiers
            .iter()
            .map(|q| (0, q.quantifier.accounted_ranges()[0].start))
            .collect(),
        next: 0,
        done: false,
    }
}

fn merge_adjacent(blocks: Vec<(QuantifierKind, Vec<Var>)>) -> Vec<(QuantifierKind, Vec<Var>)> {
    let mut out: Vec<(QuantifierKind, Vec<Var>)> = Vec::new();
    for (kind, vars) in blocks {
        if vars.is_empty() {
            continue;
        }
        match out.last_mut() {
            Some((k, vs)) if *k == kind => vs.extend(vars),
            _ => out.push((kind, vars)),
        }
    }
    out
}

/// The copy of `formula` for one expansion: the assignment is appended as unit
/// clauses, expanded universals become existential, and annotations of
/// expanded quantifiers are dropped.
pub fn build_subproblem(
    formula: &Formula,
    plan: &SplitPlan,
    expansion: &ExpansionIndex,
) -> Result<Formula, SplitError> {
    if expansion.bits.len() != plan.effective_depth() {
        return Err(SplitError::ForeignExpansion {
            index: expansion.index,
        });
    }
    if plan.is_empty() {
        return Ok(formula.clone());
    }

    let mut clauses: Vec<Clause> = formula.matrix().clauses().to_vec();
    for &(v, b) in &expansion.bits {
        clauses.push(Clause::unit(Literal::new(v, !b)?));
    }
    let matrix = Matrix::new(formula.variable_count(), clauses)?;

    let prefix = if formula.prefix().is_empty() {
        Vec::new()
    } else {
        let assigned: HashSet<Var> = expansion.bits.iter().map(|&(v, _)| v).collect();
        let mut flipped = Vec::new();
        let mut rest = Vec::new();
        for b in formula.prefix() {
            let mut kept = Vec::new();
            for &v in b.variables() {
                if b.kind() == QuantifierKind::Forall && assigned.contains(&v) {
                    flipped.push(v);
                } else {
                    kept.push(v);
                }
            }
            rest.push((b.kind(), kept));
        }
        let mut blocks = vec![(QuantifierKind::Exists, flipped)];
        blocks.extend(rest);
        merge_adjacent(blocks)
            .into_iter()
            .map(|(k, vs)| QuantifierBlock::new(k, vs))
            .collect::<Result<Vec<_>, _>>()?
    };

    let annotations = match plan.mode() {
        SplitMode::Plain => Vec::new(),
        SplitMode::IntSplit => {
            let expanded: HashSet<usize> = plan
                .quantifiers()
                .iter()
                .filter_map(|q| q.annotation)
                .collect();
            formula
                .annotations()
                .iter()
                .enumerate()
                .filter(|(i, _)| !expanded.contains(i))
                .map(|(_, a)| a.clone())
                .collect()
        }
    };

    Ok(Formula::new(matrix, prefix, annotations)?)
}

/// File name of sub-problem `index`: zero-padded index, a dash, the original name.
pub fn subproblem_file_name(plan: &SplitPlan, index: u64, original_name: &str) -> String {
    format!(
        "{index:0width$}-{original_name}",
        width = plan.index_width()
    )
}

pub fn emit_subproblem(
    formula: &Formula,
    plan: &SplitPlan,
    expansion: &ExpansionIndex,
    original_name: &str,
    out_dir: &Path,
    force: bool,
) -> Result<PathBuf, SplitError> {
    let copy = build_subproblem(formula, plan, expansion)?;
    let path = out_dir.join(subproblem_file_name(plan, expansion.index, original_name));
    write_new(&path, qdimacs::write(&copy).as_bytes(), force)?;
    Ok(path)
}

fn write_new(path: &Path, contents: &[u8], force: bool) -> Result<(), SplitError> {
    let mut opts = OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    let mut file = opts.open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::AlreadyExists {
            SplitError::AlreadyExists(path.to_path_buf())
        } else {
            SplitError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    file.write_all(contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSummary {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Writes every accounted sub-problem of `plan` plus the manifest into `out_dir`.
pub fn split_to_directory(
    formula: &Formula,
    plan: &SplitPlan,
    original_name: &str,
    out_dir: &Path,
    force: bool,
) -> Result<SplitSummary, SplitError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut manifest = String::from("index,assignment\n");
    let mut files = Vec::with_capacity(plan.count_subproblems() as usize);
    for e in enumerate_accounted(plan) {
        files.push(emit_subproblem(
            formula,
            plan,
            &e,
            original_name,
            out_dir,
            force,
        )?);
        manifest.push_str(&format!("{},{}\n", e.index, e.manifest_entry()));
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    write_new(&manifest_path, manifest.as_bytes(), force)?;
    Ok(SplitSummary {
        files,
        manifest: manifest_path,
    })
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: u64,
    pub bits: Vec<(Var, bool)>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, SplitError> {
    let bad = |reason: String| SplitError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut entries = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let index: u64 = record
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("row {}: bad index", n + 2)))?;
        let mut bits = Vec::new();
        for pair in record
            .get(1)
            .unwrap_or("")
            .split(';')
            .filter(|p| !p.is_empty())
        {
            let (v, b) = pair
                .split_once('=')
                .ok_or_else(|| bad(format!("row {}: bad pair `{pair}`", n + 2)))?;
            let v: Var = v
                .parse()
                .map_err(|_| bad(format!("row {}: bad variable `{v}`", n + 2)))?;
            let b = match b {
                "0" => false,
                "1" => true,
                _ => return Err(bad(format!("row {}: bad bit `{b}`", n + 2))),
            };
            bits.push((v, b));
        }
        entries.push(ManifestEntry { index, bits });
    }
    Ok(entries)
}

/// Checks that a manifest lists exactly the expansions of `plan`, in order.
pub fn verify_manifest(plan: &SplitPlan, entries: &[ManifestEntry]) -> Result<(), String> {
    let expected = plan.count_subproblems();
    if entries.len() as u64 != expected {
        return Err(format!(
            "manifest has {} rows but the plan has {expected} sub-problems",
            entries.len()
        ));
    }
    for (entry, e) in entries.iter().zip(enumerate_accounted(plan)) {
        if entry.index != e.index || entry.bits != e.bits {
            return Err(format!(
                "manifest row for index {} does not match the plan",
                entry.index
            ));
        }
    }
    Ok(())
}
