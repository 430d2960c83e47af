//! In-memory model of prenex CNF QBFs carrying int-split annotations.
//!
//! A bit-vector is read most-significant bit first: the first variable of a
//! [`BitVector`] contributes `2^(n-1)` to its integer value.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use num_rational::Ratio;
use thiserror::Error;

/// Boolean variable id. Valid ids are `1..=MAX_VARIABLE`.
pub type Var = u32;

/// Largest variable id representable in (Q)DIMACS (32-bit signed, positive).
pub const MAX_VARIABLE: Var = i32::MAX as Var;

/// Largest supported bit-vector width; keeps `2^width` inside a `u64`.
pub const MAX_WIDTH: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("empty bit-vector")]
    EmptyBitVector,
    #[error("bit-vector of width {0} exceeds the supported maximum of {MAX_WIDTH}")]
    WidthTooLarge(usize),
    #[error("bit-vector has width {found}, expected {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("pattern of length {found} on a bit-vector of width {expected}")]
    PatternWidthMismatch { expected: usize, found: usize },
    #[error("annotated quantifier has no constraints")]
    EmptyConstraintList,
    #[error("constraint constant must be positive")]
    ZeroConstant,
    #[error("annotated quantifier over {0} has no accounted expansion (s = 0)")]
    NoAccountedExpansion(BitVector),
    #[error("invalid variable id {0}")]
    InvalidVariable(i64),
    #[error("variable {var} exceeds the declared variable count {variable_count}")]
    UnknownVariable { var: Var, variable_count: u32 },
    #[error("variable {0} occurs more than once in the prefix")]
    DuplicateVariable(Var),
    #[error("variable {0} occurs in two bit-vectors")]
    SharedBitVectorVariable(Var),
    #[error("empty quantifier block")]
    EmptyBlock,
    #[error("{0}")]
    BlockMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    var: Var,
    negated: bool,
}

impl Literal {
    pub fn new(var: Var, negated: bool) -> Result<Self, FormulaError> {
        if var == 0 || var > MAX_VARIABLE {
            return Err(FormulaError::InvalidVariable(var as i64));
        }
        Ok(Literal { var, negated })
    }

    pub fn positive(var: Var) -> Result<Self, FormulaError> {
        Literal::new(var, false)
    }

    pub fn negative(var: Var) -> Result<Self, FormulaError> {
        Literal::new(var, true)
    }

    /// Builds a literal from its signed DIMACS spelling.
    pub fn from_dimacs(lit: i64) -> Result<Self, FormulaError> {
        if lit == 0 || lit.unsigned_abs() > MAX_VARIABLE as u64 {
            return Err(FormulaError::InvalidVariable(lit));
        }
        Ok(Literal {
            var: lit.unsigned_abs() as Var,
            negated: lit < 0,
        })
    }

    pub fn to_dimacs(self) -> i64 {
        if self.negated {
            -(self.var as i64)
        } else {
            self.var as i64
        }
    }

    pub fn var(self) -> Var {
        self.var
    }

    pub fn is_negated(self) -> bool {
        self.negated
    }

    pub fn negate(self) -> Self {
        Literal {
            var: self.var,
            negated: !self.negated,
        }
    }

    /// Truth value of the literal under `value` for its variable.
    pub fn eval(self, value: bool) -> bool {
        value != self.negated
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

/// A disjunction of literals. Repeated literals are collapsed on construction,
/// tautologies are kept as written.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    pub fn new(literals: impl IntoIterator<Item = Literal>) -> Self {
        let mut out: Vec<Literal> = Vec::new();
        for lit in literals {
            if !out.contains(&lit) {
                out.push(lit);
            }
        }
        Clause { literals: out }
    }

    pub fn unit(lit: Literal) -> Self {
        Clause {
            literals: vec![lit],
        }
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn is_tautology(&self) -> bool {
        self.literals
            .iter()
            .any(|l| self.literals.contains(&l.negate()))
    }
}

impl FromIterator<Literal> for Clause {
    fn from_iter<T: IntoIterator<Item = Literal>>(iter: T) -> Self {
        Clause::new(iter)
    }
}

/// Partial map from variables to truth values.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment(BTreeMap<Var, bool>);

impl Assignment {
    pub fn new() -> Self {
        Assignment::default()
    }

    pub fn insert(&mut self, var: Var, value: bool) -> Option<bool> {
        self.0.insert(var, value)
    }

    pub fn get(&self, var: Var) -> Option<bool> {
        self.0.get(&var).copied()
    }

    pub fn contains(&self, var: Var) -> bool {
        self.0.contains_key(&var)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, bool)> + '_ {
        self.0.iter().map(|(&v, &b)| (v, b))
    }

    /// Value of `lit` under this assignment, `None` if its variable is unassigned.
    pub fn value_of(&self, lit: Literal) -> Option<bool> {
        self.get(lit.var()).map(|v| lit.eval(v))
    }
}

impl FromIterator<(Var, bool)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (Var, bool)>>(iter: T) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    clauses: Vec<Clause>,
    variable_count: u32,
}

impl Matrix {
    pub fn new(variable_count: u32, clauses: Vec<Clause>) -> Result<Self, FormulaError> {
        for clause in &clauses {
            for lit in clause.literals() {
                if lit.var() > variable_count {
                    return Err(FormulaError::UnknownVariable {
                        var: lit.var(),
                        variable_count,
                    });
                }
            }
        }
        Ok(Matrix {
            clauses,
            variable_count,
        })
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn variable_count(&self) -> u32 {
        self.variable_count
    }

    pub fn has_empty_clause(&self) -> bool {
        self.clauses.iter().any(Clause::is_empty)
    }

    /// Variables occurring in some clause, ascending.
    pub fn occurring_variables(&self) -> BTreeSet<Var> {
        self.clauses
            .iter()
            .flat_map(|c| c.literals().iter().map(|l| l.var()))
            .collect()
    }

    /// Drops clauses satisfied by `sigma` and deletes falsified literals from
    /// the rest. A clause losing all literals stays as an empty clause.
    pub fn apply_assignment(&self, sigma: &Assignment) -> Matrix {
        let clauses = self
            .clauses
            .iter()
            .filter(|c| {
                !c.literals()
                    .iter()
                    .any(|&l| sigma.value_of(l) == Some(true))
            })
            .map(|c| Clause {
                literals: c
                    .literals()
                    .iter()
                    .copied()
                    .filter(|&l| sigma.value_of(l).is_none())
                    .collect(),
            })
            .collect();
        Matrix {
            clauses,
            variable_count: self.variable_count,
        }
    }

    /// Whether a total assignment over the matrix variables satisfies every clause.
    pub fn is_satisfied_by(&self, sigma: &Assignment) -> bool {
        self.clauses.iter().all(|c| {
            c.literals()
                .iter()
                .any(|&l| sigma.value_of(l) == Some(true))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantifierKind {
    Exists,
    Forall,
}

impl QuantifierKind {
    /// The QDIMACS prefix letter.
    pub fn letter(self) -> char {
        match self {
            QuantifierKind::Exists => 'e',
            QuantifierKind::Forall => 'a',
        }
    }
}

impl fmt::Display for QuantifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantifierKind::Exists => "exists",
            QuantifierKind::Forall => "forall",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantifierBlock {
    kind: QuantifierKind,
    variables: Vec<Var>,
}

impl QuantifierBlock {
    pub fn new(kind: QuantifierKind, variables: Vec<Var>) -> Result<Self, FormulaError> {
        if variables.is_empty() {
            return Err(FormulaError::EmptyBlock);
        }
        let mut seen = HashSet::new();
        for &v in &variables {
            if v == 0 || v > MAX_VARIABLE {
                return Err(FormulaError::InvalidVariable(v as i64));
            }
            if !seen.insert(v) {
                return Err(FormulaError::DuplicateVariable(v));
            }
        }
        Ok(QuantifierBlock { kind, variables })
    }

    pub fn kind(&self) -> QuantifierKind {
        self.kind
    }

    pub fn variables(&self) -> &[Var] {
        &self.variables
    }
}

/// Ordered Boolean variables forming an unsigned integer, MSB first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<Var>);

impl BitVector {
    pub fn new(variables: Vec<Var>) -> Result<Self, FormulaError> {
        if variables.is_empty() {
            return Err(FormulaError::EmptyBitVector);
        }
        if variables.len() > MAX_WIDTH {
            return Err(FormulaError::WidthTooLarge(variables.len()));
        }
        let mut seen = HashSet::new();
        for &v in &variables {
            if v == 0 || v > MAX_VARIABLE {
                return Err(FormulaError::InvalidVariable(v as i64));
            }
            if !seen.insert(v) {
                return Err(FormulaError::SharedBitVectorVariable(v));
            }
        }
        Ok(BitVector(variables))
    }

    pub fn variables(&self) -> &[Var] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    /// The bits of this vector under `sigma`, or `None` if any is unassigned.
    pub fn read(&self, sigma: &Assignment) -> Option<Vec<bool>> {
        self.0.iter().map(|&v| sigma.get(v)).collect()
    }

    /// Pairs each variable with its bit of `value`, MSB first.
    pub fn assign(&self, value: u64) -> impl Iterator<Item = (Var, bool)> + '_ {
        let width = self.width();
        self.0
            .iter()
            .enumerate()
            .map(move |(i, &v)| (v, (value >> (width - 1 - i)) & 1 == 1))
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

/// Integer value of a bit-vector read MSB first.
pub fn integer_value(bits: &[bool]) -> Result<u64, FormulaError> {
    if bits.is_empty() {
        return Err(FormulaError::EmptyBitVector);
    }
    if bits.len() > 64 {
        return Err(FormulaError::WidthTooLarge(bits.len()));
    }
    Ok(bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64))
}

/// Inverse of [`integer_value`] for a fixed width.
pub fn to_bits(value: u64, width: usize) -> Vec<bool> {
    (0..width).rev().map(|i| (value >> i) & 1 == 1).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Constraint {
    Less(u64),
    Greater(u64),
    InSet(BTreeSet<Vec<bool>>),
    Top,
}

impl Constraint {
    fn is_satisfied(&self, value: u64, bits: &[bool]) -> bool {
        match self {
            Constraint::Less(v) => value < *v,
            Constraint::Greater(v) => value > *v,
            Constraint::InSet(patterns) => patterns.contains(bits),
            Constraint::Top => true,
        }
    }

    /// Accounted values of this constraint as half-open ranges within `[0, 2^width)`.
    #[allow(clippy::single_range_in_vec_init)]
    fn ranges(&self, width: usize) -> Vec<Range<u64>> {
        let full = 1u64 << width;
        match self {
            Constraint::Less(v) => vec![0..(*v).min(full)],
            Constraint::Greater(v) => {
                if v.saturating_add(1) < full {
                    vec![v + 1..full]
                } else {
                    Vec::new()
                }
            }
            Constraint::InSet(patterns) => patterns
                .iter()
                .map(|p| {
                    let x = integer_value(p).unwrap_or(0);
                    x..x + 1
                })
                .collect(),
            Constraint::Top => vec![0..full],
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Less(v) => write!(f, "<{v}"),
            Constraint::Greater(v) => write!(f, ">{v}"),
            Constraint::InSet(patterns) => {
                f.write_str("={")?;
                for (i, p) in patterns.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    for &b in p {
                        f.write_str(if b { "1" } else { "0" })?;
                    }
                }
                f.write_str("}")
            }
            Constraint::Top => f.write_str("T"),
        }
    }
}

/// A quantifier over a bit-vector restricted by a list of constraints.
///
/// An assignment to the bit-vector is an accounted expansion when at least one
/// constraint holds. `s` counts those, `u = 2^width - s` the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedQuantifier {
    kind: QuantifierKind,
    bitvector: BitVector,
    constraints: Vec<Constraint>,
    accounted: Vec<Range<u64>>,
    s: u64,
}

impl AnnotatedQuantifier {
    pub fn new(
        kind: QuantifierKind,
        bitvector: BitVector,
        constraints: Vec<Constraint>,
    ) -> Result<Self, FormulaError> {
        if constraints.is_empty() {
            return Err(FormulaError::EmptyConstraintList);
        }
        let width = bitvector.width();
        for c in &constraints {
            match c {
                Constraint::Less(0) | Constraint::Greater(0) => {
                    return Err(FormulaError::ZeroConstant)
                }
                Constraint::InSet(patterns) => {
                    if let Some(p) = patterns.iter().find(|p| p.len() != width) {
                        return Err(FormulaError::PatternWidthMismatch {
                            expected: width,
                            found: p.len(),
                        });
                    }
                }
                _ => {}
            }
        }
        let accounted = union_ranges(constraints.iter().flat_map(|c| c.ranges(width)));
        let s = accounted.iter().map(|r| r.end - r.start).sum();
        if s == 0 {
            return Err(FormulaError::NoAccountedExpansion(bitvector));
        }
        Ok(AnnotatedQuantifier {
            kind,
            bitvector,
            constraints,
            accounted,
            s,
        })
    }

    /// Unrestricted quantifier over `bitvector`.
    pub fn top(kind: QuantifierKind, bitvector: BitVector) -> Self {
        AnnotatedQuantifier::new(kind, bitvector, vec![Constraint::Top])
            .expect("top constraint always has accounted expansions")
    }

    pub fn kind(&self) -> QuantifierKind {
        self.kind
    }

    pub fn bitvector(&self) -> &BitVector {
        &self.bitvector
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn width(&self) -> usize {
        self.bitvector.width()
    }

    /// Number of accounted expansions.
    pub fn s(&self) -> u64 {
        self.s
    }

    /// Number of unaccounted expansions.
    pub fn u(&self) -> u64 {
        (1u64 << self.width()) - self.s
    }

    pub fn ae_count(&self) -> (u64, u64) {
        (self.s(), self.u())
    }

    /// Int-split efficiency `u / s`, exact.
    pub fn efficiency(&self) -> Ratio<u64> {
        Ratio::new(self.u(), self.s())
    }

    pub fn is_unrestricted(&self) -> bool {
        self.u() == 0
    }

    pub fn constraint_satisfied(&self, bits: &[bool]) -> Result<bool, FormulaError> {
        if bits.len() != self.width() {
            return Err(FormulaError::WidthMismatch {
                expected: self.width(),
                found: bits.len(),
            });
        }
        let value = integer_value(bits)?;
        Ok(self.constraints.iter().any(|c| c.is_satisfied(value, bits)))
    }

    pub fn accounts_value(&self, value: u64) -> bool {
        self.accounted.iter().any(|r| r.contains(&value))
    }

    /// Sorted, disjoint ranges of accounted integer values.
    pub fn accounted_ranges(&self) -> &[Range<u64>] {
        &self.accounted
    }

    /// Accounted integer values in ascending order.
    pub fn accounted_values(&self) -> impl Iterator<Item = u64> + '_ {
        self.accounted.iter().flat_map(|r| r.clone())
    }

    /// Same bit-vector with every constraint replaced by `T`.
    pub fn relaxed(&self) -> Self {
        AnnotatedQuantifier::top(self.kind, self.bitvector.clone())
    }
}

fn union_ranges(ranges: impl Iterator<Item = Range<u64>>) -> Vec<Range<u64>> {
    let mut ranges: Vec<Range<u64>> = ranges.filter(|r| r.start < r.end).collect();
    ranges.sort_by_key(|r| r.start);
    let mut out: Vec<Range<u64>> = Vec::with_capacity(ranges.len());
    for r in ranges {
        match out.last_mut() {
            Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
            _ => out.push(r),
        }
    }
    out
}

/// A PCNF QBF with int-split annotations.
///
/// Variables that occur in the matrix or in annotations but not in the prefix
/// are free; they are bound existentially in front of the prefix, which is also
/// how plain DIMACS inputs are read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    matrix: Matrix,
    prefix: Vec<QuantifierBlock>,
    annotations: Vec<AnnotatedQuantifier>,
}

impl Formula {
    pub fn new(
        matrix: Matrix,
        prefix: Vec<QuantifierBlock>,
        annotations: Vec<AnnotatedQuantifier>,
    ) -> Result<Self, FormulaError> {
        let variable_count = matrix.variable_count();
        let mut block_of: HashMap<Var, usize> = HashMap::new();
        for (i, block) in prefix.iter().enumerate() {
            for &v in block.variables() {
                if v > variable_count {
                    return Err(FormulaError::UnknownVariable {
                        var: v,
                        variable_count,
                    });
                }
                if block_of.insert(v, i).is_some() {
                    return Err(FormulaError::DuplicateVariable(v));
                }
            }
        }

        let mut used: HashSet<Var> = HashSet::new();
        let mut last_block = 0usize;
        for aq in &annotations {
            let vars = aq.bitvector().variables();
            for &v in vars {
                if v > variable_count {
                    return Err(FormulaError::UnknownVariable {
                        var: v,
                        variable_count,
                    });
                }
                if !used.insert(v) {
                    return Err(FormulaError::SharedBitVectorVariable(v));
                }
            }
            if prefix.is_empty() {
                if aq.kind() != QuantifierKind::Exists {
                    return Err(FormulaError::BlockMismatch(format!(
                        "universal annotation over {} without a prefix",
                        aq.bitvector()
                    )));
                }
                continue;
            }
            let block = match block_of.get(&vars[0]) {
                Some(&b) => b,
                None => {
                    return Err(FormulaError::BlockMismatch(format!(
                        "variable {} of {} is not in the prefix",
                        vars[0],
                        aq.bitvector()
                    )))
                }
            };
            if let Some(&v) = vars.iter().find(|v| block_of.get(v) != Some(&block)) {
                return Err(FormulaError::BlockMismatch(format!(
                    "bit-vector {} leaves its quantifier block at variable {v}",
                    aq.bitvector()
                )));
            }
            if prefix[block].kind() != aq.kind() {
                return Err(FormulaError::BlockMismatch(format!(
                    "annotation over {} is {} but its block is {}",
                    aq.bitvector(),
                    aq.kind(),
                    prefix[block].kind()
                )));
            }
            if block < last_block {
                return Err(FormulaError::BlockMismatch(format!(
                    "annotation over {} is out of prefix order",
                    aq.bitvector()
                )));
            }
            last_block = block;
        }

        Ok(Formula {
            matrix,
            prefix,
            annotations,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn prefix(&self) -> &[QuantifierBlock] {
        &self.prefix
    }

    pub fn annotations(&self) -> &[AnnotatedQuantifier] {
        &self.annotations
    }

    pub fn variable_count(&self) -> u32 {
        self.matrix.variable_count()
    }

    /// Variables used by the matrix or annotations that the prefix does not bind.
    pub fn free_variables(&self) -> Vec<Var> {
        let bound: HashSet<Var> = self
            .prefix
            .iter()
            .flat_map(|b| b.variables().iter().copied())
            .collect();
        let mut free = self.matrix.occurring_variables();
        for aq in &self.annotations {
            free.extend(aq.bitvector().variables().iter().copied());
        }
        free.into_iter().filter(|v| !bound.contains(v)).collect()
    }

    /// The prefix with free variables bound by a leading existential block.
    pub fn closed_prefix(&self) -> Vec<QuantifierBlock> {
        let free = self.free_variables();
        if free.is_empty() {
            return self.prefix.clone();
        }
        let mut out = Vec::with_capacity(self.prefix.len() + 1);
        match self.prefix.first() {
            Some(first) if first.kind() == QuantifierKind::Exists => {
                let mut vars = free;
                vars.extend_from_slice(first.variables());
                out.push(QuantifierBlock {
                    kind: QuantifierKind::Exists,
                    variables: vars,
                });
                out.extend(self.prefix[1..].iter().cloned());
            }
            _ => {
                out.push(QuantifierBlock {
                    kind: QuantifierKind::Exists,
                    variables: free,
                });
                out.extend(self.prefix.iter().cloned());
            }
        }
        out
    }

    pub fn quantified_variable_count(&self) -> usize {
        self.closed_prefix()
            .iter()
            .map(|b| b.variables().len())
            .sum()
    }

    /// The same formula with every int-split constraint replaced by `T`.
    pub fn relaxed(&self) -> Formula {
        Formula {
            matrix: self.matrix.clone(),
            prefix: self.prefix.clone(),
            annotations: self.annotations.iter().map(|a| a.relaxed()).collect(),
        }
    }

    pub fn without_annotations(&self) -> Formula {
        Formula {
            matrix: self.matrix.clone(),
            prefix: self.prefix.clone(),
            annotations: Vec::new(),
        }
    }
}
