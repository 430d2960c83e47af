//! (Q)DIMACS with int-split annotations carried in comment lines.
//!
//! ```text
//! c any comment
//! cs int [1 2 3 4 5] <19
//! cs int ={101 111};<2
//! p cnf 8 2
//! e 1 2 3 4 5 0
//! a 6 7 8 0
//! 1 -6 0
//! -2 7 8 0
//! ```
//!
//! A `cs` line annotates one bit-vector. The `[vars]` part may be omitted when
//! the width follows from the constraints alone; the vector then takes the
//! next unannotated variables of the current prefix block. Constraints are
//! separated by `;` and an expansion is accounted when any of them holds. `T`
//! spells the unrestricted constraint.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::formula::{
    AnnotatedQuantifier, BitVector, Clause, Constraint, Formula, FormulaError, Literal, Matrix,
    QuantifierBlock, QuantifierKind, Var, MAX_VARIABLE, MAX_WIDTH,
};

/// Longest bit pattern accepted inside `={...}`.
pub const MAX_PATTERN_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown variable {var} (declared variable count {variable_count})")]
    UnknownVariable { var: Var, variable_count: u32 },
    #[error("block mismatch: {0}")]
    BlockMismatch(String),
    #[error("ambiguous implicit bit-vector: {0}")]
    AmbiguousImplicit(String),
    #[error("bit pattern of length {found} on a bit-vector of width {expected}")]
    PatternWidthMismatch { expected: usize, found: usize },
    #[error("DIMACS mode violation: {0}")]
    DimacsModeViolation(String),
    #[error("malformed int-split annotation: {0}")]
    MalformedAnnotation(String),
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("comment after the problem line (strict mode)")]
    CommentAfterHeader,
    #[error("free variable {0} (strict mode requires a closed prefix)")]
    FreeVariable(Var),
    #[error("input is not ASCII text")]
    NotAscii,
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(FormulaError),
}

impl From<FormulaError> for ParseErrorKind {
    fn from(e: FormulaError) -> Self {
        match e {
            FormulaError::UnknownVariable {
                var,
                variable_count,
            } => ParseErrorKind::UnknownVariable {
                var,
                variable_count,
            },
            FormulaError::PatternWidthMismatch { expected, found } => {
                ParseErrorKind::PatternWidthMismatch { expected, found }
            }
            FormulaError::BlockMismatch(msg) => ParseErrorKind::BlockMismatch(msg),
            FormulaError::SharedBitVectorVariable(v) => {
                ParseErrorKind::BlockMismatch(format!("variable {v} occurs in two bit-vectors"))
            }
            other => ParseErrorKind::InvalidAnnotation(other),
        }
    }
}

/// A parse failure together with the 1-based line it was detected on
/// (0 when it concerns the whole input).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(line: usize, kind: impl Into<ParseErrorKind>) -> Self {
        ParseError {
            line,
            kind: kind.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject comments after the problem line and free variables.
    pub strict: bool,
}

/// One `cs int ...` line as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitLine {
    pub line: usize,
    pub vars: Option<Vec<Var>>,
    pub constraints: Vec<Constraint>,
}

/// The input as laid out in the file, before annotations are resolved
/// against the prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDocument {
    pub variable_count: u32,
    pub clause_count: usize,
    pub comments: Vec<String>,
    pub split_lines: Vec<SplitLine>,
    pub prefix: Vec<(usize, QuantifierBlock)>,
    pub clauses: Vec<Clause>,
}

pub fn parse(text: &str) -> Result<Formula, ParseError> {
    parse_with(text, ParseOptions::default())
}

pub fn parse_with(text: &str, options: ParseOptions) -> Result<Formula, ParseError> {
    parse_document(text, options)?.into_formula(options)
}

pub fn parse_bytes(bytes: &[u8], options: ParseOptions) -> Result<Formula, ParseError> {
    if !bytes.is_ascii() {
        return Err(ParseError::new(0, ParseErrorKind::NotAscii));
    }
    // ASCII is valid UTF-8.
    parse_with(std::str::from_utf8(bytes).unwrap(), options)
}

pub fn read_file(path: &Path, options: ParseOptions) -> Result<Formula, ReadError> {
    let bytes = std::fs::read(path).map_err(|source| ReadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bytes(&bytes, options).map_err(|source| ReadError::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn parse_pnum(tok: &str, line: usize) -> Result<Var, ParseError> {
    match tok.parse::<i64>() {
        Ok(v) if v >= 1 && v <= MAX_VARIABLE as i64 => Ok(v as Var),
        _ => Err(ParseError::new(
            line,
            ParseErrorKind::MalformedLine(format!(
                "expected a positive 32-bit integer, got `{tok}`"
            )),
        )),
    }
}

pub fn parse_document(text: &str, options: ParseOptions) -> Result<SourceDocument, ParseError> {
    let mut comments = Vec::new();
    let mut split_lines = Vec::new();
    let mut header: Option<(u32, usize)> = None;
    let mut prefix: Vec<(usize, QuantifierBlock)> = Vec::new();
    let mut clauses: Vec<Clause> = Vec::new();
    let mut pending: Vec<Literal> = Vec::new();
    let mut pending_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let first = tokens.next().unwrap_or_default();

        let Some((variable_count, _)) = header else {
            match first {
                "cs" => split_lines.push(parse_split_line(line, line_no)?),
                _ if first.starts_with('c') => {
                    comments.push(line[1..].trim_start().to_string());
                }
                "p" => header = Some(parse_header(line, line_no)?),
                _ => {
                    return Err(ParseError::new(
                        line_no,
                        ParseErrorKind::MalformedHeader(format!(
                            "expected `p cnf <vars> <clauses>` before `{line}`"
                        )),
                    ))
                }
            }
            continue;
        };

        if first == "cs" {
            return Err(ParseError::new(
                line_no,
                ParseErrorKind::MalformedAnnotation(
                    "annotations must precede the problem line".into(),
                ),
            ));
        }
        if first.starts_with('c') {
            if options.strict {
                return Err(ParseError::new(line_no, ParseErrorKind::CommentAfterHeader));
            }
            continue;
        }
        if first == "%" && !options.strict {
            // SATLIB end marker
            break;
        }
        if first == "p" {
            return Err(ParseError::new(
                line_no,
                ParseErrorKind::MalformedHeader("second problem line".into()),
            ));
        }
        if first == "e" || first == "a" {
            if !clauses.is_empty() || !pending.is_empty() {
                return Err(ParseError::new(
                    line_no,
                    ParseErrorKind::MalformedLine(
                        "quantifier line after the matrix started".into(),
                    ),
                ));
            }
            let kind = if first == "e" {
                QuantifierKind::Exists
            } else {
                QuantifierKind::Forall
            };
            let rest: Vec<&str> = tokens.collect();
            if rest.last() != Some(&"0") {
                return Err(ParseError::new(
                    line_no,
                    ParseErrorKind::MalformedLine("quantifier line must end with 0".into()),
                ));
            }
            let mut vars = Vec::with_capacity(rest.len() - 1);
            for tok in &rest[..rest.len() - 1] {
                let v = parse_pnum(tok, line_no)?;
                if v > variable_count {
                    return Err(ParseError::new(
                        line_no,
                        ParseErrorKind::UnknownVariable {
                            var: v,
                            variable_count,
                        },
                    ));
                }
                vars.push(v);
            }
            let block = QuantifierBlock::new(kind, vars).map_err(|e| match e {
                FormulaError::EmptyBlock => ParseError::new(
                    line_no,
                    ParseErrorKind::MalformedLine("empty quantifier line".into()),
                ),
                FormulaError::DuplicateVariable(v) => ParseError::new(
                    line_no,
                    ParseErrorKind::BlockMismatch(format!("variable {v} quantified twice")),
                ),
                other => ParseError::new(line_no, other),
            })?;
            prefix.push((line_no, block));
            continue;
        }

        for tok in line.split_whitespace() {
            let lit: i64 = tok.parse().map_err(|_| {
                ParseError::new(
                    line_no,
                    ParseErrorKind::MalformedLine(format!("unexpected token `{tok}`")),
                )
            })?;
            if lit == 0 {
                clauses.push(Clause::new(pending.drain(..)));
                continue;
            }
            if pending.is_empty() {
                pending_line = line_no;
            }
            let l = Literal::from_dimacs(lit).map_err(|_| {
                ParseError::new(
                    line_no,
                    ParseErrorKind::MalformedLine(format!("literal `{tok}` out of range")),
                )
            })?;
            if l.var() > variable_count {
                return Err(ParseError::new(
                    line_no,
                    ParseErrorKind::UnknownVariable {
                        var: l.var(),
                        variable_count,
                    },
                ));
            }
            pending.push(l);
        }
    }

    let Some((variable_count, clause_count)) = header else {
        return Err(ParseError::new(
            0,
            ParseErrorKind::MalformedHeader("problem line missing".into()),
        ));
    };
    if !pending.is_empty() {
        return Err(ParseError::new(
            pending_line,
            ParseErrorKind::MalformedLine("clause not terminated by 0".into()),
        ));
    }
    if clauses.len() != clause_count {
        return Err(ParseError::new(
            0,
            ParseErrorKind::MalformedHeader(format!(
                "header declares {clause_count} clauses, found {}",
                clauses.len()
            )),
        ));
    }

    Ok(SourceDocument {
        variable_count,
        clause_count,
        comments,
        split_lines,
        prefix,
        clauses,
    })
}

fn parse_header(line: &str, line_no: usize) -> Result<(u32, usize), ParseError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let bad = |msg: String| ParseError::new(line_no, ParseErrorKind::MalformedHeader(msg));
    if toks.len() != 4 || toks[0] != "p" || toks[1] != "cnf" {
        return Err(bad(format!(
            "expected `p cnf <vars> <clauses>`, got `{line}`"
        )));
    }
    let vars: u32 = toks[2]
        .parse()
        .ok()
        .filter(|&v| v <= MAX_VARIABLE)
        .ok_or_else(|| bad(format!("bad variable count `{}`", toks[2])))?;
    let clauses: usize = toks[3]
        .parse()
        .ok()
        .filter(|&c| c <= i32::MAX as usize)
        .ok_or_else(|| bad(format!("bad clause count `{}`", toks[3])))?;
    Ok((vars, clauses))
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        &self.text[start..self.pos]
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }
}

fn parse_split_line(line: &str, line_no: usize) -> Result<SplitLine, ParseError> {
    let bad = |msg: String| ParseError::new(line_no, ParseErrorKind::MalformedAnnotation(msg));
    let body = line.strip_prefix("cs").unwrap_or(line);
    let mut cur = Cursor { text: body, pos: 0 };

    if cur.word() != "int" {
        return Err(bad("expected `int` after `cs`".into()));
    }

    let vars = if cur.eat('[') {
        let mut vars = Vec::new();
        loop {
            if cur.eat(']') {
                break;
            }
            let tok = cur.word();
            if tok.is_empty() {
                return Err(bad("unterminated variable list".into()));
            }
            vars.push(
                parse_pnum(tok, line_no)
                    .map_err(|_| bad(format!("`{tok}` is not a positive variable id")))?,
            );
        }
        if vars.is_empty() {
            return Err(bad("empty variable list".into()));
        }
        Some(vars)
    } else {
        None
    };

    let mut constraints = Vec::new();
    loop {
        cur.skip_ws();
        let constraint = match cur.peek() {
            Some('<') | Some('>') => {
                let less = cur.peek() == Some('<');
                cur.pos += 1;
                let tok = cur.word();
                let v = parse_pnum(tok, line_no)
                    .map_err(|_| bad(format!("`{tok}` is not a positive constant")))?
                    as u64;
                if less {
                    Constraint::Less(v)
                } else {
                    Constraint::Greater(v)
                }
            }
            Some('=') => {
                cur.pos += 1;
                if !cur.eat('{') {
                    return Err(bad("expected `{` after `=`".into()));
                }
                let mut patterns = BTreeSet::new();
                loop {
                    cur.skip_ws();
                    match cur.peek() {
                        Some('}') => {
                            cur.pos += 1;
                            break;
                        }
                        Some(',') | Some(';') => cur.pos += 1,
                        Some('0') | Some('1') => {
                            let start = cur.pos;
                            while matches!(cur.peek(), Some('0') | Some('1')) {
                                cur.pos += 1;
                            }
                            let pat = &body[start..cur.pos];
                            if pat.len() > MAX_PATTERN_LEN {
                                return Err(bad(format!(
                                    "bit pattern longer than {MAX_PATTERN_LEN} bits"
                                )));
                            }
                            patterns.insert(pat.chars().map(|c| c == '1').collect::<Vec<_>>());
                        }
                        other => {
                            return Err(bad(match other {
                                Some(c) => format!("unexpected `{c}` in bit pattern set"),
                                None => "unterminated bit pattern set".into(),
                            }))
                        }
                    }
                }
                if patterns.is_empty() {
                    return Err(bad("empty bit pattern set".into()));
                }
                Constraint::InSet(patterns)
            }
            Some('T') => {
                cur.pos += 1;
                Constraint::Top
            }
            Some(c) => return Err(bad(format!("unexpected `{c}`, expected <, >, = or T"))),
            None => return Err(bad("missing constraint".into())),
        };
        constraints.push(constraint);
        if cur.eat(';') {
            if cur.at_end() {
                break;
            }
            continue;
        }
        if cur.at_end() {
            break;
        }
        return Err(bad(format!(
            "unexpected trailing input `{}`",
            &body[cur.pos..]
        )));
    }

    Ok(SplitLine {
        line: line_no,
        vars,
        constraints,
    })
}

/// Tracks which prefix variables earlier annotations have claimed.
#[derive(Debug, Clone)]
pub struct PrefixCursor<'a> {
    blocks: &'a [QuantifierBlock],
    block: usize,
    consumed: HashSet<Var>,
}

impl<'a> PrefixCursor<'a> {
    pub fn new(blocks: &'a [QuantifierBlock]) -> Self {
        PrefixCursor {
            blocks,
            block: 0,
            consumed: HashSet::new(),
        }
    }

    /// Index and kind of the block the cursor currently points into.
    pub fn current(&self) -> Option<(usize, QuantifierKind)> {
        self.blocks.get(self.block).map(|b| (self.block, b.kind()))
    }

    /// Marks explicitly listed variables as claimed and moves the cursor to
    /// their block.
    pub fn claim(&mut self, vars: &[Var]) -> Result<QuantifierKind, ParseErrorKind> {
        let find = |v: Var| self.blocks.iter().position(|b| b.variables().contains(&v));
        let block = find(vars[0]).ok_or_else(|| {
            ParseErrorKind::BlockMismatch(format!("variable {} is not in the prefix", vars[0]))
        })?;
        if let Some(&v) = vars.iter().find(|&&v| find(v) != Some(block)) {
            return Err(ParseErrorKind::BlockMismatch(format!(
                "bit-vector leaves its quantifier block at variable {v}"
            )));
        }
        if block < self.block {
            return Err(ParseErrorKind::BlockMismatch(
                "annotation is out of prefix order".into(),
            ));
        }
        self.block = block;
        self.consumed.extend(vars.iter().copied());
        Ok(self.blocks[block].kind())
    }

    /// Takes the next `width` unclaimed variables of the current block,
    /// skipping blocks that are already fully claimed.
    pub fn take(&mut self, width: usize) -> Result<(QuantifierKind, Vec<Var>), ParseErrorKind> {
        while let Some(b) = self.blocks.get(self.block) {
            if b.variables().iter().all(|v| self.consumed.contains(v)) {
                self.block += 1;
            } else {
                break;
            }
        }
        let Some(block) = self.blocks.get(self.block) else {
            return Err(ParseErrorKind::BlockMismatch(
                "no prefix variables left for implicit bit-vector".into(),
            ));
        };
        let vars: Vec<Var> = block
            .variables()
            .iter()
            .copied()
            .filter(|v| !self.consumed.contains(v))
            .take(width)
            .collect();
        if vars.len() < width {
            return Err(ParseErrorKind::BlockMismatch(format!(
                "implicit bit-vector of width {width} but only {} variables left in the block",
                vars.len()
            )));
        }
        self.consumed.extend(vars.iter().copied());
        Ok((block.kind(), vars))
    }
}

fn ceil_log2(x: u64) -> usize {
    (64 - (x.max(1) - 1).leading_zeros()) as usize
}

/// Width of a bit-vector whose variables were left out, derived from its
/// constraints alone.
pub fn implicit_width(constraints: &[Constraint]) -> Result<usize, ParseErrorKind> {
    let mut pattern_len: Option<usize> = None;
    for c in constraints {
        if let Constraint::InSet(patterns) = c {
            for p in patterns {
                match pattern_len {
                    None => pattern_len = Some(p.len()),
                    Some(w) if w != p.len() => {
                        return Err(ParseErrorKind::PatternWidthMismatch {
                            expected: w,
                            found: p.len(),
                        })
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some(w) = pattern_len {
        return Ok(w);
    }
    if constraints.iter().all(|c| matches!(c, Constraint::Less(_))) {
        let s = constraints
            .iter()
            .map(|c| match c {
                Constraint::Less(v) => *v,
                _ => unreachable!(),
            })
            .max()
            .unwrap_or(1);
        return Ok(ceil_log2(s).max(1));
    }
    Err(ParseErrorKind::AmbiguousImplicit(
        "the number of accounted expansions of `>` or `T` depends on the width; list the variables"
            .into(),
    ))
}

/// Resolves an annotation written without `[vars]` to the next variables of
/// the prefix.
pub fn resolve_implicit(
    constraints: &[Constraint],
    cursor: &mut PrefixCursor<'_>,
) -> Result<(QuantifierKind, BitVector), ParseErrorKind> {
    let width = implicit_width(constraints)?;
    if width > MAX_WIDTH {
        return Err(FormulaError::WidthTooLarge(width).into());
    }
    let (kind, vars) = cursor.take(width)?;
    Ok((kind, BitVector::new(vars)?))
}

impl SourceDocument {
    pub fn into_formula(self, options: ParseOptions) -> Result<Formula, ParseError> {
        let variable_count = self.variable_count;
        let prefix: Vec<QuantifierBlock> = self.prefix.into_iter().map(|(_, b)| b).collect();
        {
            let mut seen = HashMap::new();
            for b in &prefix {
                for &v in b.variables() {
                    if seen.insert(v, ()).is_some() {
                        return Err(ParseError::new(
                            0,
                            ParseErrorKind::BlockMismatch(format!("variable {v} quantified twice")),
                        ));
                    }
                }
            }
        }

        let mut cursor = PrefixCursor::new(&prefix);
        let mut annotations = Vec::with_capacity(self.split_lines.len());
        let mut used: HashSet<Var> = HashSet::new();
        for split in self.split_lines {
            let at = |kind: ParseErrorKind| ParseError::new(split.line, kind);
            let (kind, bitvector) = match split.vars {
                Some(vars) => {
                    if let Some(&v) = vars.iter().find(|&&v| v > variable_count) {
                        return Err(at(ParseErrorKind::UnknownVariable {
                            var: v,
                            variable_count,
                        }));
                    }
                    let bitvector = BitVector::new(vars).map_err(|e| at(e.into()))?;
                    let kind = if prefix.is_empty() {
                        QuantifierKind::Exists
                    } else {
                        cursor.claim(bitvector.variables()).map_err(at)?
                    };
                    (kind, bitvector)
                }
                None => {
                    if prefix.is_empty() {
                        return Err(at(ParseErrorKind::DimacsModeViolation(
                            "without a prefix every annotation must list its variables".into(),
                        )));
                    }
                    resolve_implicit(&split.constraints, &mut cursor).map_err(at)?
                }
            };
            if let Some(&v) = bitvector.variables().iter().find(|v| !used.insert(**v)) {
                return Err(at(ParseErrorKind::BlockMismatch(format!(
                    "variable {v} occurs in two bit-vectors"
                ))));
            }
            let aq = AnnotatedQuantifier::new(kind, bitvector, split.constraints)
                .map_err(|e| at(e.into()))?;
            annotations.push(aq);
        }

        let matrix =
            Matrix::new(variable_count, self.clauses).map_err(|e| ParseError::new(0, e))?;
        let formula =
            Formula::new(matrix, prefix, annotations).map_err(|e| ParseError::new(0, e))?;
        if options.strict && !formula.prefix().is_empty() {
            if let Some(&v) = formula.free_variables().first() {
                return Err(ParseError::new(0, ParseErrorKind::FreeVariable(v)));
            }
        }
        Ok(formula)
    }
}

/// Serializes `formula`. Annotations always list their variables.
pub fn write(formula: &Formula) -> String {
    let mut out = String::new();
    for aq in formula.annotations() {
        out.push_str("cs int [");
        for (i, v) in aq.bitvector().variables().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push_str("] ");
        for (i, c) in aq.constraints().iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            let _ = write!(out, "{c}");
        }
        out.push('\n');
    }
    let matrix = formula.matrix();
    let _ = writeln!(
        out,
        "p cnf {} {}",
        matrix.variable_count(),
        matrix.clauses().len()
    );
    for block in formula.prefix() {
        out.push(block.kind().letter());
        for v in block.variables() {
            let _ = write!(out, " {v}");
        }
        out.push_str(" 0\n");
    }
    for clause in matrix.clauses() {
        for lit in clause.literals() {
            let _ = write!(out, "{lit} ");
        }
        out.push_str("0\n");
    }
    out
}
