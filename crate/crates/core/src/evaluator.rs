//! Brute-force QBF evaluation by expansion, with and without int-splits.
//!
//! This is the ground truth for everything else in the crate, so it stays
//! small: strict prefix order, simplification by the current assignment and
//! nothing more.

use std::ops::Range;
use std::time::Instant;

use thiserror::Error;

use crate::formula::{Formula, QuantifierKind, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("formula has {variables} quantified variables, budget allows {max}")]
    BudgetExceeded { variables: usize, max: usize },
    #[error("node limit of {0} exceeded")]
    NodeLimit(u64),
    #[error("deadline passed")]
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalBudget {
    pub max_variables: usize,
    pub max_nodes: Option<u64>,
    pub deadline: Option<Instant>,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget {
            max_variables: 25,
            max_nodes: None,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// Branches that reached the end of the prefix or were cut off early.
    pub leaves: u64,
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Correctness {
    Correct,
    /// The int-splits change the truth value.
    Incorrect {
        restricted: bool,
        unrestricted: bool,
        /// Annotations (by position) that change the value when restricted
        /// alone. Empty if only a combination does.
        culprits: Vec<usize>,
    },
}

struct Step {
    kind: QuantifierKind,
    vars: Vec<Var>,
    accounted: Vec<Range<u64>>,
}

/// Evaluation order: each closed-prefix block contributes its annotated
/// bit-vectors (when `use_splits`) followed by its remaining variables one by one.
#[allow(clippy::single_range_in_vec_init)]
fn steps(formula: &Formula, use_splits: bool) -> Vec<Step> {
    let mut out = Vec::new();
    for block in formula.closed_prefix() {
        let mut covered = Vec::new();
        if use_splits {
            for aq in formula.annotations() {
                let vars = aq.bitvector().variables();
                if block.variables().contains(&vars[0]) {
                    covered.extend_from_slice(vars);
                    out.push(Step {
                        kind: block.kind(),
                        vars: vars.to_vec(),
                        accounted: aq.accounted_ranges().to_vec(),
                    });
                }
            }
        }
        for &v in block.variables() {
            if !covered.contains(&v) {
                out.push(Step {
                    kind: block.kind(),
                    vars: vec![v],
                    accounted: vec![0..2],
                });
            }
        }
    }
    out
}

type Clauses = Vec<Vec<i64>>;

fn assign(clauses: &Clauses, vars: &[Var], value: u64) -> Clauses {
    let width = vars.len();
    let bit = |var: Var| {
        vars.iter()
            .position(|&v| v == var)
            .map(|i| (value >> (width - 1 - i)) & 1 == 1)
    };
    let mut out = Vec::with_capacity(clauses.len());
    'clauses: for c in clauses {
        let mut kept = Vec::with_capacity(c.len());
        for &lit in c {
            match bit(lit.unsigned_abs() as Var) {
                Some(b) if b == (lit > 0) => continue 'clauses,
                Some(_) => {}
                None => kept.push(lit),
            }
        }
        out.push(kept);
    }
    out
}

/// Expansion-based evaluator.
#[derive(Debug, Clone)]
pub struct Evaluator {
    budget: EvalBudget,
    exhaustive: bool,
    stats: EvalStats,
}

impl Evaluator {
    pub fn new(budget: EvalBudget) -> Self {
        Evaluator {
            budget,
            exhaustive: false,
            stats: EvalStats::default(),
        }
    }

    /// Visit every branch: no short-circuiting and no early stop on decided
    /// matrices. Only leaf counts change, never results.
    pub fn exhaustive(mut self, on: bool) -> Self {
        self.exhaustive = on;
        self
    }

    pub fn stats(&self) -> EvalStats {
        self.stats
    }

    /// Truth value under plain QBF semantics; annotations are ignored.
    pub fn eval(&mut self, formula: &Formula) -> Result<bool, EvalError> {
        self.run(formula, false)
    }

    /// Truth value with every annotated quantifier ranging over its accounted
    /// expansions only.
    pub fn eval_with_intsplits(&mut self, formula: &Formula) -> Result<bool, EvalError> {
        self.run(formula, true)
    }

    fn run(&mut self, formula: &Formula, use_splits: bool) -> Result<bool, EvalError> {
        let variables = formula.quantified_variable_count();
        if variables > self.budget.max_variables {
            return Err(EvalError::BudgetExceeded {
                variables,
                max: self.budget.max_variables,
            });
        }
        self.stats = EvalStats::default();
        let steps = steps(formula, use_splits);
        let clauses: Clauses = formula
            .matrix()
            .clauses()
            .iter()
            .map(|c| c.literals().iter().map(|l| l.to_dimacs()).collect())
            .collect();
        self.expand(&steps, &clauses)
    }

    fn tick(&mut self) -> Result<(), EvalError> {
        self.stats.nodes += 1;
        if let Some(max) = self.budget.max_nodes {
            if self.stats.nodes > max {
                return Err(EvalError::NodeLimit(max));
            }
        }
        if let Some(deadline) = self.budget.deadline {
            if self.stats.nodes.is_multiple_of(256) && Instant::now() >= deadline {
                return Err(EvalError::Timeout);
            }
        }
        Ok(())
    }

    fn expand(&mut self, steps: &[Step], clauses: &Clauses) -> Result<bool, EvalError> {
        self.tick()?;
        let falsified = clauses.iter().any(Vec::is_empty);
        let Some((step, rest)) = steps.split_first() else {
            self.stats.leaves += 1;
            return Ok(clauses.is_empty());
        };
        if !self.exhaustive && (falsified || clauses.is_empty()) {
            self.stats.leaves += 1;
            return Ok(!falsified);
        }
        let mut result = step.kind == QuantifierKind::Forall;
        for range in &step.accounted {
            for value in range.clone() {
                let child = self.expand(rest, &assign(clauses, &step.vars, value))?;
                match step.kind {
                    QuantifierKind::Exists => result |= child,
                    QuantifierKind::Forall => result &= child,
                }
                let decided = match step.kind {
                    QuantifierKind::Exists => result,
                    QuantifierKind::Forall => !result,
                };
                if decided && !self.exhaustive {
                    return Ok(result);
                }
            }
        }
        Ok(result)
    }

    /// Compares the restricted truth value with the unrestricted one.
    pub fn check_correctness(&mut self, formula: &Formula) -> Result<Correctness, EvalError> {
        let restricted = self.eval_with_intsplits(formula)?;
        let unrestricted = self.eval(formula)?;
        if restricted == unrestricted {
            return Ok(Correctness::Correct);
        }
        let mut culprits = Vec::new();
        for i in 0..formula.annotations().len() {
            let alone: Vec<_> = formula
                .annotations()
                .iter()
                .enumerate()
                .map(|(j, a)| if i == j { a.clone() } else { a.relaxed() })
                .collect();
            let single = Formula::new(formula.matrix().clone(), formula.prefix().to_vec(), alone)
                .expect("same shape as the input");
            if self.eval_with_intsplits(&single)? != unrestricted {
                culprits.push(i);
            }
        }
        Ok(Correctness::Incorrect {
            restricted,
            unrestricted,
            culprits,
        })
    }
}

pub fn eval(formula: &Formula, budget: EvalBudget) -> Result<bool, EvalError> {
    Evaluator::new(budget).eval(formula)
}

pub fn eval_with_intsplits(formula: &Formula, budget: EvalBudget) -> Result<bool, EvalError> {
    Evaluator::new(budget).eval_with_intsplits(formula)
}

pub fn check_correctness(formula: &Formula, budget: EvalBudget) -> Result<Correctness, EvalError> {
    Evaluator::new(budget).check_correctness(formula)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qdimacs::parse;

    fn ev(text: &str) -> bool {
        eval(&parse(text).unwrap(), EvalBudget::default()).unwrap()
    }

    fn ev_split(text: &str) -> bool {
        eval_with_intsplits(&parse(text).unwrap(), EvalBudget::default()).unwrap()
    }

    #[test]
    fn prenex_order_matters() {
        // forall x exists y. (x or y) and (not x or not y)
        assert!(ev("p cnf 2 2\na 1 0\ne 2 0\n1 2 0\n-1 -2 0\n"));
        assert!(!ev("p cnf 2 2\ne 2 0\na 1 0\n1 2 0\n-1 -2 0\n"));
    }

    #[test]
    fn trivial_formulas() {
        assert!(ev("p cnf 0 0\n"));
        assert!(!ev("p cnf 0 1\n0\n"));
        assert!(ev("p cnf 2 1\n1 2 0\n"));
        assert!(!ev("p cnf 1 2\n1 0\n-1 0\n"));
    }

    #[test]
    fn bounded_quantification_restricts() {
        let text = "cs int [1 2] <2\np cnf 2 1\ne 1 2 0\n1 0\n";
        assert!(!ev_split(text));
        assert!(ev(text));
        assert_eq!(
            check_correctness(&parse(text).unwrap(), EvalBudget::default()).unwrap(),
            Correctness::Incorrect {
                restricted: false,
                unrestricted: true,
                culprits: vec![0],
            }
        );
    }

    #[test]
    fn correct_annotations() {
        let text = "cs int [1 2] <3\np cnf 2 2\ne 1 2 0\n1 2 0\n-1 -2 0\n";
        assert_eq!(
            check_correctness(&parse(text).unwrap(), EvalBudget::default()).unwrap(),
            Correctness::Correct
        );
        let top = "cs int [1 2] T\np cnf 2 1\ne 1 2 0\n1 0\n";
        assert_eq!(
            check_correctness(&parse(top).unwrap(), EvalBudget::default()).unwrap(),
            Correctness::Correct
        );
    }

    #[test]
    fn nine_of_sixteen_leaf_count() {
        let f = parse("cs int <3\ncs int <3\np cnf 4 1\na 1 2 0\ne 3 4 0\n1 2 3 0\n").unwrap();
        let mut e = Evaluator::new(EvalBudget::default()).exhaustive(true);
        e.eval_with_intsplits(&f).unwrap();
        assert_eq!(e.stats().leaves, 9);
        e.eval(&f).unwrap();
        assert_eq!(e.stats().leaves, 16);
    }

    #[test]
    fn universal_bounded_quantifier() {
        // forall x in {0,1,2} over 2 bits: clause (not x1 or not x2) holds for all accounted values
        let text = "cs int [1 2] <3\np cnf 2 1\na 1 2 0\n-1 -2 0\n";
        assert!(ev_split(text));
        assert!(!ev(text));
    }

    #[test]
    fn budget() {
        let f = parse("p cnf 3 1\ne 1 2 3 0\n1 2 3 0\n").unwrap();
        let tight = EvalBudget {
            max_variables: 2,
            ..EvalBudget::default()
        };
        assert_eq!(
            eval(&f, tight),
            Err(EvalError::BudgetExceeded {
                variables: 3,
                max: 2
            })
        );
        let nodes = EvalBudget {
            max_nodes: Some(2),
            ..EvalBudget::default()
        };
        let g = parse("p cnf 3 1\na 1 2 3 0\n1 2 3 0\n").unwrap();
        assert_eq!(eval(&g, nodes), Err(EvalError::NodeLimit(2)));
    }

    #[test]
    fn deterministic_stats() {
        let f = parse("cs int [1 2] <3\np cnf 4 2\na 1 2 0\ne 3 4 0\n1 3 0\n-2 4 0\n").unwrap();
        let mut a = Evaluator::new(EvalBudget::default());
        let mut b = Evaluator::new(EvalBudget::default());
        assert_eq!(a.eval_with_intsplits(&f), b.eval_with_intsplits(&f));
        assert_eq!(a.stats(), b.stats());
    }
}
