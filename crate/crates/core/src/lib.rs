//! Int-split aware offline divide-and-conquer for quantified Boolean formulas.
//!
//! * [`formula`]: PCNF QBFs with annotated (bounded) quantifiers.
//! * [`qdimacs`]: the comment-based (Q)DIMACS annotation format.
//! * [`splitter`]: plans and emits the accounted sub-problems.
//! * [`merger`]: reduces sub-problem results to a verdict and virtual parallel time.
//! * [`evaluator`]: brute-force oracle for all of the above.
//! * [`generate`]: random instances with correct int-splits.

pub mod evaluator;
pub mod formula;
pub mod generate;
pub mod merger;
pub mod qdimacs;
pub mod splitter;

pub use evaluator::{Correctness, EvalBudget, EvalError, Evaluator};
pub use formula::{
    integer_value, AnnotatedQuantifier, Assignment, BitVector, Clause, Constraint, Formula,
    FormulaError, Literal, Matrix, QuantifierBlock, QuantifierKind, Var,
};
pub use merger::{MergeError, MergeReport, ResultCode, ResultTable, ResultTuple, TimeModel};
pub use qdimacs::{parse, write, ParseError, ParseErrorKind, ParseOptions};
pub use splitter::{enumerate_accounted, plan, ExpansionIndex, SplitError, SplitMode, SplitPlan};
