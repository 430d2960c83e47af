//! Random small QBFs with int-split annotations that pass the correctness check.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::evaluator::{eval, eval_with_intsplits, EvalBudget, EvalError};
use crate::formula::{
    to_bits, AnnotatedQuantifier, BitVector, Clause, Constraint, Formula, Literal, Matrix,
    QuantifierBlock, QuantifierKind, Var,
};
use crate::splitter::expansion_order;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub min_variables: usize,
    pub max_variables: usize,
    pub min_blocks: usize,
    pub max_blocks: usize,
    /// Clauses per variable.
    pub clause_ratio: f64,
    pub clause_len: usize,
    pub max_bitvector_width: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_variables: 4,
            max_variables: 14,
            min_blocks: 2,
            max_blocks: 4,
            clause_ratio: 2.0,
            clause_len: 3,
            max_bitvector_width: 3,
        }
    }
}

/// A closed PCNF formula without annotations.
pub fn random_formula<R: Rng + ?Sized>(rng: &mut R, cfg: &GeneratorConfig) -> Formula {
    let n = rng.gen_range(cfg.min_variables..=cfg.max_variables);
    let blocks = rng.gen_range(cfg.min_blocks..=cfg.max_blocks.min(n));
    let mut vars: Vec<Var> = (1..=n as Var).collect();
    vars.shuffle(rng);

    // split points for `blocks` nonempty blocks
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(blocks - 1).collect();
    cuts.sort_unstable();
    let mut prefix = Vec::with_capacity(blocks);
    let mut start = 0;
    let mut kind = if rng.gen_bool(0.5) {
        QuantifierKind::Exists
    } else {
        QuantifierKind::Forall
    };
    for end in cuts.into_iter().chain([n]) {
        prefix.push(QuantifierBlock::new(kind, vars[start..end].to_vec()).unwrap());
        kind = match kind {
            QuantifierKind::Exists => QuantifierKind::Forall,
            QuantifierKind::Forall => QuantifierKind::Exists,
        };
        start = end;
    }

    // Clauses of fixed length with at least two existential literals; clauses
    // made of universal literals only would make nearly every formula false.
    let existential: Vec<Var> = prefix
        .iter()
        .filter(|b| b.kind() == QuantifierKind::Exists)
        .flat_map(|b| b.variables().iter().copied())
        .collect();
    let len = cfg.clause_len.min(n);
    let m = ((n as f64) * cfg.clause_ratio).round() as usize;
    let clauses = (0..m)
        .map(|_| {
            let mut picked: Vec<Var> = existential
                .choose_multiple(rng, 2.min(existential.len()).min(len))
                .copied()
                .collect();
            let mut rest: Vec<Var> = vars
                .iter()
                .copied()
                .filter(|v| !picked.contains(v))
                .collect();
            rest.shuffle(rng);
            picked.extend(rest.into_iter().take(len - picked.len()));
            picked
                .into_iter()
                .map(|v| Literal::new(v, rng.gen_bool(0.5)).unwrap())
                .collect::<Clause>()
        })
        .collect();
    Formula::new(Matrix::new(n as u32, clauses).unwrap(), prefix, vec![]).unwrap()
}

fn random_constraint<R: Rng + ?Sized>(rng: &mut R, width: usize) -> Constraint {
    let full = 1u64 << width;
    match rng.gen_range(0..4) {
        0 => Constraint::Less(rng.gen_range(1..=full)),
        1 => Constraint::Greater(rng.gen_range(1..=full)),
        2 => {
            let k = rng.gen_range(1..=full as usize);
            let mut values: Vec<u64> = (0..full).collect();
            values.shuffle(rng);
            Constraint::InSet(
                values
                    .into_iter()
                    .take(k)
                    .map(|v| to_bits(v, width))
                    .collect::<BTreeSet<_>>(),
            )
        }
        _ => Constraint::Top,
    }
}

/// Random annotations over leading blocks of `formula`: every annotated block
/// is fully covered by bit-vectors, and some later blocks may be left plain.
pub fn random_annotations<R: Rng + ?Sized>(
    rng: &mut R,
    formula: &Formula,
    cfg: &GeneratorConfig,
) -> Formula {
    let blocks = formula.prefix();
    let annotated_blocks = rng.gen_range(1..=blocks.len());
    let mut annotations = Vec::new();
    for block in &blocks[..annotated_blocks] {
        let mut vars = block.variables().to_vec();
        vars.shuffle(rng);
        let mut rest = &vars[..];
        while !rest.is_empty() {
            let w = rng.gen_range(1..=cfg.max_bitvector_width.min(rest.len()));
            let (head, tail) = rest.split_at(w);
            rest = tail;
            let bv = BitVector::new(head.to_vec()).unwrap();
            let aq = loop {
                let count = rng.gen_range(1..=2);
                let constraints = (0..count).map(|_| random_constraint(rng, w)).collect();
                if let Ok(aq) = AnnotatedQuantifier::new(block.kind(), bv.clone(), constraints) {
                    break aq;
                }
            };
            annotations.push(aq);
        }
    }
    Formula::new(formula.matrix().clone(), blocks.to_vec(), annotations).unwrap()
}

/// Correctness for every split plan: restricting only the first `k`
/// annotations in expansion order preserves the truth value, for every `k`.
/// Plain correctness only covers `k` = all.
pub fn correct_for_every_plan(formula: &Formula, budget: EvalBudget) -> Result<bool, EvalError> {
    let truth = eval(formula, budget)?;
    let order = expansion_order(formula);
    let mut annotations: Vec<AnnotatedQuantifier> =
        formula.annotations().iter().map(|a| a.relaxed()).collect();
    for idx in order {
        annotations[idx] = formula.annotations()[idx].clone();
        let candidate = Formula::new(
            formula.matrix().clone(),
            formula.prefix().to_vec(),
            annotations.clone(),
        )
        .expect("same shape as the input");
        if eval_with_intsplits(&candidate, budget)? != truth {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Relaxes randomly chosen annotations to `T` until they are correct for
/// every split plan.
pub fn repair<R: Rng + ?Sized>(
    rng: &mut R,
    formula: Formula,
    budget: EvalBudget,
) -> Result<Formula, EvalError> {
    let mut annotations = formula.annotations().to_vec();
    loop {
        let candidate = Formula::new(
            formula.matrix().clone(),
            formula.prefix().to_vec(),
            annotations.clone(),
        )
        .unwrap();
        if correct_for_every_plan(&candidate, budget)? {
            return Ok(candidate);
        }
        let restricted: Vec<usize> = (0..annotations.len())
            .filter(|&i| !annotations[i].is_unrestricted())
            .collect();
        let &i = restricted
            .choose(rng)
            .expect("all-T annotations are always correct");
        annotations[i] = annotations[i].relaxed();
    }
}

/// A random formula with correct, randomly chosen int-splits.
pub fn random_correct_instance<R: Rng + ?Sized>(rng: &mut R, cfg: &GeneratorConfig) -> Formula {
    let base = random_formula(rng, cfg);
    let annotated = random_annotations(rng, &base, cfg);
    repair(rng, annotated, EvalBudget::default()).expect("generated formulas fit the budget")
}
