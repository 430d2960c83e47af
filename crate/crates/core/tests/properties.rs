use intsplit_core::evaluator::{self, EvalBudget, Evaluator};
use intsplit_core::formula::{to_bits, Constraint, Var};
use intsplit_core::generate::{
    correct_for_every_plan, random_annotations, random_correct_instance, random_formula,
    GeneratorConfig,
};
use intsplit_core::merger::{merge, ResultCode, ResultTable, ResultTuple, TimeModel};
use intsplit_core::splitter::{build_subproblem, enumerate_accounted, plan, SplitMode, SplitPlan};
use intsplit_core::{qdimacs, Formula};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

/// Constraint semantics written out from the definition, bit by bit.
fn holds(constraint: &Constraint, bits: &[bool]) -> bool {
    let mut value: u128 = 0;
    for &b in bits {
        value = value * 2 + b as u128;
    }
    match constraint {
        Constraint::Less(v) => value < *v as u128,
        Constraint::Greater(v) => value > *v as u128,
        Constraint::InSet(set) => set.iter().any(|p| p.as_slice() == bits),
        Constraint::Top => true,
    }
}

/// All assignments to the plan's variables (plan order, MSB first) in which
/// every selected quantifier is accounted, by full enumeration.
fn brute_force_expansions(p: &SplitPlan) -> Vec<Vec<(Var, bool)>> {
    let vars = p.variables();
    let n = vars.len();
    let mut out = Vec::new();
    for x in 0..1u64 << n {
        let bits = to_bits(x, n);
        let mut offset = 0;
        let mut ok = true;
        for q in p.quantifiers() {
            let w = q.quantifier.width();
            let slice = &bits[offset..offset + w];
            offset += w;
            if !q.quantifier.constraints().iter().any(|c| holds(c, slice)) {
                ok = false;
            }
        }
        if ok {
            out.push(vars.iter().copied().zip(bits).collect());
        }
    }
    out
}

fn small_cfg() -> GeneratorConfig {
    GeneratorConfig {
        max_variables: 10,
        ..GeneratorConfig::default()
    }
}

#[test]
fn enumeration_matches_full_enumeration() {
    let mut rng = StdRng::seed_from_u64(11);
    let cfg = GeneratorConfig {
        max_variables: 16,
        ..GeneratorConfig::default()
    };
    let mut checked = 0;
    for _ in 0..150 {
        let base = random_formula(&mut rng, &cfg);
        let f = random_annotations(&mut rng, &base, &cfg);
        let depth = rng.gen_range(1..=16);
        let Ok(p) = plan(&f, depth, SplitMode::IntSplit) else {
            continue;
        };
        assert!(p.effective_depth() <= depth);
        let emitted: Vec<Vec<(Var, bool)>> = enumerate_accounted(&p).map(|e| e.bits).collect();
        assert_eq!(emitted, brute_force_expansions(&p));
        assert_eq!(emitted.len() as u64, p.count_subproblems());
        for (i, e) in enumerate_accounted(&p).enumerate() {
            assert_eq!(e.index, i as u64);
        }
        // pruning bound
        assert!(p.count_subproblems() <= p.full_expansion_count());
        let all_unrestricted = p.quantifiers().iter().all(|q| q.quantifier.u() == 0);
        assert_eq!(
            p.count_subproblems() == p.full_expansion_count(),
            all_unrestricted
        );
        checked += 1;
    }
    assert!(checked > 100, "only {checked} plans checked");
}

#[test]
fn plans_respect_the_depth_and_the_expansion_order() {
    let mut rng = StdRng::seed_from_u64(12);
    let cfg = small_cfg();
    for _ in 0..200 {
        let base = random_formula(&mut rng, &cfg);
        let f = random_annotations(&mut rng, &base, &cfg);
        let depth = rng.gen_range(1..=12);
        let Ok(p) = plan(&f, depth, SplitMode::IntSplit) else {
            continue;
        };
        assert!(p.effective_depth() <= depth);
        // plans take a prefix of the expansion order
        let order = intsplit_core::splitter::expansion_order(&f);
        let taken: Vec<usize> = p
            .quantifiers()
            .iter()
            .filter_map(|q| q.annotation)
            .collect();
        assert_eq!(taken, order[..taken.len()]);
        // and stop only when the next one does not fit or is blocked
        if let Some(&next) = order.get(taken.len()) {
            let w = f.annotations()[next].width();
            if p.effective_depth() + w <= depth {
                let deeper = plan(&f, p.effective_depth() + w, SplitMode::IntSplit).unwrap();
                assert_eq!(deeper.quantifiers().len(), taken.len());
            }
        }
        let plain = plan(&f, depth, SplitMode::Plain).unwrap();
        assert_eq!(plain.count_subproblems(), 1 << plain.effective_depth());
    }
}

fn solve_by_splitting(f: &Formula, p: &SplitPlan, rng: &mut StdRng) -> ResultCode {
    let mut rows: Vec<(u64, ResultTuple)> = enumerate_accounted(p)
        .map(|e| {
            let sub = build_subproblem(f, p, &e).unwrap();
            // the copy is a real file format round-trip away from the solver
            let sub = qdimacs::parse(&qdimacs::write(&sub)).unwrap();
            let v = evaluator::eval(&sub, EvalBudget::default()).unwrap();
            let code = if v {
                ResultCode::True
            } else {
                ResultCode::False
            };
            (e.index, ResultTuple::new(code, rng.gen_range(0.0..10.0)))
        })
        .collect();
    rows.shuffle(rng);
    let table = ResultTable::new(p.clone(), rows).unwrap();
    merge(&table, TimeModel::MinMax).unwrap().result.code
}

#[test]
fn split_then_merge_agrees_with_the_oracle() {
    let mut rng = StdRng::seed_from_u64(13);
    let cfg = small_cfg();
    let mut plans = 0;
    for _ in 0..150 {
        let f = random_correct_instance(&mut rng, &cfg);
        let truth = evaluator::eval(&f, EvalBudget::default()).unwrap();
        let expected = if truth {
            ResultCode::True
        } else {
            ResultCode::False
        };
        for mode in [SplitMode::IntSplit, SplitMode::Plain] {
            let depth = rng.gen_range(1..=8);
            let Ok(p) = plan(&f, depth, mode) else {
                continue;
            };
            assert_eq!(
                solve_by_splitting(&f, &p, &mut rng),
                expected,
                "{}",
                qdimacs::write(&f)
            );
            plans += 1;
        }
    }
    assert!(plans > 200);
}

#[test]
fn sub_problems_can_be_split_again() {
    let mut rng = StdRng::seed_from_u64(14);
    let cfg = small_cfg();
    let mut nested = 0;
    for _ in 0..100 {
        let f = random_correct_instance(&mut rng, &cfg);
        let truth = evaluator::eval(&f, EvalBudget::default()).unwrap();
        let Ok(p) = plan(&f, 2, SplitMode::IntSplit) else {
            continue;
        };
        let mut leaves = Vec::new();
        for e in enumerate_accounted(&p) {
            let sub = build_subproblem(&f, &p, &e).unwrap();
            let sub_truth = evaluator::eval(&sub, EvalBudget::default()).unwrap();
            // a copy inherits the remaining annotations, which need not be
            // correct for its own plans
            let inner = plan(&sub, 3, SplitMode::IntSplit)
                .ok()
                .filter(|_| correct_for_every_plan(&sub, EvalBudget::default()).unwrap());
            let code = match inner {
                Some(inner) => {
                    nested += 1;
                    solve_by_splitting(&sub, &inner, &mut rng)
                }
                None => {
                    if sub_truth {
                        ResultCode::True
                    } else {
                        ResultCode::False
                    }
                }
            };
            assert_eq!(code == ResultCode::True, sub_truth);
            leaves.push((e.index, ResultTuple::new(code, 1.0)));
        }
        let table = ResultTable::new(p, leaves).unwrap();
        assert_eq!(
            merge(&table, TimeModel::MinMax).unwrap().result.code == ResultCode::True,
            truth
        );
    }
    assert!(nested > 50);
}

#[test]
fn evaluation_orders_agree_and_pruning_is_monotone() {
    let mut rng = StdRng::seed_from_u64(15);
    let cfg = GeneratorConfig {
        max_variables: 12,
        ..GeneratorConfig::default()
    };
    for _ in 0..100 {
        let f = random_correct_instance(&mut rng, &cfg);
        let budget = EvalBudget::default();
        let bitwise = evaluator::eval(&f, budget).unwrap();
        let vectorwise = evaluator::eval_with_intsplits(&f.relaxed(), budget).unwrap();
        assert_eq!(bitwise, vectorwise);

        let mut e = Evaluator::new(budget).exhaustive(true);
        e.eval_with_intsplits(&f).unwrap();
        let restricted = e.stats().leaves;
        e.eval(&f).unwrap();
        let full = e.stats().leaves;
        assert!(restricted <= full);
        let unrestricted = f.annotations().iter().all(|a| a.u() == 0);
        assert_eq!(restricted == full, unrestricted);

        let mut a = Evaluator::new(budget);
        let mut b = Evaluator::new(budget);
        assert_eq!(a.eval_with_intsplits(&f), b.eval_with_intsplits(&f));
        assert_eq!(a.stats(), b.stats());
    }
}

fn code_strategy() -> impl Strategy<Value = ResultCode> {
    prop_oneof![
        Just(ResultCode::False),
        Just(ResultCode::Unknown),
        Just(ResultCode::True)
    ]
}

fn three_level_plan() -> SplitPlan {
    let f = qdimacs::parse(
        "cs int [1 2] <3\ncs int [3] T\ncs int [4 5] ={01 10 11}\np cnf 5 0\ne 1 2 0\na 3 0\ne 4 5 0\n",
    )
    .unwrap();
    plan(&f, 5, SplitMode::IntSplit).unwrap()
}

proptest! {
    #[test]
    fn round_trip_is_a_fixpoint(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let cfg = GeneratorConfig { max_variables: 20, ..GeneratorConfig::default() };
        let base = random_formula(&mut rng, &cfg);
        let f = random_annotations(&mut rng, &base, &cfg);
        let text = qdimacs::write(&f);
        let back = qdimacs::parse(&text).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(qdimacs::write(&back), text);
    }

    #[test]
    fn merge_is_monotone_and_order_independent(
        codes in prop::collection::vec(code_strategy(), 18),
        times in prop::collection::vec(0.0f64..100.0, 18),
        position in 0usize..18,
        seed in any::<u64>(),
    ) {
        let p = three_level_plan();
        prop_assert_eq!(p.count_subproblems(), 18);
        let rows: Vec<(u64, ResultTuple)> = codes
            .iter()
            .zip(&times)
            .enumerate()
            .map(|(i, (&c, &t))| (i as u64, ResultTuple::new(c, t)))
            .collect();
        let base = merge(&ResultTable::new(p.clone(), rows.clone()).unwrap(), TimeModel::MinMax).unwrap();

        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut StdRng::seed_from_u64(seed));
        let again = merge(&ResultTable::new(p.clone(), shuffled).unwrap(), TimeModel::MinMax).unwrap();
        prop_assert_eq!(&again, &base);

        // certificate: every leaf sits in exactly one innermost group
        let inner = &base.levels[0];
        prop_assert_eq!(inner.inputs.len(), 18);
        prop_assert_eq!(inner.outputs.len() as u64 * inner.group_size, 18);
        let leaves: Vec<ResultTuple> = rows.iter().map(|&(_, t)| t).collect();
        prop_assert_eq!(&inner.inputs, &leaves);

        // raising one leaf never lowers the verdict
        let mut raised = rows.clone();
        raised[position].1.code = match raised[position].1.code {
            ResultCode::False => ResultCode::Unknown,
            _ => ResultCode::True,
        };
        let up = merge(&ResultTable::new(p.clone(), raised).unwrap(), TimeModel::MinMax).unwrap();
        prop_assert!(up.result.code >= base.result.code);

        // the time model never changes the verdict
        let refined = merge(&ResultTable::new(p, rows).unwrap(), TimeModel::Refined).unwrap();
        prop_assert_eq!(refined.result.code, base.result.code);
    }
}
