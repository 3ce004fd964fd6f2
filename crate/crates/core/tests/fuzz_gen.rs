use gradfuzz::fuzz::{self, validate, Case, MutationKind, Provenance, Validity, BOUNDARY_DELTA, MAX_NUMEL, MAX_RANK};
use gradfuzz::tensor::numel;
use proptest::prelude::*;

fn mutants(cases: &[Case]) -> impl Iterator<Item = (&Case, MutationKind)> {
    cases.iter().filter_map(|c| match c.provenance {
        Provenance::Mutant { rule, .. } => Some((c, rule)),
        Provenance::Seed { .. } => None,
    })
}

#[test]
fn hardshrink_boundary_is_reachable_by_config_mutation() {
    let cases = fuzz::generate("hardshrink", 1000, 0).unwrap();
    let seeds = fuzz::seeds("hardshrink").unwrap().len();
    let hit = cases[seeds..].iter().any(|c| {
        c.config.float_or("hardshrink", "lambd", 0.5).unwrap() == 0.0
            && c.inputs[0].data.contains(&0.0)
            && !matches!(c.provenance, Provenance::Seed { .. })
    });
    assert!(hit);
    assert!(mutants(&cases).any(|(c, k)| k == MutationKind::Config
        && c.config.float_or("hardshrink", "lambd", 0.5).unwrap() == 0.0));
}

#[test]
fn negative_and_out_of_range_indices_appear() {
    let cases = fuzz::generate("index_in_dim", 1000, 0).unwrap();
    let indices: Vec<i64> = cases.iter().map(|c| c.config.int_or("index_in_dim", "index", 0).unwrap()).collect();
    assert!(indices.iter().any(|&i| i < -1));
    assert!(cases.iter().any(|c| matches!(validate(c), Validity::Invalid(r) if r.starts_with("shape"))));
}

#[test]
fn boundary_guarantee_for_declared_loci() {
    for id in ["abs", "relu", "hardshrink"] {
        let def = fuzz::lookup(id).unwrap();
        let cases = fuzz::generate(id, 1000, 0).unwrap();
        let value_mutants: Vec<&Case> = mutants(&cases).filter(|(_, k)| *k == MutationKind::Value).map(|(c, _)| c).collect();
        assert!(value_mutants.iter().any(|c| c.inputs.iter().any(|t| t.data.contains(&0.0))), "{id}");
        if id == "hardshrink" {
            assert!(value_mutants.iter().any(|c| {
                let loci = (def.loci)(&c.config);
                c.inputs.iter().any(|t| t.data.iter().any(|v| loci.contains(v) && *v != 0.0))
            }));
        }
        assert!(value_mutants.iter().any(|c| c.inputs.iter().any(|t| t.data.iter().any(|v| v.abs() == BOUNDARY_DELTA))));
    }
}

#[test]
fn every_rule_fires_within_the_default_budget() {
    for def in fuzz::catalog() {
        let cases = fuzz::generate(def.id, 1000, 0).unwrap();
        assert_eq!(cases.len(), 1000);
        let fired: std::collections::BTreeSet<MutationKind> = mutants(&cases).map(|(_, k)| k).collect();
        let expected = if def.params.is_empty() { 3 } else { 4 };
        assert_eq!(fired.len(), expected, "{}: {fired:?}", def.id);
    }
}

#[test]
fn shape_mutants_stay_within_caps_and_include_empty_extents() {
    let cases = fuzz::generate("sum", 1000, 0).unwrap();
    for c in &cases {
        for t in &c.inputs {
            assert!(t.shape.len() <= MAX_RANK && numel(&t.shape) <= MAX_NUMEL);
            assert_eq!(t.data.len(), numel(&t.shape));
        }
    }
    assert!(cases.iter().any(|c| numel(&c.inputs[0].shape) == 0));
}

#[test]
fn validation_examples() {
    let mut m = fuzz::seeds("matmul").unwrap().remove(0);
    assert_eq!(validate(&m), Validity::Valid);
    m.inputs[1] = m.inputs[0].clone();
    if m.inputs[0].shape[0] != m.inputs[0].shape[1] {
        assert!(matches!(validate(&m), Validity::Invalid(r) if r.starts_with("shape")));
    }
    let mut l = fuzz::seeds("log").unwrap().remove(0);
    l.inputs[0].data[0] = -1.0;
    assert!(matches!(validate(&l), Validity::Invalid(r) if r.starts_with("domain")));
}

#[test]
fn unknown_functions_are_rejected() {
    assert!(fuzz::generate("no_such_fn", 10, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_a_pure_function(seed in 0u64..1000, budget in 0usize..60, pick in 0usize..28) {
        let id = fuzz::catalog()[pick].id;
        let a = fuzz::generate(id, budget, seed).unwrap();
        prop_assert_eq!(a.len(), budget);
        prop_assert_eq!(&a, &fuzz::generate(id, budget, seed).unwrap());
        let shorter = fuzz::generate(id, budget / 2, seed).unwrap();
        prop_assert_eq!(&a[..budget / 2], &shorter[..]);
    }

    #[test]
    fn mutants_point_to_earlier_valid_cases(seed in 0u64..1000) {
        let cases = fuzz::generate("div", 200, seed).unwrap();
        for (i, c) in cases.iter().enumerate() {
            if let Provenance::Mutant { parent, .. } = c.provenance {
                prop_assert!(parent < i);
                prop_assert!(validate(&cases[parent]).is_valid());
            }
        }
    }
}
