use gradfuzz::tensor::{flatten, max_abs_diff, unflatten_infos, Comparison, Precision, Tensor, ValueInfo};
use proptest::prelude::*;

fn precision() -> impl Strategy<Value = Precision> {
    prop_oneof![Just(Precision::F64), Just(Precision::F32), Just(Precision::F16)]
}

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 0..4)
}

fn tensor() -> impl Strategy<Value = Tensor> {
    (shape(), precision()).prop_flat_map(|(s, p)| {
        let n: usize = s.iter().product();
        prop::collection::vec(-1e3f64..1e3, n).prop_map(move |d| Tensor::new(s.clone(), p, d).unwrap())
    })
}

proptest! {
    #[test]
    fn quantize_is_idempotent(x in -7e4f64..7e4, p in precision()) {
        let q = p.quantize(x);
        prop_assert_eq!(p.quantize(q).to_bits(), q.to_bits());
    }

    #[test]
    fn stored_values_are_representable(t in tensor()) {
        for &v in t.data() {
            prop_assert_eq!(t.precision().quantize(v).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn flatten_round_trips(ts in prop::collection::vec(tensor(), 0..4)) {
        let infos: Vec<ValueInfo> = ts.iter().map(Tensor::info).collect();
        let flat = flatten(&ts);
        prop_assert_eq!(flat.len(), infos.iter().map(ValueInfo::numel).sum::<usize>());
        prop_assert_eq!(unflatten_infos(&flat, &infos).unwrap(), ts);
    }

    #[test]
    fn unflatten_rejects_wrong_lengths(ts in prop::collection::vec(tensor(), 1..3), extra in 1usize..3) {
        let infos: Vec<ValueInfo> = ts.iter().map(Tensor::info).collect();
        let mut flat = flatten(&ts);
        flat.extend(std::iter::repeat(0.0).take(extra));
        prop_assert!(unflatten_infos(&flat, &infos).is_err());
    }

    #[test]
    fn comparison_is_reflexive_and_widening_only_loosens(
        a in prop::collection::vec(-1e6f64..1e6, 0..8),
        d in -1e-2f64..1e-2,
        p in precision(),
    ) {
        let c = Comparison::gradient();
        prop_assert!(c.all_equal(&a, &a));
        let b: Vec<f64> = a.iter().map(|v| v + d).collect();
        if c.all_equal(&a, &b) {
            prop_assert!(c.widened_for(p).all_equal(&a, &b));
        }
    }

    #[test]
    fn max_abs_diff_is_a_symmetric_distance(
        a in prop::collection::vec(-1e3f64..1e3, 0..8),
        shift in -1.0f64..1.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert_eq!(max_abs_diff(&a, &a), 0.0);
        prop_assert_eq!(max_abs_diff(&a, &b), max_abs_diff(&b, &a));
        if !a.is_empty() {
            prop_assert!((max_abs_diff(&a, &b) - shift.abs()).abs() < 1e-9);
        }
    }
}

#[test]
fn nan_and_infinity_semantics() {
    let c = Comparison::gradient();
    assert!(c.equal(f64::NAN, f64::NAN));
    assert!(!Comparison { nan_equal: false, ..c }.equal(f64::NAN, f64::NAN));
    assert!(c.equal(f64::INFINITY, f64::INFINITY));
    assert!(!c.equal(f64::INFINITY, 1e300));
    assert_eq!(max_abs_diff(&[f64::INFINITY], &[1.0]), f64::INFINITY);
    assert_eq!(max_abs_diff(&[1.0], &[1.0, 2.0]), f64::INFINITY);
}
