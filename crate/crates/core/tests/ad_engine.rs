use std::sync::Arc;

use gradfuzz::ad::{grad_function, hessian, jacobian, jvp, vjp, Mode, Tape};
use gradfuzz::fuzz;
use gradfuzz::graph::{EvalCtx, FlatFunction, Scenario};
use gradfuzz::numdiff::{nd_jacobian, NdConfig};
use gradfuzz::registry::Registry;
use gradfuzz::tensor::{Comparison, Precision, ValueInfo};
use proptest::prelude::*;

fn fig2() -> FlatFunction {
    let s = ValueInfo::scalar(Precision::F64);
    FlatFunction::trace("fig2", Registry::clean(), &[s.clone(), s], &|b, x| {
        let v1 = b.mul(x[0], x[1])?;
        let v2 = b.op("log", &[v1])?;
        let v3 = b.op("sin", &[x[0]])?;
        Ok(vec![b.add(v2, v3)?])
    })
    .unwrap()
}

fn mlp() -> FlatFunction {
    let case = &fuzz::seeds("mlp_loss").unwrap()[0];
    case.build(Registry::clean()).unwrap()
}

#[test]
fn golden_trace() {
    let f = fig2();
    let x = [1.0, 2.0];
    let y = f.evaluate(&x, &mut EvalCtx::direct()).unwrap();
    assert!((y[0] - (2f64.ln() + 1f64.sin())).abs() < 1e-12);

    // Forward: one tangent pass per input.
    let (_, t1) = jvp(&f, &x, &[1.0, 0.0]).unwrap();
    let (_, t2) = jvp(&f, &x, &[0.0, 1.0]).unwrap();
    assert!((t1[0] - (1.0 + 1f64.cos())).abs() < 1e-12);
    assert!((t2[0] - 0.5).abs() < 1e-12);

    // Reverse: one adjoint pass.
    let (_, g) = vjp(&f, &x, &[1.0]).unwrap();
    assert!((g[0] - (1.0 + 1f64.cos())).abs() < 1e-12);
    assert!((g[1] - 0.5).abs() < 1e-12);

    let mut ctx = EvalCtx::new(Scenario::Reverse, 0);
    let tape = Tape::record(&f, &x, &mut ctx).unwrap();
    assert_eq!(tape.nodes.len(), 4);
    assert_eq!(tape.output(), y);
}

#[test]
fn vjp_of_mul_matches_the_closed_form() {
    let s = ValueInfo::scalar(Precision::F64);
    let f = FlatFunction::trace("mul", Registry::clean(), &[s.clone(), s], &|b, x| Ok(vec![b.mul(x[0], x[1])?])).unwrap();
    let (y, g) = vjp(&f, &[3.0, -2.0], &[0.5]).unwrap();
    assert_eq!(y, [-6.0]);
    assert_eq!(g, [-1.0, 1.5]);
}

#[test]
fn second_order_pow_cross_partials() {
    let s = ValueInfo::scalar(Precision::F64);
    let f = FlatFunction::trace("pow", Registry::clean(), &[s.clone(), s], &|b, x| Ok(vec![b.op("pow", x)?])).unwrap();
    for mode in [Mode::Reverse, Mode::Forward] {
        let g = grad_function(&f, mode).unwrap();
        assert_eq!(g.derivative_order, 1);
        for inner in [Mode::Reverse, Mode::Forward] {
            let h = jacobian(&g, &[2.0, 0.0], inner).unwrap();
            assert!((h.get(0, 1) - 0.5).abs() < 1e-12, "{mode:?}/{inner:?}: {:?}", h.data);
            assert!((h.get(1, 0) - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn third_order_by_wrapping_twice() {
    let s = ValueInfo::scalar(Precision::F64);
    let f = FlatFunction::trace("sin", Registry::clean(), &[s], &|b, x| Ok(vec![b.op("sin", x)?])).unwrap();
    let g2 = grad_function(&grad_function(&f, Mode::Reverse).unwrap(), Mode::Forward).unwrap();
    assert_eq!(g2.derivative_order, 2);
    let j = jacobian(&g2, &[0.3], Mode::Reverse).unwrap();
    assert!((j.data[0] + 0.3f64.cos()).abs() < 1e-12);
}

fn assert_three_way(f: &FlatFunction, x: &[f64]) {
    let c = Comparison::gradient();
    let r = jacobian(f, x, Mode::Reverse).unwrap();
    let w = jacobian(f, x, Mode::Forward).unwrap();
    let n = nd_jacobian(f, x, &NdConfig::default()).unwrap();
    assert!(c.all_equal(&r.data, &w.data), "{:?} vs {:?}", r.data, w.data);
    assert!(c.all_equal(&r.data, &n.data), "{:?} vs {:?}", r.data, n.data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modes_agree_on_fig2(a in 0.2f64..3.0, b in 0.2f64..3.0) {
        assert_three_way(&fig2(), &[a, b]);
    }

    #[test]
    fn modes_agree_on_mlp(x in prop::collection::vec(-1.0f64..1.0, 12)) {
        assert_three_way(&mlp(), &x);
    }

    #[test]
    fn vjp_and_jvp_are_dual(
        x in prop::collection::vec(-1.0f64..1.0, 12),
        u in prop::collection::vec(-1.0f64..1.0, 12),
        v in -2.0f64..2.0,
    ) {
        let f = mlp();
        let (_, ju) = jvp(&f, &x, &u).unwrap();
        let (_, vj) = vjp(&f, &x, &[v]).unwrap();
        let lhs = v * ju[0];
        let rhs: f64 = vj.iter().zip(&u).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn hessians_are_symmetric(a in 0.2f64..3.0, b in 0.2f64..3.0) {
        let h = hessian(&fig2(), &[a, b], Mode::Reverse).unwrap();
        prop_assert!((h.get(0, 1) - h.get(1, 0)).abs() < 1e-9);
        prop_assert!(h.get(0, 1).abs() < 1e-9);
        prop_assert!((h.get(1, 1) + 1.0 / (b * b)).abs() < 1e-9);
    }
}

#[test]
fn jacobians_of_empty_and_wide_functions() {
    let r = Registry::clean();
    let empty = FlatFunction::trace("sum", r.clone(), &[ValueInfo::new(vec![0], Precision::F64)], &|b, x| Ok(vec![b.sum(x[0])?])).unwrap();
    for mode in [Mode::Reverse, Mode::Forward] {
        let j = jacobian(&empty, &[], mode).unwrap();
        assert_eq!((j.rows, j.cols), (1, 0));
    }
    let m = FlatFunction::trace("matmul", Arc::clone(&r), &[ValueInfo::new(vec![2, 3], Precision::F64), ValueInfo::new(vec![3, 2], Precision::F64)], &|b, x| Ok(vec![b.op("matmul", x)?])).unwrap();
    let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
    assert_three_way(&m, &x);
}
