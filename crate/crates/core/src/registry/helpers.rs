use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{Builder, Var};
use crate::tensor::{Precision, Tensor, ValueInfo};

use super::RuleArgs;

pub(super) fn promote(a: Precision, b: Precision) -> Precision {
    a.max(b)
}

pub(super) fn infer_same(inputs: &[ValueInfo], _: &Config) -> Result<Vec<ValueInfo>> {
    Ok(vec![inputs[0].clone()])
}

pub(super) fn infer_scalar(inputs: &[ValueInfo], _: &Config) -> Result<Vec<ValueInfo>> {
    Ok(vec![ValueInfo::scalar(inputs[0].precision)])
}

/// Equal shapes, or one side a rank-0 scalar.
pub(super) fn broadcast_info(op: &str, a: &ValueInfo, b: &ValueInfo) -> Result<ValueInfo> {
    let precision = promote(a.precision, b.precision);
    if a.shape == b.shape || b.is_scalar() {
        Ok(ValueInfo::new(a.shape.clone(), precision))
    } else if a.is_scalar() {
        Ok(ValueInfo::new(b.shape.clone(), precision))
    } else {
        Err(Error::shape(op, format!("cannot broadcast {:?} with {:?}", a.shape, b.shape)))
    }
}

pub(super) fn infer_broadcast(inputs: &[ValueInfo], _: &Config) -> Result<Vec<ValueInfo>> {
    Ok(vec![broadcast_info("elementwise", &inputs[0], &inputs[1])?])
}

pub(super) fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    x.map(f)
}

pub(super) fn binary(op: &str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let info = broadcast_info(op, &a.info(), &b.info())?;
    let n = info.numel();
    let at = |t: &Tensor, i: usize| if t.numel() == 1 && t.rank() == 0 { t.data()[0] } else { t.data()[i] };
    let data = (0..n).map(|i| f(at(a, i), at(b, i))).collect();
    Tensor::new(info.shape, info.precision, data)
}

pub(super) fn check_all(op: &str, x: &Tensor, ok: impl Fn(f64) -> bool, what: &str) -> Result<()> {
    match x.data().iter().find(|&&v| !ok(v)) {
        Some(v) => Err(Error::domain(op, format!("{what}, got {v}"))),
        None => Ok(()),
    }
}

/// Derivative rule for piecewise-constant outputs: all cotangents zero.
pub(super) fn vjp_zero(b: &mut dyn Builder, args: &RuleArgs<'_>, _: &[Var]) -> Result<Vec<Var>> {
    Ok(args.input_info.iter().map(|i| b.zeros(i)).collect())
}

pub(super) fn jvp_zero(b: &mut dyn Builder, args: &RuleArgs<'_>, _: &[Var]) -> Result<Vec<Var>> {
    Ok(args.output_info.iter().map(|i| b.zeros(i)).collect())
}

/// `g * d` where `d` is a local derivative, reduced back to `target`.
pub(super) fn scale_to(b: &mut dyn Builder, g: Var, d: Var, target: &ValueInfo) -> Result<Var> {
    let p = b.mul(g, d)?;
    b.unbroadcast(p, target)
}
