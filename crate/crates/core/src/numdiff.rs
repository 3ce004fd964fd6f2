//! Central finite differences.

use serde::{Deserialize, Serialize};

use crate::ad::JacobianMatrix;
use crate::error::{Error, Result};
use crate::graph::{EvalCtx, FlatFunction, Scenario};
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NdConfig {
    pub eps: f64,
    /// Step `eps * max(1, |x_i|)` instead of a fixed `eps`.
    pub per_coordinate_scaling: bool,
}

impl Default for NdConfig {
    fn default() -> Self {
        NdConfig { eps: 1e-6, per_coordinate_scaling: true }
    }
}

impl NdConfig {
    pub fn step(&self, xi: f64) -> f64 {
        if self.per_coordinate_scaling {
            self.eps * xi.abs().max(1.0)
        } else {
            self.eps
        }
    }
}

/// Entry (j, i) is `(f(x + h e_i)_j - f(x - h e_i)_j) / 2h`, from exactly 2n
/// evaluations.
pub fn nd_jacobian(f: &FlatFunction, x: &[f64], cfg: &NdConfig) -> Result<JacobianMatrix> {
    nd_jacobian_in(f, x, cfg, &mut EvalCtx::new(Scenario::Numeric, 0))
}

pub fn nd_jacobian_in(f: &FlatFunction, x: &[f64], cfg: &NdConfig, ctx: &mut EvalCtx) -> Result<JacobianMatrix> {
    if !(cfg.eps > 0.0) {
        return Err(Error::config("nd_jacobian", format!("eps must be positive, got {}", cfg.eps)));
    }
    if f.input_precision() < Precision::F64 {
        return Err(Error::PrecisionRefused(format!(
            "{} takes {} inputs; finite differences need f64",
            f.id,
            f.input_precision().name()
        )));
    }
    let (m, n) = (f.output_arity(), f.input_arity());
    if x.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: x.len() });
    }
    let mut jac = JacobianMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    for i in 0..n {
        let h = cfg.step(x[i]);
        probe[i] = x[i] + h;
        let plus = f.evaluate(&probe, ctx)?;
        probe[i] = x[i] - h;
        let minus = f.evaluate(&probe, ctx)?;
        probe[i] = x[i];
        // The realized step, after rounding x +- h.
        let width = (x[i] + h) - (x[i] - h);
        for j in 0..m {
            jac.set(j, i, (plus[j] - minus[j]) / width);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Config, ConfigValue};
    use crate::registry::Registry;
    use crate::tensor::ValueInfo;

    fn unary(op: &'static str, cfg: Config) -> FlatFunction {
        FlatFunction::trace(op, Registry::clean(), &[ValueInfo::scalar(Precision::F64)], &move |b, x| {
            Ok(vec![b.op_with(op, x, &cfg)?])
        })
        .unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let f = FlatFunction::trace("sq", Registry::clean(), &[ValueInfo::scalar(Precision::F64)], &|b, x| {
            Ok(vec![b.mul(x[0], x[0])?])
        })
        .unwrap();
        let j = nd_jacobian(&f, &[3.0], &NdConfig::default()).unwrap();
        assert!((j.get(0, 0) - 6.0).abs() < 1e-8);
    }

    #[test]
    fn kinks() {
        let hs = unary("hardshrink", Config::new().with("lambd", ConfigValue::Float(0.0)));
        assert_eq!(nd_jacobian(&hs, &[0.0], &NdConfig::default()).unwrap().data, [1.0]);
        let abs = unary("abs", Config::new());
        assert_eq!(nd_jacobian(&abs, &[0.0], &NdConfig::default()).unwrap().data, [0.0]);
    }

    #[test]
    fn counts_two_evaluations_per_coordinate() {
        let f = FlatFunction::trace("s", Registry::clean(), &[ValueInfo::new(vec![3], Precision::F64)], &|b, x| {
            Ok(vec![b.sum(x[0])?])
        })
        .unwrap();
        let mut ctx = EvalCtx::new(Scenario::Numeric, 0);
        nd_jacobian_in(&f, &[1.0, 2.0, 3.0], &NdConfig::default(), &mut ctx).unwrap();
        assert_eq!(ctx.evaluations(), 6);
    }

    #[test]
    fn refusals() {
        let f = FlatFunction::trace("s", Registry::clean(), &[ValueInfo::scalar(Precision::F32)], &|b, x| {
            Ok(vec![b.op("exp", x)?])
        })
        .unwrap();
        assert!(matches!(nd_jacobian(&f, &[1.0], &NdConfig::default()), Err(Error::PrecisionRefused(_))));
        let log = unary("log", Config::new());
        assert_eq!(nd_jacobian(&log, &[0.0], &NdConfig::default()).unwrap_err().kind(), "domain");
        let bad = NdConfig { eps: 0.0, ..NdConfig::default() };
        assert_eq!(nd_jacobian(&log, &[1.0], &bad).unwrap_err().kind(), "config");
    }
}
