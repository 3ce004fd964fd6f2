//! Catalog of planted derivative bugs.

use serde::Serialize;

use super::elementwise::{div_vjp_with, hardshrink_slope, mul_vjp_with, pow_vjp_with};
use super::linalg::{kl_div_vjp_with, mean_primal_last_axis_under_ad, softmax_vjp_with, trace_vjp_with};
use super::structural::index_in_dim_double_normalize;
use super::{JvpRule, PrimalRule, Primitive, VjpRule};

/// Where a fault lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultSite {
    Vjp,
    Jvp,
    /// Primal rule that misbehaves only while an AD scenario is active.
    PrimalUnderAd,
    /// VJP whose first-order values are right but whose own derivative is wrong.
    SecondOrderVjp,
}

#[derive(Clone, Copy)]
pub enum Patch {
    Vjp(VjpRule),
    Jvp(JvpRule),
    Primal(PrimalRule),
}

impl Patch {
    pub fn apply(&self, p: &mut Primitive) {
        match *self {
            Patch::Vjp(r) => p.vjp = r,
            Patch::Jvp(r) => p.jvp = r,
            Patch::Primal(r) => p.primal = r,
        }
    }
}

#[derive(Clone, Copy)]
pub struct FaultSpec {
    pub name: &'static str,
    pub target: &'static str,
    pub site: FaultSite,
    pub mutation: &'static str,
    pub patch: Patch,
}

impl std::fmt::Debug for FaultSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FaultSpec")
            .field("name", &self.name)
            .field("target", &self.target)
            .field("site", &self.site)
            .finish()
    }
}

pub const ALL_FAULTS: &str = "paper-fixtures";

pub fn catalog() -> Vec<FaultSpec> {
    use FaultSite::*;
    vec![
        FaultSpec {
            name: "trace-vjp-extra-diagonal",
            target: "trace",
            site: Vjp,
            mutation: "marks min(m,n)+1 diagonal positions, striding past the last row",
            patch: Patch::Vjp(|b, a, g| trace_vjp_with(b, a, g, true)),
        },
        FaultSpec {
            name: "hardshrink-vjp-boundary",
            target: "hardshrink",
            site: Vjp,
            mutation: "slope is [|x| > lambd] even when lambd = 0",
            patch: Patch::Vjp(|b, a, g| {
                let s = hardshrink_slope(b, a, true)?;
                Ok(vec![b.mul(g[0], s)?])
            }),
        },
        FaultSpec {
            name: "hardshrink-jvp-boundary",
            target: "hardshrink",
            site: Jvp,
            mutation: "slope is [|x| > lambd] even when lambd = 0",
            patch: Patch::Jvp(|b, a, t| {
                let s = hardshrink_slope(b, a, true)?;
                Ok(vec![b.mul(t[0], s)?])
            }),
        },
        FaultSpec {
            name: "index_in_dim-double-normalize",
            target: "index_in_dim",
            site: PrimalUnderAd,
            mutation: "adds the axis length to a negative index twice under AD",
            patch: Patch::Primal(index_in_dim_double_normalize),
        },
        FaultSpec {
            name: "pow-second-order",
            target: "pow",
            site: SecondOrderVjp,
            mutation: "treats ln a as a constant in the exponent cotangent",
            patch: Patch::Vjp(|b, a, g| pow_vjp_with(b, a, g, true)),
        },
        FaultSpec {
            name: "kl_div-backward-shape",
            target: "kl_div",
            site: Vjp,
            mutation: "backward assumes target has as many elements as input and crashes otherwise",
            patch: Patch::Vjp(|b, a, g| kl_div_vjp_with(b, a, g, true)),
        },
        FaultSpec {
            name: "sigmoid-jvp",
            target: "sigmoid",
            site: Jvp,
            mutation: "t*y*(1+y) instead of t*y*(1-y)",
            patch: Patch::Jvp(|b, a, t| {
                let y = a.output(0)?;
                let one = b.scalar(1.0, b.info(y).precision);
                let c = b.add(one, y)?;
                let d = b.mul(y, c)?;
                Ok(vec![b.mul(t[0], d)?])
            }),
        },
        FaultSpec {
            name: "tanh-vjp",
            target: "tanh",
            site: Vjp,
            mutation: "g*(1-y) instead of g*(1-y^2)",
            patch: Patch::Vjp(|b, a, g| {
                let y = a.output(0)?;
                let one = b.scalar(1.0, b.info(y).precision);
                let d = b.sub(one, y)?;
                Ok(vec![b.mul(g[0], d)?])
            }),
        },
        FaultSpec {
            name: "softmax-vjp",
            target: "softmax",
            site: Vjp,
            mutation: "g*s, dropping the -s*sum(g*s) term",
            patch: Patch::Vjp(|b, a, g| softmax_vjp_with(b, a, g, true)),
        },
        FaultSpec {
            name: "mean-primal-under-ad",
            target: "mean",
            site: PrimalUnderAd,
            mutation: "divides by the last axis extent instead of the element count under AD",
            patch: Patch::Primal(mean_primal_last_axis_under_ad),
        },
        FaultSpec {
            name: "sqrt-jvp",
            target: "sqrt",
            site: Jvp,
            mutation: "t/y instead of t/(2y)",
            patch: Patch::Jvp(|b, a, t| Ok(vec![b.div(t[0], a.output(0)?)?])),
        },
        FaultSpec {
            name: "mul-second-order",
            target: "mul",
            site: SecondOrderVjp,
            mutation: "operands are detached inside the VJP",
            patch: Patch::Vjp(|b, a, g| mul_vjp_with(b, a, g, true)),
        },
        FaultSpec {
            name: "cos-jvp",
            target: "cos",
            site: Jvp,
            mutation: "t*sin x instead of -t*sin x",
            patch: Patch::Jvp(|b, a, t| {
                let s = b.op("sin", &[a.input(0)?])?;
                Ok(vec![b.mul(t[0], s)?])
            }),
        },
        FaultSpec {
            name: "div-vjp",
            target: "div",
            site: Vjp,
            mutation: "denominator cotangent loses its sign",
            patch: Patch::Vjp(|b, a, g| div_vjp_with(b, a, g, true)),
        },
    ]
}

/// A single fault by name, every fault, or a named group.
pub fn resolve(name: &str) -> Option<Vec<FaultSpec>> {
    let all = catalog();
    match name {
        ALL_FAULTS => Some(all),
        "hardshrink-ad-boundary" => Some(all.into_iter().filter(|f| f.target == "hardshrink").collect()),
        _ => all.into_iter().find(|f| f.name == name).map(|f| vec![f]),
    }
}

/// Names accepted by [`resolve`], groups first.
pub fn variant_names() -> Vec<&'static str> {
    let mut v = vec![ALL_FAULTS, "hardshrink-ad-boundary"];
    v.extend(catalog().iter().map(|f| f.name));
    v
}
