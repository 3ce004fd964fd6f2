use std::sync::Arc;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{Builder, FlatFunction, Var};
use crate::registry::Registry;
use crate::tensor::ValueInfo;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    /// Real-valued, with notable values to try.
    Float(&'static [f64]),
    /// Index into an axis of the first input.
    Index,
    /// Axis of the first input.
    Dim,
    Precision,
    /// Target shape with the first input's element count.
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
}

pub type BodyFn = fn(&mut dyn Builder, &[Var], &Config) -> Result<Vec<Var>>;

/// A fuzzable function: one API operator or a small composition.
#[derive(Debug, Clone, Copy)]
pub struct FunctionDef {
    pub id: &'static str,
    /// Single operator applied to all inputs, or a composite body.
    pub op: Option<&'static str>,
    pub body: Option<BodyFn>,
    pub params: &'static [ParamSpec],
    /// Excluded from campaigns unless named explicitly.
    pub fixture: bool,
    /// Input values where the function is known not to be differentiable.
    pub loci: fn(&Config) -> Vec<f64>,
}

impl FunctionDef {
    pub fn trace(&self, registry: Arc<Registry>, inputs: &[ValueInfo], config: &Config) -> Result<FlatFunction> {
        let (op, body) = (self.op, self.body);
        let config = config.clone();
        FlatFunction::trace(self.id, registry, inputs, &move |b, x| match (op, body) {
            (Some(op), _) => b.apply(op, x, &config),
            (None, Some(body)) => body(b, x, &config),
            (None, None) => Err(Error::Invalid("function has no body".into())),
        })
    }
}

fn none(_: &Config) -> Vec<f64> {
    Vec::new()
}

fn zero(_: &Config) -> Vec<f64> {
    vec![0.0]
}

fn hardshrink_loci(cfg: &Config) -> Vec<f64> {
    let l = cfg.float_or("hardshrink", "lambd", 0.5).unwrap_or(0.5);
    vec![l, -l, 0.0]
}

const fn op(id: &'static str) -> FunctionDef {
    FunctionDef { id, op: Some(id), body: None, params: &[], fixture: false, loci: none }
}

const fn composite(id: &'static str, body: BodyFn) -> FunctionDef {
    FunctionDef { id, op: None, body: Some(body), params: &[], fixture: false, loci: none }
}

const LAMBD: &[f64] = &[0.0, 0.5, 1.0, 2.0, -0.5, 1e-3];
const DROP_P: &[f64] = &[0.0, 0.1, 0.5, 0.9];

/// Every fuzzable function, API operators first.
pub fn catalog() -> &'static [FunctionDef] {
    static CATALOG: &[FunctionDef] = &[
        op("add"),
        op("sub"),
        op("mul"),
        op("div"),
        op("neg"),
        op("exp"),
        op("log"),
        op("sqrt"),
        op("pow"),
        op("sin"),
        op("cos"),
        op("tanh"),
        op("sigmoid"),
        FunctionDef { loci: zero, ..op("abs") },
        FunctionDef { loci: zero, ..op("relu") },
        FunctionDef {
            params: &[ParamSpec { name: "lambd", kind: ParamKind::Float(LAMBD) }],
            loci: hardshrink_loci,
            ..op("hardshrink")
        },
        op("sum"),
        op("mean"),
        op("matmul"),
        op("trace"),
        op("softmax"),
        op("kl_div"),
        FunctionDef { params: &[ParamSpec { name: "shape", kind: ParamKind::Shape }], ..op("reshape") },
        FunctionDef {
            params: &[
                ParamSpec { name: "index", kind: ParamKind::Index },
                ParamSpec { name: "dim", kind: ParamKind::Dim },
            ],
            ..op("index_in_dim")
        },
        FunctionDef { params: &[ParamSpec { name: "precision", kind: ParamKind::Precision }], ..op("cast") },
        composite("fig2", |b, x, _| {
            let v1 = b.mul(x[0], x[1])?;
            let v2 = b.op("log", &[v1])?;
            let v3 = b.op("sin", &[x[0]])?;
            Ok(vec![b.add(v2, v3)?])
        }),
        FunctionDef {
            params: &[ParamSpec { name: "precision", kind: ParamKind::Precision }],
            ..composite("cast_sum", |b, x, cfg| {
                let c = b.op_with("cast", x, cfg)?;
                Ok(vec![b.sum(c)?])
            })
        },
        composite("mlp_loss", |b, x, _| {
            let h = b.op("matmul", x)?;
            let a = b.op("tanh", &[h])?;
            Ok(vec![b.sum(a)?])
        }),
        FunctionDef {
            params: &[ParamSpec { name: "p", kind: ParamKind::Float(DROP_P) }],
            fixture: true,
            ..composite("dropout", |b, x, cfg| Ok(vec![b.apply("dropout", x, cfg)?[0]]))
        },
        FunctionDef { fixture: true, ..op("crash") },
    ];
    CATALOG
}

pub fn lookup(id: &str) -> Result<&'static FunctionDef> {
    catalog().iter().find(|d| d.id == id).ok_or_else(|| Error::UnknownFunction(id.to_string()))
}
