//! Catalog of differentiable primitives.
//!
//! Each [`Primitive`] carries a shape rule, a numeric primal rule, a VJP rule
//! and a JVP rule. Derivative rules are written against [`Builder`] so they can
//! run eagerly or be traced into a graph for higher-order differentiation.
//!
//! The registry is immutable once built; [`Registry::inject_fault`] returns a
//! copy with one rule swapped for a deliberately wrong one.

mod elementwise;
pub mod faults;
mod fixtures;
mod helpers;
mod linalg;
mod structural;

use std::sync::Arc;

use indexmap::IndexMap;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{Builder, EvalCtx, Var};
use crate::tensor::{Tensor, ValueInfo};

pub use faults::{FaultSite, FaultSpec};

pub type InferRule = fn(&[ValueInfo], &Config) -> Result<Vec<ValueInfo>>;
pub type PrimalRule = fn(&mut EvalCtx, &[Tensor], &Config) -> Result<Vec<Tensor>>;
/// Maps output cotangents to input cotangents.
pub type VjpRule = fn(&mut dyn Builder, &RuleArgs<'_>, &[Var]) -> Result<Vec<Var>>;
/// Maps input tangents to output tangents.
pub type JvpRule = fn(&mut dyn Builder, &RuleArgs<'_>, &[Var]) -> Result<Vec<Var>>;

/// Which forward values the VJP rule reads; the tape keeps only these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Saves {
    pub inputs: bool,
    pub outputs: bool,
}

impl Saves {
    pub const NONE: Saves = Saves { inputs: false, outputs: false };
    pub const INPUTS: Saves = Saves { inputs: true, outputs: false };
    pub const OUTPUTS: Saves = Saves { inputs: false, outputs: true };
    pub const BOTH: Saves = Saves { inputs: true, outputs: true };
}

/// Human-readable derivative table entry.
#[derive(Debug, Clone, Copy)]
pub struct OpDoc {
    pub primal: &'static str,
    pub vjp: &'static str,
    pub jvp: &'static str,
    pub loci: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Public operator, exposed as a fuzzable function.
    Api,
    /// Internal operator emitted only by derivative rules.
    Auxiliary,
    /// Test fixture (nondeterministic or crashing) excluded from default campaigns.
    Fixture,
}

#[derive(Clone)]
pub struct Primitive {
    pub name: &'static str,
    /// Number of input tensors; `None` for variadic.
    pub arity: Option<usize>,
    pub infer: InferRule,
    pub primal: PrimalRule,
    pub vjp: VjpRule,
    pub jvp: JvpRule,
    pub saves: Saves,
    pub nondeterministic: bool,
    /// Smooth on the interior of its domain.
    pub smooth: bool,
    pub role: Role,
    pub doc: OpDoc,
}

impl std::fmt::Debug for Primitive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Primitive").field("name", &self.name).field("arity", &self.arity).finish()
    }
}

/// Forward values and metadata a derivative rule may read.
pub struct RuleArgs<'a> {
    pub op: &'a str,
    pub config: &'a Config,
    pub inputs: &'a [Option<Var>],
    pub outputs: &'a [Option<Var>],
    pub input_info: &'a [ValueInfo],
    pub output_info: &'a [ValueInfo],
}

impl RuleArgs<'_> {
    pub fn input(&self, i: usize) -> Result<Var> {
        self.inputs
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::NotSaved(format!("{} input {i}", self.op)))
    }

    pub fn output(&self, i: usize) -> Result<Var> {
        self.outputs
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::NotSaved(format!("{} output {i}", self.op)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    prims: IndexMap<&'static str, Arc<Primitive>>,
    faults: Vec<String>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// Every shipped primitive with its correct rules.
    pub fn standard() -> Self {
        let mut r = Registry::empty();
        for p in elementwise::primitives()
            .into_iter()
            .chain(linalg::primitives())
            .chain(structural::primitives())
            .chain(fixtures::primitives())
        {
            r.register(p).expect("shipped primitive names are unique");
        }
        r
    }

    /// Shared clean registry.
    pub fn clean() -> Arc<Registry> {
        use std::sync::OnceLock;
        static CLEAN: OnceLock<Arc<Registry>> = OnceLock::new();
        CLEAN.get_or_init(|| Arc::new(Registry::standard())).clone()
    }

    /// Clean registry, a single fault by name, or a named fault set.
    pub fn variant(name: &str) -> Result<Arc<Registry>> {
        if name == "clean" {
            return Ok(Registry::clean());
        }
        let specs = faults::resolve(name).ok_or_else(|| Error::UnknownVariant(name.to_string()))?;
        let mut r = Registry::standard();
        for f in &specs {
            r = r.inject_fault(f)?;
        }
        Ok(Arc::new(r))
    }

    pub fn register(&mut self, p: Primitive) -> Result<()> {
        if self.prims.contains_key(p.name) {
            return Err(Error::DuplicateName(p.name.to_string()));
        }
        self.prims.insert(p.name, Arc::new(p));
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<&Primitive> {
        self.prims.get(name).map(|p| p.as_ref()).ok_or_else(|| Error::UnknownPrimitive(name.to_string()))
    }

    /// Primitives in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &Primitive> {
        self.prims.values().map(|p| p.as_ref())
    }

    /// Names of the faults injected into this registry, in injection order.
    pub fn faults(&self) -> &[String] {
        &self.faults
    }

    pub fn infer(&self, op: &str, inputs: &[ValueInfo], config: &Config) -> Result<Vec<ValueInfo>> {
        let p = self.lookup(op)?;
        if let Some(a) = p.arity {
            if a != inputs.len() {
                return Err(Error::shape(op, format!("expects {a} inputs, got {}", inputs.len())));
            }
        }
        (p.infer)(inputs, config)
    }

    /// Evaluate one primitive on concrete tensors.
    pub fn apply_primal(
        &self,
        op: &str,
        ctx: &mut EvalCtx,
        inputs: &[Tensor],
        config: &Config,
    ) -> Result<Vec<Tensor>> {
        let infos: Vec<ValueInfo> = inputs.iter().map(Tensor::info).collect();
        let expected = self.infer(op, &infos, config)?;
        let p = self.lookup(op)?;
        let outs = (p.primal)(ctx, inputs, config)?;
        if outs.len() != expected.len() || outs.iter().zip(&expected).any(|(t, i)| t.shape() != i.shape.as_slice())
        {
            return Err(Error::shape(op, "primal result disagrees with its shape rule"));
        }
        Ok(outs)
    }

    /// Copy of this registry with `fault` applied. `self` is unchanged.
    pub fn inject_fault(&self, fault: &FaultSpec) -> Result<Registry> {
        let current = self.prims.get(fault.target).ok_or_else(|| Error::UnknownTarget(fault.target.to_string()))?;
        let mut patched = (**current).clone();
        fault.patch.apply(&mut patched);
        let mut out = self.clone();
        out.prims.insert(fault.target, Arc::new(patched));
        out.faults.push(fault.name.to_string());
        Ok(out)
    }
}
