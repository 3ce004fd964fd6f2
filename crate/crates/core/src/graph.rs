//! Computation graphs over registered primitives, and the two ways of running
//! operator rules against them: eagerly on concrete tensors, or symbolically
//! by appending nodes to a new graph.
//!
//! Derivative rules are written once against [`Builder`]. Run eagerly they
//! produce numbers; run under a [`Tracer`] they produce a graph that can itself
//! be evaluated and differentiated, which is how gradient functions of any
//! order are obtained.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::{flatten, unflatten_infos, Precision, Tensor, ValueInfo};

/// The execution context a function is invoked under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Direct,
    Reverse,
    Forward,
    #[serde(rename = "nd")]
    Numeric,
}

impl Scenario {
    pub fn is_ad(self) -> bool {
        matches!(self, Scenario::Reverse | Scenario::Forward)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Direct => "direct",
            Scenario::Reverse => "reverse",
            Scenario::Forward => "forward",
            Scenario::Numeric => "nd",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-invocation state handed to primal rules.
#[derive(Debug, Clone)]
pub struct EvalCtx {
    pub scenario: Scenario,
    /// Seed of the stream nondeterministic primitives draw from.
    pub seed: u64,
    draws: u64,
    evaluations: usize,
}

impl EvalCtx {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        EvalCtx { scenario, seed, draws: 0, evaluations: 0 }
    }

    pub fn direct() -> Self {
        EvalCtx::new(Scenario::Direct, 0)
    }

    /// Index of the next random draw; every call returns a fresh one.
    pub fn next_draw(&mut self) -> u64 {
        let d = self.draws;
        self.draws += 1;
        d
    }

    /// Whole-function evaluations performed under this context.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub(crate) fn count_evaluation(&mut self) {
        self.evaluations += 1;
    }
}

impl Default for EvalCtx {
    fn default() -> Self {
        EvalCtx::direct()
    }
}

/// Handle to a value owned by a [`Builder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

pub trait Builder {
    fn apply(&mut self, op: &str, inputs: &[Var], config: &Config) -> Result<Vec<Var>>;
    fn constant(&mut self, t: Tensor) -> Var;
    fn info(&self, v: Var) -> ValueInfo;
}

impl<'b> dyn Builder + 'b {
    pub fn op(&mut self, op: &str, inputs: &[Var]) -> Result<Var> {
        self.op_with(op, inputs, &Config::new())
    }

    pub fn op_with(&mut self, op: &str, inputs: &[Var], config: &Config) -> Result<Var> {
        let mut out = self.apply(op, inputs, config)?;
        if out.len() != 1 {
            return Err(Error::shape(op, format!("expected one output, got {}", out.len())));
        }
        Ok(out.pop().unwrap())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.op("add", &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.op("sub", &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.op("mul", &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.op("div", &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.op("neg", &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.op("sum", &[a])
    }

    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        self.op("stop_gradient", &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.info(a).shape == shape {
            return Ok(a);
        }
        let cfg = Config::new().with("shape", crate::config::ConfigValue::Shape(shape.to_vec()));
        self.op_with("reshape", &[a], &cfg)
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.info(a).shape == shape {
            return Ok(a);
        }
        let cfg = Config::new().with("shape", crate::config::ConfigValue::Shape(shape.to_vec()));
        self.op_with("broadcast_to", &[a], &cfg)
    }

    pub fn cast(&mut self, a: Var, precision: Precision) -> Result<Var> {
        if self.info(a).precision == precision {
            return Ok(a);
        }
        let cfg = Config::new().with("precision", crate::config::ConfigValue::Precision(precision));
        self.op_with("cast", &[a], &cfg)
    }

    pub fn scalar(&mut self, value: f64, precision: Precision) -> Var {
        self.constant(Tensor::scalar(value, precision))
    }

    pub fn zeros(&mut self, info: &ValueInfo) -> Var {
        self.constant(Tensor::zeros(info))
    }

    /// Reduce a cotangent back to `target` after scalar broadcasting, and
    /// match the target's precision.
    pub fn unbroadcast(&mut self, g: Var, target: &ValueInfo) -> Result<Var> {
        let gi = self.info(g);
        let g = if target.is_scalar() && !gi.is_scalar() { self.sum(g)? } else { g };
        self.cast(g, target.precision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: String,
    pub config: Config,
    pub inputs: Vec<SlotId>,
    pub outputs: Vec<SlotId>,
}

/// A straight-line program over slots. Inputs and constants are slots with
/// no producing node; every node only reads slots defined before it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    pub slots: Vec<ValueInfo>,
    pub inputs: Vec<SlotId>,
    pub constants: Vec<(SlotId, Tensor)>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<SlotId>,
}

impl Graph {
    pub fn info(&self, s: SlotId) -> &ValueInfo {
        &self.slots[s.0]
    }

    pub fn input_infos(&self) -> Vec<ValueInfo> {
        self.inputs.iter().map(|&s| self.slots[s.0].clone()).collect()
    }

    pub fn output_infos(&self) -> Vec<ValueInfo> {
        self.outputs.iter().map(|&s| self.slots[s.0].clone()).collect()
    }

    pub fn uses(&self, op: &str) -> bool {
        self.nodes.iter().any(|n| n.op == op)
    }

    fn push_slot(&mut self, info: ValueInfo) -> SlotId {
        self.slots.push(info);
        SlotId(self.slots.len() - 1)
    }
}

/// Run every node of `graph` through `b`. Returns the value of every slot,
/// indexed by slot id.
pub fn run_graph(b: &mut dyn Builder, graph: &Graph, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.len() != graph.inputs.len() {
        return Err(Error::LengthMismatch { expected: graph.inputs.len(), actual: inputs.len() });
    }
    let mut env: Vec<Option<Var>> = vec![None; graph.slots.len()];
    for (&slot, &v) in graph.inputs.iter().zip(inputs) {
        env[slot.0] = Some(v);
    }
    for (slot, t) in &graph.constants {
        env[slot.0] = Some(b.constant(t.clone()));
    }
    for node in &graph.nodes {
        let ins: Vec<Var> = node
            .inputs
            .iter()
            .map(|s| env[s.0].ok_or_else(|| Error::shape(&node.op, "input slot not yet defined")))
            .collect::<Result<_>>()?;
        let outs = b.apply(&node.op, &ins, &node.config)?;
        if outs.len() != node.outputs.len() {
            return Err(Error::shape(&node.op, "output count changed since tracing"));
        }
        for (s, v) in node.outputs.iter().zip(outs) {
            env[s.0] = Some(v);
        }
    }
    env.into_iter()
        .map(|v| v.ok_or_else(|| Error::shape("graph", "slot never defined")))
        .collect()
}

/// Builder that evaluates primitives immediately.
pub struct Eager<'a> {
    registry: &'a Registry,
    ctx: &'a mut EvalCtx,
    arena: Vec<Tensor>,
}

impl<'a> Eager<'a> {
    pub fn new(registry: &'a Registry, ctx: &'a mut EvalCtx) -> Self {
        Eager { registry, ctx, arena: Vec::new() }
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.arena[v.0]
    }

    pub fn scenario(&self) -> Scenario {
        self.ctx.scenario
    }
}

impl Builder for Eager<'_> {
    fn apply(&mut self, op: &str, inputs: &[Var], config: &Config) -> Result<Vec<Var>> {
        let tensors: Vec<Tensor> = inputs.iter().map(|v| self.arena[v.0].clone()).collect();
        let outs = self.registry.apply_primal(op, self.ctx, &tensors, config)?;
        Ok(outs.into_iter().map(|t| self.constant(t)).collect())
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.arena.push(t);
        Var(self.arena.len() - 1)
    }

    fn info(&self, v: Var) -> ValueInfo {
        self.arena[v.0].info()
    }
}

/// Builder that records primitives into a new graph.
pub struct Tracer<'a> {
    registry: &'a Registry,
    graph: Graph,
}

impl<'a> Tracer<'a> {
    pub fn new(registry: &'a Registry) -> Self {
        Tracer { registry, graph: Graph::default() }
    }

    pub fn input(&mut self, info: ValueInfo) -> Var {
        let s = self.graph.push_slot(info);
        self.graph.inputs.push(s);
        Var(s.0)
    }

    pub fn finish(mut self, outputs: &[Var]) -> Graph {
        self.graph.outputs = outputs.iter().map(|v| SlotId(v.0)).collect();
        self.graph
    }
}

impl Builder for Tracer<'_> {
    fn apply(&mut self, op: &str, inputs: &[Var], config: &Config) -> Result<Vec<Var>> {
        let infos: Vec<ValueInfo> = inputs.iter().map(|v| self.graph.slots[v.0].clone()).collect();
        let out_infos = self.registry.infer(op, &infos, config)?;
        let outputs: Vec<SlotId> = out_infos.into_iter().map(|i| self.graph.push_slot(i)).collect();
        self.graph.nodes.push(Node {
            op: op.to_string(),
            config: config.clone(),
            inputs: inputs.iter().map(|v| SlotId(v.0)).collect(),
            outputs: outputs.clone(),
        });
        Ok(outputs.into_iter().map(|s| Var(s.0)).collect())
    }

    fn constant(&mut self, t: Tensor) -> Var {
        let s = self.graph.push_slot(t.info());
        self.graph.constants.push((s, t));
        Var(s.0)
    }

    fn info(&self, v: Var) -> ValueInfo {
        self.graph.slots[v.0].clone()
    }
}

/// A differentiable function R^n -> R^m: a traced graph plus the registry
/// whose rules give its primitives meaning.
#[derive(Clone)]
pub struct FlatFunction {
    pub id: String,
    pub graph: Arc<Graph>,
    pub registry: Arc<Registry>,
    /// 0 for a base function, k for its k-th gradient function.
    pub derivative_order: usize,
}

impl fmt::Debug for FlatFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlatFunction")
            .field("id", &self.id)
            .field("n", &self.input_arity())
            .field("m", &self.output_arity())
            .field("nodes", &self.graph.nodes.len())
            .field("derivative_order", &self.derivative_order)
            .finish()
    }
}

pub type Body<'f> = dyn Fn(&mut dyn Builder, &[Var]) -> Result<Vec<Var>> + 'f;

impl FlatFunction {
    /// Trace `body` over inputs with the given shapes and precisions.
    pub fn trace(
        id: impl Into<String>,
        registry: Arc<Registry>,
        inputs: &[ValueInfo],
        body: &Body<'_>,
    ) -> Result<Self> {
        let graph = {
            let mut tracer = Tracer::new(&registry);
            let vars: Vec<Var> = inputs.iter().map(|i| tracer.input(i.clone())).collect();
            let outs = body(&mut tracer, &vars)?;
            tracer.finish(&outs)
        };
        Ok(FlatFunction { id: id.into(), graph: Arc::new(graph), registry, derivative_order: 0 })
    }

    pub fn input_infos(&self) -> Vec<ValueInfo> {
        self.graph.input_infos()
    }

    pub fn output_infos(&self) -> Vec<ValueInfo> {
        self.graph.output_infos()
    }

    pub fn input_arity(&self) -> usize {
        self.graph.inputs.iter().map(|s| self.graph.info(*s).numel()).sum()
    }

    pub fn output_arity(&self) -> usize {
        self.graph.outputs.iter().map(|s| self.graph.info(*s).numel()).sum()
    }

    /// Lowest precision among the inputs (F64 when there are none).
    pub fn input_precision(&self) -> Precision {
        self.graph.inputs.iter().map(|s| self.graph.info(*s).precision).min().unwrap_or(Precision::F64)
    }

    pub fn output_precision(&self) -> Precision {
        self.graph.outputs.iter().map(|s| self.graph.info(*s).precision).min().unwrap_or(Precision::F64)
    }

    /// Split a flat vector into this function's input tensors.
    pub fn unflatten_input(&self, x: &[f64]) -> Result<Vec<Tensor>> {
        unflatten_infos(x, &self.input_infos())
    }

    pub fn evaluate_tensors(&self, inputs: &[Tensor], ctx: &mut EvalCtx) -> Result<Vec<Tensor>> {
        ctx.count_evaluation();
        let mut b = Eager::new(&self.registry, ctx);
        let vars: Vec<Var> = inputs.iter().map(|t| b.constant(t.clone())).collect();
        let env = run_graph(&mut b, &self.graph, &vars)?;
        Ok(self.graph.outputs.iter().map(|s| b.get(env[s.0]).clone()).collect())
    }

    /// Evaluate at a flat point, returning the flat output.
    pub fn evaluate(&self, x: &[f64], ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        let inputs = self.unflatten_input(x)?;
        Ok(flatten(&self.evaluate_tensors(&inputs, ctx)?))
    }
}
