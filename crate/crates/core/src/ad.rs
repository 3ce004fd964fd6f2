//! Reverse mode over a recorded tape, forward mode with tangents carried in
//! lockstep, Jacobian assembly from basis probes, and gradient functions.
//!
//! The backward and tangent passes are written against [`Builder`], so the
//! same code computes numbers (under [`Eager`]) and builds gradient graphs
//! (under [`Tracer`](crate::graph::Tracer)) that can be differentiated again.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{run_graph, Builder, Eager, EvalCtx, FlatFunction, Graph, Node, Scenario, SlotId, Var};
use crate::registry::{Registry, RuleArgs};
use crate::tensor::{flatten, unflatten_infos, Tensor, ValueInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reverse,
    Forward,
}

impl Mode {
    pub fn scenario(self) -> Scenario {
        match self {
            Mode::Reverse => Scenario::Reverse,
            Mode::Forward => Scenario::Forward,
        }
    }
}

/// Row-major m x n matrix; row = output slot, column = input slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl JacobianMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        JacobianMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }
}

fn one_hot(infos: &[ValueInfo], k: usize) -> Result<Vec<Tensor>> {
    let n = infos.iter().map(ValueInfo::numel).sum();
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    unflatten_infos(&v, infos)
}

fn rule_inputs(saved: bool, slots: &[SlotId], env: &[Option<Var>]) -> Vec<Option<Var>> {
    slots.iter().map(|s| if saved { env[s.0] } else { None }).collect()
}

fn accumulate(b: &mut dyn Builder, ct: &mut [Option<Var>], s: SlotId, g: Var) -> Result<()> {
    ct[s.0] = Some(match ct[s.0] {
        Some(prev) => b.add(prev, g)?,
        None => g,
    });
    Ok(())
}

/// Propagate output cotangents back to the inputs. `env` holds the forward
/// values available to the rules; anything a rule did not declare is hidden
/// from it.
#[allow(clippy::too_many_arguments)]
fn backward(
    b: &mut dyn Builder,
    registry: &Registry,
    slots: &[ValueInfo],
    nodes: &[&Node],
    env: &[Option<Var>],
    outputs: &[SlotId],
    seeds: &[Var],
    inputs: &[SlotId],
) -> Result<Vec<Var>> {
    let mut ct: Vec<Option<Var>> = vec![None; slots.len()];
    for (&s, &g) in outputs.iter().zip(seeds) {
        accumulate(b, &mut ct, s, g)?;
    }
    for node in nodes.iter().rev() {
        if node.outputs.iter().all(|s| ct[s.0].is_none()) {
            continue;
        }
        let g: Vec<Var> = node.outputs.iter().map(|s| ct[s.0].unwrap_or_else(|| b.zeros(&slots[s.0]))).collect();
        let prim = registry.lookup(&node.op)?;
        let input_info: Vec<ValueInfo> = node.inputs.iter().map(|s| slots[s.0].clone()).collect();
        let output_info: Vec<ValueInfo> = node.outputs.iter().map(|s| slots[s.0].clone()).collect();
        let saved_in = rule_inputs(prim.saves.inputs, &node.inputs, env);
        let saved_out = rule_inputs(prim.saves.outputs, &node.outputs, env);
        let args = RuleArgs {
            op: &node.op,
            config: &node.config,
            inputs: &saved_in,
            outputs: &saved_out,
            input_info: &input_info,
            output_info: &output_info,
        };
        let gi = (prim.vjp)(b, &args, &g)?;
        if gi.len() != node.inputs.len() {
            return Err(Error::shape(&node.op, "VJP returned the wrong number of cotangents"));
        }
        for (&s, v) in node.inputs.iter().zip(gi) {
            if b.info(v).shape != slots[s.0].shape {
                return Err(Error::shape(&node.op, "VJP cotangent shape differs from its input"));
            }
            accumulate(b, &mut ct, s, v)?;
        }
    }
    Ok(inputs.iter().map(|s| ct[s.0].unwrap_or_else(|| b.zeros(&slots[s.0]))).collect())
}

/// Run `graph` and its tangents together. `None` tangents are structurally
/// zero and skip the JVP rule. Returns every slot's value and the output
/// tangents.
fn lockstep(
    b: &mut dyn Builder,
    registry: &Registry,
    graph: &Graph,
    inputs: &[Var],
    tangents: &[Option<Var>],
) -> Result<(Vec<Option<Var>>, Vec<Var>)> {
    let mut env: Vec<Option<Var>> = vec![None; graph.slots.len()];
    let mut tan: Vec<Option<Var>> = vec![None; graph.slots.len()];
    for ((&s, &v), &t) in graph.inputs.iter().zip(inputs).zip(tangents) {
        env[s.0] = Some(v);
        tan[s.0] = t;
    }
    for (s, t) in &graph.constants {
        env[s.0] = Some(b.constant(t.clone()));
    }
    for node in &graph.nodes {
        let ins: Vec<Var> = node.inputs.iter().map(|s| env[s.0].expect("topological order")).collect();
        let outs = b.apply(&node.op, &ins, &node.config)?;
        for (s, &v) in node.outputs.iter().zip(&outs) {
            env[s.0] = Some(v);
        }
        if node.inputs.iter().all(|s| tan[s.0].is_none()) {
            continue;
        }
        let tin: Vec<Var> = node.inputs.iter().map(|s| tan[s.0].unwrap_or_else(|| b.zeros(&graph.slots[s.0]))).collect();
        let input_info: Vec<ValueInfo> = ins.iter().map(|&v| b.info(v)).collect();
        let output_info: Vec<ValueInfo> = outs.iter().map(|&v| b.info(v)).collect();
        let ins_opt: Vec<Option<Var>> = ins.iter().copied().map(Some).collect();
        let outs_opt: Vec<Option<Var>> = outs.iter().copied().map(Some).collect();
        let args = RuleArgs {
            op: &node.op,
            config: &node.config,
            inputs: &ins_opt,
            outputs: &outs_opt,
            input_info: &input_info,
            output_info: &output_info,
        };
        let prim = registry.lookup(&node.op)?;
        let tout = (prim.jvp)(b, &args, &tin)?;
        if tout.len() != outs.len() {
            return Err(Error::shape(&node.op, "JVP returned the wrong number of tangents"));
        }
        for ((s, v), info) in node.outputs.iter().zip(tout).zip(&output_info) {
            if b.info(v).shape != info.shape {
                return Err(Error::shape(&node.op, "JVP tangent shape differs from its output"));
            }
            tan[s.0] = Some(v);
        }
    }
    let out_tangents = graph.outputs.iter().map(|s| tan[s.0].unwrap_or_else(|| b.zeros(&graph.slots[s.0]))).collect();
    Ok((env, out_tangents))
}

/// One recorded step: the node and the forward values its VJP reads.
#[derive(Debug, Clone)]
pub struct TapeNode {
    pub node: Node,
    pub saved: Vec<(SlotId, Tensor)>,
}

/// Record of one forward phase under reverse-mode AD.
#[derive(Debug, Clone)]
pub struct Tape {
    graph: Arc<Graph>,
    registry: Arc<Registry>,
    pub inputs: Vec<Tensor>,
    pub nodes: Vec<TapeNode>,
    pub outputs: Vec<Tensor>,
}

impl Tape {
    /// Run `f` at `x`, keeping only the values the VJP rules declare.
    pub fn record(f: &FlatFunction, x: &[f64], ctx: &mut EvalCtx) -> Result<Tape> {
        let inputs = f.unflatten_input(x)?;
        ctx.count_evaluation();
        let graph = &f.graph;
        let mut env: Vec<Option<Tensor>> = vec![None; graph.slots.len()];
        for (s, t) in graph.inputs.iter().zip(&inputs) {
            env[s.0] = Some(t.clone());
        }
        for (s, t) in &graph.constants {
            env[s.0] = Some(t.clone());
        }
        let mut nodes = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let ins: Vec<Tensor> = node.inputs.iter().map(|s| env[s.0].clone().expect("topological order")).collect();
            let outs = f.registry.apply_primal(&node.op, ctx, &ins, &node.config)?;
            for (s, t) in node.outputs.iter().zip(outs) {
                env[s.0] = Some(t);
            }
            let prim = f.registry.lookup(&node.op)?;
            let mut saved = Vec::new();
            if prim.saves.inputs {
                saved.extend(node.inputs.iter().map(|&s| (s, env[s.0].clone().unwrap())));
            }
            if prim.saves.outputs {
                saved.extend(node.outputs.iter().map(|&s| (s, env[s.0].clone().unwrap())));
            }
            nodes.push(TapeNode { node: node.clone(), saved });
        }
        let outputs = graph.outputs.iter().map(|s| env[s.0].clone().unwrap()).collect();
        Ok(Tape { graph: graph.clone(), registry: f.registry.clone(), inputs, nodes, outputs })
    }

    pub fn output(&self) -> Vec<f64> {
        flatten(&self.outputs)
    }

    /// Re-run the recorded nodes from the recorded inputs.
    pub fn replay(&self, ctx: &mut EvalCtx) -> Result<Vec<Tensor>> {
        let mut b = Eager::new(&self.registry, ctx);
        let vars: Vec<Var> = self.inputs.iter().map(|t| b.constant(t.clone())).collect();
        let env = run_graph(&mut b, &self.graph, &vars)?;
        Ok(self.graph.outputs.iter().map(|s| b.get(env[s.0]).clone()).collect())
    }

    /// `v . J` for a flat cotangent `v` over the outputs.
    pub fn backward(&self, v: &[f64], ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        let graph = &self.graph;
        let seeds = unflatten_infos(v, &graph.output_infos())?;
        let mut b = Eager::new(&self.registry, ctx);
        let mut env: Vec<Option<Var>> = vec![None; graph.slots.len()];
        for n in &self.nodes {
            for (s, t) in &n.saved {
                if env[s.0].is_none() {
                    env[s.0] = Some(b.constant(t.clone()));
                }
            }
        }
        let seeds: Vec<Var> = seeds.into_iter().map(|t| b.constant(t)).collect();
        let nodes: Vec<&Node> = self.nodes.iter().map(|n| &n.node).collect();
        let ct = backward(&mut b, &self.registry, &graph.slots, &nodes, &env, &graph.outputs, &seeds, &graph.inputs)?;
        let tensors: Vec<Tensor> = ct.iter().map(|&v| b.get(v).clone()).collect();
        Ok(flatten(&tensors))
    }
}

/// `(f(x), v . J(x))` from one forward phase and one backward phase.
pub fn vjp(f: &FlatFunction, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ctx = EvalCtx::new(Scenario::Reverse, 0);
    vjp_in(f, x, v, &mut ctx)
}

pub fn vjp_in(f: &FlatFunction, x: &[f64], v: &[f64], ctx: &mut EvalCtx) -> Result<(Vec<f64>, Vec<f64>)> {
    if v.len() != f.output_arity() {
        return Err(Error::LengthMismatch { expected: f.output_arity(), actual: v.len() });
    }
    let tape = Tape::record(f, x, ctx)?;
    let vj = tape.backward(v, ctx)?;
    Ok((tape.output(), vj))
}

/// `(f(x), J(x) . u)` from one forward pass.
pub fn jvp(f: &FlatFunction, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ctx = EvalCtx::new(Scenario::Forward, 0);
    jvp_in(f, x, u, &mut ctx)
}

pub fn jvp_in(f: &FlatFunction, x: &[f64], u: &[f64], ctx: &mut EvalCtx) -> Result<(Vec<f64>, Vec<f64>)> {
    let infos = f.input_infos();
    let inputs = f.unflatten_input(x)?;
    let tangents = unflatten_infos(u, &infos)?;
    ctx.count_evaluation();
    let mut b = Eager::new(&f.registry, ctx);
    let xs: Vec<Var> = inputs.into_iter().map(|t| b.constant(t)).collect();
    let ts: Vec<Option<Var>> = tangents.into_iter().map(|t| Some(b.constant(t))).collect();
    let (env, tout) = lockstep(&mut b, &f.registry, &f.graph, &xs, &ts)?;
    let y: Vec<Tensor> = f.graph.outputs.iter().map(|s| b.get(env[s.0].unwrap()).clone()).collect();
    let ju: Vec<Tensor> = tout.iter().map(|&v| b.get(v).clone()).collect();
    Ok((flatten(&y), flatten(&ju)))
}

/// Full Jacobian: m backward passes over one tape, or n tangent passes.
pub fn jacobian(f: &FlatFunction, x: &[f64], mode: Mode) -> Result<JacobianMatrix> {
    let mut ctx = EvalCtx::new(mode.scenario(), 0);
    Ok(jacobian_in(f, x, mode, &mut ctx)?.1)
}

/// Like [`jacobian`], also returning the output computed under `mode`.
pub fn jacobian_in(f: &FlatFunction, x: &[f64], mode: Mode, ctx: &mut EvalCtx) -> Result<(Vec<f64>, JacobianMatrix)> {
    let (m, n) = (f.output_arity(), f.input_arity());
    if x.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: x.len() });
    }
    let mut jac = JacobianMatrix::zeros(m, n);
    match mode {
        Mode::Reverse => {
            let tape = Tape::record(f, x, ctx)?;
            for i in 0..m {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                let row = tape.backward(&e, ctx)?;
                jac.data[i * n..(i + 1) * n].copy_from_slice(&row);
            }
            Ok((tape.output(), jac))
        }
        Mode::Forward => {
            let mut y = None;
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let (yj, col) = jvp_in(f, x, &e, ctx)?;
                for (i, c) in col.into_iter().enumerate() {
                    jac.set(i, j, c);
                }
                y.get_or_insert(yj);
            }
            let y = match y {
                Some(y) => y,
                None => jvp_in(f, x, &[], ctx)?.0,
            };
            Ok((y, jac))
        }
    }
}

/// The function `x -> flatten(jacobian(f, x, mode))`, as a new traced graph.
pub fn grad_function(f: &FlatFunction, mode: Mode) -> Result<FlatFunction> {
    let registry = f.registry.clone();
    let in_infos = f.input_infos();
    let out_infos = f.output_infos();
    let graph = f.graph.clone();
    let body = |b: &mut dyn Builder, xs: &[Var]| -> Result<Vec<Var>> {
        let m: usize = out_infos.iter().map(ValueInfo::numel).sum();
        let n: usize = in_infos.iter().map(ValueInfo::numel).sum();
        match mode {
            Mode::Reverse => {
                let env: Vec<Option<Var>> = run_graph(b, &graph, xs)?.into_iter().map(Some).collect();
                let nodes: Vec<&Node> = graph.nodes.iter().collect();
                let mut rows = Vec::with_capacity(m * in_infos.len());
                for i in 0..m {
                    let seeds: Vec<Var> = one_hot(&out_infos, i)?.into_iter().map(|t| b.constant(t)).collect();
                    rows.extend(backward(b, &registry, &graph.slots, &nodes, &env, &graph.outputs, &seeds, &graph.inputs)?);
                }
                Ok(rows)
            }
            Mode::Forward => {
                let mut cols = Vec::with_capacity(n);
                for j in 0..n {
                    let ts: Vec<Option<Var>> = one_hot(&in_infos, j)?.into_iter().map(|t| Some(b.constant(t))).collect();
                    let (_, tout) = lockstep(b, &registry, &graph, xs, &ts)?;
                    cols.push(b.op("concat", &tout)?);
                }
                let stacked = b.op("concat", &cols)?;
                let by_col = b.reshape(stacked, &[n, m])?;
                Ok(vec![b.op("transpose", &[by_col])?])
            }
        }
    };
    let mut g = FlatFunction::trace(format!("grad({})", f.id), f.registry.clone(), &f.input_infos(), &body)?;
    g.derivative_order = f.derivative_order + 1;
    Ok(g)
}

/// Second derivatives as the Jacobian of the reverse-mode gradient function:
/// an (m*n) x n matrix.
pub fn hessian(f: &FlatFunction, x: &[f64], mode: Mode) -> Result<JacobianMatrix> {
    jacobian(&grad_function(f, Mode::Reverse)?, x, mode)
}
