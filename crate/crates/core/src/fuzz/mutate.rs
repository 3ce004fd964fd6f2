use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ConfigValue;
use crate::tensor::{numel, Precision};

use super::catalog::{FunctionDef, ParamKind};
use super::{Case, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MutationKind {
    Value,
    Shape,
    Precision,
    Config,
}

impl MutationKind {
    pub const ALL: [MutationKind; 4] =
        [MutationKind::Value, MutationKind::Shape, MutationKind::Precision, MutationKind::Config];
}

/// Small magnitude among the boundary values.
pub const BOUNDARY_DELTA: f64 = 1e-3;
pub const LARGE_MAGNITUDES: [f64; 4] = [1e2, -1e2, 1e3, -1e3];
pub const MAX_EXTENT: usize = 5;
pub const MAX_RANK: usize = 3;
pub const MAX_NUMEL: usize = 16;
const BOUNDARY_RATE: f64 = 0.2;

pub(super) fn applicable(def: &FunctionDef, case: &Case) -> Vec<MutationKind> {
    let mut kinds = Vec::with_capacity(4);
    if case.inputs.iter().any(|t| !t.data.is_empty()) {
        kinds.push(MutationKind::Value);
    }
    if !case.inputs.is_empty() {
        kinds.push(MutationKind::Shape);
        kinds.push(MutationKind::Precision);
    }
    if !def.params.is_empty() {
        kinds.push(MutationKind::Config);
    }
    kinds
}

/// A mutant of `parent`, or `None` when the rule has nothing to change.
pub(super) fn apply(def: &FunctionDef, parent: &Case, kind: MutationKind, rng: &mut ChaCha8Rng) -> Option<Case> {
    let mut case = parent.clone();
    match kind {
        MutationKind::Value => mutate_value(def, &mut case, rng)?,
        MutationKind::Shape => mutate_shape(def, &mut case, rng)?,
        MutationKind::Precision => mutate_precision(&mut case, rng)?,
        MutationKind::Config => mutate_config(def, &mut case, rng)?,
    }
    (case != *parent).then_some(case)
}

fn mutate_value(def: &FunctionDef, case: &mut Case, rng: &mut ChaCha8Rng) -> Option<()> {
    let candidates: Vec<usize> = (0..case.inputs.len()).filter(|&i| !case.inputs[i].data.is_empty()).collect();
    let i = *candidates.choose(rng)?;
    let t = &case.inputs[i];
    let mut data = t.data.clone();
    let count = rng.gen_range(1..=data.len().min(3));
    let boundary = rng.gen_bool(BOUNDARY_RATE);
    let mut pool = vec![0.0, 1.0, -1.0, BOUNDARY_DELTA, -BOUNDARY_DELTA];
    pool.extend((def.loci)(&case.config));
    let style = rng.gen_range(0..4);
    for _ in 0..count {
        let k = rng.gen_range(0..data.len());
        let v = data[k];
        data[k] = if boundary {
            *pool.choose(rng).unwrap()
        } else {
            match style {
                0 => v * (1.0 + rng.gen_range(-0.1..=0.1)) + rng.gen_range(-0.1..=0.1),
                1 => rng.gen_range(-3.0..=3.0),
                2 => 0.0,
                _ => *LARGE_MAGNITUDES.choose(rng).unwrap(),
            }
        };
    }
    case.inputs[i] = TensorSpec::new(t.shape.clone(), t.precision, data).ok()?;
    Some(())
}

fn mutate_shape(def: &FunctionDef, case: &mut Case, rng: &mut ChaCha8Rng) -> Option<()> {
    let i = rng.gen_range(0..case.inputs.len());
    let old = case.inputs[i].shape.clone();
    let mut s = old.clone();
    let rank = s.len();
    match rng.gen_range(0..6) {
        0 if rank > 0 => {
            let d = rng.gen_range(0..rank);
            s[d] = (s[d] + 1).min(MAX_EXTENT);
        }
        1 if rank > 0 => {
            let d = rng.gen_range(0..rank);
            s[d] = s[d].saturating_sub(1);
        }
        2 if rank < MAX_RANK => s.insert(rng.gen_range(0..=rank), rng.gen_range(1..=3)),
        3 if rank > 0 => {
            s.remove(rng.gen_range(0..rank));
        }
        4 if rank > 0 => s[rng.gen_range(0..rank)] = 0,
        5 if rank == 2 && s[0] == s[1] => s[1] = (s[1] + 1).min(MAX_EXTENT),
        _ if rank < MAX_RANK => s.push(rng.gen_range(2..=3)),
        _ => {
            let d = rng.gen_range(0..rank);
            s[d] = s[d].saturating_sub(1);
        }
    }
    if numel(&s) > MAX_NUMEL {
        return None;
    }
    for t in case.inputs.iter_mut() {
        if t.shape == old {
            let data = resize(&t.data, numel(&s), rng);
            *t = TensorSpec::new(s.clone(), t.precision, data).ok()?;
        }
    }
    if i == 0 && def.params.iter().any(|p| p.kind == ParamKind::Shape) {
        case.config.set("shape", ConfigValue::Shape(factorize(numel(&s), rng)));
    }
    Some(())
}

/// Old values repeated to the new length; fresh positive values if there were none.
fn resize(data: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if data.is_empty() {
        return (0..n).map(|_| rng.gen_range(0.5..=2.0)).collect();
    }
    (0..n).map(|k| data[k % data.len()]).collect()
}

/// A random shape with `n` elements and rank 1 to 3.
fn factorize(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=MAX_RANK);
    if n == 0 {
        let mut s = vec![0];
        s.extend((1..rank).map(|_| rng.gen_range(1..=3)));
        s.shuffle(rng);
        return s;
    }
    let mut left = n;
    let mut s = Vec::with_capacity(rank);
    for _ in 1..rank {
        let divisors: Vec<usize> = (1..=left).filter(|d| left % d == 0).collect();
        let d = *divisors.choose(rng).unwrap();
        s.push(d);
        left /= d;
    }
    s.push(left);
    s
}

fn mutate_precision(case: &mut Case, rng: &mut ChaCha8Rng) -> Option<()> {
    let current = case.inputs.first()?.precision;
    let choices: Vec<Precision> = Precision::ALL.into_iter().filter(|&p| p != current).collect();
    let p = *choices.choose(rng)?;
    let only = (case.inputs.len() > 1 && rng.gen_bool(0.25)).then(|| rng.gen_range(0..case.inputs.len()));
    for (k, t) in case.inputs.iter_mut().enumerate() {
        if only.map_or(true, |o| o == k) {
            *t = TensorSpec::new(t.shape.clone(), p, t.data.clone()).ok()?;
        }
    }
    Some(())
}

fn mutate_config(def: &FunctionDef, case: &mut Case, rng: &mut ChaCha8Rng) -> Option<()> {
    let param = def.params.choose(rng)?;
    let shape = case.inputs.first().map(|t| t.shape.clone()).unwrap_or_default();
    let value = match param.kind {
        ParamKind::Float(notable) => {
            let cur = case.config.float_or(def.id, param.name, 0.5).unwrap_or(0.5);
            if rng.gen_bool(0.5) {
                ConfigValue::Float(*notable.choose(rng)?)
            } else {
                ConfigValue::Float(cur + rng.gen_range(-0.5..=0.5))
            }
        }
        ParamKind::Index => {
            let dim = case.config.int_or(def.id, "dim", 0).unwrap_or(0);
            let len = usize::try_from(dim).ok().and_then(|d| shape.get(d)).copied().unwrap_or(1) as i64;
            let picks = [-len - 1, -len, -1, 0, 1, len - 1, len, len + 1, rng.gen_range(-2 * len - 1..=2 * len + 1)];
            ConfigValue::Int(*picks.choose(rng)?)
        }
        ParamKind::Dim => {
            let r = shape.len() as i64;
            let mut picks: Vec<i64> = (0..r).collect();
            picks.extend([-1, r]);
            ConfigValue::Int(*picks.choose(rng)?)
        }
        ParamKind::Precision => ConfigValue::Precision(*Precision::ALL.choose(rng)?),
        ParamKind::Shape => {
            let n = numel(&shape);
            let target = if rng.gen_bool(0.15) { n + 1 } else { n };
            ConfigValue::Shape(factorize(target, rng))
        }
    };
    case.config.set(param.name, value);
    Some(())
}
