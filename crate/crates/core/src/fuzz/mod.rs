//! Input generation: a handwritten seed corpus per function, mutated by value,
//! shape, precision and config rules.

mod catalog;
mod corpus;
mod mutate;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{EvalCtx, FlatFunction, Scenario};
use crate::numdiff::NdConfig;
use crate::registry::Registry;
use crate::tensor::{flatten, Precision, Tensor, ValueInfo};

pub use catalog::{catalog, lookup, FunctionDef, ParamKind, ParamSpec};
pub use corpus::{corpus_json, seeds};
pub use mutate::{MutationKind, BOUNDARY_DELTA, LARGE_MAGNITUDES, MAX_EXTENT, MAX_NUMEL, MAX_RANK};

/// One input tensor of a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub shape: Vec<usize>,
    pub precision: Precision,
    pub data: Vec<f64>,
}

impl TensorSpec {
    pub fn new(shape: Vec<usize>, precision: Precision, data: Vec<f64>) -> Result<Self> {
        let t = Tensor::new(shape, precision, data)?;
        Ok(TensorSpec::from_tensor(&t))
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        TensorSpec { shape: t.shape().to_vec(), precision: t.precision(), data: t.data().to_vec() }
    }

    pub fn tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.precision, self.data.clone())
    }

    pub fn info(&self) -> ValueInfo {
        ValueInfo::new(self.shape.clone(), self.precision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Handwritten,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Seed { index: usize, origin: Origin },
    Mutant { rule: MutationKind, parent: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub function: String,
    pub inputs: Vec<TensorSpec>,
    #[serde(default)]
    pub config: Config,
    pub provenance: Provenance,
}

impl Case {
    pub fn infos(&self) -> Vec<ValueInfo> {
        self.inputs.iter().map(TensorSpec::info).collect()
    }

    /// The flat input point.
    pub fn point(&self) -> Result<Vec<f64>> {
        let ts = self.inputs.iter().map(TensorSpec::tensor).collect::<Result<Vec<_>>>()?;
        Ok(flatten(&ts))
    }

    /// Trace the case's function over its input shapes.
    pub fn build(&self, registry: Arc<Registry>) -> Result<FlatFunction> {
        let def = lookup(&self.function)?;
        def.trace(registry, &self.infos(), &self.config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum Validity {
    Valid,
    Invalid(String),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Arity, shape, config and domain checks against the clean registry.
/// Domain checks include the points finite differences will probe.
pub fn validate(case: &Case) -> Validity {
    let invalid = |kind: &str, e: &dyn std::fmt::Display| Validity::Invalid(format!("{kind}: {e}"));
    let f = match case.build(Registry::clean()) {
        Ok(f) => f,
        Err(e) => return invalid(e.kind(), &e),
    };
    let x = match case.point() {
        Ok(x) => x,
        Err(e) => return invalid("shape", &e),
    };
    let mut ctx = EvalCtx::new(Scenario::Direct, 0);
    match f.evaluate(&x, &mut ctx) {
        Ok(y) if y.iter().any(|v| !v.is_finite()) => return Validity::Invalid("range: non-finite output".into()),
        Ok(_) | Err(Error::Crash { .. }) => {}
        Err(e) => return invalid(e.kind(), &e),
    }
    if f.input_precision() == Precision::F64 {
        let nd = NdConfig::default();
        let mut probe = x.clone();
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                probe[i] = x[i] + sign * nd.step(x[i]);
                match f.evaluate(&probe, &mut ctx) {
                    Ok(y) if y.iter().any(|v| !v.is_finite()) => {
                        return Validity::Invalid("range: non-finite output near the point".into())
                    }
                    Ok(_) | Err(Error::Crash { .. }) => {}
                    Err(e) => return invalid(e.kind(), &format!("near the point: {e}")),
                }
            }
            probe[i] = x[i];
        }
    }
    Validity::Valid
}

/// Stable 64-bit seed for one purpose of one function.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Fraction of a stream that may be invalid.
pub const INVALID_CAP: f64 = 0.3;

/// `budget` cases for `function`: its seeds first, then mutants of earlier
/// valid cases. A pure function of its arguments.
pub fn generate(function: &str, budget: usize, seed: u64) -> Result<Vec<Case>> {
    let def = lookup(function)?;
    let seeds = seeds(def.id)?;
    if seeds.is_empty() {
        return Err(Error::NoSeeds(function.to_string()));
    }
    let mut out: Vec<Case> = seeds.into_iter().take(budget).collect();
    let mut valid: Vec<usize> = (0..out.len()).filter(|&i| validate(&out[i]).is_valid()).collect();
    let mut invalid = out.len() - valid.len();
    if valid.is_empty() && out.len() < budget {
        return Err(Error::NoSeeds(format!("{function} (no valid seed)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[def.id, "generate"]));
    while out.len() < budget {
        let mut accepted = None;
        for _ in 0..200 {
            let parent = valid[rng.gen_range(0..valid.len())];
            let kinds = mutate::applicable(def, &out[parent]);
            let kind = kinds[rng.gen_range(0..kinds.len())];
            let Some(mut case) = mutate::apply(def, &out[parent], kind, &mut rng) else { continue };
            case.provenance = Provenance::Mutant { rule: kind, parent };
            let ok = validate(&case).is_valid();
            if ok || (invalid + 1) as f64 <= INVALID_CAP * (out.len() + 1) as f64 {
                accepted = Some((case, ok));
                break;
            }
        }
        let (case, ok) = match accepted {
            Some(c) => c,
            None => {
                let parent = valid[rng.gen_range(0..valid.len())];
                let mut c = out[parent].clone();
                c.provenance = Provenance::Mutant { rule: MutationKind::Value, parent };
                (c, true)
            }
        };
        if ok {
            valid.push(out.len());
        } else {
            invalid += 1;
        }
        out.push(case);
    }
    Ok(out)
}
