//! Seed corpus: one JSON file per function under `corpus/`, embedded at
//! build time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::tensor::{numel, Precision};

use super::{derive_seed, Case, Origin, Provenance, TensorSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedFile {
    function: String,
    seeds: Vec<SeedEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedEntry {
    shapes: Vec<Vec<usize>>,
    #[serde(default = "f64_precision")]
    precision: Precision,
    #[serde(default)]
    data: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    generator: Option<Generator>,
    #[serde(default)]
    config: Config,
}

fn f64_precision() -> Precision {
    Precision::F64
}

/// Values drawn uniformly from `[low, high]`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct Generator {
    low: f64,
    high: f64,
}

macro_rules! corpus {
    ($($name:literal),* $(,)?) => {
        /// Raw JSON of a function's seed file.
        pub fn corpus_json(function: &str) -> Option<&'static str> {
            match function {
                $($name => Some(include_str!(concat!("../../corpus/", $name, ".json"))),)*
                _ => None,
            }
        }
    };
}

corpus!(
    "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt", "pow", "sin", "cos", "tanh", "sigmoid", "abs", "relu",
    "hardshrink", "sum", "mean", "matmul", "trace", "softmax", "kl_div", "reshape", "index_in_dim", "cast", "fig2",
    "cast_sum", "mlp_loss", "dropout", "crash",
);

/// The seed cases of `function`, in file order.
pub fn seeds(function: &str) -> Result<Vec<Case>> {
    let json = corpus_json(function).ok_or_else(|| Error::NoSeeds(function.to_string()))?;
    parse(function, json)
}

fn parse(function: &str, json: &str) -> Result<Vec<Case>> {
    let file: SeedFile =
        serde_json::from_str(json).map_err(|e| Error::Invalid(format!("seed file for `{function}`: {e}")))?;
    if file.function != function {
        return Err(Error::Invalid(format!("seed file for `{function}` names `{}`", file.function)));
    }
    file.seeds
        .into_iter()
        .enumerate()
        .map(|(index, s)| {
            let (data, origin) = match (s.data, s.generator) {
                (Some(d), None) => (d, Origin::Handwritten),
                (None, Some(g)) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, &[function, "seed", &index.to_string()]));
                    let d = s.shapes.iter().map(|sh| (0..numel(sh)).map(|_| rng.gen_range(g.low..=g.high)).collect()).collect();
                    (d, Origin::Derived)
                }
                _ => return Err(Error::Invalid(format!("seed {index} of `{function}` needs exactly one of data, generator"))),
            };
            if data.len() != s.shapes.len() {
                return Err(Error::Invalid(format!("seed {index} of `{function}`: one data list per shape")));
            }
            let inputs = s
                .shapes
                .into_iter()
                .zip(data)
                .map(|(shape, d)| TensorSpec::new(shape, s.precision, d))
                .collect::<Result<Vec<_>>>()?;
            Ok(Case { function: function.to_string(), inputs, config: s.config, provenance: Provenance::Seed { index, origin } })
        })
        .collect()
}
