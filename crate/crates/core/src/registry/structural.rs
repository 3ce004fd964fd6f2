//! Shape and precision rearrangements. All of these are linear.

use crate::config::{Config, ConfigValue};
use crate::error::{Error, Result};
use crate::graph::{Builder, EvalCtx, Var};
use crate::tensor::{numel, Tensor, ValueInfo};

use super::elementwise::base;
use super::{OpDoc, Primitive, Role};

const fn doc(primal: &'static str, vjp: &'static str, jvp: &'static str, loci: &'static str) -> OpDoc {
    OpDoc { primal, vjp, jvp, loci }
}

pub(super) fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            infer: |inputs, cfg| {
                let shape = cfg.shape("reshape", "shape")?;
                if numel(&shape) != inputs[0].numel() {
                    return Err(Error::shape("reshape", format!("cannot reshape {:?} to {shape:?}", inputs[0].shape)));
                }
                Ok(vec![ValueInfo::new(shape, inputs[0].precision)])
            },
            primal: |_, x, cfg| Ok(vec![x[0].reshaped(cfg.shape("reshape", "shape")?)?]),
            vjp: |b, args, g| Ok(vec![b.reshape(g[0], &args.input_info[0].shape)?]),
            jvp: |b, args, t| Ok(vec![b.reshape(t[0], &args.output_info[0].shape)?]),
            ..base("reshape", 1, doc("same elements, new `shape`", "reshape g back", "reshape t", "none"))
        },
        Primitive {
            infer: |inputs, cfg| {
                let sel = Selection::resolve(&inputs[0].shape, cfg)?;
                Ok(vec![ValueInfo::new(sel.out_shape(&inputs[0].shape), inputs[0].precision)])
            },
            primal: index_in_dim_primal,
            vjp: |b, args, g| {
                let info = &args.input_info[0];
                let sel = Selection::resolve(&info.shape, args.config)?;
                let cfg = Config::new()
                    .with("index", ConfigValue::Int(sel.index as i64))
                    .with("dim", ConfigValue::Int(sel.dim as i64))
                    .with("shape", ConfigValue::Shape(info.shape.clone()));
                Ok(vec![b.op_with("index_scatter", &[g[0]], &cfg)?])
            },
            jvp: |b, args, t| Ok(vec![b.op_with("index_in_dim", &[t[0]], args.config)?]),
            ..base(
                "index_in_dim",
                1,
                doc(
                    "slice `index` of axis `dim`, keeping the axis; negative index counts from the end, then clamps",
                    "scatter g into zeros at the selected slice",
                    "index_in_dim(t)",
                    "none",
                ),
            )
        },
        Primitive {
            infer: |inputs, cfg| {
                let prec = cfg.precision("cast", "precision")?;
                Ok(vec![ValueInfo::new(inputs[0].shape.clone(), prec)])
            },
            primal: |_, x, cfg| Ok(vec![x[0].with_precision(cfg.precision("cast", "precision")?)]),
            vjp: |b, args, g| Ok(vec![b.cast(g[0], args.input_info[0].precision)?]),
            jvp: |b, args, t| Ok(vec![b.cast(t[0], args.output_info[0].precision)?]),
            ..base("cast", 1, doc("x rounded to `precision`", "cast g to the input precision", "cast t", "none"))
        },
        Primitive {
            arity: None,
            infer: |inputs, _| {
                let n = inputs.iter().map(ValueInfo::numel).sum();
                let p = inputs.iter().map(|i| i.precision).max().unwrap_or(crate::tensor::Precision::F64);
                Ok(vec![ValueInfo::new(vec![n], p)])
            },
            primal: |_, x, _| {
                let p = x.iter().map(Tensor::precision).max().unwrap_or(crate::tensor::Precision::F64);
                let n = x.iter().map(Tensor::numel).sum();
                Ok(vec![Tensor::new(vec![n], p, crate::tensor::flatten(x))?])
            },
            vjp: |b, args, g| {
                let mut start = 0;
                let mut out = Vec::with_capacity(args.input_info.len());
                for info in args.input_info {
                    let s = slice(b, g[0], start, info.numel())?;
                    let r = b.reshape(s, &info.shape)?;
                    out.push(b.cast(r, info.precision)?);
                    start += info.numel();
                }
                Ok(out)
            },
            jvp: |b, _, t| Ok(vec![b.op("concat", t)?]),
            role: Role::Auxiliary,
            ..base("concat", 0, doc("flattened inputs joined end to end", "slices of g", "concat(t...)", "none"))
        },
        Primitive {
            infer: |inputs, cfg| {
                let (start, len) = slice_bounds(cfg)?;
                if start + len > inputs[0].numel() {
                    return Err(Error::shape("slice", format!("[{start}, {}) exceeds {} elements", start + len, inputs[0].numel())));
                }
                Ok(vec![ValueInfo::new(vec![len], inputs[0].precision)])
            },
            primal: |_, x, cfg| {
                let (start, len) = slice_bounds(cfg)?;
                Ok(vec![Tensor::new(vec![len], x[0].precision(), x[0].data()[start..start + len].to_vec())?])
            },
            vjp: |b, args, g| {
                let (start, len) = slice_bounds(args.config)?;
                let info = &args.input_info[0];
                let p = b.info(g[0]).precision;
                let before = b.zeros(&ValueInfo::new(vec![start], p));
                let after = b.zeros(&ValueInfo::new(vec![info.numel() - start - len], p));
                let flat = b.op("concat", &[before, g[0], after])?;
                let r = b.reshape(flat, &info.shape)?;
                Ok(vec![b.cast(r, info.precision)?])
            },
            jvp: |b, args, t| Ok(vec![b.op_with("slice", &[t[0]], args.config)?]),
            role: Role::Auxiliary,
            ..base("slice", 1, doc("flat elements [start, start+len)", "pad g with zeros", "slice(t)", "none"))
        },
        Primitive {
            infer: |inputs, cfg| {
                let shape = cfg.shape("index_scatter", "shape")?;
                let sel = Selection::exact(&shape, cfg)?;
                if inputs[0].shape != sel.out_shape(&shape) {
                    return Err(Error::shape("index_scatter", format!("{:?} does not fit slice of {shape:?}", inputs[0].shape)));
                }
                Ok(vec![ValueInfo::new(shape, inputs[0].precision)])
            },
            primal: |_, x, cfg| {
                let shape = cfg.shape("index_scatter", "shape")?;
                let sel = Selection::exact(&shape, cfg)?;
                let mut out = vec![0.0; numel(&shape)];
                for (k, pos) in sel.positions(&shape).enumerate() {
                    out[pos] = x[0].data()[k];
                }
                Ok(vec![Tensor::new(shape, x[0].precision(), out)?])
            },
            vjp: |b, args, g| {
                let cfg = Config::new()
                    .with("index", args.config.get("index").cloned().unwrap_or(ConfigValue::Int(0)))
                    .with("dim", args.config.get("dim").cloned().unwrap_or(ConfigValue::Int(0)));
                Ok(vec![b.op_with("index_in_dim", &[g[0]], &cfg)?])
            },
            jvp: |b, args, t| Ok(vec![b.op_with("index_scatter", &[t[0]], args.config)?]),
            role: Role::Auxiliary,
            ..base("index_scatter", 1, doc("zeros of `shape` with x at the slice", "index_in_dim(g)", "index_scatter(t)", "none"))
        },
    ]
}

fn slice_bounds(cfg: &Config) -> Result<(usize, usize)> {
    let start = cfg.int("slice", "start")?;
    let len = cfg.int("slice", "len")?;
    if start < 0 || len < 0 {
        return Err(Error::config("slice", "start and len must be non-negative"));
    }
    Ok((start as usize, len as usize))
}

fn slice(b: &mut dyn Builder, x: Var, start: usize, len: usize) -> Result<Var> {
    let cfg = Config::new().with("start", ConfigValue::Int(start as i64)).with("len", ConfigValue::Int(len as i64));
    b.op_with("slice", &[x], &cfg)
}

/// One slice along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) struct Selection {
    pub dim: usize,
    pub index: usize,
}

impl Selection {
    fn dim(shape: &[usize], cfg: &Config) -> Result<usize> {
        let dim = cfg.int_or("index_in_dim", "dim", 0)?;
        if dim < 0 || dim as usize >= shape.len() {
            return Err(Error::shape("index_in_dim", format!("dim {dim} out of range for rank {}", shape.len())));
        }
        if shape[dim as usize] == 0 {
            return Err(Error::shape("index_in_dim", format!("axis {dim} is empty")));
        }
        Ok(dim as usize)
    }

    /// Normalize a negative index once, then clamp into the axis.
    pub fn resolve(shape: &[usize], cfg: &Config) -> Result<Selection> {
        Selection::resolve_with(shape, cfg, 1)
    }

    /// `normalizations` counts how many times the axis length is added to a
    /// negative index.
    pub fn resolve_with(shape: &[usize], cfg: &Config, normalizations: i64) -> Result<Selection> {
        let dim = Selection::dim(shape, cfg)?;
        let len = shape[dim] as i64;
        let mut index = cfg.int_or("index_in_dim", "index", 0)?;
        if index < 0 {
            index += normalizations * len;
        }
        Ok(Selection { dim, index: index.clamp(0, len - 1) as usize })
    }

    /// A non-negative index that must already be in range.
    fn exact(shape: &[usize], cfg: &Config) -> Result<Selection> {
        let dim = Selection::dim(shape, cfg)?;
        let index = cfg.int("index_scatter", "index")?;
        if index < 0 || index as usize >= shape[dim] {
            return Err(Error::shape("index_scatter", format!("index {index} out of range")));
        }
        Ok(Selection { dim, index: index as usize })
    }

    pub fn out_shape(&self, shape: &[usize]) -> Vec<usize> {
        let mut s = shape.to_vec();
        s[self.dim] = 1;
        s
    }

    /// Flat positions of the selected elements, in row-major order.
    pub fn positions(&self, shape: &[usize]) -> impl Iterator<Item = usize> {
        let outer = numel(&shape[..self.dim]);
        let len = shape[self.dim];
        let inner = numel(&shape[self.dim + 1..]);
        let index = self.index;
        (0..outer).flat_map(move |o| (0..inner).map(move |k| (o * len + index) * inner + k))
    }
}

pub(super) fn select(x: &Tensor, sel: Selection) -> Result<Tensor> {
    let data = sel.positions(x.shape()).map(|p| x.data()[p]).collect();
    Tensor::new(sel.out_shape(x.shape()), x.precision(), data)
}

fn index_in_dim_primal(_: &mut EvalCtx, x: &[Tensor], cfg: &Config) -> Result<Vec<Tensor>> {
    Ok(vec![select(&x[0], Selection::resolve(x[0].shape(), cfg)?)?])
}

/// Under AD, normalizes a negative index twice before clamping.
pub(super) fn index_in_dim_double_normalize(ctx: &mut EvalCtx, x: &[Tensor], cfg: &Config) -> Result<Vec<Tensor>> {
    let times = if ctx.scenario.is_ad() { 2 } else { 1 };
    Ok(vec![select(&x[0], Selection::resolve_with(x[0].shape(), cfg, times)?)?])
}
