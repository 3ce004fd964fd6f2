//! Reductions, matrix products, and the losses built from them.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{Builder, EvalCtx, Var};
use crate::tensor::{Tensor, ValueInfo};

use super::elementwise::base;
use super::helpers::*;
use super::{OpDoc, Primitive, Role, RuleArgs, Saves};

const fn doc(primal: &'static str, vjp: &'static str, jvp: &'static str, loci: &'static str) -> OpDoc {
    OpDoc { primal, vjp, jvp, loci }
}

pub(super) fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            infer: infer_scalar,
            primal: |_, x, _| Ok(vec![Tensor::scalar(x[0].data().iter().sum(), x[0].precision())]),
            vjp: |b, args, g| Ok(vec![spread(b, g[0], &args.input_info[0])?]),
            jvp: |b, _, t| Ok(vec![b.sum(t[0])?]),
            ..base("sum", 1, doc("sum of all elements", "broadcast g", "sum(t)", "none"))
        },
        Primitive {
            infer: infer_scalar,
            primal: mean_primal,
            vjp: |b, args, g| {
                let info = &args.input_info[0];
                let s = spread(b, g[0], info)?;
                let inv = b.scalar(1.0 / info.numel() as f64, info.precision);
                Ok(vec![b.mul(s, inv)?])
            },
            jvp: |b, _, t| Ok(vec![b.op("mean", &[t[0]])?]),
            ..base("mean", 1, doc("sum / numel", "broadcast g / numel", "mean(t)", "none"))
        },
        Primitive {
            infer: |inputs, _| {
                let (a, b) = (&inputs[0], &inputs[1]);
                if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                    return Err(Error::shape("matmul", format!("cannot multiply {:?} by {:?}", a.shape, b.shape)));
                }
                Ok(vec![ValueInfo::new(vec![a.shape[0], b.shape[1]], promote(a.precision, b.precision))])
            },
            primal: |_, x, _| Ok(vec![matmul(&x[0], &x[1])?]),
            vjp: |b, args, g| {
                let (x, y) = (args.input(0)?, args.input(1)?);
                let yt = b.op("transpose", &[y])?;
                let xt = b.op("transpose", &[x])?;
                let ga = b.op("matmul", &[g[0], yt])?;
                let gb = b.op("matmul", &[xt, g[0]])?;
                Ok(vec![b.cast(ga, args.input_info[0].precision)?, b.cast(gb, args.input_info[1].precision)?])
            },
            jvp: |b, args, t| {
                let (x, y) = (args.input(0)?, args.input(1)?);
                let l = b.op("matmul", &[t[0], y])?;
                let r = b.op("matmul", &[x, t[1]])?;
                Ok(vec![b.add(l, r)?])
            },
            saves: Saves::INPUTS,
            ..base("matmul", 2, doc("A B for 2-D A [m,k], B [k,n]", "(g B^T, A^T g)", "tA B + A tB", "none"))
        },
        Primitive {
            infer: infer_matrix_scalar,
            primal: |_, x, _| {
                let (r, c) = (x[0].shape()[0], x[0].shape()[1]);
                let s = (0..r.min(c)).map(|i| x[0].data()[i * c + i]).sum();
                Ok(vec![Tensor::scalar(s, x[0].precision())])
            },
            vjp: |b, args, g| trace_vjp_with(b, args, g, false),
            jvp: |b, _, t| Ok(vec![b.op("trace", &[t[0]])?]),
            ..base("trace", 1, doc("sum of A[i,i] for 2-D A", "g on the diagonal, 0 elsewhere", "trace(t)", "none"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![softmax(&x[0])]),
            vjp: |b, args, g| softmax_vjp_with(b, args, g, false),
            jvp: |b, args, t| {
                let s = args.output(0)?;
                let st = b.mul(s, t[0])?;
                let tot = b.sum(st)?;
                let c = b.sub(t[0], tot)?;
                Ok(vec![b.mul(s, c)?])
            },
            saves: Saves::OUTPUTS,
            ..base(
                "softmax",
                1,
                doc("exp(x - max) / sum exp(x - max), over all elements", "s*(g - sum(g*s))", "s*(t - sum(s*t))", "none"),
            )
        },
        Primitive {
            infer: |inputs, _| {
                let (x, t) = (&inputs[0], &inputs[1]);
                if t.shape != x.shape && !t.is_scalar() {
                    return Err(Error::shape("kl_div", format!("target {:?} does not match input {:?}", t.shape, x.shape)));
                }
                Ok(vec![ValueInfo::scalar(promote(x.precision, t.precision))])
            },
            primal: |_, x, _| {
                check_all("kl_div", &x[1], |v| v > 0.0, "target must be positive")?;
                let pointwise = binary("kl_div", &x[0], &x[1], |i, t| t * (t.ln() - i))?;
                Ok(vec![Tensor::scalar(pointwise.data().iter().sum(), pointwise.precision())])
            },
            vjp: |b, args, g| kl_div_vjp_with(b, args, g, false),
            jvp: |b, args, t| {
                let (x, tg) = (args.input(0)?, args.input(1)?);
                let inner = kl_inner(b, x, tg)?;
                let a = b.mul(t[1], inner)?;
                let c = b.mul(tg, t[0])?;
                let d = b.sub(a, c)?;
                Ok(vec![b.sum(d)?])
            },
            saves: Saves::INPUTS,
            ..base(
                "kl_div",
                2,
                doc(
                    "sum(t * (ln t - x)); target t same shape as x or scalar",
                    "(-g*t, g*(ln t + 1 - x))",
                    "sum(tt*(ln t + 1 - x) - t*tx)",
                    "t <= 0 (outside domain)",
                ),
            )
        },
        Primitive {
            infer: |inputs, _| {
                let x = &inputs[0];
                if x.shape.len() != 2 {
                    return Err(Error::shape("transpose", format!("expects a matrix, got {:?}", x.shape)));
                }
                Ok(vec![ValueInfo::new(vec![x.shape[1], x.shape[0]], x.precision)])
            },
            primal: |_, x, _| Ok(vec![transpose(&x[0])?]),
            vjp: |b, _, g| Ok(vec![b.op("transpose", &[g[0]])?]),
            jvp: |b, _, t| Ok(vec![b.op("transpose", &[t[0]])?]),
            role: Role::Auxiliary,
            ..base("transpose", 1, doc("A^T for 2-D A", "g^T", "t^T", "none"))
        },
        Primitive {
            infer: |inputs, cfg| {
                let shape = cfg.shape("broadcast_to", "shape")?;
                let x = &inputs[0];
                if !x.is_scalar() && x.shape != shape {
                    return Err(Error::shape("broadcast_to", format!("cannot broadcast {:?} to {shape:?}", x.shape)));
                }
                Ok(vec![ValueInfo::new(shape, x.precision)])
            },
            primal: |_, x, cfg| {
                let shape = cfg.shape("broadcast_to", "shape")?;
                if x[0].shape() == shape.as_slice() {
                    return Ok(vec![x[0].clone()]);
                }
                Ok(vec![Tensor::full(shape, x[0].precision(), x[0].data()[0])])
            },
            vjp: |b, args, g| Ok(vec![b.unbroadcast(g[0], &args.input_info[0])?]),
            jvp: |b, args, t| Ok(vec![b.broadcast_to(t[0], &args.output_info[0].shape)?]),
            role: Role::Auxiliary,
            ..base("broadcast_to", 1, doc("repeat a scalar over `shape`", "sum(g)", "broadcast t", "none"))
        },
    ]
}

fn infer_matrix_scalar(inputs: &[ValueInfo], _: &Config) -> Result<Vec<ValueInfo>> {
    if inputs[0].shape.len() != 2 {
        return Err(Error::shape("trace", format!("expects a matrix, got {:?}", inputs[0].shape)));
    }
    Ok(vec![ValueInfo::scalar(inputs[0].precision)])
}

fn mean_primal(_: &mut EvalCtx, x: &[Tensor], _: &Config) -> Result<Vec<Tensor>> {
    let t = &x[0];
    Ok(vec![Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64, t.precision())])
}

/// Under AD, divides by the extent of the last axis instead of the element count.
pub(super) fn mean_primal_last_axis_under_ad(ctx: &mut EvalCtx, x: &[Tensor], cfg: &Config) -> Result<Vec<Tensor>> {
    if !ctx.scenario.is_ad() {
        return mean_primal(ctx, x, cfg);
    }
    let t = &x[0];
    let count = t.shape().last().copied().unwrap_or(1);
    Ok(vec![Tensor::scalar(t.data().iter().sum::<f64>() / count as f64, t.precision())])
}

fn spread(b: &mut dyn Builder, g: Var, target: &ValueInfo) -> Result<Var> {
    let s = b.broadcast_to(g, &target.shape)?;
    b.cast(s, target.precision)
}

pub(super) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != k {
        return Err(Error::shape("matmul", "inner dimensions differ"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| ad[i * k + p] * bd[p * n + j]).sum();
        }
    }
    Tensor::new(vec![m, n], promote(a.precision(), b.precision()), out)
}

fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let out = (0..c).flat_map(|j| (0..r).map(move |i| d[i * c + j])).collect();
    Tensor::new(vec![c, r], a.precision(), out)
}

fn softmax(x: &Tensor) -> Tensor {
    let d = x.data();
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = d.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Tensor::new(x.shape().to_vec(), x.precision(), e.into_iter().map(|v| v / total).collect())
        .expect("shape unchanged")
}

/// Flat positions of the diagonal of an `rows x cols` matrix. The faulty
/// variant keeps striding by `cols + 1` for one extra step.
pub(super) fn diagonal_positions(rows: usize, cols: usize, extra: bool) -> Vec<usize> {
    let count = rows.min(cols) + usize::from(extra);
    (0..count).map(|k| k * (cols + 1)).filter(|&p| p < rows * cols).collect()
}

pub(super) fn trace_vjp_with(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var], extra: bool) -> Result<Vec<Var>> {
    let info = &args.input_info[0];
    let (r, c) = (info.shape[0], info.shape[1]);
    let mut mask = vec![0.0; r * c];
    for p in diagonal_positions(r, c, extra) {
        mask[p] = 1.0;
    }
    let m = b.constant(Tensor::new(info.shape.clone(), info.precision, mask)?);
    let s = b.broadcast_to(g[0], &info.shape)?;
    let out = b.mul(s, m)?;
    Ok(vec![b.cast(out, info.precision)?])
}

pub(super) fn softmax_vjp_with(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var], skip_centering: bool) -> Result<Vec<Var>> {
    let s = args.output(0)?;
    if skip_centering {
        return Ok(vec![b.mul(g[0], s)?]);
    }
    let gs = b.mul(g[0], s)?;
    let tot = b.sum(gs)?;
    let c = b.sub(g[0], tot)?;
    Ok(vec![b.mul(s, c)?])
}

fn kl_inner(b: &mut dyn Builder, x: Var, target: Var) -> Result<Var> {
    let p = b.info(target).precision;
    let ln = b.op("log", &[target])?;
    let one = b.scalar(1.0, p);
    let l1 = b.add(ln, one)?;
    b.sub(l1, x)
}

pub(super) fn kl_div_vjp_with(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var], assume_same_shape: bool) -> Result<Vec<Var>> {
    let (xi, ti) = (&args.input_info[0], &args.input_info[1]);
    if assume_same_shape && xi.numel() != ti.numel() {
        return Err(Error::crash(
            "kl_div",
            format!("backward indexed target of {} elements as if it had {}", ti.numel(), xi.numel()),
        ));
    }
    let (x, t) = (args.input(0)?, args.input(1)?);
    let bg = b.broadcast_to(g[0], &xi.shape)?;
    let gt = b.mul(bg, t)?;
    let gx = b.neg(gt)?;
    let inner = kl_inner(b, x, t)?;
    let gtar = b.mul(bg, inner)?;
    Ok(vec![b.unbroadcast(gx, xi)?, b.unbroadcast(gtar, ti)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_of_tall_matrix() {
        assert_eq!(diagonal_positions(4, 2, false), vec![0, 3]);
        assert_eq!(diagonal_positions(4, 2, true), vec![0, 3, 6]);
        // Square matrices hide the extra stride.
        assert_eq!(diagonal_positions(3, 3, true), vec![0, 4, 8]);
        assert!(diagonal_positions(0, 3, true).is_empty());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = Tensor::from_f64(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_f64(vec![3], vec![101.0, 102.0, 103.0]).unwrap();
        let (sa, sb) = (softmax(&a), softmax(&b));
        for (x, y) in sa.data().iter().zip(sb.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((sa.data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matmul_by_identity() {
        let a = Tensor::from_f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let i = Tensor::from_f64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &i).unwrap(), a);
    }
}
