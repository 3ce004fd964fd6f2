//! Elementwise arithmetic and activations, with scalar-tensor broadcasting
//! for the binary ones.

use crate::config::{Config, ConfigValue};
use crate::error::Result;
use crate::graph::{Builder, Var};

use super::helpers::*;
use super::{OpDoc, Primitive, Role, RuleArgs, Saves};

pub(super) fn base(name: &'static str, arity: usize, doc: OpDoc) -> Primitive {
    Primitive {
        name,
        arity: Some(arity),
        infer: infer_same,
        primal: |_, _, _| unreachable!("primal rule not set"),
        vjp: vjp_zero,
        jvp: jvp_zero,
        saves: Saves::NONE,
        nondeterministic: false,
        smooth: true,
        role: Role::Api,
        doc,
    }
}

const fn doc(primal: &'static str, vjp: &'static str, jvp: &'static str, loci: &'static str) -> OpDoc {
    OpDoc { primal, vjp, jvp, loci }
}

pub(super) fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            infer: infer_broadcast,
            primal: |_, x, _| Ok(vec![binary("add", &x[0], &x[1], |a, b| a + b)?]),
            vjp: |b, args, g| Ok(vec![b.unbroadcast(g[0], &args.input_info[0])?, b.unbroadcast(g[0], &args.input_info[1])?]),
            jvp: |b, _, t| Ok(vec![b.add(t[0], t[1])?]),
            ..base("add", 2, doc("a + b", "(g, g)", "ta + tb", "none"))
        },
        Primitive {
            infer: infer_broadcast,
            primal: |_, x, _| Ok(vec![binary("sub", &x[0], &x[1], |a, b| a - b)?]),
            vjp: |b, args, g| {
                let n = b.neg(g[0])?;
                Ok(vec![b.unbroadcast(g[0], &args.input_info[0])?, b.unbroadcast(n, &args.input_info[1])?])
            },
            jvp: |b, _, t| Ok(vec![b.sub(t[0], t[1])?]),
            ..base("sub", 2, doc("a - b", "(g, -g)", "ta - tb", "none"))
        },
        Primitive {
            infer: infer_broadcast,
            primal: |_, x, _| Ok(vec![binary("mul", &x[0], &x[1], |a, b| a * b)?]),
            vjp: mul_vjp,
            jvp: |b, args, t| {
                let (x, y) = (args.input(0)?, args.input(1)?);
                let l = b.mul(t[0], y)?;
                let r = b.mul(x, t[1])?;
                Ok(vec![b.add(l, r)?])
            },
            saves: Saves::INPUTS,
            ..base("mul", 2, doc("a * b", "(g*b, g*a)", "ta*b + a*tb", "none"))
        },
        Primitive {
            infer: infer_broadcast,
            primal: |_, x, _| {
                check_all("div", &x[1], |v| v != 0.0, "denominator must be nonzero")?;
                Ok(vec![binary("div", &x[0], &x[1], |a, b| a / b)?])
            },
            vjp: div_vjp,
            jvp: |b, args, t| {
                let (den, y) = (args.input(1)?, args.output(0)?);
                let c = b.mul(t[1], y)?;
                let num = b.sub(t[0], c)?;
                Ok(vec![b.div(num, den)?])
            },
            saves: Saves::BOTH,
            ..base("div", 2, doc("a / b", "(g/b, -g*y/b)", "(ta - tb*y)/b", "b = 0 (outside domain)"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], |v| -v)]),
            vjp: |b, _, g| Ok(vec![b.neg(g[0])?]),
            jvp: |b, _, t| Ok(vec![b.neg(t[0])?]),
            ..base("neg", 1, doc("-x", "-g", "-t", "none"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], f64::exp)]),
            vjp: |b, args, g| Ok(vec![b.mul(g[0], args.output(0)?)?]),
            jvp: |b, args, t| Ok(vec![b.mul(t[0], args.output(0)?)?]),
            saves: Saves::OUTPUTS,
            ..base("exp", 1, doc("exp(x)", "g*y", "t*y", "none"))
        },
        Primitive {
            primal: |_, x, _| {
                check_all("log", &x[0], |v| v > 0.0, "input must be positive")?;
                Ok(vec![unary(&x[0], f64::ln)])
            },
            vjp: |b, args, g| Ok(vec![b.div(g[0], args.input(0)?)?]),
            jvp: |b, args, t| Ok(vec![b.div(t[0], args.input(0)?)?]),
            saves: Saves::INPUTS,
            ..base("log", 1, doc("ln(x)", "g/x", "t/x", "x <= 0 (outside domain)"))
        },
        Primitive {
            primal: |_, x, _| {
                check_all("sqrt", &x[0], |v| v > 0.0, "input must be positive")?;
                Ok(vec![unary(&x[0], f64::sqrt)])
            },
            vjp: |b, args, g| Ok(vec![half_over(b, g[0], args.output(0)?)?]),
            jvp: sqrt_jvp,
            saves: Saves::OUTPUTS,
            ..base("sqrt", 1, doc("sqrt(x)", "g/(2y)", "t/(2y)", "x <= 0 (outside domain)"))
        },
        Primitive {
            infer: infer_broadcast,
            primal: |_, x, _| {
                check_all("pow", &x[0], |v| v > 0.0, "base must be positive")?;
                Ok(vec![binary("pow", &x[0], &x[1], f64::powf)?])
            },
            vjp: pow_vjp,
            jvp: |b, args, t| {
                let (base_d, exp_d) = pow_partials(b, args, false)?;
                let l = b.mul(t[0], base_d)?;
                let r = b.mul(t[1], exp_d)?;
                Ok(vec![b.add(l, r)?])
            },
            saves: Saves::BOTH,
            ..base(
                "pow",
                2,
                doc("a^b (a > 0)", "(g*b*a^(b-1), g*y*ln a)", "ta*b*a^(b-1) + tb*y*ln a", "a <= 0 (outside domain)"),
            )
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], f64::sin)]),
            vjp: |b, args, g| {
                let c = b.op("cos", &[args.input(0)?])?;
                Ok(vec![b.mul(g[0], c)?])
            },
            jvp: |b, args, t| {
                let c = b.op("cos", &[args.input(0)?])?;
                Ok(vec![b.mul(t[0], c)?])
            },
            saves: Saves::INPUTS,
            ..base("sin", 1, doc("sin(x)", "g*cos x", "t*cos x", "none"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], f64::cos)]),
            vjp: |b, args, g| {
                let s = b.op("sin", &[args.input(0)?])?;
                let p = b.mul(g[0], s)?;
                Ok(vec![b.neg(p)?])
            },
            jvp: cos_jvp,
            saves: Saves::INPUTS,
            ..base("cos", 1, doc("cos(x)", "-g*sin x", "-t*sin x", "none"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], f64::tanh)]),
            vjp: tanh_vjp,
            jvp: |b, args, t| {
                let d = one_minus_square(b, args.output(0)?)?;
                Ok(vec![b.mul(t[0], d)?])
            },
            saves: Saves::OUTPUTS,
            ..base("tanh", 1, doc("tanh(x)", "g*(1-y^2)", "t*(1-y^2)", "none"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], sigmoid)]),
            vjp: |b, args, g| {
                let d = sigmoid_slope(b, args.output(0)?)?;
                Ok(vec![b.mul(g[0], d)?])
            },
            jvp: sigmoid_jvp,
            saves: Saves::OUTPUTS,
            ..base("sigmoid", 1, doc("1/(1+exp(-x))", "g*y*(1-y)", "t*y*(1-y)", "none"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], f64::abs)]),
            vjp: |b, args, g| {
                let s = b.op("abs_slope", &[args.input(0)?])?;
                Ok(vec![b.mul(g[0], s)?])
            },
            jvp: |b, args, t| {
                let s = b.op("abs_slope", &[args.input(0)?])?;
                Ok(vec![b.mul(t[0], s)?])
            },
            saves: Saves::INPUTS,
            smooth: false,
            ..base("abs", 1, doc("|x|", "g*s(x), s = 1 for x >= 0 else -1", "t*s(x)", "x = 0 (slope 1 used)"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], |v| if v > 0.0 { v } else { 0.0 })]),
            vjp: |b, args, g| {
                let s = b.op("relu_slope", &[args.input(0)?])?;
                Ok(vec![b.mul(g[0], s)?])
            },
            jvp: |b, args, t| {
                let s = b.op("relu_slope", &[args.input(0)?])?;
                Ok(vec![b.mul(t[0], s)?])
            },
            saves: Saves::INPUTS,
            smooth: false,
            ..base("relu", 1, doc("max(x, 0)", "g*[x > 0]", "t*[x > 0]", "x = 0 (slope 0 used)"))
        },
        Primitive {
            primal: |_, x, cfg| {
                let lambd = cfg.float_or("hardshrink", "lambd", 0.5)?;
                Ok(vec![unary(&x[0], |v| if v.abs() > lambd { v } else { 0.0 })])
            },
            vjp: |b, args, g| {
                let s = hardshrink_slope(b, args, false)?;
                Ok(vec![b.mul(g[0], s)?])
            },
            jvp: |b, args, t| {
                let s = hardshrink_slope(b, args, false)?;
                Ok(vec![b.mul(t[0], s)?])
            },
            saves: Saves::INPUTS,
            smooth: false,
            ..base(
                "hardshrink",
                1,
                doc(
                    "x if |x| > lambd else 0",
                    "g*[|x| > lambd or lambd = 0]",
                    "t*[|x| > lambd or lambd = 0]",
                    "|x| = lambd for lambd > 0 (jump)",
                ),
            )
        },
        // Derivative helpers. All piecewise constant, so their own rules are zero.
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], |v| if v >= 0.0 { 1.0 } else { -1.0 })]),
            role: Role::Auxiliary,
            smooth: false,
            ..base("abs_slope", 1, doc("1 if x >= 0 else -1", "0", "0", "x = 0"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![unary(&x[0], |v| if v > 0.0 { 1.0 } else { 0.0 })]),
            role: Role::Auxiliary,
            smooth: false,
            ..base("relu_slope", 1, doc("1 if x > 0 else 0", "0", "0", "x = 0"))
        },
        Primitive {
            primal: |_, x, cfg| {
                let lambd = cfg.float_or("hardshrink_slope", "lambd", 0.5)?;
                let strict = cfg.bool_or("hardshrink_slope", "strict", false)?;
                Ok(vec![unary(&x[0], |v| {
                    let pass = v.abs() > lambd || (!strict && lambd == 0.0);
                    if pass {
                        1.0
                    } else {
                        0.0
                    }
                })])
            },
            role: Role::Auxiliary,
            smooth: false,
            ..base("hardshrink_slope", 1, doc("1 if |x| > lambd (or lambd = 0 unless strict) else 0", "0", "0", "|x| = lambd"))
        },
        Primitive {
            primal: |_, x, _| Ok(vec![x[0].clone()]),
            role: Role::Auxiliary,
            ..base("stop_gradient", 1, doc("x", "0", "0", "none"))
        },
    ]
}

pub(super) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn one(b: &mut dyn Builder, like: Var) -> Var {
    let p = b.info(like).precision;
    b.scalar(1.0, p)
}

pub(super) fn one_minus_square(b: &mut dyn Builder, y: Var) -> Result<Var> {
    let sq = b.mul(y, y)?;
    let o = one(b, y);
    b.sub(o, sq)
}

pub(super) fn sigmoid_slope(b: &mut dyn Builder, y: Var) -> Result<Var> {
    let o = one(b, y);
    let c = b.sub(o, y)?;
    b.mul(y, c)
}

/// `g / (2 y)`
pub(super) fn half_over(b: &mut dyn Builder, g: Var, y: Var) -> Result<Var> {
    let p = b.info(y).precision;
    let two = b.scalar(2.0, p);
    let d = b.mul(two, y)?;
    b.div(g, d)
}

pub(super) fn hardshrink_slope(b: &mut dyn Builder, args: &RuleArgs<'_>, strict: bool) -> Result<Var> {
    let lambd = args.config.float_or("hardshrink", "lambd", 0.5)?;
    let cfg = Config::new().with("lambd", ConfigValue::Float(lambd)).with("strict", ConfigValue::Bool(strict));
    b.op_with("hardshrink_slope", &[args.input(0)?], &cfg)
}

/// Local partials of `a^b`: `(b*a^(b-1), y*ln a)`. With `detach_log` the
/// `ln a` factor is cut off from further differentiation.
pub(super) fn pow_partials(b: &mut dyn Builder, args: &RuleArgs<'_>, detach_log: bool) -> Result<(Var, Var)> {
    let (a, e, y) = (args.input(0)?, args.input(1)?, args.output(0)?);
    let o = one(b, e);
    let em1 = b.sub(e, o)?;
    let pw = b.op("pow", &[a, em1])?;
    let base_d = b.mul(e, pw)?;
    let mut ln = b.op("log", &[a])?;
    if detach_log {
        ln = b.stop_gradient(ln)?;
    }
    let exp_d = b.mul(y, ln)?;
    Ok((base_d, exp_d))
}

pub(super) fn pow_vjp_with(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var], detach_log: bool) -> Result<Vec<Var>> {
    let (base_d, exp_d) = pow_partials(b, args, detach_log)?;
    Ok(vec![
        scale_to(b, g[0], base_d, &args.input_info[0])?,
        scale_to(b, g[0], exp_d, &args.input_info[1])?,
    ])
}

fn pow_vjp(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var]) -> Result<Vec<Var>> {
    pow_vjp_with(b, args, g, false)
}

pub(super) fn mul_vjp_with(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var], detach: bool) -> Result<Vec<Var>> {
    let (mut x, mut y) = (args.input(0)?, args.input(1)?);
    if detach {
        x = b.stop_gradient(x)?;
        y = b.stop_gradient(y)?;
    }
    Ok(vec![scale_to(b, g[0], y, &args.input_info[0])?, scale_to(b, g[0], x, &args.input_info[1])?])
}

fn mul_vjp(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var]) -> Result<Vec<Var>> {
    mul_vjp_with(b, args, g, false)
}

pub(super) fn div_vjp_with(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var], drop_sign: bool) -> Result<Vec<Var>> {
    let (den, y) = (args.input(1)?, args.output(0)?);
    let ga = b.div(g[0], den)?;
    let gy = b.mul(ga, y)?;
    let gb = if drop_sign { gy } else { b.neg(gy)? };
    Ok(vec![b.unbroadcast(ga, &args.input_info[0])?, b.unbroadcast(gb, &args.input_info[1])?])
}

fn div_vjp(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var]) -> Result<Vec<Var>> {
    div_vjp_with(b, args, g, false)
}

fn sqrt_jvp(b: &mut dyn Builder, args: &RuleArgs<'_>, t: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![half_over(b, t[0], args.output(0)?)?])
}

fn cos_jvp(b: &mut dyn Builder, args: &RuleArgs<'_>, t: &[Var]) -> Result<Vec<Var>> {
    let s = b.op("sin", &[args.input(0)?])?;
    let p = b.mul(t[0], s)?;
    Ok(vec![b.neg(p)?])
}

fn tanh_vjp(b: &mut dyn Builder, args: &RuleArgs<'_>, g: &[Var]) -> Result<Vec<Var>> {
    let d = one_minus_square(b, args.output(0)?)?;
    Ok(vec![b.mul(g[0], d)?])
}

fn sigmoid_jvp(b: &mut dyn Builder, args: &RuleArgs<'_>, t: &[Var]) -> Result<Vec<Var>> {
    let d = sigmoid_slope(b, args.output(0)?)?;
    Ok(vec![b.mul(t[0], d)?])
}
