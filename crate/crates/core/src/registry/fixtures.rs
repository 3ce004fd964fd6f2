//! Operators that exist to exercise the oracle's failure paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::EvalCtx;
use crate::tensor::{Tensor, ValueInfo};

use super::elementwise::base;
use super::{OpDoc, Primitive, Role, Saves};

pub(super) fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            infer: |inputs, cfg| {
                let p = cfg.float_or("dropout", "p", 0.5)?;
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::config("dropout", format!("p must lie in [0, 1), got {p}")));
                }
                Ok(vec![inputs[0].clone(), inputs[0].clone()])
            },
            primal: dropout,
            vjp: |b, args, g| Ok(vec![b.mul(g[0], args.output(1)?)?]),
            jvp: |b, args, t| {
                let mask = args.output(1)?;
                let info = args.output_info[1].clone();
                Ok(vec![b.mul(t[0], mask)?, b.zeros(&info)])
            },
            saves: Saves::OUTPUTS,
            nondeterministic: true,
            role: Role::Fixture,
            ..base(
                "dropout",
                1,
                OpDoc {
                    primal: "x * mask, mask_i = 1/(1-p) with probability 1-p else 0; also returns mask",
                    vjp: "g * mask",
                    jvp: "t * mask",
                    loci: "none (nondeterministic)",
                },
            )
        },
        Primitive {
            infer: |inputs, _| Ok(vec![ValueInfo::new(inputs[0].shape.clone(), inputs[0].precision)]),
            primal: |_, _, _| Err(Error::crash("crash", "fixture aborted evaluation")),
            role: Role::Fixture,
            ..base(
                "crash",
                1,
                OpDoc { primal: "always fails", vjp: "unreachable", jvp: "unreachable", loci: "everywhere" },
            )
        },
    ]
}

fn dropout(ctx: &mut EvalCtx, x: &[Tensor], cfg: &Config) -> Result<Vec<Tensor>> {
    let p = cfg.float_or("dropout", "p", 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    rng.set_stream(ctx.next_draw());
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x[0].numel()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let y = x[0].data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    let info = x[0].info();
    Ok(vec![Tensor::new(info.shape.clone(), info.precision, y)?, Tensor::new(info.shape, info.precision, mask)?])
}
