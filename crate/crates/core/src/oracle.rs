//! The differential-testing oracle: determinism, output consistency across
//! execution scenarios, three-way gradient consistency, repeated on gradient
//! functions up to a maximum order, with two false-positive filters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{grad_function, jacobian_in, JacobianMatrix, Mode};
use crate::error::{Error, Result};
use crate::graph::{EvalCtx, FlatFunction, Scenario};
use crate::numdiff::{nd_jacobian_in, NdConfig};
use crate::tensor::{max_abs_diff, Comparison, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Random,
    OutputInconsistent,
    GradientInconsistent,
    EvalFailure,
}

impl Verdict {
    pub const ALL: [Verdict; 5] =
        [Verdict::Pass, Verdict::Random, Verdict::OutputInconsistent, Verdict::GradientInconsistent, Verdict::EvalFailure];

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Random => "RANDOM",
            Verdict::OutputInconsistent => "OUTPUT_INCONSISTENT",
            Verdict::GradientInconsistent => "GRADIENT_INCONSISTENT",
            Verdict::EvalFailure => "EVAL_FAILURE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Precision,
    Differentiability,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Precision => "precision",
            FilterKind::Differentiability => "differentiability",
        }
    }
}

/// Values one scenario produced: a flat output, or a row-major Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub scenario: Scenario,
    pub values: Vec<f64>,
}

/// Whole-function evaluations performed per scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalStats {
    pub direct: usize,
    pub reverse: usize,
    pub forward: usize,
    pub nd: usize,
    pub filter: usize,
}

impl EvalStats {
    pub fn gradient_evaluations(&self) -> usize {
        self.reverse + self.forward + self.nd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub verdict: Verdict,
    pub order: usize,
    pub evidence: Vec<Evidence>,
    /// The pair of scenarios reported as disagreeing (or failing, twice).
    pub scenarios: Option<(Scenario, Scenario)>,
    pub max_discrepancy: f64,
    pub filtered: bool,
    pub filter: Option<FilterKind>,
    pub failure: Option<String>,
    pub stats: EvalStats,
}

impl OracleOutcome {
    fn new(verdict: Verdict, order: usize, stats: EvalStats) -> Self {
        OracleOutcome {
            verdict,
            order,
            evidence: Vec::new(),
            scenarios: None,
            max_discrepancy: 0.0,
            filtered: false,
            filter: None,
            failure: None,
            stats,
        }
    }

    fn failure(scenario: Scenario, order: usize, err: &Error, stats: EvalStats) -> Self {
        let mut o = OracleOutcome::new(Verdict::EvalFailure, order, stats);
        o.scenarios = Some((scenario, scenario));
        o.failure = Some(format!("{scenario}: {err}"));
        o
    }

    /// EVAL_FAILURE raised outside the oracle, e.g. while building the function.
    pub fn eval_failure(scenario: Scenario, order: usize, err: &Error) -> Self {
        OracleOutcome::failure(scenario, order, err, EvalStats::default())
    }

    /// Non-PASS and not suppressed by a filter.
    pub fn is_finding(&self) -> bool {
        self.verdict != Verdict::Pass && !self.filtered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Neighbors sampled by the differentiability filter.
    pub sample_count: usize,
    /// Half-width of the box neighbors are drawn from.
    pub sample_distance: f64,
    /// Direct invocations in the determinism check.
    pub rep: usize,
    /// Neighbor gradients may differ from the center by an extra
    /// `curvature_allowance * sample_distance`, absolute and relative.
    pub curvature_allowance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { sample_count: 5, sample_distance: 1e-4, rep: 10, curvature_allowance: 100.0 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < 1 || !(self.sample_distance > 0.0) || self.rep < 2 || !(self.curvature_allowance >= 0.0) {
            return Err(Error::config("filter", "need sample_count >= 1, sample_distance > 0, rep >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub order: usize,
    pub base_mode: Mode,
    pub output: Comparison,
    /// Gradient tolerance at f64; widened for lower precisions.
    pub gradient: Comparison,
    /// Compare repeated direct invocations bit for bit.
    pub bitwise_determinism: bool,
    pub nd: NdConfig,
    pub filter: FilterConfig,
    /// Seeds nondeterministic primitives and neighbor sampling.
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            order: 2,
            base_mode: Mode::Reverse,
            output: Comparison::output(),
            gradient: Comparison::gradient(),
            bitwise_determinism: false,
            nd: NdConfig::default(),
            filter: FilterConfig::default(),
            seed: 0,
        }
    }
}

/// Run `f` `rep` times under one direct context. Nondeterministic primitives
/// draw fresh randomness on every call.
pub fn check_determinism(f: &FlatFunction, x: &[f64], rep: usize, cmp: &Comparison, ctx: &mut EvalCtx) -> Result<bool> {
    let runs = (0..rep).map(|_| f.evaluate(x, ctx)).collect::<Result<Vec<_>>>()?;
    Ok(runs.iter().enumerate().all(|(i, a)| runs[i + 1..].iter().all(|b| cmp.all_equal(a, b))))
}

/// First disagreeing pair, in the order given, with its max discrepancy.
fn first_disagreement(items: &[(Scenario, &[f64])], cmp: &Comparison) -> Option<(Scenario, Scenario, f64)> {
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let (a, b) = (items[i].1, items[j].1);
            if a.len() != b.len() || !cmp.all_equal(a, b) {
                let d = if a.len() == b.len() { max_abs_diff(a, b) } else { f64::INFINITY };
                return Some((items[i].0, items[j].0, d));
            }
        }
    }
    None
}

pub fn output_check(direct: &[f64], rev_y: &[f64], fwd_y: &[f64], cmp: &Comparison) -> bool {
    let items = [(Scenario::Direct, direct), (Scenario::Reverse, rev_y), (Scenario::Forward, fwd_y)];
    first_disagreement(&items, cmp).is_none()
}

pub fn gradient_check(j_rev: &JacobianMatrix, j_fwd: &JacobianMatrix, j_nd: Option<&JacobianMatrix>, cmp: &Comparison) -> bool {
    let mut items = vec![(Scenario::Reverse, j_rev.data.as_slice()), (Scenario::Forward, j_fwd.data.as_slice())];
    if let Some(nd) = j_nd {
        items.push((Scenario::Numeric, nd.data.as_slice()));
    }
    first_disagreement(&items, cmp).is_none()
}

pub fn precision_filter_applies(f: &FlatFunction) -> bool {
    f.input_precision() != f.output_precision()
}

/// A reduced-precision Jacobian that overflowed somewhere: rounding, not the
/// engines, decides the comparison.
pub fn reduced_precision_overflow(f: &FlatFunction, jacobians: &[&[f64]]) -> bool {
    f.input_precision().min(f.output_precision()) < Precision::F64
        && jacobians.iter().any(|j| j.iter().any(|v| !v.is_finite()))
}

/// Gradient tolerance for a function whose lowest boundary precision is `p`.
pub fn gradient_tolerance(base: &Comparison, f: &FlatFunction) -> Comparison {
    base.widened_for(f.input_precision().min(f.output_precision()))
}

/// Sample neighbors of `x` and compare their outputs and finite-difference
/// Jacobians against the center. Leaving the domain anywhere counts as not
/// differentiable.
pub fn is_differentiable_at(
    f: &FlatFunction,
    x: &[f64],
    cfg: &FilterConfig,
    nd: &NdConfig,
    cmp: &Comparison,
    seed: u64,
    ctx: &mut EvalCtx,
) -> Result<bool> {
    if f.input_precision() < Precision::F64 {
        return Err(Error::PrecisionRefused(format!("{}: differentiability probing needs f64 inputs", f.id)));
    }
    let probe = |ctx: &mut EvalCtx, p: &[f64]| -> Result<Option<(Vec<f64>, JacobianMatrix)>> {
        let y = match f.evaluate(p, ctx) {
            Ok(y) => y,
            Err(Error::Domain { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        match nd_jacobian_in(f, p, nd, ctx) {
            Ok(j) => Ok(Some((y, j))),
            Err(Error::Domain { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let Some((y0, j0)) = probe(ctx, x)? else { return Ok(false) };
    let allowance = cfg.curvature_allowance * cfg.sample_distance;
    let grad_cmp = Comparison { atol: cmp.atol + allowance, rtol: cmp.rtol + allowance, ..*cmp };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.sample_count {
        let dx: Vec<f64> = x.iter().map(|_| rng.gen_range(-cfg.sample_distance..=cfg.sample_distance)).collect();
        let xk: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let Some((yk, jk)) = probe(ctx, &xk)? else { return Ok(false) };
        // Outputs must follow the trapezoid rule along the step.
        for (r, (&y0r, &ykr)) in y0.iter().zip(&yk).enumerate() {
            let slope: f64 = (0..j0.cols).map(|c| 0.5 * (j0.get(r, c) + jk.get(r, c)) * dx[c]).sum();
            if !cmp.equal(ykr, y0r + slope) {
                return Ok(false);
            }
        }
        if !grad_cmp.all_equal(&jk.data, &j0.data) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn filter_seed(seed: u64, order: usize) -> u64 {
    seed ^ (order as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Decide which filter, if any, suppresses a gradient inconsistency of `cur`
/// (the gradient function being checked) for the API function `base`.
fn apply_filters(
    base: &FlatFunction,
    cur: &FlatFunction,
    x: &[f64],
    order: usize,
    jacobians: &[&[f64]],
    cfg: &OracleConfig,
    stats: &mut EvalStats,
) -> Result<Option<FilterKind>> {
    if precision_filter_applies(base) || reduced_precision_overflow(cur, jacobians) {
        return Ok(Some(FilterKind::Precision));
    }
    if cur.input_precision() < Precision::F64 {
        return Ok(None);
    }
    let mut ctx = EvalCtx::new(Scenario::Numeric, cfg.seed);
    let tol = gradient_tolerance(&cfg.gradient, cur);
    let smooth = is_differentiable_at(cur, x, &cfg.filter, &cfg.nd, &tol, filter_seed(cfg.seed, order), &mut ctx);
    stats.filter += ctx.evaluations();
    Ok(if smooth? { None } else { Some(FilterKind::Differentiability) })
}

/// Determinism, then outputs under direct / reverse / forward invocation,
/// then reverse / forward / finite-difference Jacobians, repeated on the
/// gradient function until `cfg.order` is reached.
pub fn run_oracle(f: &FlatFunction, x: &[f64], cfg: &OracleConfig) -> OracleOutcome {
    let mut stats = EvalStats::default();
    let mut cur = f.clone();
    for order in 1..=cfg.order.max(1) {
        let prev = order - 1;

        let mut direct_ctx = EvalCtx::new(Scenario::Direct, cfg.seed);
        let det_cmp = if cfg.bitwise_determinism { Comparison::bitwise() } else { cfg.output };
        let det = check_determinism(&cur, x, cfg.filter.rep, &det_cmp, &mut direct_ctx);
        stats.direct += direct_ctx.evaluations();
        match det {
            Err(e) => return OracleOutcome::failure(Scenario::Direct, prev, &e, stats),
            Ok(false) => return OracleOutcome::new(Verdict::Random, prev, stats),
            Ok(true) => {}
        }
        let direct = match cur.evaluate(x, &mut EvalCtx::new(Scenario::Direct, cfg.seed)) {
            Ok(y) => y,
            Err(e) => return OracleOutcome::failure(Scenario::Direct, prev, &e, stats),
        };

        let mut rev_ctx = EvalCtx::new(Scenario::Reverse, cfg.seed);
        let rev = jacobian_in(&cur, x, Mode::Reverse, &mut rev_ctx);
        stats.reverse += rev_ctx.evaluations();
        let (y_rev, j_rev) = match rev {
            Ok(r) => r,
            Err(e) => return OracleOutcome::failure(Scenario::Reverse, prev, &e, stats),
        };
        let mut fwd_ctx = EvalCtx::new(Scenario::Forward, cfg.seed);
        let fwd = jacobian_in(&cur, x, Mode::Forward, &mut fwd_ctx);
        stats.forward += fwd_ctx.evaluations();
        let (y_fwd, j_fwd) = match fwd {
            Ok(r) => r,
            Err(e) => return OracleOutcome::failure(Scenario::Forward, prev, &e, stats),
        };

        let outputs = [(Scenario::Direct, &direct[..]), (Scenario::Reverse, &y_rev[..]), (Scenario::Forward, &y_fwd[..])];
        if let Some((a, b, d)) = first_disagreement(&outputs, &cfg.output) {
            let mut o = OracleOutcome::new(Verdict::OutputInconsistent, prev, stats);
            o.evidence = outputs.iter().map(|(s, v)| Evidence { scenario: *s, values: v.to_vec() }).collect();
            o.scenarios = Some((a, b));
            o.max_discrepancy = d;
            return o;
        }

        let tol = gradient_tolerance(&cfg.gradient, &cur);
        let mut evidence =
            vec![Evidence { scenario: Scenario::Reverse, values: j_rev.data.clone() }, Evidence {
                scenario: Scenario::Forward,
                values: j_fwd.data.clone(),
            }];
        let mut disagreement = None;
        if cur.input_precision() == Precision::F64 {
            let mut nd_ctx = EvalCtx::new(Scenario::Numeric, cfg.seed);
            let nd = nd_jacobian_in(&cur, x, &cfg.nd, &mut nd_ctx);
            stats.nd += nd_ctx.evaluations();
            match nd {
                Ok(j) => evidence.push(Evidence { scenario: Scenario::Numeric, values: j.data }),
                // A stencil point outside the domain: the point is on a boundary.
                Err(Error::Domain { .. }) => disagreement = Some((Scenario::Reverse, Scenario::Numeric, f64::INFINITY)),
                Err(e) => return OracleOutcome::failure(Scenario::Numeric, order, &e, stats),
            }
        }
        if disagreement.is_none() {
            let items: Vec<(Scenario, &[f64])> = evidence.iter().map(|e| (e.scenario, e.values.as_slice())).collect();
            disagreement = first_disagreement(&items, &tol);
        }
        if let Some((a, b, d)) = disagreement {
            let mut o = OracleOutcome::new(Verdict::GradientInconsistent, order, stats);
            o.evidence = evidence;
            o.scenarios = Some((a, b));
            o.max_discrepancy = d;
            match apply_filters(f, &cur, x, order, &[&j_rev.data, &j_fwd.data], cfg, &mut o.stats) {
                Ok(filter) => {
                    o.filtered = filter.is_some();
                    o.filter = filter;
                }
                Err(e) => o.failure = Some(format!("filter: {e}")),
            }
            return o;
        }

        if order < cfg.order {
            cur = match grad_function(&cur, cfg.base_mode) {
                Ok(g) => g,
                Err(e) => return OracleOutcome::failure(cfg.base_mode.scenario(), order, &e, stats),
            };
        }
    }
    OracleOutcome::new(Verdict::Pass, cfg.order, stats)
}
