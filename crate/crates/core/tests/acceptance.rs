//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the lines.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use gradfuzz::ad::{grad_function, hessian, jacobian, jacobian_in, Mode};
use gradfuzz::campaign::{run_campaign, to_jsonl, BugReport, CampaignConfig, CampaignResult};
use gradfuzz::config::ConfigValue;
use gradfuzz::fuzz::{self, validate, Case, TensorSpec};
use gradfuzz::graph::{EvalCtx, FlatFunction, Scenario};
use gradfuzz::numdiff::{nd_jacobian, NdConfig};
use gradfuzz::oracle::{run_oracle, FilterKind, OracleConfig, OracleOutcome, Verdict};
use gradfuzz::registry::{faults, Registry, Role};
use gradfuzz::tensor::{Comparison, Precision, ValueInfo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Expected finding per planted fault: (function, verdict, order).
const EXPECTED: &[(&str, &str, Verdict, usize)] = &[
    ("trace-vjp-extra-diagonal", "trace", Verdict::GradientInconsistent, 1),
    ("hardshrink-vjp-boundary", "hardshrink", Verdict::GradientInconsistent, 1),
    ("hardshrink-jvp-boundary", "hardshrink", Verdict::GradientInconsistent, 1),
    ("index_in_dim-double-normalize", "index_in_dim", Verdict::OutputInconsistent, 0),
    ("pow-second-order", "pow", Verdict::GradientInconsistent, 2),
    ("kl_div-backward-shape", "kl_div", Verdict::EvalFailure, 0),
    ("sigmoid-jvp", "sigmoid", Verdict::GradientInconsistent, 1),
    ("tanh-vjp", "tanh", Verdict::GradientInconsistent, 1),
    ("softmax-vjp", "softmax", Verdict::GradientInconsistent, 1),
    ("mean-primal-under-ad", "mean", Verdict::OutputInconsistent, 0),
    ("sqrt-jvp", "sqrt", Verdict::GradientInconsistent, 1),
    ("mul-second-order", "mul", Verdict::GradientInconsistent, 2),
    ("cos-jvp", "cos", Verdict::GradientInconsistent, 1),
    ("div-vjp", "div", Verdict::GradientInconsistent, 1),
];

struct Campaigns {
    clean: CampaignResult,
    clean_time: Duration,
    faults: Vec<(&'static str, CampaignResult)>,
    faults_time: Duration,
}

fn default_campaign(registry: &str) -> CampaignResult {
    let cfg = CampaignConfig { registry: registry.into(), seed: 0, ..CampaignConfig::default() };
    run_campaign(&cfg).expect("campaign config is valid")
}

fn within(limit: Duration, took: Duration) -> Check {
    ensure!(took <= limit, "took {:.1}s, limit {:.0}s", took.as_secs_f64(), limit.as_secs_f64());
    Ok(format!("{:.2}s", took.as_secs_f64()))
}

fn fig2() -> FlatFunction {
    let s = ValueInfo::scalar(Precision::F64);
    FlatFunction::trace("fig2", Registry::clean(), &[s.clone(), s], &|b, x| {
        let v1 = b.mul(x[0], x[1])?;
        let v2 = b.op("log", &[v1])?;
        let v3 = b.op("sin", &[x[0]])?;
        Ok(vec![b.add(v2, v3)?])
    })
    .unwrap()
}

fn golden_trace() -> Check {
    let start = Instant::now();
    let f = fig2();
    let x = [1.0, 2.0];
    let y = f.evaluate(&x, &mut EvalCtx::direct()).map_err(|e| e.to_string())?;
    let want_y = 2f64.ln() + 1f64.sin();
    let want_g = [1.0 + 1f64.cos(), 0.5];
    ensure!((y[0] - want_y).abs() <= 1e-9, "output {} vs {want_y}", y[0]);
    ensure!((y[0] - 1.534618).abs() < 1e-6, "output {} is not 1.534618...", y[0]);
    let rev = jacobian(&f, &x, Mode::Reverse).map_err(|e| e.to_string())?;
    let fwd = jacobian(&f, &x, Mode::Forward).map_err(|e| e.to_string())?;
    let nd = nd_jacobian(&f, &x, &NdConfig::default()).map_err(|e| e.to_string())?;
    for (name, j) in [("reverse", &rev), ("forward", &fwd), ("nd", &nd)] {
        for i in 0..2 {
            ensure!((j.data[i] - want_g[i]).abs() <= 1e-9, "{name} gradient[{i}] = {} vs {}", j.data[i], want_g[i]);
        }
    }
    let t = within(Duration::from_secs(1), start.elapsed())?;
    Ok(format!("y = {:.9}, grad = ({:.9}, {:.9}) in all three modes, {t}", y[0], rev.data[0], rev.data[1]))
}

/// A random F64 point near a seed: every value scaled by a factor in
/// [0.5, 1.5], zeros replaced. Signs, and with them domains, are kept.
fn random_point(seed: &Case, rng: &mut ChaCha8Rng) -> Case {
    let mut c = seed.clone();
    for t in &mut c.inputs {
        let data = t.data.iter().map(|&v| if v == 0.0 { rng.gen_range(-1.0..1.0) } else { v * rng.gen_range(0.5..1.5) }).collect();
        *t = TensorSpec::new(t.shape.clone(), Precision::F64, data).unwrap();
    }
    c
}

fn three_way_consistency() -> Check {
    let start = Instant::now();
    let registry = Registry::clean();
    let cmp = Comparison::gradient();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut violations = Vec::new();
    let api: Vec<&str> = registry.iter().filter(|p| p.role == Role::Api).map(|p| p.name).collect();
    for name in &api {
        let seeds: Vec<Case> = fuzz::seeds(name)
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|c| c.build(registry.clone()).map(|f| f.output_precision() == Precision::F64).unwrap_or(false))
            .filter(|c| c.inputs.iter().all(|t| t.precision == Precision::F64))
            .collect();
        ensure!(!seeds.is_empty(), "{name} has no F64 seed");
        let mut points = 0;
        let mut tries = 0;
        while points < 100 {
            tries += 1;
            ensure!(tries < 10_000, "{name}: cannot draw in-domain points");
            let case = random_point(&seeds[tries % seeds.len()], &mut rng);
            if !validate(&case).is_valid() {
                continue;
            }
            points += 1;
            let f = case.build(registry.clone()).unwrap();
            let x = case.point().unwrap();
            let r = jacobian(&f, &x, Mode::Reverse).map_err(|e| format!("{name}: {e}"))?;
            let w = jacobian(&f, &x, Mode::Forward).map_err(|e| format!("{name}: {e}"))?;
            let n = nd_jacobian(&f, &x, &NdConfig::default()).map_err(|e| format!("{name}: {e}"))?;
            let ok = cmp.all_equal(&r.data, &w.data) && cmp.all_equal(&r.data, &n.data) && cmp.all_equal(&w.data, &n.data);
            if !ok {
                violations.push(format!("{name} at {x:?}"));
            }
        }
        checked += points;
    }
    ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    let t = within(Duration::from_secs(60), start.elapsed())?;
    Ok(format!("{} primitives x 100 points = {checked} Jacobian triples agree, {t}", api.len()))
}

fn fault_detection(c: &Campaigns) -> Check {
    let specs = faults::catalog();
    ensure!(specs.len() >= 10, "only {} faults shipped", specs.len());
    let mut detected = 0;
    let mut misses = Vec::new();
    for (fault, result) in &c.faults {
        let (_, function, verdict, order) = EXPECTED.iter().find(|e| e.0 == *fault).copied().unwrap();
        let hit = result.reports.iter().any(|r| r.function == function && r.verdict == verdict && r.order == order && !r.filtered);
        if hit {
            detected += 1;
        } else {
            misses.push(*fault);
        }
    }
    ensure!(misses.is_empty(), "missed {misses:?}");
    let t = within(Duration::from_secs(600), c.faults_time)?;
    Ok(format!("{detected}/{} faults found with the expected verdict, budget 1000, order 2, {t}", specs.len()))
}

fn outcome(case: &Case, registry: &str) -> OracleOutcome {
    let f = case.build(Registry::variant(registry).unwrap()).unwrap();
    run_oracle(&f, &case.point().unwrap(), &OracleConfig::default())
}

fn precision_of(case: &Case) -> Option<Precision> {
    match case.config.get("precision") {
        Some(ConfigValue::Precision(p)) => Some(*p),
        _ => None,
    }
}

fn filter_soundness(c: &Campaigns) -> Check {
    let clean = &c.clean.reports;
    let abs: Vec<&BugReport> = clean.iter().filter(|r| r.function == "abs").collect();
    ensure!(!abs.is_empty(), "no abs report in the clean campaign");
    ensure!(
        abs.iter().all(|r| r.filtered && r.filter == Some(FilterKind::Differentiability)),
        "an abs report is not filtered by differentiability"
    );
    let abs0 = outcome(&fuzz::seeds("abs").unwrap()[0], "clean");
    ensure!(abs0.filter == Some(FilterKind::Differentiability), "abs at 0: {abs0:?}");

    let casts: Vec<&BugReport> = clean
        .iter()
        .filter(|r| r.function.starts_with("cast") && precision_of(&r.payload.case).is_some_and(|p| p < Precision::F64))
        .collect();
    ensure!(!casts.is_empty(), "no reduced-precision cast report");
    ensure!(casts.iter().all(|r| r.filtered && r.filter == Some(FilterKind::Precision)), "a cast report is not precision-filtered");

    let boundary = &fuzz::seeds("hardshrink").unwrap()[1];
    ensure!(boundary.config.float("hardshrink", "lambd").unwrap() == 0.0, "hardshrink seed 1 is not lambd = 0");
    for fault in ["hardshrink-vjp-boundary", "hardshrink-jvp-boundary"] {
        let o = outcome(boundary, fault);
        ensure!(o.verdict == Verdict::GradientInconsistent && !o.filtered, "hardshrink(lambd=0, x=0) under {fault}: {o:?}");
    }

    // Each fault at the seeds where it changes the outcome.
    let mut triggers = 0;
    for (fault, function, _, _) in EXPECTED {
        let mut fired = false;
        for case in fuzz::seeds(function).unwrap() {
            let faulty = outcome(&case, fault);
            let clean = outcome(&case, "clean");
            if faulty.verdict != Verdict::Pass && (faulty.verdict, faulty.order, faulty.scenarios) != (clean.verdict, clean.order, clean.scenarios) {
                ensure!(!faulty.filtered, "{fault} on a {function} seed was filtered by {:?}", faulty.filter);
                fired = true;
                triggers += 1;
            }
        }
        ensure!(fired, "{fault} fires on no {function} seed");
    }
    for (fault, result) in &c.faults {
        let expected = EXPECTED.iter().find(|e| e.0 == *fault).unwrap();
        let first = result.reports.iter().find(|r| r.function == expected.1 && r.verdict == expected.2 && r.order == expected.3);
        ensure!(first.is_some_and(|r| !r.filtered), "{fault}: first expected report is filtered");
    }
    let suppressed: usize = c
        .faults
        .iter()
        .map(|(_, r)| {
            let clean_filtered: usize = c.clean.summary.filtered.values().sum();
            r.summary.filtered.values().sum::<usize>().saturating_sub(clean_filtered)
        })
        .sum();
    Ok(format!(
        "abs: {} reports, all differentiability-filtered; casts below f64: {} reports, all precision-filtered; \
         {triggers} fault trigger seeds all unfiltered ({suppressed} fault-campaign mutants beyond the clean baseline were filtered)",
        abs.iter().map(|r| r.count).sum::<usize>(),
        casts.iter().map(|r| r.count).sum::<usize>()
    ))
}

fn smooth_scalar_functions() -> Vec<Case> {
    let registry = Registry::clean();
    let rough: Vec<&str> = registry.iter().filter(|p| !p.smooth).map(|p| p.name).collect();
    let mut out = Vec::new();
    for def in fuzz::catalog().iter().filter(|d| !d.fixture) {
        for case in fuzz::seeds(def.id).unwrap() {
            if case.inputs.iter().any(|t| t.precision != Precision::F64) || precision_of(&case).is_some_and(|p| p != Precision::F64) {
                continue;
            }
            let f = case.build(registry.clone()).unwrap();
            if f.output_arity() == 1 && !rough.iter().any(|op| f.graph.uses(op)) {
                out.push(case);
            }
        }
    }
    out
}

fn second_order() -> Check {
    let s = ValueInfo::scalar(Precision::F64);
    let pow = FlatFunction::trace("pow", Registry::clean(), &[s.clone(), s], &|b, x| Ok(vec![b.op("pow", x)?])).unwrap();
    let (a, b) = (2.0f64, 0.0f64);
    let analytic = a.powf(b - 1.0) * (1.0 + b * a.ln());
    let g = grad_function(&pow, Mode::Reverse).map_err(|e| e.to_string())?;
    for mode in [Mode::Reverse, Mode::Forward] {
        let j = jacobian(&g, &[a, b], mode).map_err(|e| e.to_string())?;
        for (i, k) in [(0, 1), (1, 0)] {
            ensure!((j.get(i, k) - analytic).abs() <= 1e-6, "pow cross partial ({i},{k}) = {} under {mode:?}", j.get(i, k));
        }
    }

    let cmp = Comparison::gradient();
    let functions = smooth_scalar_functions();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ids = Vec::new();
    for seed in &functions {
        let f = seed.build(Registry::clean()).unwrap();
        let mut points = 0;
        let mut tries = 0;
        while points < 50 {
            tries += 1;
            ensure!(tries < 5_000, "{}: cannot draw in-domain points", seed.function);
            let case = random_point(seed, &mut rng);
            if !validate(&case).is_valid() {
                continue;
            }
            points += 1;
            let x = case.point().unwrap();
            let h = hessian(&f, &x, Mode::Reverse).map_err(|e| format!("{}: {e}", seed.function))?;
            for i in 0..h.rows {
                for k in 0..i {
                    ensure!(
                        cmp.equal(h.get(i, k), h.get(k, i)),
                        "{} Hessian asymmetric at {x:?}: ({i},{k}) {} vs {}",
                        seed.function,
                        h.get(i, k),
                        h.get(k, i)
                    );
                }
            }
        }
        ids.push(seed.function.as_str());
    }
    ids.dedup();
    Ok(format!("pow cross partials = {analytic}; symmetric Hessians at 50 points for {} seeds of {}", functions.len(), ids.join(", ")))
}

fn short_circuit_semantics() -> Check {
    let rep = OracleConfig::default().filter.rep;
    let o = outcome(&fuzz::seeds("dropout").unwrap()[0], "clean");
    ensure!(o.verdict == Verdict::Random, "dropout gave {:?}", o.verdict);
    ensure!(o.stats.direct == rep, "{} direct evaluations, expected {rep}", o.stats.direct);
    ensure!(o.stats.gradient_evaluations() + o.stats.filter == 0, "gradient work after RANDOM: {:?}", o.stats);

    let o = outcome(&fuzz::seeds("mean").unwrap()[0], "mean-primal-under-ad");
    ensure!(o.verdict == Verdict::OutputInconsistent, "mean fault gave {:?}", o.verdict);
    ensure!(o.stats.nd == 0 && o.stats.filter == 0, "ND ran after an output inconsistency: {:?}", o.stats);

    // The same counters see the work when the checks do run.
    let f = fig2();
    let mut ctx = EvalCtx::new(Scenario::Reverse, 0);
    jacobian_in(&f, &[1.0, 2.0], Mode::Reverse, &mut ctx).map_err(|e| e.to_string())?;
    ensure!(ctx.evaluations() > 0, "reverse Jacobian not counted");
    let o = run_oracle(&f, &[1.0, 2.0], &OracleConfig { order: 1, ..OracleConfig::default() });
    ensure!(o.verdict == Verdict::Pass && o.stats.nd == 4, "fig2 order 1: {:?}", o.stats);
    Ok(format!("RANDOM after {rep} direct calls and no gradient work; OUTPUT_INCONSISTENT with 0 ND evaluations"))
}

fn reproducibility() -> Check {
    let cfg = CampaignConfig { registry: "paper-fixtures".into(), budget: 100, seed: 7, ..CampaignConfig::default() };
    let a = to_jsonl(&run_campaign(&cfg).map_err(|e| e.to_string())?.reports);
    let b = to_jsonl(&run_campaign(&cfg).map_err(|e| e.to_string())?.reports);
    let single = to_jsonl(&run_campaign(&CampaignConfig { threads: 1, ..cfg.clone() }).map_err(|e| e.to_string())?.reports);
    ensure!(a == b, "two runs differ");
    ensure!(a == single, "one thread differs from the default pool");
    let n = a.lines().count();
    ensure!(n > 0, "no reports to replay");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("reports.jsonl");
    std::fs::write(&path, &a).map_err(|e| e.to_string())?;
    for i in 0..n {
        let out = Command::new(env!("CARGO_BIN_EXE_gradfuzz"))
            .args(["replay", "--index", &i.to_string(), "--report"])
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?;
        let replay: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| format!("replay {i}: {e}"))?;
        ensure!(out.status.success() && replay["matches"] == true, "report {i} does not replay: {replay}");
    }
    Ok(format!("{} bytes identical across 3 runs; {n}/{n} reports replay via `gradfuzz replay`", a.len()))
}

fn clean_fpr(c: &Campaigns) -> Check {
    let s = &c.clean.summary;
    let unfiltered: Vec<&str> = c.clean.reports.iter().filter(|r| r.is_finding()).map(|r| r.key.as_str()).collect();
    ensure!(s.findings == 0, "{} unfiltered findings: {unfiltered:?}", s.findings);
    ensure!(c.clean.exit_code() == 0, "exit code {}", c.clean.exit_code());
    let t = within(Duration::from_secs(900), c.clean_time)?;
    Ok(format!("{} cases over {} functions, 0 unfiltered findings ({} filtered), {t}", s.cases, s.functions.len(), s.filtered.values().sum::<usize>()))
}

fn run(results: &mut BTreeMap<usize, (&'static str, Check)>, n: usize, name: &'static str, f: impl FnOnce() -> Check) {
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    results.insert(n, (name, r));
}

#[test]
fn acceptance() {
    let mut results = BTreeMap::new();
    run(&mut results, 1, "golden trace", golden_trace);
    run(&mut results, 2, "three-way consistency", three_way_consistency);
    run(&mut results, 5, "second-order correctness", second_order);
    run(&mut results, 6, "short-circuit semantics", short_circuit_semantics);
    run(&mut results, 7, "reproducibility", reproducibility);

    let start = Instant::now();
    let clean = default_campaign("clean");
    let clean_time = start.elapsed();
    let start = Instant::now();
    let faults: Vec<_> = EXPECTED.iter().map(|(f, ..)| (*f, default_campaign(f))).collect();
    let campaigns = Campaigns { clean, clean_time, faults, faults_time: start.elapsed() };

    run(&mut results, 3, "fault detection", || fault_detection(&campaigns));
    run(&mut results, 4, "filter soundness and efficacy", || filter_soundness(&campaigns));
    run(&mut results, 8, "clean-campaign false positives", || clean_fpr(&campaigns));

    let mut failed = 0;
    for (n, (name, r)) in &results {
        match r {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {why}");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
