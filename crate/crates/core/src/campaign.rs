//! Campaign runner: functions × generated cases × oracle, deduplicated into
//! JSON-Lines bug reports plus a summary.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzz::{self, derive_seed, Case, FunctionDef};
use crate::graph::Scenario;
use crate::numdiff::NdConfig;
use crate::oracle::{run_oracle, Evidence, FilterConfig, FilterKind, OracleConfig, OracleOutcome, Verdict};
use crate::registry::Registry;
use crate::tensor::Comparison;

pub const REPORT_SCHEMA: &str = "gradfuzz.report/v1";
pub const SUMMARY_SCHEMA: &str = "gradfuzz.summary/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// `clean`, a fault name, or a fault set.
    pub registry: String,
    /// Glob over function ids. Fixtures run only when named exactly.
    pub functions: String,
    pub budget: usize,
    pub order: usize,
    pub output: Comparison,
    pub gradient: Comparison,
    pub filter: FilterConfig,
    pub nd: NdConfig,
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let o = OracleConfig::default();
        CampaignConfig {
            registry: "clean".into(),
            functions: "*".into(),
            budget: 1000,
            order: o.order,
            output: o.output,
            gradient: o.gradient,
            filter: o.filter,
            nd: o.nd,
            seed: 0,
            threads: 0,
            out: None,
        }
    }
}

impl CampaignConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Invalid(format!("campaign config: {e}")))
    }

    /// Oracle settings for one case.
    pub fn oracle(&self, seed: u64) -> OracleConfig {
        OracleConfig {
            order: self.order,
            output: self.output,
            gradient: self.gradient,
            nd: self.nd,
            filter: self.filter,
            seed,
            ..OracleConfig::default()
        }
    }

    /// Checks everything that can fail before any case runs.
    pub fn validate(&self) -> Result<(std::sync::Arc<Registry>, Vec<&'static FunctionDef>)> {
        if self.order < 1 {
            return Err(Error::Invalid("order must be at least 1".into()));
        }
        self.filter.validate()?;
        if !(self.nd.eps > 0.0) {
            return Err(Error::Invalid("nd.eps must be positive".into()));
        }
        let registry = Registry::variant(&self.registry)?;
        Ok((registry, select_functions(&self.functions)?))
    }
}

/// Functions whose id matches `pattern`, in catalog order.
pub fn select_functions(pattern: &str) -> Result<Vec<&'static FunctionDef>> {
    let glob = glob::Pattern::new(pattern).map_err(|e| Error::Invalid(format!("function filter `{pattern}`: {e}")))?;
    let picked: Vec<_> =
        fuzz::catalog().iter().filter(|d| glob.matches(d.id) && (!d.fixture || d.id == pattern)).collect();
    if picked.is_empty() {
        return Err(Error::UnknownFunction(pattern.to_string()));
    }
    Ok(picked)
}

/// Everything needed to rerun one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub registry: String,
    pub case_index: usize,
    pub case: Case,
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub schema: String,
    pub key: String,
    pub function: String,
    pub verdict: Verdict,
    pub order: usize,
    pub scenarios: Option<(Scenario, Scenario)>,
    #[serde(with = "json_f64")]
    pub max_discrepancy: f64,
    pub filtered: bool,
    pub filter: Option<FilterKind>,
    pub failure: Option<String>,
    pub count: usize,
    pub evidence: Vec<ReportEvidence>,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEvidence {
    pub scenario: Scenario,
    #[serde(with = "json_f64::vec")]
    pub values: Vec<f64>,
}

impl From<&Evidence> for ReportEvidence {
    fn from(e: &Evidence) -> Self {
        ReportEvidence { scenario: e.scenario, values: e.values.clone() }
    }
}

/// `function|VERDICT|order|a,b|filter`.
pub fn dedup_key(function: &str, o: &OracleOutcome) -> String {
    let pair = o.scenarios.map_or("-".to_string(), |(a, b)| format!("{a},{b}"));
    let filter = o.filter.map_or("-", |f| f.name());
    format!("{function}|{}|{}|{pair}|{filter}", o.verdict.name(), o.order)
}

impl BugReport {
    pub fn new(o: &OracleOutcome, payload: Payload) -> Self {
        BugReport {
            schema: REPORT_SCHEMA.into(),
            key: dedup_key(&payload.case.function, o),
            function: payload.case.function.clone(),
            verdict: o.verdict,
            order: o.order,
            scenarios: o.scenarios,
            max_discrepancy: o.max_discrepancy,
            filtered: o.filtered,
            filter: o.filter,
            failure: o.failure.clone(),
            count: 1,
            evidence: o.evidence.iter().map(ReportEvidence::from).collect(),
            payload,
        }
    }

    pub fn is_finding(&self) -> bool {
        self.verdict != Verdict::Pass && !self.filtered
    }
}

/// One record per key, in order of first occurrence, counts summed.
pub fn dedup(reports: Vec<BugReport>) -> Vec<BugReport> {
    let mut out: Vec<BugReport> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for r in reports {
        match seen.get(&r.key) {
            Some(&i) => out[i].count += r.count,
            None => {
                seen.insert(r.key.clone(), out.len());
                out.push(r);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub cases: usize,
    pub invalid: usize,
    /// Cases skipped after a RANDOM verdict.
    pub skipped: usize,
    pub verdicts: BTreeMap<Verdict, usize>,
    pub filtered: usize,
    pub findings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub registry: String,
    pub seed: u64,
    pub budget: usize,
    pub order: usize,
    pub cases: usize,
    pub invalid: usize,
    pub verdicts: BTreeMap<Verdict, usize>,
    pub filtered: BTreeMap<FilterKind, usize>,
    pub findings: usize,
    pub reports: usize,
    pub functions: BTreeMap<String, FunctionSummary>,
    pub wall_time_s: f64,
    pub exit_code: i32,
}

impl Summary {
    /// Verdict breakdown per function as a plain-text table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>6} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}\n",
            "function", "cases", "invalid", "PASS", "RAND", "OUT", "GRAD", "FAIL", "filtered", "findings"
        );
        let row = |name: &str, f: &FunctionSummary| {
            let v = |k| f.verdicts.get(&k).copied().unwrap_or(0);
            format!(
                "{:<14} {:>6} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}\n",
                name,
                f.cases,
                f.invalid,
                v(Verdict::Pass),
                v(Verdict::Random),
                v(Verdict::OutputInconsistent),
                v(Verdict::GradientInconsistent),
                v(Verdict::EvalFailure),
                f.filtered,
                f.findings
            )
        };
        let mut total = FunctionSummary::default();
        for (name, f) in &self.functions {
            s += &row(name, f);
            total.cases += f.cases;
            total.invalid += f.invalid;
            total.filtered += f.filtered;
            total.findings += f.findings;
            for (k, n) in &f.verdicts {
                *total.verdicts.entry(*k).or_default() += n;
            }
        }
        s += &row("total", &total);
        s
    }
}

pub struct CampaignResult {
    pub reports: Vec<BugReport>,
    pub summary: Summary,
}

impl CampaignResult {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }
}

enum CaseResult {
    Invalid,
    Skipped,
    Ran(Box<OracleOutcome>),
}

/// Seed of the oracle run for one case.
pub fn case_seed(seed: u64, function: &str, index: usize) -> u64 {
    derive_seed(seed, &[function, "oracle", &index.to_string()])
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    let (registry, functions) = cfg.validate()?;
    let start = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if cfg.threads > 0 {
        pool = pool.num_threads(cfg.threads);
    }
    let pool = pool.build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;

    let streams: Vec<Vec<Case>> = pool.install(|| {
        functions.par_iter().map(|d| fuzz::generate(d.id, cfg.budget, cfg.seed)).collect::<Result<_>>()
    })?;
    let first_random: Vec<AtomicUsize> = functions.iter().map(|_| AtomicUsize::new(usize::MAX)).collect();
    let jobs: Vec<(usize, usize)> =
        streams.iter().enumerate().flat_map(|(f, s)| (0..s.len()).map(move |i| (f, i))).collect();

    let results: Vec<CaseResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(f, i)| {
                if first_random[f].load(Ordering::Relaxed) < i {
                    return CaseResult::Skipped;
                }
                let case = &streams[f][i];
                if !fuzz::validate(case).is_valid() {
                    return CaseResult::Invalid;
                }
                let oracle = cfg.oracle(case_seed(cfg.seed, &case.function, i));
                let outcome = run_case(case, &registry, &oracle);
                if outcome.verdict == Verdict::Random {
                    first_random[f].fetch_min(i, Ordering::Relaxed);
                }
                CaseResult::Ran(Box::new(outcome))
            })
            .collect()
    });

    let mut per_fn: BTreeMap<String, FunctionSummary> = BTreeMap::new();
    let mut raw = Vec::new();
    for (&(f, i), r) in jobs.iter().zip(results) {
        let case = &streams[f][i];
        let s = per_fn.entry(case.function.clone()).or_default();
        // Everything after the first RANDOM case is dropped.
        if i > first_random[f].load(Ordering::Relaxed) {
            s.skipped += 1;
            continue;
        }
        s.cases += 1;
        match r {
            CaseResult::Skipped => unreachable!("skipped cases lie after the first RANDOM"),
            CaseResult::Invalid => s.invalid += 1,
            CaseResult::Ran(o) => {
                *s.verdicts.entry(o.verdict).or_default() += 1;
                if o.verdict == Verdict::Pass {
                    continue;
                }
                if o.filtered {
                    s.filtered += 1;
                } else {
                    s.findings += 1;
                }
                let payload = Payload {
                    registry: cfg.registry.clone(),
                    case_index: i,
                    case: case.clone(),
                    oracle: cfg.oracle(case_seed(cfg.seed, &case.function, i)),
                };
                raw.push(BugReport::new(&o, payload));
            }
        }
    }
    let filtered_by = raw.iter().filter(|r| r.filtered).fold(BTreeMap::new(), |mut m, r| {
        if let Some(f) = r.filter {
            *m.entry(f).or_default() += 1;
        }
        m
    });
    let reports = dedup(raw);
    let mut verdicts = BTreeMap::new();
    for f in per_fn.values() {
        for (k, n) in &f.verdicts {
            *verdicts.entry(*k).or_default() += n;
        }
    }
    let findings = per_fn.values().map(|f| f.findings).sum();
    let summary = Summary {
        schema: SUMMARY_SCHEMA.into(),
        registry: cfg.registry.clone(),
        seed: cfg.seed,
        budget: cfg.budget,
        order: cfg.order,
        cases: per_fn.values().map(|f| f.cases).sum(),
        invalid: per_fn.values().map(|f| f.invalid).sum(),
        verdicts,
        filtered: filtered_by,
        findings,
        reports: reports.len(),
        functions: per_fn,
        wall_time_s: start.elapsed().as_secs_f64(),
        exit_code: i32::from(findings > 0),
    };
    Ok(CampaignResult { reports, summary })
}

fn run_case(case: &Case, registry: &std::sync::Arc<Registry>, oracle: &OracleConfig) -> OracleOutcome {
    let built = case.build(registry.clone()).and_then(|f| Ok((case.point()?, f)));
    match built {
        Ok((x, f)) => run_oracle(&f, &x, oracle),
        Err(e) => {
            let mut o = OracleOutcome::eval_failure(Scenario::Direct, 1, &e);
            o.failure = Some(format!("build: {e}"));
            o
        }
    }
}

pub fn to_jsonl(reports: &[BugReport]) -> String {
    reports.iter().map(|r| serde_json::to_string(r).expect("reports serialize") + "\n").collect()
}

pub fn from_jsonl(text: &str) -> Result<Vec<BugReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Invalid(format!("report line {}: {e}", i + 1))))
        .collect()
}

/// Result of rerunning a report's payload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replay {
    pub verdict: Verdict,
    #[serde(with = "json_f64")]
    pub max_discrepancy: f64,
    pub filtered: bool,
    pub matches: bool,
}

pub fn replay(report: &BugReport) -> Result<Replay> {
    let registry = Registry::variant(&report.payload.registry)?;
    let o = run_case(&report.payload.case, &registry, &report.payload.oracle);
    Ok(Replay {
        verdict: o.verdict,
        max_discrepancy: o.max_discrepancy,
        filtered: o.filtered,
        matches: o.verdict == report.verdict
            && o.max_discrepancy.to_bits() == report.max_discrepancy.to_bits()
            && dedup_key(&report.function, &o) == report.key,
    })
}

/// f64 as a JSON number, or as "inf", "-inf", "nan" when not finite.
mod json_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(E::custom(format!("bad number `{t}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}
