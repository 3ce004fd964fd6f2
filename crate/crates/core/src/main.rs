use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use gradfuzz::campaign::{from_jsonl, replay, run_campaign, to_jsonl, CampaignConfig};
use gradfuzz::fuzz;
use gradfuzz::registry::{faults, Registry, Role};

#[derive(Parser)]
#[command(name = "gradfuzz", version, about = "Differential testing of automatic differentiation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Run {
        /// JSON campaign config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `clean`, a fault name or a fault set.
        #[arg(long)]
        registry: Option<String>,
        /// Glob over function ids.
        #[arg(long)]
        functions: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// JSON-Lines report file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print a per-function verdict table to stderr.
        #[arg(long)]
        summary_table: bool,
    },
    /// Rerun one report and compare the verdict.
    Replay {
        #[arg(long)]
        report: PathBuf,
        /// Zero-based record index.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// List primitives, fuzzable functions and registry variants.
    ListOps,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<u8> {
    match Cli::parse().command {
        Command::Run { config, registry, functions, budget, order, seed, threads, out, summary_table } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    CampaignConfig::from_json(&text)?
                }
                None => CampaignConfig::default(),
            };
            cfg.registry = registry.unwrap_or(cfg.registry);
            cfg.functions = functions.unwrap_or(cfg.functions);
            cfg.budget = budget.unwrap_or(cfg.budget);
            cfg.order = order.unwrap_or(cfg.order);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.threads = threads.unwrap_or(cfg.threads);
            cfg.out = out.or(cfg.out);

            let result = run_campaign(&cfg)?;
            let jsonl = to_jsonl(&result.reports);
            match &cfg.out {
                Some(p) => std::fs::write(p, &jsonl).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{jsonl}"),
            }
            if summary_table {
                eprint!("{}", result.summary.table());
            }
            let summary = serde_json::to_string(&result.summary)?;
            if cfg.out.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
            Ok(result.exit_code() as u8)
        }
        Command::Replay { report, index } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let reports = from_jsonl(&text)?;
            let Some(r) = reports.get(index) else {
                bail!("{} has {} records, no index {index}", report.display(), reports.len());
            };
            let outcome = replay(r)?;
            println!("{}", serde_json::to_string(&outcome)?);
            Ok(if outcome.matches { 0 } else { 1 })
        }
        Command::ListOps => {
            let registry = Registry::standard();
            println!("{:<18} {:>5} {:<10} {:<6} derivative", "primitive", "arity", "role", "smooth");
            for p in registry.iter() {
                let role = match p.role {
                    Role::Api => "api",
                    Role::Auxiliary => "auxiliary",
                    Role::Fixture => "fixture",
                };
                let arity = p.arity.map_or("n".to_string(), |a| a.to_string());
                println!("{:<18} {:>5} {:<10} {:<6} {}", p.name, arity, role, p.smooth, p.doc.vjp);
            }
            println!();
            let ids: Vec<_> = fuzz::catalog().iter().map(|d| if d.fixture { format!("{}*", d.id) } else { d.id.to_string() }).collect();
            println!("functions (* = fixture): {}", ids.join(" "));
            println!();
            println!("registry variants: clean");
            for name in faults::variant_names() {
                match faults::resolve(name).as_deref() {
                    Some([f]) => println!("  {:<32} {:<16} {}", name, format!("{:?}", f.site), f.mutation),
                    Some(fs) => println!("  {:<32} {} faults", name, fs.len()),
                    None => {}
                }
            }
            Ok(0)
        }
    }
}
