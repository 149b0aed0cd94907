use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memlab::bridge::{BridgeClient, Endpoint};
use memlab::experiments::{
    comparison_charts, read_string_file, read_summary_csv, run_manifest, write_stamped, Manifest, RunOptions,
    RunReport, Stage,
};
use memlab::lm::CausalLm;
use memlab::micro_lm::load_checkpoint;
use memlab::probes::{probe_sweep, ProbeSpec};
use memlab::{LabError, Result};

#[derive(Parser)]
#[command(name = "memlab", version, about = "Measure how small transformers memorise random token strings")]
struct Cli {
    /// Run against a model bridge (`tcp://host:port` or a command line) instead of the micro model.
    #[arg(long, global = true)]
    bridge_endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Global seed; replaces the manifest's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; replaces MEMLAB_OUT and the manifest's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs per string, each with the next recipe seed.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    #[command(flatten)]
    Op(Op),
    /// Run a subcommand against a bridge endpoint.
    Bridge {
        #[arg(long)]
        endpoint: String,
        #[command(subcommand)]
        op: Op,
    },
}

#[derive(Subcommand)]
enum Op {
    /// Realise the manifest's strings and write them as JSON.
    Generate(ManifestArgs),
    /// Train one model per string and write traces, metrics, probes and plots.
    Train(ManifestArgs),
    /// Train one model on the manifest's strings one after another.
    Seqmem(ManifestArgs),
    /// Probe a trained model on a string.
    Probe {
        /// Micro-model checkpoint; omit when probing through a bridge.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// String file written by `generate` or `train`.
        #[arg(long)]
        string: PathBuf,
        /// Probe spec (JSON or TOML); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Redraw the standard plots from summary CSVs.
    Report {
        #[arg(long = "csv", required = true)]
        csvs: Vec<PathBuf>,
        /// Alphabet size for the guess baselines.
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Manifest(_) | LabError::InvalidArgument(_) | LabError::Infeasible(_) | LabError::Capacity(_) => 2,
        LabError::NumericalFailure(_) => 3,
        LabError::BridgeUnreachable(_) => 4,
        _ => 1,
    }
}

fn load_manifest(a: &ManifestArgs) -> Result<Manifest> {
    let mut m = Manifest::load(&a.manifest)?;
    if let Some(r) = a.repeats {
        m.repeats = r;
    }
    let m = m.with_seed(a.seed);
    m.validate()?;
    Ok(m)
}

fn print_report(r: &RunReport) {
    println!("manifest sha256 {}", r.manifest_hash);
    println!("global seed {}", r.seed);
    for (name, seed) in &r.string_seeds {
        println!("string {name} recipe seed {seed}");
    }
    for s in &r.runs {
        let opt = |o: Option<usize>| o.map_or("none".to_string(), |e| e.to_string());
        println!(
            "run {}: ell {} epochs {} final accuracy {:.4} onset {} full memorisation {}",
            s.name,
            s.ell,
            s.epochs_run,
            s.final_accuracy,
            opt(s.memorisation_onset),
            opt(s.full_memorisation_epoch)
        );
    }
    if let Some(q) = &r.sequential {
        for (j, name) in q.strings.iter().enumerate() {
            println!(
                "sequential {name}: epochs to 0.99 {} peak {:.4} final {:.4}",
                q.epochs_to_99[j].map_or("none".to_string(), |e| e.to_string()),
                q.peak_accuracy[j],
                q.final_accuracy[j].unwrap_or(f64::NAN)
            );
        }
    }
    println!("artifacts {}", r.out_dir.display());
}

fn load_spec(path: Option<&Path>) -> Result<ProbeSpec> {
    let Some(p) = path else {
        return Ok(ProbeSpec::default());
    };
    let text = std::fs::read_to_string(p)?;
    let spec: ProbeSpec = if p.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| LabError::invalid(format!("{}: {e}", p.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| LabError::invalid(format!("{}: {e}", p.display())))?
    };
    spec.validate()?;
    Ok(spec)
}

fn series_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "summary" {
        if let Some(parent) = path.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

fn run(op: Op, bridge: Option<String>) -> Result<()> {
    let opts = |a: &ManifestArgs| RunOptions {
        out_root: a.out.clone(),
        bridge_endpoint: bridge.clone(),
    };
    match op {
        Op::Generate(a) => print_report(&run_manifest(&load_manifest(&a)?, Stage::Generate, &opts(&a))?),
        Op::Train(a) => print_report(&run_manifest(&load_manifest(&a)?, Stage::Train, &opts(&a))?),
        Op::Seqmem(a) => print_report(&run_manifest(&load_manifest(&a)?, Stage::Sequential, &opts(&a))?),
        Op::Probe {
            checkpoint,
            string,
            spec,
            seed,
            out,
        } => {
            let s = read_string_file(&string)?;
            let mut spec = load_spec(spec.as_deref())?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let lm: Box<dyn CausalLm> = match (checkpoint, bridge) {
                (Some(c), None) => Box::new(load_checkpoint(&c)?),
                (None, Some(ep)) => Box::new(BridgeClient::connect(&Endpoint::parse(&ep)?)?),
                (Some(_), Some(_)) => return Err(LabError::invalid("give either --checkpoint or a bridge endpoint, not both")),
                (None, None) => return Err(LabError::invalid("probe needs --checkpoint or a bridge endpoint")),
            };
            let report = probe_sweep(&*lm, &s, &spec)?;
            std::fs::create_dir_all(&out)?;
            report.write_csv(&out.join("probe.csv"))?;
            write_stamped(&out.join("probe.json"), None, &report)?;
            for c in &report.cells {
                println!(
                    "k {} policy {} gc {} accuracy {}",
                    c.k,
                    c.policy,
                    c.gc_scale,
                    c.accuracy.map_or("none".to_string(), |a| format!("{a:.4}"))
                );
            }
        }
        Op::Report { csvs, ell, out } => {
            let mut runs = Vec::new();
            for p in &csvs {
                runs.push((series_name(p), read_summary_csv(p)?));
            }
            let ells: Vec<usize> = ell.into_iter().collect();
            let charts = if ells.is_empty() {
                memlab::experiments::trace_charts(&runs, None)
            } else {
                comparison_charts(&runs, &ells)
            };
            std::fs::create_dir_all(&out)?;
            let names: Vec<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
            for (stem, chart) in &charts {
                chart.write(&out.join(format!("{stem}.svg")), Some(&format!("series {}", names.join(", "))))?;
            }
            println!("wrote {} charts to {}", charts.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Op(op) => run(op, cli.bridge_endpoint),
        Command::Bridge { endpoint, op } => run(op, Some(endpoint)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memlab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
