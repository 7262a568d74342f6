//! Command-line surface over the hashcore library.
//!
//! Exit codes: 0 success, 1 check failed, 2 usage or validation error.

use clap::{Args, Parser, Subcommand};
use hashcore::analysis::ensemble;
use hashcore::gate::{Digest256, GateSpec};
use hashcore::pipeline::{hashcore, mine, verify, HashCoreConfig, MineResult};
use hashcore::profile::{default_profile, parse_profile};
use hashcore::seedmap::split_seed;
use hashcore::widgetgen::{emit_listing, generate_widget};
use hashcore::widgetvm::execute;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hashcore", version, about = "Proof-of-work with a synthetic-program workload")]
struct Cli {
    #[command(flatten)]
    common: CommonOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Profile file (JSON); defaults to the built-in profile
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Gate: "full" or "trunc:<bits>"
    #[arg(long, global = true, default_value = "full")]
    gate: String,
    /// Override the register-snapshot interval
    #[arg(long, global = true)]
    snapshot_interval: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Hash a file (or stdin when no file is given) and print the digest
    Hash {
        /// Input file; stdin when omitted
        input: Option<PathBuf>,
    },
    /// Search for a nonce whose digest falls below the target
    Mine {
        /// Header bytes, hex
        header: String,
        /// 256-bit target, hex (64 chars), big-endian
        target: String,
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max: u64,
    },
    /// Re-check a mined nonce against the target
    Verify {
        header: String,
        nonce: u64,
        target: String,
    },
    /// Inspect the widget derived from a hash seed
    Widget {
        /// 256-bit hash seed, hex (64 chars)
        seed: String,
        #[arg(long, group = "mode")]
        listing: bool,
        #[arg(long, group = "mode")]
        run: bool,
        #[arg(long, group = "mode")]
        stats: bool,
    },
    /// Generate an ensemble report over seed-derived widgets
    Ensemble {
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output base path; writes <out>.json and <out>.txt
        #[arg(long)]
        out: PathBuf,
    },
}

fn build_config(opts: &CommonOpts) -> anyhow::Result<HashCoreConfig> {
    let gate_spec = if opts.gate == "full" {
        GateSpec::Full
    } else if let Some(bits) = opts.gate.strip_prefix("trunc:") {
        let bits: u16 = bits.parse().map_err(|e| anyhow::anyhow!("bad gate spec: {e}"))?;
        GateSpec::truncated(bits).map_err(|e| anyhow::anyhow!("{e}"))?
    } else {
        anyhow::bail!("gate must be 'full' or 'trunc:<bits>', got '{}'", opts.gate);
    };
    let profile = match &opts.profile {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read profile {}: {e}", path.display()))?;
            parse_profile(&text).map_err(|e| anyhow::anyhow!("{e}"))?
        }
        None => default_profile(),
    };
    if opts.snapshot_interval == Some(0) {
        anyhow::bail!("snapshot interval must be positive");
    }
    let mut cfg = HashCoreConfig::new(gate_spec, profile).map_err(|e| anyhow::anyhow!("{e}"))?;
    cfg.snapshot_interval = opts.snapshot_interval;
    Ok(cfg)
}

fn parse_target(hexstr: &str) -> anyhow::Result<[u8; 32]> {
    let bytes = hex::decode(hexstr).map_err(|e| anyhow::anyhow!("bad target hex: {e}"))?;
    bytes
        .try_into()
        .map_err(|_| anyhow::anyhow!("target must be exactly 32 octets of hex"))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Hash { input } => {
            let data = match input {
                Some(path) => std::fs::read(&path)
                    .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?,
                None => {
                    let mut buf = Vec::new();
                    std::io::stdin().read_to_end(&mut buf)?;
                    buf
                }
            };
            let digest = hashcore(&cfg, &data)?;
            println!("{digest}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Mine {
            header,
            target,
            start,
            max,
        } => {
            if max == 0 {
                anyhow::bail!("--max must be at least 1");
            }
            let header = hex::decode(&header).map_err(|e| anyhow::anyhow!("bad header hex: {e}"))?;
            let target = parse_target(&target)?;
            match mine(&cfg, &header, &target, start, max)? {
                MineResult::Found { nonce, .. } => {
                    println!("{nonce}");
                    Ok(ExitCode::SUCCESS)
                }
                MineResult::Exhausted { .. } => {
                    println!("exhausted");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Verify {
            header,
            nonce,
            target,
        } => {
            let header = hex::decode(&header).map_err(|e| anyhow::anyhow!("bad header hex: {e}"))?;
            let target = parse_target(&target)?;
            if verify(&cfg, &header, nonce, &target)? {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("below-target check failed");
                Ok(ExitCode::from(1))
            }
        }
        Command::Widget {
            seed,
            listing,
            run,
            stats,
        } => {
            let seed = Digest256::from_hex(&seed)
                .map_err(|e| anyhow::anyhow!("bad seed hex: {e}"))?;
            let fields = split_seed(&seed);
            let pp = hashcore::profile::perturb(&cfg.profile, &fields)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let mut w = generate_widget(&pp, fields.bbv_seed, fields.mem_seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            if let Some(k) = cfg.snapshot_interval {
                w.snapshot_interval = k;
                w.program_digest = w.compute_digest();
            }
            if listing {
                print!("{}", emit_listing(&w));
            } else if run {
                let out = execute(&w)?;
                let digest = hashcore::hash_gate(GateSpec::Full, &out.output);
                println!("output_len {}", out.output.len());
                println!("output_digest {digest}");
            } else if stats {
                let out = execute(&w)?;
                let m = &out.metrics;
                println!("program_digest {}", w.program_digest);
                println!("instruction_budget {}", w.instruction_budget);
                println!("dynamic_total {}", m.total_dynamic());
                for (name, v) in ["ialu", "imul", "falu", "load", "store", "branch"]
                    .iter()
                    .zip(m.dyn_counts.iter())
                {
                    println!("dyn_{name} {v}");
                }
                println!("branches_taken {}", m.branches_taken);
                println!("taken_fraction {:.6}", m.taken_fraction());
                println!("predictor_hit_rate {:.6}", m.predictor_hit_rate());
                println!("snapshots {}", m.snapshots_emitted);
                println!("blocks_covered {}", m.blocks_covered);
            } else {
                anyhow::bail!("choose one of --listing, --run, --stats");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Ensemble { n, seed, out } => {
            if n == 0 {
                anyhow::bail!("n must be at least 1");
            }
            let report = ensemble(&cfg, n, seed)?;
            let json_path = out.with_extension("json");
            let txt_path = out.with_extension("txt");
            std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
            std::fs::write(&txt_path, report.to_table())?;
            println!("wrote {} and {}", json_path.display(), txt_path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
