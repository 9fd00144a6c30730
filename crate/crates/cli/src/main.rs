use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rgrec::config::{parse_pairs, PipelineConfig};
use rgrec::pipeline::{self, Ablation, Pipeline, Stage};
use rgrec::synth::{self, SynthConfig};
use rgrec::Error;

const COMMANDS: &str = "stages: ingest, mine, embed, score-rules, pretrain, train, evaluate
ablations: rule-length, rule-count, filter-strategy, no-pretrain, cold-start
other: runs (repeat the full pipeline), synth (write a synthetic dataset)";

/// Rule-guided knowledge-graph recommendation.
#[derive(Parser, Debug)]
#[command(name = "rgrec", version, after_help = COMMANDS)]
struct Cli {
    /// Stage, ablation, `runs` or `synth`.
    command: String,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-exact reproduction.
    #[arg(long)]
    threads: Option<usize>,
    /// Fail instead of recomputing missing or stale upstream stages.
    #[arg(long)]
    no_deps: bool,
    /// Output directory for `synth`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings; they win over the configuration file.
    overrides: Vec<String>,
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\nUsage: rgrec <stage|ablation> --config <file> [--seed N] [--threads N] [overrides...]\n{COMMANDS}");
    ExitCode::from(1)
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, Error> {
    let mut pairs = parse_pairs(&cli.overrides.join("\n"), "command line")?;
    if let Some(s) = cli.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    Ok(pairs)
}

fn synth_config(pairs: &[(String, String)]) -> Result<SynthConfig, Error> {
    let mut cfg = SynthConfig::default();
    for (k, v) in pairs {
        let bad = || Error::Config(format!("invalid value `{v}` for `{k}`"));
        match k.as_str() {
            "users" => cfg.users = v.parse().map_err(|_| bad())?,
            "items" => cfg.items = v.parse().map_err(|_| bad())?,
            "genres" => cfg.genres = v.parse().map_err(|_| bad())?,
            "artists_per_genre" => cfg.artists_per_genre = v.parse().map_err(|_| bad())?,
            "interactions_per_user" => cfg.interactions_per_user = v.parse().map_err(|_| bad())?,
            "affinity" => cfg.affinity = v.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown synth setting `{k}`"))),
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let pairs = overrides(cli)?;
    if cli.command == "synth" {
        let out = cli
            .out
            .as_ref()
            .ok_or_else(|| Error::Config("synth needs --out <dir>".into()))?;
        synth::write(&synth_config(&pairs)?, out)?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <file> is required".into()))?;
    let cfg = PipelineConfig::load(path, &pairs)?;

    if cli.command == "runs" {
        let report = pipeline::run_repeated(&cfg)?;
        print!("{}\n{}", report.table(), report.machine());
    } else if let Ok(mode) = cli.command.parse::<Ablation>() {
        print!("{}", pipeline::run_ablation(&cfg, mode)?.table());
    } else if let Ok(stage) = cli.command.parse::<Stage>() {
        let p = Pipeline::new(cfg)?;
        p.run(stage, !cli.no_deps)?;
        if stage == Stage::Evaluate {
            let report = p.read_report()?;
            print!("{}\n{}", report.table(), report.machine());
        } else {
            println!("{stage}: done");
        }
    } else {
        return Err(Error::Config(format!("unknown command `{}`", cli.command)));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return usage(&e.kind().to_string()),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => usage(&e.to_string()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
