use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vigil_cli::power::{parse_observation, power_table, OBSERVED};
use vigil_cli::replicate::replicate;
use vigil_cli::report::{range_text, write_range, write_run, RunSummary};
use vigil_cli::{presets, CliError, RunConfig};
use vigil_core::power::StageProfile;
use vigil_sim::{range_test, Simulation};

#[derive(Parser)]
#[command(name = "vigil", version, about = "Simulate a weighted-voting emergency sensor network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Run configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration; see `vigil presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Set a config value by dotted path, e.g. `defaults.protocol.strict_majority=true`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Source {
    fn load(&self) -> Result<RunConfig, CliError> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p, &self.overrides),
            (None, Some(name)) => presets::preset(name)
                .ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`; see `vigil presets`")))?
                .with_overrides(&self.overrides),
            (None, None) => Err(CliError::Usage("give --config FILE or --preset NAME".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and print its summary.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for events.jsonl, summary.json, summary.txt and CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run a range test (configs with a `[range]` table).
    Range {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        loops: Option<u32>,
        #[arg(long)]
        messages: Option<u32>,
        #[arg(long)]
        gap_ms: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average power and lifetimes per sleep interval.
    Power {
        /// Take the stage profile from this run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Battery capacity in Wh; repeatable.
        #[arg(long = "capacity-wh")]
        capacity_wh: Vec<f64>,
        /// Replace the bench averages used for the fit; `T=mW`, repeatable.
        #[arg(long = "observe", value_name = "T=MW")]
        observe: Vec<String>,
        /// Add a column from simulating an idle hour at each interval.
        #[arg(long)]
        simulate: bool,
        #[arg(long)]
        json: bool,
    },
    /// Repeat a run over many seeds and aggregate.
    Replicate {
        #[command(flatten)]
        source: Source,
        /// Number of seeds, starting at --seed (or the config seed).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// List built-in presets, or print one as TOML.
    Presets {
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vigil: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { source, seed, out, json: as_json } => {
            let config = source.load()?;
            let seed = seed.unwrap_or(config.seed);
            if let Some(spec) = &config.range {
                let report = range_test(&config.topology()?, spec, seed).map_err(CliError::from_sim)?;
                if let Some(dir) = &out {
                    write_range(dir, &report)?;
                }
                print!("{}", range_text(&config.name, &report));
                return Ok(());
            }
            let sim = config.sim_config(seed)?;
            let output = Simulation::new(&sim).and_then(Simulation::run).map_err(CliError::from_sim)?;
            let summary = RunSummary::new(&config.name, &output);
            if let Some(dir) = &out {
                write_run(dir, &summary, &output, &sim)?;
            }
            if as_json {
                println!("{}", json(&summary)?);
            } else {
                print!("{}", summary.to_text());
            }
        }
        Command::Range { source, seed, loops, messages, gap_ms, out } => {
            let config = source.load()?;
            let mut spec = config.range.clone().ok_or_else(|| CliError::Usage(format!("`{}` has no [range] table", config.name)))?;
            spec.loops = loops.unwrap_or(spec.loops);
            spec.messages = messages.unwrap_or(spec.messages);
            spec.gap_ms = gap_ms.unwrap_or(spec.gap_ms);
            let topo = config.topology()?;
            spec.validate(&topo).map_err(CliError::from_sim)?;
            let report = range_test(&topo, &spec, seed.unwrap_or(config.seed)).map_err(CliError::from_sim)?;
            if let Some(dir) = &out {
                write_range(dir, &report)?;
            }
            print!("{}", report.to_csv());
            eprint!("{}", range_text(&config.name, &report));
        }
        Command::Power { config, capacity_wh, observe, simulate, json: as_json } => {
            let profile = match &config {
                Some(p) => RunConfig::load(p, &[])?.profile,
                None => StageProfile::default(),
            };
            let observed = if observe.is_empty() {
                OBSERVED.to_vec()
            } else {
                observe.iter().map(|s| parse_observation(s)).collect::<Result<Vec<_>, _>>()?
            };
            let table = power_table(&profile, &observed, &capacity_wh, simulate)?;
            if as_json {
                println!("{}", json(&table)?);
            } else {
                print!("{}", table.to_text());
            }
        }
        Command::Replicate { source, seeds, seed, json: as_json } => {
            let config = source.load()?;
            let list = config.replicate_seeds(seed, seeds)?;
            let rep = replicate(&config, &list)?;
            if as_json {
                println!("{}", json(&rep)?);
            } else {
                print!("{}", rep.to_text());
            }
        }
        Command::Presets { name: None } => {
            for name in presets::names() {
                let c = presets::preset(&name).expect("listed preset exists");
                println!("{name:<24} {}", c.description);
            }
        }
        Command::Presets { name: Some(name) } => {
            let c = presets::preset(&name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))?;
            print!("{}", c.to_toml());
        }
    }
    Ok(())
}
