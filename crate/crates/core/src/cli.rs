//! The `bias-eval` command line: `env describe`, `run`, `sweep`, and
//! `report`.
//!
//! Exit codes: 0 on success, 2 on invalid configuration, 3 on numerical
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{analyze_chain, StateClass};
use crate::experiments::{run, Mode, RunConfig, RunOutput, Scheme};
use crate::mdp::{env_to_json, induce_chain, load_env, random_deterministic_policy, StreamParams};
use crate::report::{
    csv_string, format_table, read_csv, write_csv, write_curve, ResultRow, TableFormat,
};

#[derive(Parser)]
#[command(
    name = "bias-eval",
    about = "Policy bias evaluation on unichain MDPs with systems of seminorm LSTD approximators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect environments.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
    /// Train and evaluate one scheme on one environment.
    Run(RunArgs),
    /// Run a grid of configurations from a key-value config file.
    Sweep {
        /// Config file listing envs, rhos, schemes and seeds.
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize result CSVs as an env-by-scheme table.
    Report {
        /// Input CSV files (as written by `run`/`sweep`).
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output format.
        #[arg(long, default_value = "md")]
        format: String,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Print a summary of an environment (mnemonic or definition file).
    Describe {
        target: String,
        /// Emit the full definition as JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// exact or sampling.
    #[arg(long)]
    mode: String,
    /// Environment mnemonic (x9d, h6, ...) or definition file path.
    #[arg(long)]
    env: String,
    /// Feature-to-state dimensional proportion in (0, 1).
    #[arg(long)]
    rho: f64,
    /// Scheme mnemonic (buw, p01, p02am, ..., pinf).
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    seed: u64,
    /// Trials for sampling mode.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Learning-curve checkpoints for sampling mode.
    #[arg(long, default_value_t = 10)]
    checkpoints: usize,
    /// Output directory (results.csv plus curve files); stdout only when
    /// omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse and execute, returning the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version requests are successes; everything else is a
            // configuration problem.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Env { command } => match command {
            EnvCommand::Describe { target, json } => describe_env(&target, json),
        },
        Command::Run(args) => run_command(&args),
        Command::Sweep { config } => sweep_command(&config),
        Command::Report { inputs, format } => report_command(&inputs, &format),
    }
}

fn describe_env(target: &str, json: bool) -> Result<()> {
    let env = load_env(target, &StreamParams::default())?;
    if json {
        println!("{}", env_to_json(&env));
        return Ok(());
    }
    println!("name:        {}", env.name);
    println!("states:      {}", env.n_states());
    println!("actions:     {}", env.n_actions());
    let isd = env.initial_dist_vector();
    let support: Vec<usize> = (0..env.n_states()).filter(|&s| isd[s] > 0.0).collect();
    println!(
        "initial:     uniform over {} states ({:?}...)",
        support.len(),
        &support[..support.len().min(8)]
    );
    // Classification under an arbitrary deterministic policy; the
    // transient/recurrent split of these environments is policy-invariant.
    let policy = random_deterministic_policy(&env, 0);
    let chain = induce_chain(&env, &policy)?;
    let analysis = analyze_chain(&chain, &isd, 1e-8, 1e-6)?;
    let transient = analysis
        .classification
        .iter()
        .filter(|&&c| c == StateClass::Transient)
        .count();
    println!(
        "classes:     {} transient, {} recurrent",
        transient,
        env.n_states() - transient
    );
    println!("gain:        {:.6} (policy from seed 0)", analysis.gain);
    println!("t_abs_max:   {}", analysis.t_abs_max);
    println!("t_mix:       {}", analysis.t_mix);
    Ok(())
}

fn build_config(args: &RunArgs) -> Result<RunConfig> {
    let mode: Mode = args.mode.parse()?;
    let scheme: Scheme = args.scheme.parse()?;
    let mut cfg = RunConfig::new(&args.env, args.rho, scheme, mode, args.seed);
    cfg.n_trials = args.trials;
    cfg.checkpoints = args.checkpoints;
    Ok(cfg)
}

fn curve_file_name(row: &ResultRow) -> String {
    format!(
        "curve_{}_{}_{}_{}.jsonl",
        row.env, row.scheme, row.rho, row.seed
    )
}

fn emit_outputs(outputs: &[RunOutput], out: Option<&Path>) -> Result<()> {
    let rows: Vec<ResultRow> = outputs.iter().map(|o| ResultRow::from(&o.report)).collect();
    match out {
        None => print!("{}", csv_string(&rows)),
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_csv(&dir.join("results.csv"), &rows)?;
            for (output, row) in outputs.iter().zip(&rows) {
                if !output.curve.is_empty() {
                    write_curve(&dir.join(curve_file_name(row)), &output.curve)?;
                }
            }
            println!("wrote {} result row(s) to {}", rows.len(), dir.display());
        }
    }
    Ok(())
}

fn run_command(args: &RunArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let output = run(&cfg)?;
    emit_outputs(&[output], args.out.as_deref())
}

/// Key-value sweep config: `envs`, `rhos`, `schemes`, `seeds` (list or
/// `a..b` range), optional `mode`, `trials`, `checkpoints`, `out`.
fn parse_sweep_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse(format!(
                "sweep config line {}: expected 'key = value'",
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad seed range start: {e}")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad seed range end: {e}")))?;
        if hi <= lo {
            return Err(Error::Parse("empty seed range".into()));
        }
        return Ok((lo..hi).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad seed '{s}': {e}")))
        })
        .collect()
}

fn sweep_command(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let map = parse_sweep_config(&text)?;
    let get = |key: &str| {
        map.get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("sweep config misses '{key}'")))
    };
    let envs: Vec<String> = get("envs")?.split(',').map(|s| s.trim().to_string()).collect();
    let rhos: Vec<f64> = get("rhos")?
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad rho '{s}': {e}")))
        })
        .collect::<Result<_>>()?;
    let schemes: Vec<Scheme> = get("schemes")?
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    let seeds = parse_seed_list(get("seeds")?)?;
    let mode: Mode = map.get("mode").map_or("exact", |s| s.as_str()).parse()?;
    let trials: usize = map
        .get("trials")
        .map_or(Ok(1000), |s| {
            s.parse()
                .map_err(|e| Error::Parse(format!("bad trials: {e}")))
        })?;
    let checkpoints: usize = map
        .get("checkpoints")
        .map_or(Ok(10), |s| {
            s.parse()
                .map_err(|e| Error::Parse(format!("bad checkpoints: {e}")))
        })?;
    let out = PathBuf::from(map.get("out").map_or("results", |s| s.as_str()));

    let mut configs = Vec::new();
    for env in &envs {
        for &rho in &rhos {
            for &scheme in &schemes {
                for &seed in &seeds {
                    let mut cfg = RunConfig::new(env, rho, scheme, mode, seed);
                    cfg.n_trials = trials;
                    cfg.checkpoints = checkpoints;
                    configs.push(cfg);
                }
            }
        }
    }

    // Infeasible combinations (zero feature dimensions, scheme/mode
    // mismatches) become NaN rows, mirroring how missing cells are
    // reported; anything else aborts the sweep.
    let results: Vec<Result<RunOutput>> = configs.par_iter().map(run).collect();
    let mut rows = Vec::with_capacity(configs.len());
    let mut curves = Vec::new();
    for (cfg, result) in configs.iter().zip(results) {
        match result {
            Ok(output) => {
                let row = ResultRow::from(&output.report);
                if !output.curve.is_empty() {
                    curves.push((curve_file_name(&row), output.curve));
                }
                rows.push(row);
            }
            Err(Error::InvalidConfig(_)) => rows.push(ResultRow {
                env: cfg.env.clone(),
                scheme: cfg.scheme.name().to_string(),
                rho: cfg.rho,
                seed: cfg.seed,
                eps_pb: f64::NAN,
                eps_ms: f64::NAN,
            }),
            Err(err) => return Err(err),
        }
    }
    std::fs::create_dir_all(&out)?;
    write_csv(&out.join("results.csv"), &rows)?;
    for (name, curve) in curves {
        write_curve(&out.join(name), &curve)?;
    }
    println!("wrote {} result row(s) to {}", rows.len(), out.display());
    Ok(())
}

fn report_command(inputs: &[PathBuf], format: &str) -> Result<()> {
    let format: TableFormat = format.parse()?;
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(read_csv(path)?);
    }
    print!("{}", format_table(&rows, format));
    Ok(())
}
