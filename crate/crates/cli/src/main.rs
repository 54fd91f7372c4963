use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structdemix::analysis::{estimate_srsc_srss, AnalysisReport, DEFAULT_LEVEL_MULTIPLIER};
use structdemix::experiments::{
    aggregate, emit_outputs, error_chart, read_rows_csv, run_sweep, success_chart, Algorithm,
    ExperimentConfig, OutputKind, Prepared,
};
use structdemix::io::{
    read_instance, write_instance, write_json, write_trace_csv, InstanceFile, SolveResultFile,
};
use structdemix::links::Link;
use structdemix::model::normalized_error;
use structdemix::solvers::Problem;
use structdemix::{Error, Result};

/// Demixing of block-sparse components from nonlinear observations.
#[derive(Debug, Parser)]
#[command(name = "structdemix", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML); the desk-scale fixture when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Algorithm(s): struct-dht, dht, dst, mf-struct-dht. Repeatable.
    #[arg(long, global = true, value_delimiter = ',')]
    algorithm: Vec<Algorithm>,
    /// Link function: identity, sigmoid, sin, sawtooth.
    #[arg(long, global = true)]
    link: Option<Link>,
    /// Tone grid half-width (overrides 3R).
    #[arg(long, global = true)]
    omega_max: Option<f64>,
    /// Tone grid resolution (overrides π/(8T)).
    #[arg(long, global = true)]
    resolution: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize one instance and write it as JSON.
    Generate {
        /// Number of measurements (default: the first grid point).
        #[arg(long)]
        m: Option<usize>,
        /// Trial index used for seed derivation.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run one algorithm on an instance file and print the result JSON.
    Solve {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run a Monte-Carlo sweep and write CSV, JSON and SVG outputs.
    Experiment,
    /// Estimate SRSC/SRSS constants on an instance and report the step window and rate.
    Analyze {
        #[arg(long)]
        instance: PathBuf,
        /// Sparsity level of the restricted Hessians (default: 6s, capped at 2n).
        #[arg(long)]
        level: Option<usize>,
        /// Number of random supports probed.
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Render success and error charts from a sweep CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Generate { m, trial } => generate(common, m, trial),
        Command::Solve { instance } => solve(common, &instance),
        Command::Experiment => experiment(common),
        Command::Analyze {
            instance,
            level,
            trials,
        } => analyze(common, &instance, level, trials),
        Command::Plot { csv } => plot(common, &csv),
    }
}

/// The configuration with command-line overrides applied.
fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk_scale(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(link) = common.link {
        config.link = link.name().to_string();
        if common.algorithm.is_empty() {
            config.algorithms = if link.is_periodic() {
                vec![Algorithm::MfStructDht]
            } else {
                config
                    .algorithms
                    .into_iter()
                    .filter(|a| *a != Algorithm::MfStructDht)
                    .collect()
            };
        }
    }
    if !common.algorithm.is_empty() {
        config.algorithms = common.algorithm.clone();
    }
    if common.omega_max.is_some() {
        config.grid.omega_max = common.omega_max;
    }
    if common.resolution.is_some() {
        config.grid.resolution = common.resolution;
    }
    Ok(config)
}

fn out_dir(common: &Common, config: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn generate(common: &Common, m: Option<usize>, trial: usize) -> Result<()> {
    let config = load_config(common)?;
    let m = m.or_else(|| config.m_grid.first().copied()).unwrap_or(0);
    let prepared = Prepared::new(&config)?;
    let (inst, design) = prepared.instance(m, trial)?;
    let file = InstanceFile::new(&inst, design.descriptor(), &config.basis_descriptor());
    let dir = out_dir(common, Some(&config));
    fs::create_dir_all(&dir)?;
    let path = dir.join("instance.json");
    write_instance(&path, &file)?;
    println!("{}", path.display());
    Ok(())
}

fn solve(common: &Common, instance: &Path) -> Result<()> {
    let file = read_instance(instance)?;
    let alg = match common.algorithm.as_slice() {
        [alg] => *alg,
        [] => return Err(Error::Config("solve needs --algorithm".into())),
        _ => return Err(Error::Config("solve takes exactly one --algorithm".into())),
    };
    let inst = file.to_instance()?;
    let (design, bases) = file.operators()?;

    // Solver settings come from the config; the signal and link from the instance.
    let mut config = load_config(common)?;
    let sig = &inst.config;
    config.signal.n = sig.n;
    config.signal.s = sig.s;
    config.signal.b = sig.b;
    config.signal.k = sig.k;
    config.signal.noise_sigma = sig.noise_sigma;
    config.link = inst.link.name().to_string();
    config.algorithms = vec![alg];
    config.m_grid = vec![sig.m];
    if let Some(f) = design.factored() {
        config.design.t = f.t;
    }
    config.validate()?;
    let grid = (alg == Algorithm::MfStructDht)
        .then(|| config.tone_grid())
        .transpose()?;
    let prepared = Prepared {
        link: inst.link,
        bases,
        grid,
        config,
    };
    let cache = prepared.forward_cache(&design)?;
    let result = prepared.solve(alg, &inst, &design, cache.as_ref())?;
    let mut out = SolveResultFile::new(alg.name(), &result);
    out.normalized_error = Some(normalized_error(&result.beta_hat, inst.beta.as_slice())?);

    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("result.json"), &out)?;
        write_trace_csv(
            fs::File::create(dir.join("trace.csv"))?,
            result.trace_kind,
            &result.error_trace,
        )?;
    }
    print_json(&out)
}

fn experiment(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let sweep = run_sweep(&config, common.threads)?;
    let dir = out_dir(common, Some(&config));
    let kinds: &[OutputKind] = if sweep.rows.is_empty() {
        &[OutputKind::Csv, OutputKind::Json]
    } else {
        &OutputKind::all()
    };
    let paths = emit_outputs(&sweep, &dir, kinds)?;
    println!(
        "{:<14} {:>6} {:>8} {:>12}",
        "algorithm", "m", "success", "mean_error"
    );
    for a in &sweep.aggregates {
        let err = a
            .mean_normalized_error
            .map_or_else(|| "-".to_string(), |e| format!("{e:.3e}"));
        println!(
            "{:<14} {:>6} {:>8.3} {:>12}",
            a.algorithm.name(),
            a.m,
            a.success_probability,
            err
        );
    }
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn analyze(common: &Common, instance: &Path, level: Option<usize>, trials: usize) -> Result<()> {
    let file = read_instance(instance)?;
    let inst = file.to_instance()?;
    let (design, bases) = file.operators()?;
    let n = inst.config.n;
    let level = level.unwrap_or((DEFAULT_LEVEL_MULTIPLIER * inst.config.s).min(2 * n));
    let problem = Problem::from_instance(&inst, &design, &bases)?;
    let seed = common.seed.unwrap_or(inst.seed);
    let est = estimate_srsc_srss(
        &problem,
        &inst.link,
        level,
        inst.config.b,
        trials,
        seed,
        Some(&inst.theta_true),
    )?;
    let report = AnalysisReport::from_estimate(&est);
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("analysis.json"), &report)?;
    }
    print_json(&report)
}

fn plot(common: &Common, csv: &Path) -> Result<()> {
    let rows = read_rows_csv(fs::File::open(csv)?)?;
    let aggs = aggregate(&rows);
    let success = success_chart(&aggs)?;
    let error = error_chart(&aggs)?;
    let dir = out_dir(common, None);
    fs::create_dir_all(&dir)?;
    for (kind, svg) in [
        (OutputKind::SvgSuccess, success),
        (OutputKind::SvgError, error),
    ] {
        let path = dir.join(kind.file_name());
        fs::write(&path, svg)?;
        println!("{}", path.display());
    }
    Ok(())
}
