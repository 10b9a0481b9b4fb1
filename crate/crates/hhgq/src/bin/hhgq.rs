use clap::Parser;
use hhgq::scan::{first_point_state, run_scan, validate_config, RunConfig, Severity, Task};
use std::path::PathBuf;
use std::process::ExitCode;

/// Batch scans of the HHG quantum-optics pipeline.
#[derive(Parser, Debug)]
#[command(name = "hhgq", version)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task to run, repeatable; replaces the configured task list.
    #[arg(long = "task", value_parser = parse_task)]
    tasks: Vec<Task>,
    /// Output directory; overrides output_dir.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Truncations 180/20 and Nat = 1e5 multiplied out directly.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write the two-mode state of the first scan point (QST1 binary) here.
    #[arg(long)]
    dump_state: Option<PathBuf>,
    /// Print diagnostics and exit.
    #[arg(long)]
    validate: bool,
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
        format!("unknown task {s:?}; expected one of {}", names.join(", "))
    })
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            RunConfig::from_json(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::default(),
    };
    if cli.paper_scale {
        config = config.paper_scale();
    }
    if !cli.tasks.is_empty() {
        config.tasks = cli.tasks.clone();
    }
    if let Some(o) = &cli.output {
        config.output_dir = o.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("hhgq: {e}");
            return ExitCode::from(2);
        }
    }
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hhgq: {e}");
            return ExitCode::from(2);
        }
    };
    // A bare --dump-state needs the state prerequisites only.
    let mut checked = config.clone();
    if cli.dump_state.is_some() && checked.tasks.is_empty() {
        checked.tasks = vec![Task::EntanglementScan];
    }
    let diags = validate_config(&checked);
    for d in &diags {
        eprintln!("{d}");
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return ExitCode::from(2);
    }
    if cli.validate {
        return ExitCode::SUCCESS;
    }
    if let Some(path) = &cli.dump_state {
        match first_point_state(&config) {
            Ok(s) => {
                if let Err(e) = std::fs::write(path, s.to_bytes()) {
                    eprintln!("hhgq: {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
                eprintln!("state with dims {:?} written to {}", s.dims(), path.display());
            }
            Err(e) => {
                eprintln!("hhgq: {e}");
                return ExitCode::FAILURE;
            }
        }
        if config.tasks.is_empty() {
            return ExitCode::SUCCESS;
        }
    }
    match run_scan(&config) {
        Ok(r) => {
            for (name, secs) in &r.manifest.timings_s {
                eprintln!("{name}: {secs:.2} s");
            }
            for name in r.tables.keys() {
                println!("{}", config.output_dir.join(format!("{name}.csv")).display());
            }
            println!("{}", config.output_dir.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hhgq: {e}");
            ExitCode::FAILURE
        }
    }
}
