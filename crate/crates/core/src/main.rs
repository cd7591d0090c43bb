use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use local_hughes::eikonal::{Reduction, SolverKind};
use local_hughes::experiments::{load_scenario, preset, run_scenario, vision_sweep, ModelKind, Scenario, PRESETS};
use local_hughes::geometry::VisionSpec;
use local_hughes::{io, verify, Error, Result};

#[derive(Parser)]
#[command(name = "local-hughes", about = "Crowd evacuation with restricted vision", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    reduction: Option<Reduction>,
    /// Observer stride in vertices.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or a preset name).
    Run {
        scenario: String,
        #[command(flatten)]
        o: Overrides,
    },
    /// Repeat a scenario for several values of one parameter.
    Sweep {
        scenario: String,
        /// Swept parameter; only the vision diameter `L` is supported.
        #[arg(long, default_value = "L")]
        param: String,
        /// Values, `inf` for global vision.
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Print a built-in scenario as JSON.
    DumpPreset {
        name: String,
        /// Fine resolutions instead of desk scale.
        #[arg(long)]
        full_scale: bool,
    },
    /// Run the built-in oracle checks.
    Verify,
}

fn resolve(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if !path.exists() && PRESETS.contains(&arg) {
        return preset(arg, false);
    }
    load_scenario(path)
}

fn apply(mut s: Scenario, o: &Overrides) -> Result<Scenario> {
    if let Some(k) = o.solver {
        s.solver.kind = k;
    }
    if let Some(r) = o.reduction {
        s.reduction = r;
    }
    if let Some(n) = o.stride {
        s.stride = n;
    }
    if let Some(d) = &o.outdir {
        s.output.dir = Some(d.display().to_string());
    }
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if o.sequential {
        s.parallel = false;
    }
    s.validate()?;
    Ok(s)
}

fn outdir(s: &Scenario) -> PathBuf {
    s.output.dir.as_ref().map_or_else(|| PathBuf::from("out").join(&s.name), PathBuf::from)
}

fn parse_vision(v: &str) -> Result<VisionSpec> {
    serde_json::from_value(match v.parse::<f64>() {
        Ok(x) if x.is_finite() => serde_json::json!(x),
        _ => serde_json::json!(v),
    })
    .map_err(Into::into)
}

fn main_inner(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { scenario, o } => {
            let scn = apply(resolve(&scenario)?, &o)?;
            let dir = outdir(&scn);
            let (report, out, built) = run_scenario(&scn)?;
            io::write_run(&dir, &scn, &report, &out, &built)?;
            match report.evacuation_time {
                Some(t) => println!("evacuation time {t:.4}"),
                None => println!("evacuation threshold not reached by t = {}", scn.time.t_max),
            }
            println!("outputs written to {}", dir.display());
            Ok(true)
        }
        Cmd::Sweep {
            scenario,
            param,
            values,
            o,
        } => {
            if param != "L" && param != "vision" {
                return Err(Error::Config(format!("cannot sweep `{param}`; only L is supported")));
            }
            let scn = apply(resolve(&scenario)?, &o)?;
            let vs = values.iter().map(|v| parse_vision(v)).collect::<Result<Vec<_>>>()?;
            let rows = vision_sweep(&scn, &vs, scn.parallel)?;
            let dir = outdir(&scn);
            std::fs::create_dir_all(&dir)?;
            io::write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
            if scn.model == ModelKind::Micro {
                io::write_sweep_exit_csv(&dir.join("sweep_exit_percentage.csv"), &rows)?;
            }
            for r in &rows {
                match &r.report {
                    Ok(rep) => println!(
                        "L = {:>6}  evacuation time {}",
                        r.vision.diameter,
                        rep.evacuation_time.map_or("not reached".into(), |t| format!("{t:.4}"))
                    ),
                    Err(e) => println!("L = {:>6}  failed: {e}", r.vision.diameter),
                }
            }
            println!("sweep table written to {}", dir.join("sweep.csv").display());
            Ok(true)
        }
        Cmd::DumpPreset { name, full_scale } => {
            println!("{}", serde_json::to_string_pretty(&preset(&name, full_scale)?)?);
            Ok(true)
        }
        Cmd::Verify => {
            let checks = verify::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
