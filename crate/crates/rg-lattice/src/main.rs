use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rg_lattice::config::{ExperimentConfig, Family, InitialConfig, NoiseConfig, Preset, TransferConfig};
use rg_lattice::error::{Context, Error, Result};
use rg_lattice::output::{self, num, CsvTable, LedgerSummary, RunLedger, RunOutput};
use rg_lattice::{registry, run_experiment, Runner};
use rg_lattice_core::lattice::{self, LatticeState, Probe, ProbeRecord, RegularizationSpec, SimConfig};
use rg_lattice_core::rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "rg-lattice", version, about = "Fractal lattice cascade experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Partial TOML merged over the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory. Defaults to $RG_LATTICE_OUT/<name> or ./rg-lattice-out/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
    /// Print the report as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one registered experiment.
    Run {
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a single trajectory and write probed values and the energy ledger.
    Simulate {
        #[arg(long, default_value = "fb")]
        family: String,
        #[arg(long, default_value_t = 10.3)]
        p: f64,
        #[arg(long = "viscous-scale", default_value_t = 10)]
        viscous_scale: usize,
        /// Deterministic dissipation; ignored when --noise is given.
        #[arg(long, default_value_t = 0.25)]
        alpha: f64,
        /// Uniform noise bounds `lo,hi` for the viscous dissipation.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        noise: Option<Vec<f64>>,
        #[arg(long)]
        forcing: bool,
        #[arg(long = "t-end", default_value_t = 1)]
        t_end: u64,
        /// Scales whose raw values are recorded.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        probes: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run both identity checks and fail unless they hold.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// List the registered experiments.
    List {
        /// Only experiments touching this module.
        #[arg(long)]
        module: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let report = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::List { module, json } => list(module.as_deref(), json),
        Command::Run { name, common } => {
            let out = run_named(&name, &common)?;
            print_report(&out, common.json)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common } => {
            let mut ok = true;
            for name in ["thm1_verify", "thm2_verify"] {
                let mut c = common.clone();
                c.out = common.out.as_ref().map(|d| d.join(name));
                let out = run_named(name, &c)?;
                print_report(&out, common.json)?;
                ok &= out.report["pass"] == true;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Simulate { family, p, viscous_scale, alpha, noise, forcing, t_end, probes, common } => {
            let family = match family.as_str() {
                "fa" => Family::Fa,
                "fb" => Family::Fb,
                other => return Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
            };
            let mut cfg = registry::defaults("thm2_verify", common.preset).expect("registered");
            cfg.experiment = "simulate".into();
            cfg.transfer = TransferConfig { family, p };
            cfg.initial = InitialConfig::Staircase;
            cfg.analysis.companion_transfers.clear();
            let r = &mut cfg.regularization;
            r.n_first = viscous_scale;
            r.n_last = viscous_scale;
            r.forcing = forcing;
            let regularization = match noise.as_deref() {
                Some([lo, hi]) => {
                    r.alphas.clear();
                    r.noises = vec![NoiseConfig { name: "custom".into(), lo: *lo, hi: *hi }];
                    RegularizationSpec::noise(viscous_scale, *lo, *hi)
                }
                _ => {
                    r.alphas = vec![alpha];
                    RegularizationSpec::deterministic(viscous_scale, alpha)
                }
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let config = SimConfig::new(cfg.transfer.spec(), regularization).with_forcing(forcing);
            simulate(&cfg, config, t_end, &probes, &common)
        }
    }
}

fn list(module: Option<&str>, as_json: bool) -> Result<ExitCode> {
    let entries = match module {
        Some(tag) => registry::with_module(tag),
        None => registry::entries().iter().collect(),
    };
    if as_json {
        let listing: Vec<_> = entries.iter().map(|e| e.listing()).collect();
        println!("{}", String::from_utf8_lossy(&output::to_json(&listing)?).trim_end());
    } else {
        for e in entries {
            println!(
                "{:<28} {:<34} ~{:.0}s desk, ~{:.0}s paper\n    {}",
                e.name,
                e.modules.join(","),
                e.runtime_s.0,
                e.runtime_s.1,
                e.description
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(name: &str, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = registry::defaults(name, common.preset).ok_or_else(|| Error::UnknownExperiment(name.into()))?;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
        cfg = cfg.merged_with(&text)?;
        if cfg.experiment != name {
            return Err(Error::InvalidConfig(format!("config names experiment `{}`", cfg.experiment)));
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(name: &str, configured: Option<&Path>) -> PathBuf {
    if let Some(d) = configured {
        return d.to_path_buf();
    }
    let root = std::env::var_os("RG_LATTICE_OUT").map(PathBuf::from).unwrap_or_else(|| "rg-lattice-out".into());
    root.join(name)
}

fn run_named(name: &str, common: &Common) -> Result<RunOutput> {
    let cfg = load_config(name, common)?;
    let runner = Runner::new(common.threads)?;
    lattice::reset_conservation_audit();
    let start = Instant::now();
    let out = runner.install(|| run_experiment(&cfg, &runner))?;
    let wall = start.elapsed().as_secs_f64();
    let dir = out_dir(name, cfg.out.as_deref());
    output::emit(&out, &cfg, &dir, common.overwrite, runner.threads(), wall)?;
    if !common.json {
        eprintln!("{name}: wrote {} files to {} in {wall:.1}s", out.files.len() + 2, dir.display());
    }
    Ok(out)
}

fn print_report(out: &RunOutput, as_json: bool) -> Result<()> {
    if as_json {
        let doc = json!({ "experiment": out.experiment, "report": out.report, "ledger": out.ledger });
        println!("{}", String::from_utf8_lossy(&output::to_json(&doc)?).trim_end());
    }
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, config: SimConfig, t_end: u64, probes: &[usize], common: &Common) -> Result<ExitCode> {
    let n = config.viscous_scale();
    let a = LatticeState::new(cfg.initial.vector(n + 1)).context(|| "initial state".into())?;
    let probes: Vec<Probe> = probes.iter().map(|&s| Probe::raw(s)).collect();
    lattice::reset_conservation_audit();
    let start = Instant::now();
    let mut stream = rng::stream(cfg.seed, 0, rng::SLOT_KERNEL);
    let run = lattice::simulate(&a, &config, t_end, &probes, None, &mut stream).context(|| "simulation".into())?;
    let wall = start.elapsed().as_secs_f64();

    let mut files = vec![{
        let mut t = CsvTable::new(&["n", "u"]);
        for (i, x) in run.final_state.values().iter().enumerate() {
            t.row([i.to_string(), num(*x)]);
        }
        t.finish("final_state.csv")
    }];
    for record in &run.records {
        if let ProbeRecord::Raw { scale, values } = record {
            let mut t = CsvTable::new(&["m", "t", "u"]);
            for (m, x) in values.iter().enumerate() {
                t.row([m.to_string(), num(m as f64 / (1u64 << scale) as f64), num(*x)]);
            }
            files.push(t.finish(format!("probe_u{scale}.csv")));
        }
    }
    let residual = lattice::relative_residual(run.initial_total, run.final_state.total(), &run.ledger, t_end);
    let report = json!({
        "viscous_scale": n,
        "t_end": t_end,
        "initial_total": run.initial_total,
        "final_total": run.final_state.total(),
        "dissipated": run.ledger.dissipated,
        "injected": run.ledger.injected,
        "truncated": run.ledger.truncated,
        "relative_residual_per_unit_time": residual,
    });
    let out = RunOutput {
        experiment: "simulate".into(),
        files,
        report,
        tolerances: json!({}),
        ledger: LedgerSummary::current(),
        energy: Some(RunLedger::new(&run.ledger, run.initial_total, run.final_state.total())),
    };
    let dir = out_dir("simulate", common.out.as_deref());
    output::emit(&out, cfg, &dir, common.overwrite, 1, wall)?;
    print_report(&out, common.json)?;
    Ok(ExitCode::SUCCESS)
}
