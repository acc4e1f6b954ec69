use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use msdtn::experiments::{build_dataset, run_case, Case, CaseConfig, Geometry};
use msdtn::substructure::{Backend, Level, SkeletonSystem};
use msdtn::surrogate::{provenance_hash, train, DtnSampleSet, SurrogateModel, SurrogateRegistry};
use msdtn::{Error, Result};

#[derive(Parser)]
#[command(name = "msdtn", about = "Multiscale substructuring with exact and learned DtN maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file of `key = value` lines, applied over the case preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sampling points per axis.
    #[arg(long, global = true)]
    ns: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Loss weights `c0,c1,cmon`.
    #[arg(long, global = true, value_name = "C0,C1,CMON")]
    loss: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "exact")]
    backend: BackendArg,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write the fine mesh as CSV to `<out>/mesh`.
    #[arg(long, global = true)]
    dump_mesh: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Samples the local coarse DtN map of a case.
    GenerateData { case: Case },
    /// Trains the surrogate on `--data` (default `<out>/dataset.csv`, generated if absent).
    Train {
        case: Case,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Solves the coarse problem for every boundary value with `--backend`.
    Solve {
        case: Case,
        /// Surrogate model (default `<out>/model.json`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Error report of a trained model against the exact coarse solves.
    Evaluate {
        case: Case,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Full pipeline of a case preset.
    Reproduce { case: Case },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Exact,
    Surrogate,
    Warmstart,
}

impl Cli {
    fn case_config(&self, case: Case) -> Result<CaseConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                CaseConfig::parse(&text, Some(case))?
            }
            None => CaseConfig::preset(case),
        };
        if cfg.case != case {
            return Err(Error::Config(format!("config file is for {} but {case} was requested", cfg.case)));
        }
        if let Some(ns) = self.ns {
            cfg.ns = ns;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(loss) = &self.loss {
            cfg.set("loss", loss)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_model(cfg: &CaseConfig, geo: &Geometry, path: &Path) -> Result<SurrogateModel> {
    let problem = cfg.problem(cfg.boundary_values[0])?;
    let hash = provenance_hash(&problem, &geo.mesh, 0, cfg.local_tol);
    let (model, warnings) = SurrogateModel::load(path, Some(cfg.input_dim()), Some(&hash))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn solve(cfg: &CaseConfig, geo: &Geometry, backend: BackendArg, model: Option<SurrogateModel>, out: &Path) -> Result<()> {
    for (k, &bv) in cfg.boundary_values.iter().enumerate() {
        let problem = cfg.problem(bv)?;
        let new_system = |backend| {
            SkeletonSystem::new(&problem, &geo.partition, &geo.mesh, &geo.basis, Level::Coarse, backend, cfg.local_config())
        };
        let registry = || SurrogateRegistry::shared(model.clone().expect("model loaded for surrogate backends"));
        let (g, trace, mut system) = match backend {
            BackendArg::Exact => {
                let mut sys = new_system(Backend::Exact)?;
                let (g, t) = sys.solve(None, &cfg.newton(cfg.outer_tol), None)?;
                (g, t, sys)
            }
            BackendArg::Surrogate => {
                let mut sys = new_system(Backend::Surrogate(registry()))?;
                let (g, t) = sys.solve(None, &cfg.newton(cfg.surrogate_tol), None)?;
                (g, t, sys)
            }
            BackendArg::Warmstart => {
                let mut sys = new_system(Backend::Surrogate(registry()))?;
                let (g0, _) = sys.solve(None, &cfg.newton(cfg.surrogate_tol), None)?;
                sys.set_backend(Backend::Exact)?;
                let start = sys.embedding().unknown_part(&g0);
                let (g, t) = sys.solve(Some(&start), &cfg.newton(cfg.outer_tol), None)?;
                (g, t, sys)
            }
        };
        let u = system.reconstruct(&g)?;
        let mut csv = String::from("vertex,u\n");
        for (v, value) in u.iter().enumerate() {
            csv.push_str(&format!("{v},{value:e}\n"));
        }
        std::fs::write(out.join(format!("solution_{k}.csv")), csv)?;
        std::fs::write(out.join(format!("trace_{k}.csv")), trace.to_csv(false))?;
        println!("u_boundary = {bv}: {} iterations, residual {:e}", trace.iterations(), trace.final_residual());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let case = match &cli.command {
        Command::GenerateData { case }
        | Command::Train { case, .. }
        | Command::Solve { case, .. }
        | Command::Evaluate { case, .. }
        | Command::Reproduce { case } => *case,
    };
    let cfg = cli.case_config(case)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    let geo = cfg.geometry()?;
    if cli.dump_mesh {
        let dir = out.join("mesh");
        std::fs::create_dir_all(&dir)?;
        geo.mesh.dump_csv(&dir)?;
    }
    match &cli.command {
        Command::GenerateData { .. } => {
            let data = build_dataset(&cfg, &geo)?;
            data.write(&out.join("dataset.csv"))?;
            println!("{} samples of dimension {}", data.len(), data.dim);
        }
        Command::Train { data, .. } => {
            let dataset = match data {
                Some(path) => DtnSampleSet::read(path)?,
                None if out.join("dataset.csv").exists() => DtnSampleSet::read(&out.join("dataset.csv"))?,
                None => {
                    let d = build_dataset(&cfg, &geo)?;
                    d.write(&out.join("dataset.csv"))?;
                    d
                }
            };
            let (model, report) = train(&dataset, &cfg.train_config())?;
            model.save(&out.join("model.json"))?;
            std::fs::write(out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
            for c in &report.components {
                println!("component {}: loss {:e} -> {:e}", c.component, c.initial.total, c.last.total);
            }
        }
        Command::Solve { model, .. } => {
            let model = match cli.backend {
                BackendArg::Exact => None,
                _ => {
                    let path = model.clone().unwrap_or_else(|| out.join("model.json"));
                    Some(load_model(&cfg, &geo, &path)?)
                }
            };
            solve(&cfg, &geo, cli.backend, model, out)?;
        }
        Command::Evaluate { model, .. } => {
            let path = model.clone().unwrap_or_else(|| out.join("model.json"));
            let model = load_model(&cfg, &geo, &path)?;
            let report = run_case(&cfg, Some(model), Some(out))?;
            print!("{}", report.to_csv());
        }
        Command::Reproduce { .. } => {
            let report = run_case(&cfg, None, Some(out))?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
