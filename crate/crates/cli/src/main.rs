//! `kinksim` command-line interface.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration error,
//! 3 numerical failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kinksim::coupling::power_law_fit;
use kinksim::experiments::{
    compare_backends, scenario_couplings, split_backends, Backend, OutputFormat, Stage,
};
use kinksim::trap::{chain, write_modes_csv, TrapSettings};
use kinksim::units::to_hz;
use kinksim::{run_scenario, ExperimentError, ResultTable, ScenarioConfig, ScenarioKind};

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Parser)]
#[command(
    name = "kinksim",
    version,
    about = "Kink dynamics in trapped-ion Ising chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium positions and transverse modes of the configured chain.
    Modes(Common),
    /// Coupling matrix J_ij and its power-law fit.
    Coupling(Common),
    /// Kink potential and spin-flip energies.
    Potential(Common),
    /// Kink dynamics for the configured scenario.
    Evolve(Common),
    /// Simulated spin-flip spectroscopy.
    Spectroscopy(Common),
    /// Run a named scenario preset, optionally overridden by --config.
    Run {
        #[arg(value_enum)]
        scenario: ScenarioArg,
        #[command(flatten)]
        common: Common,
    },
    /// Effective model against the full spin simulation.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Compare two existing JSON tables instead of running.
        #[arg(long, requires = "full")]
        effective: Option<PathBuf>,
        #[arg(long, requires = "effective")]
        full: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Fig2Potential,
    Fig3Interference,
    Fig4Directional,
    Spectroscopy,
    Custom,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Fig2Potential => ScenarioKind::Fig2Potential,
            ScenarioArg::Fig3Interference => ScenarioKind::Fig3Interference,
            ScenarioArg::Fig4Directional => ScenarioKind::Fig4Directional,
            ScenarioArg::Spectroscopy => ScenarioKind::Spectroscopy,
            ScenarioArg::Custom => ScenarioKind::Custom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Effective,
    Full,
    Both,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Effective => Backend::Effective,
            BackendArg::Full => Backend::Full,
            BackendArg::Both => Backend::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

impl Common {
    fn load(&self, kind: Option<ScenarioKind>) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(kind, self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(b) = self.backend {
            cfg.backend = b.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn create_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

fn report(table: &ResultTable, paths: &[PathBuf]) {
    for row in &table.summary {
        println!("{} = {}", row.key, row.value);
    }
    for w in &table.warnings {
        eprintln!("warning: {}", w.message);
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run_and_emit(common: &Common, cfg: &ScenarioConfig) -> Result<ResultTable> {
    let table = run_scenario(cfg)?;
    let paths = table.emit(common.format.into(), &common.out)?;
    report(&table, &paths);
    Ok(table)
}

fn modes(common: &Common) -> Result<()> {
    let cfg = common.load(None)?;
    let trap_err = ExperimentError::at(Stage::Trap);
    let settings = TrapSettings {
        ion_count: cfg.ions,
        ..cfg.trap.clone()
    };
    let trap = settings.trap_config().map_err(&trap_err)?;
    let (positions, spectrum) = chain(&trap).map_err(&trap_err)?;
    common.create_out()?;
    let path = common.out.join("modes.csv");
    write_modes_csv(&spectrum, BufWriter::new(File::create(&path)?)).map_err(io_err)?;
    let spacings = positions.spacings();
    println!("ions = {}", cfg.ions);
    println!("axial_freq_hz = {}", to_hz(trap.axial_freq));
    println!("com_freq_hz = {}", to_hz(spectrum.com_freq()));
    println!(
        "eta_com = {}",
        spectrum.com_lamb_dicke().unwrap_or(f64::NAN)
    );
    println!(
        "min_spacing_um = {}",
        spacings.iter().cloned().fold(f64::INFINITY, f64::min) * 1e6
    );
    println!(
        "max_spacing_um = {}",
        spacings.iter().cloned().fold(0.0, f64::max) * 1e6
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn coupling(common: &Common) -> Result<()> {
    let cfg = common.load(None)?;
    let j = scenario_couplings(&cfg)?;
    common.create_out()?;
    let path = common.out.join("coupling.csv");
    j.write_csv(BufWriter::new(File::create(&path)?))?;
    println!("jmax_hz = {}", to_hz(j.max()));
    if cfg.ions >= 3 {
        let fit = power_law_fit(&j).map_err(ExperimentError::at(Stage::Coupling))?;
        println!("j0_hz = {}", to_hz(fit.j0));
        println!("alpha = {}", fit.alpha);
        println!("fit_residual = {}", fit.residual);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn compare(common: &Common, effective: Option<&Path>, full: Option<&Path>) -> Result<()> {
    let (eff, full, scenario) = match (effective, full) {
        (Some(a), Some(b)) => {
            let read = |p: &Path| {
                ResultTable::read_json(p)
                    .map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))
            };
            let (a, b) = (read(a)?, read(b)?);
            let name = a.provenance.scenario.clone();
            (a, b, name)
        }
        _ => {
            let mut cfg = common.load(None)?;
            cfg.backend = Backend::Both;
            cfg.validate()?;
            let table = run_and_emit(common, &cfg)?;
            let (a, b) = split_backends(&table);
            (a, b, cfg.scenario.name().to_string())
        }
    };
    let report = compare_backends(&eff, &full)?;
    common.create_out()?;
    let path = common.out.join(format!("{scenario}_divergence.csv"));
    report
        .write_csv(BufWriter::new(File::create(&path)?))
        .map_err(io_err)?;
    println!("max_total_variation = {}", report.max_total_variation);
    if let Some(l) = report.max_leakage {
        println!("max_leakage = {l}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn io_err<E: std::error::Error + Send + Sync + 'static>(e: E) -> ExperimentError {
    ExperimentError::Io(std::io::Error::other(e))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Modes(c) => modes(&c),
        Command::Coupling(c) => coupling(&c),
        Command::Potential(c) => {
            run_and_emit(&c, &c.load(Some(ScenarioKind::Fig2Potential))?).map(drop)
        }
        Command::Evolve(c) => run_and_emit(&c, &c.load(None)?).map(drop),
        Command::Spectroscopy(c) => {
            run_and_emit(&c, &c.load(Some(ScenarioKind::Spectroscopy))?).map(drop)
        }
        Command::Run { scenario, common } => {
            run_and_emit(&common, &common.load(Some(scenario.into()))?).map(drop)
        }
        Command::Compare {
            common,
            effective,
            full,
        } => compare(&common, effective.as_deref(), full.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
