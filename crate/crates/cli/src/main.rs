//! `iontrap-bench`: command-line front end.
//!
//! Exit codes: 0 success, 2 validation failure, 3 step failure. Diagnostics
//! go to standard error as one JSON object per line; results go to the
//! `--out` file when given, otherwise to standard output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use iontrap_core::analysis::{fit_rabi, heating_rate, RabiFitOptions, RabiTrace};
use iontrap_core::detection::{detection_report, CountModel, RateConvention};
use iontrap_core::dynamics::{simulate_trace, time_grid, DriveSpec, MotionalMode};
use iontrap_core::num::{units, Vec3};
use iontrap_core::photonics::{evanescent_coupling, loss_budget, split, LossChain, SplitterSpec};
use iontrap_core::scenario::{load_checked, run_checked, trace_csv, RunOptions, StepStatus};
use iontrap_core::solver::{shuttle_waveform, solve_wells, SolveOptions, VoltageSolution, WellSpec};
use iontrap_core::trap::{BasisFile, DemoTrap, ElectrodeBasis, IonSpecies};

#[derive(Parser)]
#[command(name = "iontrap-bench", version, about = "Trapped-ion multi-site addressing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and execute a scenario file.
    Run {
        scenario: PathBuf,
        /// Override the scenario's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write artifacts here instead of the scenario's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Solve electrode voltages for a set of wells.
    Solve(SolveArgs),
    /// Interpolate wells between two configurations and solve each frame.
    Shuttle(ShuttleArgs),
    /// Optical delivery calculations.
    #[command(subcommand)]
    Photonics(PhotonicsCommand),
    /// Thermal carrier Rabi flopping.
    #[command(subcommand)]
    Rabi(RabiCommand),
    /// Fit a heating rate to n̄ against wait time.
    Heating {
        /// CSV with columns `wait_ms,nbar[,nbar_sigma]`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Photon-count state discrimination.
    Detect(DetectArgs),
}

#[derive(Args)]
struct BasisArgs {
    /// Tabulated basis JSON, or `demo` for the bundled surface trap.
    #[arg(long)]
    basis: String,
    /// Symmetric voltage limit, V.
    #[arg(long, default_value_t = 10.0)]
    bound: f64,
    /// Ion mass, atomic mass units.
    #[arg(long, default_value_t = 171.0)]
    mass_u: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    basis: BasisArgs,
    /// JSON list of wells.
    #[arg(long)]
    wells: PathBuf,
    /// Zero electrodes that are not needed.
    #[arg(long)]
    sparsify: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShuttleArgs {
    #[command(flatten)]
    basis: BasisArgs,
    /// Wells at the start of the move.
    #[arg(long)]
    from: PathBuf,
    /// Wells at the end of the move, paired with `--from` by index.
    #[arg(long)]
    to: PathBuf,
    #[arg(long)]
    steps: usize,
    /// CSV `step,<electrode>…`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PhotonicsCommand {
    /// Loss budget for a JSON list of loss elements.
    Budget {
        #[arg(long)]
        chain: PathBuf,
        /// Launched power, mW; adds the delivered power to the output.
        #[arg(long)]
        power_mw: Option<f64>,
    },
    /// Split power between two outputs.
    Split {
        #[arg(long)]
        power_mw: f64,
        /// Output power ratio P₀/P₁.
        #[arg(long)]
        ratio: f64,
        /// Excess insertion loss, dB.
        #[arg(long, default_value_t = 0.0)]
        loss_db: f64,
    },
    /// Power transferred between coupled waveguides.
    Evanescent {
        /// Effective-index difference of the supermodes.
        #[arg(long)]
        dn: f64,
        #[arg(long)]
        length_mm: f64,
        #[arg(long)]
        lambda_nm: f64,
    },
}

#[derive(Subcommand)]
enum RabiCommand {
    Simulate(RabiSimulateArgs),
    Fit(RabiFitArgs),
}

#[derive(Args)]
struct RabiSimulateArgs {
    /// Carrier Rabi frequency Ω₀/2π, kHz.
    #[arg(long)]
    omega0_khz: f64,
    #[arg(long)]
    nbar: f64,
    #[arg(long)]
    eta: f64,
    /// Initial ground-state population.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long)]
    t_max_us: f64,
    #[arg(long)]
    points: usize,
    /// Mode frequency, MHz (recorded only; η is given directly).
    #[arg(long, default_value_t = 1.02)]
    omega_mode_mhz: f64,
    /// Projective measurements per point; adds `stderr,shots` columns.
    #[arg(long)]
    shots: Option<u64>,
    /// Required with `--shots`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RabiFitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    omega_mode_mhz: f64,
    /// Fit η as well.
    #[arg(long)]
    float_eta: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Ion fluorescence count rate, kcps.
    #[arg(long)]
    signal_kcps: f64,
    /// Background count rate, kcps.
    #[arg(long)]
    bg_kcps: f64,
    /// Detection window, ms.
    #[arg(long)]
    t_ms: f64,
    #[arg(long)]
    shots: usize,
    #[arg(long)]
    seed: u64,
    /// Treat `--signal-kcps` as the total bright-state rate.
    #[arg(long)]
    signal_is_total: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Validation(Value),
    Step(Value),
}

impl Failure {
    fn validation(message: impl std::fmt::Display) -> Self {
        Failure::Validation(json!({ "level": "error", "kind": "validation", "message": message.to_string() }))
    }

    fn step(message: impl std::fmt::Display) -> Self {
        Failure::Step(json!({ "level": "error", "kind": "step", "message": message.to_string() }))
    }
}

type CliResult = Result<(), Failure>;

fn emit(line: &Value) {
    eprintln!("{line}");
}

fn write_output(out: Option<&Path>, contents: &str) -> CliResult {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::step(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(p, contents).map_err(|e| Failure::step(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn write_json(out: Option<&Path>, value: &impl serde::Serialize) -> CliResult {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable output");
    s.push('\n');
    write_output(out, &s)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> CliResult {
    let checked = match load_checked(scenario) {
        Err(e) => return Err(Failure::validation(format!("{}: {e}", scenario.display()))),
        Ok(Err(diags)) => return Err(diagnostics(scenario, diags)),
        Ok(Ok(c)) => c,
    };
    let report = run_checked(&checked, &RunOptions { seed, out_dir });
    for s in &report.steps {
        let status = match s.status {
            StepStatus::Ok => "ok",
            StepStatus::Failed => "failed",
            StepStatus::Skipped => "skipped",
        };
        let level = if s.status == StepStatus::Ok { "info" } else { "error" };
        emit(&json!({ "level": level, "kind": "step", "step": s.name, "status": status, "message": s.error }));
    }
    emit(&json!({
        "level": "info",
        "kind": "summary",
        "scenario": report.scenario,
        "out_dir": report.out_dir.display().to_string(),
        "wall_time_s": report.wall_time_s,
    }));
    if report.succeeded() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.failed_steps().map(|s| s.name.as_str()).collect();
        Err(Failure::step(format!("failed steps: {}", failed.join(", "))))
    }
}

fn diagnostics(path: &Path, diags: Vec<iontrap_core::scenario::Diagnostic>) -> Failure {
    let n = diags.len();
    for d in diags {
        emit(&json!({
            "level": "error",
            "kind": "validation",
            "file": path.display().to_string(),
            "pointer": d.pointer,
            "line": d.line,
            "column": d.column,
            "message": d.message,
        }));
    }
    Failure::Validation(json!({ "level": "error", "kind": "validation", "message": format!("{n} diagnostic(s)") }))
}

fn cmd_validate(scenario: &Path) -> CliResult {
    match load_checked(scenario) {
        Err(e) => Err(Failure::validation(format!("{}: {e}", scenario.display()))),
        Ok(Err(diags)) => Err(diagnostics(scenario, diags)),
        Ok(Ok(_)) => {
            emit(
                &json!({ "level": "info", "kind": "validation", "file": scenario.display().to_string(), "message": "ok" }),
            );
            Ok(())
        }
    }
}

/// One entry of a wells file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WellEntry {
    position_um: [f64; 3],
    #[serde(default, rename = "axial_freq_MHz")]
    axial_freq_mhz: Option<f64>,
    #[serde(default, rename = "curvature_V_per_m2")]
    curvature_v_per_m2: Option<f64>,
    #[serde(default, rename = "shim_V_per_m")]
    shim_v_per_m: Option<[f64; 3]>,
}

fn load_wells(path: &Path, species: &IonSpecies<f64>) -> Result<Vec<WellSpec<f64>>, Failure> {
    let text = read(path)?;
    let entries: Vec<WellEntry> =
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let p = w.position_um;
            let pos = Vec3::new(p[0] * units::MICRON, p[1] * units::MICRON, p[2] * units::MICRON);
            let well = match (w.axial_freq_mhz, w.curvature_v_per_m2) {
                (Some(f), None) => WellSpec::with_frequency(pos, units::mhz_to_rad_s(f), species),
                (None, Some(c)) => WellSpec::new(pos, c),
                _ => {
                    return Err(Failure::validation(format!(
                        "{}: well {i}: give exactly one of axial_freq_MHz or curvature_V_per_m2",
                        path.display()
                    )))
                }
            };
            Ok(match w.shim_v_per_m {
                Some(s) => well.compensated(Vec3::from(s)),
                None => well,
            })
        })
        .collect()
}

fn load_basis(spec: &str) -> Result<Box<dyn ElectrodeBasis<f64>>, Failure> {
    if spec == "demo" {
        let demo = DemoTrap::<f64>::new();
        return Ok(Box::new(demo.dc.as_ref().clone()));
    }
    BasisFile::load(spec)
        .map(|b| Box::new(b) as Box<dyn ElectrodeBasis<f64>>)
        .map_err(|e| Failure::validation(format!("{spec}: {e}")))
}

fn species(mass_u: f64) -> Result<IonSpecies<f64>, Failure> {
    IonSpecies::new(mass_u * iontrap_core::num::consts::ATOMIC_MASS_UNIT, iontrap_core::num::consts::ELEMENTARY_CHARGE)
        .map_err(Failure::validation)
}

fn solution_json(names: &[String], sol: &VoltageSolution<f64>) -> Value {
    let pick =
        |flags: &[bool]| -> Vec<&String> { names.iter().zip(flags).filter(|(_, f)| **f).map(|(n, _)| n).collect() };
    json!({
        "electrodes": names,
        "voltages": sol.voltages,
        "residuals": sol.residuals,
        "residual_norm": sol.residual_norm(),
        "max_abs_voltage": sol.max_abs_voltage(),
        "clipped": pick(&sol.clipped),
        "zeroed": pick(&sol.zeroed),
    })
}

fn cmd_solve(a: &SolveArgs) -> CliResult {
    let sp = species(a.basis.mass_u)?;
    let basis = load_basis(&a.basis.basis)?;
    let wells = load_wells(&a.wells, &sp)?;
    let mut opts = SolveOptions::with_bound(a.basis.bound);
    opts.sparsify = a.sparsify;
    let sol = solve_wells(&wells, basis.as_ref(), &opts).map_err(Failure::step)?;
    write_json(a.out.as_deref(), &solution_json(basis.electrode_names(), &sol))
}

fn cmd_shuttle(a: &ShuttleArgs) -> CliResult {
    let sp = species(a.basis.mass_u)?;
    let basis = load_basis(&a.basis.basis)?;
    let from = load_wells(&a.from, &sp)?;
    let to = load_wells(&a.to, &sp)?;
    let sols = shuttle_waveform(&from, &to, a.steps, basis.as_ref(), &SolveOptions::with_bound(a.basis.bound))
        .map_err(Failure::step)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    header.extend(basis.electrode_names().iter().cloned());
    w.write_record(&header).map_err(Failure::step)?;
    for (k, s) in sols.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.voltages.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(Failure::step)?;
    }
    let bytes = w.into_inner().map_err(Failure::step)?;
    write_output(a.out.as_deref(), &String::from_utf8(bytes).expect("CSV is UTF-8"))
}

fn cmd_photonics(c: &PhotonicsCommand) -> CliResult {
    match c {
        PhotonicsCommand::Budget { chain, power_mw } => {
            let text = read(chain)?;
            let chain: LossChain =
                serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", chain.display())))?;
            let b = loss_budget(&chain).map_err(Failure::validation)?;
            let mut v = serde_json::to_value(&b).expect("serialisable");
            if let Some(p) = power_mw {
                v["input_mw"] = json!(p);
                v["delivered_mw"] = json!(b.deliver(*p));
            }
            write_json(None, &v)
        }
        PhotonicsCommand::Split { power_mw, ratio, loss_db } => {
            if !(*ratio > 0.0 && ratio.is_finite()) {
                return Err(Failure::validation("--ratio must be positive"));
            }
            let spec =
                SplitterSpec { ratios: vec![ratio / (1.0 + ratio), 1.0 / (1.0 + ratio)], insertion_loss_db: *loss_db };
            let out = split(*power_mw, &spec).map_err(Failure::validation)?;
            write_json(None, &json!({ "input_mw": power_mw, "fractions": spec.ratios, "outputs_mw": out }))
        }
        PhotonicsCommand::Evanescent { dn, length_mm, lambda_nm } => {
            if !lambda_nm.is_finite()
                || *lambda_nm <= 0.0
                || !length_mm.is_finite()
                || *length_mm < 0.0
                || !dn.is_finite()
            {
                return Err(Failure::validation("need --lambda-nm > 0, --length-mm >= 0 and finite --dn"));
            }
            let f = evanescent_coupling(*dn, length_mm * units::MILLIMETER, lambda_nm * units::NANOMETER);
            write_json(None, &json!({ "coupled_fraction": f }))
        }
    }
}

fn cmd_rabi_simulate(a: &RabiSimulateArgs) -> CliResult {
    if a.shots.is_some() && a.seed.is_none() {
        return Err(Failure::validation("--shots requires --seed"));
    }
    if !a.t_max_us.is_finite() || a.t_max_us <= 0.0 || a.points < 2 {
        return Err(Failure::validation("need --t-max-us > 0 and --points >= 2"));
    }
    let drive = DriveSpec::new(units::khz_to_rad_s(a.omega0_khz), a.a, 435e-9, std::f64::consts::FRAC_PI_4)
        .map_err(Failure::validation)?;
    let mode = MotionalMode::new(units::mhz_to_rad_s(a.omega_mode_mhz), a.eta, a.nbar).map_err(Failure::validation)?;
    if !mode.is_valid() {
        emit(
            &json!({ "level": "warning", "kind": "validation", "message": "sqrt(nbar)*eta >= 1: outside the Lamb-Dicke regime" }),
        );
    }
    let times = time_grid(a.t_max_us * units::MICROSECOND, a.points);
    let pts = simulate_trace(&times, &drive, &[mode], a.shots.zip(a.seed)).map_err(Failure::step)?;
    write_output(Some(&a.out), &trace_csv(&pts))
}

#[derive(Deserialize)]
struct TraceRow {
    t_us: f64,
    population: f64,
    #[serde(default)]
    stderr: Option<f64>,
    #[serde(default)]
    shots: Option<u64>,
}

fn cmd_rabi_fit(a: &RabiFitArgs) -> CliResult {
    let mut reader =
        csv::Reader::from_path(&a.input).map_err(|e| Failure::validation(format!("{}: {e}", a.input.display())))?;
    let rows: Vec<TraceRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::validation(format!("{}: {e}", a.input.display())))?;
    let stderr: Option<Vec<f64>> = rows.iter().map(|r| r.stderr).collect();
    let shots: Option<Vec<u64>> = rows.iter().map(|r| r.shots).collect();
    let trace = RabiTrace::new(
        rows.iter().map(|r| r.t_us * units::MICROSECOND).collect(),
        rows.iter().map(|r| r.population).collect(),
        stderr,
        shots,
    )
    .map_err(Failure::validation)?;
    let mode = MotionalMode::new(units::mhz_to_rad_s(a.omega_mode_mhz), a.eta, 0.0).map_err(Failure::validation)?;
    let mut opts = RabiFitOptions::new(vec![mode]);
    opts.float_eta = a.float_eta;
    let fit = fit_rabi(&trace, &opts).map_err(Failure::step)?;
    let omega = fit.value("omega0");
    let v = json!({
        "omega0_khz": units::rad_s_to_khz(omega),
        "omega0_khz_sigma": units::rad_s_to_khz(fit.sigma("omega0")),
        "pi_time_us": std::f64::consts::PI / omega / units::MICROSECOND,
        "fit": fit,
    });
    write_json(a.out.as_deref(), &v)
}

#[derive(Deserialize)]
struct HeatingRow {
    wait_ms: f64,
    nbar: f64,
    #[serde(default)]
    nbar_sigma: Option<f64>,
}

fn cmd_heating(input: &Path, out: Option<&Path>) -> CliResult {
    let mut reader =
        csv::Reader::from_path(input).map_err(|e| Failure::validation(format!("{}: {e}", input.display())))?;
    let rows: Vec<HeatingRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::validation(format!("{}: {e}", input.display())))?;
    let waits: Vec<f64> = rows.iter().map(|r| r.wait_ms * units::MILLISECOND).collect();
    let nbar: Vec<f64> = rows.iter().map(|r| r.nbar).collect();
    let sigma: Option<Vec<f64>> = rows.iter().map(|r| r.nbar_sigma).collect();
    let fit = heating_rate(&waits, &nbar, sigma.as_deref()).map_err(Failure::validation)?;
    write_json(out, &fit)
}

fn cmd_detect(a: &DetectArgs) -> CliResult {
    let convention =
        if a.signal_is_total { RateConvention::SignalIsTotal } else { RateConvention::SignalPlusBackground };
    let model = CountModel::new(a.signal_kcps * 1e3, a.bg_kcps * 1e3, a.t_ms * units::MILLISECOND)
        .map_err(Failure::validation)?
        .with_convention(convention);
    let report = detection_report(&model, a.shots, a.seed).map_err(Failure::validation)?;
    write_json(a.out.as_deref(), &report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, out_dir } => cmd_run(scenario, *seed, out_dir.clone()),
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Solve(a) => cmd_solve(a),
        Command::Shuttle(a) => cmd_shuttle(a),
        Command::Photonics(c) => cmd_photonics(c),
        Command::Rabi(RabiCommand::Simulate(a)) => cmd_rabi_simulate(a),
        Command::Rabi(RabiCommand::Fit(a)) => cmd_rabi_fit(a),
        Command::Heating { input, out } => cmd_heating(input, out.as_deref()),
        Command::Detect(a) => cmd_detect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(v)) => {
            emit(&v);
            ExitCode::from(2)
        }
        Err(Failure::Step(v)) => {
            emit(&v);
            ExitCode::from(3)
        }
    }
}
