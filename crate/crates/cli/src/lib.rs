//! Command implementations behind the `modelrec` binary.

mod args;
mod manifest;

use std::fmt;
use std::fs;
use std::path::Path;

use modelrec::dynamics::{add_noise, builtin_systems, no_input, simulate, DynamicalSystem, Trajectory};
use modelrec::fpga::{
    calibrate, default_calibration, read_rows_csv, reference_sweep, render_table, speedup_report, Calibration, CostReport, GraphOptions,
    TimeAnchor,
};
use modelrec::training::{evaluate, evaluate_model, files, train, write_run_dir, Checkpoint, EvalReport, TrainConfig};
use modelrec::solver::Scheme;
use modelrec::Error;
use serde::Serialize;

pub use args::{parse_dims, Cli, Command, EvalArgs, FpgaArgs, FpgaCommand, GenerateArgs, InputSignal, OptArgs, RecoverArgs};
pub use manifest::{RunManifest, MANIFEST_FILE, MANIFEST_VERSION};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGED: i32 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: exit::USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: exit::DATA, message: message.into() }
    }

    fn context(self, what: impl fmt::Display) -> Self {
        CliError { message: format!("{what}: {}", self.message), ..self }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Contract(_) | Error::Capacity { .. } | Error::NotFound(_) | Error::InfeasibleIi { .. } => exit::USAGE,
            Error::Parse { .. } | Error::InsufficientData { .. } | Error::Calibration(_) | Error::Io(_) | Error::Json(_) => exit::DATA,
            Error::Diverged { .. } | Error::NonFinite { .. } => exit::DIVERGED,
        };
        CliError { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_context<T>(res: std::io::Result<T>, path: &Path) -> CliResult<T> {
    res.map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        io_context(fs::create_dir_all(parent), parent)?;
    }
    io_context(fs::write(path, contents), path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises") + "\n"
}

/// Runs one parsed command line, printing human-readable output to stdout.
pub fn run(cli: &Cli, argv: &[String]) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => generate(a, cli.seed.unwrap_or(0), argv),
        Command::Recover(a) => recover(a, cli.seed, argv),
        Command::Eval(a) => eval(a, cli.seed.unwrap_or(0), argv),
        Command::Fpga(a) => fpga(a, cli.seed.unwrap_or(0), argv),
    }
}

/// Looks a system up by built-in name or loads it from a config file.
pub fn resolve_system(reference: &str) -> CliResult<DynamicalSystem> {
    let path = Path::new(reference);
    if path.is_file() {
        return DynamicalSystem::from_config_file(path).map_err(|e| CliError::from(e).context(path.display()));
    }
    let reg = builtin_systems();
    reg.get(reference).cloned().map_err(|_| {
        let known: Vec<&str> = reg.names().collect();
        CliError::usage(format!("unknown system `{reference}` (built in: {}; or a path to a system file)", known.join(", ")))
    })
}

fn read_trajectory(path: &Path) -> CliResult<Trajectory> {
    let file = io_context(fs::File::open(path), path)?;
    Trajectory::read_csv(file).map_err(|e| CliError::from(e).context(path.display()))
}

fn generate(a: &GenerateArgs, seed: u64, argv: &[String]) -> CliResult<()> {
    let system = resolve_system(&a.system)?;
    if !(a.sigma >= 0.0) || !a.sigma.is_finite() {
        return Err(CliError::usage(format!("--sigma must be a non-negative number, got {}", a.sigma)));
    }
    let y0 = match &a.y0 {
        Some(v) if v.len() != system.n() => {
            return Err(CliError::usage(format!("--y0 has {} values but `{}` has {} states", v.len(), system.name, system.n())));
        }
        Some(v) => v.clone(),
        None => vec![1.0; system.n()],
    };
    let m = system.m();
    let signal = move |t: f64| a.input.sample(t, m);
    let clean = if m == 0 { simulate(&system, &y0, &no_input, a.dt, a.steps)? } else { simulate(&system, &y0, &signal, a.dt, a.steps)? };
    let traj = add_noise(&clean, a.sigma, seed)?;
    write_file(&a.out, &traj.to_csv_string())?;
    let manifest = RunManifest::new("generate", argv, seed)
        .with_input(&a.system)
        .with_output(&a.out)
        .with_settings(serde_json::json!({
            "system": system.name,
            "y0": y0,
            "dt": a.dt,
            "steps": a.steps,
            "sigma": a.sigma,
            "input": a.input,
        }));
    manifest.write(&RunManifest::path_beside(&a.out))?;
    println!("wrote {} rows ({} states, {} inputs) to {}", traj.len(), traj.n(), traj.m(), a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::default()) };
    let text = io_context(fs::read_to_string(path), path)?;
    let cfg = TrainConfig::from_toml_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn check_dt(config: &TrainConfig, traj: &Trajectory, data: &Path) -> CliResult<()> {
    if let Some(dt) = config.dt {
        if (dt - traj.dt()).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(CliError::usage(format!("config field `dt` = {dt} but data column `t` of {} has step {}", data.display(), traj.dt())));
        }
    }
    Ok(())
}

fn check_truth(system: &DynamicalSystem, traj: &Trajectory, data: &Path) -> CliResult<()> {
    if system.n() != traj.n() || system.m() != traj.m() {
        return Err(CliError::usage(format!(
            "system `{}` has states y1..y{} and inputs u1..u{} but {} has y1..y{} and u1..u{}",
            system.name,
            system.n(),
            system.m(),
            data.display(),
            traj.n(),
            traj.m()
        )));
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    println!(
        "reconstruction_mse {:.6e}  coeff_max_abs_err {}  support_precision {}  support_recall {}{}",
        report.reconstruction_mse,
        opt(report.coeff_max_abs_err),
        opt(report.support_precision),
        opt(report.support_recall),
        if report.diverged { "  (re-simulation diverged)" } else { "" }
    );
}

fn recover(a: &RecoverArgs, seed: Option<u64>, argv: &[String]) -> CliResult<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let seed = config.seed;
    let traj = read_trajectory(&a.data)?;
    check_dt(&config, &traj, &a.data)?;
    let truth = a.system.as_deref().map(resolve_system).transpose()?;
    if let Some(sys) = &truth {
        check_truth(sys, &traj, &a.data)?;
    }
    let rec = train(&config, &traj)?;
    let report = evaluate(&rec, &traj, truth.as_ref())?;
    write_run_dir(&a.out, &rec, Some(&report))?;
    let mut manifest = RunManifest::new("recover", argv, seed).with_input(&a.data.display().to_string());
    if let Some(c) = &a.config {
        manifest = manifest.with_config(c);
    }
    if let Some(s) = &a.system {
        manifest = manifest.with_input(s);
    }
    for name in [files::CONFIG, files::LOSS, files::CHECKPOINT, files::MODEL, files::EVAL] {
        manifest = manifest.with_output(&a.out.join(name));
    }
    manifest.with_settings(serde_json::to_value(&config).expect("config serialises")).write(&a.out.join(MANIFEST_FILE))?;
    println!("best epoch {} of {}", rec.best_epoch + 1, rec.history.len());
    print!("{}", rec.model.equations());
    print_report(&report);
    Ok(())
}

fn eval(a: &EvalArgs, seed: u64, argv: &[String]) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| CliError::from(e).context(a.checkpoint.display()))?;
    let traj = read_trajectory(&a.data)?;
    let truth = a.system.as_deref().map(resolve_system).transpose()?;
    if let Some(sys) = &truth {
        check_truth(sys, &traj, &a.data)?;
    }
    let scheme = a.scheme.map(Scheme::from).unwrap_or(ck.scheme);
    let report = evaluate_model(&ck.model, &ck.shifts, scheme, &traj, truth.as_ref())?;
    print_report(&report);
    if let Some(out) = &a.out {
        write_file(out, &report.to_json())?;
        let mut manifest = RunManifest::new("eval", argv, seed)
            .with_input(&a.checkpoint.display().to_string())
            .with_input(&a.data.display().to_string())
            .with_output(out)
            .with_settings(serde_json::json!({ "scheme": scheme }));
        if let Some(s) = &a.system {
            manifest = manifest.with_input(s);
        }
        manifest.write(&RunManifest::path_beside(out))?;
    }
    Ok(())
}

fn calibration_for(rows: Option<&Path>, anchor: &TimeAnchor, graph: &GraphOptions) -> CliResult<Calibration> {
    let rows = match rows {
        Some(path) => {
            let file = io_context(fs::File::open(path), path)?;
            read_rows_csv(file).map_err(|e| CliError::from(e).context(path.display()))?
        }
        None if *anchor == TimeAnchor::UNOPTIMIZED_D150 && *graph == GraphOptions::default() => return Ok(default_calibration()),
        None => reference_sweep(),
    };
    Ok(calibrate(&rows, anchor, graph)?)
}

fn fpga(a: &FpgaArgs, seed: u64, argv: &[String]) -> CliResult<()> {
    let (rows, anchor_args, graph_args, json_out) = a.command.common();
    let anchor = anchor_args.anchor()?;
    let graph = graph_args.options();
    let cal = calibration_for(rows, &anchor, &graph)?;
    let (text, json) = match &a.command {
        FpgaCommand::Calibrate { .. } => (render_calibration(&cal), to_json(&cal)),
        FpgaCommand::Estimate { dim, opt, .. } => {
            let report = modelrec::fpga::estimate(&cal.params, *dim, &opt.config()?)?;
            (render_table(&[report]), to_json(&report))
        }
        FpgaCommand::Sweep { dims, opt, speedup, .. } => {
            let dims = args::parse_dims(dims)?;
            if *speedup {
                let rows = speedup_report(&cal.params, &dims)?;
                (render_speedup(&rows), to_json(&rows))
            } else {
                let config = opt.config()?;
                let reports: Vec<CostReport> = dims.iter().map(|&d| modelrec::fpga::estimate(&cal.params, d, &config)).collect::<Result<_, _>>()?;
                (render_table(&reports), to_json(&reports))
            }
        }
    };
    print!("{text}");
    if let Some(out) = json_out {
        write_file(out, &json)?;
        let mut manifest = RunManifest::new("fpga", argv, seed).with_output(out).with_settings(serde_json::json!({
            "anchor": anchor,
            "graph": graph,
        }));
        if let Some(r) = rows {
            manifest = manifest.with_input(&r.display().to_string());
        }
        manifest.write(&RunManifest::path_beside(out))?;
    }
    Ok(())
}

fn render_calibration(cal: &Calibration) -> String {
    let p = &cal.params;
    let mut out = String::new();
    out.push_str(&format!("seconds per cycle   {:.6e}\n", p.kappa));
    out.push_str(&format!("reference cycles    {:.3} + {:.3}·d + {:.4}·d²\n", p.cycle_poly[0], p.cycle_poly[1], p.cycle_poly[2]));
    out.push_str(&format!("schedule scale      {:.6}\n", p.schedule_scale));
    out.push_str(&format!("dsp                 {:.3} + {:.5}·macs\n", p.dsp.intercept, p.dsp.slope));
    out.push_str(&format!("lut                 {:.3} + {:.5}·macs\n", p.lut.intercept, p.lut.slope));
    out.push_str(&format!("bram_kb             {:.3} + {:.3}·d\n", p.bram.intercept, p.bram.slope));
    out.push_str(&format!("{:>5}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n", "d", "cycles", "lut", "dsp", "bram_kb", "kappa"));
    for r in &cal.residuals {
        out.push_str(&format!(
            "{:>5}  {:>+8.2}%  {:>+8.2}%  {:>+8.2}%  {:>+9.1}  {:>+8.3}%\n",
            r.d,
            100.0 * r.cycles,
            100.0 * r.lut,
            100.0 * r.dsp,
            r.bram_kb,
            100.0 * r.kappa
        ));
    }
    out
}

fn render_speedup(rows: &[modelrec::fpga::SpeedupRow]) -> String {
    let mut out = format!("{:>5}  {:>12}  {:>12}  {:>8}\n", "d", "none_s", "optimized_s", "ratio");
    for r in rows {
        out.push_str(&format!("{:>5}  {:>12.4}  {:>12.4}  {:>8.3}\n", r.d, r.none_s, r.optimized_s, r.ratio));
    }
    out
}
