use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde_json::json;

use rydberg_chirp::analysis::{calibrate_prefactor, crossing_report, evolve_effective, spectrum_trace, EffectiveTwoLevel};
use rydberg_chirp::config::{ChirpProtocol, Observable, RunConfig};
use rydberg_chirp::format::sig9;
use rydberg_chirp::model::{AngularConvention, Model, PulseSpec};
use rydberg_chirp::observe::{ghz_fidelity, w_fidelity};
use rydberg_chirp::propagate::{evolve_probed, StateVector};
use rydberg_chirp::svg::{self, HeatMap};
use rydberg_chirp::sweep::{equal_population_contour, run_sweep, Protocol, SweepResult};
use rydberg_chirp::validate::run_checks;
use rydberg_chirp::{Error, Result};

#[derive(Parser)]
#[command(name = "rydberg-chirp", version, about = "Chirped-pulse entanglement in Rydberg atom chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bare-state energies over time and their crossings with the ground state.
    Spectrum(Common),
    /// Full Schrödinger propagation with populations and fidelities.
    Evolve(Common),
    /// Fidelity map over chirp rate and peak Rabi frequency.
    Sweep(SweepArgs),
    /// Invariant checks: Hermiticity, norm, oracle agreement, angles, spectrum.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frequency convention: direct or two_pi.
    #[arg(long)]
    convention: Option<String>,
    /// Integration step in microseconds.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Also write SVG heat maps.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// JSON run configuration; the GHZ working point is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

const DEFAULT_VALIDATE_CONFIG: &str = r#"{
    "description": "GHZ working point",
    "system": {"v": [[0, 60, 30], [60, 0, 60], [30, 60, 0]], "delta1": -1500, "delta2": -100},
    "pulse": {"omega01": 158, "omega02": 158, "tau0": 1, "t_center": 3, "alpha1": -176, "alpha2": -176},
    "protocol": "ghz"
}"#;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Spectrum(args) => load(&args.config, &args.overrides).and_then(|c| cmd_spectrum(&c)),
        Command::Evolve(args) => load(&args.config, &args.overrides).and_then(|c| cmd_evolve(&c)),
        Command::Sweep(args) => {
            load(&args.common.config, &args.common.overrides).and_then(|c| cmd_sweep(&c, args.workers, args.svg))
        }
        Command::Validate(args) => {
            let cfg = match &args.config {
                Some(path) => load(path, &args.overrides),
                None => RunConfig::from_json(DEFAULT_VALIDATE_CONFIG).and_then(|c| apply(c, &args.overrides)),
            };
            cfg.and_then(|c| cmd_validate(&c))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    apply(RunConfig::load(path)?, overrides)
}

fn apply(mut cfg: RunConfig, o: &Overrides) -> Result<RunConfig> {
    if let Some(dir) = &o.out {
        cfg.output.dir = Some(dir.clone());
    }
    if let Some(c) = &o.convention {
        cfg.angular_convention = c.parse::<AngularConvention>()?;
    }
    if let Some(dt) = o.dt {
        cfg.integrator = Some(cfg.integrator().with_dt(dt));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cfg: &RunConfig, suffix: &str) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir.join(format!("{}_{suffix}", cfg.output.stem)))
}

fn banner(cfg: &RunConfig) -> String {
    format!(
        "# rydberg-chirp config_hash={} convention={} coupling={}",
        cfg.hash(),
        cfg.angular_convention.name(),
        cfg.rabi_coupling.name()
    )
}

fn provenance(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "config_hash": cfg.hash(),
        "angular_convention": cfg.angular_convention.name(),
        "rabi_coupling": cfg.rabi_coupling.name(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Opens a CSV and writes the provenance comment line.
fn csv_writer(cfg: &RunConfig, path: &Path) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", banner(cfg))?;
    eprintln!("wrote {}", path.display());
    Ok(w)
}

fn cmd_spectrum(cfg: &RunConfig) -> Result<()> {
    let system = cfg.system_spec()?;
    let pulse = cfg.run_pulse()?;
    let window = cfg.integrator();
    let n = cfg.spectrum.as_ref().map_or(601, |s| s.samples);
    let times: Vec<f64> =
        (0..n).map(|k| window.t_start + (window.t_end - window.t_start) * k as f64 / (n - 1) as f64).collect();
    let trace = spectrum_trace(&system, &pulse, &times)?;
    let crossings = crossing_report(&trace, &system, &pulse)?;

    let path = out_path(cfg, "spectrum.csv")?;
    let mut w = csv_writer(cfg, &path)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let mut meta = provenance(cfg);
    meta["classes"] = json!(trace.annotations());
    meta["chirp_off_time"] = json!(pulse.chirp_off_time);
    write_json(&out_path(cfg, "spectrum.json")?, &meta)?;
    let mut report = provenance(cfg);
    report["crossings"] = json!(crossings);
    write_json(&out_path(cfg, "crossings.json")?, &report)?;

    println!("{} energy classes, {} crossings with the ground state", trace.classes.len(), crossings.len());
    for c in &crossings {
        println!("  {:<12} t = {:.6} us (degeneracy {})", c.state, c.time, c.degeneracy);
    }
    Ok(())
}

fn fidelity_columns(observables: &[Observable]) -> Vec<String> {
    observables
        .iter()
        .map(|o| match o {
            Observable::Ghz => "F_GHZ".to_string(),
            Observable::W => "F_W".to_string(),
        })
        .collect()
}

fn cmd_evolve(cfg: &RunConfig) -> Result<()> {
    let system = cfg.system_spec()?;
    let pulse = cfg.run_pulse()?;
    let integrator = cfg.integrator();
    let model = Model::with_settings(system.clone(), pulse.clone(), cfg.settings())?;
    let basis = model.basis().clone();
    let observables = if system.n_atoms >= 2 { cfg.observables() } else { Vec::new() };
    let names = fidelity_columns(&observables);

    let mut fidelities: Vec<Vec<f64>> = vec![Vec::new(); observables.len()];
    let mut probe_err = None;
    let mut probe = |t: f64, psi: &[C64]| {
        let state = StateVector::new(psi.to_vec(), t);
        for (k, o) in observables.iter().enumerate() {
            let f = match o {
                Observable::Ghz => ghz_fidelity(&basis, &state),
                Observable::W => w_fidelity(&basis, &state),
            };
            match f {
                Ok(v) => fidelities[k].push(v),
                Err(e) => {
                    fidelities[k].push(f64::NAN);
                    probe_err.get_or_insert(e.to_string());
                }
            }
        }
    };
    let initial = StateVector::basis(model.dim(), basis.ground_index(), integrator.t_start);
    let traj = evolve_probed(&model, &integrator, &initial, basis.labels(), (0..basis.dim()).collect(), &mut probe)?;
    if let Some(e) = probe_err {
        return Err(Error::Config(e));
    }
    let mut extra: Vec<(String, Vec<f64>)> = names.iter().cloned().zip(fidelities).collect();

    let mut summary = provenance(cfg);
    let last = traj.final_state.clone();
    summary["final_populations"] =
        basis.labels().iter().enumerate().map(|(k, l)| (l.clone(), json!(last.population(k)))).collect::<serde_json::Map<_, _>>().into();
    for (name, series) in &extra {
        summary[name.as_str()] = json!(series.last());
    }
    summary["max_norm_drift"] = json!(traj.max_norm_drift());
    summary["dt"] = json!(traj.dt);
    summary["chirp_off_time"] = json!(pulse.chirp_off_time);

    if cfg.protocol == ChirpProtocol::Ghz && system.n_atoms >= 2 && system.nearest_neighbor() > 0.0 {
        let (eff, calibration) = effective_overlay(cfg, &system, &pulse, &traj)?;
        let eff_traj = evolve_effective(&eff, &integrator)?;
        let g = basis.state(basis.ground_index()).label();
        let r = basis.state(basis.rydberg_index()).label();
        extra.push((format!("{g}_eff"), eff_traj.populations.iter().map(|row| row[0]).collect()));
        extra.push((format!("{r}_eff"), eff_traj.populations.iter().map(|row| row[1]).collect()));
        summary["effective_prefactor"] = json!(eff.prefactor);
        if let Some(c) = calibration {
            summary["effective_calibration"] = json!(c);
        }
    }

    let path = out_path(cfg, "trajectory.csv")?;
    let mut w = csv_writer(cfg, &path)?;
    traj.write_csv(&mut w, &extra)?;
    w.flush()?;
    write_json(&out_path(cfg, "evolve.json")?, &summary)?;

    let g = basis.ground_index();
    let r = basis.rydberg_index();
    println!(
        "final P_{} = {}, P_{} = {}",
        basis.state(g).label(),
        sig9(last.population(g)),
        basis.state(r).label(),
        sig9(last.population(r))
    );
    for (name, series) in extra.iter().take(names.len()) {
        println!("final {name} = {}", sig9(*series.last().unwrap_or(&f64::NAN)));
    }
    Ok(())
}

fn effective_overlay(
    cfg: &RunConfig,
    system: &rydberg_chirp::SystemSpec,
    pulse: &PulseSpec,
    traj: &rydberg_chirp::Trajectory,
) -> Result<(EffectiveTwoLevel, Option<rydberg_chirp::analysis::Calibration>)> {
    let base = EffectiveTwoLevel::new(system.clone(), pulse.clone()).with_convention(cfg.angular_convention);
    if let Some(c) = cfg.effective.as_ref().and_then(|e| e.prefactor) {
        return Ok((base.with_prefactor(c), None));
    }
    let k = traj.indices.iter().position(|&i| i == 0).expect("ground state recorded");
    let reference: Vec<f64> = traj.populations.iter().map(|row| row[k]).collect();
    let fit = calibrate_prefactor(&base, &cfg.integrator(), &reference)?;
    Ok((base.with_prefactor(fit.prefactor), Some(fit)))
}

fn cmd_sweep(cfg: &RunConfig, workers: Option<usize>, svg_out: bool) -> Result<()> {
    let grid = cfg.sweep_grid()?;
    let integrator = cfg.integrator();
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = run_sweep(&grid, &integrator, workers)?;

    let path = out_path(cfg, "sweep.csv")?;
    let mut w = csv_writer(cfg, &path)?;
    result.write_csv(&mut w)?;
    w.flush()?;

    let mut meta = result.metadata_json();
    meta["run"] = provenance(cfg);
    meta["workers"] = json!(workers);

    let contour = if grid.protocol == Protocol::W {
        let c = equal_population_contour(&result)?;
        write_single_ground(cfg, &result)?;
        write_json(
            &out_path(cfg, "contour.json")?,
            &json!({ "run": provenance(cfg), "threshold": rydberg_chirp::sweep::EQUAL_POPULATION_THRESHOLD, "polylines": c.polylines }),
        )?;
        Some(c)
    } else {
        None
    };
    write_json(&out_path(cfg, "sweep.json")?, &meta)?;

    if svg_out {
        let tag = format!("config_hash={} convention={}", cfg.hash(), cfg.angular_convention.name());
        let fid = result.field(|c| c.fidelity);
        let title = match grid.protocol {
            Protocol::Ghz => "GHZ fidelity",
            Protocol::W => "W fidelity",
        };
        write_svg(cfg, "fidelity.svg", &result, &fid, title, (0.0, 1.0), &tag, contour.as_ref())?;
        let (pop, title, range) = match grid.protocol {
            Protocol::Ghz => (result.field(|c| c.metric.abs()), "|P_ground - P_rydberg|", (0.0, 1.0)),
            Protocol::W => (result.field(|c| c.metric), "single-ground population", (0.0, 1.0)),
        };
        write_svg(cfg, "population.svg", &result, &pop, title, range, &tag, contour.as_ref())?;
    }

    let best = result
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.fidelity.is_nan())
        .max_by(|a, b| a.1.fidelity.total_cmp(&b.1.fidelity));
    if let Some((k, c)) = best {
        let (i, j) = (k / result.omegas.len(), k % result.omegas.len());
        println!(
            "max fidelity {} at alpha = {}, omega = {}",
            sig9(c.fidelity),
            sig9(result.alphas[i]),
            sig9(result.omegas[j])
        );
    }
    println!("{} cells, {} failed", result.cells.len(), result.failures.len());
    if result.failures.len() == result.cells.len() {
        return Err(Error::Numerical("every cell failed; see the failure manifest".into()));
    }
    Ok(())
}

fn write_single_ground(cfg: &RunConfig, result: &SweepResult) -> Result<()> {
    let path = out_path(cfg, "single_ground.csv")?;
    let mut w = csv_writer(cfg, &path)?;
    let n = result.cells.first().map_or(0, |c| c.single_ground.len());
    let header: Vec<String> = (0..n).map(|k| format!("P{}", k + 1)).collect();
    writeln!(w, "alpha,omega,{}", header.join(","))?;
    for (i, a) in result.alphas.iter().enumerate() {
        for (j, o) in result.omegas.iter().enumerate() {
            let pops: Vec<String> = result.cell(i, j).single_ground.iter().map(|&p| sig9(p)).collect();
            writeln!(w, "{},{},{}", sig9(*a), sig9(*o), pops.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_svg(
    cfg: &RunConfig,
    suffix: &str,
    result: &SweepResult,
    field: &[Vec<f64>],
    title: &str,
    range: (f64, f64),
    tag: &str,
    contour: Option<&rydberg_chirp::sweep::Contour>,
) -> Result<()> {
    let map = HeatMap {
        title,
        x_label: "chirp rate alpha (MHz/us)",
        y_label: "peak Rabi frequency Omega0 (MHz)",
        xs: &result.alphas,
        ys: &result.omegas,
        field,
        range,
        metadata: tag,
    };
    let path = out_path(cfg, suffix)?;
    fs::write(&path, svg::render(&map, contour))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let system = cfg.system_spec()?;
    let pulse = cfg.run_pulse()?;
    let checks = run_checks(&system, &pulse, cfg.settings(), &cfg.integrator())?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
