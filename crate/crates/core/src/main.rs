use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use superadiabatic::bounds::{self, AppendixRanges, BoundParams};
use superadiabatic::harness::{self, BoundSource, ExperimentConfig};
use superadiabatic::hamiltonian::HamiltonianFamily;
use superadiabatic::nenciu::{self, ExpansionSeries};
use superadiabatic::{linalg, propagator, schedule, Error, Result};

#[derive(Parser)]
#[command(name = "adiabat", version, about = "Adiabatic evolution, superadiabatic expansion and run-time bounds")]
struct Cli {
    /// experiment config (JSON); the shipped default is used otherwise
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the schedule and its derivatives and fit Gevrey constants.
    Schedule {
        #[arg(long, default_value = "bump")]
        name: String,
        #[arg(long, default_value_t = 11)]
        points: usize,
        /// highest derivative in the table
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 12)]
        k_max: usize,
    },
    /// Print H(s), its spectrum and the tracked gap.
    Ham {
        /// gap parameter (default: first of the config list)
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0])]
        s: Vec<f64>,
    },
    /// Build the expansion coefficients and report hierarchy residuals.
    Expand {
        #[arg(long)]
        delta: Option<f64>,
        /// truncation order (default: from config)
        #[arg(long)]
        order: Option<usize>,
        /// Chebyshev–Lobatto nodes
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Evolve the band state for one run time.
    Evolve {
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        delta: Option<f64>,
        /// sample points (default: from config)
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
    },
    /// Run the configured (τ, δ) sweep and write sweep.csv, fits.json, plotdata/.
    Sweep,
    /// Coefficient, remainder and run-time bounds for one parameter set.
    Bounds {
        /// Gevrey C (default: fitted for the config family)
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// gap (default: measured for --delta)
        #[arg(long)]
        g: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, default_value_t = 6)]
        n_max: u32,
    },
    /// Check the combinatorial inequalities over their configured ranges.
    VerifyAppendix {
        /// ranges as JSON (default ranges otherwise)
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Scale τ with the gap by the run-time law and check the final distance.
    RuntimeCheck,
}

enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::shipped_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn family(cfg: &ExperimentConfig, delta: Option<f64>) -> Result<(f64, HamiltonianFamily)> {
    let delta = delta.unwrap_or_else(|| cfg.gap_parameters()[0]);
    Ok((delta, cfg.family_for(delta)?))
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = load_config(&cli)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let w = |e: io::Error| io_error(Path::new("<stdout>"), e);
    match cli.command {
        Command::Schedule {
            name,
            points,
            order,
            alpha,
            k_max,
        } => {
            let sched = schedule::Schedule::by_name(&name)?;
            let table = schedule::derivative_table(&sched, points, order)?;
            let mut text = String::from("s");
            for k in 0..=order {
                text.push_str(&format!(",d{k}"));
            }
            text.push('\n');
            for row in &table {
                let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            write!(out, "{text}").map_err(w)?;
            let fit = schedule::fit_gevrey_constants(&sched, alpha, k_max);
            match &fit {
                Ok(f) => eprintln!("gevrey fit: C = {}, R = {}, alpha = {}, k <= {}", f.c, f.r, f.alpha, f.k_max),
                Err(e) => eprintln!("gevrey fit unavailable: {e}"),
            }
            if cli.out.is_some() {
                let dir = out_dir(&cfg)?;
                write_text(&dir.join("schedule.csv"), &text)?;
                if let Ok(f) = fit {
                    write_text(&dir.join("gevrey.json"), &to_json(&f))?;
                }
            }
        }
        Command::Ham { delta, s } => {
            let (delta, fam) = family(&cfg, delta)?;
            let g = harness::measure_min_gap(&fam, cfg.band())?;
            writeln!(out, "delta = {delta}, dimension = {}, min gap = {g}", fam.dimension()).map_err(w)?;
            for &si in &s {
                let frame = fam.spectral_frame(si, cfg.band())?;
                writeln!(out, "s = {si}").map_err(w)?;
                for row in linalg::to_rows(&fam.at(si)) {
                    let cells: Vec<String> = row.iter().map(|[re, im]| format!("{re:+.6}{im:+.6}i")).collect();
                    writeln!(out, "  [{}]", cells.join(", ")).map_err(w)?;
                }
                writeln!(out, "  energies = {:?}", frame.energies.as_slice()).map_err(w)?;
                writeln!(out, "  band energy = {}, gap = {}", frame.energy, frame.gap).map_err(w)?;
            }
        }
        Command::Expand { delta, order, nodes } => {
            let (delta, fam) = family(&cfg, delta)?;
            let order = order.unwrap_or(cfg.order);
            let m = nodes.unwrap_or_else(|| nenciu::default_grid_size(order));
            let series = ExpansionSeries::for_family(&fam, cfg.band(), order, m)?;
            let alg = series.algebraic_residuals();
            let diff = series.differential_residuals();
            writeln!(out, "delta = {delta}, order = {order}, nodes = {m}").map_err(w)?;
            writeln!(out, "{:>3} {:>14} {:>14} {:>14} {:>14}", "j", "max |B_j|", "algebraic", "differential", "resolution")
                .map_err(w)?;
            let table = series.norm_table();
            for j in 0..=order {
                let max_norm = table.iter().filter(|r| r.j == j).map(|r| r.norm).fold(0.0, f64::max);
                let d = diff.get(j).map_or("-".to_string(), |x| format!("{x:.3e}"));
                writeln!(
                    out,
                    "{j:>3} {max_norm:>14.6e} {:>14.3e} {d:>14} {:>14.3e}",
                    alg[j],
                    series.resolution()[j]
                )
                .map_err(w)?;
            }
            if cli.out.is_some() {
                let dir = out_dir(&cfg)?;
                let mut csv = String::from("j,s,norm,derivative_norm\n");
                for r in &table {
                    csv.push_str(&format!("{},{},{},{}\n", r.j, r.s, r.norm, r.derivative_norm));
                }
                write_text(&dir.join("norms.csv"), &csv)?;
                write_text(&dir.join("expansion.json"), &to_json(&series.export()))?;
            }
        }
        Command::Evolve { tau, delta, s } => {
            let (delta, fam) = family(&cfg, delta)?;
            let samples = s.unwrap_or_else(|| cfg.samples.clone());
            let psi0 = propagator::default_initial_state(&fam, cfg.band())?;
            let traj = propagator::evolve(&fam, cfg.band(), tau, &psi0, &samples, &cfg.integrator())?;
            let mut csv = String::from("tau,delta,s,dist,gap,norm_drift\n");
            for i in 0..samples.len() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    tau, delta, samples[i], traj.distances[i], traj.gaps[i], traj.norm_drift[i]
                ));
            }
            write!(out, "{csv}").map_err(w)?;
            if cli.out.is_some() {
                write_text(&out_dir(&cfg)?.join("evolve.csv"), &csv)?;
            }
        }
        Command::Sweep => {
            let dir = out_dir(&cfg)?;
            let mut cfg = cfg;
            cfg.output = Some(dir.clone());
            let result = harness::run_sweep(&cfg)?;
            harness::emit_outputs(&result, &dir)?;
            writeln!(out, "{:>8} {:>6} {:>10} {:>8} {:>6}", "delta", "s", "slope", "R^2", "pts").map_err(w)?;
            for f in &result.fits {
                writeln!(
                    out,
                    "{:>8} {:>6} {:>10.4} {:>8.5} {:>6}",
                    f.delta, f.s, f.fit.slope, f.fit.r_squared, f.points
                )
                .map_err(w)?;
            }
            let applicable = result.comparisons.iter().filter(|c| c.bound.is_some()).count();
            writeln!(
                out,
                "bound overlay: {applicable} of {} records admissible, {}",
                result.comparisons.len(),
                if result.bounds_hold() { "all hold" } else { "VIOLATED" }
            )
            .map_err(w)?;
            writeln!(out, "wrote {}", dir.display()).map_err(w)?;
            if !result.bounds_hold() {
                return Ok(Outcome::Failed);
            }
        }
        Command::Bounds {
            c,
            r,
            alpha,
            g,
            delta,
            tau,
            k,
            n_max,
        } => {
            let alpha = alpha.unwrap_or(cfg.alpha);
            let k_const = k.unwrap_or(cfg.k_const);
            let (_, fam) = family(&cfg, delta)?;
            let g = match g {
                Some(g) => g,
                None => harness::measure_min_gap(&fam, cfg.band())?,
            };
            let (c, r) = match (c, r) {
                (Some(c), Some(r)) => (c, r),
                (None, None) => match cfg.bounds {
                    BoundSource::Explicit { c, r } => (c, r),
                    BoundSource::Fitted { k_max } => {
                        let fit = schedule::fit_gevrey_constants(fam.schedule(), alpha, k_max)?
                            .scaled(linalg::op_norm(fam.difference()));
                        (fit.c, fit.r)
                    }
                },
                _ => return Err(Error::Config("--c and --r go together".into())),
            };
            let params = BoundParams::new(c, r, alpha, g)?;
            let summary = bounds::summarize(&params, n_max, tau, k_const)?;
            let text = to_json(&summary);
            write!(out, "{text}").map_err(w)?;
            if cli.out.is_some() {
                write_text(&out_dir(&cfg)?.join("bounds.json"), &text)?;
            }
        }
        Command::VerifyAppendix { ranges } => {
            let ranges = match ranges {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })?
                }
                None => AppendixRanges::default(),
            };
            let report = bounds::verify_appendix(&ranges)?;
            report.write_table(&mut out).map_err(w)?;
            let dir = out_dir(&cfg)?;
            report.write_csv(&dir.join("appendix.csv"))?;
            writeln!(out, "{} instances, {} failed", report.instances.len(), report.failures()).map_err(w)?;
            if !report.all_pass() {
                return Ok(Outcome::Failed);
            }
        }
        Command::RuntimeCheck => {
            let report = harness::runtime_law_check(&cfg)?;
            writeln!(out, "{:>8} {:>10} {:>14} {:>12} {:>14}", "delta", "gap", "tau", "dist", "dist@fixed").map_err(w)?;
            for e in &report.entries {
                writeln!(
                    out,
                    "{:>8} {:>10.6} {:>14.6e} {:>12.4e} {:>14.4e}",
                    e.delta, e.min_gap, e.tau, e.dist, e.fixed_tau_dist
                )
                .map_err(w)?;
            }
            writeln!(
                out,
                "below threshold {}: {}, non-increasing: {}, fixed tau degrades: {}",
                report.threshold, report.below_threshold, report.non_increasing, report.fixed_tau_degrades
            )
            .map_err(w)?;
            harness::write_runtime_report(&report, &out_dir(&cfg)?.join("runtime.json"))?;
            if !report.passed() {
                return Ok(Outcome::Failed);
            }
        }
    }
    Ok(Outcome::Ok)
}
