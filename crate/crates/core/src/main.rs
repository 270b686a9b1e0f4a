use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sdp_feedback::controller::StepsizeSchedule;
use sdp_feedback::harness::{
    export, kkt_report, load_scenario, oracle_schedule, oracle_solve, read_csv, rows, run_with,
    write_csv, write_json, Format, KktReport, OracleOptions, OracleSolution, RunOptions, Sampling,
    ScenarioConfig, Trajectory,
};
use sdp_feedback::{Error, Result};

/// Sampled dual feedback control of inverters toward the SDP-relaxed OPF optimum.
#[derive(Parser)]
#[command(name = "sdp-feedback", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the closed loop and write the trajectory.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<Format>,
        /// Also check the ε-subgradient inequality on random probes.
        #[arg(long)]
        certify: bool,
        /// Oracle solution whose multiplier is added to the probes.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Compute the reference optimum by the exact dual gradient iteration.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20_000)]
        max_iter: usize,
    },
    /// Re-run a trajectory, check that it reproduces, and certify it.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV written by `run`; its embedded configuration is used.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Print a built-in scenario as JSON.
    Print { name: String },
}

#[derive(Args)]
struct Common {
    /// Scenario file or built-in name.
    #[arg(long, default_value = "paper-5node")]
    scenario: String,
    /// Sampling interval: seconds, or a multiple of τ such as `9x-tau`.
    #[arg(long)]
    sampling: Option<Sampling>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance override: V-subproblem tolerance for runs, stopping tolerance for the oracle.
    #[arg(long)]
    tol: Option<f64>,
    /// `default`, `oracle`, `harmonic:C[:SHIFT]`, `sqrt:C`, or a JSON schedule.
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<StepsizeSchedule>,
    /// Feed commanded set-points back instead of plant samples.
    #[arg(long)]
    ideal: bool,
}

fn parse_schedule(s: &str) -> Result<StepsizeSchedule, String> {
    let number = |x: &str| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    let sched = if s.trim_start().starts_with('{') {
        serde_json::from_str(s).map_err(|e| e.to_string())?
    } else {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["default"] => StepsizeSchedule::inverse_sqrt(0.1),
            ["oracle"] => oracle_schedule(),
            ["harmonic", c] => StepsizeSchedule::harmonic(number(c)?),
            ["harmonic", c, shift] => StepsizeSchedule::Harmonic {
                c: number(c)?,
                shift: number(shift)?,
            },
            ["sqrt", c] => StepsizeSchedule::InverseSqrt { c: number(c)? },
            _ => return Err(format!("unrecognized schedule `{s}`")),
        }
    };
    sched.check().map_err(|e| e.to_string())?;
    Ok(sched)
}

impl Common {
    fn apply(&self, mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(s) = self.sampling {
            cfg.sampling = s;
            if self.slots.is_none() {
                cfg.horizon = None;
            }
        }
        if let Some(n) = self.slots {
            cfg.horizon = Some(n);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(s) = &self.schedule {
            cfg.schedule = s.clone();
        }
        if self.ideal {
            cfg.ideal = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<ScenarioConfig> {
        self.apply(load_scenario(&self.scenario)?)
    }

    fn with_subproblem_tol(&self, mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(t) = self.tol {
            cfg.subproblem.tol = t;
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_solution(path: &Path) -> Result<OracleSolution> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: "<json>".into(),
        message: e.to_string(),
    })?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(io_err(p)),
        None => closed_pipe_is_ok(
            writeln!(std::io::stdout().lock(), "{text}").map_err(io_err(Path::new("<stdout>"))),
        ),
    }
}

/// A reader that stops early, such as `head`, is not an error.
fn closed_pipe_is_ok(r: Result<()>) -> Result<()> {
    match r {
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}

fn write_trajectory(traj: &Trajectory, out: Option<&Path>, format: Format) -> Result<()> {
    match out {
        Some(p) => export(traj, p, format),
        None => {
            let mut stdout = std::io::stdout().lock();
            closed_pipe_is_ok(match format {
                Format::Csv => write_csv(traj, stdout),
                Format::Json => write_json(traj, &mut stdout)
                    .and_then(|()| writeln!(stdout).map_err(io_err(Path::new("<stdout>")))),
            })
        }
    }
}

/// Exit code 4 when any certificate failed, otherwise the run's own status.
fn finish(traj: Trajectory) -> Result<ExitCode> {
    let summary = traj.summary();
    let holds = summary.holds();
    eprintln!(
        "{} slots, G = {:.4e}, G~ = {:.4e}; tracking {}/{} violations, epsilon {}/{} violations, probes {}/{} violations",
        summary.slots,
        summary.g,
        summary.g_tilde,
        summary.tracking_violations,
        summary.tracking_checked,
        summary.epsilon_violations,
        summary.epsilon_checked,
        summary.probe_violations,
        summary.probes_checked
    );
    traj.into_result()?;
    Ok(if holds {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

#[derive(Serialize)]
struct OracleOutput<'a> {
    solution: &'a OracleSolution,
    kkt: KktReport,
    duality_gap: f64,
}

#[derive(Serialize)]
struct VerifyOutput {
    reproduced: Option<bool>,
    max_deviation: Option<f64>,
    summary: sdp_feedback::harness::CertificateSummary,
    kkt: Option<KktReport>,
}

fn verify(common: &Common, trajectory: Option<&Path>, solution: Option<&Path>) -> Result<ExitCode> {
    let (cfg, recorded) = match trajectory {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let table = read_csv(&text)?;
            let meta = table.metadata.clone().ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: "no metadata header".into(),
            })?;
            let cfg: ScenarioConfig =
                serde_json::from_value(meta["config"].clone()).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            cfg.validate()?;
            (cfg, Some(table))
        }
        None => (common.with_subproblem_tol(common.load()?)?, None),
    };
    let solution = match solution {
        Some(p) => Some(read_solution(p)?),
        None => None,
    };
    let options = RunOptions {
        probes: true,
        reference: solution.as_ref().map(|s| s.lambda.clone()),
    };
    let traj = run_with(&cfg, &options)?;

    let (reproduced, max_deviation) = match &recorded {
        Some(table) => {
            let fresh = rows(&traj)?;
            let mut dev: f64 = if fresh.len() == table.rows.len() {
                0.0
            } else {
                f64::INFINITY
            };
            for (row, old) in fresh.iter().zip(&table.rows) {
                let mut vals = vec![
                    Some(row.k as f64),
                    Some(row.t_seconds),
                    row.alpha,
                    Some(row.grad_norm),
                ];
                for inv in &row.inverters {
                    vals.extend(
                        [
                            inv.p_kw,
                            inv.q_kvar,
                            inv.u_p_kw,
                            inv.u_q_kvar,
                            inv.lambda_p,
                            inv.lambda_q,
                        ]
                        .map(Some),
                    );
                }
                vals.extend([
                    Some(row.epsilon_est),
                    row.epsilon_bound,
                    Some(row.tracking_err),
                    row.tracking_bound,
                    Some(row.substation_p_kw),
                    Some(row.v_rank_ratio),
                    Some(row.min_vmag_pu),
                    Some(row.max_vmag_pu),
                ]);
                for (a, b) in vals.iter().zip(old) {
                    dev = dev.max(match (a, b) {
                        (Some(a), Some(b)) => (a - b).abs() / a.abs().max(1.0),
                        (None, None) => 0.0,
                        _ => f64::INFINITY,
                    });
                }
            }
            (Some(dev <= 1e-9), Some(dev))
        }
        None => (None, None),
    };

    let kkt = match &solution {
        Some(s) => {
            let problem = cfg.problem()?;
            Some(kkt_report(
                &s.v_matrix()?,
                &s.u,
                &s.lambda,
                &problem,
                &cfg.subproblem,
            )?)
        }
        None => None,
    };
    let out = VerifyOutput {
        reproduced,
        max_deviation,
        summary: traj.summary(),
        kkt,
    };
    print_json(&out, None)?;
    let status = finish(traj)?;
    if reproduced == Some(false) {
        return Ok(ExitCode::from(4));
    }
    Ok(status)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            common,
            out,
            format,
            certify,
            solution,
        } => {
            let cfg = common.with_subproblem_tol(common.load()?)?;
            let format = format.unwrap_or_else(|| match out.as_ref().and_then(|p| p.extension()) {
                Some(e) if e == "json" => Format::Json,
                _ => Format::Csv,
            });
            let reference = match solution {
                Some(p) => Some(read_solution(&p)?.lambda),
                None => None,
            };
            let options = RunOptions {
                probes: certify,
                reference,
            };
            let traj = run_with(&cfg, &options)?;
            let out = out.or_else(|| cfg.output.clone());
            write_trajectory(&traj, out.as_deref(), format)?;
            finish(traj)
        }
        Command::Oracle {
            common,
            out,
            max_iter,
        } => {
            let cfg = common.load()?;
            let mut options = OracleOptions {
                max_iter,
                ..OracleOptions::default()
            };
            if let Some(t) = common.tol {
                options.tol = t;
            }
            if let Some(s) = &common.schedule {
                options.schedule = s.clone();
            }
            let sol = oracle_solve(&cfg, &options)?;
            let problem = cfg.problem()?;
            let kkt = kkt_report(
                &sol.v_matrix()?,
                &sol.u,
                &sol.lambda,
                &problem,
                &cfg.subproblem,
            )?;
            eprintln!(
                "converged after {} iterations; balance residual {:.3e}, duality gap {:.3e}, rank ratio {:.3e}",
                sol.iterations,
                sol.balance_residual,
                sol.duality_gap(),
                sol.rank_ratio
            );
            match out {
                Some(p) => print_json(&sol, Some(&p))?,
                None => print_json(
                    &OracleOutput {
                        solution: &sol,
                        duality_gap: sol.duality_gap(),
                        kkt,
                    },
                    None,
                )?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            common,
            trajectory,
            solution,
        } => verify(&common, trajectory.as_deref(), solution.as_deref()),
        Command::Scenario {
            action: ScenarioAction::Print { name },
        } => {
            let cfg = ScenarioConfig::builtin(&name).ok_or_else(|| Error::Config {
                path: "scenario".into(),
                message: format!("no built-in scenario named `{name}`"),
            })?;
            print_json(&cfg, None)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = std::io::stderr().flush();
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
