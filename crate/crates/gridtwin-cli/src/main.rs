//! `gridtwin`: command-line front end for the distribution network twin.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use clap::{Args, Parser, Subcommand};

use gridtwin::cae;
use gridtwin::config::{RunConfig, RunPaths, ScenarioConfig};
use gridtwin::harness::{self, Progress};
use gridtwin::network::{load_network, BranchRef, Network};
use gridtwin::powerflow::{solve_power_flow, OperatingPoint, PowerFlowSolution};
use gridtwin::rsae::{assess, AssessmentContext, ViolationReport};
use gridtwin::smfae::{build_problem, solve_and_verify, ActivationMode, SlackPolicy};
use gridtwin::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gridtwin",
    version,
    about = "Digital twin engine for active distribution networks",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the network model (and optionally measurements) against the schemas
    Validate(ValidateArgs),
    /// Solve the power flow for one timestamp and print the state
    Powerflow(PointArgs),
    /// Assess security limits over the horizon, or one timestamp with --at
    Assess(AssessArgs),
    /// Run the N-1 contingency sweep for one timestamp
    Contingency(ContingencyArgs),
    /// Solve the flexibility redispatch for one timestamp or contingency
    Redispatch(RedispatchArgs),
    /// Execute every configured scenario end to end into a run directory
    Run(RunArgs),
    /// Regenerate plot-ready CSVs from a previous run directory
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Network model (JSON)
    #[arg(long)]
    network: PathBuf,
    /// Feeder measurement series (CSV)
    #[arg(long)]
    measurements: PathBuf,
    /// Run configuration (JSON); built-in defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps; overrides the config (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Network model (JSON)
    #[arg(long)]
    network: PathBuf,
    /// Feeder measurement series (CSV)
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Run configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Timestamp to analyze (RFC 3339); defaults to the first sample
    #[arg(long)]
    at: Option<String>,
    /// Load scaling factor applied to the operating point
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Write the full solution as JSON to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AssessArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Restrict the assessment to one timestamp (RFC 3339)
    #[arg(long)]
    at: Option<String>,
    /// Load scaling factor applied to every operating point
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Write violation reports as JSON lines to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ContingencyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Timestamp to analyze (RFC 3339); defaults to the first sample
    #[arg(long)]
    at: Option<String>,
    /// Analyze a single element (`line:<id>` or `transformer:<id>`)
    #[arg(long)]
    contingency: Option<String>,
    /// Write the sweep as CSV to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RedispatchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Timestamp to redispatch (RFC 3339); defaults to the first sample
    #[arg(long)]
    at: Option<String>,
    /// Load scaling factor applied to the operating point
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Preventive mode against this outage (`line:<id>` or `transformer:<id>`)
    #[arg(long)]
    contingency: Option<String>,
    /// Write the setpoint schedule as JSON to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Run directory for all artifacts
    #[arg(long)]
    out: PathBuf,
    /// Replace the configured scenarios with a single sweep at this load scale
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory produced by `gridtwin run`
    #[arg(long)]
    run: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("GRIDTWIN_LOG")
            .write_style("GRIDTWIN_LOG_STYLE"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() || matches!(e, Error::DegenerateTopology(_)) {
                ExitCode::from(3)
            } else {
                ExitCode::from(4)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Powerflow(a) => cmd_powerflow(a),
        Command::Assess(a) => cmd_assess(a),
        Command::Contingency(a) => cmd_contingency(a),
        Command::Redispatch(a) => cmd_redispatch(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn init_pool(jobs: Option<usize>, config: &RunConfig) -> Result<()> {
    let n = jobs.unwrap_or(config.jobs);
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::data(format!("cannot configure {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn parse_at(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%MZ") {
        return Ok(Utc.from_utc_datetime(&t));
    }
    Err(Error::data(format!(
        "cannot parse timestamp `{s}`; use RFC 3339 like 2023-06-01T12:00:00Z"
    )))
}

fn load_point_inputs(input: &InputArgs) -> Result<harness::Inputs> {
    let config = load_config(&input.config)?;
    init_pool(input.jobs, &config)?;
    let paths = RunPaths {
        network: input.network.clone(),
        measurements: input.measurements.clone(),
        out_dir: PathBuf::from("."),
    };
    harness::load_inputs(&paths, config)
}

fn resolve_at(inputs: &harness::Inputs, at: &Option<String>) -> Result<DateTime<Utc>> {
    match at {
        Some(s) => parse_at(s),
        None => inputs
            .horizon()
            .first()
            .copied()
            .ok_or_else(|| Error::data("measurement horizon is empty")),
    }
}

fn scale_loads(point: &mut OperatingPoint, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::data(format!("load scale must be positive, got {scale}")));
    }
    if (scale - 1.0).abs() > 1e-12 {
        for pq in point.loads.values_mut() {
            pq.p_mw *= scale;
            pq.q_mvar *= scale;
        }
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<ExitCode> {
    let net = load_network(&a.network)?;
    println!(
        "network ok: {} buses, {} lines, {} transformers, {} generators, {} loads",
        net.buses.len(),
        net.lines.len(),
        net.transformers.len(),
        net.generators.len(),
        net.loads.len()
    );
    if let Some(m) = &a.measurements {
        let config = load_config(&a.config)?;
        let paths = RunPaths {
            network: a.network.clone(),
            measurements: m.clone(),
            out_dir: PathBuf::from("."),
        };
        let inputs = harness::load_inputs(&paths, config)?;
        let horizon = inputs.horizon();
        println!(
            "measurements ok: {} substations, {} timestamps, {} gap events",
            inputs.series.len(),
            horizon.len(),
            inputs.gaps.len()
        );
    } else if let Some(c) = &a.config {
        RunConfig::load(c)?;
        println!("config ok: {}", c.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_solution(net: &Network, solution: &PowerFlowSolution) {
    println!(
        "converged in {} iterations, max mismatch {:.3e} pu",
        solution.iterations, solution.max_mismatch_pu
    );
    println!(
        "slack exchange: {:+.3} MW / {:+.3} MVAr",
        solution.p_ext_mw, solution.q_ext_mvar
    );
    println!(
        "voltage range: {:.4} .. {:.4} pu, max loading {:.1}%",
        solution.min_vm_pu(),
        solution.max_vm_pu(),
        solution.max_loading_percent()
    );
    for v in &solution.voltages {
        let name = net
            .bus(v.bus)
            .map(|b| b.name.as_str())
            .unwrap_or("?");
        println!(
            "  bus {:>3} {:<10} {:.4} pu {:+7.3} deg",
            v.bus,
            name,
            v.vm_pu,
            v.va_rad.to_degrees()
        );
    }
}

fn cmd_powerflow(a: PointArgs) -> Result<ExitCode> {
    let inputs = load_point_inputs(&a.input)?;
    let t = resolve_at(&inputs, &a.at)?;
    let mut point = inputs.point_at(t)?;
    scale_loads(&mut point, a.scale)?;
    let solution = solve_power_flow(&inputs.network, &point, &inputs.config.solver)?;
    println!("power flow at {}", t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    print_solution(&inputs.network, &solution);
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&solution)? + "\n")?;
        println!("solution written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn violation_line(report: &ViolationReport) -> String {
    let worst = report
        .violations
        .iter()
        .map(|v| format!("{:?} {} {:.4} (limit {:.4})", v.kind, v.element, v.value, v.limit))
        .collect::<Vec<_>>()
        .join("; ");
    format!(
        "{}: {} violation(s): {}",
        report.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        report.violations.len(),
        worst
    )
}

fn cmd_assess(a: AssessArgs) -> Result<ExitCode> {
    let inputs = load_point_inputs(&a.input)?;
    let times = match &a.at {
        Some(s) => vec![parse_at(s)?],
        None => inputs.horizon(),
    };
    let mut reports: Vec<ViolationReport> = Vec::new();
    let mut checked = 0usize;
    for t in times {
        let mut point = inputs.point_at(t)?;
        scale_loads(&mut point, a.scale)?;
        let solution = solve_power_flow(&inputs.network, &point, &inputs.config.solver)?;
        let report = assess(&solution, &inputs.config.limits, AssessmentContext::Normal)?;
        checked += 1;
        if !report.is_secure() {
            println!("{}", violation_line(&report));
            reports.push(report);
        }
    }
    if let Some(out) = &a.out {
        let mut body = String::new();
        for r in &reports {
            body.push_str(&r.to_json_line()?);
            body.push('\n');
        }
        std::fs::write(out, body)?;
    }
    if reports.is_empty() {
        println!("secure: {checked} operating point(s), no limit violations");
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "insecure: {} of {checked} operating point(s) violate limits",
            reports.len()
        );
        Ok(ExitCode::from(1))
    }
}

fn cmd_contingency(a: ContingencyArgs) -> Result<ExitCode> {
    let inputs = load_point_inputs(&a.input)?;
    let t = resolve_at(&inputs, &a.at)?;
    let point = inputs.point_at(t)?;
    let cases = match &a.contingency {
        Some(raw) => {
            let element: BranchRef = raw.parse()?;
            vec![cae::assess_contingency(
                &inputs.network,
                &point,
                element,
                &inputs.config.limits,
                &inputs.config.solver,
            )?]
        }
        None => cae::sweep(&inputs.network, &point, &inputs.config.limits, &inputs.config.solver)?,
    };
    let stats = cae::SweepStats::from_cases(&cases);
    for c in &cases {
        let outcome = match &c.outcome {
            cae::ContingencyOutcome::Secure => "secure".to_string(),
            cae::ContingencyOutcome::Violations { report } => {
                format!("{} violation(s)", report.violations.len())
            }
            cae::ContingencyOutcome::Diverged { last_mismatch_pu } => {
                format!("diverged (mismatch {last_mismatch_pu:.3e} pu)")
            }
            cae::ContingencyOutcome::DegenerateTopology => "degenerate topology".to_string(),
        };
        println!(
            "  {:<16} {} ({} islanded bus(es))",
            c.element.to_string(),
            outcome,
            c.islanded_buses.len()
        );
    }
    println!(
        "{} case(s): {} secure, {} violated, {} diverged, {} degenerate",
        stats.cases, stats.secure, stats.violated, stats.diverged, stats.degenerate
    );
    if let Some(out) = &a.out {
        let file = std::fs::File::create(out)?;
        cae::write_sweep_csv(file, t, &cases)?;
        println!("sweep written to {}", out.display());
    }
    if stats.cases == stats.secure {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_redispatch(a: RedispatchArgs) -> Result<ExitCode> {
    let inputs = load_point_inputs(&a.input)?;
    let t = resolve_at(&inputs, &a.at)?;
    let mut point = inputs.point_at(t)?;
    scale_loads(&mut point, a.scale)?;
    let config = harness::redispatch_config(&inputs, SlackPolicy::Free);

    let problem = match &a.contingency {
        Some(raw) => {
            let element: BranchRef = raw.parse()?;
            let (pruned, islanded) = gridtwin::network::apply_outage(&inputs.network, element)?;
            if !islanded.is_empty() {
                println!("outage islands {} bus(es)", islanded.len());
            }
            build_problem(
                &pruned,
                &point,
                ActivationMode::Preventive { outage: element },
                &config,
            )?
        }
        None => build_problem(&inputs.network, &point, ActivationMode::Corrective, &config)?,
    };
    let schedule = solve_and_verify(&problem)?;
    println!(
        "optimal in {} iterations, objective {:.6}",
        schedule.iterations, schedule.objective
    );
    println!(
        "slack exchange: {:+.3} MW / {:+.3} MVAr",
        schedule.p_ext_mw, schedule.q_ext_mvar
    );
    for (id, sp) in &schedule.setpoints {
        println!(
            "  gen {:>3}: P {:+8.4} MW (d {:+8.4}), Q {:+8.4} MVAr (d {:+8.4})",
            id, sp.p_mw, sp.delta_p_mw, sp.q_mvar, sp.delta_q_mvar
        );
    }
    if let Some(v) = &schedule.verification {
        println!(
            "verification: {} violation(s), voltage gap {:.2e} pu",
            v.violations, v.max_voltage_gap_pu
        );
    }
    if let Some(out) = &a.out {
        std::fs::write(out, schedule.to_json()? + "\n")?;
        println!("schedule written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut config = load_config(&a.input.config)?;
    if let Some(scale) = a.scale {
        config.scenarios = vec![ScenarioConfig {
            name: format!("scale-{scale}"),
            load_scale: scale,
            rsae: true,
            cae: false,
            smfae: true,
        }];
    }
    init_pool(a.input.jobs, &config)?;
    let paths = RunPaths {
        network: a.input.network.clone(),
        measurements: a.input.measurements.clone(),
        out_dir: a.out.clone(),
    };
    let sink = |p: Progress| {
        log::info!("{}: {}/{}", p.phase, p.done, p.total);
    };
    let metrics = harness::run_all(&paths, config, Some(&sink))?;
    println!(
        "run complete: {} operating points, {} scenario(s), artifacts in {}",
        metrics.operating_points,
        metrics.scenarios.len(),
        a.out.display()
    );
    for s in &metrics.scenarios {
        println!(
            "  {:<16} violations {:>6.2}%  import delta {:+.2} MWh",
            s.name, s.violation_rate_percent, s.import_reduction_mwh
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let written = harness::report::regenerate(&a.run)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}
