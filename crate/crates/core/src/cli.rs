//! Command-line front end. `run` never exits the process itself so that it
//! can be driven from tests; the binary maps its return value to the exit
//! code (0 success, 2 input error, 3 network failure).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use crate::assign::plan_for;
use crate::epnet::{self, DeployOptions, ExecutorConfig, OutputSink, PackageSource, SamplePackage, WorkerConfig};
use crate::model::{NodeId, Plan, Scenario};
use crate::scenario::{emit_report, load_scenario, sweep, ReportFormat, ScenarioError, SweepAxis, SweepPoint};
use crate::sim::{compare_with, simulate_with, Case, SimOptions, UplinkMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NETWORK: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "epiot", version, about = "Plan, simulate and run edge process migration")]
pub struct Cli {
    /// Seed for every randomized choice (synthetic payloads, executor jitter).
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Table => ReportFormat::Table,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Uplink {
    Serialized,
    Parallel,
}

impl From<Uplink> for UplinkMode {
    fn from(u: Uplink) -> Self {
        match u {
            Uplink::Serialized => UplinkMode::Serialized,
            Uplink::Parallel => UplinkMode::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Axis {
    NumObjects,
    ObjectBytes,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the greedy plan: objects and estimated total per node.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated candidate node ids (default: every node).
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<String>,
        /// Also print the assignment trace.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Simulate one case and print per-worker stage spans.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Case in figure notation: REM, A.<ids>, a node id, or concatenated ids.
        #[arg(long, default_value = "REM")]
        case: String,
        #[arg(long, value_enum, default_value_t = Uplink::Serialized)]
        uplink: Uplink,
    },
    /// Simulate several cases and print the comparison report.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated cases (default: local, every mono case, equal split over all, REM).
        #[arg(long, value_delimiter = ',')]
        cases: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Uplink::Serialized)]
        uplink: Uplink,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a comparison over object counts or object sizes.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        cases: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Uplink::Serialized)]
        uplink: Uplink,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a worker daemon in the foreground.
    ServeWorker {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: SocketAddr,
        #[arg(long, default_value = "worker")]
        node_id: String,
        /// Packages executed in parallel.
        #[arg(long, default_value_t = 2)]
        cores: usize,
        /// Busy-work per data object, in milliseconds.
        #[arg(long, default_value_t = 0.0)]
        busy_ms: f64,
        /// Relative jitter on the busy-work, in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Advertise this node's profile from a scenario file.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Plan a case and deploy it to running worker daemons.
    Deploy {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "REM")]
        case: String,
        /// Worker address as NODE=HOST:PORT; repeat per worker.
        #[arg(long = "worker", value_parser = parse_worker, required = true)]
        workers: Vec<(NodeId, SocketAddr)>,
        /// Address the output receiver listens on.
        #[arg(long, default_value = "127.0.0.1:0")]
        receiver_bind: SocketAddr,
        /// Override the data object size (bytes) of the synthetic payload.
        #[arg(long)]
        object_bytes: Option<usize>,
        /// Override the module size (bytes) of the synthetic payload.
        #[arg(long)]
        mdl_bytes: Option<usize>,
        /// Seconds to wait for every output after the last ack.
        #[arg(long, default_value_t = 60.0)]
        wait_secs: f64,
    },
    /// Measure the calibration timespans against a local worker daemon.
    Calibrate {
        #[arg(long, default_value = "127.0.0.1:7070")]
        worker: SocketAddr,
        #[arg(long, default_value_t = 1203)]
        alg_bytes: usize,
        #[arg(long, default_value_t = 14_100_000)]
        mdl_bytes: usize,
        #[arg(long, default_value_t = 3_000_000)]
        object_bytes: usize,
        /// Number of trials; consecutive trials are compared for jitter.
        #[arg(long, default_value_t = 2)]
        trials: usize,
        /// Relative disagreement between trials that raises a warning.
        #[arg(long, default_value_t = 0.5)]
        jitter_bound: f64,
        #[arg(long, default_value_t = 30.0)]
        timeout_secs: f64,
    },
}

fn parse_worker(s: &str) -> Result<(NodeId, SocketAddr), String> {
    let (id, addr) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NODE=HOST:PORT, got {s:?}"))?;
    let addr = addr.parse().map_err(|e| format!("bad address {addr:?}: {e}"))?;
    Ok((NodeId::from(id), addr))
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Network(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Network(_) => EXIT_NETWORK,
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Input(e.into())
}

fn network<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Network(e.into())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (CliError::Input(inner) | CliError::Network(inner)) = &e;
            let _ = writeln!(err, "error: {inner:#}");
            e.code()
        }
    }
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    load_scenario(path).map_err(|e| match e {
        ScenarioError::Io { .. } => input(anyhow!(e)),
        _ => input(anyhow!(e).context(format!("loading {}", path.display()))),
    })
}

fn parse_cases(s: &Scenario, tokens: &[String]) -> Result<Vec<Case>, CliError> {
    if tokens.is_empty() {
        let mut cases = vec![Case::local(s)];
        cases.extend(s.node_ids().filter(|id| **id != s.delegator).map(Case::mono));
        cases.push(Case::equal(s, &s.node_ids().cloned().collect::<Vec<_>>()));
        cases.push(Case::rem_all(s));
        return Ok(cases);
    }
    tokens.iter().map(|t| Case::parse(s, t).map_err(input)).collect()
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(input),
        None => out.write_all(text.as_bytes()).map_err(input),
    }
}

fn render_plan(s: &Scenario, plan: &Plan, verbose: bool) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<8} {:>6} {:>14}", "node", "wp", "wt_s");
    let mut ids: Vec<&NodeId> = plan.assignments.keys().collect();
    ids.sort_by_key(|id| s.node_rank(id));
    for id in ids {
        let _ = writeln!(
            t,
            "{:<8} {:>6} {:>14.6}",
            id.as_str(),
            plan.assignments[id],
            plan.estimates[id]
        );
    }
    let _ = writeln!(t, "predicted_makespan_s {:.6}", plan.predicted_makespan);
    let excl: Vec<&str> = plan.excluded.iter().map(NodeId::as_str).collect();
    let _ = writeln!(
        t,
        "excluded {}",
        if excl.is_empty() { "-".into() } else { excl.join(";") }
    );
    if verbose {
        let keys: Vec<&str> = plan.estimates.keys().map(NodeId::as_str).collect();
        let _ = writeln!(t, "trace ({})", keys.join(","));
        for step in &plan.trace {
            let wt: Vec<String> = step.wt_before.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                t,
                "{:>5} {:<6} [{}]",
                step.step_index,
                step.chosen.as_str(),
                wt.join(", ")
            );
        }
    }
    t
}

fn emit_sweep(axis: Axis, points: &[SweepPoint], format: ReportFormat) -> Result<String, CliError> {
    let name = match axis {
        Axis::NumObjects => "num_objects",
        Axis::ObjectBytes => "object_bytes",
    };
    let mut text = String::new();
    for (i, p) in points.iter().enumerate() {
        let body = emit_report(&p.reports, format).map_err(input)?;
        match format {
            ReportFormat::Csv => {
                for (j, line) in body.lines().enumerate() {
                    if j == 0 {
                        if i == 0 {
                            let _ = writeln!(text, "{name},{line}");
                        }
                    } else {
                        let _ = writeln!(text, "{},{line}", p.value);
                    }
                }
            }
            ReportFormat::Table => {
                let _ = writeln!(text, "{name} = {}", p.value);
                text.push_str(&body);
                text.push('\n');
            }
        }
    }
    Ok(text)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Plan {
            scenario,
            candidates,
            verbose,
        } => {
            let s = load(scenario)?;
            let ids: Vec<NodeId> = if candidates.is_empty() {
                s.node_ids().cloned().collect()
            } else {
                candidates.iter().map(|c| NodeId::from(c.as_str())).collect()
            };
            let plan = crate::assign::rem_assign(&s, &ids).map_err(input)?;
            emit(out, None, &render_plan(&s, &plan, *verbose))
        }
        Command::Simulate { scenario, case, uplink } => {
            let s = load(scenario)?;
            let case = Case::parse(&s, case).map_err(input)?;
            let plan = plan_for(&s, &case.policy).map_err(input)?;
            let r = simulate_with(
                &s,
                &plan,
                &SimOptions {
                    uplink: (*uplink).into(),
                    label: case.label.clone(),
                },
            )
            .map_err(input)?;
            let mut t = String::new();
            let _ = writeln!(
                t,
                "{:<8} {:>6} {:>12} {:>12} {:>12} {:>12}",
                "node", "wp", "send_start", "deploy_s", "proc_resp_s", "finish_s"
            );
            for (id, w) in &r.per_worker {
                let _ = writeln!(
                    t,
                    "{:<8} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    id, w.objects, w.send_start, w.deploy_span, w.proc_resp_span, w.finish_at
                );
            }
            let _ = writeln!(
                t,
                "case {} makespan_s {:.6} predicted_s {:.6}",
                r.case_label, r.makespan, plan.predicted_makespan
            );
            emit(out, None, &t)
        }
        Command::Compare {
            scenario,
            cases,
            format,
            uplink,
            out: path,
        } => {
            let s = load(scenario)?;
            let cases = parse_cases(&s, cases)?;
            let reports = compare_with(&s, &cases, (*uplink).into()).map_err(input)?;
            let text = emit_report(&reports, (*format).into()).map_err(input)?;
            emit(out, path.as_deref(), &text)
        }
        Command::Sweep {
            scenario,
            axis,
            values,
            cases,
            format,
            uplink,
            out: path,
        } => {
            let s = load(scenario)?;
            let cases = parse_cases(&s, cases)?;
            let sweep_axis = match axis {
                Axis::NumObjects => SweepAxis::NumObjects,
                Axis::ObjectBytes => SweepAxis::ObjectBytes,
            };
            let points = sweep(&s, sweep_axis, values, &cases, (*uplink).into()).map_err(input)?;
            let text = emit_sweep(*axis, &points, (*format).into())?;
            emit(out, path.as_deref(), &text)
        }
        Command::ServeWorker {
            bind,
            node_id,
            cores,
            busy_ms,
            jitter,
            scenario,
        } => {
            if !(busy_ms.is_finite() && *busy_ms >= 0.0) || !(0.0..=1.0).contains(jitter) || *cores == 0 {
                return Err(input(anyhow!(
                    "--busy-ms must be >= 0, --jitter in [0, 1], --cores >= 1"
                )));
            }
            let profile = match scenario {
                Some(p) => {
                    let s = load(p)?;
                    Some(
                        s.profile(&NodeId::from(node_id.as_str()))
                            .cloned()
                            .ok_or_else(|| input(anyhow!("node {node_id} not in {}", p.display())))?,
                    )
                }
                None => None,
            };
            let config = WorkerConfig {
                bind: *bind,
                node_id: node_id.clone(),
                cores: *cores,
                executor: ExecutorConfig {
                    busy_per_object: Duration::from_secs_f64(busy_ms / 1000.0),
                    jitter: *jitter,
                    seed: cli.seed,
                },
                profile,
                ram_used: 0,
                connect_timeout: Duration::from_secs(5),
            };
            let handle = epnet::serve_worker(config).map_err(network)?;
            log::info!("worker {node_id} listening on {}", handle.addr());
            let _ = writeln!(out, "listening {}", handle.addr());
            let _ = out.flush();
            handle.join();
            Ok(())
        }
        Command::Deploy {
            scenario,
            case,
            workers,
            receiver_bind,
            object_bytes,
            mdl_bytes,
            wait_secs,
        } => {
            let s = load(scenario)?;
            let case = Case::parse(&s, case).map_err(input)?;
            let plan = plan_for(&s, &case.policy).map_err(input)?;
            let addrs: BTreeMap<NodeId, SocketAddr> = workers.iter().cloned().collect();
            for (id, _) in plan.active() {
                if !addrs.contains_key(id) {
                    return Err(input(anyhow!("no --worker address for {id}")));
                }
            }
            let source = PackageSource::synthetic(
                s.request.byte_alg as usize,
                mdl_bytes.unwrap_or(s.request.byte_mdl as usize),
                object_bytes.unwrap_or(s.request.byte_d as usize),
                s.request.num_objects as usize,
                cli.seed,
            );
            let sink = OutputSink::bind(*receiver_bind).map_err(network)?;
            let log =
                epnet::deploy(&plan, &source, &addrs, sink.addr(), &DeployOptions::from_env()).map_err(network)?;
            let acked: u32 = log
                .entries
                .iter()
                .filter(|e| e.ack_at.is_some())
                .map(|e| e.objects)
                .sum();
            let received = sink.wait_for(acked as usize, Duration::from_secs_f64(wait_secs.max(0.0)));
            let mut verified = 0usize;
            for r in &received {
                for (k, o) in r.batch.outputs.iter().enumerate() {
                    let idx = r.batch.first_object as usize + k;
                    if source.objects.get(idx).map(|i| epnet::transform(i)) == Some(o.clone()) {
                        verified += 1;
                    }
                }
            }
            let mut t = String::new();
            let _ = writeln!(
                t,
                "{:<8} {:>6} {:>8} {:>10} {:>10} {:>10}  status",
                "node", "first", "objects", "pack_end", "send_end", "ack_at"
            );
            let opt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.4}"));
            for e in &log.entries {
                let status = match &e.status {
                    epnet::DeliveryStatus::Acked => "acked".to_owned(),
                    epnet::DeliveryStatus::Failed(r) => format!("failed: {r}"),
                };
                let _ = writeln!(
                    t,
                    "{:<8} {:>6} {:>8} {:>10.4} {:>10} {:>10}  {status}",
                    e.node_id,
                    e.first_object,
                    e.objects,
                    e.pack_end,
                    opt(e.send_end),
                    opt(e.ack_at)
                );
            }
            let _ = writeln!(t, "outputs {verified}/{} verified", s.request.num_objects);
            emit(out, None, &t)?;
            if log.failed().next().is_some() || verified != s.request.num_objects as usize {
                bail_network("not every package was delivered and answered")?;
            }
            Ok(())
        }
        Command::Calibrate {
            worker,
            alg_bytes,
            mdl_bytes,
            object_bytes,
            trials,
            jitter_bound,
            timeout_secs,
        } => {
            let src = PackageSource::synthetic(*alg_bytes, *mdl_bytes, *object_bytes, 1, cli.seed);
            let sample = SamplePackage {
                alg: src.alg,
                mdl: src.mdl,
                object: src.objects.into_iter().next().unwrap(),
            };
            let timeout = Duration::from_secs_f64(timeout_secs.max(0.001));
            let mut runs = Vec::new();
            for _ in 0..(*trials).max(1) {
                runs.push(epnet::calibrate_local(*worker, &sample, timeout).map_err(network)?);
            }
            for pair in runs.windows(2) {
                for w in epnet::jitter_warnings(&pair[0], &pair[1], *jitter_bound) {
                    log::warn!("calibration jitter: {w}");
                }
            }
            let last = runs.pop().expect("at least one trial");
            #[derive(serde::Serialize)]
            struct Doc {
                calibration: crate::model::Calibration,
            }
            let text = toml::to_string(&Doc { calibration: last }).map_err(input)?;
            emit(out, None, &text)
        }
    }
}

fn bail_network(msg: &str) -> Result<(), CliError> {
    Err(network(anyhow!(msg.to_owned())))
}
