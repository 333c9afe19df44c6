use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde_json::Value;

use sfc_core::erp::parse_dispatch_xml;
use sfc_core::runner::{run_scenario, RunError, RunOptions};
use sfc_core::service::{Service, ServiceConfig};
use sfc_core::sim::{load_scenario_file, SimHost, SimWorld};

/// Exit statuses; every failure path is non-zero and distinct.
mod code {
    pub const OK: u8 = 0;
    pub const MISMATCH: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const BIND: u8 = 3;
    pub const UNKNOWN_ORDER: u8 = 4;
    pub const UNREACHABLE: u8 = 5;
    pub const INTERNAL: u8 = 6;
}

#[derive(Parser)]
#[command(name = "sfc", version, about = "RFID shop floor control: service, scenario runner and status client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine, reader controllers and HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Scripted end-to-end runs.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Print the status of one order from a running service.
    OrderStatus {
        order: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        api: String,
    },
    /// Simulated readers.
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Run a scenario to completion on a logical clock and judge it.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    dispatch: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// noise seed, replacing the scenario's
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    dup: Option<f64>,
    /// exit-gate data point, when it cannot be inferred from the script
    #[arg(long)]
    exit_data_point: Option<String>,
    #[arg(long, default_value_t = sfc_core::engine::DEFAULT_PRESENCE_TIMEOUT_S)]
    presence_timeout_s: u64,
    #[arg(long, default_value_t = sfc_core::engine::DEFAULT_DELAY_GRACE_S)]
    delay_grace_s: u64,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Serve one LLRP reader per scenario data point, paced in real time.
    Serve {
        scenario: PathBuf,
        /// scenario seconds per wall-clock second
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFC_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let status = match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Scenario(ScenarioCmd::Run(args)) => scenario_run(args),
        Command::OrderStatus { order, api } => order_status(&order, &api),
        Command::Sim(SimCmd::Serve { scenario, speed }) => sim_serve(&scenario, speed),
    };
    ExitCode::from(status)
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime")
}

fn serve(config: &Path) -> u8 {
    let cfg = match ServiceConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("sfc serve: {e}");
            return code::CONFIG;
        }
    };
    runtime().block_on(async {
        let service = match Service::start(cfg).await {
            Ok(s) => s,
            Err(e) => {
                eprintln!("sfc serve: {e}");
                return e.exit_code() as u8;
            }
        };
        info!("serving on http://{}/ (Ctrl-C to stop)", service.api_addr());
        let _ = tokio::signal::ctrl_c().await;
        info!("shutting down");
        service.shutdown();
        code::OK
    })
}

fn scenario_run(a: RunArgs) -> u8 {
    let scenario = match load_scenario_file(&a.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("sfc scenario run: {}: {e}", a.scenario.display());
            return code::CONFIG;
        }
    };
    let dispatch = match std::fs::read(&a.dispatch).map_err(|e| e.to_string()).and_then(|b| {
        parse_dispatch_xml(&b).map_err(|e| e.to_string())
    }) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("sfc scenario run: {}: {e}", a.dispatch.display());
            return code::CONFIG;
        }
    };
    let opts = RunOptions {
        seed: a.seed,
        drop_probability: a.drop,
        duplicate_probability: a.dup,
        exit_data_point_id: a.exit_data_point,
        presence_timeout_s: a.presence_timeout_s,
        delay_grace_s: a.delay_grace_s,
    };
    let outcome = match run_scenario(scenario, dispatch, &opts) {
        Ok(o) => o,
        Err(e @ (RunError::Sim(_) | RunError::Setup(_))) => {
            eprintln!("sfc scenario run: {e}");
            return code::CONFIG;
        }
        Err(e) => {
            eprintln!("sfc scenario run: {e}");
            return code::INTERNAL;
        }
    };
    let report = &outcome.report;
    let mut text = serde_json::to_string_pretty(report).expect("report json");
    text.push('\n');
    if let Err(e) = std::fs::write(&a.report, text) {
        eprintln!("sfc scenario run: {}: {e}", a.report.display());
        return code::INTERNAL;
    }
    println!(
        "{}: {} transitions, {} alerts, {} finished goods ({:?} match)",
        report.verdict,
        report.transitions.len(),
        report.alerts.len(),
        report.finished_goods.len(),
        report.match_rule
    );
    match &report.first_divergence {
        None => code::OK,
        Some(d) => {
            println!("first divergence in {} (ticket {:?}, index {})", d.section, d.ticket_id, d.index);
            println!("  expected: {}", d.expected.as_deref().unwrap_or("(nothing)"));
            println!("  actual:   {}", d.actual.as_deref().unwrap_or("(nothing)"));
            code::MISMATCH
        }
    }
}

fn order_status(order: &str, api: &str) -> u8 {
    let seg = utf8_percent_encode(order, NON_ALPHANUMERIC);
    let url = format!("{}/api/orders/{seg}/status", api.trim_end_matches('/'));
    let client = match reqwest::blocking::Client::builder().timeout(Duration::from_secs(10)).build() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("sfc order-status: {e}");
            return code::INTERNAL;
        }
    };
    let resp = match client.get(&url).send() {
        Ok(r) => r,
        Err(e) if e.is_connect() || e.is_timeout() => {
            eprintln!("sfc order-status: service unreachable at {api}: {e}");
            return code::UNREACHABLE;
        }
        Err(e) => {
            eprintln!("sfc order-status: {e}");
            return code::UNREACHABLE;
        }
    };
    let status = resp.status().as_u16();
    let body: Value = match resp.text().map_err(|e| e.to_string()).and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string())) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("sfc order-status: unreadable response: {e}");
            return code::INTERNAL;
        }
    };
    match status {
        200 => {
            print!("{}", render_order_status(&body));
            code::OK
        }
        404 => {
            eprintln!("sfc order-status: unknown order {order}");
            code::UNKNOWN_ORDER
        }
        _ => {
            eprintln!("sfc order-status: HTTP {status}: {}", body["error"].as_str().unwrap_or(""));
            code::INTERNAL
        }
    }
}

/// Header plus one line per ticket.
fn render_order_status(v: &Value) -> String {
    let s = |v: &Value| v.as_str().unwrap_or("-").to_string();
    let mut out = format!(
        "{} {} qty {} route {}\n",
        s(&v["order"]),
        s(&v["product"]),
        v["quantity"].as_u64().unwrap_or(0),
        s(&v["route"])
    );
    for t in v["tickets"].as_array().into_iter().flatten() {
        let steps = t["steps"].as_array().map_or(0, Vec::len);
        let alerts: Vec<String> = t["alerts"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|a| format!("{}({})", s(&a["kind"]), a["seq"].as_u64().unwrap_or(0)))
            .collect();
        out.push_str(&format!(
            "{}  step {}/{} {}  {}{}{}\n",
            s(&t["ticket"]),
            t["current_seq"].as_u64().unwrap_or(0),
            steps,
            s(&t["current_work_center"]),
            s(&t["status"]),
            if t["delayed"].as_bool() == Some(true) { "  DELAYED" } else { "" },
            if alerts.is_empty() { String::new() } else { format!("  alerts: {}", alerts.join(", ")) },
        ));
    }
    out
}

fn sim_serve(path: &Path, speed: f64) -> u8 {
    if !(speed > 0.0 && speed.is_finite()) {
        eprintln!("sfc sim serve: --speed must be positive");
        return code::CONFIG;
    }
    let scenario = match load_scenario_file(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("sfc sim serve: {}: {e}", path.display());
            return code::CONFIG;
        }
    };
    let cycle = Duration::from_micros(scenario.clock.cycle_us).div_f64(speed);
    let times: Vec<u64> = scenario.cycle_times().collect();
    runtime().block_on(async move {
        let mut host = match SimHost::start(SimWorld::new(scenario), None).await {
            Ok(h) => h,
            Err(e) => {
                eprintln!("sfc sim serve: {e}");
                return code::BIND;
            }
        };
        for (dp, addr) in host.addrs() {
            info!("reader {dp} listening on {addr}");
        }
        let mut every = tokio::time::interval(cycle);
        for now in times {
            every.tick().await;
            if let Err(e) = host.advance(now) {
                error!("simulation stopped: {e}");
                return code::INTERNAL;
            }
        }
        info!("script finished; readers stay up until Ctrl-C");
        let _ = tokio::signal::ctrl_c().await;
        code::OK
    })
}
