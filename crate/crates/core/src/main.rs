use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use qkdsim::controller::{router, serve, Controller, TcpSouthbound};
use qkdsim::scenario::{self, OutputOptions, RunConfig, Scenario, Thresholds};
use qkdsim::switch::{run_agent, SwitchAgent};
use qkdsim::{load_topology, Clock, WallClock};

/// Exit status when every path has failed and exhaustion was not allowed.
const EXIT_EXHAUSTED: u8 = 3;
/// Exit status when a summary check fails.
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "qkdsim", version, about = "SDN-controlled QKD network under optical DDoS attack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario under the simulated clock.
    Run {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Leave the wall-clock line out of summary.txt.
        #[arg(long)]
        deterministic: bool,
        /// Exit 0 even if every path fails.
        #[arg(long)]
        allow_exhaustion: bool,
        /// Write the monitor event log here instead of OUT/qpm_log.jsonl.
        #[arg(long)]
        qpm_log: Option<PathBuf>,
    },
    /// Evaluate one link's model over a grid of attack powers.
    Sweep {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        link: String,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a finished run and check it against thresholds.
    Summarize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        /// Monitor event log, if not in OUT/qpm_log.jsonl.
        #[arg(long)]
        qpm_log: Option<PathBuf>,
    },
    /// Serve the controller in real time: HTTP northbound, TCP southbound.
    Controller {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        http: String,
        #[arg(long, default_value = "127.0.0.1:6653")]
        switches: String,
        /// Seconds to wait for each switch reply.
        #[arg(long, default_value_t = 5.0)]
        reply_timeout: f64,
    },
    /// Run one switch agent that dials the controller.
    Agent {
        #[arg(long)]
        switch: String,
        #[arg(long)]
        ports: u32,
        #[arg(long, default_value = "127.0.0.1:6653")]
        controller: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qkdsim: {e}");
            ExitCode::FAILURE
        }
    }
}

type BoxError = Box<dyn std::error::Error>;

fn dispatch(command: Command) -> Result<ExitCode, BoxError> {
    match command {
        Command::Run {
            topology,
            scenario,
            seed,
            out,
            deterministic,
            allow_exhaustion,
            qpm_log,
        } => {
            let topo = Arc::new(load_topology(&topology)?);
            let scenario = Scenario::load(&scenario, &topo)?;
            let result = scenario::simulate(topo, &scenario, &RunConfig::with_seed(seed))?;
            scenario::write_outputs(&out, &result, &OutputOptions { deterministic, qpm_log })?;
            println!(
                "final path: {}; episodes: {}; polls: {}",
                result.final_path.as_ref().map_or("none", |p| p.as_str()),
                result.timing.len(),
                result.metrics.len()
            );
            if result.exhausted {
                eprintln!("qkdsim: every path failed; alarm raised");
                if !allow_exhaustion {
                    return Ok(ExitCode::from(EXIT_EXHAUSTED));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            topology,
            link,
            from,
            to,
            step,
            out,
        } => {
            let topo = load_topology(&topology)?;
            let rows = scenario::sweep_attack_power(&topo, &link, from, to, step)?;
            scenario::write_sweep(&out, &rows)?;
            println!("{} points written to {}", rows.len(), out.join(scenario::SWEEP_CSV).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize {
            out,
            thresholds,
            qpm_log,
        } => {
            let th = Thresholds::load(&thresholds)?;
            let summary = scenario::summarize(&out, qpm_log.as_deref(), Some(&th))?;
            let text = summary.render();
            std::fs::write(out.join(scenario::SUMMARY_TXT), &text)?;
            print!("{text}");
            Ok(if summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            })
        }
        Command::Controller {
            topology,
            http,
            switches,
            reply_timeout,
        } => {
            let topo = Arc::new(load_topology(&topology)?);
            let listener = TcpListener::bind(&switches)?;
            let ids: Vec<_> = topo.switches.iter().map(|s| s.id.clone()).collect();
            eprintln!("waiting for {} switches on {switches}", ids.len());
            let southbound = TcpSouthbound::accept(&listener, &ids, Duration::from_secs_f64(reply_timeout))?;
            let clock: Arc<dyn Clock> = Arc::new(WallClock::new());
            let controller = Controller::new(topo, southbound, clock);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let http = tokio::net::TcpListener::bind(&http).await?;
                eprintln!("northbound API on http://{}", http.local_addr()?);
                serve(http, router(controller)).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Agent {
            switch,
            ports,
            controller,
        } => {
            let agent = SwitchAgent::new(switch.into(), ports);
            run_agent(&agent, controller.as_str())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
