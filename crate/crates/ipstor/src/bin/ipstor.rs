//! Command-line front end: benchmarks, a standalone target, and one-shot
//! initiator operations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipstor::bench::{
    compare_dirs, render_report, run_experiment, run_modes, write_comparison, ExperimentConfig,
    Transport,
};
use ipstor::channel::tcp::{connect, TcpChannelConfig};
use ipstor::channel::{CryptoCostModel, LinkParams, SecurityMode, DEFAULT_PSK};
use ipstor::error::{Error, Result};
use ipstor::initiator::{Initiator, InitiatorConfig};
use ipstor::pdu::cdb::BLOCK_SIZE;
use ipstor::target::{serve, TargetConfig, TargetEngine};
use ipstor::trace::{rtt_series, Trace};

#[derive(Parser)]
#[command(
    name = "ipstor",
    version,
    about = "Miniature IP-storage stack with pluggable transport security"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run or compare benchmarks.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Run the storage target.
    Target {
        #[command(subcommand)]
        cmd: TargetCmd,
    },
    /// One-shot initiator operations against a running target.
    Initiator {
        #[command(subcommand)]
        cmd: InitCmd,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run the workload and write per-mode reports.
    Run(RunArgs),
    /// Compare previously written run directories.
    Compare {
        /// Run directories, each containing a report.json.
        dirs: Vec<PathBuf>,
        /// Also write comparison.txt/.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Security mode: plain, ssl, ipsec, or all.
    #[arg(long, default_value = "all")]
    mode: String,
    /// Transport: mem (deterministic simulation) or tcp (loopback).
    #[arg(long, default_value = "mem")]
    transport: String,
    /// Workload size in MiB.
    #[arg(long, default_value_t = 16)]
    size_mb: u64,
    /// Bytes per write/read command; a multiple of 512.
    #[arg(long, default_value_t = 65536)]
    block_size: usize,
    /// Pings before the data phase.
    #[arg(long, default_value_t = 100)]
    pings: u32,
    #[arg(long, default_value_t = 1500)]
    mtu: usize,
    /// One-way link delay in milliseconds (mem transport).
    #[arg(long, default_value_t = 1.0)]
    delay_ms: f64,
    /// Link bandwidth in Mbit/s, or "inf" for no serialization delay
    /// (mem transport).
    #[arg(long, default_value = "1000")]
    bandwidth_mbps: String,
    /// Override the per-record/per-datagram crypto cost in microseconds
    /// (crypto modes only).
    #[arg(long)]
    crypto_per_packet_us: Option<f64>,
    /// Override the per-byte crypto cost in nanoseconds (crypto modes only).
    #[arg(long)]
    crypto_per_byte_ns: Option<u64>,
    /// Throughput bucket width in milliseconds.
    #[arg(long, default_value_t = 100)]
    bucket_ms: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; one subdirectory per mode.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[arg(long)]
    chap_user: Option<String>,
    #[arg(long)]
    chap_secret: Option<String>,
}

#[derive(Subcommand)]
enum TargetCmd {
    /// Serve the target described by a config file until interrupted.
    Serve { config: PathBuf },
}

#[derive(Args, Clone)]
struct ConnArgs {
    /// Target address, host:port.
    #[arg(long, default_value = "127.0.0.1:3260")]
    addr: String,
    /// Security mode: plain, ssl, or ipsec.
    #[arg(long, default_value = "plain")]
    mode: String,
    #[arg(long, default_value = "iqn.2025-01.ipstor:disk0")]
    target_name: String,
    #[arg(long)]
    chap_user: Option<String>,
    #[arg(long)]
    chap_secret: Option<String>,
    /// Pre-shared key, 64 hex digits; defaults to the development key.
    #[arg(long)]
    psk: Option<String>,
    #[arg(long, default_value_t = 1500)]
    mtu: usize,
}

#[derive(Subcommand)]
enum InitCmd {
    /// Log in and ping.
    Ping {
        #[command(flatten)]
        conn: ConnArgs,
        #[arg(long, default_value_t = 1)]
        count: u32,
    },
    /// Write a file's contents to consecutive blocks.
    Write {
        #[command(flatten)]
        conn: ConnArgs,
        #[arg(long, default_value_t = 0)]
        lun: u64,
        #[arg(long, default_value_t = 0)]
        lba: u32,
        /// Input file; its size must be a multiple of 512.
        #[arg(long)]
        input: PathBuf,
    },
    /// Read consecutive blocks into a file.
    Read {
        #[command(flatten)]
        conn: ConnArgs,
        #[arg(long, default_value_t = 0)]
        lun: u64,
        #[arg(long, default_value_t = 0)]
        lba: u32,
        #[arg(long)]
        blocks: u16,
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_bandwidth(s: &str) -> Result<Option<f64>> {
    if s == "inf" {
        return Ok(None);
    }
    let mbps: f64 = s
        .parse()
        .map_err(|_| Error::invalid(format!("bad bandwidth {s:?} (Mbit/s or \"inf\")")))?;
    if mbps <= 0.0 || !mbps.is_finite() {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    Ok(Some(mbps * 1e6))
}

fn chap_pair(user: Option<String>, secret: Option<String>) -> Result<Option<(String, String)>> {
    match (user, secret) {
        (Some(u), Some(s)) => Ok(Some((u, s))),
        (None, None) => Ok(None),
        _ => Err(Error::Startup(
            "--chap-user and --chap-secret must be given together".into(),
        )),
    }
}

fn run_bench(args: RunArgs) -> Result<()> {
    let modes: Vec<SecurityMode> = if args.mode == "all" {
        SecurityMode::all().to_vec()
    } else {
        vec![SecurityMode::from_token(&args.mode)?]
    };
    let cost_override = if args.crypto_per_packet_us.is_some() || args.crypto_per_byte_ns.is_some()
    {
        Some(CryptoCostModel {
            per_unit_ns: (args.crypto_per_packet_us.unwrap_or(10.0) * 1000.0).round() as u64,
            per_byte_ns: args.crypto_per_byte_ns.unwrap_or(5),
        })
    } else {
        None
    };
    let cfg = ExperimentConfig {
        transport: Transport::from_token(&args.transport)?,
        size_bytes: args.size_mb * 1024 * 1024,
        block_size: args.block_size,
        pings: args.pings,
        link: LinkParams {
            one_way_delay_ns: (args.delay_ms * 1e6).round() as u64,
            bandwidth_bps: parse_bandwidth(&args.bandwidth_mbps)?,
            mtu: args.mtu,
        },
        cost_override,
        bucket_ns: args.bucket_ms * 1_000_000,
        seed: args.seed,
        chap: chap_pair(args.chap_user, args.chap_secret)?,
    };
    if modes.len() == 1 {
        let (report, records) = run_experiment(modes[0], &cfg)?;
        let dir = args.out.join(modes[0].token());
        render_report(&dir, &report, &records)?;
        println!("wrote {}", dir.display());
        println!(
            "{}: wire {} B, mean rtt {:.6} s, goodput {:.0} bit/s",
            report.summary.mode,
            report.summary.totals.wire_bytes,
            report.summary.totals.mean_rtt_s,
            report.summary.totals.mean_goodput_bps
        );
    } else {
        run_modes(&modes, &cfg, &args.out)?;
        println!("wrote {}", args.out.display());
        let text = std::fs::read_to_string(args.out.join("comparison.txt"))?;
        print!("{text}");
    }
    Ok(())
}

fn run_compare(dirs: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    if dirs.len() < 2 {
        return Err(Error::Startup("compare needs at least two run directories".into()));
    }
    let cmp = compare_dirs(&dirs)?;
    print!("{}", cmp.text);
    if let Some(out) = out {
        write_comparison(&out, &cmp)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_target(config_path: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        Error::Startup(format!("cannot read {}: {e}", config_path.display()))
    })?;
    let cfg = TargetConfig::parse(&text)?;
    if cfg.luns.is_empty() {
        return Err(Error::Startup("config defines no LUNs".into()));
    }
    let listen = cfg.listen.clone();
    let engine = TargetEngine::new(&cfg)?;
    let handle = serve(engine, &listen)?;
    println!("ipstor target listening on {}", handle.local_addr);
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn connect_initiator(conn: &ConnArgs, trace: Trace) -> Result<Initiator> {
    let psk = match &conn.psk {
        None => DEFAULT_PSK,
        Some(v) => hex::decode(v)
            .map_err(|_| Error::Startup("psk must be hex".into()))?
            .try_into()
            .map_err(|_| Error::Startup("psk must be 64 hex digits (32 bytes)".into()))?,
    };
    let tcfg = TcpChannelConfig {
        mode: SecurityMode::from_token(&conn.mode)?,
        psk,
        mtu: conn.mtu,
        rng_seed: rand::random(),
    };
    let ch = connect(&conn.addr, tcfg, trace.clone())?;
    let icfg = InitiatorConfig {
        target_name: conn.target_name.clone(),
        chap: chap_pair(conn.chap_user.clone(), conn.chap_secret.clone())?,
        ..InitiatorConfig::default()
    };
    Ok(Initiator::new(Box::new(ch), icfg, trace))
}

fn run_initiator(cmd: InitCmd) -> Result<()> {
    match cmd {
        InitCmd::Ping { conn, count } => {
            let trace = Trace::new();
            let mut init = connect_initiator(&conn, trace.clone())?;
            init.login(false)?;
            for _ in 0..count {
                init.nop_ping()?;
            }
            init.logout()?;
            let rtt = rtt_series(&trace.snapshot())?;
            for s in rtt.samples.iter().filter(|s| s.kind == "nop") {
                println!("ping tag {}: {:.6} s", s.task_tag, s.rtt_s);
            }
            println!("{count} pings, mean {:.6} s", rtt.mean_s());
            Ok(())
        }
        InitCmd::Write {
            conn,
            lun,
            lba,
            input,
        } => {
            let data = std::fs::read(&input)
                .map_err(|e| Error::Startup(format!("cannot read {}: {e}", input.display())))?;
            let mut init = connect_initiator(&conn, Trace::new())?;
            init.login(false)?;
            init.write(lun, lba, &data)?;
            init.logout()?;
            println!(
                "wrote {} blocks at lba {lba}",
                data.len() / BLOCK_SIZE
            );
            Ok(())
        }
        InitCmd::Read {
            conn,
            lun,
            lba,
            blocks,
            output,
        } => {
            let mut init = connect_initiator(&conn, Trace::new())?;
            init.login(false)?;
            let data = init.read(lun, lba, blocks)?;
            init.logout()?;
            std::fs::write(&output, &data)?;
            println!("read {blocks} blocks at lba {lba} into {}", output.display());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Bench { cmd } => match cmd {
            BenchCmd::Run(args) => run_bench(args),
            BenchCmd::Compare { dirs, out } => run_compare(dirs, out),
        },
        Cmd::Target { cmd } => match cmd {
            TargetCmd::Serve { config } => run_target(&config),
        },
        Cmd::Initiator { cmd } => run_initiator(cmd),
    }
}

fn main() -> ExitCode {
    // Usage errors exit with clap's own status (2); operational failures
    // exit 1.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
