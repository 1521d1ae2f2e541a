//! Experiment orchestration: runs a fixed storage workload under each
//! security mode, captures the trace, and renders reports and comparisons.
//!
//! An experiment is two connections, mirroring real initiator behavior: a
//! discovery session first (login, SendTargets, logout), then a data
//! session (login, pings, a chunked write of the whole workload, a chunked
//! read-back with verification, logout). On the simulated transport the
//! second connection continues the virtual clock where the first stopped,
//! so one experiment is one continuous timeline.

pub mod chart;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::mem::{mem_channel_to_engine, MemConfig};
use crate::channel::tcp::{connect, TcpChannelConfig};
use crate::channel::{
    CryptoCostModel, LinkParams, SecurityMode, MEM_INITIATOR_BASE_PORT,
};
use crate::error::{Error, Result};
use crate::initiator::{Initiator, InitiatorConfig};
use crate::pdu::cdb::BLOCK_SIZE;
use crate::target::{serve, LunConfig, TargetConfig, TargetEngine};
use crate::trace::{
    compare_runs, export_csv, hierarchy_text, protocol_hierarchy, rtt_csv, rtt_series,
    throughput_csv, throughput_series, totals, Comparison, RunSummary, Trace, TraceRecord,
};

/// Which transport carries the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Mem,
    Tcp,
}

impl Transport {
    pub fn token(self) -> &'static str {
        match self {
            Transport::Mem => "mem",
            Transport::Tcp => "tcp",
        }
    }

    pub fn from_token(s: &str) -> Result<Transport> {
        match s {
            "mem" => Ok(Transport::Mem),
            "tcp" => Ok(Transport::Tcp),
            other => Err(Error::invalid(format!(
                "unknown transport {other:?} (expected mem or tcp)"
            ))),
        }
    }
}

/// Everything a single experiment needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub transport: Transport,
    pub size_bytes: u64,
    pub block_size: usize,
    pub pings: u32,
    pub link: LinkParams,
    /// When set, replaces the per-mode default crypto costs (plain stays
    /// free either way).
    pub cost_override: Option<CryptoCostModel>,
    pub bucket_ns: u64,
    pub seed: u64,
    pub chap: Option<(String, String)>,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            transport: Transport::Mem,
            size_bytes: 16 * 1024 * 1024,
            block_size: 64 * 1024,
            pings: 100,
            link: LinkParams::default(),
            cost_override: None,
            bucket_ns: 100_000_000,
            seed: 42,
            chap: None,
        }
    }
}

/// Modeled crypto cost for `mode`: nothing for plain, a cheap per-record
/// charge for the record layer, a five-fold-larger per-datagram charge for
/// the packet layer, both with the same per-byte term.
pub fn default_cost(mode: SecurityMode) -> CryptoCostModel {
    match mode {
        SecurityMode::Plain => CryptoCostModel::default(),
        SecurityMode::RecordLayer => CryptoCostModel {
            per_unit_ns: 10_000,
            per_byte_ns: 5,
        },
        SecurityMode::PacketLayer => CryptoCostModel {
            per_unit_ns: 50_000,
            per_byte_ns: 5,
        },
    }
}

fn cost_for(mode: SecurityMode, cfg: &ExperimentConfig) -> CryptoCostModel {
    if mode == SecurityMode::Plain {
        return CryptoCostModel::default();
    }
    cfg.cost_override.unwrap_or_else(|| default_cost(mode))
}

/// Pre-shared key for an experiment: the `IPSTOR_PSK` environment variable
/// (64 hex digits) when set, otherwise derived from the seed so reruns
/// agree without configuration.
pub fn resolve_psk(seed: u64) -> Result<[u8; 32]> {
    if let Ok(v) = std::env::var("IPSTOR_PSK") {
        let bytes = hex::decode(v.trim())
            .map_err(|_| Error::Startup("IPSTOR_PSK must be hex".to_string()))?;
        return bytes
            .try_into()
            .map_err(|_| Error::Startup("IPSTOR_PSK must be 64 hex digits (32 bytes)".into()));
    }
    let mut h = Sha256::new();
    h.update(b"ipstor psk");
    h.update(seed.to_le_bytes());
    Ok(h.finalize().into())
}

/// One experiment's full result. Serialized as `report.json`; contains no
/// timestamps or host state, so identical simulated runs serialize
/// identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub seed: u64,
    pub block_size: u64,
    pub crypto_per_unit_ns: u64,
    pub crypto_per_byte_ns: u64,
}

fn workload_bytes(seed: u64, len: u64) -> Vec<u8> {
    let mut data = vec![0u8; len as usize];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut data);
    data
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.block_size == 0 || !cfg.block_size.is_multiple_of(BLOCK_SIZE) {
        return Err(Error::Startup(format!(
            "block size {} is not a nonzero multiple of {BLOCK_SIZE}",
            cfg.block_size
        )));
    }
    if !cfg.size_bytes.is_multiple_of(BLOCK_SIZE as u64) {
        return Err(Error::Startup(format!(
            "workload size {} is not a multiple of {BLOCK_SIZE}",
            cfg.size_bytes
        )));
    }
    if cfg.block_size > u16::MAX as usize * BLOCK_SIZE {
        return Err(Error::Startup("block size exceeds one command".to_string()));
    }
    if cfg.bucket_ns == 0 {
        return Err(Error::Startup("bucket width must be positive".to_string()));
    }
    Ok(())
}

fn target_engine(cfg: &ExperimentConfig, psk: [u8; 32], listen: &str) -> Result<Arc<TargetEngine>> {
    let blocks = (cfg.size_bytes / BLOCK_SIZE as u64).max(8);
    let tcfg = TargetConfig {
        listen: listen.to_string(),
        luns: vec![LunConfig {
            blocks,
            file: None,
        }],
        chap: cfg.chap.clone(),
        psk: Some(psk),
        ..TargetConfig::default()
    };
    TargetEngine::new(&tcfg)
}

fn initiator_config(cfg: &ExperimentConfig) -> InitiatorConfig {
    InitiatorConfig {
        chap: cfg.chap.clone(),
        ..InitiatorConfig::default()
    }
}

/// Drives the whole workload over an already-connected data session.
fn data_session(
    init: &mut Initiator,
    workload: &[u8],
    block_size: usize,
    pings: u32,
) -> Result<()> {
    init.login(false)?;
    for _ in 0..pings {
        init.nop_ping()?;
    }
    for (i, chunk) in workload.chunks(block_size).enumerate() {
        let lba = (i * block_size / BLOCK_SIZE) as u32;
        init.write(0, lba, chunk)?;
    }
    for (i, chunk) in workload.chunks(block_size).enumerate() {
        let lba = (i * block_size / BLOCK_SIZE) as u32;
        let blocks = (chunk.len() / BLOCK_SIZE) as u16;
        let back = init.read(0, lba, blocks)?;
        if back != chunk {
            return Err(Error::protocol(format!(
                "read-back mismatch at block {lba}"
            )));
        }
    }
    init.logout()
}

/// Runs one experiment under `mode` and returns the report plus the full
/// capture (the capture is needed to render trace.csv).
pub fn run_experiment(
    mode: SecurityMode,
    cfg: &ExperimentConfig,
) -> Result<(RunReport, Vec<TraceRecord>)> {
    validate(cfg)?;
    let psk = resolve_psk(cfg.seed)?;
    let cost = cost_for(mode, cfg);
    let workload = workload_bytes(cfg.seed, cfg.size_bytes);
    let sha = hex::encode(Sha256::digest(&workload));
    let trace = Trace::new();

    match cfg.transport {
        Transport::Mem => {
            let engine = target_engine(cfg, psk, "192.168.2.1:3260")?;
            // Discovery connection.
            let mcfg = MemConfig {
                mode,
                link: cfg.link,
                cost,
                psk,
                seed: cfg.seed,
                start_ns: 0,
                client_port: MEM_INITIATOR_BASE_PORT,
            };
            let ch = mem_channel_to_engine(mcfg, engine.clone(), trace.clone())?;
            let net = ch.net();
            let mut init = Initiator::new(Box::new(ch), initiator_config(cfg), trace.clone());
            init.login(true)?;
            init.discover()?;
            init.logout()?;
            let resume = net.borrow().clock_ns();

            // Data connection continues the clock.
            let mcfg = MemConfig {
                start_ns: resume,
                client_port: MEM_INITIATOR_BASE_PORT + 1,
                ..mcfg
            };
            let ch = mem_channel_to_engine(mcfg, engine, trace.clone())?;
            let mut init = Initiator::new(Box::new(ch), initiator_config(cfg), trace.clone());
            data_session(&mut init, &workload, cfg.block_size, cfg.pings)?;
        }
        Transport::Tcp => {
            let engine = target_engine(cfg, psk, "127.0.0.1:0")?;
            let handle = serve(engine, "127.0.0.1:0")?;
            let addr = handle.local_addr.to_string();
            let tcfg = TcpChannelConfig {
                mode,
                psk,
                mtu: cfg.link.mtu,
                rng_seed: cfg.seed,
            };
            let ch = connect(&addr, tcfg, trace.clone())?;
            let mut init = Initiator::new(Box::new(ch), initiator_config(cfg), trace.clone());
            init.login(true)?;
            init.discover()?;
            init.logout()?;

            let ch = connect(&addr, tcfg, trace.clone())?;
            let mut init = Initiator::new(Box::new(ch), initiator_config(cfg), trace.clone());
            data_session(&mut init, &workload, cfg.block_size, cfg.pings)?;
        }
    }

    let records = trace.snapshot();
    let rtt = rtt_series(&records)?;
    let throughput = throughput_series(&records, cfg.bucket_ns)?;
    let hierarchy = protocol_hierarchy(&records);
    let totals = totals(&records, &rtt);
    let report = RunReport {
        summary: RunSummary {
            mode: mode.token().to_string(),
            transport: cfg.transport.token().to_string(),
            workload_bytes: cfg.size_bytes,
            workload_sha256: sha,
            pings: cfg.pings as u64,
            link: cfg.link.echo(),
            totals,
            rtt,
            throughput,
            hierarchy,
        },
        seed: cfg.seed,
        block_size: cfg.block_size as u64,
        crypto_per_unit_ns: cost.per_unit_ns,
        crypto_per_byte_ns: cost.per_byte_ns,
    };
    Ok((report, records))
}

/// Writes one run's artifacts into `dir`: trace.csv, rtt.csv,
/// throughput.csv, hierarchy.txt, rtt.svg, throughput.svg, report.json.
pub fn render_report(dir: &Path, report: &RunReport, records: &[TraceRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.csv"), export_csv(records))?;
    fs::write(dir.join("rtt.csv"), rtt_csv(&report.summary.rtt))?;
    fs::write(
        dir.join("throughput.csv"),
        throughput_csv(&report.summary.throughput),
    )?;
    fs::write(
        dir.join("hierarchy.txt"),
        hierarchy_text(&report.summary.hierarchy),
    )?;
    let rtt_points: Vec<(f64, f64)> = report
        .summary
        .rtt
        .samples
        .iter()
        .map(|s| (s.time_s, s.rtt_s))
        .collect();
    fs::write(
        dir.join("rtt.svg"),
        chart::line_chart_svg(
            &format!("round-trip time ({})", report.summary.mode),
            "time (s)",
            "rtt (s)",
            &rtt_points,
        ),
    )?;
    let tp_points: Vec<(f64, f64)> = report
        .summary
        .throughput
        .iter()
        .map(|b| (b.time_s, b.payload_bits_per_s))
        .collect();
    fs::write(
        dir.join("throughput.svg"),
        chart::line_chart_svg(
            &format!("goodput ({})", report.summary.mode),
            "time (s)",
            "payload bits/s",
            &tp_points,
        ),
    )?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Analysis(e.to_string()))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

/// Reads a run's `report.json` back.
pub fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Startup(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Startup(format!("cannot parse {}: {e}", path.display())))
}

/// Runs the experiment under each of `modes`, writing one subdirectory per
/// mode under `out`, and a comparison when more than one mode ran.
pub fn run_modes(modes: &[SecurityMode], cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut summaries = Vec::new();
    for &mode in modes {
        let (report, records) = run_experiment(mode, cfg)?;
        render_report(&out.join(mode.token()), &report, &records)?;
        summaries.push(report.summary);
    }
    if summaries.len() > 1 {
        let cmp = compare_runs(&summaries)?;
        write_comparison(out, &cmp)?;
    }
    Ok(())
}

/// Writes comparison.txt and comparison.csv into `out`.
pub fn write_comparison(out: &Path, cmp: &Comparison) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("comparison.txt"), &cmp.text)?;
    fs::write(out.join("comparison.csv"), &cmp.csv)?;
    Ok(())
}

/// Compares previously rendered run directories.
pub fn compare_dirs(dirs: &[std::path::PathBuf]) -> Result<Comparison> {
    let mut summaries = Vec::new();
    for dir in dirs {
        summaries.push(load_report(dir)?.summary);
    }
    compare_runs(&summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            size_bytes: 256 * 1024,
            block_size: 32 * 1024,
            pings: 4,
            bucket_ns: 10_000_000,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn experiment_produces_a_complete_report() {
        let (report, records) = run_experiment(SecurityMode::Plain, &small_cfg()).unwrap();
        assert_eq!(report.summary.mode, "plain");
        assert_eq!(report.summary.pings, 4);
        assert!(!records.is_empty());
        // Write and read each move the workload once across the wire.
        let payload: u64 = report.summary.totals.payload_bytes;
        assert_eq!(payload, 2 * 256 * 1024);
        assert!(report.summary.rtt.samples.len() as u64 >= 4);
        assert_eq!(report.summary.rtt.orphans, 0);
    }

    #[test]
    fn simulated_runs_are_reproducible() {
        let cfg = small_cfg();
        let (a, ra) = run_experiment(SecurityMode::RecordLayer, &cfg).unwrap();
        let (b, rb) = run_experiment(SecurityMode::RecordLayer, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(export_csv(&ra), export_csv(&rb));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn plain_beats_record_beats_packet_on_wire_bytes_and_rtt() {
        let cfg = small_cfg();
        let mut reports = Vec::new();
        for mode in SecurityMode::all() {
            reports.push(run_experiment(mode, &cfg).unwrap().0);
        }
        let wire: Vec<u64> = reports.iter().map(|r| r.summary.totals.wire_bytes).collect();
        assert!(wire[0] < wire[1] && wire[1] < wire[2], "wire bytes {wire:?}");
        let rtt: Vec<f64> = reports.iter().map(|r| r.summary.totals.mean_rtt_s).collect();
        assert!(rtt[0] < rtt[1] && rtt[1] < rtt[2], "mean rtt {rtt:?}");
        let goodput: Vec<f64> = reports
            .iter()
            .map(|r| r.summary.totals.mean_goodput_bps)
            .collect();
        assert!(
            goodput[0] > goodput[1] && goodput[1] > goodput[2],
            "goodput {goodput:?}"
        );
    }

    #[test]
    fn render_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            size_bytes: 64 * 1024,
            block_size: 16 * 1024,
            pings: 2,
            ..ExperimentConfig::default()
        };
        let (report, records) = run_experiment(SecurityMode::Plain, &cfg).unwrap();
        render_report(dir.path(), &report, &records).unwrap();
        for name in [
            "trace.csv",
            "rtt.csv",
            "throughput.csv",
            "hierarchy.txt",
            "rtt.svg",
            "throughput.svg",
            "report.json",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        assert_eq!(load_report(dir.path()).unwrap(), report);
    }

    #[test]
    fn zero_byte_workload_is_a_ping_only_run() {
        let cfg = ExperimentConfig {
            size_bytes: 0,
            pings: 3,
            ..ExperimentConfig::default()
        };
        let (report, _) = run_experiment(SecurityMode::Plain, &cfg).unwrap();
        assert_eq!(report.summary.totals.payload_bytes, 0);
        assert_eq!(report.summary.rtt.samples.len(), 3);
        assert!(report.summary.throughput.is_empty());
    }

    #[test]
    fn invalid_configs_are_startup_errors() {
        let mut cfg = small_cfg();
        cfg.block_size = 1000;
        assert!(matches!(
            run_experiment(SecurityMode::Plain, &cfg),
            Err(Error::Startup(_))
        ));
        let mut cfg = small_cfg();
        cfg.bucket_ns = 0;
        assert!(run_experiment(SecurityMode::Plain, &cfg).is_err());
    }

    #[test]
    fn chap_credentials_flow_through_the_experiment() {
        let cfg = ExperimentConfig {
            size_bytes: 32 * 1024,
            block_size: 16 * 1024,
            pings: 1,
            chap: Some(("admin".to_string(), "hunter2".to_string())),
            ..ExperimentConfig::default()
        };
        run_experiment(SecurityMode::Plain, &cfg).unwrap();
    }
}
