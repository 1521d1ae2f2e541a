//! Release gate for the whole stack.
//!
//! Each numbered criterion below prints one `PASS`/`FAIL` line (run with
//! `--nocapture` to see them on success) and the test fails unless every
//! criterion passes. Together they cover codec soundness, end-to-end data
//! integrity over both transports, the analytic wire-overhead oracles, the
//! qualitative cost ordering of the three security modes, analyzer exactness
//! on a fixed link, bit-level reproducibility of a benchmark run, rejection
//! of tampering, replay and bad credentials, and the stability of the
//! exported report formats.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ipstor::bench::{run_experiment, ExperimentConfig, RunReport, Transport};
use ipstor::channel::mem::{mem_channel_to_engine, mem_sink_channel, MemConfig};
use ipstor::channel::overhead::{handshake_wire_bytes, wire_bytes};
use ipstor::channel::pipeline::{PipelinePair, Role};
use ipstor::channel::{CryptoCostModel, Endpoint, LinkParams, SecurityMode};
use ipstor::initiator::{Initiator, InitiatorConfig};
use ipstor::pdu::{
    decode_cdb, decode_pdu, decode_text, encode_cdb, encode_pdu, encode_text, Bhs, Cdb, CdbOp,
    Opcode, Pdu, DEFAULT_MAX_DATA_SEGMENT,
};
use ipstor::target::{LunConfig, TargetConfig, TargetEngine};
use ipstor::trace::{
    compare_runs, export_csv, export_text, import_csv, rtt_series, throughput_series, Direction,
    Trace, TraceRecord, CSV_HEADER,
};
use ipstor::Error;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

// ---------------------------------------------------------------------------
// Gate plumbing.

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn new() -> Gate {
        Gate {
            failures: Vec::new(),
        }
    }

    /// Runs one criterion, printing a single PASS/FAIL line with its wall
    /// time. A panic inside the criterion marks it failed but the remaining
    /// criteria still run, so one broken area cannot mask another.
    fn check(&mut self, name: &str, body: impl FnOnce()) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(body));
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS  {name}  ({elapsed:.2} s)"),
            Err(payload) => {
                let msg = panic_text(payload.as_ref());
                println!("FAIL  {name}  ({elapsed:.2} s): {msg}");
                self.failures.push(format!("{name}: {msg}"));
            }
        }
    }
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic with non-string payload".to_string()
    }
}

#[test]
fn acceptance_criteria() {
    // The default panic hook would interleave backtraces with the PASS/FAIL
    // lines; the gate reports every failure message itself.
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));

    let mut gate = Gate::new();
    gate.check(
        "criterion 1: codec identity over 10,000 randomized round trips in under 5 s",
        codec_round_trips,
    );
    gate.check(
        "criterion 2: 4 MiB write + read-back intact in all modes over both transports",
        end_to_end_integrity,
    );
    gate.check(
        "criterion 3: traced wire bytes equal the closed-form overhead oracle",
        wire_overhead_oracle,
    );
    gate.check(
        "criterion 4: plain < ssl < ipsec in cost, reversed in goodput",
        qualitative_ordering,
    );
    gate.check(
        "criterion 5: analyzer exactness (ping RTTs and throughput conservation)",
        analyzer_oracles,
    );
    gate.check(
        "criterion 6: identical CLI invocations produce byte-identical outputs",
        determinism,
    );
    gate.check(
        "criterion 7: tamper, replay and bad credentials are all rejected",
        security_behavior,
    );
    gate.check(
        "criterion 8: exported text, CSV and comparison formats are stable",
        report_fidelity,
    );

    std::panic::set_hook(hook);
    assert!(
        gate.failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        gate.failures.len(),
        gate.failures.join("\n")
    );
}

// ---------------------------------------------------------------------------
// Criterion 1: codec round trips.

/// A random PDU that respects the two header validity rules: only data PDUs
/// carry a buffer offset, and data PDUs keep the aliased first four
/// opcode-specific bytes clear.
fn random_pdu(rng: &mut ChaCha20Rng) -> Pdu {
    let opcodes = Opcode::all();
    let opcode = opcodes[rng.gen_range(0..opcodes.len())];
    let mut bhs = Bhs::new(opcode);
    bhs.final_flag = rng.gen();
    bhs.lun = rng.gen();
    bhs.initiator_task_tag = rng.gen();
    bhs.cmd_sn = rng.gen();
    bhs.stat_sn = rng.gen();
    bhs.exp_stat_sn = rng.gen();
    rng.fill_bytes(&mut bhs.opcode_specific);
    if opcode.is_data() {
        bhs.opcode_specific[..4].fill(0);
        bhs.buffer_offset = rng.gen();
    }
    let len = match rng.gen_range(0u8..4) {
        0 => 0,
        1 => rng.gen_range(1..64),
        2 => rng.gen_range(64..1024),
        _ => rng.gen_range(1024..8192),
    };
    let mut data = vec![0u8; len];
    rng.fill_bytes(&mut data);
    Pdu::new(bhs, data)
}

fn random_text_pairs(rng: &mut ChaCha20Rng) -> Vec<(String, String)> {
    const KEY_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-";
    const VALUE_CHARS: &[u8] =
        b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-=:,/ ";
    let pick = |rng: &mut ChaCha20Rng, chars: &[u8], len: usize| -> String {
        (0..len)
            .map(|_| chars[rng.gen_range(0..chars.len())] as char)
            .collect()
    };
    let pairs = rng.gen_range(0..5);
    (0..pairs)
        .map(|_| {
            let key_len = rng.gen_range(1..16);
            let value_len = rng.gen_range(0..24);
            let key = pick(rng, KEY_CHARS, key_len);
            let value = pick(rng, VALUE_CHARS, value_len);
            (key, value)
        })
        .collect()
}

fn codec_round_trips() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0x524f_554e_4454);
    for i in 0..10_000 {
        // Full PDU: encode, decode, compare; the decoder must consume the
        // padded frame exactly and ignore trailing stream bytes.
        let pdu = random_pdu(&mut rng);
        let wire = encode_pdu(&pdu).unwrap();
        assert_eq!(wire.len() % 4, 0, "iteration {i}: unpadded frame");
        let (back, used) = decode_pdu(&wire, DEFAULT_MAX_DATA_SEGMENT).unwrap();
        assert_eq!(back, pdu, "iteration {i}: PDU changed in flight");
        assert_eq!(used, wire.len(), "iteration {i}: wrong frame length");
        let mut stream = wire.clone();
        stream.extend_from_slice(&[0xEE; 7]);
        let (again, used_again) = decode_pdu(&stream, DEFAULT_MAX_DATA_SEGMENT).unwrap();
        assert_eq!(again, pdu, "iteration {i}: trailing bytes changed decode");
        assert_eq!(used_again, used, "iteration {i}: trailing bytes changed framing");

        // Command descriptor block.
        let cdb = Cdb {
            op: if rng.gen() { CdbOp::Write10 } else { CdbOp::Read10 },
            lba: rng.gen(),
            blocks: rng.gen_range(1..=u16::MAX),
        };
        let cdb_wire = encode_cdb(&cdb).unwrap();
        assert_eq!(decode_cdb(&cdb_wire).unwrap(), cdb, "iteration {i}");

        // Key-value text segment.
        let pairs = random_text_pairs(&mut rng);
        let text_wire = encode_text(&pairs).unwrap();
        assert_eq!(decode_text(&text_wire).unwrap(), pairs, "iteration {i}");
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(5),
        "10,000 round trips took {elapsed:?}, budget is 5 s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: end-to-end integrity.

fn end_to_end_integrity() {
    let size = 4 * 1024 * 1024u64;
    for transport in [Transport::Mem, Transport::Tcp] {
        let budget = match transport {
            Transport::Mem => Duration::from_secs(5),
            Transport::Tcp => Duration::from_secs(30),
        };
        for mode in SecurityMode::all() {
            let cfg = ExperimentConfig {
                transport,
                size_bytes: size,
                pings: 2,
                ..ExperimentConfig::default()
            };
            let start = Instant::now();
            // run_experiment verifies every read-back block against the
            // written workload and fails on the first mismatch.
            let (report, _records) = run_experiment(mode, &cfg).unwrap();
            let elapsed = start.elapsed();
            assert!(
                elapsed < budget,
                "{} over {} took {elapsed:?}, budget {budget:?}",
                mode,
                transport.token()
            );
            // The workload crossed the link twice: once written, once read.
            assert_eq!(
                report.summary.totals.payload_bytes,
                2 * size,
                "{} over {}: data bytes lost or double-counted",
                mode,
                transport.token()
            );
            assert_eq!(report.summary.rtt.orphans, 0);
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: wire-overhead oracle.

fn wire_overhead_oracle() {
    // Hand-derived fixtures at one maximum-size record's worth of data:
    //   plain: ceil(16384/1460) = 12 packets -> 16384 + 12*40        = 16864
    //   ssl:   1 record -> 16405 stream bytes -> 12 packets + 480 hs = 16885
    //   ipsec: ceil(16384/1418) = 12 datagrams, each padded + 60     = 17376
    assert_eq!(wire_bytes(SecurityMode::Plain, 16_384, 1500), 16_864);
    assert_eq!(wire_bytes(SecurityMode::RecordLayer, 16_384, 1500), 16_885);
    assert_eq!(wire_bytes(SecurityMode::PacketLayer, 16_384, 1500), 17_376);
    assert_eq!(handshake_wire_bytes(SecurityMode::Plain, 1500), 0);
    assert_eq!(handshake_wire_bytes(SecurityMode::RecordLayer, 1500), 480);
    assert_eq!(handshake_wire_bytes(SecurityMode::PacketLayer, 1500), 0);

    // The simulated link must put exactly the predicted bytes on the wire.
    for mode in SecurityMode::all() {
        for size in [100usize, 16_384, 1_048_576] {
            let trace = Trace::new();
            let cfg = MemConfig {
                mode,
                seed: 9,
                ..MemConfig::default()
            };
            let ch = mem_sink_channel(cfg, trace.clone()).unwrap();
            let net = ch.net();
            {
                let mut n = net.borrow_mut();
                n.client_handshake().unwrap();
                n.initiator_send(&vec![0xA5u8; size]).unwrap();
                n.drain().unwrap();
            }
            assert_eq!(
                net.borrow().sink_received().len(),
                size,
                "mode {mode} size {size}: bytes lost in transit"
            );
            let measured: u64 = trace.snapshot().iter().map(|r| r.wire_len).sum();
            let predicted =
                (wire_bytes(mode, size, 1500) + handshake_wire_bytes(mode, 1500)) as u64;
            assert_eq!(measured, predicted, "mode {mode} size {size}");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 4: qualitative ordering of the security modes.

fn qualitative_ordering() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        size_bytes: 1 << 20,
        block_size: 32 * 1024,
        pings: 10,
        ..ExperimentConfig::default()
    };
    let mut by_mode: Vec<(SecurityMode, RunReport)> = Vec::new();
    for mode in SecurityMode::all() {
        let (report, _) = run_experiment(mode, &cfg).unwrap();
        // Throughput-bucket conservation must hold on every run.
        let bucket_bits: u64 = report.summary.throughput.iter().map(|b| b.payload_bits).sum();
        assert_eq!(
            bucket_bits,
            report.summary.totals.payload_bytes * 8,
            "mode {mode}: throughput buckets lost payload"
        );
        by_mode.push((mode, report));
    }
    let metric = |i: usize, f: fn(&RunReport) -> f64| f(&by_mode[i].1);
    let wire = |r: &RunReport| r.summary.totals.wire_bytes as f64;
    let rtt = |r: &RunReport| r.summary.totals.mean_rtt_s;
    let goodput = |r: &RunReport| r.summary.totals.mean_goodput_bps;
    // Strict orderings, zero tolerance: plain < ssl < ipsec on cost metrics,
    // exactly reversed on goodput.
    assert!(metric(0, wire) < metric(1, wire), "wire: plain !< ssl");
    assert!(metric(1, wire) < metric(2, wire), "wire: ssl !< ipsec");
    assert!(metric(0, rtt) < metric(1, rtt), "rtt: plain !< ssl");
    assert!(metric(1, rtt) < metric(2, rtt), "rtt: ssl !< ipsec");
    assert!(metric(0, goodput) > metric(1, goodput), "goodput: plain !> ssl");
    assert!(metric(1, goodput) > metric(2, goodput), "goodput: ssl !> ipsec");
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "ordering runs took {elapsed:?}, budget is 10 s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: analyzer oracles.

fn analyzer_oracles() {
    // Ten pings across a one-millisecond link with no bandwidth limit and no
    // crypto cost: every round trip is exactly two milliseconds.
    let engine = TargetEngine::new(&TargetConfig {
        listen: "192.168.2.1:3260".to_string(),
        luns: vec![LunConfig {
            blocks: 64,
            file: None,
        }],
        ..TargetConfig::default()
    })
    .unwrap();
    let trace = Trace::new();
    let cfg = MemConfig {
        mode: SecurityMode::Plain,
        link: LinkParams {
            one_way_delay_ns: 1_000_000,
            bandwidth_bps: None,
            mtu: 1500,
        },
        seed: 5,
        ..MemConfig::default()
    };
    let ch = mem_channel_to_engine(cfg, engine, trace.clone()).unwrap();
    let mut init = Initiator::new(Box::new(ch), InitiatorConfig::default(), trace.clone());
    init.login(false).unwrap();
    for _ in 0..10 {
        init.nop_ping().unwrap();
    }
    init.logout().unwrap();

    let records = trace.snapshot();
    let series = rtt_series(&records).unwrap();
    assert_eq!(series.samples.len(), 10, "expected one sample per ping");
    assert_eq!(series.orphans, 0);
    for s in &series.samples {
        assert_eq!(s.kind, "nop");
        assert_eq!(s.rtt_s, 0.002, "ping at {} drifted", s.time_s);
    }

    // Bucket conservation also holds here (trivially: pings carry no data,
    // so the bucket series is empty and both sides are zero).
    let buckets = throughput_series(&records, 100_000_000).unwrap();
    let bucket_bits: u64 = buckets.iter().map(|b| b.payload_bits).sum();
    let payload_bytes: u64 = records
        .iter()
        .filter(|r| r.protocol != "iSCSI")
        .map(|r| r.payload_len)
        .sum();
    assert_eq!(bucket_bits, payload_bytes * 8);
}

// ---------------------------------------------------------------------------
// Criterion 6: determinism of the CLI.

fn dir_contents(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_ipstor"))
            .args(["bench", "run", "--mode", "all", "--transport", "mem"])
            .args(["--size-mb", "1", "--pings", "10", "--seed", "42"])
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "bench run {run} failed");
        dirs.push(dir_contents(&out));
    }
    // Same file set, same bytes in every file: report.json, all CSVs, both
    // charts and the comparison artifacts.
    let names: Vec<&String> = dirs[0].keys().collect();
    assert!(
        names.len() >= 23,
        "expected >= 23 artifacts, found {names:?}"
    );
    assert_eq!(
        dirs[0].keys().collect::<Vec<_>>(),
        dirs[1].keys().collect::<Vec<_>>(),
        "runs produced different file sets"
    );
    for (name, bytes) in &dirs[0] {
        assert_eq!(bytes, &dirs[1][name], "file {name} differs between runs");
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: security behavior.

fn pipeline_pair(
    mode: SecurityMode,
    client_psk: [u8; 32],
    server_psk: [u8; 32],
) -> (PipelinePair, PipelinePair) {
    let client_ep = Endpoint::new(Ipv4Addr::new(192, 168, 2, 2), 50387);
    let server_ep = Endpoint::new(Ipv4Addr::new(192, 168, 2, 1), 3260);
    let cost = CryptoCostModel::default();
    let client = PipelinePair::new(
        mode, Role::Client, client_psk, cost, client_ep, server_ep, 1500, 21,
    )
    .unwrap();
    let server = PipelinePair::new(
        mode, Role::Server, server_psk, cost, server_ep, client_ep, 1500, 22,
    )
    .unwrap();
    (client, server)
}

/// Runs the record-layer handshake to completion between two pairs.
fn establish(client: &mut PipelinePair, server: &mut PipelinePair) {
    let mut to_server = client.start_handshake().unwrap().packets;
    let mut to_client = Vec::new();
    while !(client.handshake_complete() && server.handshake_complete())
        || !to_server.is_empty()
        || !to_client.is_empty()
    {
        assert!(
            !(to_server.is_empty() && to_client.is_empty()),
            "handshake stalled"
        );
        for p in std::mem::take(&mut to_server) {
            for reply in server.recv_packet(&p.packet.bytes).unwrap().replies {
                to_client.extend(reply.packets);
            }
        }
        for p in std::mem::take(&mut to_client) {
            for reply in client.recv_packet(&p.packet.bytes).unwrap().replies {
                to_server.extend(reply.packets);
            }
        }
    }
}

fn security_behavior() {
    let psk = [7u8; 32];

    // Record layer: flipping one bit of ciphertext or of the tag makes the
    // record unopenable.
    for flip in [45usize, 60] {
        let (mut c, mut s) = pipeline_pair(SecurityMode::RecordLayer, psk, psk);
        establish(&mut c, &mut s);
        let out = c.send(b"record under test").unwrap();
        let mut bytes = out.packets[0].packet.bytes.clone();
        assert!(flip < bytes.len());
        bytes[flip] ^= 0x01;
        match s.recv_packet(&bytes) {
            Err(Error::Integrity(_)) => {}
            other => panic!("tampered record at byte {flip}: got {other:?}"),
        }
    }

    // Packet layer: same for a tampered datagram...
    {
        let (mut c, mut s) = pipeline_pair(SecurityMode::PacketLayer, psk, psk);
        let out = c.send(b"datagram under test").unwrap();
        let mut bytes = out.packets[0].packet.bytes.clone();
        bytes[46] ^= 0x80;
        match s.recv_packet(&bytes) {
            Err(Error::Integrity(_)) => {}
            other => panic!("tampered datagram: got {other:?}"),
        }
    }

    // ...for a replayed datagram (delivered intact once, rejected the
    // second time by the strictly-increasing sequence check)...
    {
        let (mut c, mut s) = pipeline_pair(SecurityMode::PacketLayer, psk, psk);
        let out = c.send(b"deliver exactly once").unwrap();
        let bytes = out.packets[0].packet.bytes.clone();
        let first = s.recv_packet(&bytes).unwrap();
        assert_eq!(first.app, b"deliver exactly once");
        match s.recv_packet(&bytes) {
            Err(Error::Replay { seq: 1, last: 1 }) => {}
            other => panic!("replayed datagram: got {other:?}"),
        }
    }

    // ...and for peers that do not share the same pre-shared key.
    {
        let (mut c, mut s) = pipeline_pair(SecurityMode::PacketLayer, [3u8; 32], [4u8; 32]);
        let out = c.send(b"key mismatch").unwrap();
        match s.recv_packet(&out.packets[0].packet.bytes) {
            Err(Error::Integrity(_)) => {}
            other => panic!("wrong-key datagram: got {other:?}"),
        }
    }

    // CHAP: the wrong secret is rejected before any data can move, while the
    // right secret (the positive control) works.
    let engine = || {
        TargetEngine::new(&TargetConfig {
            listen: "192.168.2.1:3260".to_string(),
            luns: vec![LunConfig {
                blocks: 64,
                file: None,
            }],
            chap: Some(("admin".to_string(), "correct horse".to_string())),
            ..TargetConfig::default()
        })
        .unwrap()
    };
    {
        let trace = Trace::new();
        let cfg = MemConfig {
            seed: 31,
            ..MemConfig::default()
        };
        let ch = mem_channel_to_engine(cfg, engine(), trace.clone()).unwrap();
        let icfg = InitiatorConfig {
            chap: Some(("admin".to_string(), "wrong horse".to_string())),
            ..InitiatorConfig::default()
        };
        let mut init = Initiator::new(Box::new(ch), icfg, trace.clone());
        match init.login(false) {
            Err(Error::Auth(_)) => {}
            other => panic!("wrong CHAP secret: got {other:?}"),
        }
        // No session, no data: nothing in the capture carries payload and
        // a write attempt fails outright.
        let moved: u64 = trace.snapshot().iter().map(|r| r.payload_len).sum();
        assert_eq!(moved, 0, "data moved despite failed login");
        assert!(init.write(0, 0, &[0u8; 512]).is_err());
    }
    {
        let trace = Trace::new();
        let cfg = MemConfig {
            seed: 32,
            ..MemConfig::default()
        };
        let ch = mem_channel_to_engine(cfg, engine(), trace.clone()).unwrap();
        let icfg = InitiatorConfig {
            chap: Some(("admin".to_string(), "correct horse".to_string())),
            ..InitiatorConfig::default()
        };
        let mut init = Initiator::new(Box::new(ch), icfg, trace);
        init.login(false).unwrap();
        init.nop_ping().unwrap();
        init.logout().unwrap();
    }
}

// ---------------------------------------------------------------------------
// Criterion 8: report fidelity.

fn report_fidelity() {
    // The text export renders the fixture frame byte for byte.
    let fixture = TraceRecord {
        frame_no: 158,
        time_ns: 23_558_580_000,
        src: "192.168.2.2:50387".to_string(),
        dst: "192.168.2.1:3260".to_string(),
        protocol: "TCP".to_string(),
        info: "50387 > iscsi-target [ACK]".to_string(),
        wire_len: 40,
        payload_len: 0,
        direction: Direction::InitiatorToTarget,
        task_tag: None,
    };
    assert_eq!(
        export_text(&[fixture]),
        "158 23.558580 192.168.2.2 192.168.2.1 TCP 50387 > iscsi-target [ACK]\n"
    );

    // The CSV column layout is pinned, and export/import is lossless on a
    // real capture.
    assert_eq!(
        CSV_HEADER,
        "frame_no,time,src,dst,protocol,info,wire_len,payload_len,direction,task_tag"
    );
    let cfg = ExperimentConfig {
        size_bytes: 256 * 1024,
        block_size: 32 * 1024,
        pings: 4,
        ..ExperimentConfig::default()
    };
    let (plain, records) = run_experiment(SecurityMode::Plain, &cfg).unwrap();
    let csv = export_csv(&records);
    assert!(csv.starts_with(CSV_HEADER));
    let back = import_csv(&csv).unwrap();
    assert_eq!(back, records);
    assert_eq!(export_csv(&back), csv);

    // The comparison keeps its tabular shape: per-mode totals rows, per-mode
    // numbered RTT sample pairs, and one verdict line per metric.
    let (ipsec, _) = run_experiment(SecurityMode::PacketLayer, &cfg).unwrap();
    let cmp = compare_runs(&[plain.summary.clone(), ipsec.summary.clone()]).unwrap();
    for needle in [
        "  metric",
        "  wire_bytes",
        "  mean_rtt_s",
        "  mean_goodput_bps",
        "  rtt samples (ping, seconds):",
        "  verdict:",
        "    wire bytes: plain < ipsec",
        "    mean rtt: plain < ipsec",
        "    goodput: ipsec < plain",
    ] {
        assert!(cmp.text.contains(needle), "comparison text lost {needle:?}");
    }
    assert!(cmp.csv.starts_with("section,mode,key,value\n"));
    // Each mode's RTT pairs are (position, seconds); the last position is
    // always the sample count.
    for (mode, report) in [("plain", &plain), ("ipsec", &ipsec)] {
        let n = report.summary.rtt.samples.len();
        assert!(
            cmp.text.contains(&format!("    {mode}: (")),
            "comparison text lost the {mode} sample row"
        );
        assert!(
            cmp.text.contains(&format!("({n}, 0.")),
            "comparison text lost the final {mode} sample pair"
        );
        for needle in [
            format!("totals,{mode},wire_bytes,"),
            format!("totals,{mode},mean_rtt_s,"),
            format!("totals,{mode},mean_goodput_bps,"),
            format!("rtt_sample,{mode},{n},"),
        ] {
            assert!(cmp.csv.contains(&needle), "comparison csv lost {needle:?}");
        }
    }
    for needle in [
        "verdict,all,wire_bytes,",
        "verdict,all,mean_rtt_s,",
        "verdict,all,mean_goodput_bps,",
    ] {
        assert!(cmp.csv.contains(needle), "comparison csv lost {needle:?}");
    }
}
