//! Frame capture and offline analysis.
//!
//! Transports record one row per wire packet seen from the initiator host
//! (outbound rows at link entry, inbound rows when the packet has been opened
//! and delivered) and one row per protocol PDU the initiator hands off or
//! fully receives. The analyzer then works from those rows alone: round-trip
//! times pair command frames with their status frames, throughput buckets
//! count the payload bits the wire rows carried, and the protocol hierarchy
//! totals traffic per encapsulation layer.
//!
//! All timestamps are integer nanoseconds internally; floating-point seconds
//! appear only at the formatting edge, derived by a single division so equal
//! intervals compare exactly equal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of an exported capture, fixed across versions.
pub const CSV_HEADER: &str =
    "frame_no,time,src,dst,protocol,info,wire_len,payload_len,direction,task_tag";

/// Which way a frame travelled, seen from the initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "i->t")]
    InitiatorToTarget,
    #[serde(rename = "t->i")]
    TargetToInitiator,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::InitiatorToTarget => "i->t",
            Direction::TargetToInitiator => "t->i",
        }
    }

    pub fn parse(s: &str) -> Result<Direction> {
        match s {
            "i->t" => Ok(Direction::InitiatorToTarget),
            "t->i" => Ok(Direction::TargetToInitiator),
            other => Err(Error::Analysis(format!("unknown direction {other:?}"))),
        }
    }
}

/// One captured frame. `frame_no` is assigned on snapshot, after rows are
/// ordered by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub frame_no: u64,
    pub time_ns: u64,
    pub src: String,
    pub dst: String,
    pub protocol: String,
    pub info: String,
    pub wire_len: u64,
    /// Application (SCSI data) bytes attributed to this frame.
    pub payload_len: u64,
    pub direction: Direction,
    pub task_tag: Option<u32>,
}

impl TraceRecord {
    pub fn time_s(&self) -> f64 {
        self.time_ns as f64 / 1e9
    }
}

/// Index of a recorded row, for later payload attribution.
pub type RowId = usize;

/// A shared, append-only frame log. Cloning shares the underlying capture.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    rows: Arc<Mutex<Vec<TraceRecord>>>,
}

impl Trace {
    pub fn new() -> Trace {
        Trace::default()
    }

    /// Appends one frame; `payload_len` usually starts at zero and is topped
    /// up later via [`Trace::add_payload`] once the protocol layer knows
    /// which stream bytes were SCSI data.
    #[allow(clippy::too_many_arguments)]
    pub fn record_frame(
        &self,
        time_ns: u64,
        src: String,
        dst: String,
        protocol: &str,
        info: String,
        wire_len: u64,
        payload_len: u64,
        direction: Direction,
        task_tag: Option<u32>,
    ) -> RowId {
        let mut rows = self.rows.lock().unwrap();
        rows.push(TraceRecord {
            frame_no: 0,
            time_ns,
            src,
            dst,
            protocol: protocol.to_string(),
            info,
            wire_len,
            payload_len,
            direction,
            task_tag,
        });
        rows.len() - 1
    }

    /// Credits `bytes` more payload to an existing row.
    pub fn add_payload(&self, row: RowId, bytes: u64) {
        let mut rows = self.rows.lock().unwrap();
        rows[row].payload_len += bytes;
    }

    pub fn len(&self) -> usize {
        self.rows.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time-ordered copy of the capture with frame numbers assigned from 1.
    /// The sort is stable, so rows recorded at the same instant keep their
    /// recording order.
    pub fn snapshot(&self) -> Vec<TraceRecord> {
        let mut rows = self.rows.lock().unwrap().clone();
        rows.sort_by_key(|r| r.time_ns);
        for (i, row) in rows.iter_mut().enumerate() {
            row.frame_no = (i + 1) as u64;
        }
        rows
    }

    /// Sum of `wire_len` over rows `first_row..` — handy for checking what a
    /// single operation put on the link.
    pub fn wire_bytes_since(&self, first_row: RowId) -> u64 {
        let rows = self.rows.lock().unwrap();
        rows[first_row.min(rows.len())..]
            .iter()
            .map(|r| r.wire_len)
            .sum()
    }
}

fn strip_port(endpoint: &str) -> &str {
    endpoint.rsplit_once(':').map_or(endpoint, |(ip, _)| ip)
}

/// Renders the capture in single-line text form, one frame per line:
/// number, seconds, source and destination hosts, protocol, summary.
pub fn export_text(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(
            out,
            "{} {:.6} {} {} {} {}",
            r.frame_no,
            r.time_s(),
            strip_port(&r.src),
            strip_port(&r.dst),
            r.protocol,
            r.info
        )
        .unwrap();
    }
    out
}

/// Renders the capture as CSV under [`CSV_HEADER`]. Times carry nine decimal
/// places, one per nanosecond, so a re-import reproduces the rows exactly.
pub fn export_csv(records: &[TraceRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).unwrap();
    for r in records {
        w.write_record([
            r.frame_no.to_string(),
            format!("{:.9}", r.time_s()),
            r.src.clone(),
            r.dst.clone(),
            r.protocol.clone(),
            r.info.clone(),
            r.wire_len.to_string(),
            r.payload_len.to_string(),
            r.direction.as_str().to_string(),
            r.task_tag.map(|t| t.to_string()).unwrap_or_default(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Parses a capture produced by [`export_csv`].
pub fn import_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let got = reader
            .headers()
            .map_err(|e| Error::Analysis(format!("unreadable capture header: {e}")))?;
        let want: Vec<&str> = CSV_HEADER.split(',').collect();
        if got.iter().collect::<Vec<_>>() != want {
            return Err(Error::Analysis(format!(
                "unexpected capture header {:?}",
                got.iter().collect::<Vec<_>>()
            )));
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Analysis(format!("unreadable capture row: {e}")))?;
        if rec.len() != 10 {
            return Err(Error::Analysis(format!(
                "capture row has {} fields, expected 10",
                rec.len()
            )));
        }
        let field = |i: usize| rec.get(i).unwrap();
        let num = |i: usize| -> Result<u64> {
            field(i)
                .parse::<u64>()
                .map_err(|_| Error::Analysis(format!("bad number {:?} in capture", field(i))))
        };
        let time: f64 = field(1)
            .parse()
            .map_err(|_| Error::Analysis(format!("bad time {:?} in capture", field(1))))?;
        let task_tag = match field(9) {
            "" => None,
            s => Some(s.parse::<u32>().map_err(|_| {
                Error::Analysis(format!("bad task tag {s:?} in capture"))
            })?),
        };
        rows.push(TraceRecord {
            frame_no: num(0)?,
            time_ns: (time * 1e9).round() as u64,
            src: field(2).to_string(),
            dst: field(3).to_string(),
            protocol: field(4).to_string(),
            info: field(5).to_string(),
            wire_len: num(6)?,
            payload_len: num(7)?,
            direction: Direction::parse(field(8))?,
            task_tag,
        });
    }
    Ok(rows)
}

/// One paired command/status round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttSample {
    /// Departure time of the opening frame, seconds.
    pub time_s: f64,
    pub rtt_s: f64,
    pub task_tag: u32,
    /// "read", "write", or "nop".
    pub kind: String,
}

/// All round trips found in a capture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RttSeries {
    pub samples: Vec<RttSample>,
    /// Frames that opened a round trip and never saw a close, or closed one
    /// that was never opened.
    pub orphans: u64,
}

impl RttSeries {
    pub fn mean_s(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.rtt_s).sum::<f64>() / self.samples.len() as f64
    }
}

fn rtt_open_kind(info: &str) -> Option<&'static str> {
    if info.starts_with("SCSI: Read(10)") {
        Some("read")
    } else if info.starts_with("SCSI: Write(10)") {
        Some("write")
    } else if info.starts_with("NOP Out") {
        Some("nop")
    } else {
        None
    }
}

fn rtt_closes(info: &str) -> bool {
    info.starts_with("SCSI: Response") || info.starts_with("NOP In")
}

/// Pairs protocol-row command frames with their status frames by task tag.
///
/// Round trips open on outbound `SCSI: Read(10)`/`SCSI: Write(10)`/`NOP Out`
/// frames and close on inbound `SCSI: Response`/`NOP In` frames. A second
/// opener for a tag already in flight is a malformed capture and fails;
/// unmatched frames in either direction are counted as orphans.
pub fn rtt_series(records: &[TraceRecord]) -> Result<RttSeries> {
    let mut in_flight: BTreeMap<u32, (u64, &'static str)> = BTreeMap::new();
    let mut series = RttSeries::default();
    for r in records {
        if r.protocol != "iSCSI" {
            continue;
        }
        let Some(tag) = r.task_tag else { continue };
        match r.direction {
            Direction::InitiatorToTarget => {
                if let Some(kind) = rtt_open_kind(&r.info) {
                    if in_flight.insert(tag, (r.time_ns, kind)).is_some() {
                        return Err(Error::Analysis(format!(
                            "task tag {tag} opened twice without a close (frame {})",
                            r.frame_no
                        )));
                    }
                }
            }
            Direction::TargetToInitiator => {
                if rtt_closes(&r.info) {
                    match in_flight.remove(&tag) {
                        Some((open_ns, kind)) => series.samples.push(RttSample {
                            time_s: open_ns as f64 / 1e9,
                            rtt_s: (r.time_ns - open_ns) as f64 / 1e9,
                            task_tag: tag,
                            kind: kind.to_string(),
                        }),
                        None => series.orphans += 1,
                    }
                }
            }
        }
    }
    series.orphans += in_flight.len() as u64;
    Ok(series)
}

/// One throughput bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputBucket {
    /// Bin start, seconds. Bins are aligned to multiples of the width from
    /// time zero, not to the first frame.
    pub time_s: f64,
    pub payload_bits: u64,
    pub wire_bits: u64,
    pub payload_bits_per_s: f64,
    pub wire_bits_per_s: f64,
}

/// Bins the wire rows of a capture into fixed-width intervals.
///
/// Only wire rows (everything but protocol rows) are counted, so a byte of
/// SCSI data contributes exactly once no matter how many layers carried it.
/// The bins span the interval from the first data-carrying wire frame to the
/// last; a capture with no data frames yields an empty series.
pub fn throughput_series(records: &[TraceRecord], bucket_ns: u64) -> Result<Vec<ThroughputBucket>> {
    if bucket_ns == 0 {
        return Err(Error::Analysis("bucket width must be positive".to_string()));
    }
    let wire_rows: Vec<&TraceRecord> = records.iter().filter(|r| r.protocol != "iSCSI").collect();
    let data_times: Vec<u64> = wire_rows
        .iter()
        .filter(|r| r.payload_len > 0)
        .map(|r| r.time_ns)
        .collect();
    let (Some(&t_min), Some(&t_max)) = (data_times.iter().min(), data_times.iter().max()) else {
        return Ok(Vec::new());
    };
    let first = t_min / bucket_ns;
    let last = t_max / bucket_ns;
    let width_s = bucket_ns as f64 / 1e9;
    let mut buckets: Vec<ThroughputBucket> = (first..=last)
        .map(|i| ThroughputBucket {
            time_s: (i * bucket_ns) as f64 / 1e9,
            payload_bits: 0,
            wire_bits: 0,
            payload_bits_per_s: 0.0,
            wire_bits_per_s: 0.0,
        })
        .collect();
    for r in &wire_rows {
        let i = r.time_ns / bucket_ns;
        if i < first || i > last {
            continue;
        }
        let b = &mut buckets[(i - first) as usize];
        b.payload_bits += r.payload_len * 8;
        b.wire_bits += r.wire_len * 8;
    }
    for b in &mut buckets {
        b.payload_bits_per_s = b.payload_bits as f64 / width_s;
        b.wire_bits_per_s = b.wire_bits as f64 / width_s;
    }
    Ok(buckets)
}

/// Renders a throughput series as CSV.
pub fn throughput_csv(buckets: &[ThroughputBucket]) -> String {
    let mut out = String::from("time,payload_bps,wire_bps\n");
    for b in buckets {
        writeln!(
            out,
            "{:.9},{:.6},{:.6}",
            b.time_s, b.payload_bits_per_s, b.wire_bits_per_s
        )
        .unwrap();
    }
    out
}

/// Renders an RTT series as CSV.
pub fn rtt_csv(series: &RttSeries) -> String {
    let mut out = String::from("time,rtt,task_tag,kind\n");
    for s in &series.samples {
        writeln!(
            out,
            "{:.9},{:.9},{},{}",
            s.time_s, s.rtt_s, s.task_tag, s.kind
        )
        .unwrap();
    }
    out
}

/// Per-layer traffic totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStat {
    pub protocol: String,
    pub frames: u64,
    pub wire_bytes: u64,
    pub payload_bytes: u64,
}

/// Outermost-first display rank for the known layers.
fn protocol_rank(name: &str) -> (u8, &str) {
    let rank = match name {
        "ESP" => 0,
        "TCP" => 1,
        "RECORD" => 2,
        "iSCSI" => 3,
        _ => 4,
    };
    (rank, name)
}

/// Aggregates the capture per protocol label, ordered outermost layer first.
pub fn protocol_hierarchy(records: &[TraceRecord]) -> Vec<ProtocolStat> {
    let mut by_name: BTreeMap<&str, ProtocolStat> = BTreeMap::new();
    for r in records {
        let stat = by_name
            .entry(r.protocol.as_str())
            .or_insert_with(|| ProtocolStat {
                protocol: r.protocol.clone(),
                frames: 0,
                wire_bytes: 0,
                payload_bytes: 0,
            });
        stat.frames += 1;
        stat.wire_bytes += r.wire_len;
        stat.payload_bytes += r.payload_len;
    }
    let mut stats: Vec<ProtocolStat> = by_name.into_values().collect();
    stats.sort_by(|a, b| protocol_rank(&a.protocol).cmp(&protocol_rank(&b.protocol)));
    stats
}

/// Renders a hierarchy as aligned text.
pub fn hierarchy_text(stats: &[ProtocolStat]) -> String {
    let mut out = String::from("Protocol Hierarchy Statistics\n");
    for s in stats {
        writeln!(
            out,
            "  {:<8} frames: {:>8}  bytes: {:>12}  payload bytes: {:>12}",
            s.protocol, s.frames, s.wire_bytes, s.payload_bytes
        )
        .unwrap();
    }
    out
}

/// Link parameters echoed into a run summary, kept free of transport types
/// so captures can be compared without reconstructing a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEcho {
    pub one_way_delay_ns: u64,
    /// `None` models an unlimited link.
    pub bandwidth_bps: Option<f64>,
    pub mtu: u64,
}

/// Headline figures for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    /// Bytes on the link, all wire frames, handshake included.
    pub wire_bytes: u64,
    /// SCSI data bytes carried by wire frames.
    pub payload_bytes: u64,
    /// First frame to last frame, seconds.
    pub duration_s: f64,
    pub mean_rtt_s: f64,
    /// Payload bits over the run duration.
    pub mean_goodput_bps: f64,
}

/// Everything the analyzer can say about one run, self-contained enough to
/// compare against another run from its serialized form alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Security-mode token: "plain", "ssl", or "ipsec".
    pub mode: String,
    /// "mem" or "tcp".
    pub transport: String,
    pub workload_bytes: u64,
    pub workload_sha256: String,
    pub pings: u64,
    pub link: LinkEcho,
    pub totals: Totals,
    pub rtt: RttSeries,
    pub throughput: Vec<ThroughputBucket>,
    pub hierarchy: Vec<ProtocolStat>,
}

/// Computes the headline totals for a capture.
pub fn totals(records: &[TraceRecord], rtt: &RttSeries) -> Totals {
    let wire_rows = records.iter().filter(|r| r.protocol != "iSCSI");
    let (mut wire_bytes, mut payload_bytes) = (0u64, 0u64);
    for r in wire_rows {
        wire_bytes += r.wire_len;
        payload_bytes += r.payload_len;
    }
    let duration_s = match (
        records.iter().map(|r| r.time_ns).min(),
        records.iter().map(|r| r.time_ns).max(),
    ) {
        (Some(a), Some(b)) => (b - a) as f64 / 1e9,
        _ => 0.0,
    };
    let mean_goodput_bps = if duration_s > 0.0 {
        payload_bytes as f64 * 8.0 / duration_s
    } else {
        0.0
    };
    Totals {
        wire_bytes,
        payload_bytes,
        duration_s,
        mean_rtt_s: rtt.mean_s(),
        mean_goodput_bps,
    }
}

/// A rendered run comparison.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub text: String,
    pub csv: String,
}

/// At most four evenly spaced positions through `1..=n`, always ending at
/// `n`: for 1000 samples that is 250, 500, 750, 1000.
fn sample_positions(n: usize) -> Vec<usize> {
    if n <= 4 {
        (1..=n).collect()
    } else {
        (1..=4).map(|i| i * n / 4).collect()
    }
}

/// Ascending-order verdict over `(mode, value)` pairs: "a < b < c", with
/// "=" between exactly equal neighbours, or "tie" when every value matches.
fn order_line(pairs: &[(String, f64)]) -> String {
    let mut sorted: Vec<&(String, f64)> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    if sorted.windows(2).all(|w| w[0].1 == w[1].1) && sorted.len() > 1 {
        return "tie".to_string();
    }
    let mut out = String::new();
    for (i, (mode, value)) in sorted.iter().enumerate() {
        if i > 0 {
            out.push_str(if *value == sorted[i - 1].1 { " = " } else { " < " });
        }
        out.push_str(mode);
    }
    out
}

/// Compares runs of the same workload over the same link.
///
/// Runs must agree on workload bytes, workload digest, ping count, and link
/// parameters; anything else would compare incommensurable experiments and
/// is rejected. The output tabulates the headline totals per run, shows at
/// most four evenly spaced round-trip samples per run, and closes with
/// ascending-order verdicts for wire bytes, mean round-trip time, and
/// goodput.
pub fn compare_runs(runs: &[RunSummary]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Analysis(
            "need at least two runs to compare".to_string(),
        ));
    }
    let first = &runs[0];
    for r in &runs[1..] {
        if r.workload_bytes != first.workload_bytes
            || r.workload_sha256 != first.workload_sha256
            || r.pings != first.pings
        {
            return Err(Error::Analysis(format!(
                "runs carry different workloads ({} vs {})",
                first.mode, r.mode
            )));
        }
        if r.link != first.link {
            return Err(Error::Analysis(format!(
                "runs used different links ({} vs {})",
                first.mode, r.mode
            )));
        }
    }

    let bw = match first.link.bandwidth_bps {
        Some(b) => format!("{b} bits/s"),
        None => "unlimited".to_string(),
    };
    let mut text = String::new();
    writeln!(text, "Run comparison: {} runs", runs.len()).unwrap();
    writeln!(
        text,
        "  workload: {} bytes, sha256 {}, pings {}",
        first.workload_bytes, first.workload_sha256, first.pings
    )
    .unwrap();
    writeln!(
        text,
        "  link: delay {} ns, bandwidth {}, mtu {}",
        first.link.one_way_delay_ns, bw, first.link.mtu
    )
    .unwrap();
    writeln!(text).unwrap();

    write!(text, "  {:<18}", "metric").unwrap();
    for r in runs {
        write!(text, " {:>16}", r.mode).unwrap();
    }
    writeln!(text).unwrap();
    type MetricFn = fn(&RunSummary) -> String;
    let metric_rows: [(&str, MetricFn); 3] = [
        ("wire_bytes", |r| r.totals.wire_bytes.to_string()),
        ("mean_rtt_s", |r| format!("{:.9}", r.totals.mean_rtt_s)),
        ("mean_goodput_bps", |r| {
            format!("{:.3}", r.totals.mean_goodput_bps)
        }),
    ];
    for (name, value) in metric_rows {
        write!(text, "  {name:<18}").unwrap();
        for r in runs {
            write!(text, " {:>16}", value(r)).unwrap();
        }
        writeln!(text).unwrap();
    }
    writeln!(text).unwrap();

    writeln!(text, "  rtt samples (ping, seconds):").unwrap();
    for r in runs {
        write!(text, "    {}:", r.mode).unwrap();
        if r.rtt.samples.is_empty() {
            write!(text, " (none)").unwrap();
        }
        for p in sample_positions(r.rtt.samples.len()) {
            write!(text, " ({}, {:.6})", p, r.rtt.samples[p - 1].rtt_s).unwrap();
        }
        writeln!(text).unwrap();
    }
    writeln!(text).unwrap();

    let collect = |f: fn(&RunSummary) -> f64| -> Vec<(String, f64)> {
        runs.iter().map(|r| (r.mode.clone(), f(r))).collect()
    };
    let wire_order = order_line(&collect(|r| r.totals.wire_bytes as f64));
    let rtt_order = order_line(&collect(|r| r.totals.mean_rtt_s));
    let goodput_order = order_line(&collect(|r| r.totals.mean_goodput_bps));
    writeln!(text, "  verdict:").unwrap();
    writeln!(text, "    wire bytes: {wire_order}").unwrap();
    writeln!(text, "    mean rtt: {rtt_order}").unwrap();
    writeln!(text, "    goodput: {goodput_order}").unwrap();

    let mut csv = String::from("section,mode,key,value\n");
    for r in runs {
        writeln!(csv, "totals,{},wire_bytes,{}", r.mode, r.totals.wire_bytes).unwrap();
        writeln!(csv, "totals,{},mean_rtt_s,{:.9}", r.mode, r.totals.mean_rtt_s).unwrap();
        writeln!(
            csv,
            "totals,{},mean_goodput_bps,{:.3}",
            r.mode, r.totals.mean_goodput_bps
        )
        .unwrap();
    }
    for r in runs {
        for p in sample_positions(r.rtt.samples.len()) {
            writeln!(
                csv,
                "rtt_sample,{},{},{:.9}",
                r.mode,
                p,
                r.rtt.samples[p - 1].rtt_s
            )
            .unwrap();
        }
    }
    writeln!(csv, "verdict,all,wire_bytes,{wire_order}").unwrap();
    writeln!(csv, "verdict,all,mean_rtt_s,{rtt_order}").unwrap();
    writeln!(csv, "verdict,all,mean_goodput_bps,{goodput_order}").unwrap();

    Ok(Comparison { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire_row(time_ns: u64, wire: u64, payload: u64) -> TraceRecord {
        TraceRecord {
            frame_no: 0,
            time_ns,
            src: "192.168.2.2:50387".to_string(),
            dst: "192.168.2.1:3260".to_string(),
            protocol: "TCP".to_string(),
            info: "50387 > iscsi-target [ACK]".to_string(),
            wire_len: wire,
            payload_len: payload,
            direction: Direction::InitiatorToTarget,
            task_tag: None,
        }
    }

    fn pdu_row(time_ns: u64, info: &str, dir: Direction, tag: u32) -> TraceRecord {
        TraceRecord {
            frame_no: 0,
            time_ns,
            src: "192.168.2.2:50387".to_string(),
            dst: "192.168.2.1:3260".to_string(),
            protocol: "iSCSI".to_string(),
            info: info.to_string(),
            wire_len: 48,
            payload_len: 0,
            direction: dir,
            task_tag: Some(tag),
        }
    }

    #[test]
    fn text_export_matches_capture_style() {
        let mut row = wire_row(23_558_580_000, 66, 0);
        row.frame_no = 158;
        assert_eq!(
            export_text(&[row]),
            "158 23.558580 192.168.2.2 192.168.2.1 TCP 50387 > iscsi-target [ACK]\n"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let trace = Trace::new();
        trace.record_frame(
            1_000_000,
            "192.168.2.2:50387".into(),
            "192.168.2.1:3260".into(),
            "iSCSI",
            "SCSI: Read(10) LUN: 0x00 (LBA: 0x00000000, Len: 8)".into(),
            48,
            0,
            Direction::InitiatorToTarget,
            Some(3),
        );
        trace.record_frame(
            999_999,
            "192.168.2.2:50387".into(),
            "192.168.2.1:3260".into(),
            "TCP",
            "50387 > iscsi-target [ACK]".into(),
            88,
            0,
            Direction::InitiatorToTarget,
            None,
        );
        let records = trace.snapshot();
        // Snapshot ordered by time: the TCP row recorded second comes first.
        assert_eq!(records[0].protocol, "TCP");
        assert_eq!(records[0].frame_no, 1);
        let csv = export_csv(&records);
        assert!(csv.starts_with(CSV_HEADER));
        let back = import_csv(&csv).unwrap();
        assert_eq!(back, records);
        assert_eq!(export_csv(&back), csv);
    }

    #[test]
    fn payload_can_be_credited_after_recording() {
        let trace = Trace::new();
        let row = trace.record_frame(
            0,
            "a".into(),
            "b".into(),
            "TCP",
            "x".into(),
            100,
            0,
            Direction::InitiatorToTarget,
            None,
        );
        trace.add_payload(row, 60);
        trace.add_payload(row, 4);
        assert_eq!(trace.snapshot()[0].payload_len, 64);
    }

    #[test]
    fn ping_round_trips_are_exact() {
        let mut rows = Vec::new();
        for i in 0..10u64 {
            let t0 = i * 3_000_000;
            rows.push(pdu_row(t0, "NOP Out", Direction::InitiatorToTarget, i as u32));
            rows.push(pdu_row(
                t0 + 2_000_000,
                "NOP In",
                Direction::TargetToInitiator,
                i as u32,
            ));
        }
        let series = rtt_series(&rows).unwrap();
        assert_eq!(series.samples.len(), 10);
        assert_eq!(series.orphans, 0);
        for s in &series.samples {
            assert_eq!(s.rtt_s, 0.002);
            assert_eq!(s.kind, "nop");
        }
        // Summation may wobble in the last bit; the samples themselves are
        // exact.
        assert!((series.mean_s() - 0.002).abs() < 1e-12);
    }

    #[test]
    fn data_frames_between_command_and_status_do_not_close_the_round_trip() {
        let rows = vec![
            pdu_row(
                0,
                "SCSI: Read(10) LUN: 0x00 (LBA: 0x00000000, Len: 8)",
                Direction::InitiatorToTarget,
                9,
            ),
            pdu_row(
                1_000_000,
                "SCSI: Data In LUN: 0x00",
                Direction::TargetToInitiator,
                9,
            ),
            pdu_row(
                2_500_000,
                "SCSI: Response LUN: 0x00 (Good)",
                Direction::TargetToInitiator,
                9,
            ),
        ];
        let series = rtt_series(&rows).unwrap();
        assert_eq!(series.samples.len(), 1);
        assert_eq!(series.samples[0].rtt_s, 0.0025);
        assert_eq!(series.samples[0].kind, "read");
    }

    #[test]
    fn duplicate_open_is_a_malformed_capture() {
        let rows = vec![
            pdu_row(0, "NOP Out", Direction::InitiatorToTarget, 1),
            pdu_row(10, "NOP Out", Direction::InitiatorToTarget, 1),
        ];
        assert!(matches!(rtt_series(&rows), Err(Error::Analysis(_))));
    }

    #[test]
    fn unmatched_frames_are_orphans() {
        let rows = vec![
            pdu_row(0, "NOP Out", Direction::InitiatorToTarget, 1),
            pdu_row(10, "NOP In", Direction::TargetToInitiator, 99),
        ];
        let series = rtt_series(&rows).unwrap();
        assert_eq!(series.samples.len(), 0);
        assert_eq!(series.orphans, 2);
    }

    #[test]
    fn single_frame_throughput_bucket() {
        let rows = vec![wire_row(100_000_000, 1500, 1460)];
        let buckets = throughput_series(&rows, 1_000_000_000).unwrap();
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[0].time_s, 0.0);
        assert_eq!(buckets[0].payload_bits, 11_680);
        assert_eq!(buckets[0].payload_bits_per_s, 11_680.0);
        assert_eq!(buckets[0].wire_bits_per_s, 12_000.0);
    }

    #[test]
    fn no_data_frames_yields_an_empty_series() {
        let rows = vec![wire_row(0, 88, 0), pdu_row(1, "NOP Out", Direction::InitiatorToTarget, 1)];
        assert!(throughput_series(&rows, 1_000_000).unwrap().is_empty());
    }

    #[test]
    fn zero_bucket_width_is_rejected() {
        assert!(matches!(
            throughput_series(&[], 0),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn bucket_sums_conserve_payload() {
        let rows: Vec<TraceRecord> = (0..97u64)
            .map(|i| wire_row(i * 700_000, 1500, 1460))
            .collect();
        let buckets = throughput_series(&rows, 10_000_000).unwrap();
        let total: u64 = buckets.iter().map(|b| b.payload_bits).sum();
        assert_eq!(total, 97 * 1460 * 8);
    }

    #[test]
    fn hierarchy_orders_outermost_first() {
        let mut esp = wire_row(0, 188, 100);
        esp.protocol = "ESP".to_string();
        let rows = vec![
            pdu_row(1, "NOP Out", Direction::InitiatorToTarget, 1),
            wire_row(2, 140, 100),
            esp,
        ];
        let stats = protocol_hierarchy(&rows);
        let names: Vec<&str> = stats.iter().map(|s| s.protocol.as_str()).collect();
        assert_eq!(names, ["ESP", "TCP", "iSCSI"]);
        assert_eq!(stats[0].wire_bytes, 188);
    }

    fn summary(mode: &str, wire: u64, rtt_s: f64, n_samples: usize) -> RunSummary {
        let samples = (0..n_samples)
            .map(|i| RttSample {
                time_s: i as f64 * 0.01,
                rtt_s,
                task_tag: i as u32,
                kind: "nop".to_string(),
            })
            .collect();
        RunSummary {
            mode: mode.to_string(),
            transport: "mem".to_string(),
            workload_bytes: 1 << 20,
            workload_sha256: "feed".to_string(),
            pings: n_samples as u64,
            link: LinkEcho {
                one_way_delay_ns: 1_000_000,
                bandwidth_bps: Some(1e9),
                mtu: 1500,
            },
            totals: Totals {
                wire_bytes: wire,
                payload_bytes: 1 << 20,
                duration_s: 1.0,
                mean_rtt_s: rtt_s,
                mean_goodput_bps: (1u64 << 23) as f64 / rtt_s,
            },
            rtt: RttSeries {
                samples,
                orphans: 0,
            },
            throughput: Vec::new(),
            hierarchy: Vec::new(),
        }
    }

    #[test]
    fn comparison_samples_and_verdicts() {
        let runs = vec![
            summary("plain", 1_100_000, 0.002, 1000),
            summary("ssl", 1_120_000, 0.01, 1000),
            summary("ipsec", 1_190_000, 0.012, 1000),
        ];
        let cmp = compare_runs(&runs).unwrap();
        assert!(cmp
            .text
            .contains("ssl: (250, 0.010000) (500, 0.010000) (750, 0.010000) (1000, 0.010000)"));
        assert!(cmp.text.contains("wire bytes: plain < ssl < ipsec"));
        assert!(cmp.text.contains("mean rtt: plain < ssl < ipsec"));
        assert!(cmp.text.contains("goodput: ipsec < ssl < plain"));
        assert!(cmp.csv.starts_with("section,mode,key,value\n"));
        assert!(cmp.csv.contains("rtt_sample,ssl,1000,0.010000000"));
    }

    #[test]
    fn comparison_rejects_different_workloads() {
        let mut a = summary("plain", 1, 0.002, 4);
        let b = summary("ssl", 2, 0.003, 4);
        a.workload_sha256 = "beef".to_string();
        assert!(matches!(
            compare_runs(&[a, b]),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn comparison_reports_ties() {
        let runs = vec![summary("plain", 5, 0.002, 4), summary("ssl", 5, 0.002, 4)];
        let cmp = compare_runs(&runs).unwrap();
        assert!(cmp.text.contains("wire bytes: tie"));
    }
}
