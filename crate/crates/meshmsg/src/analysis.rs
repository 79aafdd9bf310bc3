//! Post-hoc analytics over simulation event logs: per-device bandwidth and
//! its percentiles, capacity search over device counts, delivery-time
//! distributions, and the decryption-throughput arithmetic. Everything works
//! from the 4-type event records, whether parsed from JSONL or taken straight
//! out of an in-memory run.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use crate::simnet::{self, EventRecord, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no samples to aggregate")]
    NoData,
    #[error("percentile must be in (0, 100], got {0}")]
    BadPercentile(f64),
    #[error("decryption time must be positive")]
    BadDecryptionTime,
    #[error("simulation failed: {0}")]
    Sim(#[from] simnet::SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ingress/egress totals for one node over one second (10 ticks).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SecondSample {
    pub ingress_bits: u64,
    pub egress_bits: u64,
}

impl SecondSample {
    pub fn combined(&self) -> u64 {
        self.ingress_bits + self.egress_bits
    }
}

/// Per-node per-second bandwidth, plus a per-tick burstiness diagnostic.
#[derive(Debug)]
pub struct BandwidthSeries {
    pub seconds: u64,
    pub per_node: BTreeMap<u32, Vec<SecondSample>>,
    /// First second in which the node transmitted (its start slot).
    pub first_active_second: BTreeMap<u32, u64>,
    /// Largest single-tick combined bit count seen per node.
    pub per_tick_max_bits: BTreeMap<u32, u64>,
}

impl BandwidthSeries {
    /// Pooled combined (ingress+egress) samples in bits/s, one per node per
    /// active second. Seconds before a node's start are not usage and are
    /// left out.
    pub fn pooled_combined_bps(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for (node, samples) in &self.per_node {
            let first = *self.first_active_second.get(node).unwrap_or(&0);
            for (sec, s) in samples.iter().enumerate() {
                if sec as u64 >= first {
                    out.push(s.combined());
                }
            }
        }
        out
    }

    pub fn node_max_combined_bps(&self) -> BTreeMap<u32, u64> {
        self.per_node
            .iter()
            .map(|(n, ss)| (*n, ss.iter().map(SecondSample::combined).max().unwrap_or(0)))
            .collect()
    }
}

/// Aggregates the log into per-node per-second ingress/egress. Egress is
/// debited once per transmission (a broadcast costs the radio once no matter
/// how many neighbors hear it); ingress once per record.
pub fn bandwidth(records: &[EventRecord], total_ms: u64) -> BandwidthSeries {
    let seconds = total_ms.div_ceil(1000).max(1);
    let mut nodes: BTreeSet<u32> = BTreeSet::new();
    for r in records {
        nodes.insert(r.sender_id);
        nodes.insert(r.receiver_id);
    }
    let mut per_node: BTreeMap<u32, Vec<SecondSample>> = nodes
        .iter()
        .map(|&n| (n, vec![SecondSample::default(); seconds as usize]))
        .collect();
    let mut first_active: BTreeMap<u32, u64> = BTreeMap::new();
    let mut per_tick: BTreeMap<(u32, u64), u64> = BTreeMap::new();
    let mut seen_tx: BTreeSet<u64> = BTreeSet::new();

    for r in records {
        let sec = (r.timestamp_ms / 1000).min(seconds - 1) as usize;
        let bits = r.size_bytes as u64 * 8;
        per_node.get_mut(&r.receiver_id).unwrap()[sec].ingress_bits += bits;
        *per_tick.entry((r.receiver_id, r.timestamp_ms)).or_default() += bits;
        if seen_tx.insert(r.transmission_id) {
            per_node.get_mut(&r.sender_id).unwrap()[sec].egress_bits += bits;
            *per_tick.entry((r.sender_id, r.timestamp_ms)).or_default() += bits;
            let e = first_active.entry(r.sender_id).or_insert(u64::MAX);
            *e = (*e).min(r.timestamp_ms / 1000);
        }
    }
    let mut per_tick_max: BTreeMap<u32, u64> = BTreeMap::new();
    for ((node, _), bits) in per_tick {
        let e = per_tick_max.entry(node).or_default();
        *e = (*e).max(bits);
    }
    // Nodes that never transmitted count as active from the start.
    for &n in &nodes {
        first_active.entry(n).or_insert(0);
    }
    BandwidthSeries {
        seconds,
        per_node,
        first_active_second: first_active,
        per_tick_max_bits: per_tick_max,
    }
}

/// Nearest-rank percentile: the ⌈p/100·n⌉-th smallest sample.
pub fn percentile(samples: &[u64], p: f64) -> Result<u64, AnalysisError> {
    if !(0.0..=100.0).contains(&p) || p == 0.0 {
        return Err(AnalysisError::BadPercentile(p));
    }
    if samples.is_empty() {
        return Err(AnalysisError::NoData);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Convenience: the given percentile of pooled combined bandwidth for one
/// config, in bits/s.
pub fn run_percentile_bandwidth(cfg: &SimConfig, p: f64) -> Result<u64, AnalysisError> {
    let out = simnet::run(cfg)?;
    let series = bandwidth(&out.events, cfg.minutes as u64 * 60_000);
    percentile(&series.pooled_combined_bps(), p)
}

#[derive(Clone, Debug)]
pub struct CapacityResult {
    pub percentile: f64,
    pub threshold_bps: u64,
    pub max_devices: u32,
    /// Every probe taken: (device count, median percentile bandwidth).
    pub probes: Vec<(u32, u64)>,
    /// Set when the probe sequence came out non-monotone and the search fell
    /// back to a linear scan.
    pub linear_fallback: bool,
}

/// Largest device count whose percentile bandwidth stays under the threshold,
/// found by doubling then bisection, each probe a full simulation. Probes are
/// medians over three seeds to damp run noise. Monotonicity of bandwidth in
/// device count is an assumption; when the recorded probes contradict it the
/// search reruns as a linear scan and flags the result.
pub fn capacity_search(
    template: &SimConfig,
    p: f64,
    threshold_bps: u64,
    max_devices: u32,
) -> Result<CapacityResult, AnalysisError> {
    if threshold_bps == 0 {
        return Err(AnalysisError::NoData);
    }
    let mut probes: BTreeMap<u32, u64> = BTreeMap::new();
    let mut probe = |n: u32, probes: &mut BTreeMap<u32, u64>| -> Result<u64, AnalysisError> {
        if let Some(&v) = probes.get(&n) {
            return Ok(v);
        }
        let mut vals = Vec::with_capacity(3);
        for s in 0..3 {
            let mut cfg = template.clone();
            cfg.devices = n;
            cfg.seed = template.seed.wrapping_add(s);
            vals.push(run_percentile_bandwidth(&cfg, p)?);
        }
        vals.sort_unstable();
        probes.insert(n, vals[1]);
        Ok(vals[1])
    };

    // Doubling phase.
    let mut lo = 0u32; // largest known-passing count
    let mut hi = None; // smallest known-failing count
    let mut n = 1u32;
    loop {
        let v = probe(n.min(max_devices), &mut probes)?;
        if v < threshold_bps {
            lo = n.min(max_devices);
            if n >= max_devices {
                break;
            }
            n = (n * 2).min(max_devices);
        } else {
            hi = Some(n.min(max_devices));
            break;
        }
    }
    // Bisection phase.
    if let Some(mut h) = hi {
        while h - lo > 1 {
            let mid = lo + (h - lo) / 2;
            if probe(mid, &mut probes)? < threshold_bps {
                lo = mid;
            } else {
                h = mid;
            }
        }
    }

    // The probe record must be consistent with monotone growth; otherwise
    // re-derive by linear scan.
    let ordered: Vec<(u32, u64)> = probes.iter().map(|(&n, &v)| (n, v)).collect();
    let consistent = ordered
        .iter()
        .all(|&(n, v)| if n <= lo { v < threshold_bps } else { v >= threshold_bps });
    if !consistent {
        let mut best = 0;
        for n in 1..=max_devices {
            let v = probe(n, &mut probes)?;
            if v < threshold_bps {
                best = n;
            }
        }
        return Ok(CapacityResult {
            percentile: p,
            threshold_bps,
            max_devices: best,
            probes: probes.into_iter().collect(),
            linear_fallback: true,
        });
    }

    Ok(CapacityResult {
        percentile: p,
        threshold_bps,
        max_devices: lo,
        probes: ordered,
        linear_fallback: false,
    })
}

/// Delivery record for one message id.
#[derive(Clone, Debug)]
pub struct MessageDelivery {
    pub id: u64,
    pub origin: u32,
    pub created_ms: u64,
    /// Time until the last other device held the message, each receiver
    /// measured from max(creation, its own start). `None` if some device
    /// never got it.
    pub coverage_ms: Option<u64>,
    pub within_time_to_keep: bool,
}

#[derive(Debug)]
pub struct DeliveryStats {
    pub per_message: Vec<MessageDelivery>,
    pub delivered: usize,
    pub undelivered: usize,
    pub median_ms: Option<u64>,
    pub max_ms: Option<u64>,
}

impl DeliveryStats {
    pub fn delivered_times(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.per_message.iter().filter_map(|m| m.coverage_ms).collect();
        v.sort_unstable();
        v
    }
}

/// Reconstructs per-message delivery from the log.
///
/// A node holds a message once it transmitted it, or one tick after a record
/// listed the node as receiver (receipt is processed the following tick).
/// Creation is the originator's first MESSAGE broadcast.
///
/// `node_starts_ms` is the ground truth of when each device joined (and with
/// it, the device population to cover). Without it both are inferred from
/// each node's first logged transmission — an overestimate of the start when
/// a device's early broadcasts had no active listeners.
pub fn delivery_times(
    records: &[EventRecord],
    tick_ms: u64,
    time_to_keep_ms: u64,
    node_starts_ms: Option<&BTreeMap<u32, u64>>,
) -> DeliveryStats {
    let node_start: BTreeMap<u32, u64> = match node_starts_ms {
        Some(starts) => starts.clone(),
        None => {
            let mut inferred: BTreeMap<u32, u64> = BTreeMap::new();
            let mut tx_seen: BTreeSet<u64> = BTreeSet::new();
            for r in records {
                if tx_seen.insert(r.transmission_id) {
                    let e = inferred.entry(r.sender_id).or_insert(u64::MAX);
                    *e = (*e).min(r.timestamp_ms);
                }
            }
            inferred
        }
    };
    let nodes: Vec<u32> = node_start.keys().copied().collect();

    // (message, node) -> earliest hold time.
    let mut holds: BTreeMap<u64, BTreeMap<u32, u64>> = BTreeMap::new();
    let mut created: BTreeMap<u64, (u64, u32)> = BTreeMap::new();
    for r in records {
        for &id in r.comm_id.content_ids() {
            let hold = holds.entry(id).or_default();
            let s = hold.entry(r.sender_id).or_insert(u64::MAX);
            *s = (*s).min(r.timestamp_ms);
            let t = hold.entry(r.receiver_id).or_insert(u64::MAX);
            *t = (*t).min(r.timestamp_ms + tick_ms);
            if r.comm_type == crate::node::EnvelopeKind::Message {
                let e = created.entry(id).or_insert((u64::MAX, r.sender_id));
                if r.timestamp_ms < e.0 {
                    *e = (r.timestamp_ms, r.sender_id);
                }
            }
        }
    }

    let mut per_message = Vec::new();
    for (&id, &(created_ms, origin)) in &created {
        let hold = &holds[&id];
        let mut worst = 0u64;
        let mut complete = true;
        for &node in &nodes {
            if node == origin {
                continue;
            }
            match hold.get(&node) {
                Some(&t) => {
                    let baseline = created_ms.max(node_start[&node]);
                    worst = worst.max(t.saturating_sub(baseline));
                }
                None => {
                    complete = false;
                    break;
                }
            }
        }
        let coverage = complete.then_some(worst);
        per_message.push(MessageDelivery {
            id,
            origin,
            created_ms,
            coverage_ms: coverage,
            within_time_to_keep: coverage.map(|c| c <= time_to_keep_ms).unwrap_or(false),
        });
    }

    let mut times: Vec<u64> = per_message.iter().filter_map(|m| m.coverage_ms).collect();
    times.sort_unstable();
    let delivered = times.len();
    DeliveryStats {
        undelivered: per_message.len() - delivered,
        median_ms: (!times.is_empty()).then(|| times[(times.len() - 1) / 2]),
        max_ms: times.last().copied(),
        per_message,
        delivered,
    }
}

/// How many megabits of 255-byte packets a device can decrypt per second,
/// given one packet's average decryption time.
pub fn decryption_throughput_mbps(per_packet_ms: f64) -> Result<f64, AnalysisError> {
    if per_packet_ms <= 0.0 || !per_packet_ms.is_finite() {
        return Err(AnalysisError::BadDecryptionTime);
    }
    Ok((crate::crypto::PACKET_SIZE as f64 * 8.0) / (per_packet_ms * 1000.0))
}

/// Empirical CDF over samples: (value, fraction ≤ value) per distinct value.
pub fn cdf_points(samples: &[u64]) -> Vec<(u64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out: Vec<(u64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    out
}

pub fn write_cdf_csv<W: Write>(mut w: W, x_name: &str, points: &[(u64, f64)]) -> io::Result<()> {
    writeln!(w, "{x_name},cdf")?;
    for (x, f) in points {
        writeln!(w, "{x},{f:.6}")?;
    }
    Ok(())
}

pub fn write_capacity_csv<W: Write>(
    mut w: W,
    rows: &[(f64, CapacityResult)],
) -> io::Result<()> {
    writeln!(w, "spacing_ft,percentile,threshold_bps,max_devices")?;
    for (spacing, r) in rows {
        writeln!(
            w,
            "{spacing:.2},{:.1},{},{}",
            r.percentile, r.threshold_bps, r.max_devices
        )?;
    }
    Ok(())
}

/// Minimal deterministic SVG line rendering of (x, y) points.
pub fn render_line_svg<W: Write>(
    mut w: W,
    title: &str,
    points: &[(f64, f64)],
) -> io::Result<()> {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const MARGIN: f64 = 40.0;
    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )?;
    writeln!(w, "<title>{title}</title>")?;
    writeln!(
        w,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    )?;
    if !points.is_empty() {
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let xs = if (x1 - x0).abs() < f64::EPSILON { 1.0 } else { x1 - x0 };
        let ys = if (y1 - y0).abs() < f64::EPSILON { 1.0 } else { y1 - y0 };
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| {
                let px = MARGIN + (x - x0) / xs * (WIDTH - 2.0 * MARGIN);
                let py = HEIGHT - MARGIN - (y - y0) / ys * (HEIGHT - 2.0 * MARGIN);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        writeln!(
            w,
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>",
            path.join(" ")
        )?;
        writeln!(
            w,
            "<text x=\"{MARGIN}\" y=\"20\" font-size=\"13\" font-family=\"monospace\">{title} [x {x0:.1}..{x1:.1}] [y {y0:.3}..{y1:.3}]</text>"
        )?;
        let ax0 = MARGIN;
        let ax1 = WIDTH - MARGIN;
        let ay = HEIGHT - MARGIN;
        writeln!(
            w,
            "<line x1=\"{ax0}\" y1=\"{ay}\" x2=\"{ax1}\" y2=\"{ay}\" stroke=\"black\"/>"
        )?;
        writeln!(
            w,
            "<line x1=\"{ax0}\" y1=\"{MARGIN}\" x2=\"{ax0}\" y2=\"{ay}\" stroke=\"black\"/>"
        )?;
    }
    writeln!(w, "</svg>")
}
