//! Discrete-event simulation of bursty stations sharing one bottleneck link.
//!
//! Each station draws bursts from its generator, fragments them and hands
//! every fragment to a single FIFO link. The link serialises one fragment at
//! a time at `(wire bytes + overhead) * 8 / link_rate` seconds, drops each
//! transmitted fragment independently with `loss_prob`, and delivers the
//! rest after the propagation delay to a per-station reassembler.
//!
//! Time is integer nanoseconds; serialisation times are rounded up. Events
//! scheduled for the same instant run in insertion order, so a run is a pure
//! function of its configuration.
//!
//! Bursts are generated while `t < duration`; the run then drains every
//! queued fragment so late bursts are still accounted for.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::generator::{
    BurstGenerator, SimpleBurstGenerator, TraceFile, TraceFileBurstGenerator, VrBurstGenerator,
};
use crate::model::{VrModel, VrModelConstants, VrStreamParams};
use crate::rv::{RngStream, Variate, RNG_ALGORITHM};
use crate::wire::{
    fragment_burst, BurstReassembler, Fragment, ReassemblyEvent, DEFAULT_FRAGMENT_SIZE,
};
use crate::{Error, Result};

/// Stream id of the channel-loss draws; station `i` uses `i + 1`.
const LOSS_STREAM: u64 = 0;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Vr {
        target_rate_bps: f64,
        frame_rate: f64,
        constants: VrModelConstants,
    },
    Simple {
        size: Variate,
        /// Seconds.
        period: Variate,
    },
    Trace {
        #[serde(serialize_with = "trace_summary")]
        trace: Arc<TraceFile>,
        start_time_s: f64,
    },
}

fn trace_summary<S: Serializer>(
    trace: &Arc<TraceFile>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Summary<'a> {
        records: usize,
        duration_ns: u64,
        metadata: &'a std::collections::BTreeMap<String, String>,
    }
    Summary {
        records: trace.records.len(),
        duration_ns: trace.duration_ns(),
        metadata: &trace.metadata,
    }
    .serialize(s)
}

impl SourceSpec {
    pub fn vr(rate_mbps: f64, fps: f64) -> Self {
        SourceSpec::Vr {
            target_rate_bps: rate_mbps * 1e6,
            frame_rate: fps,
            constants: VrModelConstants::default(),
        }
    }

    pub fn build(&self, rng: RngStream) -> Result<Box<dyn BurstGenerator + Send>> {
        Ok(match self {
            SourceSpec::Vr {
                target_rate_bps,
                frame_rate,
                constants,
            } => {
                let params = VrStreamParams::new(*target_rate_bps, *frame_rate)?;
                Box::new(VrBurstGenerator::new(
                    VrModel::new(params, *constants)?,
                    rng,
                ))
            }
            SourceSpec::Simple { size, period } => {
                Box::new(SimpleBurstGenerator::new(size.clone(), period.clone(), rng))
            }
            SourceSpec::Trace {
                trace,
                start_time_s,
            } => {
                let mut g = TraceFileBurstGenerator::new(trace.clone());
                g.seek_start_time(*start_time_s);
                Box::new(g)
            }
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StationConfig {
    pub source: SourceSpec,
    pub start_offset_ns: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioConfig {
    pub stations: Vec<StationConfig>,
    pub link_rate_bps: u64,
    pub propagation_delay_ns: u64,
    /// Extra bytes per fragment on the link, modelling lower-layer headers.
    pub overhead_bytes: u64,
    pub loss_prob: f64,
    /// Waiting-room size in fragments; 0 means unbounded, otherwise tail drop.
    pub queue_limit: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub fragment_size: usize,
}

impl ScenarioConfig {
    /// `n` identical stations on a link, with defaults for everything else.
    pub fn uniform(
        n: usize,
        source: SourceSpec,
        link_rate_bps: u64,
        duration_s: f64,
        seed: u64,
    ) -> Self {
        Self {
            stations: (0..n)
                .map(|_| StationConfig {
                    source: source.clone(),
                    start_offset_ns: 0,
                })
                .collect(),
            link_rate_bps,
            propagation_delay_ns: 0,
            overhead_bytes: 0,
            loss_prob: 0.0,
            queue_limit: 0,
            duration_s,
            seed,
            fragment_size: DEFAULT_FRAGMENT_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_rate_bps == 0 {
            return Err(Error::Config("link rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::Config(format!(
                "loss probability {} outside [0, 1]",
                self.loss_prob
            )));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!(
                "invalid duration {}",
                self.duration_s
            )));
        }
        crate::wire::payload_capacity(self.fragment_size)?;
        Ok(())
    }

    fn duration_ns(&self) -> u64 {
        (self.duration_s * 1e9).round() as u64
    }
}

/// Pending events keyed by time, ties broken by insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
}

#[derive(Debug)]
struct Entry<E> {
    time: u64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: u64, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, seq, event }));
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        self.heap.pop().map(|Reverse(e)| (e.time, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Nearest-rank percentile: the sorted sample at 1-based rank `ceil(p n / 100)`.
pub fn percentile<T: Copy + Ord>(samples: &[T], p: f64) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("percentile of no samples".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Domain {
            value: p,
            domain: "(0, 100]",
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(nearest_rank(&sorted, p))
}

fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FragmentRecord {
    pub station: usize,
    pub burst_seq: u32,
    pub delay_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BurstOutcome {
    Received { delay_ns: u64 },
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BurstRecord {
    pub station: usize,
    pub burst_seq: u32,
    pub burst_size: u64,
    pub outcome: BurstOutcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub fragments_offered: u64,
    pub queue_drops: u64,
    pub channel_losses: u64,
    pub fragments_delivered: u64,
    /// Bytes (overhead included) whose transmission finished within the
    /// generation window.
    pub bytes_served_in_window: u64,
    pub bytes_served: u64,
    pub payload_bytes_delivered: u64,
}

/// Everything observed during one run, before aggregation.
#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub duration_ns: u64,
    pub bursts_sent: Vec<u64>,
    pub fragments: Vec<FragmentRecord>,
    pub bursts: Vec<BurstRecord>,
    pub link: LinkStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FragmentSummary {
    pub count: u64,
    pub mean_delay_ns: Option<f64>,
    pub std_delay_ns: Option<f64>,
    pub p95_delay_ns: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BurstSummary {
    /// Bursts generated by the stations.
    pub count: u64,
    pub received: u64,
    /// `count - received`: discarded at the sink or never seen there.
    pub failed: u64,
    pub discarded: u64,
    pub mean_delay_ns: Option<f64>,
    pub std_delay_ns: Option<f64>,
    pub p95_delay_ns: Option<u64>,
    pub success_ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StationReport {
    pub station: usize,
    pub fragment: FragmentSummary,
    pub burst: BurstSummary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub config: serde_json::Value,
    pub rng_algorithm: String,
    pub duration_s: f64,
    pub fragment: FragmentSummary,
    pub burst: BurstSummary,
    /// Delivered payload bits over the generation window.
    pub throughput_bps: f64,
    pub link: LinkStats,
    pub per_station: Vec<StationReport>,
}

fn mean_std(samples: &[u64]) -> (Option<f64>, Option<f64>) {
    if samples.is_empty() {
        return (None, None);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / n;
    let std = if samples.len() > 1 {
        let ss = samples
            .iter()
            .map(|&x| (x as f64 - mean).powi(2))
            .sum::<f64>();
        Some((ss / (n - 1.0)).sqrt())
    } else {
        Some(0.0)
    };
    (Some(mean), std)
}

fn summarize_fragments<'a>(records: impl Iterator<Item = &'a FragmentRecord>) -> FragmentSummary {
    let mut delays: Vec<u64> = records.map(|r| r.delay_ns).collect();
    delays.sort_unstable();
    let (mean, std) = mean_std(&delays);
    FragmentSummary {
        count: delays.len() as u64,
        mean_delay_ns: mean,
        std_delay_ns: std,
        p95_delay_ns: (!delays.is_empty()).then(|| nearest_rank(&delays, 95.0)),
    }
}

fn summarize_bursts<'a>(sent: u64, records: impl Iterator<Item = &'a BurstRecord>) -> BurstSummary {
    let mut delays = Vec::new();
    let mut discarded = 0;
    for r in records {
        match r.outcome {
            BurstOutcome::Received { delay_ns } => delays.push(delay_ns),
            BurstOutcome::Discarded => discarded += 1,
        }
    }
    delays.sort_unstable();
    let (mean, std) = mean_std(&delays);
    let received = delays.len() as u64;
    BurstSummary {
        count: sent,
        received,
        failed: sent.saturating_sub(received),
        discarded,
        mean_delay_ns: mean,
        std_delay_ns: std,
        p95_delay_ns: (!delays.is_empty()).then(|| nearest_rank(&delays, 95.0)),
        success_ratio: (sent > 0).then(|| received as f64 / sent as f64),
    }
}

/// Aggregates a run log. Burst delays come only from received bursts;
/// fragment delays from every delivered fragment.
pub fn summarize(log: &RunLog) -> MetricsReport {
    let sent_total = log.bursts_sent.iter().sum();
    let per_station = log
        .bursts_sent
        .iter()
        .enumerate()
        .map(|(station, &sent)| StationReport {
            station,
            fragment: summarize_fragments(log.fragments.iter().filter(|r| r.station == station)),
            burst: summarize_bursts(sent, log.bursts.iter().filter(|r| r.station == station)),
        })
        .collect();
    let duration_s = log.duration_ns as f64 / 1e9;
    MetricsReport {
        config: serde_json::Value::Null,
        rng_algorithm: RNG_ALGORITHM.to_owned(),
        duration_s,
        fragment: summarize_fragments(log.fragments.iter()),
        burst: summarize_bursts(sent_total, log.bursts.iter()),
        throughput_bps: if duration_s > 0.0 {
            log.link.payload_bytes_delivered as f64 * 8.0 / duration_s
        } else {
            0.0
        },
        link: log.link,
        per_station,
    }
}

#[derive(Debug)]
enum SimEvent {
    Generate { station: usize },
    TxDone,
    Arrive { station: usize, fragment: Fragment },
}

struct Station {
    generator: Box<dyn BurstGenerator + Send>,
    next_seq: u32,
    reassembler: BurstReassembler,
}

struct Link {
    rate_bps: u64,
    overhead: u64,
    queue_limit: usize,
    in_service: Option<(usize, Fragment)>,
    waiting: VecDeque<(usize, Fragment)>,
}

impl Link {
    fn service_ns(&self, f: &Fragment) -> u64 {
        let bits = (f.wire_len() as u128 + self.overhead as u128) * 8;
        (bits * 1_000_000_000).div_ceil(self.rate_bps as u128) as u64
    }
}

/// Runs the scenario and returns the raw observations.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunLog> {
    cfg.validate()?;
    let duration_ns = cfg.duration_ns();
    let mut stations = cfg
        .stations
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Station {
                generator: s.source.build(RngStream::new(cfg.seed, i as u64 + 1))?,
                next_seq: 0,
                reassembler: BurstReassembler::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss_rng = RngStream::new(cfg.seed, LOSS_STREAM);
    let mut link = Link {
        rate_bps: cfg.link_rate_bps,
        overhead: cfg.overhead_bytes,
        queue_limit: cfg.queue_limit,
        in_service: None,
        waiting: VecDeque::new(),
    };
    let mut log = RunLog {
        duration_ns,
        bursts_sent: vec![0; stations.len()],
        ..Default::default()
    };
    let mut queue = EventQueue::new();
    for (i, s) in cfg.stations.iter().enumerate() {
        if s.start_offset_ns < duration_ns {
            queue.push(s.start_offset_ns, SimEvent::Generate { station: i });
        }
    }

    while let Some((now, event)) = queue.pop() {
        match event {
            SimEvent::Generate { station } => {
                let st = &mut stations[station];
                if !st.generator.has_next_burst() {
                    continue;
                }
                let burst = st.generator.generate_burst()?;
                let seq = st.next_seq;
                st.next_seq = st.next_seq.wrapping_add(1);
                log.bursts_sent[station] += 1;
                for fragment in fragment_burst(seq, burst.burst_size, now, cfg.fragment_size)? {
                    log.link.fragments_offered += 1;
                    if link.in_service.is_none() {
                        queue.push(now + link.service_ns(&fragment), SimEvent::TxDone);
                        link.in_service = Some((station, fragment));
                    } else if link.queue_limit == 0 || link.waiting.len() < link.queue_limit {
                        link.waiting.push_back((station, fragment));
                    } else {
                        log.link.queue_drops += 1;
                    }
                }
                let next = now.saturating_add(burst.next_period_ns);
                if next < duration_ns {
                    queue.push(next, SimEvent::Generate { station });
                }
            }
            SimEvent::TxDone => {
                let (station, fragment) = link.in_service.take().expect("TxDone with idle link");
                let bytes = fragment.wire_len() as u64 + link.overhead;
                log.link.bytes_served += bytes;
                if now <= duration_ns {
                    log.link.bytes_served_in_window += bytes;
                }
                if cfg.loss_prob > 0.0 && loss_rng.uniform() < cfg.loss_prob {
                    log.link.channel_losses += 1;
                } else {
                    queue.push(
                        now + cfg.propagation_delay_ns,
                        SimEvent::Arrive { station, fragment },
                    );
                }
                if let Some(next) = link.waiting.pop_front() {
                    queue.push(now + link.service_ns(&next.1), SimEvent::TxDone);
                    link.in_service = Some(next);
                }
            }
            SimEvent::Arrive { station, fragment } => {
                let h = fragment.header;
                log.link.fragments_delivered += 1;
                if now <= duration_ns {
                    log.link.payload_bytes_delivered += fragment.payload_len as u64;
                }
                log.fragments.push(FragmentRecord {
                    station,
                    burst_seq: h.burst_seq,
                    delay_ns: now - h.timestamp_ns,
                });
                let events =
                    stations[station]
                        .reassembler
                        .on_fragment(&h, fragment.payload_len, now);
                for ev in events {
                    match ev {
                        ReassemblyEvent::BurstReceived(b) => log.bursts.push(BurstRecord {
                            station,
                            burst_seq: b.burst_seq,
                            burst_size: b.burst_size,
                            outcome: BurstOutcome::Received {
                                delay_ns: b.delay_ns as u64,
                            },
                        }),
                        ReassemblyEvent::BurstDiscarded(d) => log.bursts.push(BurstRecord {
                            station,
                            burst_seq: d.burst_seq,
                            burst_size: d.burst_size,
                            outcome: BurstOutcome::Discarded,
                        }),
                        _ => {}
                    }
                }
            }
        }
    }

    for (station, st) in stations.iter_mut().enumerate() {
        if let Some(d) = st.reassembler.finish() {
            log.bursts.push(BurstRecord {
                station,
                burst_seq: d.burst_seq,
                burst_size: d.burst_size,
                outcome: BurstOutcome::Discarded,
            });
        }
    }
    Ok(log)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    let log = simulate(cfg)?;
    let mut report = summarize(&log);
    report.config = serde_json::to_value(cfg)?;
    Ok(report)
}
