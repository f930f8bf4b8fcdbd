//! Live UDP mode.
//!
//! The sender fragments each burst and writes the datagrams back-to-back,
//! then sleeps until the next burst is due. The receiver runs one
//! reassembler per source address and logs one line per burst outcome.
//!
//! Delays are receiver clock minus sender timestamp (nanoseconds since the
//! Unix epoch), so they are only meaningful when both clocks agree.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use burstlab::rv::RngStream;
use burstlab::wire::{
    fragment_burst, BurstReassembler, Fragment, ReassemblyEvent, DEFAULT_FRAGMENT_SIZE,
};
use clap::Args;

use crate::{CliError, Result, SourceArgs};

/// Largest UDP payload that fits a 1500-byte Ethernet MTU over IPv4.
pub const PATH_MTU_PAYLOAD: usize = 1472;

#[derive(Clone, Debug, Args)]
pub struct SendArgs {
    #[arg(long)]
    pub dest: SocketAddr,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = DEFAULT_FRAGMENT_SIZE)]
    pub fragment_size: usize,
    /// Stop once bursts would start after this time, seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration_s: f64,
    /// Stop after this many bursts.
    #[arg(long)]
    pub count: Option<u64>,
    /// Send bursts as fast as possible instead of honouring the periods.
    #[arg(long)]
    pub no_pacing: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SendSummary {
    pub bursts: u64,
    pub datagrams: u64,
    pub bytes: u64,
}

fn now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

pub fn mtu_warning(fragment_size: usize) -> Option<String> {
    (fragment_size > PATH_MTU_PAYLOAD).then(|| {
        format!(
            "warning: fragment size {fragment_size} exceeds the {PATH_MTU_PAYLOAD}-byte UDP payload of a 1500-byte MTU; datagrams may be IP-fragmented"
        )
    })
}

pub fn send_on(socket: &UdpSocket, args: &SendArgs) -> Result<SendSummary> {
    burstlab::wire::payload_capacity(args.fragment_size)?;
    let spec = args.source.to_spec()?;
    let mut generator = spec.build(RngStream::new(args.seed, 1))?;
    let horizon = Duration::from_secs_f64(args.duration_s.max(0.0));
    let start = Instant::now();
    let mut due = Duration::ZERO;
    let mut summary = SendSummary::default();
    let mut seq: u32 = 0;
    while due < horizon
        && generator.has_next_burst()
        && args.count.is_none_or(|c| summary.bursts < c)
    {
        if !args.no_pacing {
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let burst = generator.generate_burst()?;
        for frag in fragment_burst(seq, burst.burst_size, now_ns(), args.fragment_size)? {
            let datagram = frag.to_datagram();
            socket
                .send_to(&datagram, args.dest)
                .map_err(|e| CliError::io(format!("sending to {}", args.dest), e))?;
            summary.datagrams += 1;
            summary.bytes += datagram.len() as u64;
        }
        summary.bursts += 1;
        seq = seq.wrapping_add(1);
        due += Duration::from_nanos(burst.next_period_ns);
    }
    Ok(summary)
}

pub fn cmd_send(args: &SendArgs) -> Result<()> {
    if let Some(w) = mtu_warning(args.fragment_size) {
        eprintln!("{w}");
    }
    let bind = if args.dest.is_ipv4() {
        "0.0.0.0:0"
    } else {
        "[::]:0"
    };
    let socket = UdpSocket::bind(bind).map_err(|e| CliError::io(format!("binding {bind}"), e))?;
    let s = send_on(&socket, args)?;
    eprintln!(
        "sent {} bursts, {} datagrams, {} bytes to {}",
        s.bursts, s.datagrams, s.bytes, args.dest
    );
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct RecvArgs {
    #[arg(long)]
    pub listen: SocketAddr,
    /// Event CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop after this long without a datagram, seconds.
    #[arg(long, default_value_t = 5.0)]
    pub timeout_s: f64,
    /// Stop once this many burst outcomes have been logged.
    #[arg(long)]
    pub max_bursts: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Received,
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BurstEvent {
    pub flow: SocketAddr,
    pub burst_seq: u32,
    pub outcome: Outcome,
    pub delay_ns: Option<i64>,
    pub size: u64,
}

pub fn recv_on(socket: &UdpSocket, args: &RecvArgs) -> Result<Vec<BurstEvent>> {
    let idle = Duration::from_secs_f64(args.timeout_s.max(0.001));
    socket
        .set_read_timeout(Some(idle))
        .map_err(|e| CliError::io("setting socket timeout", e))?;
    let mut flows: BTreeMap<SocketAddr, BurstReassembler> = BTreeMap::new();
    let mut events = Vec::new();
    let mut buf = vec![0u8; 65_536];
    let done = |events: &Vec<BurstEvent>| args.max_bursts.is_some_and(|m| events.len() as u64 >= m);
    while !done(&events) {
        let (len, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
            Err(e) => return Err(CliError::io("receiving", e)),
        };
        let arrival = now_ns();
        let Ok(frag) = Fragment::from_datagram(&buf[..len]) else {
            continue;
        };
        let r = flows.entry(from).or_default();
        for ev in r.on_fragment(&frag.header, frag.payload_len, arrival) {
            match ev {
                ReassemblyEvent::BurstReceived(b) => events.push(BurstEvent {
                    flow: from,
                    burst_seq: b.burst_seq,
                    outcome: Outcome::Received,
                    delay_ns: Some(b.delay_ns),
                    size: b.burst_size,
                }),
                ReassemblyEvent::BurstDiscarded(d) => events.push(BurstEvent {
                    flow: from,
                    burst_seq: d.burst_seq,
                    outcome: Outcome::Discarded,
                    delay_ns: None,
                    size: d.burst_size,
                }),
                _ => {}
            }
        }
    }
    for (flow, r) in flows.iter_mut() {
        if let Some(d) = r.finish() {
            events.push(BurstEvent {
                flow: *flow,
                burst_seq: d.burst_seq,
                outcome: Outcome::Discarded,
                delay_ns: None,
                size: d.burst_size,
            });
        }
    }
    Ok(events)
}

pub fn events_csv(args: &RecvArgs, events: &[BurstEvent]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# generator: burstlab recv");
    let _ = writeln!(s, "# listen: {}", args.listen);
    let _ = writeln!(s, "# timeout_s: {}", args.timeout_s);
    let _ = writeln!(
        s,
        "# clock_sync: unverified (delay = receiver clock - sender timestamp)"
    );
    let _ = writeln!(s, "burst_seq,outcome,delay_ns,size,flow");
    for e in events {
        let outcome = match e.outcome {
            Outcome::Received => "received",
            Outcome::Discarded => "discarded",
        };
        let delay = e.delay_ns.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{outcome},{delay},{},{}", e.burst_seq, e.size, e.flow);
    }
    s
}

pub fn cmd_recv(args: &RecvArgs) -> Result<()> {
    let socket = UdpSocket::bind(args.listen)
        .map_err(|e| CliError::io(format!("binding {}", args.listen), e))?;
    let events = recv_on(&socket, args)?;
    crate::write_output(args.out.as_deref(), &events_csv(args, &events))
}
