//! Fragment header codec, burst fragmentation and reassembly.
//!
//! Header layout, 24 bytes, big-endian:
//!
//! | offset | size | field        |
//! |--------|------|--------------|
//! | 0      | 4    | burst_seq    |
//! | 4      | 2    | frag_index   |
//! | 6      | 2    | frag_count   |
//! | 8      | 8    | burst_size   |
//! | 16     | 8    | timestamp_ns |
//!
//! A fragment of `fragment_size` bytes carries `fragment_size - 24` payload
//! bytes. Reassembly is best effort: one burst is collected at a time, all
//! fragments are required, and the arrival of a newer burst discards an
//! incomplete one.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const HEADER_LEN: usize = 24;

/// Default fragment size on the wire, header included.
pub const DEFAULT_FRAGMENT_SIZE: usize = 1278;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FragmentHeader {
    pub burst_seq: u32,
    pub frag_index: u16,
    pub frag_count: u16,
    pub burst_size: u64,
    pub timestamp_ns: u64,
}

impl FragmentHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(&self.burst_seq.to_be_bytes());
        buf[4..6].copy_from_slice(&self.frag_index.to_be_bytes());
        buf[6..8].copy_from_slice(&self.frag_count.to_be_bytes());
        buf[8..16].copy_from_slice(&self.burst_size.to_be_bytes());
        buf[16..24].copy_from_slice(&self.timestamp_ns.to_be_bytes());
        buf
    }

    /// Decodes the first 24 bytes of `buf`; trailing payload is ignored.
    pub fn decode(buf: &[u8]) -> Result<Self> {
        let Some(b) = buf.get(..HEADER_LEN) else {
            return Err(Error::Decode(format!(
                "need {HEADER_LEN} bytes, got {}",
                buf.len()
            )));
        };
        let h = Self {
            burst_seq: u32::from_be_bytes(b[0..4].try_into().unwrap()),
            frag_index: u16::from_be_bytes(b[4..6].try_into().unwrap()),
            frag_count: u16::from_be_bytes(b[6..8].try_into().unwrap()),
            burst_size: u64::from_be_bytes(b[8..16].try_into().unwrap()),
            timestamp_ns: u64::from_be_bytes(b[16..24].try_into().unwrap()),
        };
        if h.frag_count == 0 || h.frag_index >= h.frag_count {
            return Err(Error::Decode(format!(
                "fragment index {} not below count {}",
                h.frag_index, h.frag_count
            )));
        }
        Ok(h)
    }
}

pub fn encode_header(h: &FragmentHeader) -> [u8; HEADER_LEN] {
    h.encode()
}

pub fn decode_header(buf: &[u8]) -> Result<FragmentHeader> {
    FragmentHeader::decode(buf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub header: FragmentHeader,
    pub payload_len: usize,
}

impl Fragment {
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload_len
    }

    /// Header followed by a zero-filled payload.
    pub fn to_datagram(&self) -> Vec<u8> {
        let mut buf = vec![0u8; self.wire_len()];
        buf[..HEADER_LEN].copy_from_slice(&self.header.encode());
        buf
    }

    /// Inverse of [`Fragment::to_datagram`]: the payload length is whatever
    /// follows the header.
    pub fn from_datagram(buf: &[u8]) -> Result<Self> {
        let header = FragmentHeader::decode(buf)?;
        Ok(Self {
            header,
            payload_len: buf.len() - HEADER_LEN,
        })
    }
}

pub fn payload_capacity(fragment_size: usize) -> Result<usize> {
    if fragment_size <= HEADER_LEN {
        return Err(Error::Config(format!(
            "fragment size {fragment_size} leaves no room after the {HEADER_LEN}-byte header"
        )));
    }
    Ok(fragment_size - HEADER_LEN)
}

/// Splits a burst into full-capacity fragments followed by one remainder.
pub fn fragment_burst(
    burst_seq: u32,
    burst_size: u64,
    timestamp_ns: u64,
    fragment_size: usize,
) -> Result<Vec<Fragment>> {
    let cap = payload_capacity(fragment_size)? as u64;
    if burst_size == 0 {
        return Err(Error::Config("burst size must be at least 1 byte".into()));
    }
    let count = burst_size.div_ceil(cap);
    let frag_count = u16::try_from(count).map_err(|_| {
        Error::Config(format!(
            "burst of {burst_size} B needs {count} fragments of {cap} B payload; at most {} fit the header",
            u16::MAX
        ))
    })?;
    Ok((0..frag_count)
        .map(|i| {
            let offset = i as u64 * cap;
            Fragment {
                header: FragmentHeader {
                    burst_seq,
                    frag_index: i,
                    frag_count,
                    burst_size,
                    timestamp_ns,
                },
                payload_len: (burst_size - offset).min(cap) as usize,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceivedBurst {
    pub burst_seq: u32,
    pub burst_size: u64,
    /// Payload bytes of the distinct fragments that completed the burst.
    pub payload_bytes: u64,
    pub frag_count: u16,
    /// Arrival of the completing fragment minus the burst timestamp.
    pub delay_ns: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardedBurst {
    pub burst_seq: u32,
    pub burst_size: u64,
    pub fragments_received: u16,
    pub frag_count: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReassemblyEvent {
    FragmentAccepted { burst_seq: u32, frag_index: u16 },
    DuplicateFragment { burst_seq: u32, frag_index: u16 },
    LateFragmentIgnored { burst_seq: u32 },
    BurstReceived(ReceivedBurst),
    BurstDiscarded(DiscardedBurst),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReassemblyCounters {
    pub bursts_started: u64,
    pub bursts_received: u64,
    pub bursts_failed: u64,
    pub fragments_received: u64,
    pub bytes_received: u64,
}

#[derive(Clone, Debug)]
struct InProgress {
    burst_seq: u32,
    frag_count: u16,
    burst_size: u64,
    timestamp_ns: u64,
    seen: Vec<u64>,
    distinct: u16,
    payload_bytes: u64,
    complete: bool,
}

impl InProgress {
    fn new(h: &FragmentHeader) -> Self {
        Self {
            burst_seq: h.burst_seq,
            frag_count: h.frag_count,
            burst_size: h.burst_size,
            timestamp_ns: h.timestamp_ns,
            seen: vec![0; (h.frag_count as usize).div_ceil(64)],
            distinct: 0,
            payload_bytes: 0,
            complete: false,
        }
    }

    /// Marks an index; false if it was already present.
    fn insert(&mut self, index: u16) -> bool {
        let (word, bit) = (index as usize / 64, index % 64);
        let fresh = self.seen[word] & (1 << bit) == 0;
        self.seen[word] |= 1 << bit;
        fresh
    }
}

/// Per-flow best-effort reassembly.
#[derive(Clone, Debug, Default)]
pub struct BurstReassembler {
    current: Option<InProgress>,
    counters: ReassemblyCounters,
}

impl BurstReassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> ReassemblyCounters {
        self.counters
    }

    pub fn current_burst_seq(&self) -> Option<u32> {
        self.current.as_ref().map(|c| c.burst_seq)
    }

    /// Classifies one arriving fragment. Returns one event, or two when a
    /// newer burst discards the incomplete current one (the discard first).
    pub fn on_fragment(
        &mut self,
        h: &FragmentHeader,
        payload_len: usize,
        arrival_ns: u64,
    ) -> Vec<ReassemblyEvent> {
        self.counters.fragments_received += 1;
        self.counters.bytes_received += payload_len as u64;

        let mut events = Vec::with_capacity(2);
        match self.current.as_ref().map(|c| c.burst_seq) {
            Some(cur) if h.burst_seq < cur => {
                events.push(ReassemblyEvent::LateFragmentIgnored {
                    burst_seq: h.burst_seq,
                });
                return events;
            }
            Some(cur) if h.burst_seq == cur => {}
            _ => {
                if let Some(prev) = self.current.take().filter(|c| !c.complete) {
                    self.counters.bursts_failed += 1;
                    events.push(ReassemblyEvent::BurstDiscarded(DiscardedBurst {
                        burst_seq: prev.burst_seq,
                        burst_size: prev.burst_size,
                        fragments_received: prev.distinct,
                        frag_count: prev.frag_count,
                    }));
                }
                self.counters.bursts_started += 1;
                self.current = Some(InProgress::new(h));
            }
        }

        let cur = self.current.as_mut().expect("current burst set above");
        // Fragments disagreeing with the first one seen on their burst count
        // are treated like duplicates rather than corrupting the index set.
        if h.frag_index >= cur.frag_count || cur.complete || !cur.insert(h.frag_index) {
            events.push(ReassemblyEvent::DuplicateFragment {
                burst_seq: h.burst_seq,
                frag_index: h.frag_index,
            });
            return events;
        }
        cur.distinct += 1;
        cur.payload_bytes += payload_len as u64;
        if cur.distinct == cur.frag_count {
            cur.complete = true;
            self.counters.bursts_received += 1;
            events.push(ReassemblyEvent::BurstReceived(ReceivedBurst {
                burst_seq: cur.burst_seq,
                burst_size: cur.burst_size,
                payload_bytes: cur.payload_bytes,
                frag_count: cur.frag_count,
                delay_ns: arrival_ns as i64 - cur.timestamp_ns as i64,
            }));
        } else {
            events.push(ReassemblyEvent::FragmentAccepted {
                burst_seq: h.burst_seq,
                frag_index: h.frag_index,
            });
        }
        events
    }

    /// Ends the flow: an incomplete in-progress burst is discarded.
    pub fn finish(&mut self) -> Option<DiscardedBurst> {
        let prev = self.current.take().filter(|c| !c.complete)?;
        self.counters.bursts_failed += 1;
        Some(DiscardedBurst {
            burst_seq: prev.burst_seq,
            burst_size: prev.burst_size,
            fragments_received: prev.distinct,
            frag_count: prev.frag_count,
        })
    }
}
