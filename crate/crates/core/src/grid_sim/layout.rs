//! Relay/channel bookkeeping for the double-line benchmark grid.
//!
//! Each protection relay records three phase currents followed by three
//! phase voltages, so relay `r` (1-based) owns channels `(r-1)*6 .. (r-1)*6+6`.

use std::fmt;

use crate::error::{Error, Result};

pub const RELAY_COUNT: usize = 8;
pub const CHANNELS_PER_RELAY: usize = 6;
pub const CHANNEL_COUNT: usize = RELAY_COUNT * CHANNELS_PER_RELAY;
pub const LINE_COUNT: usize = 4;
pub const SUBSTATION_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Current,
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

/// Where a relay sits: which line it protects and at which substation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayPlacement {
    /// Line id, 1-based.
    pub line: usize,
    /// Substation id, 1-based.
    pub substation: usize,
}

/// Lines and relay placements. Lines connect two substations; the first
/// substation of each pair is the lower-numbered terminal, from which fault
/// location fractions are measured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub lines: Vec<(usize, usize)>,
    pub relays: Vec<RelayPlacement>,
}

impl Topology {
    /// Two parallel lines S1-S2 (lines 1, 2) and two parallel lines S2-S3
    /// (lines 3, 4). Relays 1, 2 sit at S1, relays 3-6 at S2, relays 7, 8 at S3.
    pub fn double_line() -> Self {
        let relay = |line, substation| RelayPlacement { line, substation };
        Topology {
            lines: vec![(1, 2), (1, 2), (2, 3), (2, 3)],
            relays: vec![
                relay(1, 1),
                relay(2, 1),
                relay(1, 2),
                relay(2, 2),
                relay(3, 2),
                relay(4, 2),
                relay(3, 3),
                relay(4, 3),
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lines.len() != LINE_COUNT {
            return Err(Error::param(format!(
                "topology needs {LINE_COUNT} lines, got {}",
                self.lines.len()
            )));
        }
        if self.relays.len() != RELAY_COUNT {
            return Err(Error::param(format!(
                "topology needs {RELAY_COUNT} relays, got {}",
                self.relays.len()
            )));
        }
        for (i, &(a, b)) in self.lines.iter().enumerate() {
            if a >= b || a < 1 || b > SUBSTATION_COUNT {
                return Err(Error::param(format!(
                    "line {} must join two distinct substations in 1..={SUBSTATION_COUNT} \
                     with the lower id first, got ({a}, {b})",
                    i + 1
                )));
            }
        }
        for line in 1..=LINE_COUNT {
            let (a, b) = self.lines[line - 1];
            let mut ends: Vec<usize> = self
                .relays
                .iter()
                .filter(|r| r.line == line)
                .map(|r| r.substation)
                .collect();
            ends.sort_unstable();
            if ends != [a, b] {
                return Err(Error::param(format!(
                    "line {line} needs exactly one relay at each of substations {a} and {b}"
                )));
            }
        }
        for s in 1..=SUBSTATION_COUNT {
            if !self.relays.iter().any(|r| r.substation == s) {
                return Err(Error::param(format!("substation {s} has no relay")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLayout {
    topology: Topology,
}

impl Default for ChannelLayout {
    fn default() -> Self {
        build_channel_layout()
    }
}

/// The canonical layout over the double-line topology.
pub fn build_channel_layout() -> ChannelLayout {
    ChannelLayout {
        topology: Topology::double_line(),
    }
}

impl ChannelLayout {
    pub fn with_topology(topology: Topology) -> Result<Self> {
        topology.validate()?;
        Ok(ChannelLayout { topology })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn relay_count(&self) -> usize {
        RELAY_COUNT
    }

    pub fn channels_per_relay(&self) -> usize {
        CHANNELS_PER_RELAY
    }

    /// Channel index of `(relay, quantity, phase)`; relays are 1-based.
    pub fn channel(&self, relay: usize, quantity: Quantity, phase: Phase) -> Result<usize> {
        if !(1..=RELAY_COUNT).contains(&relay) {
            return Err(Error::param(format!(
                "relay {relay} out of range 1..{RELAY_COUNT}"
            )));
        }
        let q = match quantity {
            Quantity::Current => 0,
            Quantity::Voltage => 3,
        };
        Ok((relay - 1) * CHANNELS_PER_RELAY + q + phase.index())
    }

    /// Inverse of [`ChannelLayout::channel`].
    pub fn describe(&self, channel: usize) -> Result<(usize, Quantity, Phase)> {
        if channel >= CHANNEL_COUNT {
            return Err(Error::param(format!(
                "channel {channel} out of range 0..{}",
                CHANNEL_COUNT - 1
            )));
        }
        let relay = channel / CHANNELS_PER_RELAY + 1;
        let within = channel % CHANNELS_PER_RELAY;
        let quantity = if within < 3 {
            Quantity::Current
        } else {
            Quantity::Voltage
        };
        let phase = Phase::from_index(within % 3).expect("index < 3");
        Ok((relay, quantity, phase))
    }

    pub fn relay_placement(&self, relay: usize) -> RelayPlacement {
        self.topology.relays[relay - 1]
    }

    pub fn relay_substation(&self, relay: usize) -> usize {
        self.relay_placement(relay).substation
    }

    pub fn relay_line(&self, relay: usize) -> usize {
        self.relay_placement(relay).line
    }

    /// Relays installed at `substation`, ascending.
    pub fn relays_at(&self, substation: usize) -> Vec<usize> {
        (1..=RELAY_COUNT)
            .filter(|&r| self.relay_substation(r) == substation)
            .collect()
    }

    /// Terminal substations of `line` as (lower, upper).
    pub fn line_ends(&self, line: usize) -> (usize, usize) {
        self.topology.lines[line - 1]
    }

    /// Relay protecting `line` at `substation`, if any.
    pub fn terminal_relay(&self, line: usize, substation: usize) -> Option<usize> {
        (1..=RELAY_COUNT).find(|&r| {
            let p = self.relay_placement(r);
            p.line == line && p.substation == substation
        })
    }

    /// Number of line hops between two substations (BFS over the line graph).
    pub fn substation_hops(&self, from: usize, to: usize) -> usize {
        let mut dist = [usize::MAX; SUBSTATION_COUNT + 1];
        dist[from] = 0;
        let mut frontier = vec![from];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &s in &frontier {
                for &(a, b) in &self.topology.lines {
                    let other = if a == s {
                        b
                    } else if b == s {
                        a
                    } else {
                        continue;
                    };
                    if dist[other] == usize::MAX {
                        dist[other] = dist[s] + 1;
                        next.push(other);
                    }
                }
            }
            frontier = next;
        }
        dist[to]
    }
}
