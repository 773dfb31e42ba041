//! Time-indexed record of a run and its regret ledgers, plus CSV export.

use std::io::Write;

use crate::error::{Error, Result};

/// Label of the protocol phase a slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TracePhase {
    Explore,
    Auction,
    Exploit,
    /// Uniformly random channel selection baseline.
    Random,
    /// Every link handed the optimal channel from the first slot.
    Genie,
}

impl TracePhase {
    pub fn name(self) -> &'static str {
        match self {
            TracePhase::Explore => "explore",
            TracePhase::Auction => "auction",
            TracePhase::Exploit => "exploit",
            TracePhase::Random => "random",
            TracePhase::Genie => "genie",
        }
    }
}

/// Ledger state after slot `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    /// 1-based slot index.
    pub t: u64,
    pub packet: u64,
    pub phase: TracePhase,
    /// Sum of realized rewards in this slot.
    pub reward: f64,
    /// Sum of expected rewards of the collision-free transmissions in this slot.
    pub expected_reward: f64,
    pub cum_regret: f64,
    pub cum_pseudo_regret: f64,
}

/// One link's action and reward in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRecord {
    /// Channel accessed, `0` if silent.
    pub action: usize,
    pub reward: f64,
}

/// Per-packet aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub packet: u64,
    /// First slot of the packet (1-based).
    pub start: u64,
    /// Slots actually simulated in each phase (shorter when cut at the horizon).
    pub explore_len: u64,
    pub auction_len: u64,
    pub exploit_len: u64,
    /// Back-off bits used during this packet's auction.
    pub bits: u32,
    /// Auction iterations until every link held a channel, if that happened.
    pub auction_iterations: Option<u64>,
    pub quantization_collisions: u64,
    /// Channels played in the exploitation phase.
    pub exploit_assignment: Vec<usize>,
    /// Whether that allocation attains the optimal expected sum.
    pub exploit_optimal: bool,
    pub regret_increment: f64,
    pub pseudo_regret_increment: f64,
}

/// The full record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_links: usize,
    pub horizon: u64,
    /// Optimal allocation and its expected sum `Σ_n Q_n*`.
    pub optimal_assignment: Vec<usize>,
    pub optimal_sum: f64,
    pub slots: Vec<SlotRecord>,
    /// `links[(t - 1) * n_links + n]`; empty unless per-link recording was requested.
    pub links: Vec<LinkRecord>,
    pub packets: Vec<PacketRecord>,
    pub total_reward: f64,
}

impl Trace {
    pub fn final_regret(&self) -> f64 {
        self.slots.last().map_or(0.0, |s| s.cum_regret)
    }

    pub fn final_pseudo_regret(&self) -> f64 {
        self.slots.last().map_or(0.0, |s| s.cum_pseudo_regret)
    }

    /// First packet whose exploitation allocation is optimal.
    pub fn convergence_packet(&self) -> Option<u64> {
        self.packets.iter().find(|p| p.exploit_optimal).map(|p| p.packet)
    }

    /// Cumulative pseudo-regret after slot `t` (0 for `t = 0`).
    pub fn cum_pseudo_at(&self, t: u64) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.slots[(t - 1) as usize].cum_pseudo_regret
        }
    }

    /// Writes one row per (slot, link):
    /// `t,packet,phase,link,action,reward,cum_regret,cum_pseudo_regret`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.links.len() != self.slots.len() * self.n_links {
            return Err(Error::Config("trace was recorded without per-link records".into()));
        }
        let io = |e| Error::io("<trace>", e);
        writeln!(out, "t,packet,phase,link,action,reward,cum_regret,cum_pseudo_regret").map_err(io)?;
        for (s, chunk) in self.slots.iter().zip(self.links.chunks(self.n_links.max(1))) {
            for (n, l) in chunk.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    s.t,
                    s.packet,
                    s.phase.name(),
                    n + 1,
                    l.action,
                    l.reward,
                    s.cum_regret,
                    s.cum_pseudo_regret
                )
                .map_err(io)?;
            }
        }
        Ok(())
    }

    /// Writes the per-packet summary.
    pub fn write_packets_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<packets>", e);
        writeln!(
            out,
            "packet,start,explore_len,auction_len,exploit_len,bits,auction_iterations,quantization_collisions,exploit_optimal,regret_increment,pseudo_regret_increment"
        )
        .map_err(io)?;
        for p in &self.packets {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                p.packet,
                p.start,
                p.explore_len,
                p.auction_len,
                p.exploit_len,
                p.bits,
                p.auction_iterations.map_or(String::new(), |v| v.to_string()),
                p.quantization_collisions,
                u8::from(p.exploit_optimal),
                p.regret_increment,
                p.pseudo_regret_increment
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Accumulates slots into a [`Trace`], stopping at the horizon.
#[derive(Debug)]
pub(crate) struct Ledger {
    trace: Trace,
    record_links: bool,
    cum_regret: f64,
    cum_pseudo: f64,
}

impl Ledger {
    pub(crate) fn new(
        n_links: usize,
        horizon: u64,
        optimal_assignment: Vec<usize>,
        optimal_sum: f64,
        record_links: bool,
    ) -> Self {
        Ledger {
            trace: Trace {
                n_links,
                horizon,
                optimal_assignment,
                optimal_sum,
                slots: Vec::with_capacity(horizon as usize),
                links: Vec::with_capacity(if record_links { horizon as usize * n_links } else { 0 }),
                packets: Vec::new(),
                total_reward: 0.0,
            },
            record_links,
            cum_regret: 0.0,
            cum_pseudo: 0.0,
        }
    }

    /// Slots recorded so far.
    pub(crate) fn t(&self) -> u64 {
        self.trace.slots.len() as u64
    }

    pub(crate) fn full(&self) -> bool {
        self.t() >= self.trace.horizon
    }

    pub(crate) fn cum(&self) -> (f64, f64) {
        (self.cum_regret, self.cum_pseudo)
    }

    /// Records one slot; returns false (recording nothing) once the horizon is reached.
    pub(crate) fn push(
        &mut self,
        packet: u64,
        phase: TracePhase,
        actions: &[usize],
        rewards: &[f64],
        expected_reward: f64,
    ) -> bool {
        if self.full() {
            return false;
        }
        let reward: f64 = rewards.iter().sum();
        self.cum_regret += self.trace.optimal_sum - reward;
        self.cum_pseudo += self.trace.optimal_sum - expected_reward;
        self.trace.total_reward += reward;
        let t = self.t() + 1;
        self.trace.slots.push(SlotRecord {
            t,
            packet,
            phase,
            reward,
            expected_reward,
            cum_regret: self.cum_regret,
            cum_pseudo_regret: self.cum_pseudo,
        });
        if self.record_links {
            self.trace.links.extend(
                actions
                    .iter()
                    .zip(rewards)
                    .map(|(&action, &reward)| LinkRecord { action, reward }),
            );
        }
        true
    }

    pub(crate) fn push_packet(&mut self, packet: PacketRecord) {
        self.trace.packets.push(packet);
    }

    pub(crate) fn finish(self) -> Trace {
        self.trace
    }
}
