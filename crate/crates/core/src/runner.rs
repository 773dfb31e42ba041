//! Packet schedule and the slot-by-slot simulation loop.
//!
//! Time is split into packets `k = 1, 2, …`, each an exploration phase of
//! `c_1` slots, an auction phase and an exploitation phase of `c_2·2^k` slots.
//! The run is cut at exactly `T` slots, possibly in the middle of a packet.

use rand::Rng;

use crate::agent::{LinkParams, LinkState, Status};
use crate::assignment::{assignment_value, solve_optimal, Assignment};
use crate::error::{Error, Result};
use crate::medium::{resolve_contention, resolve_voting, Action, ContentionEntry, ContentionObservation, ContentionResult, Medium};
use crate::model::{QosModel, RewardSampler, SamplerKind, SlotOutcome, SILENT};
use crate::rng::{stream_rng, Stream};
use crate::trace::{Ledger, PacketRecord, Trace, TracePhase};

/// How long the auction phase lasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuctionMode {
    /// `⌈4K²N(Q_M/Δ_min + 1/N)(2^b + 1)⌉` slots; every iteration occupies
    /// `2^b + 1` slots (contention window plus voting slot) and earns nothing.
    Theory,
    /// A fixed number of slots, each one CSMA frame: a contention window of
    /// short back-off micro-slots, the voting micro-slot, then the data
    /// transmission of every channel's winner.
    Practical { slots: u64 },
}

/// Everything one replication needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: QosModel,
    pub sampler: SamplerKind,
    /// Half-width of the reward band for the banded samplers.
    pub sampler_spread: f64,
    /// Exploration slots per packet, `c_1`.
    pub explore_len: u64,
    pub auction: AuctionMode,
    /// Exploitation scale `c_2`.
    pub c2: u64,
    pub b0: u32,
    pub eps: f64,
    /// Horizon `T` in slots.
    pub horizon: u64,
    pub seed: u64,
    /// Keep per-link action/reward records (needed for trace export).
    pub record_links: bool,
}

impl SimConfig {
    pub fn link_params(&self) -> LinkParams {
        LinkParams {
            n_links: self.model.n_links(),
            n_channels: self.model.n_channels(),
            delta_min: self.model.delta_min(),
            q_min: self.model.q_min(),
            q_max: self.model.q_max(),
            eps: self.eps,
            b0: self.b0,
        }
    }

    pub fn reward_sampler(&self) -> RewardSampler {
        RewardSampler::new(self.sampler, self.sampler_spread, &self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.link_params().validate()?;
        if self.c2 < 1 {
            return Err(Error::Config("c_2 >= 1 violated".into()));
        }
        if let AuctionMode::Practical { slots: 0 } = self.auction {
            return Err(Error::Config("practical auction needs at least one slot".into()));
        }
        Ok(())
    }
}

/// Phase lengths of packet `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketSchedule {
    pub k: u64,
    pub explore_len: u64,
    pub auction_len: u64,
    pub exploit_len: u64,
    pub bits: u32,
    /// Slots consumed by one auction iteration.
    pub iteration_slots: u64,
    /// Complete auction iterations that fit in the auction phase.
    pub auction_iterations: u64,
}

/// Phase lengths of packet `k` when the auction uses `bits` back-off bits.
pub fn packet_schedule(cfg: &SimConfig, k: u64, bits: u32) -> PacketSchedule {
    let (auction_len, iteration_slots) = match cfg.auction {
        AuctionMode::Theory => {
            let window = (1u64 << bits) + 1;
            (theory_auction_len(&cfg.model, bits), window)
        }
        AuctionMode::Practical { slots } => (slots, 1),
    };
    PacketSchedule {
        k,
        explore_len: cfg.explore_len,
        auction_len,
        exploit_len: cfg.c2.saturating_mul(1u64.checked_shl(k as u32).unwrap_or(u64::MAX)),
        bits,
        iteration_slots,
        auction_iterations: auction_len / iteration_slots,
    }
}

/// `⌈4K²N(Q_M/Δ_min + 1/N)(2^b + 1)⌉`, computed exactly as `4K²(N·Q_M/Δ_min + 1)(2^b + 1)`.
pub fn theory_auction_len(model: &QosModel, bits: u32) -> u64 {
    let k = model.n_channels() as u64;
    let n = model.n_links() as u64;
    let top = model.to_grid(model.q_max()) as u64;
    4 * k * k * (n * top + 1) * ((1u64 << bits) + 1)
}

/// Smallest exploration length satisfying
/// `c_1 ≥ K·max{81K/2, (128/9)(Δ_max/Δ_min)² N²}`.
pub fn min_explore_len(n_channels: usize, n_links: usize, delta_ratio: f64) -> u64 {
    let k = n_channels as f64;
    let n = n_links as f64;
    let bound = k * f64::max(40.5 * k, 128.0 / 9.0 * delta_ratio * delta_ratio * n * n);
    // guard against 162.00000000000003-style round-up
    let snapped = bound.round();
    if (bound - snapped).abs() < 1e-9 * bound.max(1.0) {
        snapped as u64
    } else {
        bound.ceil() as u64
    }
}

/// Upper bound `⌊log₂(T/c_2 + 2)⌋` on the number of packets started within `T` slots.
pub fn max_packets(horizon: u64, c2: u64) -> u64 {
    let x = horizon as f64 / c2 as f64 + 2.0;
    let mut e = x.log2().floor() as u64;
    // correct float error at exact powers of two
    while (1u128 << (e + 1)) as f64 <= x {
        e += 1;
    }
    while e > 0 && ((1u128 << e) as f64) > x {
        e -= 1;
    }
    e
}

/// Upper bound `KN + (KN/ε)(Q_M + Δ_min/8N)` on the bidding iterations an
/// auction needs with exact estimates.
pub fn auction_iteration_bound(n_links: usize, n_channels: usize, eps: f64, q_max: f64, delta_min: f64) -> f64 {
    let kn = (n_links * n_channels) as f64;
    kn + kn / eps * (q_max + delta_min / (8.0 * n_links as f64))
}

/// What happened in one auction iteration.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub entries: Vec<ContentionEntry>,
    pub result: ContentionResult,
    /// Fresh bids placed, by link.
    pub bids: Vec<(usize, crate::agent::Bid)>,
    /// Whether channel 1 carried energy in the voting slot.
    pub vote: bool,
}

/// Runs one auction iteration: every link still bidding or holding a channel
/// contends, the medium resolves the contention window, links observe their
/// own channel, then the voting slot.
pub fn auction_iteration(links: &mut [LinkState], n_channels: usize) -> Result<IterationOutcome> {
    let bits = links.first().map_or(1, |l| l.bits());
    let mut entries = Vec::with_capacity(links.len());
    let mut bids = Vec::new();
    for l in links.iter_mut() {
        if let Some((entry, bid)) = l.contend()? {
            entries.push(entry);
            if let Some(b) = bid {
                bids.push((l.id(), b));
            }
        }
    }
    let result = resolve_contention(&entries, links.len(), n_channels, bits)?;
    for (l, obs) in links.iter_mut().zip(&result.observations) {
        l.auction_observe(*obs)?;
    }
    let votes: Vec<bool> = links.iter().map(|l| l.vote()).collect();
    let vote = resolve_voting(&votes);
    for l in links.iter_mut() {
        l.observe_vote(vote);
    }
    Ok(IterationOutcome {
        entries,
        result,
        bids,
        vote,
    })
}

/// Summary of a stand-alone auction.
#[derive(Debug, Clone, Default)]
pub struct AuctionReport {
    /// Iterations until every link held a channel.
    pub iterations_to_assign: Option<u64>,
    pub iterations_run: u64,
    pub quantization_collisions: u64,
    /// Every fresh bid `(link, bid)` in order.
    pub bids: Vec<(usize, crate::agent::Bid)>,
    /// Final channel of each link (`0` when unassigned).
    pub assignment: Vec<usize>,
}

/// Runs up to `max_iterations` auction iterations on links whose estimates are
/// already set, stopping once every link holds a channel or no unassigned link
/// is left bidding.
pub fn run_auction(links: &mut [LinkState], n_channels: usize, max_iterations: u64) -> Result<AuctionReport> {
    for l in links.iter_mut() {
        l.begin_auction();
    }
    let mut report = AuctionReport::default();
    for it in 1..=max_iterations {
        let out = auction_iteration(links, n_channels)?;
        report.iterations_run = it;
        report.quantization_collisions += count_collisions(&out.result);
        report.bids.extend(out.bids);
        if links.iter().all(|l| l.status() == Status::Assigned) {
            report.iterations_to_assign = Some(it);
            break;
        }
        // nobody left to bid: the assignment can no longer change
        if links.iter().all(|l| l.status() == Status::Assigned || l.withdrawn()) {
            break;
        }
    }
    report.assignment = links.iter().map(|l| l.my_channel().unwrap_or(SILENT)).collect();
    Ok(report)
}

fn count_collisions(result: &ContentionResult) -> u64 {
    result
        .channels
        .iter()
        .filter(|c| matches!(c, crate::medium::ChannelContention::Collision { .. }))
        .count() as u64
}

fn expected_reward(model: &QosModel, outcome: &SlotOutcome, choices: &[usize]) -> f64 {
    choices
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c != SILENT && outcome.eta[c - 1] == 1)
        .map(|(n, &c)| model.mean(n, c))
        .sum()
}

fn optimum(model: &QosModel) -> Result<Assignment> {
    solve_optimal(&model.rows())
}

fn is_optimal(model: &QosModel, channels: &[usize], best: f64) -> Result<bool> {
    let v = assignment_value(&model.rows(), channels)?;
    Ok(model.to_grid(v) == model.to_grid(best))
}

/// Runs the distributed protocol for exactly `horizon` slots.
pub fn run_simulation(cfg: &SimConfig) -> Result<Trace> {
    cfg.validate()?;
    let model = &cfg.model;
    let (n, k) = (model.n_links(), model.n_channels());
    let params = cfg.link_params();
    let mut links: Vec<LinkState> = (0..n)
        .map(|id| LinkState::new(id, params, cfg.seed))
        .collect::<Result<_>>()?;
    let mut medium = Medium::new(cfg.reward_sampler(), n, k, cfg.seed);
    let opt = optimum(model)?;
    let mut ledger = Ledger::new(n, cfg.horizon, opt.channel_of.clone(), opt.value, cfg.record_links);

    let mut packet = 1u64;
    while !ledger.full() {
        let bits = links[0].bits();
        debug_assert!(links.iter().all(|l| l.bits() == bits));
        let sched = packet_schedule(cfg, packet, bits);
        let start = ledger.t() + 1;
        let (regret0, pseudo0) = ledger.cum();

        // exploration
        for l in links.iter_mut() {
            l.begin_exploration(packet);
        }
        let mut explored = 0;
        while explored < sched.explore_len && !ledger.full() {
            let choices: Vec<usize> = links.iter_mut().map(|l| l.explore_choose()).collect::<Result<_>>()?;
            let actions: Vec<Action> = choices.iter().map(|&c| Action::Transmit(c)).collect();
            let (outcome, obs) = medium.resolve_data_slot(&actions)?;
            for (l, o) in links.iter_mut().zip(&obs) {
                l.explore_observe(o.channel, o.reward, o.eta)?;
            }
            let expected = expected_reward(model, &outcome, &choices);
            ledger.push(packet, TracePhase::Explore, &choices, &outcome.rewards, expected);
            explored += 1;
        }
        for l in links.iter_mut() {
            l.finalize_estimates();
        }

        // auction
        for l in links.iter_mut() {
            l.begin_auction();
        }
        let auction_start = ledger.t();
        let mut assigned_after = None;
        let mut collisions = 0;
        let zeros = vec![0.0; n];
        for it in 1..=sched.auction_iterations {
            if ledger.full() {
                break;
            }
            let out = auction_iteration(&mut links, k)?;
            collisions += count_collisions(&out.result);
            if assigned_after.is_none() && links.iter().all(|l| l.status() == Status::Assigned) {
                assigned_after = Some(it);
            }
            match cfg.auction {
                AuctionMode::Practical { .. } => {
                    let (outcome, _) = medium.resolve_frame_data(&out.entries, &out.result)?;
                    let mut choices = vec![SILENT; n];
                    for e in &out.entries {
                        if matches!(
                            out.result.observations[e.link],
                            ContentionObservation::Won | ContentionObservation::Collision
                        ) {
                            choices[e.link] = e.channel;
                        }
                    }
                    let expected = expected_reward(model, &outcome, &choices);
                    ledger.push(packet, TracePhase::Auction, &choices, &outcome.rewards, expected);
                }
                AuctionMode::Theory => {
                    let mut choices = vec![SILENT; n];
                    for e in &out.entries {
                        choices[e.link] = e.channel;
                    }
                    for _ in 0..sched.iteration_slots {
                        ledger.push(packet, TracePhase::Auction, &choices, &zeros, 0.0);
                    }
                }
            }
        }
        let silent = vec![SILENT; n];
        while ledger.t() - auction_start < sched.auction_len && !ledger.full() {
            ledger.push(packet, TracePhase::Auction, &silent, &zeros, 0.0);
        }
        let auction_len = ledger.t() - auction_start;

        // exploitation
        for l in links.iter_mut() {
            l.begin_exploitation();
        }
        let choices: Vec<usize> = links.iter().map(|l| l.exploit_action()).collect::<Result<_>>()?;
        let actions: Vec<Action> = choices
            .iter()
            .map(|&c| if c == SILENT { Action::Idle } else { Action::Transmit(c) })
            .collect();
        let exploit_optimal = is_optimal(model, &choices, opt.value)?;
        let mut exploited = 0;
        while exploited < sched.exploit_len && !ledger.full() {
            let (outcome, _) = medium.resolve_data_slot(&actions)?;
            let expected = expected_reward(model, &outcome, &choices);
            ledger.push(packet, TracePhase::Exploit, &choices, &outcome.rewards, expected);
            exploited += 1;
        }
        for l in links.iter_mut() {
            l.end_packet();
        }
        let (regret1, pseudo1) = ledger.cum();
        ledger.push_packet(PacketRecord {
            packet,
            start,
            explore_len: explored,
            auction_len,
            exploit_len: exploited,
            bits,
            auction_iterations: assigned_after,
            quantization_collisions: collisions,
            exploit_assignment: choices,
            exploit_optimal,
            regret_increment: regret1 - regret0,
            pseudo_regret_increment: pseudo1 - pseudo0,
        });
        packet += 1;
    }
    Ok(ledger.finish())
}

/// Baseline: every link picks a channel uniformly at random in every slot.
pub fn run_baseline_random(cfg: &SimConfig) -> Result<Trace> {
    let model = &cfg.model;
    let (n, k) = (model.n_links(), model.n_channels());
    let mut medium = Medium::new(cfg.reward_sampler(), n, k, cfg.seed);
    let mut rngs: Vec<_> = (0..n).map(|id| stream_rng(cfg.seed, Stream::Link(id))).collect();
    let opt = optimum(model)?;
    let mut ledger = Ledger::new(n, cfg.horizon, opt.channel_of, opt.value, cfg.record_links);
    while !ledger.full() {
        let choices: Vec<usize> = rngs.iter_mut().map(|r| r.random_range(1..=k)).collect();
        let actions: Vec<Action> = choices.iter().map(|&c| Action::Transmit(c)).collect();
        let (outcome, _) = medium.resolve_data_slot(&actions)?;
        let expected = expected_reward(model, &outcome, &choices);
        ledger.push(0, TracePhase::Random, &choices, &outcome.rewards, expected);
    }
    Ok(ledger.finish())
}

/// Reference: every link transmits on its optimal channel from the first slot.
pub fn run_genie(cfg: &SimConfig) -> Result<Trace> {
    let model = &cfg.model;
    let (n, k) = (model.n_links(), model.n_channels());
    let mut medium = Medium::new(cfg.reward_sampler(), n, k, cfg.seed);
    let opt = optimum(model)?;
    let choices = opt.channel_of.clone();
    let actions: Vec<Action> = choices.iter().map(|&c| Action::Transmit(c)).collect();
    let mut ledger = Ledger::new(n, cfg.horizon, opt.channel_of, opt.value, cfg.record_links);
    while !ledger.full() {
        let (outcome, _) = medium.resolve_data_slot(&actions)?;
        let expected = expected_reward(model, &outcome, &choices);
        ledger.push(0, TracePhase::Genie, &choices, &outcome.rewards, expected);
    }
    Ok(ledger.finish())
}

/// Runs only the exploration phases of `packets` packets and returns, after
/// each, the largest estimation error `max_{n,i} |Q^k_{n,i} − Q_{n,i}|`
/// (dither included).
pub fn exploration_errors(cfg: &SimConfig, packets: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let model = &cfg.model;
    let (n, k) = (model.n_links(), model.n_channels());
    let params = cfg.link_params();
    let mut links: Vec<LinkState> = (0..n)
        .map(|id| LinkState::new(id, params, cfg.seed))
        .collect::<Result<_>>()?;
    let mut medium = Medium::new(cfg.reward_sampler(), n, k, cfg.seed);
    let mut errors = Vec::with_capacity(packets as usize);
    for packet in 1..=packets {
        for l in links.iter_mut() {
            l.begin_exploration(packet);
        }
        for _ in 0..cfg.explore_len {
            let actions: Vec<Action> = links
                .iter_mut()
                .map(|l| l.explore_choose().map(Action::Transmit))
                .collect::<Result<_>>()?;
            let (_, obs) = medium.resolve_data_slot(&actions)?;
            for (l, o) in links.iter_mut().zip(&obs) {
                l.explore_observe(o.channel, o.reward, o.eta)?;
            }
        }
        let mut worst = 0.0f64;
        for l in links.iter_mut() {
            l.finalize_estimates();
            for (i, e) in l.estimates().iter().enumerate() {
                worst = worst.max((e - model.mean(l.id(), i + 1)).abs());
            }
        }
        errors.push(worst);
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: QosModel, auction: AuctionMode) -> SimConfig {
        let k = model.n_channels() as f64;
        let eps = 0.9 * model.delta_min() / (4.0 * k);
        SimConfig {
            model,
            sampler: SamplerKind::Deterministic,
            sampler_spread: 0.0,
            explore_len: 800,
            auction,
            c2: 100,
            b0: 8,
            eps,
            horizon: 10_000,
            seed: 1,
            record_links: false,
        }
    }

    #[test]
    fn schedule_examples() {
        let m = QosModel::random(1, 2, 2, 2, 0.5).unwrap();
        let c = cfg(m.clone(), AuctionMode::Practical { slots: 500 });
        let s = packet_schedule(&c, 0, 8);
        assert_eq!((s.explore_len, s.auction_len, s.exploit_len), (800, 500, 100));
        assert_eq!(packet_schedule(&c, 3, 8).exploit_len, 800);

        // K = N = 2, Q_M/Δ_min = 2, b = 3
        let t = cfg(m, AuctionMode::Theory);
        let s = packet_schedule(&t, 1, 3);
        assert_eq!(s.auction_len, 720);
        assert_eq!(s.iteration_slots, 9);
        assert_eq!(s.auction_iterations, 80);
    }

    #[test]
    fn explore_bound_examples() {
        assert_eq!(min_explore_len(2, 2, 1.0), 162);
        assert_eq!(min_explore_len(10, 10, 4.0), 227_556);
        assert_eq!(min_explore_len(3, 2, 0.0), (3.0 * 40.5 * 3.0f64).ceil() as u64);
    }

    #[test]
    fn packet_bound_examples() {
        assert_eq!(max_packets(100_000, 100), 9);
        assert_eq!(max_packets(100, 100), 1);
        assert_eq!(max_packets(200, 100), 2);
    }

    #[test]
    fn iteration_bound_example() {
        assert_eq!(auction_iteration_bound(2, 2, 0.1, 1.0, 0.5).floor(), 45.0);
    }
}
